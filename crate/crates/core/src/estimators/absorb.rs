use crate::dataset::{ColumnMeta, Dataset};
use crate::error::{Error, Result};

use super::{demean_within, group_codes};

/// Dataset with fixed effects swept out, plus the degrees-of-freedom
/// bookkeeping downstream standard errors need.
#[derive(Debug, Clone)]
pub struct Absorbed {
    pub data: Dataset,
    /// Number of absorbed factor levels; subtract from residual df.
    pub absorbed_levels: usize,
}

/// Replace `vars` by their within-group demeaned values.
///
/// OLS on the demeaned data reproduces the slope coefficients of the
/// equivalent dummy-variable regression (Frisch-Waugh-Lovell); pass
/// `absorbed_levels` into the df correction to also reproduce its standard
/// errors.
pub fn absorb_fixed_effects(d: &Dataset, factor: &str, vars: &[String]) -> Result<Absorbed> {
    let groups = group_codes(d, factor)?;
    if groups.counts.iter().all(|&c| c == 1) {
        return Err(Error::InvalidSpec(format!(
            "absorbing `{factor}` removes all variation: every level is a singleton"
        )));
    }
    let mut data = d.clone();
    for var in vars {
        let demeaned = demean_within(data.column(var)?, &groups);
        data = data.replace_column(var, ColumnMeta::Continuous, demeaned)?;
    }
    Ok(Absorbed { data, absorbed_levels: groups.levels })
}
