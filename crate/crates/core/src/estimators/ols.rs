use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::lstsq;

use super::{
    absorbed_df, build_design, column_vector, covariance_with, demean_within, group_codes,
    infer, r_squared, FitResult, Method, ModelSpec, PValueDist,
};

/// Ordinary least squares (the LPM when the outcome is binary).
///
/// A `fixed_effect` column in the model spec is absorbed by within-group
/// demeaning; the absorbed level count enters the degrees of freedom so
/// standard errors match the equivalent dummy-variable regression.
pub fn fit_ols(spec: &ModelSpec, d: &Dataset) -> Result<FitResult> {
    spec.validate()?;
    if !spec.endogenous.is_empty() {
        return Err(Error::InvalidSpec(
            "fit_ols does not accept endogenous regressors; use fit_tsls".into(),
        ));
    }

    let groups = match &spec.fixed_effect {
        Some(f) => Some(group_codes(d, f)?),
        None => None,
    };
    let intercept = spec.intercept && groups.is_none();

    let mut y = column_vector(d, &spec.outcome)?;
    let mut design = build_design(d, &spec.exogenous, intercept)?;

    let mut absorbed_levels = 0;
    if let Some(g) = &groups {
        absorbed_levels = g.levels;
        y = DVector::from_vec(demean_within(y.as_slice(), g));
        for j in 0..design.matrix.ncols() {
            let col: Vec<f64> = (0..design.matrix.nrows())
                .map(|i| design.matrix[(i, j)])
                .collect();
            let dm = demean_within(&col, g);
            for (i, v) in dm.iter().enumerate() {
                design.matrix[(i, j)] = *v;
            }
        }
    }

    let n = d.n_rows();
    let df_resid = absorbed_df(n, design.matrix.ncols(), absorbed_levels)?;
    let solved = lstsq(&design.matrix, &y, &design.names)?;
    let ssr = solved.resid.dot(&solved.resid);
    let sigma2 = ssr / df_resid as f64;
    let vcov = covariance_with(&design.matrix, &solved.resid, spec.cov, df_resid, &solved.xtx_inv);
    let (se, t, p) = infer(&solved.coef, &vcov, PValueDist::StudentT(df_resid as f64));
    let centered = intercept || absorbed_levels > 0;

    Ok(FitResult {
        names: design.names,
        coef: solved.coef,
        vcov,
        se,
        t,
        p,
        sigma2,
        r2: r_squared(&y, ssr, centered),
        n,
        df_resid,
        method: Method::Ols,
        absorbed_levels,
        loglik: None,
        first_stage: Vec::new(),
        iv: None,
    })
}
