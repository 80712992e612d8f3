//! Regression kernels: OLS/LPM, 2SLS, LIML, (iterated) GMM, fixed-effect
//! absorption, and robust covariance.

mod absorb;
mod gmm;
mod liml;
mod ols;
mod tsls;

pub use absorb::{absorb_fixed_effects, Absorbed};
pub(crate) use gmm::two_step_objective as gmm_two_step_objective;
pub use gmm::{fit_gmm, GmmIterate};
pub use liml::fit_liml;
pub use ols::fit_ols;
pub use tsls::fit_tsls;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use crate::dataset::{ColumnMeta, Dataset};
use crate::dist;
use crate::error::{Error, Result};
use crate::linalg::lstsq;

pub const INTERCEPT_NAME: &str = "_cons";

/// Covariance estimator choice. HC1 is the default throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovKind {
    Classical,
    Hc0,
    #[default]
    Hc1,
}

/// Declarative regression specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome: String,
    #[serde(default)]
    pub endogenous: Vec<String>,
    #[serde(default)]
    pub instruments: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub fixed_effect: Option<String>,
    #[serde(default)]
    pub cov: CovKind,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn ols(outcome: &str, exogenous: &[&str]) -> Self {
        ModelSpec {
            outcome: outcome.to_string(),
            endogenous: Vec::new(),
            instruments: Vec::new(),
            exogenous: exogenous.iter().map(|s| s.to_string()).collect(),
            fixed_effect: None,
            cov: CovKind::default(),
            intercept: true,
        }
    }

    pub fn iv(outcome: &str, endogenous: &[&str], instruments: &[&str], exogenous: &[&str]) -> Self {
        ModelSpec {
            outcome: outcome.to_string(),
            endogenous: endogenous.iter().map(|s| s.to_string()).collect(),
            instruments: instruments.iter().map(|s| s.to_string()).collect(),
            exogenous: exogenous.iter().map(|s| s.to_string()).collect(),
            fixed_effect: None,
            cov: CovKind::default(),
            intercept: true,
        }
    }

    pub fn with_cov(mut self, cov: CovKind) -> Self {
        self.cov = cov;
        self
    }

    pub fn with_fixed_effect(mut self, column: &str) -> Self {
        self.fixed_effect = Some(column.to_string());
        self
    }

    pub fn without_intercept(mut self) -> Self {
        self.intercept = false;
        self
    }

    /// Structural checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        for z in &self.instruments {
            if self.endogenous.contains(z) {
                return Err(Error::InvalidSpec(format!(
                    "`{z}` appears in both instruments and endogenous"
                )));
            }
        }
        if !self.endogenous.is_empty() && self.instruments.len() < self.endogenous.len() {
            return Err(Error::UnderIdentified {
                n_instruments: self.instruments.len(),
                n_endogenous: self.endogenous.len(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for name in self
            .endogenous
            .iter()
            .chain(self.exogenous.iter())
            .chain(self.instruments.iter())
        {
            if name == &self.outcome {
                return Err(Error::InvalidSpec(format!(
                    "outcome `{name}` cannot appear among regressors or instruments"
                )));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::InvalidSpec(format!("column `{name}` listed twice")));
            }
        }
        Ok(())
    }
}

/// Estimator tag attached to a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "UPPERCASE")]
pub enum Method {
    Ols,
    Tsls,
    Liml { kappa: f64 },
    Gmm { steps: usize },
    Igmm { iterations: usize, converged: bool },
    Logit { iterations: usize },
    Probit { iterations: usize },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Ols => "OLS".into(),
            Method::Tsls => "TSLS".into(),
            Method::Liml { .. } => "LIML".into(),
            Method::Gmm { .. } => "GMM".into(),
            Method::Igmm { .. } => "IGMM".into(),
            Method::Logit { .. } => "Logit".into(),
            Method::Probit { .. } => "Probit".into(),
        }
    }
}

/// Everything the over-identification and endogeneity tests need from an
/// IV fit, kept out of the serialized surface.
#[derive(Debug, Clone)]
pub(crate) struct IvContext {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub xhat: DMatrix<f64>,
    pub resid: DVector<f64>,
    pub n_endog: usize,
    pub n_excluded: usize,
}

/// Coefficients, covariance, and fit statistics of one regression.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    #[serde(serialize_with = "ser_dvector")]
    pub coef: DVector<f64>,
    #[serde(serialize_with = "ser_dmatrix")]
    pub vcov: DMatrix<f64>,
    #[serde(serialize_with = "ser_dvector")]
    pub se: DVector<f64>,
    #[serde(serialize_with = "ser_dvector")]
    pub t: DVector<f64>,
    #[serde(serialize_with = "ser_dvector")]
    pub p: DVector<f64>,
    pub sigma2: f64,
    pub r2: f64,
    pub n: usize,
    pub df_resid: usize,
    #[serde(flatten)]
    pub method: Method,
    /// Number of fixed-effect levels absorbed before fitting (0 if none).
    pub absorbed_levels: usize,
    /// Maximized log-likelihood (MLE fits only).
    pub loglik: Option<f64>,
    /// One nested fit per endogenous regressor (IV estimators only).
    pub first_stage: Vec<FitResult>,
    #[serde(skip)]
    pub(crate) iv: Option<Box<IvContext>>,
}

impl FitResult {
    /// Coefficient value by regressor name.
    pub fn coef_for(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coef[i])
    }

    pub fn se_for(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.se[i])
    }
}

pub(crate) fn ser_dvector<S: Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v.iter() {
        seq.serialize_element(x)?;
    }
    seq.end()
}

fn ser_dmatrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = (0..m.ncols()).map(|j| m[(i, j)]).collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Reference distribution for coefficient p-values.
#[derive(Debug, Clone, Copy)]
pub(crate) enum PValueDist {
    StudentT(f64),
    Normal,
}

pub(crate) fn infer(
    coef: &DVector<f64>,
    vcov: &DMatrix<f64>,
    dist_kind: PValueDist,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let k = coef.len();
    let mut se = DVector::zeros(k);
    let mut t = DVector::zeros(k);
    let mut p = DVector::zeros(k);
    for i in 0..k {
        se[i] = vcov[(i, i)].max(0.0).sqrt();
        t[i] = if se[i] > 0.0 { coef[i] / se[i] } else { f64::INFINITY };
        p[i] = match dist_kind {
            PValueDist::StudentT(df) => dist::t_two_sided_p(t[i], df),
            PValueDist::Normal => dist::normal_two_sided_p(t[i]),
        };
    }
    (se, t, p)
}

/// Classical or heteroskedasticity-robust covariance of a least-squares fit.
///
/// classical = sigma^2 (X'X)^-1; HC0 = (X'X)^-1 (sum e_i^2 x_i x_i') (X'X)^-1;
/// HC1 = HC0 * n / df_resid.
pub fn robust_covariance(
    x: &DMatrix<f64>,
    resid: &DVector<f64>,
    kind: CovKind,
    df_resid: usize,
) -> Result<DMatrix<f64>> {
    if df_resid == 0 {
        return Err(Error::TooFewRows { n: x.nrows(), k: x.ncols() });
    }
    let names: Vec<String> = (0..x.ncols()).map(|j| format!("col{j}")).collect();
    let zeros = DVector::zeros(x.nrows());
    let fit = lstsq(x, &zeros, &names)?;
    Ok(covariance_with(x, resid, kind, df_resid, &fit.xtx_inv))
}

pub(crate) fn covariance_with(
    x: &DMatrix<f64>,
    resid: &DVector<f64>,
    kind: CovKind,
    df_resid: usize,
    xtx_inv: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = x.nrows();
    match kind {
        CovKind::Classical => {
            let sigma2 = resid.dot(resid) / df_resid as f64;
            xtx_inv * sigma2
        }
        CovKind::Hc0 => xtx_inv * sandwich_meat(x, resid) * xtx_inv,
        CovKind::Hc1 => {
            let hc0 = xtx_inv * sandwich_meat(x, resid) * xtx_inv;
            hc0 * (n as f64 / df_resid as f64)
        }
    }
}

pub(crate) fn sandwich_meat(x: &DMatrix<f64>, resid: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for i in 0..x.nrows() {
        let e = resid[i];
        for j in 0..x.ncols() {
            scaled[(i, j)] *= e;
        }
    }
    scaled.tr_mul(&scaled)
}

pub(crate) fn r_squared(y_working: &DVector<f64>, ssr: f64, centered: bool) -> f64 {
    let sst = if centered {
        let ybar = y_working.mean();
        y_working.iter().map(|&v| (v - ybar) * (v - ybar)).sum::<f64>()
    } else {
        y_working.dot(y_working)
    };
    if sst == 0.0 {
        return if ssr == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ssr / sst
}

/// A design matrix together with its column names.
pub(crate) struct Design {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
}

pub(crate) fn column_vector(d: &Dataset, name: &str) -> Result<DVector<f64>> {
    Ok(DVector::from_column_slice(d.column(name)?))
}

/// Assemble `[columns..., _cons?]` as a dense matrix.
pub(crate) fn build_design(
    d: &Dataset,
    columns: &[String],
    intercept: bool,
) -> Result<Design> {
    let n = d.n_rows();
    let k = columns.len() + usize::from(intercept);
    if k == 0 {
        return Err(Error::InvalidSpec("no regressors in design".into()));
    }
    let mut matrix = DMatrix::zeros(n, k);
    let mut names = Vec::with_capacity(k);
    for (j, name) in columns.iter().enumerate() {
        let col = d.column(name)?;
        for i in 0..n {
            matrix[(i, j)] = col[i];
        }
        names.push(name.clone());
    }
    if intercept {
        let j = columns.len();
        for i in 0..n {
            matrix[(i, j)] = 1.0;
        }
        names.push(INTERCEPT_NAME.to_string());
    }
    Ok(Design { matrix, names })
}

/// Group index for fixed-effect absorption.
pub(crate) struct Groups {
    pub codes: Vec<usize>,
    pub levels: usize,
    pub counts: Vec<usize>,
}

pub(crate) fn group_codes(d: &Dataset, factor: &str) -> Result<Groups> {
    let levels = match d.meta(factor)? {
        ColumnMeta::Binary => 2,
        ColumnMeta::Categorical { levels } => levels,
        ColumnMeta::Continuous => {
            return Err(Error::InvalidSpec(format!(
                "fixed-effect column `{factor}` must be binary or categorical"
            )))
        }
    };
    let codes: Vec<usize> = d.column(factor)?.iter().map(|&v| v as usize).collect();
    let mut counts = vec![0usize; levels];
    for &c in &codes {
        counts[c] += 1;
    }
    if let Some(level) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup(format!("{factor}={level}")));
    }
    Ok(Groups { codes, levels, counts })
}

/// Demean a vector within groups.
pub(crate) fn demean_within(values: &[f64], groups: &Groups) -> Vec<f64> {
    let mut sums = vec![0.0f64; groups.levels];
    for (v, &g) in values.iter().zip(&groups.codes) {
        sums[g] += v;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&groups.counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    values
        .iter()
        .zip(&groups.codes)
        .map(|(v, &g)| v - means[g])
        .collect()
}

/// Shared IV scaffolding: validated designs, first-stage fits, and the
/// instrumented regressor matrix.
pub(crate) struct IvParts {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub z: DMatrix<f64>,
    pub xhat: DMatrix<f64>,
    pub first_stage: Vec<FitResult>,
    pub n_endog: usize,
    pub n_excluded: usize,
    pub absorbed_levels: usize,
    pub centered: bool,
}

pub(crate) fn build_iv(spec: &ModelSpec, d: &Dataset) -> Result<IvParts> {
    spec.validate()?;
    if spec.endogenous.is_empty() {
        return Err(Error::InvalidSpec(
            "IV estimator needs at least one endogenous regressor".into(),
        ));
    }

    let groups = match &spec.fixed_effect {
        Some(f) => Some(group_codes(d, f)?),
        None => None,
    };
    let intercept = spec.intercept && groups.is_none();

    let mut y = column_vector(d, &spec.outcome)?;
    let x_cols: Vec<String> = spec
        .endogenous
        .iter()
        .chain(spec.exogenous.iter())
        .cloned()
        .collect();
    let z_cols: Vec<String> = spec
        .instruments
        .iter()
        .chain(spec.exogenous.iter())
        .cloned()
        .collect();
    let mut x = build_design(d, &x_cols, intercept)?;
    let mut z = build_design(d, &z_cols, intercept)?;

    let mut absorbed_levels = 0;
    if let Some(g) = &groups {
        absorbed_levels = g.levels;
        let demeaned = demean_within(y.as_slice(), g);
        y = DVector::from_vec(demeaned);
        for m in [&mut x.matrix, &mut z.matrix] {
            for j in 0..m.ncols() {
                let col: Vec<f64> = (0..m.nrows()).map(|i| m[(i, j)]).collect();
                let dm = demean_within(&col, g);
                for i in 0..m.nrows() {
                    m[(i, j)] = dm[i];
                }
            }
        }
    }

    let n = d.n_rows();
    absorbed_df(n, x.matrix.ncols(), absorbed_levels)?;

    // First stage: each endogenous column on the full instrument set.
    let n_endog = spec.endogenous.len();
    let mut xhat = x.matrix.clone();
    let mut first_stage = Vec::with_capacity(n_endog);
    let centered = intercept || absorbed_levels > 0;
    for j in 0..n_endog {
        let target = DVector::from_fn(n, |i, _| x.matrix[(i, j)]);
        let fs = lstsq(&z.matrix, &target, &z.names)?;
        let df = absorbed_df(n, z.matrix.ncols(), absorbed_levels)?;
        let vcov = covariance_with(&z.matrix, &fs.resid, spec.cov, df, &fs.xtx_inv);
        let (se, t, p) = infer(&fs.coef, &vcov, PValueDist::StudentT(df as f64));
        let ssr = fs.resid.dot(&fs.resid);
        for i in 0..n {
            xhat[(i, j)] = fs.fitted[i];
        }
        first_stage.push(FitResult {
            names: z.names.clone(),
            coef: fs.coef,
            vcov,
            se,
            t,
            p,
            sigma2: ssr / df as f64,
            r2: r_squared(&target, ssr, centered),
            n,
            df_resid: df,
            method: Method::Ols,
            absorbed_levels,
            loglik: None,
            first_stage: Vec::new(),
            iv: None,
        });
    }

    Ok(IvParts {
        y,
        x: x.matrix,
        x_names: x.names,
        z: z.matrix,
        xhat,
        first_stage,
        n_endog,
        n_excluded: spec.instruments.len(),
        absorbed_levels,
        centered,
    })
}

/// Residual degrees of freedom after absorbing `levels` fixed-effect groups.
pub(crate) fn absorbed_df(n: usize, k: usize, levels: usize) -> Result<usize> {
    let used = k + levels;
    if n <= used {
        return Err(Error::TooFewRows { n, k: used });
    }
    Ok(n - used)
}
