//! Instrument-validity and model-comparison tests.
//!
//! Note on the over-identification tests: the null hypothesis is that all
//! instruments are exogenous (valid). A small p-value rejects validity; a
//! large one fails to reject it. Write-ups sometimes invert this phrasing,
//! so the null is spelled out on every result.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dist;
use crate::error::{Error, Result};
use crate::estimators::{self, build_iv, covariance_with, ModelSpec};
use crate::estimators::FitResult;
use crate::linalg::{lstsq, wald_quadform};

/// Reference distribution of a test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "dist", rename_all = "lowercase")]
pub enum TestDist {
    Chi2 { df: usize },
    F { df1: usize, df2: usize },
}

/// A single hypothesis-test outcome.
#[derive(Debug, Clone, Serialize)]
pub struct TestResult {
    pub label: String,
    #[serde(flatten)]
    pub dist: TestDist,
    pub statistic: f64,
    pub p_value: f64,
    pub null: String,
}

impl TestResult {
    /// One-line summary, e.g. `Score chi2(1) = 1.73991 (p = 0.1872)`.
    pub fn one_line(&self) -> String {
        match self.dist {
            TestDist::Chi2 { df } => format!(
                "{} chi2({}) = {:.5} (p = {:.4})",
                self.label, df, self.statistic, self.p_value
            ),
            TestDist::F { df1, df2 } => format!(
                "{} F({}, {}) = {:.2} (p = {:.4})",
                self.label, df1, df2, self.statistic, self.p_value
            ),
        }
    }
}

/// Over-identification test flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OveridMethod {
    /// n R^2 from regressing the IV residuals on the full instrument set.
    Sargan,
    /// Heteroskedasticity-robust score variant (the default).
    Score,
    /// Minimized two-step GMM objective.
    HansenJ,
}

/// Wald F test for joint nullity of the excluded instruments in each
/// first-stage regression, using the first stage's covariance choice.
///
/// Returns one result per endogenous regressor.
pub fn first_stage_f(fit: &FitResult) -> Result<Vec<TestResult>> {
    let ctx = fit
        .iv
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("first_stage_f needs an IV fit".into()))?;
    let q = ctx.n_excluded;
    if q == 0 {
        return Err(Error::InvalidSpec("no excluded instruments to test".into()));
    }
    let mut out = Vec::with_capacity(fit.first_stage.len());
    for fs in &fit.first_stage {
        let b_sub = DVector::from_fn(q, |i, _| fs.coef[i]);
        let v_sub = DMatrix::from_fn(q, q, |i, j| fs.vcov[(i, j)]);
        let wald = wald_quadform(&b_sub, &v_sub)?;
        let statistic = wald / q as f64;
        let p_value = dist::f_sf(statistic, q as f64, fs.df_resid as f64);
        out.push(TestResult {
            label: "First-stage".into(),
            dist: TestDist::F { df1: q, df2: fs.df_resid },
            statistic,
            p_value,
            null: "excluded instruments have no first-stage effect".into(),
        });
    }
    Ok(out)
}

/// Over-identification test of instrument validity.
///
/// Requires more excluded instruments than endogenous regressors;
/// df = #instruments - #endogenous.
pub fn overid_test(fit: &FitResult, method: OveridMethod) -> Result<TestResult> {
    let ctx = fit
        .iv
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("overid_test needs an IV fit".into()))?;
    if ctx.n_excluded <= ctx.n_endog {
        return Err(Error::JustIdentified);
    }
    let df = ctx.n_excluded - ctx.n_endog;
    let n = ctx.resid.len();

    let (label, statistic) = match method {
        OveridMethod::Sargan => {
            let names: Vec<String> = (0..ctx.z.ncols()).map(|j| format!("z{j}")).collect();
            let aux = lstsq(&ctx.z, &ctx.resid, &names)?;
            let sst = ctx.resid.dot(&ctx.resid);
            let ssr = aux.resid.dot(&aux.resid);
            ("Sargan".to_string(), n as f64 * (sst - ssr) / sst)
        }
        OveridMethod::HansenJ => {
            let j = estimators::gmm_two_step_objective(&ctx.y, &ctx.x, &ctx.z)?;
            ("Hansen J".to_string(), j)
        }
        OveridMethod::Score => {
            // Wooldridge's robust score test: residualize df of the excluded
            // instruments on the instrumented regressors, multiply by the IV
            // residuals, and regress a constant one on the products.
            let xhat_names: Vec<String> =
                (0..ctx.xhat.ncols()).map(|j| format!("xh{j}")).collect();
            let mut products = DMatrix::zeros(n, df);
            for (out_col, zj) in ((ctx.n_excluded - df)..ctx.n_excluded).enumerate() {
                let target = ctx.z.column(zj).into_owned();
                let aux = lstsq(&ctx.xhat, &target, &xhat_names)?;
                for i in 0..n {
                    products[(i, out_col)] = aux.resid[i] * ctx.resid[i];
                }
            }
            let ones = DVector::from_element(n, 1.0);
            let prod_names: Vec<String> = (0..df).map(|j| format!("k{j}")).collect();
            let aux = lstsq(&products, &ones, &prod_names)?;
            let ssr0 = aux.resid.dot(&aux.resid);
            ("Score".to_string(), n as f64 - ssr0)
        }
    };

    Ok(TestResult {
        label,
        dist: TestDist::Chi2 { df },
        statistic,
        p_value: dist::chi2_sf(statistic, df as f64),
        null: "all instruments are exogenous".into(),
    })
}

/// Durbin-Wu-Hausman endogeneity test in control-function form: append the
/// first-stage residuals to the outcome OLS and Wald-test their
/// coefficients (per the model spec's covariance choice).
pub fn dwh_endogeneity_test(spec: &ModelSpec, d: &Dataset) -> Result<TestResult> {
    let parts = build_iv(spec, d)?;
    let n = parts.x.nrows();
    let k = parts.x.ncols();
    let m = parts.n_endog;

    let mut design = DMatrix::zeros(n, k + m);
    let mut names = parts.x_names.clone();
    for i in 0..n {
        for j in 0..k {
            design[(i, j)] = parts.x[(i, j)];
        }
        for j in 0..m {
            design[(i, k + j)] = parts.x[(i, j)] - parts.xhat[(i, j)];
        }
    }
    for j in 0..m {
        names.push(format!("_fs_resid_{}", spec.endogenous[j]));
    }

    let df_resid = estimators::absorbed_df(n, k + m, parts.absorbed_levels)?;
    let solved = lstsq(&design, &parts.y, &names)?;
    let vcov = covariance_with(&design, &solved.resid, spec.cov, df_resid, &solved.xtx_inv);

    let b_sub = DVector::from_fn(m, |i, _| solved.coef[k + i]);
    let v_sub = DMatrix::from_fn(m, m, |i, j| vcov[(k + i, k + j)]);
    let statistic = wald_quadform(&b_sub, &v_sub)?;

    Ok(TestResult {
        label: "Wu-Hausman".into(),
        dist: TestDist::Chi2 { df: m },
        statistic,
        p_value: dist::chi2_sf(statistic, m as f64),
        null: "regressors are exogenous".into(),
    })
}

/// Likelihood-ratio test: 2 (ll_unrestricted - ll_restricted) ~ chi2(df).
pub fn lr_test(loglik_restricted: f64, loglik_unrestricted: f64, df: usize) -> Result<TestResult> {
    if df == 0 {
        return Err(Error::InvalidParam("lr_test needs df >= 1".into()));
    }
    let raw = 2.0 * (loglik_unrestricted - loglik_restricted);
    if raw < -1e-8 {
        return Err(Error::InvalidParam(format!(
            "negative LR statistic {raw}: restricted likelihood exceeds unrestricted"
        )));
    }
    let statistic = raw.max(0.0);
    Ok(TestResult {
        label: "LR".into(),
        dist: TestDist::Chi2 { df },
        statistic,
        p_value: dist::chi2_sf(statistic, df as f64),
        null: "restrictions hold".into(),
    })
}

/// Significance stars at the 1%/5%/10% levels (strict inequalities).
pub fn significance_stars(p: f64) -> Result<&'static str> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParam(format!("p-value {p} outside [0, 1]")));
    }
    Ok(if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    })
}
