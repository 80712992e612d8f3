use crate::dataset::Dataset;
use crate::error::Result;
use crate::linalg::lstsq;

use super::{
    absorbed_df, build_iv, covariance_with, infer, r_squared, FitResult, IvContext, Method,
    ModelSpec, PValueDist,
};

/// Two-stage least squares.
///
/// The first stage regresses each endogenous column on the full instrument
/// set (excluded instruments plus exogenous regressors); the second stage
/// replaces endogenous columns with their fitted values. Residuals for
/// sigma^2 and the covariance use the original endogenous values, the
/// standard 2SLS correction.
pub fn fit_tsls(spec: &ModelSpec, d: &Dataset) -> Result<FitResult> {
    let parts = build_iv(spec, d)?;
    let n = d.n_rows();
    let k = parts.x.ncols();
    let df_resid = absorbed_df(n, k, parts.absorbed_levels)?;

    let second = lstsq(&parts.xhat, &parts.y, &parts.x_names)?;
    // Residuals against the original regressors, not the fitted ones.
    let resid = &parts.y - &parts.x * &second.coef;
    let ssr = resid.dot(&resid);
    let sigma2 = ssr / df_resid as f64;
    let vcov = covariance_with(&parts.xhat, &resid, spec.cov, df_resid, &second.xtx_inv);
    let (se, t, p) = infer(&second.coef, &vcov, PValueDist::StudentT(df_resid as f64));

    Ok(FitResult {
        names: parts.x_names.clone(),
        coef: second.coef,
        vcov,
        se,
        t,
        p,
        sigma2,
        r2: r_squared(&parts.y, ssr, parts.centered),
        n,
        df_resid,
        method: Method::Tsls,
        absorbed_levels: parts.absorbed_levels,
        loglik: None,
        first_stage: parts.first_stage,
        iv: Some(Box::new(IvContext {
            y: parts.y,
            x: parts.x,
            z: parts.z,
            xhat: parts.xhat,
            resid,
            n_endog: parts.n_endog,
            n_excluded: parts.n_excluded,
        })),
    })
}
