use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

use super::{
    absorbed_df, build_iv, infer, r_squared, sandwich_meat, CovKind, FitResult, IvContext,
    Method, ModelSpec, PValueDist,
};

/// Weighting schedule for [`fit_gmm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GmmIterate {
    /// Weight (Z'Z)^{-1} only; algebraically identical to 2SLS.
    OneStep,
    /// One re-weighting with the heteroskedasticity-robust moment
    /// covariance from step-1 residuals.
    TwoStep,
    /// Re-weight until the max-abs coefficient change drops below `tol`.
    Iterated { max_iter: usize, tol: f64 },
}

impl GmmIterate {
    /// Iterated GMM with the default stopping rule (tol 1e-8, 500 updates).
    pub fn iterated() -> Self {
        GmmIterate::Iterated { max_iter: 500, tol: 1e-8 }
    }
}

/// Generalized method of moments for the linear IV model.
///
/// Step 1 uses weight (Z'Z)^{-1} and reproduces 2SLS; later steps weight by
/// the inverse of sum e_i^2 z_i z_i'. Iterated mode repeats until the
/// coefficients settle, reporting the iteration count and a convergence
/// flag rather than failing silently.
pub fn fit_gmm(spec: &ModelSpec, d: &Dataset, iterate: GmmIterate) -> Result<FitResult> {
    let parts = build_iv(spec, d)?;
    let n = d.n_rows();
    let k = parts.x.ncols();
    let df_resid = absorbed_df(n, k, parts.absorbed_levels)?;

    let g = parts.z.tr_mul(&parts.x); // L x k
    let gy = parts.z.tr_mul(&parts.y); // L

    // Step 1: weight (Z'Z)^{-1}.
    let ztz = parts.z.tr_mul(&parts.z);
    let chol_ztz =
        nalgebra::linalg::Cholesky::new(ztz).ok_or(Error::Singular("Z'Z weight matrix"))?;
    let a1 = g.tr_mul(&chol_ztz.solve(&g));
    let b1 = g.tr_mul(&chol_ztz.solve(&DMatrix::from_fn(gy.len(), 1, |i, _| gy[i])));
    let lu1 = a1.clone().lu();
    let mut coef: DVector<f64> = lu1
        .solve(&b1.column(0).into_owned())
        .ok_or(Error::Singular("GMM normal matrix"))?;

    let (method, vcov) = match iterate {
        GmmIterate::OneStep => {
            // Inefficient-weight sandwich around the step-1 estimate.
            let resid = &parts.y - &parts.x * &coef;
            let s = sandwich_meat(&parts.z, &resid);
            let a1_inv = lu1.try_inverse().ok_or(Error::Singular("GMM normal matrix"))?;
            let inner = chol_ztz.solve(&(s * chol_ztz.solve(&g)));
            let middle = g.tr_mul(&inner);
            let vcov = &a1_inv * middle * &a1_inv;
            (Method::Gmm { steps: 1 }, vcov)
        }
        GmmIterate::TwoStep | GmmIterate::Iterated { .. } => {
            let (max_updates, tol) = match iterate {
                GmmIterate::TwoStep => (1, f64::INFINITY),
                GmmIterate::Iterated { max_iter, tol } => (max_iter, tol),
                GmmIterate::OneStep => unreachable!(),
            };
            if max_updates == 0 {
                return Err(Error::InvalidParam(
                    "iterated GMM needs max_iter >= 1".into(),
                ));
            }
            let mut updates = 0usize;
            let mut converged = false;
            let mut a_inv = None;
            while updates < max_updates {
                let resid = &parts.y - &parts.x * &coef;
                let s = sandwich_meat(&parts.z, &resid);
                let chol_s = nalgebra::linalg::Cholesky::new(s)
                    .ok_or(Error::Singular("GMM weight matrix"))?;
                let a = g.tr_mul(&chol_s.solve(&g));
                let b = g.tr_mul(&chol_s.solve(&DMatrix::from_fn(gy.len(), 1, |i, _| gy[i])));
                let lu = a.clone().lu();
                let next: DVector<f64> = lu
                    .solve(&b.column(0).into_owned())
                    .ok_or(Error::Singular("GMM normal matrix"))?;
                let delta = (&next - &coef).amax();
                coef = next;
                updates += 1;
                a_inv = Some(lu.try_inverse().ok_or(Error::Singular("GMM normal matrix"))?);
                if delta < tol {
                    converged = true;
                    break;
                }
            }
            let vcov = a_inv.expect("at least one GMM update");
            let method = match iterate {
                GmmIterate::TwoStep => Method::Gmm { steps: 2 },
                _ => Method::Igmm { iterations: updates, converged },
            };
            (method, vcov)
        }
    };

    let vcov = match spec.cov {
        CovKind::Hc1 => vcov * (n as f64 / df_resid as f64),
        _ => vcov,
    };

    let resid = &parts.y - &parts.x * &coef;
    let ssr = resid.dot(&resid);
    // Asymptotic estimator: normal reference distribution for p-values.
    let (se, t, p) = infer(&coef, &vcov, PValueDist::Normal);

    Ok(FitResult {
        names: parts.x_names.clone(),
        coef,
        vcov,
        se,
        t,
        p,
        sigma2: ssr / df_resid as f64,
        r2: r_squared(&parts.y, ssr, parts.centered),
        n,
        df_resid,
        method,
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

/// Minimized two-step GMM objective (Z'e)' S^{-1} (Z'e), with the weight S
/// built from step-1 residuals. Used by the Hansen J over-identification
/// test.
pub(crate) fn two_step_objective(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<f64> {
    let g = z.tr_mul(x);
    let gy = z.tr_mul(y);
    let ztz = z.tr_mul(z);
    let chol_ztz =
        nalgebra::linalg::Cholesky::new(ztz).ok_or(Error::Singular("Z'Z weight matrix"))?;
    let a1 = g.tr_mul(&chol_ztz.solve(&g));
    let b1 = g.tr_mul(&chol_ztz.solve(&DMatrix::from_fn(gy.len(), 1, |i, _| gy[i])));
    let beta1: DVector<f64> = a1
        .lu()
        .solve(&b1.column(0).into_owned())
        .ok_or(Error::Singular("GMM normal matrix"))?;

    let resid1 = y - x * &beta1;
    let s = sandwich_meat(z, &resid1);
    let chol_s =
        nalgebra::linalg::Cholesky::new(s).ok_or(Error::Singular("GMM weight matrix"))?;
    let a2 = g.tr_mul(&chol_s.solve(&g));
    let b2 = g.tr_mul(&chol_s.solve(&DMatrix::from_fn(gy.len(), 1, |i, _| gy[i])));
    let beta2: DVector<f64> = a2
        .lu()
        .solve(&b2.column(0).into_owned())
        .ok_or(Error::Singular("GMM normal matrix"))?;

    let resid2 = y - x * &beta2;
    let moments = z.tr_mul(&resid2);
    let solved = chol_s.solve(&DMatrix::from_fn(moments.len(), 1, |i, _| moments[i]));
    Ok(moments.dot(&solved.column(0).into_owned()))
}
