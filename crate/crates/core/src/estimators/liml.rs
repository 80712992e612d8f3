use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::lstsq;

use super::{
    absorbed_df, build_iv, infer, r_squared, sandwich_meat, CovKind, FitResult, IvContext,
    Method, ModelSpec, PValueDist,
};

/// Limited-information maximum likelihood (k-class) estimator.
///
/// kappa is the smallest eigenvalue of W2^{-1} W1, where W1 and W2 are the
/// cross-products of [y, X_endog] residualized on the exogenous regressors
/// and on the full instrument set respectively. The coefficient solve is the
/// standard k-class form b = (X'(I - kappa M_Z)X)^{-1} X'(I - kappa M_Z)y.
pub fn fit_liml(spec: &ModelSpec, d: &Dataset) -> Result<FitResult> {
    let parts = build_iv(spec, d)?;
    let n = d.n_rows();
    let k = parts.x.ncols();
    let df_resid = absorbed_df(n, k, parts.absorbed_levels)?;
    let m = parts.n_endog;

    // [y, X_endog]
    let mut ystar = DMatrix::zeros(n, m + 1);
    for i in 0..n {
        ystar[(i, 0)] = parts.y[i];
        for j in 0..m {
            ystar[(i, j + 1)] = parts.x[(i, j)];
        }
    }
    // Exogenous block of X (controls + intercept).
    let exog = parts.x.columns(m, k - m).into_owned();

    let e1 = residualize(&ystar, &exog)?;
    let e2 = residualize(&ystar, &parts.z)?;
    let w1 = e1.tr_mul(&e1);
    let w2 = e2.tr_mul(&e2);

    let chol = nalgebra::linalg::Cholesky::new(w2)
        .ok_or(Error::Singular("LIML residual cross-product"))?;
    let l = chol.l();
    let a1 = l
        .solve_lower_triangular(&w1)
        .ok_or(Error::Singular("LIML triangular solve"))?;
    let s = l
        .solve_lower_triangular(&a1.transpose())
        .ok_or(Error::Singular("LIML triangular solve"))?
        .transpose();
    let s = (&s + s.transpose()) * 0.5;
    let eig = nalgebra::linalg::SymmetricEigen::try_new(s, 1e-14, 500).ok_or(
        Error::NonConvergence { what: "LIML eigenvalue solver", iterations: 500 },
    )?;
    let kappa = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);

    // k-class normal matrix and right-hand side.
    let ex = residualize(&parts.x, &parts.z)?;
    let ey = {
        let ymat = DMatrix::from_fn(n, 1, |i, _| parts.y[i]);
        residualize(&ymat, &parts.z)?
    };
    let a = parts.x.tr_mul(&parts.x) - ex.tr_mul(&ex) * kappa;
    let b = parts.x.tr_mul(&parts.y) - (ex.tr_mul(&ey) * kappa).column(0).into_owned();
    let lu = a.clone().lu();
    let coef: DVector<f64> = lu
        .solve(&b)
        .ok_or(Error::Singular("k-class normal matrix"))?;
    let a_inv = lu
        .try_inverse()
        .ok_or(Error::Singular("k-class normal matrix"))?;

    let resid = &parts.y - &parts.x * &coef;
    let ssr = resid.dot(&resid);
    let sigma2 = ssr / df_resid as f64;
    let x_tilde = &parts.x - &ex * kappa;
    let vcov = match spec.cov {
        CovKind::Classical => &a_inv * sigma2,
        CovKind::Hc0 => &a_inv * sandwich_meat(&x_tilde, &resid) * &a_inv,
        CovKind::Hc1 => {
            (&a_inv * sandwich_meat(&x_tilde, &resid) * &a_inv) * (n as f64 / df_resid as f64)
        }
    };
    let (se, t, p) = infer(&coef, &vcov, PValueDist::StudentT(df_resid as f64));

    Ok(FitResult {
        names: parts.x_names.clone(),
        coef,
        vcov,
        se,
        t,
        p,
        sigma2,
        r2: r_squared(&parts.y, ssr, parts.centered),
        n,
        df_resid,
        method: Method::Liml { kappa },
        absorbed_levels: parts.absorbed_levels,
        loglik: None,
        first_stage: parts.first_stage,
        iv: Some(Box::new(IvContext {
            y: parts.y,
            x: parts.x,
            z: parts.z,
            xhat: x_tilde,
            resid,
            n_endog: parts.n_endog,
            n_excluded: parts.n_excluded,
        })),
    })
}

/// Residuals of every column of `targets` on `basis` (identity when the
/// basis is empty).
fn residualize(targets: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if basis.ncols() == 0 {
        return Ok(targets.clone());
    }
    let names: Vec<String> = (0..basis.ncols()).map(|j| format!("b{j}")).collect();
    let mut out = DMatrix::zeros(targets.nrows(), targets.ncols());
    for j in 0..targets.ncols() {
        let col = targets.column(j).into_owned();
        let fit = lstsq(basis, &col, &names)?;
        for i in 0..targets.nrows() {
            out[(i, j)] = fit.resid[i];
        }
    }
    Ok(out)
}
