//! Probit maximum likelihood and the Heckman two-step sample-selection
//! estimator with inverse-Mills correction.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::{ColumnMeta, Dataset};
use crate::diagnostics::{lr_test, TestResult};
use crate::dist::{norm_cdf, norm_pdf};
use crate::error::{Error, Result};
use crate::estimators::{build_design, infer, ser_dvector, FitResult, Method, PValueDist};
use crate::linalg::lstsq;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 1e3;

/// Inverse Mills ratio lambda(z) = phi(z) / Phi(z).
///
/// Evaluated through the Laplace continued fraction for z < -10, where the
/// direct ratio would run into 0/0 underflow.
pub fn inverse_mills(z: f64) -> f64 {
    if z < -10.0 {
        mills_reciprocal(-z)
    } else {
        norm_pdf(z) / norm_cdf(z)
    }
}

/// 1 / M(t) for the upper-tail Mills ratio M(t) = Q(t)/phi(t), t > 0, via
/// M(t) = 1/(t + 1/(t + 2/(t + 3/(t + ...)))).
fn mills_reciprocal(t: f64) -> f64 {
    let mut g = t;
    for j in (1..=80u32).rev() {
        g = t + f64::from(j) / g;
    }
    g
}

/// Log-likelihood of the probit model.
pub fn probit_loglik(x: &DMatrix<f64>, t: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let xb = x * beta;
    let mut ll = 0.0;
    for i in 0..x.nrows() {
        let a = if t[i] > 0.5 { xb[i] } else { -xb[i] };
        ll += log_norm_cdf(a);
    }
    ll
}

fn log_norm_cdf(a: f64) -> f64 {
    if a > -10.0 {
        norm_cdf(a).ln()
    } else {
        // ln Phi(a) = ln phi(a) - ln(1/M(-a)) in the deep tail.
        -0.5 * a * a - 0.5 * (2.0 * std::f64::consts::PI).ln() - mills_reciprocal(-a).ln()
    }
}

/// Analytic score of the probit log-likelihood:
/// sum_i q_i lambda(q_i x_i'b) x_i with q = 2t - 1.
pub fn probit_score(x: &DMatrix<f64>, t: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let xb = x * beta;
    let mut weights = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        let q = if t[i] > 0.5 { 1.0 } else { -1.0 };
        weights[i] = q * inverse_mills(q * xb[i]);
    }
    x.tr_mul(&weights)
}

/// Probit MLE by Newton-Raphson; converges when the max-abs score drops
/// below 1e-8, errors after 100 iterations or on diverging coefficients.
pub fn fit_probit(outcome: &str, covariates: &[String], d: &Dataset) -> Result<FitResult> {
    if d.meta(outcome)? != ColumnMeta::Binary {
        return Err(Error::Domain {
            column: outcome.to_string(),
            detail: "probit outcome must be a binary column".into(),
        });
    }
    let t_col = d.column(outcome)?;
    let ones = t_col.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == t_col.len() {
        return Err(Error::EmptyGroup(format!(
            "{outcome}={}",
            if ones == 0 { 1 } else { 0 }
        )));
    }
    let design = build_design(d, covariates, true)?;
    let t = DVector::from_column_slice(t_col);
    fit_probit_design(&design.matrix, &t, &design.names)
}

pub(crate) fn fit_probit_design(
    x: &DMatrix<f64>,
    t: &DVector<f64>,
    names: &[String],
) -> Result<FitResult> {
    let n = x.nrows();
    let k = x.ncols();
    if n <= k {
        return Err(Error::TooFewRows { n, k });
    }
    let mut beta: DVector<f64> = DVector::zeros(k);
    let mut iterations = 0;
    let mut converged = false;
    let mut xtx_inv = None;

    while iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let xb = x * &beta;
        // Observed-information weights lambda (lambda + z) per row.
        let mut xw = x.clone();
        let mut r = DVector::zeros(n);
        for i in 0..n {
            let q = if t[i] > 0.5 { 1.0 } else { -1.0 };
            let lam = inverse_mills(q * xb[i]);
            let w = (lam * (lam + q * xb[i])).max(1e-12);
            let sw = w.sqrt();
            for j in 0..k {
                xw[(i, j)] *= sw;
            }
            r[i] = q * lam / sw;
        }
        let step = lstsq(&xw, &r, names)?;
        beta += &step.coef;
        if beta.amax() > SEPARATION_BOUND {
            return Err(Error::PerfectSeparation("probit"));
        }
        let grad = probit_score(x, t, &beta);
        if grad.amax() < NEWTON_GRAD_TOL {
            converged = true;
            let xb = x * &beta;
            let mut xw = x.clone();
            for i in 0..n {
                let q = if t[i] > 0.5 { 1.0 } else { -1.0 };
                let lam = inverse_mills(q * xb[i]);
                let w = (lam * (lam + q * xb[i])).max(1e-12);
                let sw = w.sqrt();
                for j in 0..k {
                    xw[(i, j)] *= sw;
                }
            }
            let info = lstsq(&xw, &DVector::zeros(n), names)?;
            xtx_inv = Some(info.xtx_inv);
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence { what: "probit Newton-Raphson", iterations });
    }

    let vcov = xtx_inv.expect("set on convergence");
    let (se, tstat, p) = infer(&beta, &vcov, PValueDist::Normal);
    let ll = probit_loglik(x, t, &beta);
    let share = t.iter().sum::<f64>() / n as f64;
    let ll_null = n as f64 * (share * share.ln() + (1.0 - share) * (1.0 - share).ln());

    Ok(FitResult {
        names: names.to_vec(),
        coef: beta,
        vcov,
        se,
        t: tstat,
        p,
        sigma2: 1.0,
        r2: 1.0 - ll / ll_null,
        n,
        df_resid: n - k,
        method: Method::Probit { iterations },
        absorbed_levels: 0,
        loglik: Some(ll),
        first_stage: Vec::new(),
        iv: None,
    })
}

/// Heckman two-step estimates: probit selection fit, Mills-corrected
/// outcome fit, and the rho/sigma decomposition.
#[derive(Debug, Clone, Serialize)]
pub struct HeckmanResult {
    pub selection_fit: FitResult,
    /// Outcome OLS over selected rows with the Mills term appended; its
    /// standard errors are the Heckman-corrected ones.
    pub outcome_fit: FitResult,
    /// Naive OLS standard errors, ignoring that the Mills regressor is
    /// estimated. Reported for comparison only.
    #[serde(serialize_with = "ser_dvector")]
    pub naive_se: DVector<f64>,
    /// Coefficient on the inverse Mills ratio (= rho * sigma).
    pub lambda: f64,
    pub lambda_se: f64,
    pub rho: f64,
    pub sigma: f64,
    pub n_selected: usize,
    pub n_total: usize,
    /// True when no selection covariate is excluded from the outcome
    /// equation; identification then rests on the Mills nonlinearity alone.
    pub exclusion_violated: bool,
    /// Likelihood-ratio comparison of the corrected outcome equation
    /// against the no-selection restriction (df = 1).
    pub selection_lr: TestResult,
}

pub const MILLS_NAME: &str = "_mills";

/// Two-step sample-selection estimator.
///
/// Step 1 fits a probit of the selection flag on the selection covariates
/// over the full sample; step 2 regresses the outcome on the regressors
/// plus the inverse Mills ratio of the probit index over selected rows.
pub fn heckman_two_step(
    outcome: &str,
    regressors: &[String],
    selected: &str,
    selection_covariates: &[String],
    d: &Dataset,
) -> Result<HeckmanResult> {
    let selection_fit = fit_probit(selected, selection_covariates, d)?;
    let exclusion_violated = selection_covariates
        .iter()
        .all(|c| regressors.contains(c));

    let sel_design = build_design(d, selection_covariates, true)?;
    let index_full = &sel_design.matrix * &selection_fit.coef;
    let flag = d.column(selected)?;
    let selected_rows: Vec<usize> = flag
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 1.0)
        .map(|(i, _)| i)
        .collect();
    let n_total = d.n_rows();
    let n_sel = selected_rows.len();

    let out_design = build_design(d, regressors, true)?;
    let k_star = out_design.matrix.ncols() + 1; // + Mills column
    if n_sel <= k_star {
        return Err(Error::TooFewRows { n: n_sel, k: k_star });
    }

    let y_full = d.column(outcome)?;
    let mut xstar = DMatrix::zeros(n_sel, k_star);
    let mut y = DVector::zeros(n_sel);
    let mut mills = DVector::zeros(n_sel);
    let mut delta = DVector::zeros(n_sel);
    let mut w_sel = DMatrix::zeros(n_sel, sel_design.matrix.ncols());
    for (row, &i) in selected_rows.iter().enumerate() {
        let m = inverse_mills(index_full[i]);
        mills[row] = m;
        delta[row] = m * (m + index_full[i]);
        for j in 0..out_design.matrix.ncols() {
            xstar[(row, j)] = out_design.matrix[(i, j)];
        }
        xstar[(row, k_star - 1)] = m;
        y[row] = y_full[i];
        for j in 0..sel_design.matrix.ncols() {
            w_sel[(row, j)] = sel_design.matrix[(i, j)];
        }
    }
    let mut names = out_design.names.clone();
    names.push(MILLS_NAME.to_string());

    let step2 = lstsq(&xstar, &y, &names)?;
    let lambda = step2.coef[k_star - 1];
    let ssr = step2.resid.dot(&step2.resid);
    let df = n_sel - k_star;

    // Heckman (1979) sigma^2 and rho from the Mills coefficient.
    let delta_bar = delta.sum() / n_sel as f64;
    let sigma2 = ssr / n_sel as f64 + lambda * lambda * delta_bar;
    let sigma = sigma2.sqrt();
    let rho = (lambda / sigma).clamp(-1.0, 1.0);

    // Corrected covariance: sigma^2 (X'X)^-1 [X'(I - rho^2 D)X + Q] (X'X)^-1
    // with Q = rho^2 (X'DW) V_probit (W'DX).
    let mut x_scaled = xstar.clone();
    for row in 0..n_sel {
        let f = 1.0 - rho * rho * delta[row];
        for j in 0..k_star {
            x_scaled[(row, j)] *= f;
        }
    }
    let inner = xstar.tr_mul(&x_scaled);
    let mut w_scaled = w_sel.clone();
    for row in 0..n_sel {
        for j in 0..w_sel.ncols() {
            w_scaled[(row, j)] *= delta[row];
        }
    }
    let xdw = xstar.tr_mul(&w_scaled);
    let q = &xdw * &selection_fit.vcov * xdw.transpose() * (rho * rho);
    let vcov = &step2.xtx_inv * (inner + q) * &step2.xtx_inv * sigma2;
    let vcov = (&vcov + vcov.transpose()) * 0.5;

    let (se, tstat, p) = infer(&step2.coef, &vcov, PValueDist::StudentT(df as f64));
    let naive_vcov = &step2.xtx_inv * (ssr / df as f64);
    let naive_se = DVector::from_fn(k_star, |i, _| naive_vcov[(i, i)].max(0.0).sqrt());
    let lambda_se = se[k_star - 1];

    // LR comparison against the no-selection (no Mills term) restriction,
    // from the Gaussian profile likelihoods of the two outcome fits.
    let restricted = lstsq(
        &xstar.columns(0, k_star - 1).into_owned(),
        &y,
        &names[..k_star - 1],
    )?;
    let ssr_r = restricted.resid.dot(&restricted.resid);
    let ll_u = gaussian_profile_loglik(n_sel, ssr);
    let ll_r = gaussian_profile_loglik(n_sel, ssr_r);
    let selection_lr = lr_test(ll_r, ll_u, 1)?;

    let ybar = y.mean();
    let sst: f64 = y.iter().map(|&v| (v - ybar) * (v - ybar)).sum();
    let outcome_fit = FitResult {
        names,
        coef: step2.coef,
        vcov,
        se,
        t: tstat,
        p,
        sigma2,
        r2: 1.0 - ssr / sst,
        n: n_sel,
        df_resid: df,
        method: Method::Ols,
        absorbed_levels: 0,
        loglik: Some(ll_u),
        first_stage: Vec::new(),
        iv: None,
    };

    Ok(HeckmanResult {
        selection_fit,
        outcome_fit,
        naive_se,
        lambda,
        lambda_se,
        rho,
        sigma,
        n_selected: n_sel,
        n_total,
        exclusion_violated,
        selection_lr,
    })
}

fn gaussian_profile_loglik(n: usize, ssr: f64) -> f64 {
    let n = n as f64;
    -0.5 * n * ((2.0 * std::f64::consts::PI * ssr / n).ln() + 1.0)
}
