//! Propensity-score matching for the average treatment effect on the
//! treated: nearest-neighbour (1:k), radius, and Epanechnikov-kernel
//! schemes, with standardized-bias balance tables and common-support
//! reports.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::{mean, sample_sd, ColumnMeta, Dataset};
use crate::error::{Error, Result};
use crate::estimators::{build_design, infer, FitResult, Method, PValueDist};
use crate::linalg::lstsq;

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 1e3;
const SCORE_CLAMP: f64 = 1e-12;

/// Log-likelihood of the logit model.
pub fn logit_loglik(x: &DMatrix<f64>, t: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let xb = x * beta;
    let mut ll = 0.0;
    for i in 0..x.nrows() {
        // t ln p + (1-t) ln(1-p) = -softplus(-xb) when t=1, -softplus(xb) when t=0.
        ll -= if t[i] > 0.5 { softplus(-xb[i]) } else { softplus(xb[i]) };
    }
    ll
}

/// Analytic score (gradient) of the logit log-likelihood: X'(t - p).
pub fn logit_score(x: &DMatrix<f64>, t: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let xb = x * beta;
    let resid = DVector::from_fn(x.nrows(), |i, _| t[i] - sigmoid(xb[i]));
    x.tr_mul(&resid)
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else if v < -30.0 {
        v.exp()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Fitted propensity model: the logit fit plus per-row scores.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    pub fit: FitResult,
    /// P(treatment = 1 | x), strictly inside (0, 1).
    pub scores: Vec<f64>,
    pub treated: Vec<bool>,
    pub treatment_column: String,
}

/// Logistic regression of a binary treatment on covariates by
/// Newton-Raphson, converged when the max-abs score drops below 1e-8.
///
/// Divergence of any coefficient past 1e3 is reported as perfect
/// separation.
pub fn estimate_propensity(
    treatment: &str,
    covariates: &[String],
    d: &Dataset,
) -> Result<PropensityModel> {
    if d.meta(treatment)? != ColumnMeta::Binary {
        return Err(Error::Domain {
            column: treatment.to_string(),
            detail: "treatment must be a binary column".into(),
        });
    }
    let t_col = d.column(treatment)?;
    let n_treated = t_col.iter().filter(|&&v| v == 1.0).count();
    if n_treated == 0 || n_treated == d.n_rows() {
        return Err(Error::EmptyGroup(format!(
            "{treatment}={}",
            if n_treated == 0 { 1 } else { 0 }
        )));
    }

    let design = build_design(d, covariates, true)?;
    let t = DVector::from_column_slice(t_col);
    let fit = fit_logit(&design.matrix, &t, &design.names)?;

    let xb = &design.matrix * &fit.coef;
    let scores: Vec<f64> = xb
        .iter()
        .map(|&v| sigmoid(v).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP))
        .collect();
    Ok(PropensityModel {
        fit,
        scores,
        treated: t_col.iter().map(|&v| v == 1.0).collect(),
        treatment_column: treatment.to_string(),
    })
}

pub(crate) fn fit_logit(
    x: &DMatrix<f64>,
    t: &DVector<f64>,
    names: &[String],
) -> Result<FitResult> {
    let n = x.nrows();
    let k = x.ncols();
    if n <= k {
        return Err(Error::TooFewRows { n, k });
    }
    let mut beta = DVector::zeros(k);
    let mut iterations = 0;
    let mut converged = false;
    let mut xtx_inv = None;

    while iterations < NEWTON_MAX_ITER {
        iterations += 1;
        let xb = x * &beta;
        let p: Vec<f64> = xb.iter().map(|&v| sigmoid(v)).collect();
        // Newton step as a weighted least-squares solve keeps the pivoted-QR
        // rank diagnostics.
        let mut xw = x.clone();
        let mut r = DVector::zeros(n);
        for i in 0..n {
            let w = (p[i] * (1.0 - p[i])).max(1e-12);
            let sw = w.sqrt();
            for j in 0..k {
                xw[(i, j)] *= sw;
            }
            r[i] = (t[i] - p[i]) / sw;
        }
        let step = lstsq(&xw, &r, names)?;
        beta += &step.coef;
        if beta.amax() > SEPARATION_BOUND {
            return Err(Error::PerfectSeparation("logit"));
        }
        let grad = logit_score(x, t, &beta);
        if grad.amax() < NEWTON_GRAD_TOL {
            converged = true;
            // One more weighted solve at the optimum for the information matrix.
            let xb = x * &beta;
            let mut xw = x.clone();
            for i in 0..n {
                let pi = sigmoid(xb[i]);
                let sw = (pi * (1.0 - pi)).max(1e-12).sqrt();
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
        return Err(Error::NonConvergence { what: "logit Newton-Raphson", iterations });
    }

    let vcov = xtx_inv.expect("set on convergence");
    let (se, tstat, p) = infer(&beta, &vcov, PValueDist::Normal);
    let ll = logit_loglik(x, t, &beta);
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
        method: Method::Logit { iterations },
        absorbed_levels: 0,
        loglik: Some(ll),
        first_stage: Vec::new(),
        iv: None,
    })
}

/// Matching scheme and its tuning parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    /// k nearest controls by |score difference|, ties broken by lower
    /// row index.
    Nn { k: usize, with_replacement: bool },
    /// Every control within `caliper` of the treated score.
    Radius { caliper: f64 },
    /// Epanechnikov weights over all in-support controls.
    Kernel { bandwidth: f64 },
}

impl MatchMethod {
    pub fn label(&self) -> String {
        match self {
            MatchMethod::Nn { k, .. } => format!("1:{k} nearest neighbour"),
            MatchMethod::Radius { caliper } => format!("radius ({caliper})"),
            MatchMethod::Kernel { bandwidth } => format!("kernel ({bandwidth})"),
        }
    }
}

/// Matched sample and the ATT it implies.
#[derive(Debug, Clone, Serialize)]
pub struct MatchResult {
    pub method: MatchMethod,
    /// treated row -> [(control row, weight)]; weights sum to 1 per treated.
    pub pairs: Vec<(usize, Vec<(usize, f64)>)>,
    pub att: f64,
    pub se: f64,
    pub t: f64,
    pub n_treated_matched: usize,
    /// Off-support treated plus treated with no usable control.
    pub unmatched_treated: usize,
}

/// Common-support interval and per-arm score histograms (40 equal bins
/// over the unit interval).
#[derive(Debug, Clone, Serialize)]
pub struct SupportReport {
    pub lo: f64,
    pub hi: f64,
    pub disjoint: bool,
    pub off_support_treated: usize,
    pub off_support_control: usize,
    pub bins: Vec<SupportBin>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportBin {
    pub lo: f64,
    pub hi: f64,
    pub treated: usize,
    pub control: usize,
}

impl SupportReport {
    /// Histogram as CSV (`bin_lo,bin_hi,treated,control`), ready for an
    /// external plotter.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,treated,control\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{},{}\n", b.lo, b.hi, b.treated, b.control));
        }
        out
    }
}

/// Support interval, off-support counts, and histogram data.
pub fn common_support(pm: &PropensityModel) -> SupportReport {
    let mut min_t = f64::INFINITY;
    let mut max_t = f64::NEG_INFINITY;
    let mut min_c = f64::INFINITY;
    let mut max_c = f64::NEG_INFINITY;
    for (s, &tr) in pm.scores.iter().zip(&pm.treated) {
        if tr {
            min_t = min_t.min(*s);
            max_t = max_t.max(*s);
        } else {
            min_c = min_c.min(*s);
            max_c = max_c.max(*s);
        }
    }
    let lo = min_t.max(min_c);
    let hi = max_t.min(max_c);
    let disjoint = lo > hi;

    let mut off_t = 0;
    let mut off_c = 0;
    const NBINS: usize = 40;
    let mut bins: Vec<SupportBin> = (0..NBINS)
        .map(|i| SupportBin {
            lo: i as f64 / NBINS as f64,
            hi: (i + 1) as f64 / NBINS as f64,
            treated: 0,
            control: 0,
        })
        .collect();
    for (s, &tr) in pm.scores.iter().zip(&pm.treated) {
        let idx = ((s * NBINS as f64) as usize).min(NBINS - 1);
        if tr {
            bins[idx].treated += 1;
        } else {
            bins[idx].control += 1;
        }
        if disjoint || *s < lo || *s > hi {
            if tr {
                off_t += 1;
            } else {
                off_c += 1;
            }
        }
    }

    SupportReport {
        lo,
        hi,
        disjoint,
        off_support_treated: off_t,
        off_support_control: off_c,
        bins,
    }
}

/// Match treated units to controls on the propensity score and estimate
/// the ATT.
///
/// Both arms are restricted to the common-support interval first;
/// off-support treated units are dropped and counted. The ATT variance uses
/// the independent-sampling approximation: treated-outcome variance plus
/// the weight-squared control-outcome variance.
pub fn match_att(
    pm: &PropensityModel,
    outcome: &str,
    method: MatchMethod,
    d: &Dataset,
) -> Result<MatchResult> {
    let y = d.column(outcome)?;
    if y.len() != pm.scores.len() {
        return Err(Error::InvalidSpec(
            "propensity model and dataset row counts differ".into(),
        ));
    }
    let support = common_support(pm);
    let in_support = |s: f64| !support.disjoint && s >= support.lo && s <= support.hi;

    let treated_rows: Vec<usize> = (0..y.len())
        .filter(|&i| pm.treated[i] && in_support(pm.scores[i]))
        .collect();
    // Controls sorted by (score, row index) for deterministic neighbour scans.
    let mut controls: Vec<usize> = (0..y.len())
        .filter(|&i| !pm.treated[i] && in_support(pm.scores[i]))
        .collect();
    controls.sort_by(|&a, &b| {
        pm.scores[a]
            .partial_cmp(&pm.scores[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    if controls.is_empty() {
        return Err(Error::NoControlsInSupport);
    }
    let off_support_treated = pm.treated.iter().filter(|&&t| t).count() - treated_rows.len();

    if let MatchMethod::Nn { k, with_replacement: false } = method {
        if k * treated_rows.len() > controls.len() {
            return Err(Error::ControlPoolExhausted {
                k,
                available: controls.len() / treated_rows.len().max(1),
            });
        }
    }

    let mut pairs: Vec<(usize, Vec<(usize, f64)>)> = Vec::with_capacity(treated_rows.len());
    let mut method_unmatched = 0usize;
    let mut used: Vec<bool> = vec![false; controls.len()];

    for &t_row in &treated_rows {
        let s_t = pm.scores[t_row];
        let matched: Vec<(usize, f64)> = match method {
            MatchMethod::Nn { k, with_replacement } => {
                let chosen = nearest_controls(
                    &controls,
                    &pm.scores,
                    s_t,
                    k,
                    if with_replacement { None } else { Some(&used) },
                );
                if chosen.len() < k {
                    return Err(Error::ControlPoolExhausted { k, available: chosen.len() });
                }
                if !with_replacement {
                    for &(pos, _) in &chosen {
                        used[pos] = true;
                    }
                }
                let w = 1.0 / k as f64;
                chosen.iter().map(|&(pos, _)| (controls[pos], w)).collect()
            }
            MatchMethod::Radius { caliper } => {
                let hits: Vec<usize> = controls
                    .iter()
                    .copied()
                    .filter(|&c| (pm.scores[c] - s_t).abs() <= caliper)
                    .collect();
                let w = 1.0 / hits.len().max(1) as f64;
                hits.into_iter().map(|c| (c, w)).collect()
            }
            MatchMethod::Kernel { bandwidth } => {
                let mut weighted: Vec<(usize, f64)> = Vec::new();
                let mut total = 0.0;
                for &c in &controls {
                    let u = (pm.scores[c] - s_t) / bandwidth;
                    if u.abs() < 1.0 {
                        let w = 0.75 * (1.0 - u * u);
                        weighted.push((c, w));
                        total += w;
                    }
                }
                for entry in &mut weighted {
                    entry.1 /= total;
                }
                weighted
            }
        };
        if matched.is_empty() {
            method_unmatched += 1;
        } else {
            pairs.push((t_row, matched));
        }
    }

    if pairs.is_empty() {
        return Err(Error::NoControlsInSupport);
    }

    let n_t = pairs.len();
    let mut diffs = Vec::with_capacity(n_t);
    // BTreeMap keeps a deterministic accumulation order for the variance.
    let mut control_weight: std::collections::BTreeMap<usize, f64> =
        std::collections::BTreeMap::new();
    for (t_row, matched) in &pairs {
        let counterfactual: f64 = matched.iter().map(|&(c, w)| w * y[c]).sum();
        diffs.push(y[*t_row] - counterfactual);
        for &(c, w) in matched {
            *control_weight.entry(c).or_insert(0.0) += w / n_t as f64;
        }
    }
    let att = mean(&diffs);

    let treated_y: Vec<f64> = pairs.iter().map(|(t, _)| y[*t]).collect();
    let matched_controls: Vec<f64> = control_weight.keys().map(|&c| y[c]).collect();
    let var_t = sample_sd(&treated_y).powi(2);
    let var_c = sample_sd(&matched_controls).powi(2);
    let sum_w2: f64 = control_weight.values().map(|w| w * w).sum();
    let variance = var_t / n_t as f64 + sum_w2 * var_c;
    let se = variance.sqrt();
    let t_stat = if se > 0.0 { att / se } else { 0.0 };

    Ok(MatchResult {
        method,
        pairs,
        att,
        se,
        t: t_stat,
        n_treated_matched: n_t,
        unmatched_treated: off_support_treated + method_unmatched,
    })
}

/// k nearest controls (positions into the sorted `controls` slice) by
/// absolute score difference, ties broken by lower dataset row index.
fn nearest_controls(
    controls: &[usize],
    scores: &[f64],
    s_t: f64,
    k: usize,
    used: Option<&[bool]>,
) -> Vec<(usize, f64)> {
    let is_free = |pos: usize| used.is_none_or(|u| !u[pos]);
    let dist_at = |pos: usize| (scores[controls[pos]] - s_t).abs();

    let mut right = controls.partition_point(|&c| scores[c] < s_t);
    let mut left = right as isize - 1;
    // Two-pointer walk pulls candidates in non-decreasing distance order;
    // keep pulling while exact ties with the k-th distance remain.
    let mut candidates: Vec<(usize, f64)> = Vec::with_capacity(k + 4);
    loop {
        while left >= 0 && !is_free(left as usize) {
            left -= 1;
        }
        while right < controls.len() && !is_free(right) {
            right += 1;
        }
        let dl = (left >= 0).then(|| dist_at(left as usize));
        let dr = (right < controls.len()).then(|| dist_at(right));
        if candidates.len() >= k {
            let kth = candidates[k - 1].1;
            let tie = dl.is_some_and(|d| d <= kth) || dr.is_some_and(|d| d <= kth);
            if !tie {
                break;
            }
        }
        match (dl, dr) {
            (None, None) => break,
            (Some(d), None) => {
                candidates.push((left as usize, d));
                left -= 1;
            }
            (None, Some(d)) => {
                candidates.push((right, d));
                right += 1;
            }
            (Some(l_dist), Some(r_dist)) => {
                if l_dist <= r_dist {
                    candidates.push((left as usize, l_dist));
                    left -= 1;
                } else {
                    candidates.push((right, r_dist));
                    right += 1;
                }
            }
        }
    }

    candidates.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then(controls[a.0].cmp(&controls[b.0]))
    });
    candidates.truncate(k);
    candidates
}

/// Standardized bias of one covariate (percent).
#[derive(Debug, Clone, Serialize)]
pub struct BalanceRow {
    pub covariate: String,
    pub bias_pre_pct: f64,
    pub bias_post_pct: f64,
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceTable {
    pub rows: Vec<BalanceRow>,
}

impl BalanceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("covariate,bias_pre_pct,bias_post_pct,reduction_pct\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.covariate, r.bias_pre_pct, r.bias_post_pct, r.reduction_pct
            ));
        }
        out
    }

    pub fn max_abs_post(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.bias_post_pct.abs())
            .fold(0.0, f64::max)
    }
}

/// Standardized bias before and after matching.
///
/// bias = 100 (mean_t - mean_c) / sqrt((var_t + var_c) / 2), with the
/// pre-match variances in the denominator for both rows (the usual
/// convention, so pre and post are on the same scale).
pub fn balance_table(
    pm: &PropensityModel,
    mr: &MatchResult,
    covariates: &[String],
    d: &Dataset,
) -> Result<BalanceTable> {
    let mut rows = Vec::with_capacity(covariates.len());
    for cov in covariates {
        let x = d.column(cov)?;
        let pre_t: Vec<f64> = x
            .iter()
            .zip(&pm.treated)
            .filter(|(_, &t)| t)
            .map(|(v, _)| *v)
            .collect();
        let pre_c: Vec<f64> = x
            .iter()
            .zip(&pm.treated)
            .filter(|(_, &t)| !t)
            .map(|(v, _)| *v)
            .collect();
        let pooled_sd =
            ((sample_sd(&pre_t).powi(2) + sample_sd(&pre_c).powi(2)) / 2.0).sqrt();
        if pooled_sd == 0.0 {
            return Err(Error::Domain {
                column: cov.clone(),
                detail: "zero pooled variance, standardized bias undefined".into(),
            });
        }
        let bias_pre = 100.0 * (mean(&pre_t) - mean(&pre_c)) / pooled_sd;

        let n_t = mr.pairs.len() as f64;
        let post_t = mean(&mr.pairs.iter().map(|(t, _)| x[*t]).collect::<Vec<_>>());
        let post_c: f64 = mr
            .pairs
            .iter()
            .flat_map(|(_, matched)| matched.iter().map(|&(c, w)| w * x[c]))
            .sum::<f64>()
            / n_t;
        let bias_post = 100.0 * (post_t - post_c) / pooled_sd;

        let reduction = if bias_pre != 0.0 {
            100.0 * (1.0 - bias_post.abs() / bias_pre.abs())
        } else {
            0.0
        };
        rows.push(BalanceRow {
            covariate: cov.clone(),
            bias_pre_pct: bias_pre,
            bias_post_pct: bias_post,
            reduction_pct: reduction,
        });
    }
    Ok(BalanceTable { rows })
}
