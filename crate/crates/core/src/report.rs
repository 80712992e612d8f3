//! Text and CSV rendering for fits, summary tables, matching output, and
//! test footers. Rendering is pure string building: the same inputs always
//! produce byte-identical output.

use crate::dataset::SummaryTable;
use crate::diagnostics::{significance_stars, TestResult};
use crate::estimators::FitResult;
use crate::matching::MatchResult;
use crate::selection::{HeckmanResult, MILLS_NAME};

pub const STAR_LEGEND: &str = "*** p<0.01, ** p<0.05, * p<0.10";

/// Format with `sig` significant figures; positional in a sane magnitude
/// range, scientific outside it (survey tables mix both the same way).
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp10 = v.abs().log10().floor() as i32;
    if !(-6..7).contains(&exp10) {
        return format!("{:.*e}", sig.saturating_sub(1), v);
    }
    let decimals = (sig as i32 - 1 - exp10).max(0) as usize;
    format!("{v:.decimals$}")
}

fn stars_for(p: f64) -> &'static str {
    significance_stars(p.clamp(0.0, 1.0)).unwrap_or("")
}

/// Paper-style regression table: one column per fit, coefficients with
/// stars over standard errors in parentheses, then N and R2 rows, any
/// footers, and the star legend.
pub fn render_fit_table(title: &str, fits: &[(String, &FitResult)], footers: &[String]) -> String {
    // Union of coefficient names, in first-seen order.
    let mut terms: Vec<String> = Vec::new();
    for (_, fit) in fits {
        for name in &fit.names {
            if !terms.contains(name) {
                terms.push(name.clone());
            }
        }
    }

    let ncols = fits.len();
    let mut header = vec![String::new()];
    header.extend(fits.iter().map(|(label, _)| label.clone()));

    let mut rows: Vec<Vec<String>> = Vec::new();
    for term in &terms {
        let mut coef_row = vec![term.clone()];
        let mut se_row = vec![String::new()];
        for (_, fit) in fits {
            match fit.names.iter().position(|n| n == term) {
                Some(i) => {
                    let stars = stars_for(fit.p[i]);
                    let cell = if stars.is_empty() {
                        format_sig(fit.coef[i], 3)
                    } else {
                        format!("{} {stars}", format_sig(fit.coef[i], 3))
                    };
                    coef_row.push(cell);
                    se_row.push(format!("({})", format_sig(fit.se[i], 3)));
                }
                None => {
                    coef_row.push("-".to_string());
                    se_row.push(String::new());
                }
            }
        }
        rows.push(coef_row);
        rows.push(se_row);
    }

    let mut n_row = vec!["N".to_string()];
    let mut r2_row = vec!["R2".to_string()];
    for (_, fit) in fits {
        n_row.push(fit.n.to_string());
        r2_row.push(format!("{:.3}", fit.r2));
    }
    rows.push(n_row);
    rows.push(r2_row);

    let mut widths = vec![0usize; ncols + 1];
    for row in std::iter::once(&header).chain(rows.iter()) {
        for (j, cell) in row.iter().enumerate() {
            widths[j] = widths[j].max(cell.len());
        }
    }

    let mut out = String::new();
    if !title.is_empty() {
        out.push_str(title);
        out.push('\n');
    }
    let render_row = |row: &[String]| -> String {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j == 0 {
                line.push_str(&format!("{:<width$}", cell, width = widths[0]));
            } else {
                line.push_str(&format!("  {:>width$}", cell, width = widths[j]));
            }
        }
        line.trim_end().to_string()
    };
    out.push_str(&render_row(&header));
    out.push('\n');
    for row in &rows {
        out.push_str(&render_row(row));
        out.push('\n');
    }
    for footer in footers {
        out.push_str(footer);
        out.push('\n');
    }
    out.push_str(STAR_LEGEND);
    out.push('\n');
    out
}

/// Footer lines for an IV table: first-stage F in the survey one-liner
/// shape, then each over-identification result.
pub fn iv_footers(first_stage: &[TestResult], overid: Option<&TestResult>) -> Vec<String> {
    let mut out = Vec::new();
    for t in first_stage {
        out.push(format!(
            "One-stage regression results    F={}, p={:.3}",
            format_sig(t.statistic, 4),
            t.p_value
        ));
    }
    if let Some(t) = overid {
        out.push(format!("Over-identification test    {}", t.one_line()));
    }
    out
}

/// Tidy CSV of one or more fits: estimator,term,estimate,se,t,p,stars.
pub fn fits_to_csv(fits: &[(String, &FitResult)]) -> String {
    let mut out = String::from("estimator,term,estimate,se,t,p,stars\n");
    for (label, fit) in fits {
        for i in 0..fit.names.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                label, fit.names[i], fit.coef[i], fit.se[i], fit.t[i], fit.p[i],
                stars_for(fit.p[i]),
            ));
        }
    }
    out
}

/// Aligned text rendering of a summary table.
pub fn summary_to_text(table: &SummaryTable) -> String {
    let header = ["variable", "N", "mean", "sd", "min", "max"];
    let mut rows: Vec<[String; 6]> = Vec::with_capacity(table.rows.len());
    for r in &table.rows {
        rows.push([
            r.label.clone(),
            r.n.to_string(),
            format_sig(r.mean, 6),
            format_sig(r.sd, 6),
            format_sig(r.min, 6),
            format_sig(r.max, 6),
        ]);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (j, cell) in row.iter().enumerate() {
            widths[j] = widths[j].max(cell.len());
        }
    }
    let mut out = String::new();
    for (j, h) in header.iter().enumerate() {
        if j == 0 {
            out.push_str(&format!("{:<width$}", h, width = widths[0]));
        } else {
            out.push_str(&format!("  {:>width$}", h, width = widths[j]));
        }
    }
    out.push('\n');
    for row in &rows {
        for (j, cell) in row.iter().enumerate() {
            if j == 0 {
                out.push_str(&format!("{:<width$}", cell, width = widths[0]));
            } else {
                out.push_str(&format!("  {:>width$}", cell, width = widths[j]));
            }
        }
        out.push('\n');
    }
    out
}

/// RFC 4180 CSV of a summary table with full float precision.
pub fn summary_to_csv(table: &SummaryTable) -> String {
    let mut out = String::from("variable,n,mean,sd,min,max\n");
    for r in &table.rows {
        let label = if r.label.contains(',') {
            format!("\"{}\"", r.label.replace('"', "\"\""))
        } else {
            r.label.clone()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            label, r.n, r.mean, r.sd, r.min, r.max
        ));
    }
    out
}

/// ATT table across matching schemes, with a raw-difference row on top when
/// provided.
pub fn render_match_table(
    raw_difference: Option<(f64, f64)>,
    results: &[&MatchResult],
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28}  {:>12}  {:>10}  {:>8}  {:>10}  {:>10}\n",
        "method", "ATT", "se", "t", "matched", "unmatched"
    ));
    if let Some((diff, t)) = raw_difference {
        out.push_str(&format!(
            "{:<28}  {:>12}  {:>10}  {:>8}  {:>10}  {:>10}\n",
            "pre-match difference",
            format_sig(diff, 4),
            "-",
            format_sig(t, 4),
            "-",
            "-"
        ));
    }
    for mr in results {
        out.push_str(&format!(
            "{:<28}  {:>12}  {:>10}  {:>8}  {:>10}  {:>10}\n",
            mr.method.label(),
            format_sig(mr.att, 4),
            format_sig(mr.se, 4),
            format_sig(mr.t, 4),
            mr.n_treated_matched,
            mr.unmatched_treated
        ));
    }
    out.push_str(STAR_LEGEND);
    out.push('\n');
    out
}

/// Table-7-shaped Heckman report: outcome rows, LR and Lambda footers,
/// then the selection equation.
pub fn render_heckman(result: &HeckmanResult) -> String {
    let mut out = String::new();
    let fit = &result.outcome_fit;
    out.push_str("Heckman two-step outcome equation\n");
    for i in 0..fit.names.len() {
        if fit.names[i] == MILLS_NAME {
            continue;
        }
        let stars = stars_for(fit.p[i]);
        out.push_str(&format!(
            "{:<16}  {:>12} {:<3}\n{:<16}  {:>12}\n",
            fit.names[i],
            format_sig(fit.coef[i], 3),
            stars,
            "",
            format!("({})", format_sig(fit.se[i], 3)),
        ));
    }
    out.push_str(&format!("{:<16}  {:>12}\n", "N", result.n_total));
    out.push_str(&format!("{:<16}  {:>12}\n", "N selected", result.n_selected));
    out.push_str(&format!("LR test    {}\n", result.selection_lr.one_line()));
    out.push_str(&format!(
        "Lambda     {} ({})\n",
        format_sig(result.lambda, 4),
        format_sig(result.lambda_se, 4)
    ));
    out.push_str(&format!(
        "rho {}  sigma {}\n",
        format_sig(result.rho, 4),
        format_sig(result.sigma, 4)
    ));
    if result.exclusion_violated {
        out.push_str(
            "note: no selection covariate is excluded from the outcome equation; \
             identification rests on the Mills nonlinearity alone\n",
        );
    }
    out.push('\n');
    out.push_str("Selection equation (probit)\n");
    let sel = &result.selection_fit;
    for i in 0..sel.names.len() {
        let stars = stars_for(sel.p[i]);
        out.push_str(&format!(
            "{:<16}  {:>12} {:<3}\n{:<16}  {:>12}\n",
            sel.names[i],
            format_sig(sel.coef[i], 3),
            stars,
            "",
            format!("({})", format_sig(sel.se[i], 3)),
        ));
    }
    out.push_str(STAR_LEGEND);
    out.push('\n');
    out
}
