//! Pipeline execution: resolve the input dataset, run steps in order, and
//! write one report per requested format per step.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use ivkit::dataset::{derive_columns, group_describe, load_csv, Dataset};
use ivkit::report::{
    fits_to_csv, format_sig, iv_footers, render_fit_table, render_heckman, render_match_table,
    summary_to_csv, summary_to_text,
};
use ivkit::{
    balance_table, common_support, estimate_propensity, first_stage_f, fit_gmm, fit_liml,
    fit_ols, fit_tsls, generate, heckman_two_step, match_att, overid_test, FitResult,
    GmmIterate,
};

use crate::config::{
    parse_config, validate_config, EstimatorKind, Format, HeckmanStep, IvStep, OlsStep,
    PipelineConfig, PsmStep, Step,
};

/// Failure classes mapped onto exit codes: config errors exit 2, step
/// (numerical) failures exit 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Step {
        index: usize,
        kind: &'static str,
        message: String,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Step { .. } => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Step { index, kind, message } => {
                write!(f, "step {index} ({kind}) failed: {message}")
            }
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

/// Load or simulate the dataset described by the config. When simulating,
/// the dataset CSV and its TruthRecord sidecar are written to the output
/// directory.
fn resolve_input(config: &PipelineConfig, out_dir: &Path) -> Result<Dataset, CliError> {
    let data = match (&config.input.csv, &config.input.simulate) {
        (Some(csv), None) => {
            let schema: ivkit::Schema = csv
                .schema
                .iter()
                .map(|(name, role)| (name.clone(), *role))
                .collect();
            load_csv(&csv.path, &schema).map_err(config_err)?
        }
        (None, Some(sim)) => {
            let (data, truth) = generate(sim).map_err(config_err)?;
            data.write_csv(&out_dir.join("dataset.csv")).map_err(config_err)?;
            let truth_json =
                serde_json::to_string_pretty(&truth).expect("truth record serializes");
            std::fs::write(out_dir.join("truth.json"), truth_json).map_err(config_err)?;
            data
        }
        _ => unreachable!("validated: exactly one input source"),
    };
    if data.dropped_rows() > 0 {
        eprintln!("note: {} rows dropped during ingestion", data.dropped_rows());
    }
    derive_columns(&data, &config.input.derive).map_err(config_err)
}

fn write_report(
    out_dir: &Path,
    index: usize,
    kind: &str,
    format: Format,
    content: &str,
) -> std::io::Result<PathBuf> {
    let path = out_dir.join(format!("step_{:02}_{kind}.{}", index + 1, format.extension()));
    std::fs::write(&path, content)?;
    Ok(path)
}

/// Execute the whole pipeline. Steps run sequentially; each writes one
/// report per requested format (the psm step adds balance/support CSV
/// sidecars for external plotting).
pub fn run(config_path: &Path) -> Result<(), CliError> {
    let config = parse_config(config_path).map_err(CliError::Config)?;
    validate_config(&config).map_err(CliError::Config)?;
    std::fs::create_dir_all(&config.output.dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory: {e}")))?;
    let data = resolve_input(&config, &config.output.dir)?;

    for (index, step) in config.steps.iter().enumerate() {
        let kind = step.kind();
        let step_err = |message: String| CliError::Step { index: index + 1, kind, message };
        let reports: Vec<(Format, String)> = match step {
            Step::Describe(s) => describe_step(s, &data, &config.output.formats)
                .map_err(|e| step_err(e.to_string()))?,
            Step::Ols(s) => {
                ols_step(s, &data, &config.output.formats).map_err(|e| step_err(e.to_string()))?
            }
            Step::Iv(s) => {
                iv_step(s, &data, &config.output.formats).map_err(|e| step_err(e.to_string()))?
            }
            Step::Psm(s) => psm_step(s, &data, &config.output.formats, &config.output.dir, index)
                .map_err(|e| step_err(e.to_string()))?,
            Step::Heckman(s) => heckman_step(s, &data, &config.output.formats)
                .map_err(|e| step_err(e.to_string()))?,
        };
        for (format, content) in reports {
            write_report(&config.output.dir, index, kind, format, &content)
                .map_err(|e| step_err(format!("cannot write report: {e}")))?;
        }
    }
    Ok(())
}

/// Generate the configured synthetic dataset and its truth sidecar, no
/// analysis steps.
pub fn simulate(config_path: &Path) -> Result<(), CliError> {
    let config = parse_config(config_path).map_err(CliError::Config)?;
    let sim = config
        .input
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("simulate command needs input.simulate".into()))?;
    std::fs::create_dir_all(&config.output.dir)
        .map_err(|e| CliError::Config(format!("cannot create output directory: {e}")))?;
    let (data, truth) = generate(sim).map_err(config_err)?;
    data.write_csv(&config.output.dir.join("dataset.csv")).map_err(config_err)?;
    let truth_json = serde_json::to_string_pretty(&truth).expect("truth record serializes");
    std::fs::write(config.output.dir.join("truth.json"), truth_json).map_err(config_err)?;
    println!(
        "wrote {} rows to {}",
        data.n_rows(),
        config.output.dir.join("dataset.csv").display()
    );
    Ok(())
}

/// Parse and validate the config without running anything.
pub fn validate(config_path: &Path) -> Result<(), CliError> {
    let config = parse_config(config_path).map_err(CliError::Config)?;
    validate_config(&config).map_err(CliError::Config)?;
    println!("config ok: {} steps", config.steps.len());
    Ok(())
}

fn describe_step(
    s: &crate::config::DescribeStep,
    data: &Dataset,
    formats: &[Format],
) -> ivkit::Result<Vec<(Format, String)>> {
    let table = group_describe(data, s.group.as_deref(), &s.vars)?;
    let mut out = Vec::new();
    for &f in formats {
        let content = match f {
            Format::Text => summary_to_text(&table),
            Format::Csv => summary_to_csv(&table),
            Format::Json => serde_json::to_string_pretty(&table).expect("serializable") + "\n",
        };
        out.push((f, content));
    }
    Ok(out)
}

fn ols_step(
    s: &OlsStep,
    data: &Dataset,
    formats: &[Format],
) -> ivkit::Result<Vec<(Format, String)>> {
    let fit = fit_ols(&s.model_spec(), data)?;
    let labeled = vec![("OLS".to_string(), &fit)];
    let mut out = Vec::new();
    for &f in formats {
        let content = match f {
            Format::Text => render_fit_table("OLS regression", &labeled, &[]),
            Format::Csv => fits_to_csv(&labeled),
            Format::Json => {
                serde_json::to_string_pretty(&json!({ "fit": fit })).expect("serializable") + "\n"
            }
        };
        out.push((f, content));
    }
    Ok(out)
}

fn iv_step(
    s: &IvStep,
    data: &Dataset,
    formats: &[Format],
) -> ivkit::Result<Vec<(Format, String)>> {
    let spec = s.model_spec();
    let mut fits: Vec<(String, FitResult)> = Vec::new();
    for kind in &s.estimators {
        let fit = match kind {
            EstimatorKind::Tsls => fit_tsls(&spec, data)?,
            EstimatorKind::Liml => fit_liml(&spec, data)?,
            EstimatorKind::Gmm => fit_gmm(&spec, data, GmmIterate::TwoStep)?,
            EstimatorKind::Igmm => fit_gmm(
                &spec,
                data,
                GmmIterate::Iterated { max_iter: s.igmm_max_iter, tol: s.igmm_tol },
            )?,
        };
        fits.push((kind.label().to_string(), fit));
    }

    let first = &fits[0].1;
    let fs_tests = first_stage_f(first)?;
    let overid = if s.instruments.len() > s.endogenous.len() {
        Some(overid_test(first, s.overid)?)
    } else {
        None
    };
    let footers = iv_footers(&fs_tests, overid.as_ref());

    let labeled: Vec<(String, &FitResult)> =
        fits.iter().map(|(l, f)| (l.clone(), f)).collect();
    let mut out = Vec::new();
    for &f in formats {
        let content = match f {
            Format::Text => {
                render_fit_table("Instrumental variable regression", &labeled, &footers)
            }
            Format::Csv => fits_to_csv(&labeled),
            Format::Json => {
                let fit_objs: Vec<serde_json::Value> = fits
                    .iter()
                    .map(|(label, fit)| json!({ "estimator": label, "fit": fit }))
                    .collect();
                serde_json::to_string_pretty(&json!({
                    "fits": fit_objs,
                    "first_stage_f": fs_tests,
                    "overid": overid,
                }))
                .expect("serializable")
                    + "\n"
            }
        };
        out.push((f, content));
    }
    Ok(out)
}

fn psm_step(
    s: &PsmStep,
    data: &Dataset,
    formats: &[Format],
    out_dir: &Path,
    index: usize,
) -> ivkit::Result<Vec<(Format, String)>> {
    let pm = estimate_propensity(&s.treatment, &s.covariates, data)?;
    let support = common_support(&pm);

    // Raw pre-match difference with a Welch t statistic.
    let y = data.column(&s.outcome)?;
    let (mut sum_t, mut n_t, mut sum_c, mut n_c) = (0.0, 0usize, 0.0, 0usize);
    for (v, &tr) in y.iter().zip(&pm.treated) {
        if tr {
            sum_t += v;
            n_t += 1;
        } else {
            sum_c += v;
            n_c += 1;
        }
    }
    let mean_t = sum_t / n_t as f64;
    let mean_c = sum_c / n_c as f64;
    let var = |mean: f64, treated: bool| -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for (v, &tr) in y.iter().zip(&pm.treated) {
            if tr == treated {
                acc += (v - mean) * (v - mean);
                n += 1;
            }
        }
        acc / (n - 1) as f64
    };
    let raw_diff = mean_t - mean_c;
    let raw_t = raw_diff / (var(mean_t, true) / n_t as f64 + var(mean_c, false) / n_c as f64).sqrt();

    let mut results = Vec::new();
    let mut balances = Vec::new();
    for m in &s.methods {
        let mr = match_att(&pm, &s.outcome, m.to_method(), data)?;
        let bt = balance_table(&pm, &mr, &s.covariates, data)?;
        results.push(mr);
        balances.push(bt);
    }

    let mut out = Vec::new();
    for &f in formats {
        let content = match f {
            Format::Text => {
                let refs: Vec<&ivkit::MatchResult> = results.iter().collect();
                let mut text = String::from("Propensity score matching\n");
                text.push_str(&render_match_table(Some((raw_diff, raw_t)), &refs));
                text.push('\n');
                let _ = writeln!(
                    text,
                    "Common support [{}, {}]; off-support treated {}, control {}",
                    format_sig(support.lo, 4),
                    format_sig(support.hi, 4),
                    support.off_support_treated,
                    support.off_support_control
                );
                let _ = writeln!(text, "\nStandardized bias (%) for {}", results[0].method.label());
                let _ = writeln!(
                    text,
                    "{:<12}  {:>10}  {:>10}  {:>10}",
                    "covariate", "pre", "post", "reduction"
                );
                for row in &balances[0].rows {
                    let _ = writeln!(
                        text,
                        "{:<12}  {:>10.2}  {:>10.2}  {:>10.2}",
                        row.covariate, row.bias_pre_pct, row.bias_post_pct, row.reduction_pct
                    );
                }
                text
            }
            Format::Csv => {
                let mut csv =
                    String::from("method,att,se,t,n_treated_matched,unmatched_treated\n");
                let _ = writeln!(csv, "pre-match,{raw_diff},,{raw_t},,");
                for mr in &results {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{},{}",
                        mr.method.label(),
                        mr.att,
                        mr.se,
                        mr.t,
                        mr.n_treated_matched,
                        mr.unmatched_treated
                    );
                }
                csv
            }
            Format::Json => {
                let atts: Vec<serde_json::Value> = results
                    .iter()
                    .zip(&balances)
                    .map(|(mr, bt)| {
                        json!({
                            "method": mr.method.label(),
                            "att": mr.att,
                            "se": mr.se,
                            "t": mr.t,
                            "n_treated_matched": mr.n_treated_matched,
                            "unmatched_treated": mr.unmatched_treated,
                            "balance": bt,
                        })
                    })
                    .collect();
                serde_json::to_string_pretty(&json!({
                    "pre_match": { "difference": raw_diff, "t": raw_t },
                    "results": atts,
                    "support": support,
                }))
                .expect("serializable")
                    + "\n"
            }
        };
        out.push((f, content));
    }

    // Fixed-name sidecars for external plotting of the balance and support
    // figures.
    if formats.contains(&Format::Csv) {
        std::fs::write(
            out_dir.join(format!("step_{:02}_psm_balance.csv", index + 1)),
            balances[0].to_csv(),
        )
        .map_err(ivkit::Error::Io)?;
        std::fs::write(
            out_dir.join(format!("step_{:02}_psm_support.csv", index + 1)),
            support.to_csv(),
        )
        .map_err(ivkit::Error::Io)?;
    }
    Ok(out)
}

fn heckman_step(
    s: &HeckmanStep,
    data: &Dataset,
    formats: &[Format],
) -> ivkit::Result<Vec<(Format, String)>> {
    let result = heckman_two_step(
        &s.outcome,
        &s.regressors,
        &s.selected,
        &s.selection_covariates,
        data,
    )?;
    let mut out = Vec::new();
    for &f in formats {
        let content = match f {
            Format::Text => render_heckman(&result),
            Format::Csv => {
                let labeled = vec![
                    ("outcome".to_string(), &result.outcome_fit),
                    ("selection".to_string(), &result.selection_fit),
                ];
                fits_to_csv(&labeled)
            }
            Format::Json => {
                serde_json::to_string_pretty(&result).expect("serializable") + "\n"
            }
        };
        out.push((f, content));
    }
    Ok(out)
}
