//! Pipeline configuration: a single JSON file describing the input dataset
//! (CSV or simulated), an ordered list of analysis steps, and the output
//! directory and formats.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use ivkit::dataset::Transform;
use ivkit::{ColumnRole, CovKind, DgpConfig, MatchMethod, ModelSpec, OveridMethod};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub steps: Vec<Step>,
    pub output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    #[serde(default)]
    pub csv: Option<CsvInput>,
    #[serde(default)]
    pub simulate: Option<DgpConfig>,
    /// Column transforms applied after loading, before any step runs.
    #[serde(default)]
    pub derive: Vec<Transform>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvInput {
    pub path: PathBuf,
    /// Declared columns and roles; only these are loaded. Keys are sorted,
    /// so column order in the dataset is alphabetical.
    pub schema: BTreeMap<String, ColumnRole>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Step {
    Describe(DescribeStep),
    Ols(OlsStep),
    Iv(IvStep),
    Psm(PsmStep),
    Heckman(HeckmanStep),
}

impl Step {
    pub fn kind(&self) -> &'static str {
        match self {
            Step::Describe(_) => "describe",
            Step::Ols(_) => "ols",
            Step::Iv(_) => "iv",
            Step::Psm(_) => "psm",
            Step::Heckman(_) => "heckman",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeStep {
    #[serde(default)]
    pub group: Option<String>,
    pub vars: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OlsStep {
    pub outcome: String,
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub fixed_effect: Option<String>,
    #[serde(default)]
    pub cov: CovKind,
    #[serde(default = "default_true")]
    pub intercept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Tsls,
    Liml,
    Gmm,
    Igmm,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Tsls => "TSLS",
            EstimatorKind::Liml => "LIML",
            EstimatorKind::Gmm => "GMM",
            EstimatorKind::Igmm => "IGMM",
        }
    }
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::Tsls,
        EstimatorKind::Liml,
        EstimatorKind::Gmm,
        EstimatorKind::Igmm,
    ]
}

fn default_overid() -> OveridMethod {
    OveridMethod::Score
}

fn default_igmm_max_iter() -> usize {
    500
}

fn default_igmm_tol() -> f64 {
    1e-8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvStep {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub exogenous: Vec<String>,
    #[serde(default)]
    pub fixed_effect: Option<String>,
    #[serde(default)]
    pub cov: CovKind,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_overid")]
    pub overid: OveridMethodConfig,
    #[serde(default = "default_igmm_max_iter")]
    pub igmm_max_iter: usize,
    #[serde(default = "default_igmm_tol")]
    pub igmm_tol: f64,
}

/// Mirror of [`OveridMethod`] with serde support on the config surface.
pub type OveridMethodConfig = OveridMethod;

impl IvStep {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            outcome: self.outcome.clone(),
            endogenous: self.endogenous.clone(),
            instruments: self.instruments.clone(),
            exogenous: self.exogenous.clone(),
            fixed_effect: self.fixed_effect.clone(),
            cov: self.cov,
            intercept: self.intercept,
        }
    }
}

impl OlsStep {
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            outcome: self.outcome.clone(),
            endogenous: Vec::new(),
            instruments: Vec::new(),
            exogenous: self.exogenous.clone(),
            fixed_effect: self.fixed_effect.clone(),
            cov: self.cov,
            intercept: self.intercept,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum MethodConfig {
    Nn {
        k: usize,
        #[serde(default = "default_true")]
        with_replacement: bool,
    },
    Radius { caliper: f64 },
    Kernel { bandwidth: f64 },
}

impl MethodConfig {
    pub fn to_method(self) -> MatchMethod {
        match self {
            MethodConfig::Nn { k, with_replacement } => MatchMethod::Nn { k, with_replacement },
            MethodConfig::Radius { caliper } => MatchMethod::Radius { caliper },
            MethodConfig::Kernel { bandwidth } => MatchMethod::Kernel { bandwidth },
        }
    }
}

/// The four default schemes: 1:1, 1:2, radius 0.05, Epanechnikov 0.06.
fn default_methods() -> Vec<MethodConfig> {
    vec![
        MethodConfig::Nn { k: 1, with_replacement: true },
        MethodConfig::Nn { k: 2, with_replacement: true },
        MethodConfig::Radius { caliper: 0.05 },
        MethodConfig::Kernel { bandwidth: 0.06 },
    ]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsmStep {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeckmanStep {
    pub outcome: String,
    pub regressors: Vec<String>,
    pub selected: String,
    pub selection_covariates: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Text,
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Text => "txt",
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

fn default_formats() -> Vec<Format> {
    vec![Format::Text, Format::Csv, Format::Json]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

/// Parse a config file, failing with a readable message.
pub fn parse_config(path: &Path) -> Result<PipelineConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config `{}`: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))
}

/// Column names the simulator emits.
fn simulated_columns(cfg: &DgpConfig) -> Vec<String> {
    let mut cols: Vec<String> = [
        "hukou", "family", "child", "gender", "edu", "lnincome", "lnhoscost", "city", "y",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if cfg.selection.is_some() {
        cols.push("selected".into());
    }
    cols
}

fn derived_columns(base: &[String], derive: &[Transform]) -> Result<Vec<String>, String> {
    let mut cols = base.to_vec();
    for t in derive {
        match t {
            Transform::Log1p { src } => {
                if !cols.contains(src) {
                    return Err(format!("derive log1p references missing column `{src}`"));
                }
                cols.push(format!("ln1p_{src}"));
            }
            Transform::Dummy { src } => {
                if !cols.contains(src) {
                    return Err(format!("derive dummy references missing column `{src}`"));
                }
                // Indicator names depend on the level count, which is data
                // dependent; existence is checked again at run time.
            }
        }
    }
    Ok(cols)
}

/// Structural validation without touching data beyond the CSV header.
///
/// Checks that exactly one input source is configured, that every step
/// references declared columns, and that model specs satisfy their own
/// structural rules (order condition, disjointness).
pub fn validate_config(config: &PipelineConfig) -> Result<(), String> {
    let base = match (&config.input.csv, &config.input.simulate) {
        (Some(_), Some(_)) => {
            return Err("input must set exactly one of `csv` or `simulate`, not both".into())
        }
        (None, None) => return Err("input must set one of `csv` or `simulate`".into()),
        (Some(csv), None) => {
            if csv.schema.is_empty() {
                return Err("csv schema must declare at least one column".into());
            }
            let header = read_csv_header(&csv.path)?;
            for name in csv.schema.keys() {
                if !header.iter().any(|h| h == name) {
                    return Err(format!(
                        "csv `{}` has no column `{name}`",
                        csv.path.display()
                    ));
                }
            }
            csv.schema.keys().cloned().collect::<Vec<_>>()
        }
        (None, Some(sim)) => simulated_columns(sim),
    };
    let columns = derived_columns(&base, &config.input.derive)?;

    if config.steps.is_empty() {
        return Err("pipeline needs at least one step".into());
    }

    let check = |name: &String, step_idx: usize, kind: &str| -> Result<(), String> {
        // Dummy-derived indicator names cannot be enumerated without data;
        // accept `<src>_<digits>` when the source is a declared column.
        if columns.contains(name) {
            return Ok(());
        }
        if let Some((src, suffix)) = name.rsplit_once('_') {
            let dummy_declared = config.input.derive.iter().any(
                |t| matches!(t, Transform::Dummy { src: s } if s == src),
            );
            if dummy_declared && suffix.chars().all(|c| c.is_ascii_digit()) {
                return Ok(());
            }
        }
        Err(format!("step {} ({kind}) references missing column `{name}`", step_idx + 1))
    };

    for (i, step) in config.steps.iter().enumerate() {
        match step {
            Step::Describe(s) => {
                if s.vars.is_empty() {
                    return Err(format!("step {} (describe) lists no variables", i + 1));
                }
                for v in s.vars.iter().chain(s.group.iter()) {
                    check(v, i, "describe")?;
                }
            }
            Step::Ols(s) => {
                for v in std::iter::once(&s.outcome)
                    .chain(s.exogenous.iter())
                    .chain(s.fixed_effect.iter())
                {
                    check(v, i, "ols")?;
                }
                s.model_spec().validate().map_err(|e| format!("step {} (ols): {e}", i + 1))?;
            }
            Step::Iv(s) => {
                for v in std::iter::once(&s.outcome)
                    .chain(s.endogenous.iter())
                    .chain(s.instruments.iter())
                    .chain(s.exogenous.iter())
                    .chain(s.fixed_effect.iter())
                {
                    check(v, i, "iv")?;
                }
                if s.estimators.is_empty() {
                    return Err(format!("step {} (iv) lists no estimators", i + 1));
                }
                if s.estimators.contains(&EstimatorKind::Igmm)
                    && (s.igmm_max_iter == 0 || s.igmm_tol <= 0.0)
                {
                    return Err(format!(
                        "step {} (iv): igmm needs max_iter >= 1 and tol > 0",
                        i + 1
                    ));
                }
                s.model_spec().validate().map_err(|e| format!("step {} (iv): {e}", i + 1))?;
            }
            Step::Psm(s) => {
                for v in [&s.treatment, &s.outcome].into_iter().chain(s.covariates.iter()) {
                    check(v, i, "psm")?;
                }
                for m in &s.methods {
                    match m {
                        MethodConfig::Nn { k, .. } if *k == 0 => {
                            return Err(format!("step {} (psm): nn k must be >= 1", i + 1))
                        }
                        MethodConfig::Radius { caliper } if *caliper <= 0.0 => {
                            return Err(format!("step {} (psm): caliper must be > 0", i + 1))
                        }
                        MethodConfig::Kernel { bandwidth } if *bandwidth <= 0.0 => {
                            return Err(format!("step {} (psm): bandwidth must be > 0", i + 1))
                        }
                        _ => {}
                    }
                }
            }
            Step::Heckman(s) => {
                for v in [&s.outcome, &s.selected]
                    .into_iter()
                    .chain(s.regressors.iter())
                    .chain(s.selection_covariates.iter())
                {
                    check(v, i, "heckman")?;
                }
            }
        }
    }

    if config.output.formats.is_empty() {
        return Err("output.formats must list at least one format".into());
    }
    // THREADS caps worker parallelism; kernels are sequential, so any valid
    // value yields identical output. Reject garbage early all the same.
    if let Ok(raw) = std::env::var("THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {}
            _ => return Err(format!("THREADS must be a positive integer, got `{raw}`")),
        }
    }
    Ok(())
}

/// Minimal header read so validation does not parse the whole file.
fn read_csv_header(path: &Path) -> Result<Vec<String>, String> {
    use std::io::{BufRead, BufReader};
    let file = std::fs::File::open(path)
        .map_err(|e| format!("cannot open csv `{}`: {e}", path.display()))?;
    let mut line = String::new();
    BufReader::new(file)
        .read_line(&mut line)
        .map_err(|e| format!("cannot read csv header: {e}"))?;
    Ok(line
        .trim_end_matches(['\r', '\n'])
        .split(',')
        .map(|s| s.trim_matches('"').to_string())
        .collect())
}
