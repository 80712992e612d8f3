//! Seedable synthetic data generator with survey-style columns (hukou,
//! family, child, controls, city) and known ground truth, used to validate
//! every estimator and test in the crate.
//!
//! The generator is built around a latent-index design: hukou is an
//! indicator of a Gaussian latent index in the instruments, so a probit
//! first stage is correctly specified and the LPM first stage is an
//! approximation. `instrument_strength` is therefore calibrated on the
//! latent-index (probit) scale. The hukou index noise is correlated with
//! the outcome error at `rho_endog`, which is exactly the endogeneity the
//! IV estimators exist to remove.
//!
//! Randomness comes from ChaCha8, a named portable stream cipher RNG.
//! Replication batches should reuse one seed and vary `stream`; ChaCha
//! streams with the same key are independent by construction, so parallel
//! batches stay reproducible and merge-order independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnMeta, Dataset};
use crate::error::{Error, Result};

/// Per-arm means of (family, child): agricultural vs non-agricultural.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupMeans {
    pub agricultural: (f64, f64),
    pub non_agricultural: (f64, f64),
}

impl Default for GroupMeans {
    fn default() -> Self {
        GroupMeans {
            agricultural: (3.18, 1.31),
            non_agricultural: (2.91, 1.06),
        }
    }
}

/// Optional selection layer for sample-selection experiments.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionDgp {
    /// Correlation between the selection noise and the outcome error.
    pub rho_sel: f64,
    pub intercept: f64,
    pub on_hukou: f64,
    pub on_edu: f64,
    pub on_lnincome: f64,
    pub on_lnhoscost: f64,
}

impl Default for SelectionDgp {
    fn default() -> Self {
        SelectionDgp {
            rho_sel: -0.5,
            intercept: -2.7,
            on_hukou: 0.8,
            on_edu: 0.05,
            on_lnincome: 0.3,
            on_lnhoscost: -0.1,
        }
    }
}

/// Parameters of the synthetic data-generating process.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    pub seed: u64,
    /// ChaCha stream id; vary per replication batch, keep the seed fixed.
    pub stream: u64,
    /// Treatment effect of hukou on the outcome.
    pub beta_true: f64,
    /// Correlation between the hukou index noise and the outcome error.
    pub rho_endog: f64,
    /// Latent-index coefficients of (family, child) in the hukou equation.
    pub instrument_strength: (f64, f64),
    pub group_means: GroupMeans,
    /// Direct child -> outcome effect; non-zero makes the over-id null false.
    pub invalid_instrument_effect: f64,
    pub selection: Option<SelectionDgp>,
    /// Latent share of the agricultural arm.
    pub agricultural_share: f64,
    pub hukou_intercept: f64,
    /// Exogenous control (edu) loading in the hukou index.
    pub edu_in_hukou: f64,
    /// Exogenous control (lnincome) loading in the hukou index.
    pub lnincome_in_hukou: f64,
    pub outcome_noise_sd: f64,
    /// Heteroskedasticity strength: the outcome noise sd is scaled by
    /// 1 + h * ((edu - 10.38)/3.43)^2, so 0 keeps errors homoskedastic.
    pub heteroskedasticity: f64,
    pub n_cities: usize,
    pub city_effect_sd: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            n: 10_000,
            seed: 1,
            stream: 0,
            beta_true: -0.2,
            rho_endog: 0.3,
            instrument_strength: (-0.35, -0.5),
            group_means: GroupMeans::default(),
            invalid_instrument_effect: 0.0,
            selection: None,
            agricultural_share: 0.8,
            hukou_intercept: 0.55,
            edu_in_hukou: 0.02,
            lnincome_in_hukou: 0.0,
            outcome_noise_sd: 0.3,
            heteroskedasticity: 0.0,
            n_cities: 30,
            city_effect_sd: 0.1,
        }
    }
}

impl DgpConfig {
    /// Strong-instrument, endogenous (rho = 0.3) configuration.
    pub fn strong(n: usize, seed: u64) -> Self {
        DgpConfig { n, seed, ..DgpConfig::default() }
    }

    /// Selection-on-observables configuration for matching experiments:
    /// no unobserved confounding, treatment driven by observed covariates.
    pub fn selection_on_observables(n: usize, seed: u64) -> Self {
        DgpConfig {
            n,
            seed,
            beta_true: -0.07,
            rho_endog: 0.0,
            edu_in_hukou: 0.03,
            lnincome_in_hukou: 0.55,
            hukou_intercept: -4.04,
            city_effect_sd: 0.0,
            outcome_noise_sd: 0.10,
            ..DgpConfig::default()
        }
    }

    /// Sample-selection configuration for Heckman experiments.
    pub fn with_selection(n: usize, seed: u64, rho_sel: f64) -> Self {
        DgpConfig {
            n,
            seed,
            beta_true: -0.08,
            rho_endog: 0.0,
            selection: Some(SelectionDgp { rho_sel, ..SelectionDgp::default() }),
            city_effect_sd: 0.0,
            ..DgpConfig::default()
        }
    }

    /// Tiny first-stage R-squared with a large-sample F far above the
    /// weak-instrument screen: the survey-scale regime.
    pub fn weak_r2_strong_f(n: usize, seed: u64) -> Self {
        DgpConfig {
            n,
            seed,
            instrument_strength: (-0.05, -0.08),
            ..DgpConfig::default()
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::InvalidParam(format!("n = {} below minimum 100", self.n)));
        }
        if !(-1.0 < self.rho_endog && self.rho_endog < 1.0) {
            return Err(Error::InvalidParam(format!(
                "rho_endog = {} outside (-1, 1)",
                self.rho_endog
            )));
        }
        if let Some(sel) = &self.selection {
            if !(-1.0 < sel.rho_sel && sel.rho_sel < 1.0) {
                return Err(Error::InvalidParam(format!(
                    "rho_sel = {} outside (-1, 1)",
                    sel.rho_sel
                )));
            }
        }
        if !(0.0 < self.agricultural_share && self.agricultural_share < 1.0) {
            return Err(Error::InvalidParam("agricultural_share outside (0, 1)".into()));
        }
        if self.n_cities == 0 {
            return Err(Error::InvalidParam("n_cities must be positive".into()));
        }
        Ok(())
    }
}

/// Exact generator parameters echoed next to each dataset.
#[derive(Debug, Clone, Serialize)]
pub struct TruthRecord {
    pub beta_true: f64,
    /// Homogeneous effect, so the ATT equals beta.
    pub att: f64,
    pub alpha: f64,
    pub gamma_gender: f64,
    pub gamma_edu: f64,
    pub gamma_lnincome: f64,
    pub rho_endog: f64,
    pub instrument_strength: (f64, f64),
    pub edu_in_hukou: f64,
    pub lnincome_in_hukou: f64,
    pub hukou_intercept: f64,
    pub invalid_instrument_effect: f64,
    pub outcome_noise_sd: f64,
    /// rho_sel * outcome_noise_sd: the Mills coefficient a Heckman fit
    /// should recover (present when a selection layer is configured).
    pub lambda_coef: Option<f64>,
    pub rho_sel: Option<f64>,
    pub seed: u64,
    pub stream: u64,
}

const ALPHA: f64 = 0.3;
const GAMMA_GENDER: f64 = -0.03;
const GAMMA_EDU: f64 = 0.036;
const GAMMA_LNINCOME: f64 = 0.06;
const FAMILY_SD: f64 = 1.1;
const CHILD_SD: f64 = 0.85;

/// Marsaglia polar Gaussian sampler over a ChaCha stream.
struct Gauss {
    spare: Option<f64>,
}

impl Gauss {
    fn new() -> Self {
        Gauss { spare: None }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        loop {
            let u = 2.0 * rng.random::<f64>() - 1.0;
            let v = 2.0 * rng.random::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }
}

/// Generate one synthetic dataset plus its ground truth. Identical configs
/// (seed and stream included) produce bitwise-identical output.
pub fn generate(cfg: &DgpConfig) -> Result<(Dataset, TruthRecord)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.stream);
    let mut gauss = Gauss::new();
    let n = cfg.n;

    let city_effects: Vec<f64> = (0..cfg.n_cities)
        .map(|_| cfg.city_effect_sd * gauss.next(&mut rng))
        .collect();

    let mut hukou = Vec::with_capacity(n);
    let mut family = Vec::with_capacity(n);
    let mut child = Vec::with_capacity(n);
    let mut gender = Vec::with_capacity(n);
    let mut edu = Vec::with_capacity(n);
    let mut lnincome = Vec::with_capacity(n);
    let mut lnhoscost = Vec::with_capacity(n);
    let mut city = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut selected = Vec::with_capacity(n);

    let (s_family, s_child) = cfg.instrument_strength;
    for _ in 0..n {
        let rural = rng.random::<f64>() < cfg.agricultural_share;
        let (fam_mean, child_mean) = if rural {
            cfg.group_means.agricultural
        } else {
            cfg.group_means.non_agricultural
        };
        let fam = (fam_mean + FAMILY_SD * gauss.next(&mut rng)).round().clamp(1.0, 12.0);
        let chd = (child_mean + CHILD_SD * gauss.next(&mut rng)).round().clamp(0.0, 9.0);
        let gen = f64::from(rng.random::<f64>() < 0.512);
        let ed = (10.38 + 3.43 * gauss.next(&mut rng)).round().clamp(0.0, 19.0);
        let linc = 8.76 + 0.69 * gauss.next(&mut rng);
        let lhos = (4.89 + 3.1 * gauss.next(&mut rng)).max(0.0);
        let ct = ((rng.random::<f64>() * cfg.n_cities as f64) as usize).min(cfg.n_cities - 1);

        // Shared shock gives corr(outcome error, hukou noise) = rho_endog.
        let zu = gauss.next(&mut rng);
        let zv = gauss.next(&mut rng);
        let v = cfg.rho_endog * zu + (1.0 - cfg.rho_endog * cfg.rho_endog).sqrt() * zv;
        let edu_z = (ed - 10.38) / 3.43;
        let noise_scale = 1.0 + cfg.heteroskedasticity * edu_z * edu_z;
        let u_err = cfg.outcome_noise_sd * noise_scale * zu;

        let index = cfg.hukou_intercept
            + s_family * fam
            + s_child * chd
            + cfg.edu_in_hukou * ed
            + cfg.lnincome_in_hukou * linc
            + v;
        let hk = f64::from(index > 0.0);

        let y = ALPHA
            + cfg.beta_true * hk
            + GAMMA_GENDER * gen
            + GAMMA_EDU * ed
            + GAMMA_LNINCOME * linc
            + cfg.invalid_instrument_effect * chd
            + city_effects[ct]
            + u_err;

        let (sel, y_obs) = match &cfg.selection {
            None => (1.0, y),
            Some(s) => {
                let zeta = gauss.next(&mut rng);
                let eta = s.rho_sel * zu + (1.0 - s.rho_sel * s.rho_sel).sqrt() * zeta;
                let sel_index = s.intercept
                    + s.on_hukou * hk
                    + s.on_edu * ed
                    + s.on_lnincome * linc
                    + s.on_lnhoscost * lhos
                    + eta;
                let flag = f64::from(sel_index > 0.0);
                (flag, y * flag)
            }
        };

        hukou.push(hk);
        family.push(fam);
        child.push(chd);
        gender.push(gen);
        edu.push(ed);
        lnincome.push(linc);
        lnhoscost.push(lhos);
        city.push(ct as f64);
        outcome.push(y_obs);
        selected.push(sel);
    }

    let treated = hukou.iter().filter(|&&h| h == 1.0).count();
    if treated == 0 || treated == n {
        return Err(Error::InvalidParam(format!(
            "degenerate hukou arms: {treated} of {n} rows treated"
        )));
    }

    let mut cols = vec![
        ("hukou".to_string(), ColumnMeta::Binary, hukou),
        ("family".to_string(), ColumnMeta::Continuous, family),
        ("child".to_string(), ColumnMeta::Continuous, child),
        ("gender".to_string(), ColumnMeta::Binary, gender),
        ("edu".to_string(), ColumnMeta::Continuous, edu),
        ("lnincome".to_string(), ColumnMeta::Continuous, lnincome),
        ("lnhoscost".to_string(), ColumnMeta::Continuous, lnhoscost),
        (
            "city".to_string(),
            ColumnMeta::Categorical { levels: cfg.n_cities },
            city,
        ),
        ("y".to_string(), ColumnMeta::Continuous, outcome),
    ];
    if cfg.selection.is_some() {
        cols.push(("selected".to_string(), ColumnMeta::Binary, selected));
    }
    let data = Dataset::from_columns(cols)?;

    let truth = TruthRecord {
        beta_true: cfg.beta_true,
        att: cfg.beta_true,
        alpha: ALPHA,
        gamma_gender: GAMMA_GENDER,
        gamma_edu: GAMMA_EDU,
        gamma_lnincome: GAMMA_LNINCOME,
        rho_endog: cfg.rho_endog,
        instrument_strength: cfg.instrument_strength,
        edu_in_hukou: cfg.edu_in_hukou,
        lnincome_in_hukou: cfg.lnincome_in_hukou,
        hukou_intercept: cfg.hukou_intercept,
        invalid_instrument_effect: cfg.invalid_instrument_effect,
        outcome_noise_sd: cfg.outcome_noise_sd,
        lambda_coef: cfg.selection.as_ref().map(|s| s.rho_sel * cfg.outcome_noise_sd),
        rho_sel: cfg.selection.as_ref().map(|s| s.rho_sel),
        seed: cfg.seed,
        stream: cfg.stream,
    };
    Ok((data, truth))
}
