//! Generator contracts: parameter recovery at scale, hypothesis mapping of
//! the invalidity knob, and unbiasedness when endogeneity is switched off.

mod common;

use ivkit::{
    fit_ols, fit_probit, fit_tsls, first_stage_f, generate, overid_test, DgpConfig, ModelSpec,
    OveridMethod,
};

const EXOG: [&str; 3] = ["gender", "edu", "lnincome"];

fn iv_spec() -> ModelSpec {
    ModelSpec::iv("y", &["hukou"], &["family", "child"], &EXOG)
}

/// The hukou equation is a probit in (family, child, edu, lnincome), so a
/// probit first stage recovers the configured latent-index strengths as n
/// grows: checked at n = 10^6 within 3 standard errors.
#[test]
fn first_stage_coefficients_converge_to_configured_strengths() {
    let cfg = DgpConfig::strong(1_000_000, 314);
    let (d, truth) = generate(&cfg).unwrap();
    let fit = fit_probit(
        "hukou",
        &["family".into(), "child".into(), "edu".into()],
        &d,
    )
    .unwrap();
    let targets = [
        ("family", truth.instrument_strength.0),
        ("child", truth.instrument_strength.1),
        ("edu", truth.edu_in_hukou),
        ("_cons", truth.hukou_intercept),
    ];
    for (name, target) in targets {
        let b = fit.coef_for(name).unwrap();
        let se = fit.se_for(name).unwrap();
        assert!(
            (b - target).abs() <= 3.0 * se,
            "{name}: {b} vs {target} (se {se})"
        );
    }
}

/// invalid_instrument_effect maps one-to-one onto the over-identification
/// null: zero keeps it true, non-zero makes it false.
#[test]
fn invalidity_knob_drives_the_overid_null() {
    let valid = DgpConfig::strong(20_000, 2718);
    let (d, truth) = generate(&valid).unwrap();
    assert_eq!(truth.invalid_instrument_effect, 0.0);
    let fit = fit_tsls(&iv_spec(), &d).unwrap();
    let p_valid = overid_test(&fit, OveridMethod::Score).unwrap().p_value;
    assert!(p_valid > 0.01, "valid instruments rejected: p = {p_valid}");

    let mut invalid = DgpConfig::strong(20_000, 2718);
    invalid.invalid_instrument_effect = 0.1;
    let (d, truth) = generate(&invalid).unwrap();
    assert_eq!(truth.invalid_instrument_effect, 0.1);
    let fit = fit_tsls(&iv_spec(), &d).unwrap();
    let p_invalid = overid_test(&fit, OveridMethod::Score).unwrap().p_value;
    assert!(p_invalid < 1e-6, "invalid instrument missed: p = {p_invalid}");
}

/// With rho = 0 there is no endogeneity, so OLS is unbiased and its 2-se
/// interval covers the truth at roughly the nominal rate.
#[test]
fn ols_unbiased_when_endogeneity_is_off() {
    let reps = 200;
    let mut covered = 0usize;
    for r in 0..reps {
        let mut cfg = DgpConfig::strong(5_000, 161).with_stream(r);
        cfg.rho_endog = 0.0;
        let (d, truth) = generate(&cfg).unwrap();
        let fit = fit_ols(&ModelSpec::ols("y", &["hukou", "gender", "edu", "lnincome"]), &d)
            .unwrap();
        let b = fit.coef_for("hukou").unwrap();
        let se = fit.se_for("hukou").unwrap();
        if (b - truth.beta_true).abs() <= 2.0 * se {
            covered += 1;
        }
    }
    assert!(
        covered as f64 >= 0.93 * reps as f64,
        "coverage {covered}/{reps}"
    );
}

/// Survey-scale regime: tiny first-stage R-squared with an F statistic far
/// above the weak-instrument screen.
#[test]
fn weak_r2_strong_f_regime() {
    let (d, _) = generate(&DgpConfig::weak_r2_strong_f(150_000, 13)).unwrap();
    let fit = fit_tsls(&iv_spec(), &d).unwrap();
    let first = &fit.first_stage[0];
    assert!(first.r2 < 0.02, "first-stage R2 = {}", first.r2);
    let f = &first_stage_f(&fit).unwrap()[0];
    assert!(f.statistic > 100.0, "F = {}", f.statistic);
}

/// Degenerate-arm configurations are rejected rather than emitted.
#[test]
fn degenerate_arms_are_an_error() {
    let mut cfg = DgpConfig::strong(500, 1);
    cfg.hukou_intercept = 60.0; // everyone treated
    assert!(generate(&cfg).is_err());
    cfg.hukou_intercept = -60.0; // no one treated
    assert!(generate(&cfg).is_err());
}

/// The truth sidecar reflects the configuration exactly.
#[test]
fn truth_record_mirrors_config() {
    let mut cfg = DgpConfig::with_selection(300, 77, -0.4);
    cfg.beta_true = -0.123;
    let (d, truth) = generate(&cfg).unwrap();
    assert_eq!(truth.beta_true, -0.123);
    assert_eq!(truth.att, -0.123);
    assert_eq!(truth.rho_sel, Some(-0.4));
    assert!((truth.lambda_coef.unwrap() - (-0.4 * cfg.outcome_noise_sd)).abs() < 1e-15);
    assert!(d.has_column("selected"));
    let json = serde_json::to_string(&truth).unwrap();
    assert!(json.contains("\"beta_true\":-0.123"));
}
