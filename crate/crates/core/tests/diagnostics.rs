//! Instrument-diagnostic oracles: Monte Carlo size and power of the tests,
//! plus algebraic identities they must satisfy.

mod common;

use common::mean;
use proptest::prelude::*;

use ivkit::dataset::ColumnMeta;
use ivkit::{
    dwh_endogeneity_test, first_stage_f, fit_ols, fit_tsls, generate, lr_test, overid_test,
    significance_stars, DgpConfig, Error, ModelSpec, OveridMethod,
};

const EXOG: [&str; 3] = ["gender", "edu", "lnincome"];

fn iv_spec() -> ModelSpec {
    ModelSpec::iv("y", &["hukou"], &["family", "child"], &EXOG)
}

/// Pure-noise instruments: the joint F of the excluded instruments should
/// center on 1 and reject at roughly the nominal rate.
#[test]
fn first_stage_f_centers_on_one_for_noise_instruments() {
    let reps = 1_000;
    let mut fs = Vec::with_capacity(reps as usize);
    let mut rejections = 0usize;
    for r in 0..reps {
        let mut cfg = DgpConfig::strong(5_000, 2910).with_stream(r);
        cfg.instrument_strength = (0.0, 0.0);
        let (d, _) = generate(&cfg).unwrap();
        let fit = fit_tsls(&iv_spec(), &d).unwrap();
        let t = &first_stage_f(&fit).unwrap()[0];
        fs.push(t.statistic);
        if t.p_value < 0.05 {
            rejections += 1;
        }
    }
    let mean_f = mean(&fs);
    assert!(
        (0.8..=1.3).contains(&mean_f),
        "mean noise-instrument F = {mean_f}"
    );
    let rate = rejections as f64 / reps as f64;
    assert!(
        (0.03..=0.07).contains(&rate),
        "noise-instrument rejection rate = {rate}"
    );
}

#[test]
fn first_stage_f_clears_weak_instrument_screen_on_strong_dgp() {
    let (d, _) = generate(&DgpConfig::strong(50_000, 1)).unwrap();
    let fit = fit_tsls(&iv_spec(), &d).unwrap();
    let t = &first_stage_f(&fit).unwrap()[0];
    assert!(t.statistic > 100.0, "F = {}", t.statistic);
    assert!(t.p_value < 1e-10);
}

#[test]
fn collinear_instrument_is_named() {
    let (d, _) = generate(&DgpConfig::strong(1_000, 2)).unwrap();
    // An instrument that is an exact multiple of an exogenous control.
    let edu2: Vec<f64> = d.column("edu").unwrap().iter().map(|v| 2.0 * v).collect();
    let d = d.with_column("edu2", ColumnMeta::Continuous, edu2).unwrap();
    let err = fit_tsls(
        &ModelSpec::iv("y", &["hukou"], &["family", "edu2"], &EXOG),
        &d,
    )
    .unwrap_err();
    match err {
        Error::RankDeficient { columns } => {
            assert!(
                columns.iter().any(|c| c == "edu2" || c == "edu"),
                "unexpected columns {columns:?}"
            );
        }
        other => panic!("expected rank deficiency, got {other:?}"),
    }
}

#[test]
fn overid_df_and_just_identified_error() {
    let (d, _) = generate(&DgpConfig::strong(2_000, 3)).unwrap();
    let fit = fit_tsls(&iv_spec(), &d).unwrap();
    let t = overid_test(&fit, OveridMethod::Score).unwrap();
    match t.dist {
        ivkit::TestDist::Chi2 { df } => assert_eq!(df, 1),
        other => panic!("unexpected dist {other:?}"),
    }
    let json = serde_json::to_value(&t).unwrap();
    assert_eq!(json["dist"], "chi2");
    assert_eq!(json["df"], 1);
    assert!(json["statistic"].is_f64() && json["p_value"].is_f64());
    // Just-identified: one instrument for one endogenous regressor.
    let just = fit_tsls(&ModelSpec::iv("y", &["hukou"], &["family"], &EXOG), &d).unwrap();
    assert!(matches!(
        overid_test(&just, OveridMethod::Score).unwrap_err(),
        Error::JustIdentified
    ));
}

/// Size: valid instruments reject near the nominal 5% level. Power: an
/// instrument with a direct outcome effect of 0.1 is caught almost always.
#[test]
fn overid_score_test_size_and_power() {
    let reps = 2_000;
    let mut size_rejections = 0usize;
    let mut power_rejections = 0usize;
    for r in 0..reps {
        let cfg = DgpConfig::strong(2_000, 777).with_stream(r);
        let (d, _) = generate(&cfg).unwrap();
        let fit = fit_tsls(&iv_spec(), &d).unwrap();
        if overid_test(&fit, OveridMethod::Score).unwrap().p_value < 0.05 {
            size_rejections += 1;
        }

        let mut bad = DgpConfig::strong(2_000, 778).with_stream(r);
        bad.invalid_instrument_effect = 0.1;
        let (d, _) = generate(&bad).unwrap();
        let fit = fit_tsls(&iv_spec(), &d).unwrap();
        if overid_test(&fit, OveridMethod::Score).unwrap().p_value < 0.05 {
            power_rejections += 1;
        }
    }
    let size = size_rejections as f64 / reps as f64;
    let power = power_rejections as f64 / reps as f64;
    assert!((0.035..=0.065).contains(&size), "score test size = {size}");
    assert!(power > 0.80, "score test power = {power}");
}

/// Under exact homoskedasticity the Hansen J and Sargan statistics coincide
/// asymptotically.
#[test]
fn hansen_j_matches_sargan_under_homoskedasticity() {
    let (d, _) = generate(&DgpConfig::strong(100_000, 11)).unwrap();
    let fit = fit_tsls(&iv_spec(), &d).unwrap();
    let sargan = overid_test(&fit, OveridMethod::Sargan).unwrap().statistic;
    let hansen = overid_test(&fit, OveridMethod::HansenJ).unwrap().statistic;
    let rel = (hansen - sargan).abs() / sargan.abs().max(1e-12);
    assert!(rel < 0.05, "sargan {sargan} vs hansen {hansen} (rel {rel})");
}

/// The Sargan statistic only depends on the instrument span: mixing the
/// excluded instruments through a non-degenerate linear map leaves it
/// untouched.
#[test]
fn sargan_invariant_to_instrument_reparameterization() {
    let (d, _) = generate(&DgpConfig::strong(3_000, 17)).unwrap();
    let fam = d.column("family").unwrap();
    let chd = d.column("child").unwrap();
    // Well-conditioned 2x2 map.
    let mix1: Vec<f64> = fam.iter().zip(chd).map(|(f, c)| 1.3 * f - 0.4 * c).collect();
    let mix2: Vec<f64> = fam.iter().zip(chd).map(|(f, c)| 0.2 * f + 0.9 * c).collect();
    let d2 = d
        .with_column("mix1", ColumnMeta::Continuous, mix1)
        .unwrap()
        .with_column("mix2", ColumnMeta::Continuous, mix2)
        .unwrap();

    let base = fit_tsls(&iv_spec(), &d2).unwrap();
    let mixed = fit_tsls(&ModelSpec::iv("y", &["hukou"], &["mix1", "mix2"], &EXOG), &d2).unwrap();
    let s_base = overid_test(&base, OveridMethod::Sargan).unwrap().statistic;
    let s_mixed = overid_test(&mixed, OveridMethod::Sargan).unwrap().statistic;
    assert!(
        (s_base - s_mixed).abs() < 1e-8,
        "sargan moved: {s_base} vs {s_mixed}"
    );
    // The 2SLS point estimate shares the same invariance.
    assert!(
        (base.coef_for("hukou").unwrap() - mixed.coef_for("hukou").unwrap()).abs() < 1e-10
    );
}

/// Control-function identity: appending first-stage residuals to the
/// outcome OLS reproduces the 2SLS point estimate exactly.
#[test]
fn control_function_reproduces_tsls_estimate() {
    let (d, _) = generate(&DgpConfig::strong(5_000, 23)).unwrap();
    let iv = fit_tsls(&iv_spec(), &d).unwrap();

    let fs = fit_ols(
        &ModelSpec::ols("hukou", &["family", "child", "gender", "edu", "lnincome"]),
        &d,
    )
    .unwrap();
    let n = d.n_rows();
    let mut resid = vec![0.0; n];
    let cols: Vec<&[f64]> = ["family", "child", "gender", "edu", "lnincome"]
        .iter()
        .map(|c| d.column(c).unwrap())
        .collect();
    let hukou = d.column("hukou").unwrap();
    for i in 0..n {
        let mut fitted = fs.coef_for("_cons").unwrap();
        for (j, name) in ["family", "child", "gender", "edu", "lnincome"].iter().enumerate() {
            fitted += fs.coef_for(name).unwrap() * cols[j][i];
        }
        resid[i] = hukou[i] - fitted;
    }
    let d2 = d.with_column("fs_resid", ColumnMeta::Continuous, resid).unwrap();
    let cf = fit_ols(
        &ModelSpec::ols("y", &["hukou", "gender", "edu", "lnincome", "fs_resid"]),
        &d2,
    )
    .unwrap();
    assert!(
        (cf.coef_for("hukou").unwrap() - iv.coef_for("hukou").unwrap()).abs() < 1e-8,
        "control function {} vs 2SLS {}",
        cf.coef_for("hukou").unwrap(),
        iv.coef_for("hukou").unwrap()
    );
}

/// Size of the endogeneity test under exogeneity, power under rho = 0.3.
#[test]
fn dwh_size_and_power() {
    let reps = 600;
    let mut size_rejections = 0usize;
    for r in 0..reps {
        let mut cfg = DgpConfig::strong(2_000, 501).with_stream(r);
        cfg.rho_endog = 0.0;
        let (d, _) = generate(&cfg).unwrap();
        if dwh_endogeneity_test(&iv_spec(), &d).unwrap().p_value < 0.05 {
            size_rejections += 1;
        }
    }
    let size = size_rejections as f64 / reps as f64;
    assert!((0.025..=0.080).contains(&size), "DWH size = {size}");

    let reps = 200;
    let mut strong_rejections = 0usize;
    for r in 0..reps {
        let cfg = DgpConfig::strong(50_000, 502).with_stream(r);
        let (d, _) = generate(&cfg).unwrap();
        if dwh_endogeneity_test(&iv_spec(), &d).unwrap().p_value < 0.01 {
            strong_rejections += 1;
        }
    }
    assert!(
        strong_rejections as f64 >= 0.95 * reps as f64,
        "DWH power {strong_rejections}/{reps}"
    );
}

#[test]
fn star_rendering_follows_strict_thresholds() {
    assert_eq!(significance_stars(0.1872).unwrap(), "");
    assert_eq!(significance_stars(0.004).unwrap(), "***");
    assert_eq!(significance_stars(0.05).unwrap(), "*");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    /// p-values are monotone decreasing in the statistic for a fixed df.
    #[test]
    fn chi2_p_monotone_in_statistic(a in 0.01f64..40.0, delta in 0.01f64..10.0, df in 1usize..6) {
        let p_lo = lr_test(0.0, a / 2.0, df).unwrap().p_value;
        let p_hi = lr_test(0.0, (a + delta) / 2.0, df).unwrap().p_value;
        prop_assert!(p_hi < p_lo);
    }

    /// Stars never contradict the p-value ordering.
    #[test]
    fn stars_are_monotone(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
        let rank = |s: &str| match s { "***" => 3, "**" => 2, "*" => 1, _ => 0 };
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        prop_assert!(rank(significance_stars(lo).unwrap()) >= rank(significance_stars(hi).unwrap()));
    }
}
