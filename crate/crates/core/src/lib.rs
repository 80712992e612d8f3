//! ivkit: a causal-inference toolkit for survey-style microdata.
//!
//! The crate covers the workflow of an instrumental-variables study end to
//! end: columnar data ingestion and descriptives, OLS/LPM, 2SLS, LIML and
//! (iterated) GMM with robust covariance, instrument diagnostics
//! (first-stage F, over-identification, endogeneity tests), one-way
//! fixed-effect absorption, propensity-score matching with balance and
//! common-support reports, the Heckman two-step selection estimator, and a
//! seedable synthetic data generator that provides ground truth for all of
//! it.
//!
//! Estimation is deterministic: fits are pure functions of (spec, data),
//! matching breaks ties by row index, and the generator is a fixed-stream
//! ChaCha8 process, so identical inputs give identical output bytes.

pub mod dataset;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod matching;
pub mod report;
pub mod selection;
pub mod simulate;

pub use dataset::{
    derive_columns, group_describe, load_csv, ColumnMeta, ColumnRole, Dataset, Schema,
    SummaryTable, Transform,
};
pub use diagnostics::{
    dwh_endogeneity_test, first_stage_f, lr_test, overid_test, significance_stars,
    OveridMethod, TestDist, TestResult,
};
pub use error::{Error, Result};
pub use estimators::{
    absorb_fixed_effects, fit_gmm, fit_liml, fit_ols, fit_tsls, robust_covariance, Absorbed,
    CovKind, FitResult, GmmIterate, Method, ModelSpec,
};
pub use matching::{
    balance_table, common_support, estimate_propensity, match_att, BalanceTable, MatchMethod,
    MatchResult, PropensityModel, SupportReport,
};
pub use selection::{fit_probit, heckman_two_step, inverse_mills, HeckmanResult};
pub use simulate::{generate, DgpConfig, GroupMeans, SelectionDgp, TruthRecord};
