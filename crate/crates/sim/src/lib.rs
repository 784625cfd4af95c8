//! Monte Carlo verification engine: subject-level trial simulation under the
//! piecewise exponential model, data cuts at calendar times or event counts,
//! weighted logrank, MaxCombo, RMST and milestone statistics, and parallel
//! replicate studies.

pub mod data;
pub mod stats;
pub use data::rng_for;
pub mod study;

pub use data::{simulate_trial, SubjectRecord, TrialDataset};
pub use stats::{
    maxcombo_pvalue, milestone_statistic, rmst_statistic, wlr_statistic, AnalysisCut, MaxComboResult,
};
pub use study::{run_study, SimReport, SimTest, StudyConfig, TestResult};
