//! Group sequential design for time-to-event trials under non-proportional
//! hazards.
//!
//! The crate covers the design-time pipeline end to end: a piecewise
//! enrollment / hazard / dropout model ([`model`]), model-implied expected
//! counts and at-risk probabilities ([`expect`]), weighted logrank moments
//! ([`wlr`]), average hazard ratio and statistical information ([`ahr`]),
//! joint distributions of the test statistics together with the crossing
//! probability integrators ([`dist`]), and spending-function bounds, power and
//! sample size ([`design`]). Reference scenarios with delayed, crossing and
//! null effects live in [`scenario`].
//!
//! All times are in months.

pub mod ahr;
pub mod design;
pub mod dist;
pub mod error;
pub mod expect;
pub mod model;
pub mod normal;
pub mod quad;
pub mod scenario;
pub mod wlr;

pub use error::{Error, Result};
pub use model::{
    AnalysisSchedule, Arm, ArmDropout, PiecewiseConstant, Randomization, TestSpec, TrialModel,
    WeightSpec,
};
