//! Reference scenarios: two-arm trials with a common 2-year benefit
//! (35% vs 25% survival at 24 months) under proportional, delayed and
//! crossing hazards, plus a weak and a strong null.
//!
//! Control is exponential with a 12-month median for the first two years;
//! enrollment runs 12 months; the trial lasts 36 months; dropout is 0.001
//! per month in both arms. Post-change hazard ratios are solved so that the
//! experimental cumulative hazard at 24 months is `-ln 0.35`. Event rates
//! after month 24 follow [`LateHazard`].

use crate::model::{ArmDropout, PiecewiseConstant, Randomization, TrialModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Ph,
    Delay3,
    Delay6,
    Crossing,
    WeakNull,
    StrongNull,
}

/// Control rate multiplier after month 24 in the default late-hazard
/// convention.
pub const LATE_RATE_FACTOR: f64 = 0.35;

/// Event rates after month 24.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LateHazard {
    /// The month-24 hazard ratio and the control rate simply continue.
    Continue,
    /// From month 24 the hazard ratio equals the 24-month cumulative hazard
    /// ratio, so the cumulative ratio at 36 months is unchanged. Control
    /// stays exponential.
    CumulativeRatio,
    /// As `CumulativeRatio`, with both arms' rates multiplied by `factor`
    /// from month 24 (null scenarios included).
    Lower { factor: f64 },
}

impl Default for LateHazard {
    fn default() -> Self {
        LateHazard::Lower { factor: LATE_RATE_FACTOR }
    }
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Ph,
        Scenario::Delay3,
        Scenario::Delay6,
        Scenario::Crossing,
        Scenario::WeakNull,
        Scenario::StrongNull,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scenario::Ph => "PH",
            Scenario::Delay3 => "3-month delay",
            Scenario::Delay6 => "6-month delay",
            Scenario::Crossing => "Crossing",
            Scenario::WeakNull => "Weak null",
            Scenario::StrongNull => "Strong null",
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Scenario::WeakNull | Scenario::StrongNull)
    }

    /// Hazard ratio path as (breakpoints, values).
    pub fn hazard_ratio(&self, late: LateHazard) -> PiecewiseConstant {
        let ph = cumulative_hr_24();
        // ratio after an early phase of `len` months at ratio `early`
        let after = |len: f64, early: f64| (24.0 * ph - early * len) / (24.0 - len);
        let (bp, mut v): (Vec<f64>, Vec<f64>) = match self {
            Scenario::Ph => (vec![0.0], vec![ph]),
            Scenario::Delay3 => (vec![0.0, 3.0], vec![1.0, after(3.0, 1.0)]),
            Scenario::Delay6 => (vec![0.0, 6.0], vec![1.0, after(6.0, 1.0)]),
            Scenario::Crossing => (vec![0.0, 3.0], vec![1.3, after(3.0, 1.3)]),
            Scenario::WeakNull => (vec![0.0], vec![1.0]),
            Scenario::StrongNull => (vec![0.0, 3.0, 6.0], vec![1.5, 0.5, 1.0]),
        };
        let mut bp = bp;
        if late != LateHazard::Continue && !self.is_null() {
            bp.push(24.0);
            v.push(ph);
        }
        PiecewiseConstant::new(bp, v).expect("static scenario definition")
    }

    /// Trial model enrolling `n` subjects.
    pub fn model(&self, n: f64, late: LateHazard) -> TrialModel {
        TrialModel {
            enroll_rate: PiecewiseConstant::constant(n / 12.0),
            control_hazard: match late {
                LateHazard::Lower { factor } => {
                    PiecewiseConstant::new(vec![0.0, 24.0], vec![control_rate(), factor * control_rate()])
                        .expect("late rate factor must be finite and non-negative")
                }
                _ => PiecewiseConstant::constant(control_rate()),
            },
            hazard_ratio: self.hazard_ratio(late),
            dropout: ArmDropout::equal(PiecewiseConstant::constant(0.001)),
            ratio: Randomization::EQUAL,
            enroll_duration: 12.0,
            total_duration: 36.0,
            strata: vec![],
        }
    }
}

/// Exponential control with a 12-month median.
pub fn control_rate() -> f64 {
    std::f64::consts::LN_2 / 12.0
}

/// `ln 0.35 / ln 0.25`: the proportional-hazards ratio giving 35% vs 25%
/// survival at 24 months.
pub fn cumulative_hr_24() -> f64 {
    0.35f64.ln() / 0.25f64.ln()
}

/// The delayed-effect example: 500/12 per month for 12 months, median 15
/// months on control, no effect for 4 months then HR 0.6, dropout 0.001,
/// 36-month trial.
pub fn delayed_effect_example() -> TrialModel {
    TrialModel {
        enroll_rate: PiecewiseConstant::constant(500.0 / 12.0),
        control_hazard: PiecewiseConstant::constant(std::f64::consts::LN_2 / 15.0),
        hazard_ratio: PiecewiseConstant::new(vec![0.0, 4.0], vec![1.0, 0.6]).unwrap(),
        dropout: ArmDropout::equal(PiecewiseConstant::constant(0.001)),
        ratio: Randomization::EQUAL,
        enroll_duration: 12.0,
        total_duration: 36.0,
        strata: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expect::survival;
    use crate::model::Arm;
    use approx::assert_relative_eq;

    #[test]
    fn common_two_year_survival() {
        for s in [Scenario::Ph, Scenario::Delay3, Scenario::Delay6, Scenario::Crossing] {
            for late in [LateHazard::Continue, LateHazard::CumulativeRatio, LateHazard::default()] {
                let m = s.model(698.0, late);
                assert_relative_eq!(survival(&m, Arm::Control, 24.0), 0.25, max_relative = 1e-12);
                assert_relative_eq!(survival(&m, Arm::Experimental, 24.0), 0.35, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn strong_null_equalizes_by_six_months() {
        let m = Scenario::StrongNull.model(698.0, LateHazard::Continue);
        assert_relative_eq!(survival(&m, Arm::Control, 6.0), survival(&m, Arm::Experimental, 6.0), max_relative = 1e-12);
        assert!(survival(&m, Arm::Experimental, 3.0) < survival(&m, Arm::Control, 3.0));
    }

    #[test]
    fn control_median_is_twelve() {
        let m = Scenario::Crossing.model(100.0, LateHazard::Continue);
        assert_relative_eq!(survival(&m, Arm::Control, 12.0), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn cumulative_ratio_held_to_month_36() {
        for s in [Scenario::Delay3, Scenario::Delay6, Scenario::Crossing] {
            for late in [LateHazard::CumulativeRatio, LateHazard::default()] {
                let m = s.model(698.0, late);
                let r = survival(&m, Arm::Experimental, 36.0).ln() / survival(&m, Arm::Control, 36.0).ln();
                assert_relative_eq!(r, cumulative_hr_24(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn lower_late_rates() {
        let m = Scenario::WeakNull.model(698.0, LateHazard::default());
        let s36 = 0.25 * (-LATE_RATE_FACTOR * control_rate() * 12.0).exp();
        assert_relative_eq!(survival(&m, Arm::Control, 36.0), s36, max_relative = 1e-12);
        assert_relative_eq!(survival(&m, Arm::Experimental, 36.0), s36, max_relative = 1e-12);
    }
}
