//! Model-implied expectations: cumulative enrollment, expected events,
//! at-risk and failure probabilities.
//!
//! Probabilities are per planned subject: the enrollment cdf `H` is the
//! cumulative enrollment divided by `G(τ_a)`. Counts are in subjects.

use crate::error::{Error, Result};
use crate::model::{Arm, TrialModel};
use crate::quad;
use serde::Serialize;

/// `G(t)`, expected number enrolled by calendar time `t`.
pub fn cumulative_enrollment(model: &TrialModel, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::TimeOutOfRange { time: t, limit: f64::INFINITY });
    }
    Ok(model.enrollment().integral(t))
}

/// Cut points of every model-implied integrand on `[0, analysis_time]`:
/// rate breakpoints plus the enrollment breakpoints seen backwards from the
/// analysis time.
pub fn model_cuts(model: &TrialModel, analysis_time: f64) -> Vec<f64> {
    let mut pts = model.rate_breakpoints();
    let enroll = model.enrollment();
    pts.extend(enroll.breakpoints().iter().map(|e| analysis_time - e));
    pts.push(analysis_time - model.enroll_duration);
    quad::cut_points(0.0, analysis_time, pts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRow {
    pub interval_start: f64,
    pub interval_end: f64,
    pub control: f64,
    pub experimental: f64,
}

/// Expected events per study-time interval at one analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedEventsBreakdown {
    pub analysis_time: f64,
    pub rows: Vec<EventRow>,
}

impl ExpectedEventsBreakdown {
    pub fn total(&self, arm: Arm) -> f64 {
        self.rows
            .iter()
            .map(|r| match arm {
                Arm::Control => r.control,
                Arm::Experimental => r.experimental,
            })
            .sum()
    }

    pub fn pooled(&self) -> f64 {
        self.total(Arm::Control) + self.total(Arm::Experimental)
    }

    /// CSV with columns `interval_start,interval_end,arm,expected_events`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval_start,interval_end,arm,expected_events\n");
        for r in &self.rows {
            for (arm, v) in [("control", r.control), ("experimental", r.experimental)] {
                out.push_str(&format!("{},{},{},{}\n", r.interval_start, r.interval_end, arm, v));
            }
        }
        out
    }
}

/// `x + expm1(-x)`, i.e. `∫_0^x (1 - e^{-v}) dv`, stable for small `x`.
fn ramp_integral(x: f64) -> f64 {
    if x < 1e-3 {
        let x2 = x * x;
        x2 * (0.5 - x / 6.0 + x2 / 24.0 - x2 * x / 120.0 + x2 * x2 / 720.0)
    } else {
        x + (-x).exp_m1()
    }
}

/// Expected events by study-time interval for both arms at `analysis_time`.
///
/// Closed form on the merged grid: subjects enrolled long enough before the
/// analysis see the whole interval, the rest are integrated against the
/// constant enrollment rate they entered under.
pub fn expected_events(model: &TrialModel, analysis_time: f64) -> Result<ExpectedEventsBreakdown> {
    if !model.strata.is_empty() {
        return Err(Error::Invalid("expected events are computed per stratum; use `stratum_model`".into()));
    }
    let tau = model.total_duration;
    if !(0.0..=tau + 1e-9).contains(&analysis_time) {
        return Err(Error::TimeOutOfRange { time: analysis_time, limit: tau });
    }
    let cuts = model_cuts(model, analysis_time);
    let enroll = model.enrollment();
    let mut cols: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (col, arm) in Arm::BOTH.iter().enumerate() {
        let hazard = model.arm_hazard(*arm);
        let dropout = model.dropout.get(*arm);
        let p = model.ratio.get(*arm);
        let mut log_q: f64 = 0.0;
        for w in cuts.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            let len = s1 - s0;
            let lambda = hazard.eval(s0);
            let eta = dropout.eval(s0);
            let rate = lambda + eta;
            let mut e = 0.0;
            if lambda > 0.0 {
                let surv = (-log_q).exp();
                let full = enroll.integral(analysis_time - s1);
                let gamma = enroll.eval(analysis_time - 0.5 * (s0 + s1));
                let d = surv * lambda / rate * -(-rate * len).exp_m1();
                let partial = gamma * surv * lambda / (rate * rate) * ramp_integral(rate * len);
                e = p * (full * d + partial);
            }
            cols[col].push(e);
            log_q += rate * len;
        }
    }
    let rows = cuts
        .windows(2)
        .enumerate()
        .map(|(i, w)| EventRow {
            interval_start: w[0],
            interval_end: w[1],
            control: cols[0][i],
            experimental: cols[1][i],
        })
        .collect();
    Ok(ExpectedEventsBreakdown { analysis_time, rows })
}

/// Total expected events in `arm` at `analysis_time`, with the breakdown.
pub fn expected_events_arm(model: &TrialModel, arm: Arm, analysis_time: f64) -> Result<(f64, ExpectedEventsBreakdown)> {
    let b = expected_events(model, analysis_time)?;
    Ok((b.total(arm), b))
}

/// Calendar time at which pooled expected events reach `target`.
pub fn time_for_events(model: &TrialModel, target: f64) -> Result<f64> {
    let tau = model.total_duration;
    let at_end = expected_events(model, tau)?.pooled();
    if target > at_end {
        return Err(Error::Infeasible(format!(
            "{target} expected events not reached by total_duration {tau} (only {at_end:.3})"
        )));
    }
    let (mut lo, mut hi) = (0.0, tau);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_events(model, mid)?.pooled() < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Event-free survival `F̄_j(t)`.
pub fn survival(model: &TrialModel, arm: Arm, t: f64) -> f64 {
    (-model.arm_hazard(arm).integral(t)).exp()
}

/// Probability of not having dropped out by `t`.
pub fn dropout_survival(model: &TrialModel, arm: Arm, t: f64) -> f64 {
    (-model.dropout.get(arm).integral(t)).exp()
}

/// Enrollment cdf `H(x) = G(min(x, τ_a)) / G(τ_a)`.
pub fn enrollment_cdf(model: &TrialModel, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    model.enrollment().integral(x) / model.planned_n()
}

fn check_time(t: f64, limit: f64) -> Result<()> {
    if !(0.0..=limit + 1e-9).contains(&t) {
        return Err(Error::TimeOutOfRange { time: t, limit });
    }
    Ok(())
}

/// Precomputed arm survival curves and enrollment for repeated evaluation
/// inside integrands.
#[derive(Debug, Clone)]
pub struct ArmCurves {
    hazard: [crate::model::PiecewiseConstant; 2],
    dropout: [crate::model::PiecewiseConstant; 2],
    enroll: crate::model::PiecewiseConstant,
    planned_n: f64,
    pub ratio: [f64; 2],
}

impl ArmCurves {
    pub fn new(model: &TrialModel) -> Self {
        Self {
            hazard: [model.arm_hazard(Arm::Control), model.arm_hazard(Arm::Experimental)],
            dropout: [model.dropout.control.clone(), model.dropout.experimental.clone()],
            enroll: model.enrollment(),
            planned_n: model.planned_n(),
            ratio: [model.ratio.control, model.ratio.experimental],
        }
    }

    fn idx(arm: Arm) -> usize {
        match arm {
            Arm::Control => 0,
            Arm::Experimental => 1,
        }
    }

    pub fn hazard(&self, arm: Arm, t: f64) -> f64 {
        self.hazard[Self::idx(arm)].eval(t)
    }

    pub fn survival(&self, arm: Arm, t: f64) -> f64 {
        (-self.hazard[Self::idx(arm)].integral(t)).exp()
    }

    pub fn dropout_survival(&self, arm: Arm, t: f64) -> f64 {
        (-self.dropout[Self::idx(arm)].integral(t)).exp()
    }

    pub fn enrollment_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.enroll.integral(x) / self.planned_n
        }
    }

    /// `π_j(t) = F̄_j(t) Ḡ_j(t) H(τ_k - t)`.
    pub fn at_risk(&self, arm: Arm, t: f64, analysis_time: f64) -> f64 {
        let i = Self::idx(arm);
        let h = self.enrollment_cdf(analysis_time - t);
        if h == 0.0 {
            return 0.0;
        }
        (-(self.hazard[i].integral(t) + self.dropout[i].integral(t))).exp() * h
    }

    /// `v_j'(t) = λ_j(t) π_j(t)`.
    pub fn event_density(&self, arm: Arm, t: f64, analysis_time: f64) -> f64 {
        let lambda = self.hazard(arm, t);
        if lambda == 0.0 {
            return 0.0;
        }
        lambda * self.at_risk(arm, t, analysis_time)
    }

    /// Pooled event density `v'(t) = Σ_j p_j λ_j π_j`.
    pub fn pooled_event_density(&self, t: f64, analysis_time: f64) -> f64 {
        self.ratio[0] * self.event_density(Arm::Control, t, analysis_time)
            + self.ratio[1] * self.event_density(Arm::Experimental, t, analysis_time)
    }
}

/// `π_j(t)` with the analysis at `analysis_time`.
pub fn at_risk_probability_at(model: &TrialModel, arm: Arm, t: f64, analysis_time: f64) -> Result<f64> {
    check_time(analysis_time, model.total_duration)?;
    check_time(t, analysis_time)?;
    Ok(ArmCurves::new(model).at_risk(arm, t, analysis_time))
}

/// `π_j(t)` at the end of the study.
pub fn at_risk_probability(model: &TrialModel, arm: Arm, t: f64) -> Result<f64> {
    at_risk_probability_at(model, arm, t, model.total_duration)
}

/// `v_j(t)`, probability of an observed event within study time `t` when the
/// data are cut at `analysis_time`.
pub fn failure_probability_at(model: &TrialModel, arm: Arm, t: f64, analysis_time: f64) -> Result<f64> {
    check_time(analysis_time, model.total_duration)?;
    check_time(t, analysis_time)?;
    let curves = ArmCurves::new(model);
    let cuts = model_cuts(model, analysis_time);
    let mut pts: Vec<f64> = cuts.into_iter().filter(|&c| c < t).collect();
    pts.push(t);
    Ok(quad::integrate_segments(|s| curves.event_density(arm, s, analysis_time), &pts))
}

/// `v_j(t)` at the end of the study.
pub fn failure_probability(model: &TrialModel, arm: Arm, t: f64) -> Result<f64> {
    failure_probability_at(model, arm, t, model.total_duration)
}

/// Pooled `v(t) = p_0 v_0(t) + p_1 v_1(t)`.
pub fn pooled_failure_probability(model: &TrialModel, t: f64) -> Result<f64> {
    Ok(model.ratio.control * failure_probability(model, Arm::Control, t)?
        + model.ratio.experimental * failure_probability(model, Arm::Experimental, t)?)
}
