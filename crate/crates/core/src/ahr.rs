//! Average hazard ratio: the information-weighted geometric mean of the
//! piecewise hazard ratios, its statistical information, the weighted
//! logrank analogue and the piecewise weight that links the two.
//!
//! Log hazard ratios are experimental over control, so benefit gives a
//! negative `log_ahr`. The drift of the canonical logrank sequence is
//! `θ = -log_ahr`.

use crate::error::{Error, Result};
use crate::expect::{expected_events, model_cuts, ArmCurves};
use crate::model::{Arm, PiecewiseConstant, TrialModel, WeightSpec};
use crate::quad;
use crate::wlr::WeightFn;
use serde::Serialize;

/// One interval of constant control and experimental hazard in one stratum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AhrInterval {
    pub stratum: usize,
    pub start: f64,
    pub end: f64,
    pub hazard_control: f64,
    pub hazard_experimental: f64,
    pub log_hr: f64,
    pub weight: f64,
    pub events_control: f64,
    pub events_experimental: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AhrResult {
    pub analysis_time: f64,
    pub log_ahr: f64,
    pub ahr: f64,
    pub info_h0: f64,
    pub info_h1: f64,
    pub events: f64,
    pub per_interval: Vec<AhrInterval>,
}

impl AhrResult {
    /// Drift of the canonical logrank sequence, positive under benefit.
    pub fn theta(&self) -> f64 {
        -self.log_ahr
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "stratum,start,end,hazard_control,hazard_experimental,log_hr,weight,events_control,events_experimental\n",
        );
        for r in &self.per_interval {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.stratum,
                r.start,
                r.end,
                r.hazard_control,
                r.hazard_experimental,
                r.log_hr,
                r.weight,
                r.events_control,
                r.events_experimental
            ));
        }
        out
    }
}

/// Expected events per arm on maximal intervals of constant
/// `(λ_0, λ_1)` for a single-stratum model.
fn hazard_intervals(model: &TrialModel, analysis_time: f64, stratum: usize) -> Result<Vec<AhrInterval>> {
    let table = expected_events(model, analysis_time)?;
    let h0 = model.arm_hazard(Arm::Control);
    let h1 = model.arm_hazard(Arm::Experimental);
    let mut out: Vec<AhrInterval> = Vec::new();
    for r in &table.rows {
        let (l0, l1) = (h0.eval(r.interval_start), h1.eval(r.interval_start));
        if let Some(last) = out.last_mut() {
            if last.hazard_control == l0 && last.hazard_experimental == l1 {
                last.end = r.interval_end;
                last.events_control += r.control;
                last.events_experimental += r.experimental;
                continue;
            }
        }
        out.push(AhrInterval {
            stratum,
            start: r.interval_start,
            end: r.interval_end,
            hazard_control: l0,
            hazard_experimental: l1,
            log_hr: 0.0,
            weight: 0.0,
            events_control: r.control,
            events_experimental: r.experimental,
        });
    }
    for iv in &mut out {
        iv.log_hr = if iv.hazard_control > 0.0 && iv.hazard_experimental > 0.0 {
            (iv.hazard_experimental / iv.hazard_control).ln()
        } else if iv.hazard_control == iv.hazard_experimental {
            0.0
        } else {
            return Err(Error::UndefinedLogHr { start: iv.start, end: iv.end });
        };
    }
    Ok(out)
}

fn harmonic_info(d0: f64, d1: f64) -> f64 {
    if d0 > 0.0 && d1 > 0.0 {
        d0 * d1 / (d0 + d1)
    } else {
        0.0
    }
}

/// Average hazard ratio at `analysis_time`, summed over strata.
///
/// Interval weights are the alternative-hypothesis Fisher information
/// `[1/E(d_0) + 1/E(d_1)]^{-1}`; `info_h1` is their sum and `info_h0`
/// is `p_0 p_1 Σ E(d)`.
pub fn ahr_lr(model: &TrialModel, analysis_time: f64) -> Result<AhrResult> {
    let mut rows = Vec::new();
    for (j, s) in model.strata_or_self().iter().enumerate() {
        rows.extend(hazard_intervals(&model.stratum_model(s), analysis_time, j)?);
    }
    let info_h1: f64 = rows.iter().map(|r| harmonic_info(r.events_control, r.events_experimental)).sum();
    if !(info_h1 > 0.0) {
        return Err(Error::Degenerate(format!(
            "no interval has expected events in both arms before analysis time {analysis_time}"
        )));
    }
    let mut log_ahr = 0.0;
    for r in &mut rows {
        r.weight = harmonic_info(r.events_control, r.events_experimental) / info_h1;
        log_ahr += r.weight * r.log_hr;
    }
    let events: f64 = rows.iter().map(|r| r.events_control + r.events_experimental).sum();
    let [p0, p1] = [model.ratio.get(Arm::Control), model.ratio.get(Arm::Experimental)];
    Ok(AhrResult {
        analysis_time,
        log_ahr,
        ahr: log_ahr.exp(),
        info_h0: p0 * p1 * events,
        info_h1,
        events,
        per_interval: rows,
    })
}

/// Interval-level counts from observed data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalData {
    pub events_control: f64,
    pub exposure_control: f64,
    pub events_experimental: f64,
    pub exposure_experimental: f64,
}

/// Inverse-variance weighted log hazard ratio from per-interval event
/// counts and exposure, with its variance. Intervals lacking events in
/// either arm get zero weight.
pub fn estimate_ahr(data: &[IntervalData]) -> Result<(f64, f64)> {
    let mut info = 0.0;
    let mut acc = 0.0;
    for (m, r) in data.iter().enumerate() {
        if r.events_control < 0.0 || r.events_experimental < 0.0 {
            return Err(Error::Invalid(format!("interval {m}: negative event count")));
        }
        if !(r.exposure_control > 0.0 && r.exposure_experimental > 0.0) {
            return Err(Error::Invalid(format!("interval {m}: exposure must be positive")));
        }
        let i = harmonic_info(r.events_control, r.events_experimental);
        if i > 0.0 {
            let phi = (r.events_experimental / r.exposure_experimental).ln()
                - (r.events_control / r.exposure_control).ln();
            info += i;
            acc += i * phi;
        }
    }
    if info == 0.0 {
        return Err(Error::Degenerate("no interval has events in both arms".into()));
    }
    Ok((acc / info, 1.0 / info))
}

fn check_single_stratum(model: &TrialModel) -> Result<()> {
    if model.strata.len() > 1 {
        return Err(Error::Invalid("weighted logrank average hazard ratio is single-stratum only".into()));
    }
    Ok(())
}

/// `∫ w a_0 a_1/π² log(λ_1/λ_0) dv` and `∫ w a_0 a_1/π² dv` with
/// `a_j = p_j π_j`.
fn wlr_log_moments(model: &TrialModel, w: &dyn Fn(f64) -> f64, analysis_time: f64, cuts: Vec<f64>) -> Result<(f64, f64)> {
    let c = ArmCurves::new(model);
    let [p0, p1] = c.ratio;
    let kernel = |s: f64| {
        let a0 = p0 * c.at_risk(Arm::Control, s, analysis_time);
        let a1 = p1 * c.at_risk(Arm::Experimental, s, analysis_time);
        let pi = a0 + a1;
        if pi <= 0.0 {
            return (0.0, 0.0);
        }
        let (l0, l1) = (c.hazard(Arm::Control, s), c.hazard(Arm::Experimental, s));
        let base = w(s) * a0 * a1 / (pi * pi) * (a0 * l0 + a1 * l1);
        let log_hr = if l0 == l1 { 0.0 } else { (l1 / l0).ln() };
        (base * log_hr, base)
    };
    let mut pts = model_cuts(model, analysis_time);
    pts.extend(cuts);
    let pts = quad::cut_points(0.0, analysis_time, pts);
    let num = quad::integrate_segments(|s| kernel(s).0, &pts);
    let den = quad::integrate_segments(|s| kernel(s).1, &pts);
    if !(den > 0.0) {
        return Err(Error::Degenerate(format!("zero weighted information at analysis time {analysis_time}")));
    }
    if !num.is_finite() {
        return Err(Error::UndefinedLogHr { start: 0.0, end: analysis_time });
    }
    Ok((num, den))
}

/// Log average hazard ratio implied by a weighted logrank test (first
/// order expansion of the drift in the log hazard ratio).
pub fn ahr_wlr(model: &TrialModel, spec: WeightSpec, analysis_time: f64) -> Result<f64> {
    check_single_stratum(model)?;
    let w = WeightFn::new(spec, model)?;
    let (num, den) = wlr_log_moments(model, &|s| w.eval(s), analysis_time, spec.kinks())?;
    Ok(num / den)
}

/// As [`ahr_wlr`] with an arbitrary piecewise constant weight.
pub fn ahr_wlr_piecewise(model: &TrialModel, weight: &PiecewiseConstant, analysis_time: f64) -> Result<f64> {
    check_single_stratum(model)?;
    let (num, den) = wlr_log_moments(model, &|s| weight.eval(s), analysis_time, weight.breakpoints().to_vec())?;
    Ok(num / den)
}

/// Piecewise constant weight under which [`ahr_wlr_piecewise`] reproduces
/// [`ahr_lr`]: on each interval the logrank information weight divided by
/// the weighted-logrank information density. Scaled to a maximum of 1.
pub fn bridge_weight(model: &TrialModel, analysis_time: f64) -> Result<PiecewiseConstant> {
    check_single_stratum(model)?;
    let single = match model.strata.first() {
        Some(s) => model.stratum_model(s),
        None => model.clone(),
    };
    let lr = ahr_lr(&single, analysis_time)?;
    let c = ArmCurves::new(&single);
    let [p0, p1] = c.ratio;
    let density = |s: f64| {
        let a0 = p0 * c.at_risk(Arm::Control, s, analysis_time);
        let a1 = p1 * c.at_risk(Arm::Experimental, s, analysis_time);
        let pi = a0 + a1;
        if pi <= 0.0 {
            return 0.0;
        }
        a0 * a1 / (pi * pi) * (a0 * c.hazard(Arm::Control, s) + a1 * c.hazard(Arm::Experimental, s))
    };
    let cuts = model_cuts(&single, analysis_time);
    let mut bp = Vec::new();
    let mut vals = Vec::new();
    for r in &lr.per_interval {
        let pts: Vec<f64> = std::iter::once(r.start)
            .chain(cuts.iter().copied().filter(|&x| x > r.start && x < r.end))
            .chain(std::iter::once(r.end))
            .collect();
        let a = quad::integrate_segments(density, &pts);
        let v = if r.weight > 0.0 {
            if !(a > 0.0) {
                return Err(Error::Degenerate(format!(
                    "interval [{}, {}) has events but no weighted information",
                    r.start, r.end
                )));
            }
            r.weight / a
        } else {
            0.0
        };
        bp.push(r.start);
        vals.push(v);
    }
    let max = vals.iter().cloned().fold(0.0, f64::max);
    PiecewiseConstant::new(bp, vals.iter().map(|v| v / max).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArmDropout, Randomization, Stratum};
    use crate::scenario::{delayed_effect_example, LateHazard, Scenario};
    use approx::assert_relative_eq;

    #[test]
    fn constant_hr_is_recovered() {
        for t in [6.0, 20.0, 36.0] {
            let m = Scenario::Ph.model(500.0, LateHazard::Continue);
            let r = ahr_lr(&m, t).unwrap();
            assert_relative_eq!(r.ahr, crate::scenario::cumulative_hr_24(), max_relative = 1e-12);
            assert_relative_eq!(
                ahr_wlr(&m, WeightSpec::Fh { p: 0.0, q: 0.5 }, t).unwrap(),
                r.log_ahr,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn delayed_example_trajectory() {
        let m = delayed_effect_example();
        let want = [0.84, 0.74, 0.70, 0.68];
        for (t, w) in [12.0, 20.0, 28.0, 36.0].iter().zip(want) {
            let r = ahr_lr(&m, *t).unwrap();
            assert!((r.ahr - w).abs() < 0.005, "t={t}: {}", r.ahr);
            let sum: f64 = r.per_interval.iter().map(|i| i.weight).sum();
            assert_relative_eq!(sum, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn estimate_hand_values() {
        let one = IntervalData { events_control: 50.0, exposure_control: 100.0, events_experimental: 50.0, exposure_experimental: 100.0 };
        let (phi, var) = estimate_ahr(&[one]).unwrap();
        assert_eq!(phi, 0.0);
        assert_relative_eq!(var, 1.0 / 25.0, max_relative = 1e-14);
        let two = IntervalData { events_control: 40.0, exposure_control: 400.0, events_experimental: 20.0, exposure_experimental: 420.0 };
        let (phi, var) = estimate_ahr(&[two]).unwrap();
        assert_relative_eq!(phi, (20.0f64 / 420.0).ln() - (0.1f64).ln(), max_relative = 1e-14);
        assert_relative_eq!(var, 0.075, max_relative = 1e-12);
        let empty = IntervalData { events_control: 0.0, ..two };
        assert!(estimate_ahr(&[empty]).is_err());
    }

    #[test]
    fn identical_strata_match_single_stratum() {
        let m = delayed_effect_example();
        let s = m.strata_or_self().remove(0);
        let strat = TrialModel {
            strata: vec![Stratum { weight: 0.5, ..s.clone() }, Stratum { weight: 0.5, ..s }],
            ..m.clone()
        };
        let a = ahr_lr(&m, 30.0).unwrap();
        let b = ahr_lr(&strat, 30.0).unwrap();
        assert_relative_eq!(a.log_ahr, b.log_ahr, max_relative = 1e-12);
        assert_relative_eq!(a.info_h1, b.info_h1, max_relative = 1e-12);
        assert_relative_eq!(a.info_h0, b.info_h0, max_relative = 1e-12);
    }

    #[test]
    fn undefined_log_hr_is_reported() {
        let m = TrialModel {
            control_hazard: PiecewiseConstant::new(vec![0.0, 2.0], vec![0.0, 0.1]).unwrap(),
            hazard_ratio: PiecewiseConstant::constant(1.0),
            ..delayed_effect_example()
        };
        assert!(ahr_lr(&m, 20.0).is_ok());
        let bad = TrialModel {
            hazard_ratio: PiecewiseConstant::new(vec![0.0, 2.0], vec![0.0, 1.0]).unwrap(),
            control_hazard: PiecewiseConstant::constant(0.05),
            ..m
        };
        assert!(matches!(ahr_lr(&bad, 20.0), Err(Error::UndefinedLogHr { .. })));
    }

    #[test]
    fn bridge_reproduces_delayed_example() {
        let m = delayed_effect_example();
        let w = bridge_weight(&m, 36.0).unwrap();
        let lr = ahr_lr(&m, 36.0).unwrap().log_ahr;
        assert!((ahr_wlr_piecewise(&m, &w, 36.0).unwrap() - lr).abs() < 1e-10);
        assert!((lr.exp() - 0.68).abs() < 0.005);
    }

    #[test]
    fn bridge_is_flat_without_effect() {
        let m = TrialModel { hazard_ratio: PiecewiseConstant::constant(1.0), ..delayed_effect_example() };
        let m = TrialModel {
            control_hazard: PiecewiseConstant::new(vec![0.0, 5.0], vec![0.05, 0.08]).unwrap(),
            dropout: ArmDropout::equal(PiecewiseConstant::constant(0.0)),
            ratio: Randomization::EQUAL,
            ..m
        };
        let w = bridge_weight(&m, 30.0).unwrap();
        for v in w.values() {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn logrank_taylor_close_to_ahr() {
        for s in Scenario::ALL {
            let m = s.model(698.0, LateHazard::default());
            let a = ahr_lr(&m, 36.0).unwrap().log_ahr;
            let b = ahr_wlr(&m, WeightSpec::Logrank, 36.0).unwrap();
            assert!((a - b).abs() < 0.01, "{s:?}: {a} vs {b}");
        }
    }
}
