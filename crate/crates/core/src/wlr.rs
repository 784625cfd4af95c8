//! Design-time moments of weighted logrank statistics.
//!
//! All integrals are taken per planned subject (enrollment cdf normalized by
//! `G(τ_a)`); [`WlrMoments`] reports them renormalized to the `n_k`
//! subjects enrolled by the analysis so that `e_z = √n_k Δ_k / σ_k` with
//! `σ_k` on the local scale.
//!
//! The drift is oriented so that a benefit of the experimental arm
//! (`λ_1 < λ_0`) gives a positive `Δ_k` and a positive expected Z.

use crate::error::{Error, Result};
use crate::expect::{model_cuts, ArmCurves};
use crate::model::{Arm, TrialModel, WeightSpec};
use crate::quad;
use serde::Serialize;

/// Which model the variance integrals are evaluated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Both arms follow the control hazard.
    Null,
    Alternative,
    /// Null-hypothesis kernel `p_0 p_1 w²` against the alternative's pooled
    /// event density; proportional to expected events for the logrank.
    Local,
}

/// How the expected Z of a weighted logrank statistic is formed from the
/// drift `Δ` and the variances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftForm {
    /// `√n Δ / σ`, with `σ` on the chosen variance scale.
    #[default]
    Standardized,
    /// `θ √I` with `θ = Δ / σ²_H1` and `I = n σ²` on the chosen scale.
    Canonical,
}

/// A weight function bound to a model. The survival plugged into FH and
/// Magirr–Burman weights is the large-sample limit of the pooled
/// Kaplan–Meier estimate under the model.
#[derive(Debug, Clone)]
pub struct WeightFn {
    spec: WeightSpec,
    curves: ArmCurves,
    arm_equal_dropout: bool,
    cuts: Vec<f64>,
}

impl WeightFn {
    pub fn new(spec: WeightSpec, model: &TrialModel) -> Result<Self> {
        spec.check()?;
        if !model.strata.is_empty() {
            return Err(Error::Invalid("weighted logrank moments need a single-stratum model".into()));
        }
        Ok(Self {
            spec: spec.normalized(),
            curves: ArmCurves::new(model),
            arm_equal_dropout: model.dropout.is_arm_equal(),
            cuts: model.rate_breakpoints(),
        })
    }

    pub fn spec(&self) -> WeightSpec {
        self.spec
    }

    /// Limit of the pooled Kaplan–Meier curve. With arm-equal dropout this is
    /// the mixture `p_0 F̄_0 + p_1 F̄_1`; otherwise the pooled cumulative
    /// hazard `∫ Σ p_j F̄_j Ḡ_j λ_j / Σ p_j F̄_j Ḡ_j` is integrated.
    pub fn pooled_survival(&self, t: f64) -> f64 {
        let c = &self.curves;
        let [p0, p1] = c.ratio;
        if self.arm_equal_dropout {
            return p0 * c.survival(Arm::Control, t) + p1 * c.survival(Arm::Experimental, t);
        }
        let hazard = |s: f64| {
            let a0 = p0 * c.survival(Arm::Control, s) * c.dropout_survival(Arm::Control, s);
            let a1 = p1 * c.survival(Arm::Experimental, s) * c.dropout_survival(Arm::Experimental, s);
            (a0 * c.hazard(Arm::Control, s) + a1 * c.hazard(Arm::Experimental, s)) / (a0 + a1)
        };
        (-quad::integrate_segments(hazard, &quad::cut_points(0.0, t, self.cuts.iter().copied()))).exp()
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.spec {
            WeightSpec::Logrank => 1.0,
            WeightSpec::Fh { p, q } => {
                let s = self.pooled_survival(t);
                s.powf(p) * (1.0 - s).powf(q)
            }
            WeightSpec::MagirrBurman { t_star, w_max } => {
                let w = 1.0 / self.pooled_survival(t.min(t_star));
                w_max.map_or(w, |cap| w.min(cap))
            }
            WeightSpec::ZeroEarly { t0 } => {
                if t < t0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

/// `w(t)` for `spec` under `model`.
pub fn weight_eval(spec: WeightSpec, model: &TrialModel, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::TimeOutOfRange { time: t, limit: f64::INFINITY });
    }
    Ok(WeightFn::new(spec, model)?.eval(t))
}

/// Moments of one weighted logrank statistic at one analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WlrMoments {
    pub analysis_time: f64,
    pub delta: f64,
    pub sigma2_h0: f64,
    pub sigma2_h1: f64,
    pub sigma2_local: f64,
    /// Expected number enrolled by the analysis.
    pub n_k: f64,
    /// Expected Z under the alternative, local scale.
    pub e_z: f64,
}

fn check_analysis(model: &TrialModel, analysis_time: f64) -> Result<()> {
    if !(analysis_time > 0.0 && analysis_time <= model.total_duration + 1e-9) {
        return Err(Error::TimeOutOfRange { time: analysis_time, limit: model.total_duration });
    }
    Ok(())
}

fn cuts_with(model: &TrialModel, analysis_time: f64, weights: &[&WeightFn]) -> Vec<f64> {
    let mut pts = model_cuts(model, analysis_time);
    for w in weights {
        pts.extend(w.spec.kinks());
    }
    quad::cut_points(0.0, analysis_time, pts)
}

/// `∫_0^τ w_a w_b p_0π_0 p_1π_1 / π² dv`, per planned subject, under
/// `hyp`. With `w_a = w_b` this is `σ²`.
pub fn cross_variance(model: &TrialModel, wa: &WeightFn, wb: &WeightFn, analysis_time: f64, hyp: Hypothesis) -> Result<f64> {
    check_analysis(model, analysis_time)?;
    let null;
    let m = match hyp {
        Hypothesis::Null => {
            null = model.null();
            &null
        }
        _ => model,
    };
    let c = ArmCurves::new(m);
    let [p0, p1] = c.ratio;
    let f = |s: f64| {
        let a0 = p0 * c.at_risk(Arm::Control, s, analysis_time);
        let a1 = p1 * c.at_risk(Arm::Experimental, s, analysis_time);
        let pi = a0 + a1;
        if pi <= 0.0 {
            return 0.0;
        }
        let dv = a0 * c.hazard(Arm::Control, s) + a1 * c.hazard(Arm::Experimental, s);
        let kernel = match hyp {
            Hypothesis::Local => p0 * p1,
            _ => a0 * a1 / (pi * pi),
        };
        wa.eval(s) * wb.eval(s) * kernel * dv
    };
    Ok(quad::integrate_segments(f, &cuts_with(model, analysis_time, &[wa, wb])))
}

/// `Δ = ∫_0^τ w p_0π_0 p_1π_1 / π (λ_0 - λ_1) ds`, per planned subject.
pub fn drift(model: &TrialModel, w: &WeightFn, analysis_time: f64) -> Result<f64> {
    check_analysis(model, analysis_time)?;
    let c = ArmCurves::new(model);
    let [p0, p1] = c.ratio;
    let f = |s: f64| {
        let a0 = p0 * c.at_risk(Arm::Control, s, analysis_time);
        let a1 = p1 * c.at_risk(Arm::Experimental, s, analysis_time);
        let pi = a0 + a1;
        if pi <= 0.0 {
            return 0.0;
        }
        w.eval(s) * a0 * a1 / pi * (c.hazard(Arm::Control, s) - c.hazard(Arm::Experimental, s))
    };
    Ok(quad::integrate_segments(f, &cuts_with(model, analysis_time, &[w])))
}

/// Variance integral under the requested hypothesis, per planned subject.
/// The weight function is always the one implied by the design model.
pub fn variance(model: &TrialModel, w: &WeightFn, analysis_time: f64, hyp: Hypothesis) -> Result<f64> {
    cross_variance(model, w, w, analysis_time, hyp)
}

/// Drift, variances and expected Z of a weighted logrank test with
/// `n_planned` subjects.
pub fn wlr_moments(model: &TrialModel, spec: WeightSpec, analysis_time: f64, n_planned: f64) -> Result<WlrMoments> {
    let w = WeightFn::new(spec, model)?;
    let delta = drift(model, &w, analysis_time)?;
    let s2h1 = variance(model, &w, analysis_time, Hypothesis::Alternative)?;
    let s2h0 = variance(model, &w, analysis_time, Hypothesis::Null)?;
    let s2loc = variance(model, &w, analysis_time, Hypothesis::Local)?;
    if !(s2h0 > 0.0 && s2h1 > 0.0 && s2loc > 0.0) {
        return Err(Error::Degenerate(format!(
            "{} has zero variance at analysis time {analysis_time}: no event probability mass",
            spec.label()
        )));
    }
    let frac = model.enrollment().integral(analysis_time) / model.planned_n();
    let n_k = n_planned * frac;
    let (delta_k, s2loc_k) = (delta / frac, s2loc / frac);
    Ok(WlrMoments {
        analysis_time,
        delta: delta_k,
        sigma2_h0: s2h0 / frac,
        sigma2_h1: s2h1 / frac,
        sigma2_local: s2loc_k,
        n_k,
        e_z: n_k.sqrt() * delta_k / s2loc_k.sqrt(),
    })
}

/// Statistical information fractions `t_k = σ²(τ_k) / σ²(τ_K)` (per planned
/// subject, so proportional to `n σ_k²`).
pub fn info_fraction_under(model: &TrialModel, spec: WeightSpec, analysis_times: &[f64], hyp: Hypothesis) -> Result<Vec<f64>> {
    if analysis_times.is_empty() {
        return Err(Error::Invalid("at least one analysis time is required".into()));
    }
    let w = WeightFn::new(spec, model)?;
    let info: Vec<f64> = analysis_times
        .iter()
        .map(|&t| variance(model, &w, t, hyp))
        .collect::<Result<_>>()?;
    let last = *info.last().unwrap();
    if !(last > 0.0) {
        return Err(Error::Degenerate(format!("{} has zero information at the final analysis", spec.label())));
    }
    Ok(info.iter().map(|i| i / last).collect())
}

/// Information fractions on the local-alternative scale used for spending.
/// For the logrank these are the expected event fractions.
pub fn info_fraction(model: &TrialModel, spec: WeightSpec, analysis_times: &[f64]) -> Result<Vec<f64>> {
    info_fraction_under(model, spec, analysis_times, Hypothesis::Local)
}

/// Expected Z of one weighted logrank statistic with variance scale `scale`
/// and drift form `form`.
pub fn expected_z(model: &TrialModel, spec: WeightSpec, analysis_time: f64, n_planned: f64, scale: Hypothesis, form: DriftForm) -> Result<f64> {
    let m = wlr_moments(model, spec, analysis_time, n_planned)?;
    let s2 = match scale {
        Hypothesis::Null => m.sigma2_h0,
        Hypothesis::Alternative => m.sigma2_h1,
        Hypothesis::Local => m.sigma2_local,
    };
    Ok(match form {
        DriftForm::Standardized => m.n_k.sqrt() * m.delta / s2.sqrt(),
        DriftForm::Canonical => m.delta / m.sigma2_h1 * (m.n_k * s2).sqrt(),
    })
}
