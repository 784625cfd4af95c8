//! Trial model declaration: piecewise constant rates, the two-arm trial
//! model, analysis schedules and test specifications.

use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};

/// Right-continuous step function on `[0, ∞)`.
///
/// Interval `i` is `[breakpoints[i], breakpoints[i + 1])`; the last interval
/// extends to infinity. `breakpoints[0]` is always 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPiecewise", deny_unknown_fields)]
pub struct PiecewiseConstant {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPiecewise {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawPiecewise> for PiecewiseConstant {
    type Error = Error;
    fn try_from(raw: RawPiecewise) -> Result<Self> {
        PiecewiseConstant::new(raw.breakpoints, raw.values)
    }
}

impl PiecewiseConstant {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() {
            return invalid("piecewise function needs at least one interval");
        }
        if breakpoints[0] != 0.0 {
            return invalid(format!("first breakpoint must be 0, got {}", breakpoints[0]));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || breakpoints.iter().any(|b| !b.is_finite()) {
            return invalid("breakpoints must be finite and strictly increasing");
        }
        if values.len() != breakpoints.len() {
            return Err(Error::Dimension { expected: breakpoints.len(), got: values.len() });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return invalid("piecewise values must be finite and non-negative");
        }
        Ok(Self { breakpoints, values })
    }

    pub fn constant(value: f64) -> Self {
        Self { breakpoints: vec![0.0], values: vec![value.max(0.0)] }
    }

    /// Build from interval durations (the last may be infinite) and values.
    pub fn from_durations(durations: &[f64], values: &[f64]) -> Result<Self> {
        if durations.len() != values.len() || durations.is_empty() {
            return invalid("durations and values must be non-empty and equally long");
        }
        let mut bp = Vec::with_capacity(durations.len());
        let mut acc = 0.0;
        for d in durations {
            bp.push(acc);
            acc += d;
        }
        Self::new(bp, values.to_vec())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn index(&self, t: f64) -> usize {
        // last breakpoint <= t
        self.breakpoints.partition_point(|&b| b <= t).saturating_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.values[self.index(t.max(0.0))]
    }

    /// `∫_0^t f(s) ds`.
    pub fn integral(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let lo = self.breakpoints[i];
            if lo >= t {
                break;
            }
            let hi = self.breakpoints.get(i + 1).copied().unwrap_or(f64::INFINITY).min(t);
            if v > 0.0 {
                acc += v * (hi - lo);
            }
        }
        acc
    }

    /// Same function on a finer grid; `grid` points are added to the
    /// existing breakpoints.
    pub fn refine(&self, grid: &[f64]) -> Self {
        let bp = merge_breakpoints([self.breakpoints.as_slice(), grid]);
        let values = bp.iter().map(|&b| self.eval(b)).collect();
        Self { breakpoints: bp, values }
    }

    /// Pointwise product on the merged grid.
    pub fn product(&self, other: &Self) -> Self {
        let bp = merge_breakpoints([self.breakpoints.as_slice(), other.breakpoints.as_slice()]);
        let values = bp.iter().map(|&b| self.eval(b) * other.eval(b)).collect();
        Self { breakpoints: bp, values }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { breakpoints: self.breakpoints.clone(), values: self.values.iter().map(|v| v * c).collect() }
    }

    /// Zero from `t` onwards.
    pub fn truncate(&self, t: f64) -> Self {
        let mut bp: Vec<f64> = self.breakpoints.iter().copied().filter(|&b| b < t).collect();
        let mut values: Vec<f64> = bp.iter().map(|&b| self.eval(b)).collect();
        if t > 0.0 {
            bp.push(t);
            values.push(0.0);
        }
        Self { breakpoints: bp, values }
    }

    /// Merge adjacent intervals carrying equal values.
    pub fn simplify(&self) -> Self {
        let mut bp = vec![self.breakpoints[0]];
        let mut values = vec![self.values[0]];
        for (b, v) in self.breakpoints.iter().zip(&self.values).skip(1) {
            if *v != *values.last().unwrap() {
                bp.push(*b);
                values.push(*v);
            }
        }
        Self { breakpoints: bp, values }
    }
}

/// Union of breakpoint sets, sorted and deduplicated.
pub fn merge_breakpoints<'a>(sets: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut all: Vec<f64> = sets.into_iter().flat_map(|s| s.iter().copied()).filter(|b| b.is_finite() && *b >= 0.0).collect();
    all.push(0.0);
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup();
    all
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Experimental,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Experimental];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmDropout {
    pub control: PiecewiseConstant,
    pub experimental: PiecewiseConstant,
}

impl ArmDropout {
    pub fn equal(rate: PiecewiseConstant) -> Self {
        Self { control: rate.clone(), experimental: rate }
    }

    pub fn get(&self, arm: Arm) -> &PiecewiseConstant {
        match arm {
            Arm::Control => &self.control,
            Arm::Experimental => &self.experimental,
        }
    }

    pub fn is_arm_equal(&self) -> bool {
        let grid = merge_breakpoints([self.control.breakpoints(), self.experimental.breakpoints()]);
        grid.iter().all(|&t| self.control.eval(t) == self.experimental.eval(t))
    }
}

/// Randomization probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomization {
    pub control: f64,
    pub experimental: f64,
}

impl Randomization {
    pub const EQUAL: Randomization = Randomization { control: 0.5, experimental: 0.5 };

    pub fn get(&self, arm: Arm) -> f64 {
        match arm {
            Arm::Control => self.control,
            Arm::Experimental => self.experimental,
        }
    }
}

impl Default for Randomization {
    fn default() -> Self {
        Self::EQUAL
    }
}

/// One stratum for stratified average hazard ratio computations. The
/// stratum enrolls `weight` of the overall enrollment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stratum {
    pub weight: f64,
    pub control_hazard: PiecewiseConstant,
    pub hazard_ratio: PiecewiseConstant,
    pub dropout: ArmDropout,
}

/// Two-arm piecewise exponential trial model with Poisson enrollment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialModel {
    /// Subjects per month; ignored from `enroll_duration` on.
    pub enroll_rate: PiecewiseConstant,
    pub control_hazard: PiecewiseConstant,
    /// Experimental / control hazard ratio.
    pub hazard_ratio: PiecewiseConstant,
    pub dropout: ArmDropout,
    #[serde(default)]
    pub ratio: Randomization,
    pub enroll_duration: f64,
    pub total_duration: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strata: Vec<Stratum>,
}

impl TrialModel {
    /// Effective enrollment rate, zero from the end of enrollment.
    pub fn enrollment(&self) -> PiecewiseConstant {
        self.enroll_rate.truncate(self.enroll_duration)
    }

    pub fn arm_hazard(&self, arm: Arm) -> PiecewiseConstant {
        arm_hazard(self, arm)
    }

    /// Planned sample size `G(τ_a)`.
    pub fn planned_n(&self) -> f64 {
        self.enroll_rate.integral(self.enroll_duration)
    }

    /// Same model with all enrollment rates multiplied by `c`.
    pub fn scale_enrollment(&self, c: f64) -> Self {
        Self { enroll_rate: self.enroll_rate.scale(c), ..self.clone() }
    }

    /// Rescale enrollment so that `G(τ_a) = n`.
    pub fn with_sample_size(&self, n: f64) -> Self {
        self.scale_enrollment(n / self.planned_n())
    }

    /// The null model: experimental hazards equal control hazards.
    pub fn null(&self) -> Self {
        Self {
            hazard_ratio: PiecewiseConstant::constant(1.0),
            strata: self
                .strata
                .iter()
                .map(|s| Stratum { hazard_ratio: PiecewiseConstant::constant(1.0), ..s.clone() })
                .collect(),
            ..self.clone()
        }
    }

    /// All breakpoints of the hazard, hazard ratio and dropout components.
    pub fn rate_breakpoints(&self) -> Vec<f64> {
        merge_breakpoints([
            self.control_hazard.breakpoints(),
            self.hazard_ratio.breakpoints(),
            self.dropout.control.breakpoints(),
            self.dropout.experimental.breakpoints(),
        ])
    }

    /// Strata for stratified computations; a model without explicit strata
    /// is its own single stratum.
    pub fn strata_or_self(&self) -> Vec<Stratum> {
        if self.strata.is_empty() {
            vec![Stratum {
                weight: 1.0,
                control_hazard: self.control_hazard.clone(),
                hazard_ratio: self.hazard_ratio.clone(),
                dropout: self.dropout.clone(),
            }]
        } else {
            self.strata.clone()
        }
    }

    /// Single-stratum model for stratum `s` with enrollment scaled by its weight.
    pub fn stratum_model(&self, s: &Stratum) -> TrialModel {
        TrialModel {
            enroll_rate: self.enroll_rate.scale(s.weight),
            control_hazard: s.control_hazard.clone(),
            hazard_ratio: s.hazard_ratio.clone(),
            dropout: s.dropout.clone(),
            ratio: self.ratio,
            enroll_duration: self.enroll_duration,
            total_duration: self.total_duration,
            strata: Vec::new(),
        }
    }
}

/// Control hazard, or control hazard times hazard ratio on the merged grid.
pub fn arm_hazard(model: &TrialModel, arm: Arm) -> PiecewiseConstant {
    match arm {
        Arm::Control => model.control_hazard.clone(),
        Arm::Experimental => model.control_hazard.product(&model.hazard_ratio),
    }
}

/// Calendar analysis times or target pooled event counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisSchedule {
    Times(Vec<f64>),
    Events(Vec<f64>),
}

impl AnalysisSchedule {
    pub fn len(&self) -> usize {
        match self {
            Self::Times(v) | Self::Events(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weight function of a weighted logrank test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Logrank,
    /// Fleming–Harrington `S(t-)^p (1 - S(t-))^q`.
    Fh { p: f64, q: f64 },
    /// Modestly weighted: `min(w_max, 1 / S(min(t, t*)))`.
    MagirrBurman {
        t_star: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_max: Option<f64>,
    },
    /// 0 before `t0`, 1 from `t0` on.
    ZeroEarly { t0: f64 },
}

impl WeightSpec {
    pub fn check(&self) -> Result<()> {
        match *self {
            WeightSpec::Logrank => Ok(()),
            WeightSpec::Fh { p, q } if p >= 0.0 && q >= 0.0 && p.is_finite() && q.is_finite() => Ok(()),
            WeightSpec::Fh { p, q } => invalid(format!("FH({p}, {q}): exponents must be finite and >= 0")),
            WeightSpec::MagirrBurman { t_star, w_max } => {
                if !(t_star >= 0.0 && t_star.is_finite()) {
                    return invalid(format!("MagirrBurman t* = {t_star} must be >= 0"));
                }
                match w_max {
                    Some(w) if !(w >= 1.0) => invalid(format!("MagirrBurman w_max = {w} must be >= 1")),
                    _ => Ok(()),
                }
            }
            WeightSpec::ZeroEarly { t0 } if t0 >= 0.0 && t0.is_finite() => Ok(()),
            WeightSpec::ZeroEarly { t0 } => invalid(format!("ZeroEarly t0 = {t0} must be >= 0")),
        }
    }

    /// Times where the weight is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            WeightSpec::MagirrBurman { t_star, .. } => vec![t_star],
            WeightSpec::ZeroEarly { t0 } => vec![t0],
            _ => Vec::new(),
        }
    }

    /// FH(0,0) is evaluated as the logrank weight.
    pub fn normalized(&self) -> WeightSpec {
        match *self {
            WeightSpec::Fh { p, q } if p == 0.0 && q == 0.0 => WeightSpec::Logrank,
            w => w,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            WeightSpec::Logrank => "LR".into(),
            WeightSpec::Fh { p, q } => format!("FH({p},{q})"),
            WeightSpec::MagirrBurman { t_star, w_max: Some(w) } => format!("MWLR({t_star},{w})"),
            WeightSpec::MagirrBurman { t_star, w_max: None } => format!("MWLR({t_star})"),
            WeightSpec::ZeroEarly { t0 } => format!("ZeroEarly({t0})"),
        }
    }
}

/// A single weighted logrank test or a MaxCombo of several.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSpec {
    Wlr(WeightSpec),
    MaxCombo(Vec<WeightSpec>),
}

impl TestSpec {
    pub fn components(&self) -> Vec<WeightSpec> {
        match self {
            TestSpec::Wlr(w) => vec![*w],
            TestSpec::MaxCombo(ws) => ws.clone(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let comps = self.components();
        if comps.is_empty() {
            return invalid("MaxCombo needs at least one component");
        }
        for w in &comps {
            w.check()?;
        }
        for (i, a) in comps.iter().enumerate() {
            if comps[..i].iter().any(|b| b.normalized() == a.normalized()) {
                return invalid(format!("MaxCombo component {} listed twice", a.label()));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match self {
            TestSpec::Wlr(w) => w.label(),
            TestSpec::MaxCombo(ws) => {
                format!("MaxCombo{{{}}}", ws.iter().map(|w| w.label()).collect::<Vec<_>>().join(","))
            }
        }
    }
}

/// Outcome of [`validate`]: hard violations and advisory warnings.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<String>> {
        if self.is_ok() {
            Ok(self.warnings)
        } else {
            Err(Error::Invalid(self.violations.join("; ")))
        }
    }
}

/// Check every model and schedule invariant the downstream computations rely on.
pub fn validate(model: &TrialModel, schedule: &AnalysisSchedule) -> ValidationReport {
    let mut r = ValidationReport::default();
    let ta = model.enroll_duration;
    let tau = model.total_duration;
    if !(ta > 0.0 && ta.is_finite()) {
        r.violations.push(format!("enroll_duration must be > 0, got {ta}"));
    }
    if !(tau >= ta && tau.is_finite()) {
        r.violations.push(format!("total_duration {tau} must be finite and >= enroll_duration {ta}"));
    }
    let p = model.ratio;
    if !(p.control > 0.0 && p.control < 1.0 && p.experimental > 0.0 && p.experimental < 1.0)
        || (p.control + p.experimental - 1.0).abs() > 1e-12
    {
        r.violations.push(format!(
            "randomization probabilities must lie in (0,1) and sum to 1, got {} / {}",
            p.control, p.experimental
        ));
    }
    if model.planned_n() <= 0.0 {
        r.violations.push("enrollment rate integrates to 0 over the enrollment period".into());
    }
    let strata = model.strata_or_self();
    for (j, s) in strata.iter().enumerate() {
        let exp = s.control_hazard.product(&s.hazard_ratio);
        if s.control_hazard.values().iter().all(|&v| v == 0.0) && exp.values().iter().all(|&v| v == 0.0) {
            r.violations.push(format!("stratum {j}: every hazard is 0; at least one interval needs a positive event rate"));
        }
        if !s.dropout.is_arm_equal() {
            r.warnings.push(format!(
                "stratum {j}: dropout differs by arm; average hazard ratio computations assume equal dropout"
            ));
        }
    }
    if !model.strata.is_empty() {
        let total: f64 = model.strata.iter().map(|s| s.weight).sum();
        if model.strata.iter().any(|s| !(s.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
            r.violations.push(format!("strata weights must be positive and sum to 1, got {total}"));
        }
    }
    let values = match schedule {
        AnalysisSchedule::Times(v) => v,
        AnalysisSchedule::Events(v) => v,
    };
    if values.is_empty() {
        r.violations.push("schedule needs at least one analysis".into());
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        r.violations.push("analysis schedule must be strictly increasing".into());
    }
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        r.violations.push("analysis schedule entries must be positive and finite".into());
    }
    if let AnalysisSchedule::Times(t) = schedule {
        if let Some(last) = t.last() {
            if *last > tau + 1e-9 {
                r.violations.push(format!("analysis time {last} exceeds total_duration {tau}"));
            }
        }
    }
    r
}
