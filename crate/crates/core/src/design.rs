//! Spending-function group sequential designs: bounds, crossing
//! probabilities, power and sample size for logrank, weighted logrank and
//! MaxCombo tests.
//!
//! Efficacy bounds are solved under the null with futility ignored
//! (non-binding). Power is computed with futility bounds binding. A MaxCombo
//! test rejects when any component reaches the common critical value `b_k`
//! and stops for futility when every component is at or below `a_k`.

use crate::ahr::ahr_lr;
use crate::dist::{canonical, gs_crossing, mvn_rectangle_with, wlr_joint, JointDistribution, MvnOptions};
use crate::error::{Error, Result};
use crate::expect::time_for_events;
use crate::model::{AnalysisSchedule, TestSpec, TrialModel, WeightSpec};
use crate::normal;
use crate::wlr::{DriftForm, Hypothesis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpendingFamily {
    /// Lan–DeMets O'Brien–Fleming type.
    LanDemetsObf,
    LanDemetsPocock,
    KimDemetsPower { rho: f64 },
    HwangShihDecani { gamma: f64 },
    /// Cumulative spend at each analysis.
    Fixed { cumulative: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpending")]
pub struct SpendingFunction {
    #[serde(flatten)]
    pub family: SpendingFamily,
    pub total: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyName {
    LanDemetsObf,
    LanDemetsPocock,
    KimDemetsPower,
    HwangShihDecani,
    Fixed,
}

/// Flat form read from configs, so that unknown keys can be rejected.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpending {
    family: FamilyName,
    total: f64,
    rho: Option<f64>,
    gamma: Option<f64>,
    cumulative: Option<Vec<f64>>,
}

impl TryFrom<RawSpending> for SpendingFunction {
    type Error = Error;
    fn try_from(r: RawSpending) -> Result<Self> {
        let extra = |name: &str, present: bool| {
            if present {
                Err(Error::Invalid(format!("`{name}` does not apply to this spending family")))
            } else {
                Ok(())
            }
        };
        let need = |name: &str, v: Option<f64>| v.ok_or_else(|| Error::Invalid(format!("spending family needs `{name}`")));
        let family = match r.family {
            FamilyName::LanDemetsObf | FamilyName::LanDemetsPocock => {
                extra("rho", r.rho.is_some())?;
                extra("gamma", r.gamma.is_some())?;
                extra("cumulative", r.cumulative.is_some())?;
                if matches!(r.family, FamilyName::LanDemetsObf) {
                    SpendingFamily::LanDemetsObf
                } else {
                    SpendingFamily::LanDemetsPocock
                }
            }
            FamilyName::KimDemetsPower => {
                extra("gamma", r.gamma.is_some())?;
                extra("cumulative", r.cumulative.is_some())?;
                SpendingFamily::KimDemetsPower { rho: need("rho", r.rho)? }
            }
            FamilyName::HwangShihDecani => {
                extra("rho", r.rho.is_some())?;
                extra("cumulative", r.cumulative.is_some())?;
                SpendingFamily::HwangShihDecani { gamma: need("gamma", r.gamma)? }
            }
            FamilyName::Fixed => {
                extra("rho", r.rho.is_some())?;
                extra("gamma", r.gamma.is_some())?;
                let cumulative = r.cumulative.ok_or_else(|| Error::Invalid("fixed spending needs `cumulative`".into()))?;
                SpendingFamily::Fixed { cumulative }
            }
        };
        Ok(SpendingFunction { family, total: r.total })
    }
}

impl SpendingFunction {
    pub fn obf(total: f64) -> Self {
        Self { family: SpendingFamily::LanDemetsObf, total }
    }

    pub fn power(rho: f64, total: f64) -> Self {
        Self { family: SpendingFamily::KimDemetsPower { rho }, total }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.total > 0.0 && self.total < 1.0) {
            return Err(Error::Invalid(format!("spending total must lie in (0, 1), got {}", self.total)));
        }
        match &self.family {
            SpendingFamily::KimDemetsPower { rho } if !(*rho > 0.0) => {
                Err(Error::Invalid(format!("power spending needs rho > 0, got {rho}")))
            }
            SpendingFamily::HwangShihDecani { gamma } if !gamma.is_finite() => {
                Err(Error::Invalid("Hwang-Shih-DeCani gamma must be finite".into()))
            }
            SpendingFamily::Fixed { cumulative } => {
                let mut prev = 0.0;
                for &c in cumulative {
                    if !(c >= prev && c <= self.total + 1e-15) {
                        return Err(Error::Invalid(format!(
                            "fixed cumulative spends must be non-decreasing and at most the total: {cumulative:?}"
                        )));
                    }
                    prev = c;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Cumulative error spent at information fraction `t`.
    pub fn spend(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::Invalid(format!("information fraction must be non-negative, got {t}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        if t >= 1.0 {
            return Ok(self.total);
        }
        let a = self.total;
        Ok(match &self.family {
            SpendingFamily::LanDemetsObf => 2.0 * normal::sf(normal::upper_quantile(a / 2.0) / t.sqrt()),
            SpendingFamily::LanDemetsPocock => a * (1.0 + (std::f64::consts::E - 1.0) * t).ln(),
            SpendingFamily::KimDemetsPower { rho } => a * t.powf(*rho),
            SpendingFamily::HwangShihDecani { gamma } => {
                if gamma.abs() < 1e-12 {
                    a * t
                } else {
                    a * (-(-gamma * t).exp_m1()) / (-(-gamma).exp_m1())
                }
            }
            SpendingFamily::Fixed { .. } => {
                return Err(Error::Invalid("fixed spending is defined per analysis, not per fraction".into()))
            }
        })
    }

    /// Cumulative spend at analysis `k` (0-based) with fraction `t`.
    pub fn spend_at(&self, k: usize, t: f64) -> Result<f64> {
        match &self.family {
            SpendingFamily::Fixed { cumulative } => cumulative
                .get(k)
                .copied()
                .ok_or_else(|| Error::Invalid(format!("fixed spending has no value for analysis {}", k + 1))),
            _ => self.spend(t),
        }
    }
}

/// How the spending fraction of an analysis is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpendingFraction {
    /// Smallest information fraction among all weights used anywhere in
    /// the design.
    #[default]
    Minimal,
    /// Smallest information fraction among the components of the test
    /// performed at that analysis.
    Tested,
}

/// Expected Z of logrank components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogrankMethod {
    /// `-log(AHR) √I_H0` from the average hazard ratio.
    #[default]
    Ahr,
    /// As any weighted logrank test, `√n Δ / σ`.
    Wlr,
}

fn default_alpha() -> SpendingFunction {
    SpendingFunction::obf(0.025)
}

fn default_scale() -> Hypothesis {
    Hypothesis::Local
}

fn default_points() -> usize {
    1 << 13
}

/// A group sequential design up to its sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub model: TrialModel,
    pub schedule: AnalysisSchedule,
    /// Test performed at each analysis.
    pub tests: Vec<TestSpec>,
    #[serde(default = "default_alpha")]
    pub alpha: SpendingFunction,
    /// Futility spending; no futility bounds when absent.
    #[serde(default)]
    pub beta: Option<SpendingFunction>,
    #[serde(default)]
    pub spending_fraction: SpendingFraction,
    /// Variance scale for correlations, information fractions and the
    /// expected Z of weighted tests: `null` or `local`.
    #[serde(default = "default_scale")]
    pub info_scale: Hypothesis,
    #[serde(default)]
    pub logrank_method: LogrankMethod,
    #[serde(default)]
    pub drift_form: DriftForm,
    /// Lattice points per shift for multivariate normal probabilities.
    #[serde(default = "default_points")]
    pub mvn_points: usize,
}

impl DesignSpec {
    pub fn new(model: TrialModel, schedule: AnalysisSchedule, tests: Vec<TestSpec>) -> Self {
        Self {
            model,
            schedule,
            tests,
            alpha: default_alpha(),
            beta: None,
            spending_fraction: SpendingFraction::default(),
            info_scale: default_scale(),
            logrank_method: LogrankMethod::default(),
            drift_form: DriftForm::default(),
            mvn_points: default_points(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let k = self.schedule.len();
        if k == 0 {
            return Err(Error::Invalid("the schedule has no analyses".into()));
        }
        if self.tests.len() != k {
            return Err(Error::Invalid(format!("{} analyses but {} tests", k, self.tests.len())));
        }
        for t in &self.tests {
            t.check()?;
        }
        self.alpha.check()?;
        if let Some(b) = &self.beta {
            b.check()?;
        }
        if self.info_scale == Hypothesis::Alternative {
            return Err(Error::Invalid("info_scale must be null or local".into()));
        }
        if self.mvn_points < 64 {
            return Err(Error::Invalid("mvn_points must be at least 64".into()));
        }
        if !self.model.strata.is_empty() && !self.is_ahr_only() {
            return Err(Error::Invalid(
                "stratified models support logrank tests with the AHR method only".into(),
            ));
        }
        if !self.model.strata.is_empty() && matches!(self.schedule, AnalysisSchedule::Events(_)) {
            return Err(Error::Invalid("stratified models need calendar analysis times".into()));
        }
        Ok(())
    }

    fn is_ahr_only(&self) -> bool {
        self.logrank_method == LogrankMethod::Ahr
            && self.tests.iter().all(|t| t.components().iter().all(|w| *w == WeightSpec::Logrank))
    }

    /// Analysis times for sample size `n`.
    pub fn analysis_times(&self, n: f64) -> Result<Vec<f64>> {
        match &self.schedule {
            AnalysisSchedule::Times(t) => Ok(t.clone()),
            AnalysisSchedule::Events(d) => {
                let m = self.model.with_sample_size(n);
                d.iter().map(|&e| time_for_events(&m, e)).collect()
            }
        }
    }

    /// Distinct weights in order of first use and the per-analysis plan.
    fn weights_and_plan(&self) -> (Vec<WeightSpec>, Vec<Vec<usize>>) {
        let mut weights: Vec<WeightSpec> = Vec::new();
        let mut plan = Vec::new();
        for t in &self.tests {
            let mut idx = Vec::new();
            for w in t.components() {
                let w = w.normalized();
                let i = match weights.iter().position(|x| *x == w) {
                    Some(i) => i,
                    None => {
                        weights.push(w);
                        weights.len() - 1
                    }
                };
                idx.push(i);
            }
            plan.push(idx);
        }
        (weights, plan)
    }

    /// Joint distribution under the alternative at sample size `n`, with
    /// per-weight information fractions and the AHR table.
    pub fn distribution(&self, n: f64) -> Result<DesignDistribution> {
        self.check()?;
        if !(n > 0.0) {
            return Err(Error::Invalid(format!("sample size must be positive, got {n}")));
        }
        let times = self.analysis_times(n)?;
        let model = self.model.with_sample_size(n);
        let ahr: Vec<_> = times.iter().map(|&t| ahr_lr(&model, t)).collect::<Result<_>>()?;
        let (weights, plan) = self.weights_and_plan();
        let k = times.len();
        let (dist, fractions) = if self.is_ahr_only() {
            let last = ahr[k - 1].info_h0;
            let t: Vec<f64> = ahr.iter().map(|a| a.info_h0 / last).collect();
            let mean: Vec<f64> = ahr.iter().map(|a| a.theta() * a.info_h0.sqrt()).collect();
            (canonical(&t, &mean)?, vec![t])
        } else {
            let mut d = wlr_joint(&model, &weights, &times, &plan, n, self.info_scale, self.drift_form)?;
            if self.logrank_method == LogrankMethod::Ahr {
                for (i, l) in d.labels.iter().enumerate() {
                    if weights[l.test] == WeightSpec::Logrank {
                        let a = &ahr[l.analysis];
                        d.mean[i] = a.theta() * a.info_h0.sqrt();
                    }
                }
            }
            let fr = weight_fractions(&model, &weights, &times, self.info_scale)?;
            (d, fr)
        };
        let spending: Vec<f64> = (0..k)
            .map(|a| {
                let pool: Vec<usize> = match self.spending_fraction {
                    SpendingFraction::Minimal => (0..weights.len()).collect(),
                    SpendingFraction::Tested => plan[a].clone(),
                };
                pool.iter().map(|&i| fractions[i.min(fractions.len() - 1)][a]).fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok(DesignDistribution { n, times, weights, plan, dist, fractions, spending, ahr })
    }

    /// Bounds and crossing probabilities at sample size `n`.
    pub fn evaluate(&self, n: f64) -> Result<DesignSummary> {
        let dd = self.distribution(n)?;
        let opts = MvnOptions::fixed(self.mvn_points);
        let k = dd.times.len();
        let h0 = dd.dist.centered();
        let alpha_cum: Vec<f64> = (0..k).map(|i| self.alpha.spend_at(i, dd.spending[i])).collect::<Result<_>>()?;
        let b = efficacy_bounds(&h0, &alpha_cum, &opts)?;
        let a = match &self.beta {
            None => vec![f64::NEG_INFINITY; k],
            Some(sf) => {
                let beta_cum: Vec<f64> = (0..k).map(|i| sf.spend_at(i, dd.spending[i])).collect::<Result<_>>()?;
                futility_bounds(&dd.dist, &beta_cum, &b, &opts)?
            }
        };
        let none = vec![f64::NEG_INFINITY; k];
        let h0_up = crossing(&h0, &b, &none, &opts)?.0;
        let (h1_up, h1_lo) = crossing(&dd.dist, &b, &a, &opts)?;
        let h0_lo = if self.beta.is_some() { crossing(&h0, &b, &a, &opts)?.1 } else { vec![0.0; k] };
        let final_events = dd.ahr[k - 1].events;
        let mut rows = Vec::with_capacity(k);
        let cum = |v: &[f64], i: usize| v[..=i].iter().sum::<f64>();
        for i in 0..k {
            let idx = dd.dist.at_analysis(i);
            let marg = h0.select(&idx);
            let p_nom = 1.0
                - mvn_rectangle_with(&marg, &vec![f64::NEG_INFINITY; idx.len()], &vec![b[i]; idx.len()], &opts)?.value;
            rows.push(AnalysisRow {
                analysis: i + 1,
                time: dd.times[i],
                n,
                events: dd.ahr[i].events,
                ahr: dd.ahr[i].ahr,
                event_fraction: dd.ahr[i].events / final_events,
                test: self.tests[i].label(),
                info_fractions: dd
                    .weights
                    .iter()
                    .enumerate()
                    .filter(|(w, _)| *w < dd.fractions.len())
                    .map(|(w, s)| WeightFraction { weight: s.label(), fraction: dd.fractions[w][i] })
                    .collect(),
                spending_fraction: dd.spending[i],
                efficacy_z: b[i],
                nominal_p: p_nom,
                equivalent_z: if p_nom > 0.0 { normal::upper_quantile(p_nom) } else { f64::INFINITY },
                futility_z: a[i],
                cum_efficacy_h1: cum(&h1_up, i),
                cum_efficacy_h0: cum(&h0_up, i),
                cum_futility_h1: cum(&h1_lo, i),
                cum_futility_h0: cum(&h0_lo, i),
            });
        }
        Ok(DesignSummary {
            sample_size: n,
            power: h1_up.iter().sum(),
            alpha: h0_up.iter().sum(),
            analyses: rows,
        })
    }

    pub fn power(&self, n: f64) -> Result<f64> {
        Ok(self.evaluate(n)?.power)
    }

    /// Smallest (continuous) sample size reaching `target` power.
    ///
    /// With calendar-time analyses the information fractions, correlations
    /// and efficacy bounds do not depend on N and every expected Z scales
    /// with √N, so only the alternative crossing is recomputed.
    pub fn sample_size(&self, target: f64) -> Result<DesignSummary> {
        self.check()?;
        if !(target > self.alpha.total && target < 1.0) {
            return Err(Error::Degenerate(format!(
                "target power {target} must lie in (alpha = {}, 1)",
                self.alpha.total
            )));
        }
        let n0 = self.model.planned_n();
        let opts = MvnOptions::fixed(self.mvn_points);
        let f: Box<dyn Fn(f64) -> Result<f64> + '_> = match self.schedule {
            AnalysisSchedule::Times(_) => {
                let dd = self.distribution(n0)?;
                let k = dd.times.len();
                let alpha_cum: Vec<f64> =
                    (0..k).map(|i| self.alpha.spend_at(i, dd.spending[i])).collect::<Result<_>>()?;
                let b = efficacy_bounds(&dd.dist.centered(), &alpha_cum, &opts)?;
                let beta_cum: Option<Vec<f64>> = match &self.beta {
                    None => None,
                    Some(sf) => Some((0..k).map(|i| sf.spend_at(i, dd.spending[i])).collect::<Result<_>>()?),
                };
                Box::new(move |n: f64| {
                    let r = (n / n0).sqrt();
                    let d1 = dd.dist.with_mean(dd.dist.mean.iter().map(|m| m * r).collect())?;
                    let a = match &beta_cum {
                        None => vec![f64::NEG_INFINITY; k],
                        Some(bc) => futility_bounds(&d1, bc, &b, &opts)?,
                    };
                    Ok(crossing(&d1, &b, &a, &opts)?.0.iter().sum::<f64>() - target)
                })
            }
            AnalysisSchedule::Events(_) => Box::new(|n: f64| Ok(self.power(n)? - target)),
        };
        let (mut lo, mut hi) = (n0, n0);
        let mut f_hi = f(hi)?;
        let mut f_lo = f_hi;
        let mut steps = 0;
        while f_hi < 0.0 {
            lo = hi;
            f_lo = f_hi;
            hi *= 2.0;
            f_hi = f(hi)?;
            steps += 1;
            if steps > 40 {
                return Err(Error::Infeasible(format!(
                    "power {target} not reached: the effect does not favor the experimental arm enough"
                )));
            }
        }
        while f_lo > 0.0 {
            hi = lo;
            f_hi = f_lo;
            lo /= 2.0;
            f_lo = f(lo)?;
            steps += 1;
            if steps > 80 {
                return Err(Error::Degenerate("required sample size tends to zero".into()));
            }
        }
        let n = brent(|x| f(x), lo, hi, f_lo, f_hi, 1e-7 * hi)?;
        self.evaluate(n)
    }
}

/// Sample size for logrank designs by the d-n route: information comes from
/// expected events through the average hazard ratio.
pub fn sample_size_dn(spec: &DesignSpec, target: f64) -> Result<DesignSummary> {
    if !spec.tests.iter().all(|t| t.components().iter().all(|w| w.normalized() == WeightSpec::Logrank)) {
        return Err(Error::Invalid("the d-n method applies to logrank designs".into()));
    }
    let s = DesignSpec { logrank_method: LogrankMethod::Ahr, ..spec.clone() };
    s.sample_size(target)
}

/// Sample size for weighted logrank and MaxCombo designs by the n-d route:
/// power is searched over N and events follow from the failure
/// probability.
pub fn sample_size_nd(spec: &DesignSpec, target: f64) -> Result<DesignSummary> {
    spec.sample_size(target)
}

/// Everything needed to compute crossing probabilities at one sample size.
#[derive(Debug, Clone)]
pub struct DesignDistribution {
    pub n: f64,
    pub times: Vec<f64>,
    pub weights: Vec<WeightSpec>,
    pub plan: Vec<Vec<usize>>,
    pub dist: JointDistribution,
    /// `fractions[w][k]`.
    pub fractions: Vec<Vec<f64>>,
    pub spending: Vec<f64>,
    pub ahr: Vec<crate::ahr::AhrResult>,
}

fn weight_fractions(model: &TrialModel, weights: &[WeightSpec], times: &[f64], scale: Hypothesis) -> Result<Vec<Vec<f64>>> {
    weights.iter().map(|w| crate::wlr::info_fraction_under(model, *w, times, scale)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightFraction {
    pub weight: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub analysis: usize,
    pub time: f64,
    pub n: f64,
    pub events: f64,
    pub ahr: f64,
    pub event_fraction: f64,
    pub test: String,
    pub info_fractions: Vec<WeightFraction>,
    pub spending_fraction: f64,
    /// Common critical value of the test's components.
    pub efficacy_z: f64,
    /// Null probability that the test rejects at this analysis alone.
    pub nominal_p: f64,
    /// Standard normal quantile of `nominal_p`.
    pub equivalent_z: f64,
    pub futility_z: f64,
    pub cum_efficacy_h1: f64,
    pub cum_efficacy_h0: f64,
    pub cum_futility_h1: f64,
    pub cum_futility_h0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSummary {
    pub sample_size: f64,
    pub power: f64,
    pub alpha: f64,
    pub analyses: Vec<AnalysisRow>,
}

impl DesignSummary {
    pub fn final_events(&self) -> f64 {
        self.analyses.last().map_or(0.0, |r| r.events)
    }

    /// One row per analysis and bound.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "analysis,time,n,events,ahr,event_fraction,spending_fraction,test,bound,z,nominal_p,cum_prob_h1,cum_prob_h0\n",
        );
        for r in &self.analyses {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},efficacy,{},{},{},{}\n",
                r.analysis,
                r.time,
                r.n,
                r.events,
                r.ahr,
                r.event_fraction,
                r.spending_fraction,
                quote(&r.test),
                r.efficacy_z,
                r.nominal_p,
                r.cum_efficacy_h1,
                r.cum_efficacy_h0
            ));
            if r.futility_z > f64::NEG_INFINITY {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},futility,{},{},{},{}\n",
                    r.analysis,
                    r.time,
                    r.n,
                    r.events,
                    r.ahr,
                    r.event_fraction,
                    r.spending_fraction,
                    quote(&r.test),
                    r.futility_z,
                    normal::sf(r.futility_z),
                    r.cum_futility_h1,
                    r.cum_futility_h0
                ));
            }
        }
        out
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Signed rectangles (upper limits only) whose sum is the probability of
/// continuing through analyses `0..k`, intersected with `extra` at
/// analysis `k` when given.
fn continuation_terms(dist: &JointDistribution, upper: &[f64], lower: &[f64], k: usize, extra: Option<f64>) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let sub = if extra.is_some() { k + 1 } else { k };
    let n: usize = (0..sub).map(|i| dist.at_analysis(i).len()).sum();
    // analyses needing inclusion-exclusion: several statistics and a finite lower bound
    let ie: Vec<usize> = (0..k).filter(|&i| dist.at_analysis(i).len() > 1 && lower[i] > f64::NEG_INFINITY).collect();
    let mut terms = Vec::new();
    for mask in 0..(1usize << ie.len()) {
        let mut lo = vec![f64::NEG_INFINITY; n];
        let mut hi = vec![f64::INFINITY; n];
        let mut sign = 1.0;
        for (pos, l) in dist.labels.iter().take(n).enumerate() {
            let i = l.analysis;
            if i == k {
                hi[pos] = extra.unwrap();
                continue;
            }
            hi[pos] = upper[i];
            if let Some(bit) = ie.iter().position(|&x| x == i) {
                if mask >> bit & 1 == 1 {
                    hi[pos] = lower[i];
                }
            } else if dist.at_analysis(i).len() == 1 {
                lo[pos] = lower[i];
            }
        }
        for bit in 0..ie.len() {
            if mask >> bit & 1 == 1 {
                sign = -sign;
            }
        }
        terms.push((sign, lo, hi));
    }
    terms
}

fn region_prob(dist: &JointDistribution, upper: &[f64], lower: &[f64], k: usize, extra: Option<f64>, opts: &MvnOptions) -> Result<f64> {
    let sub = if extra.is_some() { k + 1 } else { k };
    if sub == 0 {
        return Ok(1.0);
    }
    let lead = dist.leading(sub);
    let mut total = 0.0;
    for (sign, lo, hi) in continuation_terms(dist, upper, lower, k, extra) {
        total += sign * mvn_rectangle_with(&lead, &lo, &hi, opts)?.value;
    }
    Ok(total)
}

/// Incremental efficacy and futility crossing probabilities.
pub fn crossing(dist: &JointDistribution, upper: &[f64], lower: &[f64], opts: &MvnOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = dist.analyses();
    if upper.len() != k || lower.len() != k {
        return Err(Error::Dimension { expected: k, got: upper.len().min(lower.len()) });
    }
    if dist.is_single_test() {
        let c = gs_crossing(dist, upper, lower)?;
        return Ok((c.upper, c.lower));
    }
    // single-test prefix on the grid
    let p = (0..k).take_while(|&i| dist.at_analysis(i).len() == 1).count();
    let (mut up, mut lo) = if p > 0 {
        let c = gs_crossing(&dist.leading(p), &upper[..p], &lower[..p])?;
        (c.upper, c.lower)
    } else {
        (Vec::with_capacity(k), Vec::with_capacity(k))
    };
    for i in p..k {
        let cont = region_prob(dist, upper, lower, i, None, opts)?;
        let below_b = region_prob(dist, upper, lower, i, Some(upper[i]), opts)?;
        up.push((cont - below_b).max(0.0));
        lo.push(if lower[i] > f64::NEG_INFINITY {
            region_prob(dist, upper, lower, i, Some(lower[i].min(upper[i])), opts)?.max(0.0)
        } else {
            0.0
        });
    }
    Ok((up, lo))
}

/// Cumulative efficacy crossing under `dist` with binding futility `lower`.
pub fn power(dist: &JointDistribution, upper: &[f64], lower: &[f64], opts: &MvnOptions) -> Result<Vec<f64>> {
    let (up, _) = crossing(dist, upper, lower, opts)?;
    Ok(up.iter().scan(0.0, |s, x| {
        *s += x;
        Some(*s)
    })
    .collect())
}

/// One statistic at each of analyses `0..=k`.
fn single_prefix(dist: &JointDistribution, k: usize) -> bool {
    (0..=k).all(|i| dist.at_analysis(i).len() == 1)
}

fn upper_increment(dist: &JointDistribution, b: &[f64], k: usize, opts: &MvnOptions) -> Result<f64> {
    let none = vec![f64::NEG_INFINITY; k + 1];
    if single_prefix(dist, k) {
        let lead = dist.leading(k + 1);
        return Ok(gs_crossing(&lead, &b[..=k], &none)?.upper[k]);
    }
    let cont = region_prob(dist, b, &none, k, None, opts)?;
    Ok(cont - region_prob(dist, b, &none, k, Some(b[k]), opts)?)
}

/// Non-binding efficacy bounds from cumulative spends under a null
/// distribution. Analyses with no new spend get `+∞`.
pub fn efficacy_bounds(dist_h0: &JointDistribution, alpha_cum: &[f64], opts: &MvnOptions) -> Result<Vec<f64>> {
    let k = dist_h0.analyses();
    if alpha_cum.len() != k {
        return Err(Error::Dimension { expected: k, got: alpha_cum.len() });
    }
    let mut b = vec![f64::INFINITY; k];
    let mut spent = 0.0;
    for i in 0..k {
        let inc = alpha_cum[i] - spent;
        if inc <= 1e-15 {
            continue;
        }
        let g = |x: f64| -> Result<f64> {
            let mut bb = b.clone();
            bb[i] = x;
            Ok(upper_increment(dist_h0, &bb, i, opts)? - inc)
        };
        let (lo, hi) = (-8.0, 12.0);
        let (g_lo, g_hi) = (g(lo)?, g(hi)?);
        if g_lo < 0.0 {
            return Err(Error::Infeasible(format!(
                "analysis {}: spend {inc} exceeds the remaining null probability",
                i + 1
            )));
        }
        b[i] = if g_hi > 0.0 { hi } else { brent(g, lo, hi, g_lo, g_hi, 1e-10)? };
        spent = alpha_cum[i];
    }
    Ok(b)
}

/// Futility bounds from cumulative β-spends under the alternative, given
/// efficacy bounds. Futility is binding across analyses; `a_k ≤ b_k` and
/// `a_K = b_K`.
pub fn futility_bounds(dist_h1: &JointDistribution, beta_cum: &[f64], upper: &[f64], opts: &MvnOptions) -> Result<Vec<f64>> {
    let k = dist_h1.analyses();
    if beta_cum.len() != k || upper.len() != k {
        return Err(Error::Dimension { expected: k, got: beta_cum.len().min(upper.len()) });
    }
    let mut a = vec![f64::NEG_INFINITY; k];
    let mut spent = 0.0;
    for i in 0..k {
        if i + 1 == k {
            a[i] = upper[i];
            break;
        }
        let inc = beta_cum[i] - spent;
        if inc <= 1e-15 {
            continue;
        }
        let g = |x: f64| -> Result<f64> {
            let mut aa = a.clone();
            aa[i] = x.min(upper[i]);
            if single_prefix(dist_h1, i) {
                let lead = dist_h1.leading(i + 1);
                return Ok(gs_crossing(&lead, &upper[..=i], &aa[..=i])?.lower[i] - inc);
            }
            Ok(region_prob(dist_h1, upper, &aa, i, Some(aa[i]), opts)? - inc)
        };
        let hi = if upper[i].is_finite() { upper[i] } else { 12.0 };
        let lo = -12.0;
        let g_hi = g(hi)?;
        if g_hi <= 0.0 {
            a[i] = hi;
        } else {
            let g_lo = g(lo)?;
            a[i] = if g_lo >= 0.0 { lo } else { brent(g, lo, hi, g_lo, g_hi, 1e-10)? };
        }
        spent = beta_cum[i];
    }
    Ok(a)
}

/// Brent's root finder on a bracket with known end values of opposite sign.
fn brent(mut f: impl FnMut(f64) -> Result<f64>, a: f64, b: f64, fa: f64, fb: f64, tol: f64) -> Result<f64> {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoConvergence(format!("root not bracketed on [{a}, {b}]")));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }
    Err(Error::NoConvergence("Brent iteration limit".into()))
}
