//! Test statistics on a data cut. All statistics are oriented so that a
//! benefit of the experimental arm gives a positive Z.

use crate::data::TrialDataset;
use nphgsd_core::dist::{bvnu, clip_psd, mvn_rectangle, JointDistribution, Label};
use nphgsd_core::model::{Arm, WeightSpec};
use nphgsd_core::{normal, Error, Result};

/// Distinct event time with per-arm risk sets and event counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventPoint {
    pub time: f64,
    pub at_risk: [u32; 2],
    pub events: [u32; 2],
    /// Left-continuous pooled Kaplan–Meier estimate `S(t-)`.
    pub pooled_km_before: f64,
}

impl EventPoint {
    fn n(&self) -> f64 {
        (self.at_risk[0] + self.at_risk[1]) as f64
    }

    fn d(&self) -> f64 {
        (self.events[0] + self.events[1]) as f64
    }

    /// Hypergeometric variance of the control event count.
    fn hyper_var(&self) -> f64 {
        let (n, d) = (self.n(), self.d());
        if n <= 1.0 {
            return 0.0;
        }
        d * self.at_risk[0] as f64 * self.at_risk[1] as f64 * (n - d) / (n * n * (n - 1.0))
    }

    /// Observed minus expected control events.
    fn o_minus_e(&self) -> f64 {
        self.events[0] as f64 - self.d() * self.at_risk[0] as f64 / self.n()
    }
}

/// A dataset cut at one calendar time.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisCut {
    pub time: f64,
    pub points: Vec<EventPoint>,
    /// Subjects enrolled by the cut, per arm.
    pub enrolled: [u32; 2],
    /// Largest observed time per arm.
    pub max_time: [f64; 2],
}

impl AnalysisCut {
    pub fn new(data: &TrialDataset, tau: f64) -> Self {
        let mut obs: Vec<(f64, bool, usize)> = data
            .subjects
            .iter()
            .filter_map(|s| s.observed(tau).map(|(u, e)| (u, e, s.arm as usize)))
            .collect();
        obs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut remaining = [0u32; 2];
        let mut max_time = [f64::NEG_INFINITY; 2];
        for &(u, _, j) in &obs {
            remaining[j] += 1;
            max_time[j] = max_time[j].max(u);
        }
        let enrolled = remaining;
        let mut points = Vec::new();
        let mut km = 1.0;
        let mut i = 0;
        while i < obs.len() {
            let t = obs[i].0;
            let mut events = [0u32; 2];
            let mut leaving = [0u32; 2];
            while i < obs.len() && obs[i].0 == t {
                let (_, e, j) = obs[i];
                leaving[j] += 1;
                if e {
                    events[j] += 1;
                }
                i += 1;
            }
            if events[0] + events[1] > 0 {
                let p = EventPoint { time: t, at_risk: remaining, events, pooled_km_before: km };
                km *= 1.0 - p.d() / p.n();
                points.push(p);
            }
            remaining[0] -= leaving[0];
            remaining[1] -= leaving[1];
        }
        Self { time: tau, points, enrolled, max_time }
    }

    /// Cut at the calendar time of the `d`-th event.
    pub fn at_events(data: &TrialDataset, d: usize) -> Result<Self> {
        Ok(Self::new(data, data.time_of_event(d)?))
    }

    pub fn total_events(&self) -> u32 {
        self.points.iter().map(|p| p.events[0] + p.events[1]).sum()
    }

    /// Realized weight at each event point.
    pub fn weights(&self, spec: WeightSpec) -> Vec<f64> {
        match spec.normalized() {
            WeightSpec::Logrank => vec![1.0; self.points.len()],
            WeightSpec::Fh { p, q } => self
                .points
                .iter()
                .map(|pt| {
                    let s = pt.pooled_km_before;
                    s.powf(p) * (1.0 - s).powf(q)
                })
                .collect(),
            WeightSpec::MagirrBurman { t_star, w_max } => {
                // KM just after all events up to t*
                let mut s_star = 1.0;
                for pt in self.points.iter().take_while(|pt| pt.time <= t_star) {
                    s_star = pt.pooled_km_before * (1.0 - pt.d() / pt.n());
                }
                self.points
                    .iter()
                    .map(|pt| {
                        let s = if pt.time <= t_star { pt.pooled_km_before } else { s_star };
                        let w = 1.0 / s;
                        w_max.map_or(w, |c| w.min(c))
                    })
                    .collect()
            }
            WeightSpec::ZeroEarly { t0 } => self.points.iter().map(|pt| if pt.time < t0 { 0.0 } else { 1.0 }).collect(),
        }
    }

    fn score(&self, w: &[f64]) -> f64 {
        self.points.iter().zip(w).map(|(p, w)| w * p.o_minus_e()).sum()
    }

    fn covariance(&self, wa: &[f64], wb: &[f64]) -> f64 {
        self.points.iter().zip(wa.iter().zip(wb)).map(|(p, (a, b))| a * b * p.hyper_var()).sum()
    }

    fn check_estimable(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Degenerate(format!("no events by month {}", self.time)));
        }
        if self.enrolled[0] == 0 || self.enrolled[1] == 0 {
            return Err(Error::Degenerate("an arm has no subjects".into()));
        }
        Ok(())
    }

    fn z_from(&self, w: &[f64]) -> Result<f64> {
        let v = self.covariance(w, w);
        if !(v > 0.0) {
            return Err(Error::Degenerate("weighted logrank variance is zero".into()));
        }
        Ok(self.score(w) / v.sqrt())
    }

    /// Kaplan–Meier step points `(time, S(time))` for one arm.
    fn km_steps(&self, arm: Arm) -> Vec<(f64, f64, f64)> {
        let j = arm as usize;
        let mut s = 1.0;
        let mut out = Vec::new();
        for p in &self.points {
            let (n, d) = (p.at_risk[j] as f64, p.events[j] as f64);
            if d > 0.0 {
                s *= 1.0 - d / n;
                // greenwood increment
                let g = if n > d { d / (n * (n - d)) } else { 0.0 };
                out.push((p.time, s, g));
            }
        }
        out
    }

    fn check_horizon(&self, h: f64) -> Result<()> {
        self.check_estimable()?;
        if self.max_time.iter().any(|&m| m < h) {
            return Err(Error::Degenerate(format!("Kaplan–Meier not estimable to month {h} in both arms")));
        }
        Ok(())
    }
}

/// Weighted logrank Z at a cut.
pub fn wlr_statistic(cut: &AnalysisCut, spec: WeightSpec) -> Result<f64> {
    spec.check()?;
    cut.check_estimable()?;
    cut.z_from(&cut.weights(spec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxComboResult {
    pub p_value: f64,
    pub z: Vec<f64>,
    /// Row-major estimated correlation of the components.
    pub corr: Vec<f64>,
    /// Eigenvalue correction applied to the estimated correlation.
    pub clipped: f64,
}

impl MaxComboResult {
    pub fn max_z(&self) -> f64 {
        self.z.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// MaxCombo of weighted logrank components: p = 1 − P(all Z_ℓ < max Z)
/// under the plug-in correlation of the realized cross-variances.
pub fn maxcombo_pvalue(cut: &AnalysisCut, specs: &[WeightSpec]) -> Result<MaxComboResult> {
    if specs.is_empty() {
        return Err(Error::Invalid("MaxCombo needs at least one component".into()));
    }
    for s in specs {
        s.check()?;
    }
    cut.check_estimable()?;
    let ws: Vec<Vec<f64>> = specs.iter().map(|s| cut.weights(*s)).collect();
    maxcombo_from_weights(cut, &ws)
}

pub(crate) fn maxcombo_from_weights(cut: &AnalysisCut, ws: &[Vec<f64>]) -> Result<MaxComboResult> {
    let l = ws.len();
    let mut cov = vec![0.0; l * l];
    for a in 0..l {
        for b in a..l {
            let c = cut.covariance(&ws[a], &ws[b]);
            cov[a * l + b] = c;
            cov[b * l + a] = c;
        }
    }
    let mut z = Vec::with_capacity(l);
    for a in 0..l {
        if !(cov[a * l + a] > 0.0) {
            return Err(Error::Degenerate("weighted logrank variance is zero".into()));
        }
        z.push(cut.score(&ws[a]) / cov[a * l + a].sqrt());
    }
    let mut corr: Vec<f64> = (0..l * l)
        .map(|i| {
            let (a, b) = (i / l, i % l);
            (cov[i] / (cov[a * l + a] * cov[b * l + b]).sqrt()).clamp(-1.0, 1.0)
        })
        .collect();
    let clipped = if l > 2 { clip_psd(&mut corr, l) } else { 0.0 };
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p_value = match l {
        1 => normal::sf(m),
        2 => (2.0 * normal::sf(m) - bvnu(m, m, corr[1])).clamp(0.0, 1.0),
        _ => {
            let dist = JointDistribution {
                labels: (0..l).map(|test| Label { analysis: 0, test }).collect(),
                mean: vec![0.0; l],
                corr: corr.clone(),
                info_fractions: vec![1.0],
                clipped,
            };
            let below = mvn_rectangle(&dist, &vec![f64::NEG_INFINITY; l], &vec![m; l])?;
            (1.0 - below.value).clamp(0.0, 1.0)
        }
    };
    Ok(MaxComboResult { p_value, z, corr, clipped })
}

/// Difference in restricted mean survival to `horizon` (experimental minus
/// control) over its Greenwood-type standard error.
pub fn rmst_statistic(cut: &AnalysisCut, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::Invalid(format!("RMST horizon must be positive, got {horizon}")));
    }
    cut.check_horizon(horizon)?;
    let mut est = [0.0; 2];
    let mut var = [0.0; 2];
    for arm in Arm::BOTH {
        let steps: Vec<_> = cut.km_steps(arm).into_iter().filter(|s| s.0 <= horizon).collect();
        // area under the curve from each step to the horizon
        let mut tail = 0.0;
        let mut v = 0.0;
        let mut next = horizon;
        for &(t, s, g) in steps.iter().rev() {
            tail += s * (next - t);
            next = t;
            v += tail * tail * g;
        }
        est[arm as usize] = tail + next;
        var[arm as usize] = v;
    }
    let v = var[0] + var[1];
    if !(v > 0.0) {
        return Err(Error::Degenerate("RMST variance is zero".into()));
    }
    Ok((est[1] - est[0]) / v.sqrt())
}

/// Difference in Kaplan–Meier survival at `landmark` over its Greenwood
/// standard error.
pub fn milestone_statistic(cut: &AnalysisCut, landmark: f64) -> Result<f64> {
    if !(landmark > 0.0) {
        return Err(Error::Invalid(format!("milestone must be positive, got {landmark}")));
    }
    cut.check_horizon(landmark)?;
    let mut est = [1.0; 2];
    let mut var = [0.0; 2];
    for arm in Arm::BOTH {
        let mut s = 1.0;
        let mut g = 0.0;
        for (t, st, gi) in cut.km_steps(arm) {
            if t > landmark {
                break;
            }
            s = st;
            g += gi;
        }
        est[arm as usize] = s;
        var[arm as usize] = s * s * g;
    }
    let v = var[0] + var[1];
    if !(v > 0.0) {
        return Err(Error::Degenerate("milestone variance is zero".into()));
    }
    Ok((est[1] - est[0]) / v.sqrt())
}
