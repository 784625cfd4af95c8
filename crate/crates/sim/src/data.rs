use nphgsd_core::model::{Arm, PiecewiseConstant, TrialModel};
use nphgsd_core::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

/// One simulated subject. Times after entry are in months from the
/// subject's own enrollment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectRecord {
    /// Calendar enrollment time.
    pub enroll_time: f64,
    pub arm: Arm,
    /// Latent event time; infinite when the hazard vanishes.
    pub event_time: f64,
    /// Latent dropout time.
    pub dropout_time: f64,
}

impl SubjectRecord {
    /// Observed time and event flag at calendar cut `tau`, or `None` when
    /// the subject is not yet enrolled.
    pub fn observed(&self, tau: f64) -> Option<(f64, bool)> {
        let follow = tau - self.enroll_time;
        if follow < 0.0 {
            return None;
        }
        // compare on the calendar scale so a cut placed at an event's
        // calendar time includes it
        if self.event_time <= self.dropout_time && self.enroll_time + self.event_time <= tau {
            Some((self.event_time, true))
        } else {
            Some((self.dropout_time.min(follow), false))
        }
    }

    /// Calendar time of an observed event, if the event precedes dropout.
    pub fn calendar_event(&self) -> Option<f64> {
        (self.event_time <= self.dropout_time && self.event_time.is_finite()).then(|| self.enroll_time + self.event_time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub subjects: Vec<SubjectRecord>,
    pub seed: u64,
    /// Replicate index (random stream) the dataset was drawn from.
    pub stream: u64,
}

impl TrialDataset {
    /// Calendar time of the `d`-th observed event (1-based).
    pub fn time_of_event(&self, d: usize) -> Result<f64> {
        if d == 0 {
            return Err(Error::Invalid("event count must be at least 1".into()));
        }
        let mut times: Vec<f64> = self.subjects.iter().filter_map(|s| s.calendar_event()).collect();
        if times.len() < d {
            return Err(Error::Infeasible(format!("only {} events ever occur, {} requested", times.len(), d)));
        }
        let (_, t, _) = times.select_nth_unstable_by(d - 1, |a, b| a.total_cmp(b));
        Ok(*t)
    }
}

/// Inverse of `Λ(t) = ∫_0^t f` at `e`; infinite if `Λ` stays below `e`.
pub(crate) fn inverse_cumulative(f: &PiecewiseConstant, e: f64) -> f64 {
    let bp = f.breakpoints();
    let v = f.values();
    let mut acc = 0.0;
    for i in 0..v.len() {
        let end = bp.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let mass = v[i] * (end - bp[i]);
        if acc + mass >= e {
            return if v[i] > 0.0 { bp[i] + (e - acc) / v[i] } else { end };
        }
        acc += mass;
    }
    f64::INFINITY
}

/// Precomputed sampling pieces for one model.
#[derive(Debug, Clone)]
pub(crate) struct Sampler {
    enroll: PiecewiseConstant,
    enroll_total: f64,
    p_experimental: f64,
    hazard: [PiecewiseConstant; 2],
    dropout: [PiecewiseConstant; 2],
}

impl Sampler {
    pub(crate) fn new(model: &TrialModel) -> Result<Self> {
        if !model.strata.is_empty() {
            return Err(Error::Invalid("stratified simulation is not supported".into()));
        }
        let enroll = model.enrollment();
        let enroll_total = enroll.integral(model.enroll_duration);
        if !(enroll_total > 0.0) {
            return Err(Error::Invalid("enrollment rate integrates to zero".into()));
        }
        let r = model.ratio;
        if !(r.control >= 0.0 && r.experimental >= 0.0 && r.control + r.experimental > 0.0) {
            return Err(Error::Invalid("randomization probabilities must be non-negative".into()));
        }
        Ok(Self {
            enroll,
            enroll_total,
            p_experimental: r.experimental / (r.control + r.experimental),
            hazard: [model.arm_hazard(Arm::Control), model.arm_hazard(Arm::Experimental)],
            dropout: [model.dropout.control.clone(), model.dropout.experimental.clone()],
        })
    }

    pub(crate) fn subject(&self, rng: &mut ChaCha8Rng) -> SubjectRecord {
        let u: f64 = rng.random();
        let enroll_time = inverse_cumulative(&self.enroll, u * self.enroll_total);
        let arm = if rng.random::<f64>() < self.p_experimental { Arm::Experimental } else { Arm::Control };
        let j = arm as usize;
        let e1 = -(1.0 - rng.random::<f64>()).ln();
        let e2 = -(1.0 - rng.random::<f64>()).ln();
        SubjectRecord {
            enroll_time,
            arm,
            event_time: inverse_cumulative(&self.hazard[j], e1),
            dropout_time: inverse_cumulative(&self.dropout[j], e2),
        }
    }

    pub(crate) fn trial(&self, n: usize, seed: u64, stream: u64) -> TrialDataset {
        let mut rng = rng_for(seed, stream);
        TrialDataset { subjects: (0..n).map(|_| self.subject(&mut rng)).collect(), seed, stream }
    }
}

/// Generator for replicate `stream` of a study seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulate `n` subjects: enrollment times i.i.d. with density
/// proportional to the enrollment rate on `[0, τ_a]`, Bernoulli arms,
/// piecewise exponential event and dropout times by inversion.
pub fn simulate_trial(model: &TrialModel, n: usize, seed: u64) -> Result<TrialDataset> {
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    Ok(Sampler::new(model)?.trial(n, seed, 0))
}
