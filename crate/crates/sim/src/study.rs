//! Replicate studies. Replicates run in fixed-size blocks; each block is
//! summed in replicate order and blocks are combined in block order, so a
//! report depends only on the configuration and seed, not on the worker
//! count.

use crate::data::Sampler;
use crate::stats::{maxcombo_from_weights, milestone_statistic, rmst_statistic, AnalysisCut};
use nphgsd_core::model::{AnalysisSchedule, TrialModel, WeightSpec};
use nphgsd_core::{normal, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimTest {
    Wlr { weight: WeightSpec },
    MaxCombo { weights: Vec<WeightSpec> },
    /// Restricted mean survival difference to `horizon`.
    Rmst { horizon: f64 },
    /// Kaplan–Meier survival difference at `landmark`.
    Milestone { landmark: f64 },
}

impl SimTest {
    pub fn label(&self) -> String {
        match self {
            SimTest::Wlr { weight } => weight.label(),
            SimTest::MaxCombo { weights } => {
                format!("MaxCombo{{{}}}", weights.iter().map(|w| w.label()).collect::<Vec<_>>().join(","))
            }
            SimTest::Rmst { horizon } => format!("RMST({horizon})"),
            SimTest::Milestone { landmark } => format!("Milestone({landmark})"),
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            SimTest::Wlr { weight } => weight.check(),
            SimTest::MaxCombo { weights } if weights.is_empty() => {
                Err(Error::Invalid("MaxCombo needs at least one component".into()))
            }
            SimTest::MaxCombo { weights } => weights.iter().try_for_each(|w| w.check()),
            SimTest::Rmst { horizon: h } | SimTest::Milestone { landmark: h } if !(*h > 0.0) => {
                Err(Error::Invalid(format!("{} needs a positive time", self.label())))
            }
            _ => Ok(()),
        }
    }

    /// Names of the Z columns this test contributes per analysis.
    fn columns(&self) -> Vec<String> {
        match self {
            SimTest::MaxCombo { weights } => weights.iter().map(|w| format!("{}/{}", self.label(), w.label())).collect(),
            t => vec![t.label()],
        }
    }
}

fn default_alpha() -> f64 {
    0.025
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// Subjects per trial.
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub schedule: AnalysisSchedule,
    /// One-sided level for single-analysis rejection.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Efficacy Z bounds per analysis. Without them a test rejects when its
    /// final-analysis Z reaches `z_{1-α}` (MaxCombo: p < α).
    #[serde(default)]
    pub bounds: Option<Vec<f64>>,
    /// Thread count; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Keep every replicate's Z vector in the report.
    #[serde(default)]
    pub keep_z: bool,
}

impl StudyConfig {
    pub fn new(n: usize, replicates: usize, seed: u64, schedule: AnalysisSchedule) -> Self {
        Self { n, replicates, seed, schedule, alpha: default_alpha(), bounds: None, workers: None, keep_z: false }
    }

    pub fn check(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("n must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Invalid("replicates must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        let k = self.schedule.len();
        if k == 0 {
            return Err(Error::Invalid("the schedule has no analyses".into()));
        }
        match &self.schedule {
            AnalysisSchedule::Times(t) if t.iter().any(|x| !(*x > 0.0 && x.is_finite())) => {
                return Err(Error::Invalid("analysis times must be positive".into()))
            }
            AnalysisSchedule::Events(d) if d.iter().any(|x| !(*x >= 1.0 && x.fract() == 0.0)) => {
                return Err(Error::Invalid("event targets must be positive integers".into()))
            }
            _ => {}
        }
        if let Some(b) = &self.bounds {
            if b.len() != k {
                return Err(Error::Dimension { expected: k, got: b.len() });
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Invalid("workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub test: String,
    pub rejection: f64,
    pub mc_se: f64,
    pub replicates: usize,
    /// Cumulative rejection fraction by analysis.
    pub cumulative_rejection: Vec<f64>,
    /// Replicates where the statistic could not be computed (counted as
    /// not rejecting).
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Mean calendar time of each analysis cut.
    pub mean_analysis_time: Vec<f64>,
    pub mean_events: Vec<f64>,
    pub tests: Vec<TestResult>,
    /// `k:label` for every Z column; MaxCombo components are
    /// `k:MaxCombo{..}/component`.
    pub z_labels: Vec<String>,
    /// Replicates where each column was computable.
    pub z_count: Vec<usize>,
    pub z_mean: Vec<f64>,
    pub z_sd: Vec<f64>,
    /// Row-major empirical correlation of the Z columns over replicates
    /// where both are computable.
    pub z_corr: Vec<f64>,
    #[serde(skip)]
    pub z_rows: Option<Vec<Vec<f64>>>,
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).expect("writing to memory");
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 csv")
}

impl SimReport {
    pub fn test(&self, label: &str) -> Option<&TestResult> {
        self.tests.iter().find(|t| t.test == label)
    }

    /// Column index of `label` at analysis `k` (1-based).
    pub fn z_index(&self, k: usize, label: &str) -> Option<usize> {
        self.z_labels.iter().position(|l| *l == format!("{k}:{label}"))
    }

    pub fn z_corr_at(&self, i: usize, j: usize) -> f64 {
        self.z_corr[i * self.z_labels.len() + j]
    }

    /// One row per test.
    pub fn to_csv(&self, decimals: usize) -> String {
        csv_string(|w| {
            w.write_record(["test", "rejection", "mc_se", "replicates", "failures"])?;
            for t in &self.tests {
                w.write_record([
                    t.test.clone(),
                    format!("{:.*}", decimals, t.rejection),
                    format!("{:.*}", decimals, t.mc_se),
                    t.replicates.to_string(),
                    t.failures.to_string(),
                ])?;
            }
            Ok(())
        })
    }

    /// Empirical Z means, SDs and correlations.
    pub fn moments_csv(&self, decimals: usize) -> String {
        csv_string(|w| {
            let mut head = vec!["z".to_string(), "mean".into(), "sd".into()];
            head.extend(self.z_labels.iter().cloned());
            w.write_record(&head)?;
            for i in 0..self.z_labels.len() {
                let mut row =
                    vec![self.z_labels[i].clone(), format!("{:.*}", decimals, self.z_mean[i]), format!("{:.*}", decimals, self.z_sd[i])];
                row.extend((0..self.z_labels.len()).map(|j| format!("{:.*}", decimals, self.z_corr_at(i, j))));
                w.write_record(&row)?;
            }
            Ok(())
        })
    }

    /// Per-replicate Z values, when kept.
    pub fn z_dump_csv(&self) -> Option<String> {
        let rows = self.z_rows.as_ref()?;
        Some(csv_string(|w| {
            let mut head = vec!["replicate".to_string()];
            head.extend(self.z_labels.iter().cloned());
            w.write_record(&head)?;
            for (r, row) in rows.iter().enumerate() {
                let mut rec = vec![r.to_string()];
                rec.extend(row.iter().map(|z| z.to_string()));
                w.write_record(&rec)?;
            }
            Ok(())
        }))
    }
}

/// Per-replicate outcome.
struct Replicate {
    z: Vec<f64>,
    /// First analysis (0-based) at which each test rejects.
    reject_at: Vec<Option<usize>>,
    failed: Vec<bool>,
    times: Vec<f64>,
    events: Vec<f64>,
}

struct Plan<'a> {
    tests: &'a [SimTest],
    weights: Vec<WeightSpec>,
    /// For each test, indices into `weights` (WLR and MaxCombo).
    comps: Vec<Vec<usize>>,
    cols_per_analysis: usize,
}

impl<'a> Plan<'a> {
    fn new(tests: &'a [SimTest]) -> Self {
        let mut weights: Vec<WeightSpec> = Vec::new();
        let mut idx = |w: &WeightSpec| match weights.iter().position(|x| x.normalized() == w.normalized()) {
            Some(i) => i,
            None => {
                weights.push(*w);
                weights.len() - 1
            }
        };
        let comps = tests
            .iter()
            .map(|t| match t {
                SimTest::Wlr { weight } => vec![idx(weight)],
                SimTest::MaxCombo { weights } => weights.iter().map(&mut idx).collect(),
                _ => Vec::new(),
            })
            .collect();
        let cols_per_analysis = tests.iter().map(|t| t.columns().len()).sum();
        Self { tests, weights, comps, cols_per_analysis }
    }
}

fn run_replicate(sampler: &Sampler, plan: &Plan, cfg: &StudyConfig, r: usize) -> Replicate {
    let data = sampler.trial(cfg.n, cfg.seed, r as u64);
    let k = cfg.schedule.len();
    let nt = plan.tests.len();
    let crit = normal::upper_quantile(cfg.alpha);
    let mut out = Replicate {
        z: Vec::with_capacity(k * plan.cols_per_analysis),
        reject_at: vec![None; nt],
        failed: vec![false; nt],
        times: Vec::with_capacity(k),
        events: Vec::with_capacity(k),
    };
    for a in 0..k {
        let cut = match &cfg.schedule {
            AnalysisSchedule::Times(t) => Ok(AnalysisCut::new(&data, t[a])),
            AnalysisSchedule::Events(d) => AnalysisCut::at_events(&data, d[a] as usize),
        };
        let cut = match cut {
            Ok(c) => c,
            Err(_) => {
                out.z.extend(std::iter::repeat_n(f64::NAN, plan.cols_per_analysis));
                out.failed.iter_mut().for_each(|f| *f = true);
                out.times.push(f64::NAN);
                out.events.push(f64::NAN);
                continue;
            }
        };
        out.times.push(cut.time);
        out.events.push(cut.total_events() as f64);
        let estimable = !cut.points.is_empty() && cut.enrolled[0] > 0 && cut.enrolled[1] > 0;
        let w: Vec<Vec<f64>> = if estimable { plan.weights.iter().map(|s| cut.weights(*s)).collect() } else { Vec::new() };
        for (t, test) in plan.tests.iter().enumerate() {
            let ncol = test.columns().len();
            // statistic compared with the bound, and the single-look p-value
            let res: Result<(Vec<f64>, f64, f64)> = match test {
                SimTest::Wlr { .. } | SimTest::MaxCombo { .. } if estimable => {
                    let ws: Vec<Vec<f64>> = plan.comps[t].iter().map(|&i| w[i].clone()).collect();
                    maxcombo_from_weights(&cut, &ws).map(|m| {
                        let mz = m.max_z();
                        (m.z, mz, m.p_value)
                    })
                }
                SimTest::Wlr { .. } | SimTest::MaxCombo { .. } => Err(Error::Degenerate("no events".into())),
                SimTest::Rmst { horizon } => rmst_statistic(&cut, *horizon).map(|z| (vec![z], z, normal::sf(z))),
                SimTest::Milestone { landmark } => milestone_statistic(&cut, *landmark).map(|z| (vec![z], z, normal::sf(z))),
            };
            match res {
                Ok((zs, stat, p)) => {
                    out.z.extend(zs);
                    if out.reject_at[t].is_none() {
                        let reject = match &cfg.bounds {
                            Some(b) => stat >= b[a],
                            None => a + 1 == k && (p < cfg.alpha || (ncol == 1 && stat >= crit)),
                        };
                        if reject {
                            out.reject_at[t] = Some(a);
                        }
                    }
                }
                Err(_) => {
                    out.z.extend(std::iter::repeat_n(f64::NAN, ncol));
                    out.failed[t] = true;
                }
            }
        }
    }
    out
}

/// Sums over replicates where both columns of a pair are finite.
#[derive(Clone, Copy, Default)]
struct PairSums {
    count: u64,
    si: f64,
    sj: f64,
    sii: f64,
    sjj: f64,
    sij: f64,
}

impl PairSums {
    fn add(&mut self, a: f64, b: f64) {
        self.count += 1;
        self.si += a;
        self.sj += b;
        self.sii += a * a;
        self.sjj += b * b;
        self.sij += a * b;
    }

    fn merge(&mut self, o: &PairSums) {
        self.count += o.count;
        self.si += o.si;
        self.sj += o.sj;
        self.sii += o.sii;
        self.sjj += o.sjj;
        self.sij += o.sij;
    }

    /// (mean_i, var_i, var_j, cov)
    fn moments(&self) -> (f64, f64, f64, f64) {
        let c = self.count as f64;
        let (mi, mj) = (self.si / c, self.sj / c);
        (
            mi,
            (self.sii - c * mi * mi) / (c - 1.0),
            (self.sjj - c * mj * mj) / (c - 1.0),
            (self.sij - c * mi * mj) / (c - 1.0),
        )
    }
}

/// Block totals. Pair sums are kept for `i ≤ j` in a row-major `m × m`
/// array.
struct Block {
    rejections: Vec<Vec<u64>>,
    failures: Vec<u64>,
    pairs: Vec<PairSums>,
    time_sum: Vec<f64>,
    event_sum: Vec<f64>,
    cut_count: Vec<u64>,
    rows: Vec<Vec<f64>>,
}

impl Block {
    fn new(nt: usize, k: usize, m: usize) -> Self {
        Self {
            rejections: vec![vec![0; k]; nt],
            failures: vec![0; nt],
            pairs: vec![PairSums::default(); m * m],
            time_sum: vec![0.0; k],
            event_sum: vec![0.0; k],
            cut_count: vec![0; k],
            rows: Vec::new(),
        }
    }

    fn add(&mut self, r: Replicate, keep: bool) {
        for (t, at) in r.reject_at.iter().enumerate() {
            if let Some(a) = at {
                self.rejections[t][*a] += 1;
            }
            self.failures[t] += r.failed[t] as u64;
        }
        for (a, (&tm, &ev)) in r.times.iter().zip(&r.events).enumerate() {
            if tm.is_finite() {
                self.time_sum[a] += tm;
                self.event_sum[a] += ev;
                self.cut_count[a] += 1;
            }
        }
        let m = r.z.len();
        for i in 0..m {
            if !r.z[i].is_finite() {
                continue;
            }
            for j in i..m {
                if r.z[j].is_finite() {
                    self.pairs[i * m + j].add(r.z[i], r.z[j]);
                }
            }
        }
        if keep {
            self.rows.push(r.z);
        }
    }

    fn merge(&mut self, o: Block) {
        for (a, b) in self.rejections.iter_mut().zip(o.rejections) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.failures.iter_mut().zip(o.failures).for_each(|(x, y)| *x += y);
        self.pairs.iter_mut().zip(&o.pairs).for_each(|(x, y)| x.merge(y));
        self.time_sum.iter_mut().zip(o.time_sum).for_each(|(x, y)| *x += y);
        self.event_sum.iter_mut().zip(o.event_sum).for_each(|(x, y)| *x += y);
        self.cut_count.iter_mut().zip(o.cut_count).for_each(|(x, y)| *x += y);
        self.rows.extend(o.rows);
    }
}

/// Simulate `cfg.replicates` trials under `model` and evaluate `tests` at
/// every analysis of the schedule.
pub fn run_study(model: &TrialModel, tests: &[SimTest], cfg: &StudyConfig) -> Result<SimReport> {
    cfg.check()?;
    if tests.is_empty() {
        return Err(Error::Invalid("no tests to simulate".into()));
    }
    for t in tests {
        t.check()?;
    }
    let sampler = Sampler::new(model)?;
    let plan = Plan::new(tests);
    let k = cfg.schedule.len();
    let m = k * plan.cols_per_analysis;
    let nblocks = cfg.replicates.div_ceil(BLOCK);
    let work = || -> Vec<Block> {
        (0..nblocks)
            .into_par_iter()
            .map(|b| {
                let mut blk = Block::new(tests.len(), k, m);
                for r in b * BLOCK..((b + 1) * BLOCK).min(cfg.replicates) {
                    blk.add(run_replicate(&sampler, &plan, cfg, r), cfg.keep_z);
                }
                blk
            })
            .collect()
    };
    let blocks = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Invalid(format!("cannot start {w} workers: {e}")))?
            .install(work),
        None => work(),
    };
    let mut total = Block::new(tests.len(), k, m);
    for b in blocks {
        total.merge(b);
    }

    let reps = cfg.replicates as f64;
    let results = tests
        .iter()
        .enumerate()
        .map(|(t, test)| {
            let mut acc = 0u64;
            let cumulative_rejection: Vec<f64> = total.rejections[t]
                .iter()
                .map(|c| {
                    acc += c;
                    acc as f64 / reps
                })
                .collect();
            let p = *cumulative_rejection.last().unwrap_or(&0.0);
            TestResult {
                test: test.label(),
                rejection: p,
                mc_se: (p * (1.0 - p) / reps).sqrt(),
                replicates: cfg.replicates,
                cumulative_rejection,
                failures: total.failures[t] as usize,
            }
        })
        .collect();

    let z_labels: Vec<String> =
        (1..=k).flat_map(|a| tests.iter().flat_map(move |t| t.columns().into_iter().map(move |c| format!("{a}:{c}")))).collect();
    let diag = |i: usize| total.pairs[i * m + i];
    let z_count: Vec<usize> = (0..m).map(|i| diag(i).count as usize).collect();
    let z_mean: Vec<f64> = (0..m).map(|i| diag(i).moments().0).collect();
    let z_sd: Vec<f64> = (0..m).map(|i| diag(i).moments().1.max(0.0).sqrt()).collect();
    let z_corr = (0..m * m)
        .map(|x| {
            let (i, j) = (x / m, x % m);
            if i == j {
                return 1.0;
            }
            let (_, vi, vj, cov) = total.pairs[i.min(j) * m + i.max(j)].moments();
            cov / (vi * vj).sqrt()
        })
        .collect();

    Ok(SimReport {
        n: cfg.n,
        replicates: cfg.replicates,
        seed: cfg.seed,
        mean_analysis_time: total.time_sum.iter().zip(&total.cut_count).map(|(s, n)| s / *n as f64).collect(),
        mean_events: total.event_sum.iter().zip(&total.cut_count).map(|(s, n)| s / *n as f64).collect(),
        tests: results,
        z_labels,
        z_count,
        z_mean,
        z_sd,
        z_corr,
        z_rows: cfg.keep_z.then_some(total.rows),
    })
}
