//! Joint normal distributions of sequences of test statistics and the
//! integrators that turn them into boundary crossing probabilities.
//!
//! [`gs_crossing`] handles canonical single-test sequences with a recursive
//! grid over the independent increments. [`mvn_rectangle`] handles any
//! correlation structure (MaxCombo) by the Genz separation-of-variables
//! transform with a randomly shifted lattice rule; bivariate problems use
//! Genz's Gauss–Legendre bivariate normal algorithm instead.

use crate::error::{Error, Result};
use crate::model::{TrialModel, WeightSpec};
use crate::normal;
use crate::wlr::{cross_variance, expected_z, DriftForm, Hypothesis, WeightFn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Identifies one statistic: analysis index and test (weight) index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Label {
    pub analysis: usize,
    pub test: usize,
}

/// Multivariate normal law of `(Z_{k,ℓ})` with unit variances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointDistribution {
    pub labels: Vec<Label>,
    pub mean: Vec<f64>,
    /// Row-major `dim × dim` correlation matrix.
    pub corr: Vec<f64>,
    pub info_fractions: Vec<f64>,
    /// Largest eigenvalue correction applied to make `corr` PSD.
    pub clipped: f64,
}

impl JointDistribution {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn corr_at(&self, i: usize, j: usize) -> f64 {
        self.corr[i * self.dim() + j]
    }

    pub fn analyses(&self) -> usize {
        self.labels.iter().map(|l| l.analysis + 1).max().unwrap_or(0)
    }

    /// Indices of the statistics observed at analysis `k`.
    pub fn at_analysis(&self, k: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.labels[i].analysis == k).collect()
    }

    /// True when every analysis has exactly one statistic.
    pub fn is_single_test(&self) -> bool {
        (0..self.analyses()).all(|k| self.at_analysis(k).len() == 1)
    }

    /// Same correlation, different means.
    pub fn with_mean(&self, mean: Vec<f64>) -> Result<Self> {
        if mean.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: mean.len() });
        }
        Ok(Self { mean, ..self.clone() })
    }

    /// Null version: all means zero.
    pub fn centered(&self) -> Self {
        Self { mean: vec![0.0; self.dim()], ..self.clone() }
    }

    /// Marginal law of the statistics at the first `k` analyses.
    pub fn leading(&self, k: usize) -> Self {
        let idx: Vec<usize> = (0..self.dim()).filter(|&i| self.labels[i].analysis < k).collect();
        self.select(&idx)
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let n = self.dim();
        Self {
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            corr: idx.iter().flat_map(|&i| idx.iter().map(move |&j| self.corr[i * n + j])).collect(),
            info_fractions: self.info_fractions.clone(),
            clipped: self.clipped,
        }
    }

    /// CSV of the correlation matrix with `k:ℓ` labels.
    pub fn corr_csv(&self) -> String {
        let names: Vec<String> = self.labels.iter().map(|l| format!("{}:{}", l.analysis + 1, l.test)).collect();
        let mut out = format!("label,mean,{}\n", names.join(","));
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|j| format!("{}", self.corr_at(i, j))).collect();
            out.push_str(&format!("{},{},{}\n", names[i], self.mean[i], row.join(",")));
        }
        out
    }
}

fn check_fractions(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::Invalid("at least one analysis is required".into()));
    }
    let mut prev = 0.0;
    for &x in t {
        if !(x > prev && x <= 1.0 + 1e-12) {
            return Err(Error::Invalid(format!("information fractions must increase within (0, 1]: {t:?}")));
        }
        prev = x;
    }
    if (t[t.len() - 1] - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid("the last information fraction must be 1".into()));
    }
    Ok(())
}

/// Canonical joint distribution: `Corr(Z_i, Z_j) = √(t_i/t_j)`, `i ≤ j`.
pub fn canonical(info_fractions: &[f64], expected_z: &[f64]) -> Result<JointDistribution> {
    check_fractions(info_fractions)?;
    let k = info_fractions.len();
    if expected_z.len() != k {
        return Err(Error::Dimension { expected: k, got: expected_z.len() });
    }
    let mut corr = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (a, b) = (info_fractions[i.min(j)], info_fractions[i.max(j)]);
            corr[i * k + j] = (a / b).sqrt();
        }
    }
    Ok(JointDistribution {
        labels: (0..k).map(|a| Label { analysis: a, test: 0 }).collect(),
        mean: expected_z.to_vec(),
        corr,
        info_fractions: info_fractions.to_vec(),
        clipped: 0.0,
    })
}

/// Joint distribution of weighted logrank statistics, with the set of
/// tests used at each analysis given by `plan[k]` (indices into `weights`).
///
/// Covariances follow from independent increments: for `τ_k ≤ τ_l`,
/// `Cov(U_{k,i}, U_{l,j}) = V_{ij}(τ_k)`, with `V_{ij}` the cross-variance
/// integral under `hyp`. Means are the expected Z on the same variance
/// scale in the drift form `form`. `info_fractions` are those of the first
/// weight.
pub fn wlr_joint(
    model: &TrialModel,
    weights: &[WeightSpec],
    analysis_times: &[f64],
    plan: &[Vec<usize>],
    n_planned: f64,
    hyp: Hypothesis,
    form: DriftForm,
) -> Result<JointDistribution> {
    if weights.is_empty() || analysis_times.is_empty() {
        return Err(Error::Invalid("at least one weight and one analysis are required".into()));
    }
    if plan.len() != analysis_times.len() {
        return Err(Error::Dimension { expected: analysis_times.len(), got: plan.len() });
    }
    for w in analysis_times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Invalid(format!("analysis times must increase: {analysis_times:?}")));
        }
    }
    let fns: Vec<WeightFn> = weights.iter().map(|w| WeightFn::new(*w, model)).collect::<Result<_>>()?;
    let kk = analysis_times.len();
    let l = weights.len();
    // v[k][i][j]
    let mut v = vec![vec![vec![0.0; l]; l]; kk];
    for (k, &t) in analysis_times.iter().enumerate() {
        for i in 0..l {
            for j in i..l {
                let x = cross_variance(model, &fns[i], &fns[j], t, hyp)?;
                v[k][i][j] = x;
                v[k][j][i] = x;
            }
        }
    }
    let mut labels = Vec::new();
    let mut mean = Vec::new();
    for (k, tests) in plan.iter().enumerate() {
        if tests.is_empty() {
            return Err(Error::Invalid(format!("analysis {} has no test", k + 1)));
        }
        for &i in tests {
            if i >= l {
                return Err(Error::Invalid(format!("analysis {} refers to unknown test {i}", k + 1)));
            }
            if !(v[k][i][i] > 0.0) {
                return Err(Error::Degenerate(format!(
                    "{} has zero variance at analysis {}",
                    weights[i].label(),
                    k + 1
                )));
            }
            labels.push(Label { analysis: k, test: i });
            mean.push(expected_z(model, weights[i], analysis_times[k], n_planned, hyp, form)?);
        }
    }
    let n = labels.len();
    let mut corr = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            let (la, lb) = (labels[a], labels[b]);
            let (first, second) = if la.analysis <= lb.analysis { (la, lb) } else { (lb, la) };
            let cov = v[first.analysis][first.test][second.test];
            corr[a * n + b] = cov / (v[first.analysis][first.test][first.test] * v[second.analysis][second.test][second.test]).sqrt();
        }
    }
    let last = v[kk - 1][0][0];
    let info_fractions = (0..kk).map(|k| v[k][0][0] / last).collect();
    let clipped = clip_psd(&mut corr, n);
    Ok(JointDistribution { labels, mean, corr, info_fractions, clipped })
}

/// `{LR, FH, …}` at every analysis: the MaxCombo joint distribution.
pub fn maxcombo_corr(
    model: &TrialModel,
    weights: &[WeightSpec],
    analysis_times: &[f64],
    n_planned: f64,
    hyp: Hypothesis,
    form: DriftForm,
) -> Result<JointDistribution> {
    let plan = vec![(0..weights.len()).collect(); analysis_times.len()];
    wlr_joint(model, weights, analysis_times, &plan, n_planned, hyp, form)
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations. Returns the
/// eigenvalues and row-major eigenvectors (columns).
fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

/// Clip negative eigenvalues of a correlation matrix and restore the unit
/// diagonal. Returns the largest clipped magnitude (0 when already PSD).
pub fn clip_psd(corr: &mut [f64], n: usize) -> f64 {
    let (vals, vecs) = jacobi_eigen(corr, n);
    let worst = vals.iter().cloned().fold(0.0, f64::min);
    if worst >= -1e-12 {
        return 0.0;
    }
    for i in 0..n {
        for j in 0..n {
            corr[i * n + j] = (0..n).map(|k| vecs[i * n + k] * vals[k].max(0.0) * vecs[j * n + k]).sum();
        }
    }
    let d: Vec<f64> = (0..n).map(|i| corr[i * n + i].sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            corr[i * n + j] /= d[i] * d[j];
        }
    }
    -worst
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    jacobi_eigen(a, n).0.into_iter().fold(f64::INFINITY, f64::min)
}

/// A probability estimate with its estimated absolute error (three
/// standard errors over the random shifts; 0 for exact paths).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MvnEstimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnOptions {
    pub abs_tol: f64,
    /// Lattice points per shift at the first pass; doubled until `abs_tol`
    /// is met or `max_points` is reached.
    pub min_points: usize,
    pub max_points: usize,
    pub shifts: usize,
    pub seed: u64,
    /// Reorder variables by expected interval probability. Reordering
    /// depends on the limits, so root finders turn it off to keep the
    /// estimate continuous; the variables are then taken in reverse.
    pub reorder: bool,
}

impl Default for MvnOptions {
    fn default() -> Self {
        Self { abs_tol: 5e-6, min_points: 1 << 11, max_points: 1 << 18, shifts: 12, seed: 20240917, reorder: true }
    }
}

impl MvnOptions {
    /// Fixed point set, fixed reverse order: a deterministic function of the
    /// limits that is continuous in them.
    pub fn fixed(points: usize) -> Self {
        Self { abs_tol: 0.0, min_points: points, max_points: points, reorder: false, ..Self::default() }
    }
}

/// `P(lower ≤ Z ≤ upper)` for `Z` following `dist`.
pub fn mvn_rectangle(dist: &JointDistribution, lower: &[f64], upper: &[f64]) -> Result<MvnEstimate> {
    mvn_rectangle_with(dist, lower, upper, &MvnOptions::default())
}

pub fn mvn_rectangle_with(dist: &JointDistribution, lower: &[f64], upper: &[f64], opts: &MvnOptions) -> Result<MvnEstimate> {
    let n = dist.dim();
    if lower.len() != n {
        return Err(Error::Dimension { expected: n, got: lower.len() });
    }
    if upper.len() != n {
        return Err(Error::Dimension { expected: n, got: upper.len() });
    }
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    let mut idx = Vec::with_capacity(n);
    for i in 0..n {
        if lower[i].is_nan() || upper[i].is_nan() {
            return Err(Error::Invalid("NaN integration limit".into()));
        }
        if lower[i] >= upper[i] {
            return Ok(MvnEstimate { value: 0.0, error: 0.0 });
        }
        if lower[i] == f64::NEG_INFINITY && upper[i] == f64::INFINITY {
            continue;
        }
        idx.push(i);
        a.push(lower[i] - dist.mean[i]);
        b.push(upper[i] - dist.mean[i]);
    }
    let m = idx.len();
    let corr: Vec<f64> = idx.iter().flat_map(|&i| idx.iter().map(move |&j| dist.corr_at(i, j))).collect();
    match m {
        0 => Ok(MvnEstimate { value: 1.0, error: 0.0 }),
        1 => Ok(MvnEstimate { value: interval(a[0], b[0]), error: 0.0 }),
        2 => Ok(MvnEstimate { value: bvn_rectangle(a[0], b[0], a[1], b[1], corr[1]).clamp(0.0, 1.0), error: 0.0 }),
        _ => Ok(genz_qmc(&corr, m, &a, &b, opts)),
    }
}

fn interval(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal::sf(a) - normal::sf(b)
    } else {
        normal::cdf(b) - normal::cdf(a)
    }
}

/// `P(a_1 < X < b_1, a_2 < Y < b_2)` for a standard bivariate normal with
/// correlation `r`.
pub fn bvn_rectangle(a1: f64, b1: f64, a2: f64, b2: f64, r: f64) -> f64 {
    bvnu(a1, a2, r) - bvnu(a1, b2, r) - bvnu(b1, a2, r) + bvnu(b1, b2, r)
}

const GL_W: [&[f64]; 3] = [
    &[0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
    &[
        0.04717533638651177,
        0.1069393259953183,
        0.1600783285433464,
        0.2031674267230659,
        0.2334925365383547,
        0.2491470458134029,
    ],
    &[
        0.01761400713915212,
        0.04060142980038694,
        0.06267204833410906,
        0.08327674157670475,
        0.1019301198172404,
        0.1181945319615184,
        0.1316886384491766,
        0.1420961093183821,
        0.1491729864726037,
        0.1527533871307259,
    ],
];
const GL_X: [&[f64]; 3] = [
    &[-0.9324695142031522, -0.6612093864662647, -0.2386191860831970],
    &[
        -0.9815606342467191,
        -0.9041172563704750,
        -0.7699026741943050,
        -0.5873179542866171,
        -0.3678314989981802,
        -0.1252334085114692,
    ],
    &[
        -0.9931285991850949,
        -0.9639719272779138,
        -0.9122344282513259,
        -0.8391169718222188,
        -0.7463319064601508,
        -0.6360536807265150,
        -0.5108670019508271,
        -0.3737060887154196,
        -0.2277858511416451,
        -0.07652652113349733,
    ],
];

/// Upper orthant `P(X > h, Y > k)` of a standard bivariate normal, after
/// Genz (2004), accurate to about 1e-15.
pub fn bvnu(h: f64, k: f64, r: f64) -> f64 {
    use std::f64::consts::PI;
    let two_pi = 2.0 * PI;
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { normal::sf(k) };
    }
    if k == f64::NEG_INFINITY {
        return normal::sf(h);
    }
    let ng = if r.abs() < 0.3 {
        0
    } else if r.abs() < 0.75 {
        1
    } else {
        2
    };
    let (w, x) = (GL_W[ng], GL_X[ng]);
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for i in 0..w.len() {
            for sgn in [1.0, -1.0] {
                let sn = (asr * (sgn * x[i] + 1.0) / 2.0).sin();
                bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return bvn * asr / (2.0 * two_pi) + normal::sf(h) * normal::sf(k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a * (-(bs / as_ + hk) / 2.0).exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp() * two_pi.sqrt() * normal::cdf(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for i in 0..w.len() {
            let xs = (a * (x[i] + 1.0)).powi(2);
            let rs = (1.0 - xs).sqrt();
            bvn += a * w[i] * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
            let xs = as_ * (1.0 - x[i]).powi(2) / 4.0;
            let rs = (1.0 - xs).sqrt();
            bvn += a * w[i] * (-(bs / xs + hk) / 2.0).exp() * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs - (1.0 + c * xs * (1.0 + d * xs)));
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn + normal::sf(h.max(k))
    } else {
        let mut v = -bvn;
        if k > h {
            v += if h < 0.0 { normal::cdf(k) - normal::cdf(h) } else { normal::sf(h) - normal::sf(k) };
        }
        v
    }
}

/// Lower-triangular Cholesky factor of `corr` with optional Genz–Bretz
/// variable reordering. Returns the factor and the permuted limits.
fn ordered_cholesky(corr: &[f64], n: usize, a: &[f64], b: &[f64], reorder: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    // Without reordering, integrate the latest analyses first: their limits
    // are usually the tightest.
    let rev = |v: &[f64]| if reorder { v.to_vec() } else { v.iter().rev().copied().collect::<Vec<f64>>() };
    let mut c = if reorder {
        corr.to_vec()
    } else {
        (0..n * n).map(|k| corr[(n - 1 - k / n) * n + (n - 1 - k % n)]).collect()
    };
    let mut a = rev(a);
    let mut b = rev(b);
    let mut l = vec![0.0; n * n];
    let mut y = vec![0.0; n];
    let swap = |c: &mut Vec<f64>, l: &mut Vec<f64>, a: &mut Vec<f64>, b: &mut Vec<f64>, i: usize, j: usize| {
        if i == j {
            return;
        }
        a.swap(i, j);
        b.swap(i, j);
        for k in 0..n {
            c.swap(i * n + k, j * n + k);
        }
        for k in 0..n {
            c.swap(k * n + i, k * n + j);
        }
        for k in 0..n {
            l.swap(i * n + k, j * n + k);
        }
    };
    for i in 0..n {
        if reorder {
            let mut best = i;
            let mut best_p = f64::INFINITY;
            for j in i..n {
                let s: f64 = (0..i).map(|k| l[j * n + k] * y[k]).sum();
                let var = c[j * n + j] - (0..i).map(|k| l[j * n + k].powi(2)).sum::<f64>();
                let sd = var.max(0.0).sqrt();
                if sd <= 1e-12 {
                    continue;
                }
                let p = interval((a[j] - s) / sd, (b[j] - s) / sd);
                if p < best_p {
                    best_p = p;
                    best = j;
                }
            }
            swap(&mut c, &mut l, &mut a, &mut b, i, best);
        }
        let var = c[i * n + i] - (0..i).map(|k| l[i * n + k].powi(2)).sum::<f64>();
        let lii = if var > 1e-14 { var.sqrt() } else { 0.0 };
        l[i * n + i] = lii;
        for j in i + 1..n {
            l[j * n + i] = if lii > 0.0 {
                (c[j * n + i] - (0..i).map(|k| l[j * n + k] * l[i * n + k]).sum::<f64>()) / lii
            } else {
                0.0
            };
        }
        if reorder && lii > 0.0 {
            let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
            let (lo, hi) = ((a[i] - s) / lii, (b[i] - s) / lii);
            let p = interval(lo, hi);
            y[i] = if p > 1e-300 { (pdf_or0(lo) - pdf_or0(hi)) / p } else if lo > 0.0 { lo } else { hi };
        }
    }
    (l, a, b)
}

fn pdf_or0(x: f64) -> f64 {
    if x.is_finite() {
        normal::pdf(x)
    } else {
        0.0
    }
}

/// One evaluation of the separated integrand at `w ∈ [0,1]^{n-1}`.
fn sov_integrand(l: &[f64], n: usize, a: &[f64], b: &[f64], w: &[f64], y: &mut [f64]) -> f64 {
    let mut f = 1.0;
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        let lii = l[i * n + i];
        let (d, e) = if lii > 0.0 {
            (normal::cdf((a[i] - s) / lii), normal::cdf((b[i] - s) / lii))
        } else if a[i] <= s && s <= b[i] {
            (0.0, 1.0)
        } else {
            (0.0, 0.0)
        };
        f *= e - d;
        if f <= 0.0 {
            return 0.0;
        }
        if i + 1 < n {
            let u = (d + w[i] * (e - d)).clamp(1e-300, 1.0 - 1e-16);
            y[i] = if lii > 0.0 { normal::quantile(u) } else { 0.0 };
        }
    }
    f
}

const PRIMES: [f64; 32] = [
    2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0, 59.0, 61.0, 67.0, 71.0, 73.0,
    79.0, 83.0, 89.0, 97.0, 101.0, 103.0, 107.0, 109.0, 113.0, 127.0, 131.0,
];

fn genz_qmc(corr: &[f64], n: usize, a: &[f64], b: &[f64], opts: &MvnOptions) -> MvnEstimate {
    let (l, a, b) = ordered_cholesky(corr, n, a, b, opts.reorder);
    let dim = n - 1;
    let alpha: Vec<f64> = (0..dim).map(|i| PRIMES[i % PRIMES.len()].sqrt().fract() + (i / PRIMES.len()) as f64 * 0.1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let shifts: Vec<Vec<f64>> = (0..opts.shifts.max(2)).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let mut sums = vec![0.0; shifts.len()];
    let mut done = 0usize;
    let mut target = opts.min_points.max(1);
    let mut w = vec![0.0; dim];
    let mut y = vec![0.0; n];
    loop {
        for (s, shift) in shifts.iter().enumerate() {
            for j in done..target {
                let jf = (j + 1) as f64;
                for i in 0..dim {
                    let x = (jf * alpha[i] + shift[i]).fract();
                    w[i] = (2.0 * x - 1.0).abs();
                }
                sums[s] += sov_integrand(&l, n, &a, &b, &w, &mut y);
            }
        }
        done = target;
        let m = shifts.len() as f64;
        let means: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
        let value = means.iter().sum::<f64>() / m;
        let var = means.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (m * (m - 1.0));
        let error = 3.0 * var.sqrt();
        if error <= opts.abs_tol || done >= opts.max_points {
            return MvnEstimate { value: value.clamp(0.0, 1.0), error };
        }
        target = (done * 2).min(opts.max_points);
    }
}

/// Incremental boundary crossing probabilities of a single-test sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crossing {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

/// Base number of grid nodes per analysis in [`gs_crossing`].
pub const GRID_NODES: usize = 181;
const GRID_SPAN: f64 = 6.0;

/// Crossing probabilities of a canonical sequence by recursive numerical
/// integration over the continuation region. `upper[k]` is
/// `P(Z_k ≥ b_k, a_j < Z_j < b_j ∀ j < k)`, `lower[k]` likewise with
/// `Z_k ≤ a_k`. The grid is doubled until successive totals agree to 1e-7.
pub fn gs_crossing(dist: &JointDistribution, upper: &[f64], lower: &[f64]) -> Result<Crossing> {
    if !dist.is_single_test() {
        return Err(Error::Invalid("gs_crossing needs one statistic per analysis".into()));
    }
    let k = dist.dim();
    if upper.len() != k {
        return Err(Error::Dimension { expected: k, got: upper.len() });
    }
    if lower.len() != k {
        return Err(Error::Dimension { expected: k, got: lower.len() });
    }
    for i in 0..k {
        if lower[i] > upper[i] {
            return Err(Error::Invalid(format!("analysis {}: lower bound {} above upper bound {}", i + 1, lower[i], upper[i])));
        }
    }
    // information fractions implied by the correlation chain
    let mut t = vec![1.0; k];
    for i in (0..k.saturating_sub(1)).rev() {
        t[i] = t[i + 1] * dist.corr_at(i, i + 1).powi(2);
    }
    let mut nodes = GRID_NODES;
    let mut prev = grid_pass(&dist.mean, &t, upper, lower, nodes);
    loop {
        nodes = 2 * nodes - 1;
        let next = grid_pass(&dist.mean, &t, upper, lower, nodes);
        let diff = next.upper.iter().zip(&prev.upper).chain(next.lower.iter().zip(&prev.lower)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if diff < 1e-7 || nodes > 6000 {
            return Ok(next);
        }
        prev = next;
    }
}

fn grid_pass(mean: &[f64], t: &[f64], upper: &[f64], lower: &[f64], nodes: usize) -> Crossing {
    let k = mean.len();
    let mut up = vec![0.0; k];
    let mut lo = vec![0.0; k];
    // grid and density-times-weight of Z_{i} on the continuation region
    let mut z: Vec<f64> = Vec::new();
    let mut h: Vec<f64> = Vec::new();
    for i in 0..k {
        if i == 0 {
            up[0] = normal::sf(upper[0] - mean[0]);
            lo[0] = normal::cdf(lower[0] - mean[0]);
        } else {
            // S_i = Z_i √t_i; increment mean and variance
            let dt = t[i] - t[i - 1];
            let dm = mean[i] * t[i].sqrt() - mean[i - 1] * t[i - 1].sqrt();
            let sd = dt.sqrt();
            let (st, sp) = (t[i].sqrt(), t[i - 1].sqrt());
            let (mut u, mut l) = (0.0, 0.0);
            for (zj, hj) in z.iter().zip(&h) {
                let c = zj * sp + dm;
                u += hj * normal::sf((upper[i] * st - c) / sd);
                l += hj * normal::cdf((lower[i] * st - c) / sd);
            }
            up[i] = u;
            lo[i] = l;
        }
        if i + 1 == k {
            break;
        }
        let lo_lim = lower[i].max(mean[i] - GRID_SPAN);
        let hi_lim = upper[i].min(mean[i] + GRID_SPAN);
        let (nz, nh) = if hi_lim <= lo_lim {
            (vec![], vec![])
        } else {
            let m = nodes;
            let step = (hi_lim - lo_lim) / (m - 1) as f64;
            let grid: Vec<f64> = (0..m).map(|j| lo_lim + step * j as f64).collect();
            let simpson: Vec<f64> = (0..m)
                .map(|j| step / 3.0 * if j == 0 || j == m - 1 { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 })
                .collect();
            let dens: Vec<f64> = if i == 0 {
                grid.iter().map(|x| normal::pdf(x - mean[0])).collect()
            } else {
                let dt = t[i] - t[i - 1];
                let dm = mean[i] * t[i].sqrt() - mean[i - 1] * t[i - 1].sqrt();
                let sd = dt.sqrt();
                let (st, sp) = (t[i].sqrt(), t[i - 1].sqrt());
                grid.iter()
                    .map(|x| z.iter().zip(&h).map(|(zj, hj)| hj * normal::pdf((x * st - zj * sp - dm) / sd)).sum::<f64>() * st / sd)
                    .collect()
            };
            (grid, dens.iter().zip(&simpson).map(|(d, w)| d * w).collect())
        };
        z = nz;
        h = nh;
    }
    Crossing { upper: up, lower: lo }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn canonical_entries() {
        let d = canonical(&[0.5, 1.0], &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(d.corr_at(0, 1), 0.5f64.sqrt(), epsilon = 1e-15);
        let t = [0.32, 0.63, 0.84, 1.0];
        let d = canonical(&t, &[0.0; 4]).unwrap();
        for i in 0..4 {
            for j in i..4 {
                assert_abs_diff_eq!(d.corr_at(i, j), (t[i] / t[j]).sqrt(), epsilon = 1e-15);
                assert_eq!(d.corr_at(i, j), d.corr_at(j, i));
            }
        }
        assert!(canonical(&[0.6, 0.5, 1.0], &[0.0; 3]).is_err());
    }

    #[test]
    fn bvn_orthants() {
        for r in [-0.99, -0.95, -0.8, -0.5, -0.1, 0.0, 0.2, 0.5, 0.8, 0.93, 0.999] {
            let want = 0.25 + f64::asin(r) / (2.0 * std::f64::consts::PI);
            assert_abs_diff_eq!(bvnu(0.0, 0.0, r), want, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(bvnu(1.0, 2.0, 0.0), normal::sf(1.0) * normal::sf(2.0), epsilon = 1e-15);
    }

    #[test]
    fn one_dimensional_rectangle() {
        let d = canonical(&[1.0], &[0.0]).unwrap();
        let p = mvn_rectangle(&d, &[f64::NEG_INFINITY], &[1.959964]).unwrap();
        assert_abs_diff_eq!(p.value, 0.975, epsilon = 1e-6);
        let z = mvn_rectangle(&d, &[0.3], &[0.3]).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn qmc_matches_bvn_embedded() {
        // a 3-dim problem whose third variable is unconstrained in effect
        let corr = vec![1.0, 0.6, 0.3, 0.6, 1.0, 0.2, 0.3, 0.2, 1.0];
        let d = JointDistribution {
            labels: (0..3).map(|i| Label { analysis: i, test: 0 }).collect(),
            mean: vec![0.1, -0.2, 0.0],
            corr,
            info_fractions: vec![],
            clipped: 0.0,
        };
        let p = mvn_rectangle(&d, &[-1.0, -0.5, -40.0], &[1.5, 2.0, 40.0]).unwrap();
        let exact = bvn_rectangle(-1.1, 1.4, -0.3, 2.2, 0.6);
        assert_abs_diff_eq!(p.value, exact, epsilon = 2e-6);
    }

    #[test]
    fn grid_matches_known_design() {
        let d = canonical(&[1.0], &[0.0]).unwrap();
        let c = gs_crossing(&d, &[1.959964], &[f64::NEG_INFINITY]).unwrap();
        assert_abs_diff_eq!(c.upper[0], 0.025, epsilon = 1e-6);
        let d = canonical(&[0.5, 1.0], &[0.0, 0.0]).unwrap();
        let c = gs_crossing(&d, &[2.9626, 1.9686], &[f64::NEG_INFINITY; 2]).unwrap();
        assert_abs_diff_eq!(c.upper.iter().sum::<f64>(), 0.025, epsilon = 1e-4);
        let c = gs_crossing(&d, &[f64::INFINITY; 2], &[f64::NEG_INFINITY; 2]).unwrap();
        assert_eq!(c.upper.iter().chain(&c.lower).cloned().fold(0.0, f64::max), 0.0);
    }

    #[test]
    fn grid_agrees_with_mvn() {
        let t = [0.3, 0.55, 0.8, 1.0];
        let mean = [0.8, 1.2, 1.6, 1.9];
        let d = canonical(&t, &mean).unwrap();
        let b = [3.2, 2.8, 2.4, 2.0];
        let a = [-0.5, 0.2, 0.9, 2.0];
        let g = gs_crossing(&d, &b, &a).unwrap();
        for k in 0..4 {
            let sub = d.leading(k + 1);
            let mut lo: Vec<f64> = a[..k].to_vec();
            let mut hi: Vec<f64> = b[..k].to_vec();
            lo.push(b[k]);
            hi.push(f64::INFINITY);
            let p = mvn_rectangle(&sub, &lo, &hi).unwrap();
            assert_abs_diff_eq!(g.upper[k], p.value, epsilon = 1e-5);
            lo[k] = f64::NEG_INFINITY;
            hi[k] = a[k];
            let p = mvn_rectangle(&sub, &lo, &hi).unwrap();
            assert_abs_diff_eq!(g.lower[k], p.value, epsilon = 1e-5);
        }
    }

    #[test]
    fn clipping_restores_psd() {
        let mut c = vec![1.0, 0.9, 0.9, 0.9, 1.0, -0.9, 0.9, -0.9, 1.0];
        let clipped = clip_psd(&mut c, 3);
        assert!(clipped > 0.0);
        assert!(min_eigenvalue(&c, 3) > -1e-10);
        for i in 0..3 {
            assert_abs_diff_eq!(c[i * 3 + i], 1.0, epsilon = 1e-12);
        }
    }
}
