//! Piecewise-smooth quadrature.
//!
//! Every integral in the crate has an integrand that is smooth between known
//! breakpoints (interval ends of the piecewise rates, enrollment ends seen
//! from the analysis time, weight change points). Integration is split at
//! those points and each segment is handled by 15-point Gauss–Legendre,
//! bisected adaptively while the one-panel and two-panel estimates disagree.

use std::sync::OnceLock;

const ORDER: usize = 15;
const REL_TOL: f64 = 1e-12;
const ABS_TOL: f64 = 1e-15;
const MAX_DEPTH: u32 = 40;

struct Rule {
    nodes: [f64; ORDER],
    weights: [f64; ORDER],
}

fn rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = ORDER;
        let mut nodes = [0.0; ORDER];
        let mut weights = [0.0; ORDER];
        for i in 0..n {
            // Newton iteration on P_n from the Chebyshev-type initial guess.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        Rule { nodes, weights }
    })
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let r = rule();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    r.nodes
        .iter()
        .zip(r.weights.iter())
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = panel(f, a, m);
    let right = panel(f, m, b);
    let split = left + right;
    if depth >= MAX_DEPTH || (split - whole).abs() <= REL_TOL * split.abs() + ABS_TOL {
        return split;
    }
    adapt(f, a, m, left, depth + 1) + adapt(f, m, b, right, depth + 1)
}

/// Integrate `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    integrate_segments(f, &[a, b])
}

/// Integrate over consecutive segments `[cuts[i], cuts[i+1]]`.
pub fn integrate_segments<F: Fn(f64) -> f64>(f: F, cuts: &[f64]) -> f64 {
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let whole = panel(&f, w[0], w[1]);
            adapt(&f, w[0], w[1], whole, 0)
        })
        .sum()
}

/// Sorted, deduplicated cut points: `a`, `b`, and every interior point of
/// `points` strictly inside `(a, b)`.
pub fn cut_points(a: f64, b: f64, points: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut cuts: Vec<f64> = points
        .into_iter()
        .filter(|&p| p.is_finite() && p > a && p < b)
        .collect();
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
    cuts
}
