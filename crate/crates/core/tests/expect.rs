use approx::assert_relative_eq;
use nphgsd_core::expect::{cumulative_enrollment, expected_events, pooled_failure_probability, time_for_events};
use nphgsd_core::scenario::delayed_effect_example;
use nphgsd_core::{Arm, ArmDropout, PiecewiseConstant, Randomization, TrialModel};
use proptest::prelude::*;

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
}

fn split_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64, mut cuts: Vec<f64>, tol: f64) -> f64 {
    cuts.retain(|c| *c > a && *c < b);
    cuts.push(a);
    cuts.push(b);
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();
    cuts.windows(2).map(|w| simpson(f, w[0], w[1], tol)).sum()
}

/// Events in `arm` by `tau`, straight from the definition:
/// `p ∫_0^τ g(a) ∫_0^{τ-a} λ(s) e^{-Λ(s)-H(s)} ds da`.
fn oracle_events(m: &TrialModel, arm: Arm, tau: f64) -> f64 {
    let hazard = m.arm_hazard(arm);
    let dropout = m.dropout.get(arm).clone();
    let mut rate_cuts: Vec<f64> = hazard.breakpoints().to_vec();
    rate_cuts.extend(dropout.breakpoints());
    let cum = |s: f64| hazard.integral(s) + dropout.integral(s);
    let density = |s: f64| hazard.eval(s) * (-cum(s)).exp();
    let incidence = |u: f64| split_integral(&density, 0.0, u, rate_cuts.clone(), 1e-14);
    let enroll = m.enrollment();
    let mut outer_cuts: Vec<f64> = enroll.breakpoints().to_vec();
    outer_cuts.extend(rate_cuts.iter().map(|c| tau - c));
    outer_cuts.push(m.enroll_duration);
    let inner = |a: f64| enroll.eval(a) * incidence(tau - a);
    m.ratio.get(arm) * split_integral(&inner, 0.0, tau, outer_cuts, 1e-12)
}

#[test]
fn enrollment_examples() {
    let m = delayed_effect_example();
    assert_relative_eq!(cumulative_enrollment(&m, 12.0).unwrap(), 500.0, epsilon = 1e-9);
    assert_relative_eq!(cumulative_enrollment(&m, 0.0).unwrap(), 0.0);
    assert_relative_eq!(cumulative_enrollment(&m, 6.0).unwrap(), 250.0, epsilon = 1e-9);
    assert_relative_eq!(cumulative_enrollment(&m, 30.0).unwrap(), 500.0, epsilon = 1e-9);
}

#[test]
fn delayed_effect_events() {
    let m = delayed_effect_example().with_sample_size(643.5);
    for (t, d) in [(12.0, 138.2), (20.0, 267.6), (28.0, 359.2), (36.0, 426.4)] {
        let got = expected_events(&m, t).unwrap().pooled();
        assert!((got - d).abs() <= 0.05, "events at {t}: {got} vs {d}");
    }
}

#[test]
fn single_interval_matches_oracle() {
    let m = TrialModel {
        enroll_rate: PiecewiseConstant::constant(20.0),
        control_hazard: PiecewiseConstant::constant(0.05),
        hazard_ratio: PiecewiseConstant::constant(0.7),
        dropout: ArmDropout::equal(PiecewiseConstant::constant(0.01)),
        ratio: Randomization::EQUAL,
        enroll_duration: 10.0,
        total_duration: 30.0,
        strata: vec![],
    };
    for t in [3.0, 10.0, 17.5, 30.0] {
        let b = expected_events(&m, t).unwrap();
        for arm in Arm::BOTH {
            let want = oracle_events(&m, arm, t);
            assert_relative_eq!(b.total(arm), want, max_relative = 1e-6);
        }
    }
}

#[test]
fn events_increase_and_invert() {
    let m = delayed_effect_example();
    let mut prev = 0.0;
    for i in 1..=36 {
        let d = expected_events(&m, i as f64).unwrap().pooled();
        assert!(d > prev);
        prev = d;
    }
    let t = time_for_events(&m, 250.0).unwrap();
    assert_relative_eq!(expected_events(&m, t).unwrap().pooled(), 250.0, max_relative = 1e-8);
}

#[test]
fn no_hazard_no_events() {
    let mut m = delayed_effect_example();
    m.control_hazard = PiecewiseConstant::constant(0.0);
    assert_eq!(expected_events(&m, 36.0).unwrap().pooled(), 0.0);
}

fn piecewise(max_pieces: usize) -> impl Strategy<Value = PiecewiseConstant> {
    (1..=max_pieces).prop_flat_map(|k| {
        (prop::collection::vec(0.5f64..8.0, k - 1), prop::collection::vec(0.0f64..1.0, k)).prop_map(|(durs, vals)| {
            let mut b = vec![0.0];
            for d in durs {
                b.push(b.last().unwrap() + d);
            }
            PiecewiseConstant::new(b, vals).unwrap()
        })
    })
}

fn random_model() -> impl Strategy<Value = TrialModel> {
    (
        piecewise(3).prop_map(|p| p.scale(30.0)),
        piecewise(3).prop_map(|p| p.scale(0.15)),
        piecewise(3).prop_map(|p| PiecewiseConstant::new(p.breakpoints().to_vec(), p.values().iter().map(|v| 0.3 + 1.2 * v).collect()).unwrap()),
        piecewise(2).prop_map(|p| p.scale(0.03)),
        0.2f64..0.8,
        4.0f64..20.0,
        5.0f64..25.0,
    )
        .prop_map(|(enroll, control, hr, drop, p0, ta, extra)| TrialModel {
            enroll_rate: PiecewiseConstant::new(enroll.breakpoints().to_vec(), enroll.values().iter().map(|v| v + 1.0).collect()).unwrap(),
            control_hazard: PiecewiseConstant::new(control.breakpoints().to_vec(), control.values().iter().map(|v| v + 0.005).collect()).unwrap(),
            hazard_ratio: hr,
            dropout: ArmDropout::equal(drop),
            ratio: Randomization { control: p0, experimental: 1.0 - p0 },
            enroll_duration: ta,
            total_duration: ta + extra,
            strata: vec![],
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]
    #[test]
    fn closed_form_matches_quadrature(m in random_model(), frac in 0.1f64..1.0) {
        let t = frac * m.total_duration;
        let b = expected_events(&m, t).unwrap();
        for arm in Arm::BOTH {
            let want = oracle_events(&m, arm, t);
            let got = b.total(arm);
            prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-6), "{arm:?} at {t}: {got} vs {want}");
        }
    }

    #[test]
    fn events_monotone_in_time(m in random_model()) {
        let tau = m.total_duration;
        let mut prev = 0.0;
        for i in 1..=12 {
            let d = expected_events(&m, tau * i as f64 / 12.0).unwrap().pooled();
            prop_assert!(d >= prev - 1e-12);
            prev = d;
        }
        prop_assert!(prev <= m.planned_n() + 1e-9);
        let v = pooled_failure_probability(&m, tau).unwrap();
        prop_assert!((m.planned_n() * v - prev).abs() <= 1e-7 * prev.max(1.0));
    }
}
