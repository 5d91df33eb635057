use calmort_core::dlm::CurvePoint;
use calmort_core::meta::{pool, pool_with, pooled_curve, reml_loglik, EffectEstimate, Sigma2Mode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn est(pairs: &[(f64, f64)]) -> Vec<EffectEstimate> {
    pairs.iter().enumerate().map(|(i, &(t, v))| EffectEstimate::new(format!("b{i}"), t, v)).collect()
}

/// Brute-force maximiser of the REML objective on a uniform grid.
fn grid_oracle(e: &[EffectEstimate], hi: f64, step: f64) -> f64 {
    let n = (hi / step).round() as usize;
    (0..=n)
        .map(|k| k as f64 * step)
        .map(|s| (s, reml_loglik(e, s)))
        .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a })
        .0
}

#[test]
fn two_point_case_matches_grid() {
    let e = est(&[(0.0, 1.0), (2.0, 1.0)]);
    let p = pool(&e).unwrap();
    let g = grid_oracle(&e, 10.0, 1e-4);
    assert!((g - 1.0).abs() < 1e-4);
    assert!((p.sigma2 - 1.0).abs() < 1e-6, "{}", p.sigma2);
    assert!((p.sigma2 - g).abs() <= 1e-4);
    assert!((p.theta_hat - 1.0).abs() < 1e-12);
}

#[test]
fn homogeneous_estimates() {
    let p = pool(&est(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)])).unwrap();
    assert_eq!(p.sigma2, 0.0);
    assert_eq!(p.theta_hat, 1.0);
    assert!((p.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn fixed_zero_is_inverse_variance_mean() {
    let e = est(&[(0.3, 0.1), (1.2, 0.4), (-0.5, 0.2), (0.8, 0.05)]);
    let p = pool_with(&e, Sigma2Mode::Fixed(0.0)).unwrap();
    let w: Vec<f64> = e.iter().map(|x| 1.0 / x.variance).collect();
    let m = e.iter().zip(&w).map(|(x, w)| x.theta * w).sum::<f64>() / w.iter().sum::<f64>();
    assert_eq!(p.theta_hat, m);
}

#[test]
fn huge_sigma2_gives_unweighted_mean() {
    let e = est(&[(0.3, 0.1), (1.2, 0.4), (-0.5, 0.2), (0.8, 0.05)]);
    let p = pool_with(&e, Sigma2Mode::Fixed(1e12)).unwrap();
    let mean = e.iter().map(|x| x.theta).sum::<f64>() / 4.0;
    assert!((p.theta_hat - mean).abs() < 1e-9);
}

#[test]
fn heterogeneous_eight_basins_match_grid() {
    let e = est(&[
        (0.12, 0.02),
        (0.45, 0.05),
        (-0.10, 0.01),
        (0.30, 0.04),
        (0.05, 0.03),
        (0.60, 0.08),
        (0.22, 0.02),
        (-0.05, 0.06),
    ]);
    let p = pool(&e).unwrap();
    let thetas: Vec<f64> = e.iter().map(|x| x.theta).collect();
    let mean = thetas.iter().sum::<f64>() / 8.0;
    let var = thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 7.0;
    let g = grid_oracle(&e, 10.0 * var, 1e-6);
    assert!((p.sigma2 - g).abs() <= 1e-6, "{} vs {g}", p.sigma2);
    let (lo, hi) = thetas.iter().fold((f64::MAX, f64::MIN), |(a, b), &t| (a.min(t), b.max(t)));
    assert!(p.theta_hat >= lo && p.theta_hat <= hi);
    for d in [1e-3, -1e-3] {
        let s = p.sigma2 + d;
        if s >= 0.0 {
            assert!(p.loglik >= reml_loglik(&e, s));
        }
    }
    assert_eq!(p.per_basin.len(), 8);
    assert!(p.q.unwrap() > 0.0);
}

#[test]
fn zero_sigma2_boundary_certificate() {
    // underdispersed estimates push the maximiser to zero
    let e = est(&[(0.0, 1.0), (0.1, 1.0), (-0.1, 1.0), (0.05, 1.0)]);
    let p = pool(&e).unwrap();
    assert_eq!(p.sigma2, 0.0);
    assert!(p.loglik >= reml_loglik(&e, 1e-3));
}

#[test]
fn pooled_curve_identical_inputs() {
    let pts: Vec<CurvePoint> = [30.0, 50.0, 70.0]
        .iter()
        .map(|&x| CurvePoint::new(x, 0.002 * (x - 50.0), 0.001 * (x - 50.0f64).abs()))
        .collect();
    let curves = vec![("a".to_string(), pts.clone()), ("b".to_string(), pts.clone())];
    let pc = pooled_curve(&curves, Sigma2Mode::Reml).unwrap();
    for (p, q) in pc.points.iter().zip(&pts) {
        assert!((p.log_rr - q.log_rr).abs() < 1e-12);
    }
    assert_eq!(pc.points[1].rr, 1.0);
    assert_eq!(pc.points[1].lo95, pc.points[1].hi95);
    assert!(pc.method.contains("pointwise"));
}

#[test]
fn pooled_curve_band_coverage() {
    // two basins, slope heterogeneity τ² equal to the within-basin variance
    let grid: Vec<f64> = (0..=10).map(|i| 10.0 * i as f64).collect();
    let reference = 50.0;
    let slope = 0.002;
    let s = 0.0008f64;
    let tau = s;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let between = Normal::new(0.0, tau).unwrap();
    let within = Normal::new(0.0, s).unwrap();
    let reps = 400;
    let (mut covered, mut total) = (0usize, 0usize);
    for _ in 0..reps {
        let curves: Vec<(String, Vec<CurvePoint>)> = (0..2)
            .map(|b| {
                let est = slope + between.sample(&mut rng) + within.sample(&mut rng);
                let pts = grid.iter().map(|&x| CurvePoint::new(x, est * (x - reference), s * (x - reference).abs())).collect();
                (format!("b{b}"), pts)
            })
            .collect();
        let pc = pooled_curve(&curves, Sigma2Mode::Reml).unwrap();
        for p in pc.points.iter().filter(|p| p.exposure != reference) {
            let truth = (slope * (p.exposure - reference)).exp();
            total += 1;
            covered += usize::from(p.lo95 <= truth && truth <= p.hi95);
        }
    }
    let rate = covered as f64 / total as f64;
    assert!(rate >= 0.90, "coverage {rate}");
}

#[test]
fn bad_inputs_rejected() {
    assert!(pool(&est(&[(1.0, 1.0)])).is_err());
    assert!(pool(&est(&[(f64::NAN, 1.0), (1.0, 1.0)])).is_err());
    assert!(pool(&est(&[(1.0, -1.0), (1.0, 1.0)])).is_err());
    let a = vec![("a".to_string(), vec![CurvePoint::new(1.0, 0.0, 0.1)])];
    let b = vec![
        ("a".to_string(), vec![CurvePoint::new(1.0, 0.0, 0.1)]),
        ("b".to_string(), vec![CurvePoint::new(2.0, 0.0, 0.1)]),
    ];
    assert!(pooled_curve(&a, Sigma2Mode::Reml).is_err());
    assert!(pooled_curve(&b, Sigma2Mode::Reml).is_err());
}

fn estimates() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-5.0f64..5.0, 0.01f64..4.0), 2..9)
}

proptest! {
    #[test]
    fn order_invariance(e in estimates(), rot in 0usize..8) {
        let a = pool(&est(&e)).unwrap();
        let mut r = e.clone();
        let k = rot % r.len();
        r.rotate_left(k);
        r.reverse();
        let b = pool(&est(&r)).unwrap();
        prop_assert_eq!(a.theta_hat, b.theta_hat);
        prop_assert_eq!(a.sigma2, b.sigma2);
        prop_assert_eq!(a.se, b.se);
    }

    #[test]
    fn scale_equivariance(e in estimates(), c in 0.01f64..100.0) {
        let a = pool(&est(&e)).unwrap();
        let scaled: Vec<(f64, f64)> = e.iter().map(|&(t, v)| (c * t, c * c * v)).collect();
        let b = pool(&est(&scaled)).unwrap();
        prop_assert!((b.theta_hat - c * a.theta_hat).abs() <= 1e-10 * c * (1.0 + a.theta_hat.abs()));
        prop_assert!((b.se - c * a.se).abs() <= 1e-10 * c * a.se);
        prop_assert!((b.sigma2 - c * c * a.sigma2).abs() <= 1e-10 * c * c * (a.sigma2 + 1e-300).max(1e-12));
    }

    #[test]
    fn local_max_certificate(e in estimates()) {
        let est = est(&e);
        let p = pool(&est).unwrap();
        prop_assert!(p.sigma2 >= 0.0);
        for d in [1e-3, -1e-3] {
            let s = p.sigma2 + d;
            if s >= 0.0 {
                prop_assert!(p.loglik >= reml_loglik(&est, s) - 1e-12);
            }
        }
    }
}
