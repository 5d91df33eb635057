use calmort_core::movmed::{complete_case_matrix, deviations, moving_median, partial_correlations, WindowSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn spec() -> WindowSpec {
    WindowSpec::new(21, 5).unwrap()
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("v{i}")).collect()
}

/// −Ω_ab / √(Ω_aa Ω_bb) from the inverse sample covariance.
fn precision_oracle(data: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = data.shape();
    let mean = data.row_mean();
    let mut c = data.clone();
    for i in 0..n {
        let mut r = c.row_mut(i);
        r -= &mean;
    }
    let cov = c.transpose() * &c / (n as f64 - 1.0);
    let omega = cov.try_inverse().unwrap();
    DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            1.0
        } else {
            -omega[(a, b)] / (omega[(a, a)] * omega[(b, b)]).sqrt()
        }
    })
}

fn correlated_sample(rng: &mut ChaCha8Rng, n: usize, p: usize, rho: f64) -> DMatrix<f64> {
    // equicorrelated: x_j = √ρ z + √(1−ρ) e_j
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        for j in 0..p {
            let e: f64 = StandardNormal.sample(rng);
            m[(i, j)] = rho.sqrt() * z + (1.0 - rho).sqrt() * e;
        }
    }
    m
}

#[test]
fn constant_series_zero_deviations() {
    let s = vec![Some(4.5); 100];
    let d = deviations(&s, spec(), "x").unwrap();
    for (t, v) in d.values.iter().enumerate() {
        if (10..90).contains(&t) {
            assert_eq!(*v, Some(0.0));
        } else {
            assert_eq!(*v, None);
        }
    }
}

#[test]
fn ramp_center_and_spike() {
    let ramp: Vec<Option<f64>> = (1..=21).map(|v| Some(v as f64)).collect();
    assert_eq!(moving_median(&ramp, spec()).unwrap()[10], Some(11.0));
    assert_eq!(deviations(&ramp, spec(), "r").unwrap().values[10], Some(0.0));
    let mut spike = vec![Some(0.0); 21];
    spike[10] = Some(10.0);
    assert_eq!(moving_median(&spike, spec()).unwrap()[10], Some(0.0));
    assert_eq!(deviations(&spike, spec(), "s").unwrap().values[10], Some(10.0));
}

#[test]
fn partial_correlation_matches_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for rep in 0..20 {
        let n = 60 + 10 * rep;
        let mix = DMatrix::<f64>::from_fn(5, 5, |_, _| StandardNormal.sample(&mut rng));
        let raw = DMatrix::<f64>::from_fn(n, 5, |_, _| StandardNormal.sample(&mut rng));
        let data = raw * mix;
        let got = partial_correlations(&data, &names(5)).unwrap();
        let want = precision_oracle(&data);
        for a in 0..5 {
            for b in 0..5 {
                assert!((got[(a, b)] - want[(a, b)]).abs() < 1e-10, "rep {rep} ({a},{b})");
            }
        }
    }
}

#[test]
fn two_variables_is_pearson() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = correlated_sample(&mut rng, 200, 2, 0.3);
    let pc = partial_correlations(&data, &names(2)).unwrap();
    let x = data.column(0) - DVector::from_element(200, data.column(0).mean());
    let y = data.column(1) - DVector::from_element(200, data.column(1).mean());
    let r = x.dot(&y) / (x.norm() * y.norm());
    assert!((pc[(0, 1)] - r).abs() < 1e-12);
}

#[test]
fn equicorrelated_partial_tends_to_one_third() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = correlated_sample(&mut rng, 40_000, 3, 0.5);
    let pc = partial_correlations(&data, &names(3)).unwrap();
    let oracle = precision_oracle(&data);
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        assert!((pc[(a, b)] - oracle[(a, b)]).abs() < 1e-10);
        assert!((pc[(a, b)] - 1.0 / 3.0).abs() < 0.02, "{}", pc[(a, b)]);
    }
}

#[test]
fn independent_columns_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 2000;
    let data = correlated_sample(&mut rng, n, 5, 0.0);
    let pc = partial_correlations(&data, &names(5)).unwrap();
    let bound = 4.0 / (n as f64).sqrt();
    for a in 0..5 {
        assert_eq!(pc[(a, a)], 1.0);
        for b in 0..5 {
            assert_eq!(pc[(a, b)], pc[(b, a)]);
            if a != b {
                assert!(pc[(a, b)].abs() < bound);
            }
        }
    }
}

#[test]
fn collinear_regressors_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut data = correlated_sample(&mut rng, 50, 4, 0.2);
    for i in 0..50 {
        data[(i, 3)] = 2.0 * data[(i, 1)] - data[(i, 2)];
    }
    assert!(partial_correlations(&data, &names(4)).is_err());
}

#[test]
fn complete_cases_drop_missing_rows() {
    let a = vec![Some(1.0), None, Some(3.0), Some(4.0)];
    let b = vec![Some(1.0), Some(2.0), None, Some(5.0)];
    let m = complete_case_matrix(&[&a, &b]);
    assert_eq!(m.shape(), (2, 2));
    assert_eq!(m[(1, 1)], 5.0);
}

fn series_strategy() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.9, -100.0f64..100.0), 21..90)
}

proptest! {
    #[test]
    fn translation_and_scale_equivariance(s in series_strategy(), c in -50.0f64..50.0, k in 0.1f64..10.0) {
        let m = moving_median(&s, spec()).unwrap();
        let shifted: Vec<Option<f64>> = s.iter().map(|v| v.map(|x| x + c)).collect();
        let scaled: Vec<Option<f64>> = s.iter().map(|v| v.map(|x| x * k)).collect();
        let ms = moving_median(&shifted, spec()).unwrap();
        let mk = moving_median(&scaled, spec()).unwrap();
        for t in 0..s.len() {
            match (m[t], ms[t], mk[t]) {
                (Some(a), Some(b), Some(d)) => {
                    prop_assert!((a + c - b).abs() < 1e-9);
                    prop_assert!((a * k - d).abs() < 1e-9 * (1.0 + d.abs()));
                }
                (None, None, None) => {}
                other => prop_assert!(false, "definedness changed at {}: {:?}", t, other),
            }
        }
    }

    #[test]
    fn gap_cells_do_not_matter(s in series_strategy(), pick in 0usize..1000, v in prop::option::of(-1e6f64..1e6)) {
        let m = moving_median(&s, spec()).unwrap();
        let n = s.len();
        // any target day, any gap offset -2..=2 other than the day itself
        let t = 10 + pick % (n - 20);
        let offs = [-2i64, -1, 1, 2];
        let cell = (t as i64 + offs[pick % 4]) as usize;
        let mut p = s.clone();
        p[cell] = v;
        let mp = moving_median(&p, spec()).unwrap();
        prop_assert_eq!(m[t], mp[t]);
        // the day itself is also inside its own gap
        let mut q = s.clone();
        q[t] = v;
        prop_assert_eq!(m[t], moving_median(&q, spec()).unwrap()[t]);
    }
}
