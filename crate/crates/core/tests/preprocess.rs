//! Box-Cox, difference-order selection and standardisation against
//! independent oracles.

use nowcast_core::data::{ExogenousMatrix, TimeSeries, WeekRange};
use nowcast_core::preprocess::{
    box_cox, estimate_lambda, inverse_box_cox, kpss_level_statistic, select_difference_orders, standardize_columns,
    BoxCoxParam,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn ts(v: Vec<f64>) -> TimeSeries {
    TimeSeries::new("y", v).unwrap()
}

fn lambda(l: f64) -> BoxCoxParam {
    BoxCoxParam::new(l).unwrap()
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

#[test]
fn box_cox_examples() {
    assert_eq!(box_cox(&ts(vec![2.0, 3.0]), lambda(1.0)).unwrap().values(), [1.0, 2.0]);
    let z = box_cox(&ts(vec![1.0, std::f64::consts::E]), lambda(0.0)).unwrap();
    assert!(z.values()[0].abs() < 1e-15 && (z.values()[1] - 1.0).abs() < 1e-15);
    let y = vec![1.0, 5.0, 9.0];
    let back = inverse_box_cox(&box_cox(&ts(y.clone()), lambda(0.37)).unwrap(), lambda(0.37)).unwrap();
    for (a, b) in back.values().iter().zip(&y) {
        assert!((a - b).abs() < 1e-10);
    }
    assert!(box_cox(&ts(vec![0.0, 1.0]), lambda(0.0)).is_err());
}

proptest! {
    #[test]
    fn box_cox_is_strictly_increasing(mut y in prop::collection::vec(0.01f64..1e4, 2..30), l in 0.0f64..1.5) {
        y.sort_by(f64::total_cmp);
        y.dedup();
        prop_assume!(y.len() >= 2);
        let z = box_cox(&ts(y), lambda(l)).unwrap();
        prop_assert!(z.values().windows(2).all(|w| w[0] < w[1]));
    }
}

/// Guerrero's objective over full seasonal blocks taken from the end.
fn guerrero_oracle(y: &[f64], season: usize) -> f64 {
    let blocks: Vec<&[f64]> = y[y.len() % season..].chunks(season).collect();
    let mut best = (1.0, f64::INFINITY);
    for step in 0..=100 {
        let l = step as f64 / 100.0;
        let ratios: Vec<f64> = blocks
            .iter()
            .map(|b| {
                let m = b.iter().sum::<f64>() / b.len() as f64;
                let sd = (b.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b.len() - 1) as f64).sqrt();
                sd / m.powf(1.0 - l)
            })
            .collect();
        let m = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let sd = (ratios.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64).sqrt();
        if sd / m < best.1 {
            best = (l, sd / m);
        }
    }
    best.0
}

#[test]
fn lambda_of_level_free_noise_is_near_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y: Vec<f64> = (0..520).map(|_| rng.random_range(50.0..150.0)).collect();
    let l = estimate_lambda(&ts(y.clone()), 52).unwrap().lambda;
    assert_eq!(l, guerrero_oracle(&y, 52));
    assert!((l - 1.0).abs() <= 0.3, "{l}");
}

#[test]
fn lambda_of_exponential_growth_is_near_zero() {
    let y: Vec<f64> = (0..260)
        .map(|t| {
            let t = t as f64;
            (0.05 * t).exp() * (2.0 + (2.0 * std::f64::consts::PI * t / 52.0).sin())
        })
        .collect();
    let l = estimate_lambda(&ts(y.clone()), 52).unwrap().lambda;
    assert_eq!(l, guerrero_oracle(&y, 52));
    assert!(l <= 0.15, "{l}");
}

#[test]
fn constant_series_has_lambda_one() {
    assert_eq!(estimate_lambda(&ts(vec![7.0; 104]), 52).unwrap().lambda, 1.0);
}

/// KPSS level statistic written out from its definition.
fn kpss_oracle(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let e: Vec<f64> = x.iter().map(|v| v - m).collect();
    let l = (4.0 * (n / 100.0).powf(0.25)).floor() as usize;
    let gamma = |k: usize| e[k..].iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / n;
    let lrv = gamma(0)
        + 2.0
            * (1..=l)
                .map(|k| (1.0 - k as f64 / (l as f64 + 1.0)) * gamma(k))
                .sum::<f64>();
    let mut s = 0.0;
    let eta: f64 = e
        .iter()
        .map(|v| {
            s += v;
            s * s
        })
        .sum();
    eta / (n * n * lrv)
}

#[test]
fn kpss_matches_the_definition() {
    let x = noise(11, 300);
    assert!((kpss_level_statistic(&x) - kpss_oracle(&x)).abs() < 1e-12);
    let walk: Vec<f64> = x
        .iter()
        .scan(0.0, |s, v| {
            *s += v;
            Some(*s)
        })
        .collect();
    assert!((kpss_level_statistic(&walk) - kpss_oracle(&walk)).abs() < 1e-10);
}

#[test]
fn difference_order_examples() {
    let o = select_difference_orders(&ts(noise(1, 260)), 52).unwrap();
    assert_eq!((o.d, o.seasonal_d), (0, 0));
    let walk: Vec<f64> = noise(2, 260)
        .iter()
        .scan(0.0, |s, v| {
            *s += v;
            Some(*s)
        })
        .collect();
    assert!(select_difference_orders(&ts(walk), 52).unwrap().d >= 1);
    let seasonal: Vec<f64> = noise(3, 260)
        .iter()
        .enumerate()
        .map(|(t, e)| 10.0 * (2.0 * std::f64::consts::PI * t as f64 / 52.0).sin() + e)
        .collect();
    assert_eq!(select_difference_orders(&ts(seasonal), 52).unwrap().seasonal_d, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn difference_orders_are_bounded(seed in 0u64..1000, drift in -2.0f64..2.0, amp in 0.0f64..5.0) {
        let y: Vec<f64> = noise(seed, 120)
            .iter()
            .enumerate()
            .map(|(t, e)| drift * t as f64 + amp * (t as f64 / 2.0).sin() + e)
            .collect();
        let o = select_difference_orders(&ts(y), 12).unwrap();
        prop_assert!(o.d <= 2 && o.seasonal_d <= 1);
    }
}

fn matrix(cols: &[(&str, Vec<f64>)]) -> ExogenousMatrix {
    let mut x = ExogenousMatrix::new(cols[0].1.len());
    for (n, v) in cols {
        x.insert(*n, v.clone()).unwrap();
    }
    x
}

#[test]
fn standardisation_examples() {
    let x = matrix(&[("a", vec![1.0, 2.0, 3.0, 2.0])]);
    let (z, st) = standardize_columns(&x, WeekRange::new(1, 3).unwrap()).unwrap();
    let a = z.column("a").unwrap();
    assert!((a[0] + 1.0).abs() < 1e-12 && a[1].abs() < 1e-12 && (a[2] - 1.0).abs() < 1e-12);
    // a test value at the training mean maps to zero
    assert!(a[3].abs() < 1e-12);
    let back = st.inverse(&z).unwrap();
    for (u, v) in back.column("a").unwrap().iter().zip(x.column("a").unwrap()) {
        assert!((u - v).abs() < 1e-12);
    }
    assert!(standardize_columns(
        &matrix(&[("c", vec![1.0, 1.0, 1.0, 5.0])]),
        WeekRange::new(1, 3).unwrap()
    )
    .is_err());
}

proptest! {
    #[test]
    fn test_weeks_never_reach_training_statistics(
        train in prop::collection::vec(-100.0f64..100.0, 5..20),
        garbage in prop::collection::vec(-1e6f64..1e6, 1..10),
    ) {
        prop_assume!(train.iter().any(|v| (v - train[0]).abs() > 1e-3));
        let n = train.len();
        let mut clean = train.clone();
        clean.extend(std::iter::repeat_n(0.0, garbage.len()));
        let mut dirty = train.clone();
        dirty.extend(&garbage);
        let range = WeekRange::new(1, n as u32).unwrap();
        let (_, a) = standardize_columns(&matrix(&[("x", clean)]), range).unwrap();
        let (_, b) = standardize_columns(&matrix(&[("x", dirty)]), range).unwrap();
        prop_assert_eq!(&a, &b);
    }
}
