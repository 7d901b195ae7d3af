//! Estimation, likelihood and forecasting checks for the SARIMA engine.

use approx::assert_relative_eq;
use nowcast_core::data::TimeSeries;
use nowcast_core::models::{
    sarima_auto_with, sarima_fit, sarima_forecast, sarima_loglik, FitDiagnostics, SarimaFit, SarimaOrder, SarimaParams,
    SearchConfig,
};
use nowcast_core::preprocess::BoxCox;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

/// `y_t = sum_i ar_i y_{t-lag_i} + e_t + sum_j ma_j e_{t-lag_j}` after a burn-in.
fn simulate(seed: u64, n: usize, ar: &[(usize, f64)], ma: &[(usize, f64)]) -> Vec<f64> {
    let burn = 500;
    let e = noise(seed, n + burn);
    let mut y = vec![0.0; n + burn];
    for t in 0..n + burn {
        let mut v = e[t];
        for &(l, c) in ar {
            if t >= l {
                v += c * y[t - l];
            }
        }
        for &(l, c) in ma {
            if t >= l {
                v += c * e[t - l];
            }
        }
        y[t] = v;
    }
    y.split_off(burn)
}

fn ts(v: Vec<f64>) -> TimeSeries {
    TimeSeries::new("y", v).unwrap()
}

fn yule_walker_ar1(y: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let c0: f64 = y.iter().map(|v| (v - m).powi(2)).sum();
    let c1: f64 = y.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    c1 / c0
}

#[test]
fn white_noise_likelihood_is_closed_form() {
    let y = ts(vec![0.5, -0.3]);
    let ll = sarima_loglik(&y, &SarimaOrder::arma(0, 0, false), &SarimaParams::white_noise(1.0)).unwrap();
    let oracle = -2.0 * 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (0.25 + 0.09);
    assert_relative_eq!(ll, oracle, epsilon = 1e-12);
}

#[test]
fn white_noise_likelihood_is_exchangeable() {
    let order = SarimaOrder::arma(0, 0, false);
    let p = SarimaParams::white_noise(2.0);
    let a = sarima_loglik(&ts(vec![0.1, 1.5, -0.7, 0.2]), &order, &p).unwrap();
    let b = sarima_loglik(&ts(vec![-0.7, 0.2, 1.5, 0.1]), &order, &p).unwrap();
    assert_relative_eq!(a, b, epsilon = 1e-12);
}

#[test]
fn ar1_likelihood_matches_stationary_density() {
    let (phi, sigma2, mu) = (0.5, 1.3, 0.4);
    let y = [0.3, -0.2, 1.1, 0.8, -0.5];
    let mut params = SarimaParams::white_noise(sigma2);
    params.phi = vec![phi];
    params.delta = mu * (1.0 - phi);
    let ll = sarima_loglik(&ts(y.to_vec()), &SarimaOrder::arma(1, 0, true), &params).unwrap();
    let ln_norm = |x: f64, m: f64, v: f64| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v);
    let mut oracle = ln_norm(y[0], mu, sigma2 / (1.0 - phi * phi));
    for t in 1..y.len() {
        oracle += ln_norm(y[t], mu + phi * (y[t - 1] - mu), sigma2);
    }
    assert_relative_eq!(ll, oracle, epsilon = 1e-8);
}

#[test]
fn recovers_ar1() {
    let y = simulate(101, 2000, &[(1, 0.7)], &[]);
    let fit = sarima_fit(&ts(y.clone()), &SarimaOrder::arma(1, 0, true), BoxCox::identity()).unwrap();
    let yw = yule_walker_ar1(&y);
    assert!((fit.params.phi[0] - 0.7).abs() <= 0.05, "{:?}", fit.params);
    assert!(
        (fit.params.phi[0] - yw).abs() < 0.01,
        "ML {} vs Yule-Walker {yw}",
        fit.params.phi[0]
    );
    assert!(fit.diagnostics.converged);
}

#[test]
fn recovers_ma1() {
    let y = simulate(102, 2000, &[], &[(1, 0.4)]);
    let fit = sarima_fit(&ts(y), &SarimaOrder::arma(0, 1, true), BoxCox::identity()).unwrap();
    assert!((fit.params.theta[0] - 0.4).abs() <= 0.06, "{:?}", fit.params);
}

#[test]
fn recovers_seasonal_ar() {
    let y = simulate(103, 2000, &[(12, 0.5)], &[]);
    let order = SarimaOrder::new(0, 0, 0, 1, 0, 0, 12, true).unwrap();
    let fit = sarima_fit(&ts(y), &order, BoxCox::identity()).unwrap();
    assert!((fit.params.seasonal_phi[0] - 0.5).abs() <= 0.06, "{:?}", fit.params);
}

#[test]
fn ramp_with_drift_is_exact() {
    let y: Vec<f64> = (0..40).map(|t| 5.0 + 2.5 * t as f64).collect();
    let order = SarimaOrder::new(0, 1, 0, 0, 0, 0, 1, true).unwrap();
    let fit = sarima_fit(&ts(y.clone()), &order, BoxCox::identity()).unwrap();
    assert_relative_eq!(fit.params.delta, 2.5, epsilon = 1e-9);
    assert!(fit.residuals().unwrap().iter().all(|r| r.abs() < 1e-9));
    let f = sarima_forecast(&fit, 2).unwrap();
    assert_relative_eq!(f.point, 5.0 + 2.5 * 41.0, epsilon = 1e-8);
    assert_eq!(f.target.ordinal(), 42);
}

#[test]
fn aic_is_minus_two_loglik_plus_two_k() {
    let y = simulate(104, 300, &[(1, 0.5)], &[(1, 0.2)]);
    for (p, q, o) in [(0, 0, true), (1, 0, true), (2, 1, false), (1, 2, true)] {
        let order = SarimaOrder::arma(p, q, o);
        let fit = sarima_fit(&ts(y.clone()), &order, BoxCox::identity()).unwrap();
        assert_eq!(fit.n_params, p + q + usize::from(o));
        assert_relative_eq!(fit.aic, -2.0 * fit.loglik + 2.0 * fit.n_params as f64, epsilon = 1e-9);
        assert!(fit.loglik >= fit.diagnostics.start_loglik - 1e-9);
    }
}

fn ar1_fit(phi: f64, delta: f64, history: Vec<f64>) -> SarimaFit {
    let mut params = SarimaParams::white_noise(1.0);
    params.phi = vec![phi];
    params.delta = delta;
    SarimaFit {
        order: SarimaOrder::arma(1, 0, true),
        params,
        transform: BoxCox::identity(),
        loglik: 0.0,
        n_params: 2,
        aic: 0.0,
        diagnostics: FitDiagnostics {
            start_loglik: 0.0,
            converged: true,
            starts_tried: 1,
            evaluations: 0,
        },
        history,
    }
}

#[test]
fn ar1_two_step_predictor() {
    let (phi, delta) = (0.6, 20.0);
    // history on the transformed scale (identity Box-Cox subtracts one)
    let fit = ar1_fit(phi, delta, vec![48.0, 52.0, 51.0, 55.0]);
    let xn = 55.0;
    let f2 = sarima_forecast(&fit, 2).unwrap();
    let oracle = delta * (1.0 + phi) + phi * phi * xn;
    assert_relative_eq!(f2.point, oracle + 1.0, epsilon = 1e-9);
    let f1 = sarima_forecast(&fit, 1).unwrap();
    let var = |f: &nowcast_core::models::Forecast| ((f.upper95 - f.lower95) / (2.0 * 1.959963984540054)).powi(2);
    assert_relative_eq!(var(&f2) / var(&f1), 1.0 + phi * phi, epsilon = 1e-9);
}

#[test]
fn fit_json_round_trip() {
    let fit = ar1_fit(0.3, 1.0, vec![1.0, 2.0, 3.0]);
    let text = fit.to_json().unwrap();
    assert!(text.contains("nowcast.fit/1"));
    assert_eq!(SarimaFit::from_json(&text).unwrap(), fit);
}

#[test]
fn auto_on_white_noise_stays_near_the_null_model() {
    let y: Vec<f64> = noise(105, 200).into_iter().map(|v| 10.0 + v).collect();
    let fit = sarima_auto_with(&y, 12, Some(BoxCox::identity()), &SearchConfig::default()).unwrap();
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    let s2 = y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let null_aic = n * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0) + 2.0;
    let o = fit.order;
    let is_null = o.p + o.q + o.seasonal_p + o.seasonal_q + o.d + o.seasonal_d == 0;
    assert!(
        is_null || (fit.aic - null_aic).abs() <= 2.0,
        "{} aic {} null {null_aic}",
        o,
        fit.aic
    );
}

#[test]
fn auto_detects_seasonal_autoregression() {
    let y: Vec<f64> = simulate(106, 600, &[(12, 0.8)], &[])
        .into_iter()
        .map(|v| v + 50.0)
        .collect();
    let fit = sarima_auto_with(&y, 12, Some(BoxCox::identity()), &SearchConfig::default()).unwrap();
    assert!(fit.order.seasonal_p >= 1 || fit.order.seasonal_d == 1, "{}", fit.order);
}

#[test]
fn auto_is_deterministic() {
    let y: Vec<f64> = simulate(107, 240, &[(1, 0.5), (12, 0.4)], &[])
        .into_iter()
        .map(|v| v + 30.0)
        .collect();
    let a = sarima_auto_with(&y, 12, Some(BoxCox::identity()), &SearchConfig::default()).unwrap();
    let b = sarima_auto_with(&y, 12, Some(BoxCox::identity()), &SearchConfig::default()).unwrap();
    assert_eq!(a, b);
}
