//! Additive-error, no-trend, additive-season exponential smoothing, used to
//! carry the STL seasonal component forward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, BfgsOptions};

/// Smoothing weights are kept away from the boundary of their simplex.
const EDGE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtsFit {
    pub alpha: f64,
    pub gamma: f64,
    pub season: usize,
    /// Level after the last observation.
    pub level: f64,
    /// Seasonal states for the last `season` weeks, oldest first.
    pub seasonal: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
}

/// How the seasonal component is forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SeasonalForecaster {
    Ets(EtsFit),
    /// Repeats the last observed season; used when smoothing fails.
    Naive {
        last_season: Vec<f64>,
    },
}

impl SeasonalForecaster {
    /// Fits ETS(A,N,A) and falls back to the seasonal naive rule.
    pub fn fit(x: &[f64], season: usize) -> Result<SeasonalForecaster> {
        if season == 0 || x.len() < season {
            return Err(Error::TooShort {
                needed: season.max(1),
                got: x.len(),
            });
        }
        match EtsFit::fit(x, season) {
            Ok(f) => Ok(SeasonalForecaster::Ets(f)),
            Err(e) => {
                log::info!("seasonal smoothing failed ({e}); repeating the last season");
                Ok(SeasonalForecaster::Naive {
                    last_season: x[x.len() - season..].to_vec(),
                })
            }
        }
    }

    /// Point forecast `h` steps past the end.
    pub fn forecast(&self, h: usize) -> f64 {
        match self {
            SeasonalForecaster::Ets(f) => f.forecast(h),
            SeasonalForecaster::Naive { last_season } => {
                let m = last_season.len();
                last_season[(h - 1) % m]
            }
        }
    }
}

struct Pass {
    sse: f64,
    level: f64,
    seasonal: Vec<f64>,
}

/// Heuristic initial states: the first season's mean is the level and its
/// deviations the seasonal states.
fn initial_states(x: &[f64], m: usize) -> (f64, Vec<f64>) {
    let level = x[..m].iter().sum::<f64>() / m as f64;
    (level, x[..m].iter().map(|v| v - level).collect())
}

fn run(x: &[f64], m: usize, alpha: f64, gamma: f64) -> Pass {
    let (mut level, init) = initial_states(x, m);
    // ring buffer of the last m seasonal states
    let mut seasonal = init;
    let mut sse = 0.0;
    for (t, &v) in x.iter().enumerate() {
        let slot = t % m;
        let e = v - level - seasonal[slot];
        sse += e * e;
        level += alpha * e;
        seasonal[slot] += gamma * e;
    }
    // rotate so index 0 is the oldest state
    let start = x.len() % m;
    seasonal.rotate_left(start);
    Pass { sse, level, seasonal }
}

fn logistic(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Unconstrained pair to `0 < alpha < 1`, `0 < gamma < 1 - alpha`.
fn weights(u: &[f64]) -> (f64, f64) {
    let alpha = EDGE + (1.0 - 3.0 * EDGE) * logistic(u[0]);
    let gamma = EDGE + (1.0 - alpha - 2.0 * EDGE) * logistic(u[1]);
    (alpha, gamma)
}

impl EtsFit {
    /// Maximum likelihood over the two smoothing weights with the initial
    /// states held at their heuristic values.
    pub fn fit(x: &[f64], season: usize) -> Result<EtsFit> {
        let m = season;
        if x.len() < 2 * m {
            return Err(Error::TooShort {
                needed: 2 * m,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("seasonal component".into()));
        }
        let n = x.len() as f64;
        let scale = x.iter().map(|v| v * v).sum::<f64>() / n;
        let floor = 1e-20 * scale.max(1e-300);
        let objective = |u: &[f64]| {
            let (a, g) = weights(u);
            (run(x, m, a, g).sse / n).max(floor).ln()
        };
        let m_opt = optim::minimize(objective, &[-2.0, -3.0], &BfgsOptions::default());
        if !m_opt.f.is_finite() {
            return Err(Error::Estimation("seasonal smoothing objective is not finite".into()));
        }
        let (alpha, gamma) = weights(&m_opt.x);
        let pass = run(x, m, alpha, gamma);
        let sigma2 = (pass.sse / n).max(floor);
        let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
        Ok(EtsFit {
            alpha,
            gamma,
            season: m,
            level: pass.level,
            seasonal: pass.seasonal,
            sigma2,
            loglik,
        })
    }

    pub fn forecast(&self, h: usize) -> f64 {
        self.level + self.seasonal[(h - 1) % self.season]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_input_repeats_exactly() {
        let pattern = [3.0, -1.0, 0.5, -2.5];
        let x: Vec<f64> = (0..40).map(|t| pattern[t % 4]).collect();
        let f = EtsFit::fit(&x, 4).unwrap();
        for h in 1..=4 {
            assert!((f.forecast(h) - pattern[(40 + h - 1) % 4]).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_stay_in_the_simplex() {
        for u in [[-50.0, -50.0], [50.0, 50.0], [0.0, 0.0]] {
            let (a, g) = weights(&u);
            assert!(a > 0.0 && g > 0.0 && a + g < 1.0);
        }
    }

    #[test]
    fn naive_fallback_repeats_last_season() {
        let f = SeasonalForecaster::Naive {
            last_season: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(f.forecast(1), 1.0);
        assert_eq!(f.forecast(4), 1.0);
        assert_eq!(f.forecast(2), 2.0);
    }
}
