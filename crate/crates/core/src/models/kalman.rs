//! Exact Gaussian likelihood of a stationary ARMA process through the
//! Kalman filter on Harvey's state-space form.
//!
//! The state has dimension `r = max(p, q + 1)` for the expanded
//! (non-seasonal times seasonal) polynomials. The transition matrix is the
//! companion form with the AR coefficients in its first column, so each
//! covariance update is O(r^2) instead of O(r^3). Once the updated state
//! covariance has collapsed to zero the filter switches to the steady-state
//! recursion, which is O(r) per step.
//!
//! Everything is computed with unit innovation variance; callers
//! concentrate the variance out of the likelihood.

use crate::error::{Error, Result};

/// Expanded ARMA polynomials: `1 - sum ar_k B^k` and `1 + sum ma_k B^k`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Arma {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
}

const STEADY_TOL: f64 = 1e-12;

impl Arma {
    pub fn state_dim(&self) -> usize {
        self.ar.len().max(self.ma.len() + 1)
    }

    fn ar_at(&self, i: usize) -> f64 {
        self.ar.get(i).copied().unwrap_or(0.0)
    }

    /// Loading of the innovation on state element `i` (0-based).
    fn r_at(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.ma.get(i - 1).copied().unwrap_or(0.0)
        }
    }

    /// Psi weights `psi_0..psi_{len-1}` of the MA(infinity) representation.
    pub fn psi(&self, len: usize) -> Vec<f64> {
        let mut psi = vec![0.0; len];
        for j in 0..len {
            let mut v = if j == 0 {
                1.0
            } else {
                self.ma.get(j - 1).copied().unwrap_or(0.0)
            };
            for i in 1..=j.min(self.ar.len()) {
                v += self.ar[i - 1] * psi[j - i];
            }
            psi[j] = v;
        }
        psi
    }

    /// Autocovariances `gamma(0..=max_lag)` for unit innovation variance.
    ///
    /// The pure autoregression's autocorrelations come from its partial
    /// autocorrelations by the Durbin-Levinson recursion (O(p^2)); the moving
    /// average part is then applied as a sparse convolution.
    pub fn autocovariances(&self, max_lag: usize) -> Result<Vec<f64>> {
        let q = self.ma.len();
        let len = max_lag + q + 1;
        let mut rho = vec![0.0; len.max(self.ar.len() + 1)];
        rho[0] = 1.0;
        let mut gamma0 = 1.0;
        if !self.ar.is_empty() {
            let pacf = super::poly::ar_to_pacf(&self.ar)
                .ok_or_else(|| Error::Estimation("autoregression is not stationary".into()))?;
            let p = pacf.len();
            let mut phi: Vec<f64> = Vec::with_capacity(p);
            let mut next: Vec<f64> = Vec::with_capacity(p);
            for k in 1..=p {
                let pk = pacf[k - 1];
                let mut num = 0.0;
                let mut den = 1.0;
                for j in 1..k {
                    num += phi[j - 1] * rho[k - j];
                    den -= phi[j - 1] * rho[j];
                }
                rho[k] = pk * den + num;
                next.clear();
                for j in 1..k {
                    next.push(phi[j - 1] - pk * phi[k - j - 1]);
                }
                next.push(pk);
                std::mem::swap(&mut phi, &mut next);
                gamma0 /= 1.0 - pk * pk;
            }
            let ar: Vec<(usize, f64)> = self.nonzero(&self.ar);
            for k in p + 1..rho.len() {
                rho[k] = ar.iter().map(|&(l, c)| c * rho[k - l]).sum();
            }
        } else {
            rho[1..].iter_mut().for_each(|v| *v = 0.0);
        }
        let mut b: Vec<(usize, f64)> = vec![(0, 1.0)];
        b.extend(self.nonzero(&self.ma));
        let mut gamma = vec![0.0; max_lag + 1];
        for (k, g) in gamma.iter_mut().enumerate() {
            let mut v = 0.0;
            for &(i, bi) in &b {
                for &(j, bj) in &b {
                    v += bi * bj * rho[(k + j).abs_diff(i)];
                }
            }
            *g = v * gamma0;
        }
        if gamma.iter().any(|g| !g.is_finite()) || gamma[0] <= 0.0 {
            return Err(Error::NonFinite("ARMA autocovariances".into()));
        }
        Ok(gamma)
    }

    /// Nonzero coefficients with their 1-based lags.
    fn nonzero(&self, coef: &[f64]) -> Vec<(usize, f64)> {
        coef.iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| (i + 1, *c))
            .collect()
    }

    /// Reference autocovariances from the (p+1)-dimensional linear system.
    #[cfg(test)]
    fn autocovariances_by_solve(&self, max_lag: usize) -> Result<Vec<f64>> {
        let p = self.ar.len();
        let q = self.ma.len();
        let psi = self.psi(q + 1);
        let b = |j: usize| if j == 0 { 1.0 } else { self.ma[j - 1] };
        // c_k = sum_{j=k}^{q} b_j psi_{j-k}
        let c = |k: usize| -> f64 { (k..=q).map(|j| b(j) * psi[j - k]).sum() };
        let mut gamma = vec![0.0; max_lag.max(p) + 1];
        if p == 0 {
            for (k, g) in gamma.iter_mut().enumerate() {
                *g = if k <= q {
                    (0..=q - k).map(|j| b(j) * b(j + k)).sum()
                } else {
                    0.0
                };
            }
        } else {
            let mut m = nalgebra::DMatrix::<f64>::zeros(p + 1, p + 1);
            let mut rhs = nalgebra::DVector::<f64>::zeros(p + 1);
            for k in 0..=p {
                m[(k, k)] += 1.0;
                for i in 1..=p {
                    let lag = k.abs_diff(i);
                    m[(k, lag)] -= self.ar[i - 1];
                }
                rhs[k] = c(k);
            }
            let sol = m
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Estimation("singular autocovariance system".into()))?;
            for k in 0..=p {
                gamma[k] = sol[k];
            }
            for k in p + 1..gamma.len() {
                let mut v = if k <= q { c(k) } else { 0.0 };
                for i in 1..=p {
                    v += self.ar[i - 1] * gamma[k - i];
                }
                gamma[k] = v;
            }
        }
        if gamma.iter().any(|g| !g.is_finite()) || gamma[0] <= 0.0 {
            return Err(Error::NonFinite("ARMA autocovariances".into()));
        }
        gamma.truncate(max_lag + 1);
        Ok(gamma)
    }

    /// First column of the stationary state covariance:
    /// `Cov(y_t, alpha_t(k))` for `k = 0..r`.
    pub fn initial_first_column(&self) -> Result<Vec<f64>> {
        let r = self.state_dim();
        let gamma = self.autocovariances(r)?;
        let psi = self.psi(r + 1);
        let ar = self.nonzero(&self.ar);
        let mut ma = vec![(0, 1.0)];
        ma.extend(self.nonzero(&self.ma));
        let mut row0 = vec![0.0; r];
        row0[0] = gamma[0];
        for (k0, slot) in row0.iter_mut().enumerate().skip(1) {
            let mut v = 0.0;
            for &(m, c) in &ar {
                if m > k0 {
                    v += c * gamma[m - k0];
                }
            }
            for &(m, c) in &ma {
                if m >= k0 {
                    v += c * psi[m - k0];
                }
            }
            *slot = v;
        }
        Ok(row0)
    }

    /// Stationary covariance of the state vector (row-major, r x r).
    pub fn initial_covariance(&self) -> Result<Vec<f64>> {
        let r = self.state_dim();
        let gamma = self.autocovariances(r)?;
        let row0 = self.initial_first_column()?;
        let mut p = vec![0.0; r * r];
        let at = |p: &Vec<f64>, i: usize, j: usize| -> f64 {
            if i >= r || j >= r {
                0.0
            } else {
                p[i * r + j]
            }
        };
        for i in (1..r).rev() {
            for j in (i..r).rev() {
                let v = self.ar_at(i) * self.ar_at(j) * gamma[0]
                    + self.ar_at(i) * row0.get(j + 1).copied().unwrap_or(0.0)
                    + self.ar_at(j) * row0.get(i + 1).copied().unwrap_or(0.0)
                    + at(&p, i + 1, j + 1)
                    + self.r_at(i) * self.r_at(j);
                p[i * r + j] = v;
                p[j * r + i] = v;
            }
        }
        for (j, v) in row0.iter().enumerate() {
            p[j] = *v;
            p[j * r] = *v;
        }
        Ok(p)
    }

    /// Applies the transition matrix to a state vector.
    pub fn transition(&self, a: &[f64]) -> Vec<f64> {
        let r = a.len();
        (0..r)
            .map(|i| self.ar_at(i) * a[0] + if i + 1 < r { a[i + 1] } else { 0.0 })
            .collect()
    }

    /// `T P T' + R R'` for a row-major covariance.
    pub fn propagate(&self, p: &[f64]) -> Vec<f64> {
        let r = self.state_dim();
        let mut out = vec![0.0; r * r];
        self.propagate_into(p, &mut out);
        out
    }

    fn propagate_into(&self, p: &[f64], out: &mut [f64]) {
        let r = self.state_dim();
        let get = |i: usize, j: usize| -> f64 {
            if i >= r || j >= r {
                0.0
            } else {
                p[i * r + j]
            }
        };
        let p00 = p[0];
        for i in 0..r {
            let ai = self.ar_at(i);
            let ri = self.r_at(i);
            for j in i..r {
                let aj = self.ar_at(j);
                let v = ai * aj * p00 + ai * get(0, j + 1) + aj * get(i + 1, 0) + get(i + 1, j + 1) + ri * self.r_at(j);
                out[i * r + j] = v;
                out[j * r + i] = v;
            }
        }
    }
}

/// Output of one filter pass over several series sharing the same model.
#[derive(Debug, Clone)]
pub(crate) struct Filtered {
    /// Standardised innovations `v_t / sqrt(F_t)`, one vector per series.
    pub std_innov: Vec<Vec<f64>>,
    /// Raw prediction errors `v_t`.
    pub raw_innov: Vec<Vec<f64>>,
    pub sum_log_f: f64,
    /// Predicted state `a_{n+1|n}` per series.
    pub next_state: Vec<Vec<f64>>,
}

/// Runs the filter over each series. The variance recursion does not depend
/// on the data, so it is computed once for all of them.
///
/// Starting from the stationary covariance, each covariance increment has
/// rank one, so the Riccati recursion is replaced by Chandrasekhar-type
/// updates of the gain, the prediction variance and a single direction
/// vector: O(r) per step rather than O(r^2).
pub(crate) fn filter(arma: &Arma, series: &[&[f64]]) -> Result<Filtered> {
    let r = arma.state_dim();
    let n = series.first().map(|s| s.len()).unwrap_or(0);
    debug_assert!(series.iter().all(|s| s.len() == n));
    let first_col = arma.initial_first_column()?;
    let mut f = first_col[0];
    // k = T P e1 (unnormalised gain); w spans the covariance increment
    let mut k = arma.transition(&first_col);
    let mut w = k.clone();
    let mut m = -1.0 / f;
    let mut steady = false;
    let mut tw = vec![0.0; r];

    let ar: Vec<f64> = (0..r).map(|i| arma.ar_at(i)).collect();
    let last = r - 1;

    let mut states: Vec<Vec<f64>> = vec![vec![0.0; r]; series.len()];
    let mut std_innov: Vec<Vec<f64>> = vec![Vec::with_capacity(n); series.len()];
    let mut raw_innov: Vec<Vec<f64>> = vec![Vec::with_capacity(n); series.len()];
    let mut sum_log_f = 0.0;

    for t in 0..n {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::NonFinite(format!("prediction variance at step {t}")));
        }
        sum_log_f += f.ln();
        let sf = f.sqrt();
        for (s, y) in series.iter().enumerate() {
            let a = &mut states[s];
            let v = y[t] - a[0];
            std_innov[s].push(v / sf);
            raw_innov[s].push(v);
            let scaled = v / f;
            let a0 = a[0];
            for i in 0..last {
                a[i] = ar[i] * a0 + a[i + 1] + k[i] * scaled;
            }
            a[last] = ar[last] * a0 + k[last] * scaled;
        }
        if steady {
            continue;
        }
        let zw = w[0];
        let f_next = f + zw * zw * m;
        let mz = m * zw;
        for i in 0..last {
            tw[i] = ar[i] * zw + w[i + 1];
        }
        tw[last] = ar[last] * zw;
        for i in 0..r {
            k[i] += tw[i] * mz;
        }
        m += m * m * zw * zw / f;
        let ratio = zw / f_next;
        let mut max_w: f64 = 0.0;
        for i in 0..r {
            w[i] = tw[i] - k[i] * ratio;
            max_w = max_w.max(w[i].abs());
        }
        f = f_next;
        if max_w * max_w * m.abs() < STEADY_TOL * f {
            steady = true;
        }
    }
    if !sum_log_f.is_finite() {
        return Err(Error::NonFinite("log prediction variances".into()));
    }
    Ok(Filtered {
        std_innov,
        raw_innov,
        sum_log_f,
        next_state: states,
    })
}

/// Predicted state covariance `P_{n+1|n}` after `n` observations, by the
/// Riccati recursion.
pub(crate) fn predicted_covariance(arma: &Arma, n: usize) -> Result<Vec<f64>> {
    let r = arma.state_dim();
    let mut p = arma.initial_covariance()?;
    let mut p_next = vec![0.0; r * r];
    for t in 0..n {
        let f = p[0];
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::NonFinite(format!("prediction variance at step {t}")));
        }
        let row0: Vec<f64> = p[..r].to_vec();
        let mut max_abs: f64 = 0.0;
        for i in 0..r {
            for j in 0..r {
                let v = p[i * r + j] - row0[i] * row0[j] / f;
                p[i * r + j] = v;
                max_abs = max_abs.max(v.abs());
            }
        }
        if max_abs < STEADY_TOL {
            // the filtered state is known exactly from here on
            for i in 0..r {
                for j in 0..r {
                    p[i * r + j] = arma.r_at(i) * arma.r_at(j);
                }
            }
            return Ok(p);
        }
        arma.propagate_into(&p, &mut p_next);
        std::mem::swap(&mut p, &mut p_next);
    }
    Ok(p)
}

/// Means and joint error covariance (unit innovation variance) of the next
/// `h` values, given the predicted state and covariance for step 1.
pub(crate) fn forecast(arma: &Arma, state: &[f64], cov: &[f64], h: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let r = arma.state_dim();
    let mut means = Vec::with_capacity(h);
    let mut a = state.to_vec();
    let mut p = cov.to_vec();
    let mut covs: Vec<Vec<f64>> = vec![vec![0.0; h]; h];
    for i in 0..h {
        means.push(a[0]);
        // Cov(e_i, e_j) = (T^{j-i} P_i e_1)_0 for j >= i
        let mut col: Vec<f64> = (0..r).map(|k| p[k * r]).collect();
        for j in i..h {
            covs[i][j] = col[0];
            covs[j][i] = col[0];
            col = arma.transition(&col);
        }
        a = arma.transition(&a);
        p = arma.propagate(&p);
    }
    (means, covs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lyapunov_oracle(arma: &Arma) -> Vec<f64> {
        // fixed-point iteration P <- T P T' + R R' from zero
        let r = arma.state_dim();
        let mut p = vec![0.0; r * r];
        for _ in 0..5000 {
            p = arma.propagate(&p);
        }
        p
    }

    #[test]
    fn autocovariances_match_linear_system() {
        for arma in [
            Arma {
                ar: vec![0.5, -0.2],
                ma: vec![0.3],
            },
            Arma {
                ar: vec![0.6, 0.0, 0.0, 0.2, -0.12],
                ma: vec![0.3, 0.0, 0.0, -0.5, -0.15],
            },
            Arma {
                ar: vec![0.9],
                ma: vec![],
            },
            Arma {
                ar: vec![],
                ma: vec![0.4, 0.1],
            },
        ] {
            let fast = arma.autocovariances(8).unwrap();
            let slow = arma.autocovariances_by_solve(8).unwrap();
            for (a, b) in fast.iter().zip(&slow) {
                assert_relative_eq!(a, b, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn ar1_variance() {
        let arma = Arma {
            ar: vec![0.5],
            ma: vec![],
        };
        let p = arma.initial_covariance().unwrap();
        assert_relative_eq!(p[0], 1.0 / 0.75, epsilon = 1e-12);
    }

    #[test]
    fn initial_covariance_matches_lyapunov_iteration() {
        for arma in [
            Arma {
                ar: vec![0.5, -0.2],
                ma: vec![0.3],
            },
            Arma {
                ar: vec![],
                ma: vec![0.4, 0.1, -0.2],
            },
            Arma {
                ar: vec![0.6, 0.0, 0.0, 0.2, -0.12],
                ma: vec![0.3, 0.0, 0.0, -0.5, -0.15],
            },
        ] {
            let exact = arma.initial_covariance().unwrap();
            let oracle = lyapunov_oracle(&arma);
            for (a, b) in exact.iter().zip(&oracle) {
                assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn white_noise_innovations_are_the_data() {
        let arma = Arma { ar: vec![], ma: vec![] };
        let y = [0.5, -0.3, 1.2];
        let f = filter(&arma, &[&y]).unwrap();
        assert_eq!(f.std_innov[0], y.to_vec());
        assert_eq!(f.sum_log_f, 0.0);
    }

    #[test]
    fn ar1_forecast_variance_ratio() {
        let phi = 0.6;
        let arma = Arma {
            ar: vec![phi],
            ma: vec![],
        };
        let y = [0.1, 0.4, -0.2, 0.3];
        let f = filter(&arma, &[&y]).unwrap();
        let cov = predicted_covariance(&arma, y.len()).unwrap();
        let (m, c) = forecast(&arma, &f.next_state[0], &cov, 2);
        assert_relative_eq!(m[0], phi * 0.3, epsilon = 1e-12);
        assert_relative_eq!(m[1], phi * phi * 0.3, epsilon = 1e-12);
        assert_relative_eq!(c[1][1] / c[0][0], 1.0 + phi * phi, epsilon = 1e-12);
        assert_relative_eq!(c[0][1], phi, epsilon = 1e-12);
    }

    /// Reference filter: plain Riccati recursion with full matrices.
    fn riccati_reference(arma: &Arma, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let r = arma.state_dim();
        let mut p = arma.initial_covariance().unwrap();
        let mut a = vec![0.0; r];
        let mut innov = Vec::new();
        let mut fs = Vec::new();
        for &yt in y {
            let f = p[0];
            let v = yt - a[0];
            innov.push(v);
            fs.push(f);
            let gain: Vec<f64> = (0..r).map(|i| p[i * r] / f).collect();
            let upd: Vec<f64> = (0..r).map(|i| a[i] + gain[i] * v).collect();
            let row0: Vec<f64> = p[..r].to_vec();
            for i in 0..r {
                for j in 0..r {
                    p[i * r + j] -= row0[i] * row0[j] / f;
                }
            }
            a = arma.transition(&upd);
            p = arma.propagate(&p);
        }
        (innov, fs)
    }

    #[test]
    fn fast_recursion_matches_riccati() {
        let arma = Arma {
            ar: vec![0.5, -0.2, 0.0, 0.3],
            ma: vec![0.4, 0.0, 0.2, -0.3, 0.1],
        };
        let y: Vec<f64> = (0..60).map(|t| ((t * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let f = filter(&arma, &[&y]).unwrap();
        let (innov, fs) = riccati_reference(&arma, &y);
        for t in 0..y.len() {
            assert_relative_eq!(f.raw_innov[0][t], innov[t], epsilon = 1e-10);
        }
        let slf: f64 = fs.iter().map(|v| v.ln()).sum();
        assert_relative_eq!(f.sum_log_f, slf, epsilon = 1e-10);
    }
}
