//! Lag-polynomial helpers: multiplicative expansion, the partial
//! autocorrelation reparameterisation and stationarity checks.

/// Multiplies two polynomials given as coefficient vectors (constant first).
pub(crate) fn multiply(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Expands `(1 - sum phi_i B^i)(1 - sum Phi_j B^{sj})` and returns the
/// autoregressive coefficients `a_k` of `1 - sum a_k B^k`.
pub(crate) fn expand_ar(phi: &[f64], seasonal: &[f64], s: usize) -> Vec<f64> {
    let mut ns = vec![1.0];
    ns.extend(phi.iter().map(|c| -c));
    let mut sp = vec![0.0; seasonal.len() * s + 1];
    sp[0] = 1.0;
    for (j, c) in seasonal.iter().enumerate() {
        sp[(j + 1) * s] = -c;
    }
    let prod = multiply(&ns, &sp);
    let mut out: Vec<f64> = prod[1..].iter().map(|c| -c).collect();
    trim_trailing_zeros(&mut out);
    out
}

/// Expands `(1 + sum theta_i B^i)(1 + sum Theta_j B^{sj})` and returns the
/// coefficients `b_k` of `1 + sum b_k B^k`.
pub(crate) fn expand_ma(theta: &[f64], seasonal: &[f64], s: usize) -> Vec<f64> {
    let mut ns = vec![1.0];
    ns.extend_from_slice(theta);
    let mut sp = vec![0.0; seasonal.len() * s + 1];
    sp[0] = 1.0;
    for (j, c) in seasonal.iter().enumerate() {
        sp[(j + 1) * s] = *c;
    }
    let prod = multiply(&ns, &sp);
    let mut out = prod[1..].to_vec();
    trim_trailing_zeros(&mut out);
    out
}

fn trim_trailing_zeros(v: &mut Vec<f64>) {
    while v.last() == Some(&0.0) {
        v.pop();
    }
}

/// Maps partial autocorrelations in (-1, 1) to the coefficients of a
/// stationary autoregression `1 - sum a_k B^k` (Durbin-Levinson).
pub(crate) fn pacf_to_ar(pacf: &[f64]) -> Vec<f64> {
    let p = pacf.len();
    let mut a = vec![0.0; p];
    let mut prev = vec![0.0; p];
    for k in 0..p {
        prev[..k].copy_from_slice(&a[..k]);
        a[k] = pacf[k];
        for j in 0..k {
            a[j] = prev[j] - pacf[k] * prev[k - 1 - j];
        }
    }
    a
}

/// Inverse of [`pacf_to_ar`]. Returns `None` when the polynomial is not
/// stationary (some partial autocorrelation has modulus >= 1).
pub(crate) fn ar_to_pacf(ar: &[f64]) -> Option<Vec<f64>> {
    let p = ar.len();
    let mut a = ar.to_vec();
    let mut pacf = vec![0.0; p];
    for k in (0..p).rev() {
        let r = a[k];
        if !r.is_finite() || r.abs() >= 1.0 {
            return None;
        }
        pacf[k] = r;
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = a[..k].to_vec();
        for j in 0..k {
            a[j] = (prev[j] + r * prev[k - 1 - j]) / denom;
        }
    }
    Some(pacf)
}

/// Whether `1 - sum a_k z^k` has all roots outside the unit circle.
pub(crate) fn is_stationary(ar: &[f64]) -> bool {
    ar_to_pacf(ar).is_some()
}

/// Whether `1 + sum b_k z^k` has all roots outside the unit circle.
pub(crate) fn is_invertible(ma: &[f64]) -> bool {
    let neg: Vec<f64> = ma.iter().map(|c| -c).collect();
    is_stationary(&neg)
}

/// Whether every root of `1 - sum a_k z^k` has modulus above `radius`.
/// Substituting `z = radius * w` reduces this to a stationarity check.
pub(crate) fn roots_outside(ar: &[f64], radius: f64) -> bool {
    let scaled: Vec<f64> = ar
        .iter()
        .enumerate()
        .map(|(k, c)| c * radius.powi(k as i32 + 1))
        .collect();
    is_stationary(&scaled)
}

/// Unconstrained reals to stationary AR coefficients.
pub(crate) fn ar_from_free(u: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = u.iter().map(|v| v.tanh()).collect();
    pacf_to_ar(&r)
}

/// Unconstrained reals to invertible MA coefficients (`1 + sum b_k B^k`).
pub(crate) fn ma_from_free(u: &[f64]) -> Vec<f64> {
    ar_from_free(u).into_iter().map(|c| -c).collect()
}

/// Stationary AR coefficients back to unconstrained reals. Coefficients on
/// or outside the boundary are shrunk towards zero first.
pub(crate) fn ar_to_free(ar: &[f64]) -> Vec<f64> {
    let mut a = ar.to_vec();
    loop {
        if let Some(p) = ar_to_pacf(&a) {
            if p.iter().all(|r| r.abs() < 0.99) {
                return p.iter().map(|r| r.atanh()).collect();
            }
        }
        a.iter_mut().for_each(|c| *c *= 0.9);
    }
}

pub(crate) fn ma_to_free(ma: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = ma.iter().map(|c| -c).collect();
    ar_to_free(&neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn expansion_of_seasonal_ar() {
        // (1 - 0.5B)(1 - 0.3B^4) = 1 - 0.5B - 0.3B^4 + 0.15B^5
        let a = expand_ar(&[0.5], &[0.3], 4);
        assert_eq!(a.len(), 5);
        assert!((a[0] - 0.5).abs() < 1e-15);
        assert!((a[3] - 0.3).abs() < 1e-15);
        assert!((a[4] + 0.15).abs() < 1e-15);
    }

    #[test]
    fn expansion_of_seasonal_ma() {
        // (1 + 0.4B)(1 + 0.2B^3) = 1 + 0.4B + 0.2B^3 + 0.08B^4
        let b = expand_ma(&[0.4], &[0.2], 3);
        assert_eq!(b, vec![0.4, 0.0, 0.2, 0.08000000000000002]);
    }

    #[test]
    fn stationarity_checks() {
        assert!(is_stationary(&[0.5]));
        assert!(!is_stationary(&[1.0]));
        assert!(!is_stationary(&[0.5, 0.6]));
        assert!(is_invertible(&[0.9]));
        assert!(!is_invertible(&[-1.2]));
    }

    #[test]
    fn root_margin() {
        // 1 - 0.98z has its root at 1/0.98 ~ 1.0204
        assert!(roots_outside(&[0.98], 1.01));
        assert!(!roots_outside(&[0.995], 1.01));
        assert!(roots_outside(&[], 1.01));
    }

    proptest! {
        #[test]
        fn pacf_round_trip(u in prop::collection::vec(-2.0f64..2.0, 1..6)) {
            let ar = ar_from_free(&u);
            prop_assert!(is_stationary(&ar));
            let back = ar_to_pacf(&ar).unwrap();
            for (r, ui) in back.iter().zip(&u) {
                prop_assert!((r - ui.tanh()).abs() < 1e-8);
            }
        }
    }
}
