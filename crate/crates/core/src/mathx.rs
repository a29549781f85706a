//! Scalar math helpers shared by losses and encoders.

use alloc::vec::Vec;

/// Guard for ℓ2 normalization: `x / max(‖x‖, ε)`.
pub const EPS_NORM: f64 = 1e-12;

/// Sigmoid inputs are clamped to this magnitude before the BCE; gradients are
/// zero beyond the clamp.
pub const SIGMOID_CLAMP: f64 = 30.0;

/// Temperatures are clamped to at least this value after optimizer updates.
pub const TAU_MIN: f64 = 0.01;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + libm::exp(-x)
    } else if x < -30.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Log-sum-exp of a slice, stable.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| libm::exp(x - m)).sum();
    m + libm::log(s)
}

/// In-place softmax of a slice.
pub fn softmax_inplace(xs: &mut [f64]) {
    let lse = logsumexp(xs);
    for x in xs.iter_mut() {
        *x = libm::exp(*x - lse);
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = xs.to_vec();
    softmax_inplace(&mut v);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_naive_on_moderate_inputs() {
        let xs = [0.3, -1.2, 2.5];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_even_for_large_logits() {
        let xs = [1000.0, 1001.0, 999.0];
        let p = softmax(&xs);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn softplus_identity_bce() {
        // softplus(z) - y*z equals -[y ln σ + (1-y) ln(1-σ)]
        for &z in &[-5.0, -0.3, 0.0, 2.7] {
            for &y in &[0.0, 1.0] {
                let s = sigmoid(z);
                let direct = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
                assert!((softplus(z) - y * z - direct).abs() < 1e-12);
            }
        }
    }
}
