//! Scalar losses with analytic gradients w.r.t. their logits.

use super::Real;
use ndarray::{Array1, Array3};

/// Numerically stable softmax.
pub fn softmax<F: Real>(logits: &Array1<F>) -> Array1<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let z = exps.sum();
    exps.mapv(|v| v / z)
}

/// Cross-entropy against a one-hot target bin: `-log p[target]`.
/// Returns the loss and its gradient w.r.t. the logits (`p - onehot`).
pub fn cross_entropy_logits<F: Real>(logits: &Array1<F>, target: usize) -> (F, Array1<F>) {
    let p = softmax(logits);
    let loss = -p[target].max(F::from_f64(f64::MIN_POSITIVE)).ln();
    let mut d = p;
    d[target] = d[target] - F::one();
    (loss, d)
}

/// KL(p || uniform) = log N - H(p), computed from logits.
/// Gradient w.r.t. logits is `p_k (log p_k + H(p))`.
pub fn kl_uniform_logits<F: Real>(logits: &Array1<F>) -> (F, Array1<F>) {
    let n = logits.len();
    let p = softmax(logits);
    let logn = F::from_f64((n as f64).ln());
    let tiny = F::from_f64(f64::MIN_POSITIVE);
    let entropy: F = p.iter().map(|&pi| -pi * pi.max(tiny).ln()).sum();
    let loss = (logn - entropy).max(F::zero());
    let d = p.mapv(|pi| pi * (pi.max(tiny).ln() + entropy));
    (loss, d)
}

/// Clamp a probability into [eps, 1-eps]; reports whether clamping fired.
pub fn clamp_prob<F: Real>(p: F, eps: f64) -> (F, bool) {
    let lo = F::from_f64(eps);
    let hi = F::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Binary adversarial pair loss with source labeled 1 and target labeled 0:
/// `-log p_src - log(1 - p_tgt)`. Returns (loss, dL/dp_src, dL/dp_tgt,
/// clamp_count). Gradients are zero where clamping fired.
pub fn adversarial_pair<F: Real>(p_src: F, p_tgt: F, eps: f64) -> (F, F, F, u64) {
    let (ps, cs) = clamp_prob(p_src, eps);
    let (pt, ct) = clamp_prob(p_tgt, eps);
    let loss = -ps.ln() - (F::one() - pt).ln();
    let d_src = if cs { F::zero() } else { -F::one() / ps };
    let d_tgt = if ct {
        F::zero()
    } else {
        F::one() / (F::one() - pt)
    };
    (loss, d_src, d_tgt, (cs as u64) + (ct as u64))
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Label value a pixel may carry to be excluded from losses and metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Mean per-pixel cross-entropy over a [K, H, W] logit map against a class
/// mask, skipping `IGNORE_INDEX`. Returns the mean loss, the gradient w.r.t.
/// the logits (already divided by the valid-pixel count), and that count.
pub fn seg_cross_entropy<F: Real>(
    logits: &Array3<F>,
    mask: &ndarray::Array2<u8>,
) -> (F, Array3<F>, usize) {
    let (k, h, w) = logits.dim();
    assert_eq!((h, w), mask.dim(), "logits/mask spatial mismatch");
    let mut dlogits = Array3::<F>::zeros((k, h, w));
    let mut total = 0.0f64;
    let mut valid = 0usize;
    for y in 0..h {
        for x in 0..w {
            let cls = mask[(y, x)];
            if cls == IGNORE_INDEX {
                continue;
            }
            let cls = cls as usize;
            debug_assert!(cls < k);
            // stable log-softmax along the class axis
            let mut maxv = F::neg_infinity();
            for c in 0..k {
                maxv = maxv.max(logits[(c, y, x)]);
            }
            let mut z = F::zero();
            for c in 0..k {
                z = z + (logits[(c, y, x)] - maxv).exp();
            }
            let logz = z.ln() + maxv;
            total += (logz - logits[(cls, y, x)]).to_f64();
            for c in 0..k {
                let p = (logits[(c, y, x)] - logz).exp();
                dlogits[(c, y, x)] = if c == cls { p - F::one() } else { p };
            }
            valid += 1;
        }
    }
    if valid == 0 {
        return (F::zero(), dlogits, 0);
    }
    let inv = F::from_f64(1.0 / valid as f64);
    dlogits.mapv_inplace(|v| v * inv);
    (F::from_f64(total / valid as f64), dlogits, valid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn uniform_logits_hit_analytic_anchors() {
        let logits = arr1(&[0.0f64, 0.0, 0.0, 0.0]);
        let (ce, _) = cross_entropy_logits(&logits, 2);
        assert!((ce - 4.0f64.ln()).abs() < 1e-12);
        let (kl, grad) = kl_uniform_logits(&logits);
        assert!(kl.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn one_hot_kl_approaches_log_n() {
        let logits = arr1(&[30.0f64, 0.0, 0.0, 0.0]);
        let (kl, _) = kl_uniform_logits(&logits);
        assert!((kl - 4.0f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn adversarial_balanced_point() {
        let (loss, ds, dt, clamps) = adversarial_pair(0.5f64, 0.5, 1e-6);
        assert!((loss - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        assert!((ds + 2.0).abs() < 1e-12);
        assert!((dt - 2.0).abs() < 1e-12);
        assert_eq!(clamps, 0);
    }

    #[test]
    fn ce_gradient_matches_finite_difference() {
        let logits = arr1(&[0.3f64, -1.2, 0.7, 0.0]);
        let (_, grad) = cross_entropy_logits(&logits, 1);
        let eps = 1e-6;
        for i in 0..4 {
            let mut lp = logits.clone();
            lp[i] += eps;
            let (up, _) = cross_entropy_logits(&lp, 1);
            lp[i] -= 2.0 * eps;
            let (dn, _) = cross_entropy_logits(&lp, 1);
            assert!(((up - dn) / (2.0 * eps) - grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn kl_gradient_matches_finite_difference() {
        let logits = arr1(&[0.5f64, -0.4, 1.1, -0.2]);
        let (_, grad) = kl_uniform_logits(&logits);
        let eps = 1e-6;
        for i in 0..4 {
            let mut lp = logits.clone();
            lp[i] += eps;
            let (up, _) = kl_uniform_logits(&lp);
            lp[i] -= 2.0 * eps;
            let (dn, _) = kl_uniform_logits(&lp);
            assert!(((up - dn) / (2.0 * eps) - grad[i]).abs() < 1e-8);
        }
    }
}
