//! Task network: a 1x1 convolution to K class channels on the invariant
//! features, bilinearly upsampled back to input resolution, trained with
//! per-pixel cross-entropy on source labels.

use crate::encoder::{FeatureMap, FeatureTag};
use crate::error::{SadError, SadResult};
use crate::nn::losses::seg_cross_entropy;
use crate::nn::ops::{upsample_bilinear, upsample_bilinear_backward, Conv2d, Conv2dGrad};
use crate::nn::Real;
use ndarray::{Array2, Array3, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SegHeadParams<F> {
    pub conv: Conv2d<F>,
    /// Upsampling factor back to input resolution (the encoder's downscale).
    pub upscale: usize,
}

pub struct SegTrace<F> {
    col: Array2<F>,
    in_dim: (usize, usize, usize),
    low_dim: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct SegHeadGrads<F> {
    pub conv: Conv2dGrad<F>,
}

impl<F: Real> SegHeadGrads<F> {
    pub fn add_assign(&mut self, other: &SegHeadGrads<F>) {
        self.conv.add_assign(&other.conv);
    }

    pub fn views(&self) -> Vec<ArrayViewD<'_, F>> {
        vec![
            self.conv.dw.view().into_dyn(),
            self.conv.db.view().into_dyn(),
        ]
    }
}

impl<F: Real> SegHeadParams<F> {
    pub fn init(rng: &mut ChaCha8Rng, channels: usize, classes: usize, upscale: usize) -> Self {
        SegHeadParams {
            conv: Conv2d::kaiming(channels, classes, 1, 1, 0, rng),
            upscale,
        }
    }

    pub fn classes(&self) -> usize {
        self.conv.w.shape()[0]
    }

    /// K x (H'*s) x (W'*s) logits at input resolution.
    pub fn forward(&self, z: &FeatureMap<F>) -> SadResult<(Array3<F>, SegTrace<F>)> {
        if z.tag != FeatureTag::Inv {
            return Err(SadError::Contract(
                "task head consumes invariant features only; got a spf-tagged map".into(),
            ));
        }
        if z.channels() != self.conv.w.shape()[1] {
            return Err(SadError::Shape(format!(
                "task head expects {} channels, got {}",
                self.conv.w.shape()[1],
                z.channels()
            )));
        }
        let (low, col) = self.conv.forward(&z.values);
        let logits = upsample_bilinear(&low, self.upscale);
        Ok((
            logits,
            SegTrace {
                col,
                in_dim: z.values.dim(),
                low_dim: low.dim(),
            },
        ))
    }

    pub fn backward(&self, trace: &SegTrace<F>, dlogits: &Array3<F>) -> (SegHeadGrads<F>, Array3<F>) {
        let dlow = upsample_bilinear_backward(trace.low_dim, self.upscale, dlogits);
        let (g, dz) = self.conv.backward(&trace.col, trace.in_dim, &dlow);
        (SegHeadGrads { conv: g }, dz)
    }

    pub fn zero_grads(&self) -> SegHeadGrads<F> {
        SegHeadGrads {
            conv: self.conv.zero_grad(),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, F>)) {
        f(format!("{prefix}conv.w"), self.conv.w.view().into_dyn());
        f(format!("{prefix}conv.b"), self.conv.b.view().into_dyn());
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>)) {
        f(format!("{prefix}conv.w"), self.conv.w.view_mut().into_dyn());
        f(format!("{prefix}conv.b"), self.conv.b.view_mut().into_dyn());
    }

    pub fn learned_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        vec![
            self.conv.w.view_mut().into_dyn(),
            self.conv.b.view_mut().into_dyn(),
        ]
    }
}

/// Mean per-pixel cross-entropy; class index 255 is skipped. Class indices at
/// or above K (other than 255) are a data error.
pub fn loss_task<F: Real>(logits: &Array3<F>, mask: &Array2<u8>) -> SadResult<(F, Array3<F>)> {
    let k = logits.shape()[0];
    for &m in mask.iter() {
        if m != crate::nn::losses::IGNORE_INDEX && m as usize >= k {
            return Err(SadError::Data(format!(
                "mask class {m} out of range for {k} classes"
            )));
        }
    }
    if logits.shape()[1] != mask.shape()[0] || logits.shape()[2] != mask.shape()[1] {
        return Err(SadError::Shape(format!(
            "logits {:?} vs mask {:?}",
            &logits.shape()[1..],
            mask.shape()
        )));
    }
    let (loss, dlogits, _) = seg_cross_entropy(logits, mask);
    Ok((loss, dlogits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn headless(classes: usize) -> SegHeadParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        SegHeadParams::init(&mut rng, 8, classes, 8)
    }

    fn inv(values: Array3<f64>) -> FeatureMap<f64> {
        FeatureMap {
            values,
            tag: FeatureTag::Inv,
        }
    }

    #[test]
    fn output_matches_input_resolution() {
        let head = headless(6);
        for hw in [4usize, 8, 16] {
            let z = inv(Array3::zeros((8, hw, hw)));
            let (logits, _) = head.forward(&z).unwrap();
            assert_eq!(logits.dim(), (6, hw * 8, hw * 8));
        }
    }

    #[test]
    fn zero_features_zero_head_gives_uniform_posteriors() {
        let mut head = headless(6);
        head.conv.w.fill(0.0);
        let z = inv(Array3::zeros((8, 4, 4)));
        let (logits, _) = head.forward(&z).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let mask = Array2::<u8>::zeros((32, 32));
        let (loss, _) = loss_task(&logits, &mask).unwrap();
        assert!((loss - 6.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn spf_input_rejected() {
        let head = headless(6);
        let z = FeatureMap {
            values: Array3::<f64>::zeros((8, 4, 4)),
            tag: FeatureTag::Spf,
        };
        assert!(matches!(head.forward(&z), Err(SadError::Contract(_))));
    }

    #[test]
    fn loss_matches_per_pixel_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let logits = Array3::from_shape_simple_fn((3, 4, 4), || rng.random::<f64>() * 2.0 - 1.0);
        let mask = Array2::from_shape_fn((4, 4), |(y, x)| (((y * 4 + x) * 7) % 3) as u8);
        let (got, _) = loss_task(&logits, &mask).unwrap();
        let mut want = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                let z: f64 = (0..3).map(|c| logits[(c, y, x)].exp()).sum();
                want += z.ln() - logits[(mask[(y, x)] as usize, y, x)];
            }
        }
        want /= 16.0;
        assert!((got - want).abs() <= 1e-6);
    }

    #[test]
    fn ignore_index_skipped_and_bad_class_rejected() {
        let logits = Array3::<f64>::zeros((3, 2, 2));
        let mut mask = Array2::<u8>::zeros((2, 2));
        mask[(0, 0)] = 255;
        let (loss, d) = loss_task(&logits, &mask).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-9);
        for c in 0..3 {
            assert_eq!(d[(c, 0, 0)], 0.0, "ignored pixel must carry no gradient");
        }
        mask[(0, 1)] = 3;
        assert!(matches!(loss_task(&logits, &mask), Err(SadError::Data(_))));
    }

    #[test]
    fn class_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = Array3::from_shape_simple_fn((4, 4, 4), || rng.random::<f64>());
        let mask = Array2::from_shape_fn((4, 4), |(y, x)| ((y + 2 * x) % 4) as u8);
        let (base, _) = loss_task(&logits, &mask).unwrap();
        let perm = [2usize, 0, 3, 1];
        let mut plogits = logits.clone();
        for c in 0..4 {
            plogits
                .index_axis_mut(ndarray::Axis(0), perm[c])
                .assign(&logits.index_axis(ndarray::Axis(0), c));
        }
        let pmask = mask.mapv(|m| perm[m as usize] as u8);
        let (permuted, _) = loss_task(&plogits, &pmask).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn perfect_logits_near_zero_loss() {
        let mask = Array2::from_shape_fn((8, 8), |(y, _)| (y % 3) as u8);
        let mut logits = Array3::<f64>::zeros((3, 8, 8));
        for y in 0..8 {
            for x in 0..8 {
                logits[(mask[(y, x)] as usize, y, x)] = 30.0;
            }
        }
        let (loss, _) = loss_task(&logits, &mask).unwrap();
        assert!(loss <= 1e-4);
    }

    #[test]
    fn gradcheck_through_upsample_and_head() {
        let head = headless(3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let z = inv(Array3::from_shape_simple_fn((8, 4, 4), || {
            rng.random::<f64>() - 0.5
        }));
        let mask = Array2::from_shape_fn((32, 32), |(y, x)| ((y + x) % 3) as u8);
        let (logits, trace) = head.forward(&z).unwrap();
        let (_, dlog) = loss_task(&logits, &mask).unwrap();
        let (grads, dz) = head.backward(&trace, &dlog);
        let f = |h: &SegHeadParams<f64>, z: &FeatureMap<f64>| {
            let (l, _) = h.forward(z).unwrap();
            loss_task(&l, &mask).unwrap().0
        };
        let eps = 1e-6;
        for &idx in &[(0usize, 0usize, 0usize), (3, 1, 2), (7, 3, 3)] {
            let mut zp = z.clone();
            zp.values[idx] += eps;
            let up = f(&head, &zp);
            zp.values[idx] -= 2.0 * eps;
            let dn = f(&head, &zp);
            let num = (up - dn) / (2.0 * eps);
            let rel = (num - dz[idx]).abs() / dz[idx].abs().max(num.abs()).max(1e-8);
            assert!(rel < 1e-3, "idx {idx:?}");
        }
        let mut hp = head.clone();
        let widx = (1, 4, 0, 0);
        hp.conv.w[widx] += eps;
        let up = f(&hp, &z);
        hp.conv.w[widx] -= 2.0 * eps;
        let dn = f(&hp, &z);
        let num = (up - dn) / (2.0 * eps);
        let rel = (num - grads.conv.dw[widx]).abs() / grads.conv.dw[widx].abs().max(1e-8);
        assert!(rel < 1e-3);
    }
}
