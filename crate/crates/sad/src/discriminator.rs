//! Inter-domain adversary: a small patch discriminator on invariant features
//! that scores source-vs-target, trained against the invariant encoder
//! through gradient reversal on the target branch.

use crate::encoder::{FeatureMap, FeatureTag};
use crate::error::{SadError, SadResult};
use crate::nn::losses::sigmoid;
use crate::nn::ops::{global_avg, global_avg_backward, relu, relu_backward, Conv2d, Conv2dGrad};
use crate::nn::Real;
use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DiscParams<F> {
    pub conv1: Conv2d<F>,
    pub conv2: Conv2d<F>,
}

pub struct DiscTrace<F> {
    col1: Array2<F>,
    in_dim1: (usize, usize, usize),
    y1: Array3<F>,
    col2: Array2<F>,
    in_dim2: (usize, usize, usize),
    out_dim: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct DiscGrads<F> {
    pub conv1: Conv2dGrad<F>,
    pub conv2: Conv2dGrad<F>,
}

impl<F: Real> DiscGrads<F> {
    pub fn add_assign(&mut self, other: &DiscGrads<F>) {
        self.conv1.add_assign(&other.conv1);
        self.conv2.add_assign(&other.conv2);
    }

    pub fn views(&self) -> Vec<ArrayViewD<'_, F>> {
        vec![
            self.conv1.dw.view().into_dyn(),
            self.conv1.db.view().into_dyn(),
            self.conv2.dw.view().into_dyn(),
            self.conv2.db.view().into_dyn(),
        ]
    }
}

impl<F: Real> DiscParams<F> {
    /// Two stride-1 3x3 convolutions (widths 64 and 1), global average, sigmoid.
    pub fn init(rng: &mut ChaCha8Rng, channels: usize) -> Self {
        DiscParams {
            conv1: Conv2d::kaiming(channels, 64, 3, 1, 1, rng),
            conv2: Conv2d::kaiming(64, 1, 3, 1, 1, rng),
        }
    }

    /// Probability that `z` came from the (diversified) source domain.
    /// Only invariant-tagged maps may enter the adversary.
    pub fn forward(&self, z: &FeatureMap<F>) -> SadResult<(F, DiscTrace<F>)> {
        if z.tag != FeatureTag::Inv {
            return Err(SadError::Contract(
                "discriminator consumes invariant features only; got a spf-tagged map".into(),
            ));
        }
        if z.channels() != self.conv1.w.shape()[1] {
            return Err(SadError::Shape(format!(
                "discriminator expects {} channels, got {}",
                self.conv1.w.shape()[1],
                z.channels()
            )));
        }
        let (pre1, col1) = self.conv1.forward(&z.values);
        let y1 = relu(&pre1);
        let (out, col2) = self.conv2.forward(&y1);
        let logit = global_avg(&out)[0];
        Ok((
            sigmoid(logit),
            DiscTrace {
                col1,
                in_dim1: z.values.dim(),
                in_dim2: y1.dim(),
                y1,
                col2,
                out_dim: out.dim(),
            },
        ))
    }

    /// Backward from dL/dlogit. Returns parameter gradients and dL/dz; the
    /// caller applies (or reverses, or drops) each piece per the wiring.
    pub fn backward(&self, trace: &DiscTrace<F>, dlogit: F) -> (DiscGrads<F>, Array3<F>) {
        let dpool = Array1::from_elem(1, dlogit);
        let dout = global_avg_backward(trace.out_dim, &dpool);
        let (g2, dy1) = self.conv2.backward(&trace.col2, trace.in_dim2, &dout);
        let dpre1 = relu_backward(&trace.y1, &dy1);
        let (g1, dz) = self.conv1.backward(&trace.col1, trace.in_dim1, &dpre1);
        (DiscGrads { conv1: g1, conv2: g2 }, dz)
    }

    pub fn zero_grads(&self) -> DiscGrads<F> {
        DiscGrads {
            conv1: self.conv1.zero_grad(),
            conv2: self.conv2.zero_grad(),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, F>)) {
        f(format!("{prefix}conv1.w"), self.conv1.w.view().into_dyn());
        f(format!("{prefix}conv1.b"), self.conv1.b.view().into_dyn());
        f(format!("{prefix}conv2.w"), self.conv2.w.view().into_dyn());
        f(format!("{prefix}conv2.b"), self.conv2.b.view().into_dyn());
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>)) {
        f(format!("{prefix}conv1.w"), self.conv1.w.view_mut().into_dyn());
        f(format!("{prefix}conv1.b"), self.conv1.b.view_mut().into_dyn());
        f(format!("{prefix}conv2.w"), self.conv2.w.view_mut().into_dyn());
        f(format!("{prefix}conv2.b"), self.conv2.b.view_mut().into_dyn());
    }

    pub fn learned_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        vec![
            self.conv1.w.view_mut().into_dyn(),
            self.conv1.b.view_mut().into_dyn(),
            self.conv2.w.view_mut().into_dyn(),
            self.conv2.b.view_mut().into_dyn(),
        ]
    }
}

/// The paired adversarial objective with source labeled 1 and target 0.
/// Probabilities at exactly 0 or 1 are clamped to [eps, 1-eps]; the number of
/// clamps that fired is returned for the trainer's warning counter.
pub fn loss_adv<F: Real>(p_src: F, p_tgt: F) -> (F, u64) {
    let (loss, _, _, clamps) = crate::nn::losses::adversarial_pair(p_src, p_tgt, 1e-6);
    (loss, clamps)
}
