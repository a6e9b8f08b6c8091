//! Self-adversarial regularizer: one head that pools a whole feature map onto
//! a small grid, flattens it, and predicts an N-way domainness distribution
//! through two affine layers with a relu between. Trained by two opposing
//! losses: cross-entropy against the created domainness on the specific path
//! and KL to uniform on the invariant path.

use crate::domainness::DomainnessSpec;
use crate::encoder::FeatureMap;
use crate::error::{SadError, SadResult};
use crate::nn::losses::{cross_entropy_logits, kl_uniform_logits, softmax};
use crate::nn::ops::{avg_pool_grid, avg_pool_grid_backward, relu1, relu1_backward, Linear, LinearGrad};
use crate::nn::Real;
use ndarray::{Array1, Array3, ArrayViewD, ArrayViewMutD};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How the two opposing losses reach the regularizer's own parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SarMode {
    /// The specific loss trains the head; the invariant loss only flows
    /// through it into the invariant encoder. Prevents the head itself from
    /// collapsing to a uniform output.
    SplitHeadsShared,
    /// Both losses update the head (ablation variant).
    BothIntoSar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SarConfig {
    pub pooled: (usize, usize),
    pub hidden: usize,
    pub n_bins: usize,
}

impl Default for SarConfig {
    fn default() -> Self {
        SarConfig {
            pooled: (4, 4),
            hidden: 256,
            n_bins: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SarParams<F> {
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
    pub pooled: (usize, usize),
    pub in_channels: usize,
}

/// An N-way domainness prediction; `probs` is always softmax(`logits`).
#[derive(Debug, Clone)]
pub struct DomainnessPrediction<F> {
    pub logits: Array1<F>,
    pub probs: Array1<F>,
}

impl<F: Real> DomainnessPrediction<F> {
    pub fn from_logits(logits: Array1<F>) -> Self {
        let probs = softmax(&logits);
        DomainnessPrediction { logits, probs }
    }

    pub fn n_bins(&self) -> usize {
        self.logits.len()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

pub struct SarTrace<F> {
    in_dim: (usize, usize, usize),
    flat: Array1<F>,
    hidden: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct SarGrads<F> {
    pub fc1: LinearGrad<F>,
    pub fc2: LinearGrad<F>,
}

impl<F: Real> SarGrads<F> {
    pub fn add_assign(&mut self, other: &SarGrads<F>) {
        self.fc1.add_assign(&other.fc1);
        self.fc2.add_assign(&other.fc2);
    }

    pub fn views(&self) -> Vec<ArrayViewD<'_, F>> {
        vec![
            self.fc1.dw.view().into_dyn(),
            self.fc1.db.view().into_dyn(),
            self.fc2.dw.view().into_dyn(),
            self.fc2.db.view().into_dyn(),
        ]
    }
}

impl<F: Real> SarParams<F> {
    pub fn init(rng: &mut ChaCha8Rng, channels: usize, cfg: &SarConfig) -> SadResult<Self> {
        if cfg.n_bins < 2 {
            return Err(SadError::Config("sar n_bins must be >= 2".into()));
        }
        let (hp, wp) = cfg.pooled;
        let flat = channels * hp * wp;
        Ok(SarParams {
            fc1: Linear::kaiming(flat, cfg.hidden, rng),
            fc2: Linear::kaiming(cfg.hidden, cfg.n_bins, rng),
            pooled: cfg.pooled,
            in_channels: channels,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.fc2.b.len()
    }

    /// Pool the whole map to the configured grid, flatten, and run the MLP.
    pub fn forward(&self, z: &FeatureMap<F>) -> SadResult<(DomainnessPrediction<F>, SarTrace<F>)> {
        if z.channels() != self.in_channels {
            return Err(SadError::Shape(format!(
                "sar expects {} channels, got {}",
                self.in_channels,
                z.channels()
            )));
        }
        let (hp, wp) = self.pooled;
        let pooled = avg_pool_grid(&z.values, hp, wp);
        let flat = Array1::from_iter(pooled.iter().cloned());
        let pre = self.fc1.forward(&flat);
        let hidden = relu1(&pre);
        let logits = self.fc2.forward(&hidden);
        Ok((
            DomainnessPrediction::from_logits(logits),
            SarTrace {
                in_dim: z.values.dim(),
                flat,
                hidden,
            },
        ))
    }

    /// Backward from a logit gradient. Parameter gradients are always
    /// returned; the caller decides whether to accumulate them (this is where
    /// the two wiring modes differ).
    pub fn backward(&self, trace: &SarTrace<F>, dlogits: &Array1<F>) -> (SarGrads<F>, Array3<F>) {
        let (g2, dhidden) = self.fc2.backward(&trace.hidden, dlogits);
        let dpre = relu1_backward(&trace.hidden, &dhidden);
        let (g1, dflat) = self.fc1.backward(&trace.flat, &dpre);
        let (hp, wp) = self.pooled;
        let (c, _, _) = trace.in_dim;
        let dpooled = dflat
            .into_shape_with_order((c, hp, wp))
            .expect("pooled gradient reshape");
        let dz = avg_pool_grid_backward(trace.in_dim, hp, wp, &dpooled);
        (SarGrads { fc1: g1, fc2: g2 }, dz)
    }

    pub fn zero_grads(&self) -> SarGrads<F> {
        SarGrads {
            fc1: self.fc1.zero_grad(),
            fc2: self.fc2.zero_grad(),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, F>)) {
        f(format!("{prefix}fc1.w"), self.fc1.w.view().into_dyn());
        f(format!("{prefix}fc1.b"), self.fc1.b.view().into_dyn());
        f(format!("{prefix}fc2.w"), self.fc2.w.view().into_dyn());
        f(format!("{prefix}fc2.b"), self.fc2.b.view().into_dyn());
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>)) {
        f(format!("{prefix}fc1.w"), self.fc1.w.view_mut().into_dyn());
        f(format!("{prefix}fc1.b"), self.fc1.b.view_mut().into_dyn());
        f(format!("{prefix}fc2.w"), self.fc2.w.view_mut().into_dyn());
        f(format!("{prefix}fc2.b"), self.fc2.b.view_mut().into_dyn());
    }

    pub fn learned_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        vec![
            self.fc1.w.view_mut().into_dyn(),
            self.fc1.b.view_mut().into_dyn(),
            self.fc2.w.view_mut().into_dyn(),
            self.fc2.b.view_mut().into_dyn(),
        ]
    }
}

/// Domainness-specific loss: cross-entropy of the prediction against the
/// created one-hot bin, `-log p[bin]`.
pub fn loss_spf<F: Real>(pred: &DomainnessPrediction<F>, d_gt: &DomainnessSpec) -> SadResult<F> {
    if pred.n_bins() != d_gt.n_bins {
        return Err(SadError::Shape(format!(
            "prediction has {} bins, label has {}",
            pred.n_bins(),
            d_gt.n_bins
        )));
    }
    Ok(cross_entropy_logits(&pred.logits, d_gt.bin).0)
}

/// Domainness-invariant loss: KL(prediction || uniform) = log N - H(p).
pub fn loss_inv<F: Real>(pred: &DomainnessPrediction<F>) -> F {
    kl_uniform_logits(&pred.logits).0
}
