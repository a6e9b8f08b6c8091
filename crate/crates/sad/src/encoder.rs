//! The two feature encoders: identical architecture, independent parameters.
//! One extracts the domainness-specific representation, the other the
//! domainness-invariant representation; which is which is fixed by the tag the
//! encoder stamps on its output maps, and downstream heads check that tag.

use crate::error::{SadError, SadResult};
use crate::nn::ops::{
    channel_stats, relu, relu_backward, Conv2d, Conv2dGrad, RunningNorm, RunningNormGrad,
};
use crate::nn::Real;
use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which encoder produced a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTag {
    Spf,
    Inv,
}

/// A C x H' x W' activation tensor stamped with its producer.
#[derive(Debug, Clone)]
pub struct FeatureMap<F> {
    pub values: Array3<F>,
    pub tag: FeatureTag,
}

impl<F: Real> FeatureMap<F> {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }
}

/// Architecture descriptor: serialized with checkpoints and compared on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub in_channels: usize,
    /// Output width of each conv block; the last entry is the feature C.
    pub widths: Vec<usize>,
    /// Stride of each block (three stride-2 blocks give the H/8 contract).
    pub strides: Vec<usize>,
    pub kernel: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            in_channels: 3,
            widths: vec![32, 64, 128, 64],
            strides: vec![2, 2, 2, 1],
            kernel: 3,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> SadResult<()> {
        if self.widths.is_empty() || self.widths.len() != self.strides.len() {
            return Err(SadError::Config(
                "encoder widths/strides must be non-empty and equal length".into(),
            ));
        }
        if self.kernel % 2 == 0 {
            return Err(SadError::Config("encoder kernel must be odd".into()));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Total spatial downsampling factor.
    pub fn downscale(&self) -> usize {
        self.strides.iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock<F> {
    pub conv: Conv2d<F>,
    pub norm: RunningNorm<F>,
}

/// Parameters of one encoder.
#[derive(Debug, Clone)]
pub struct EncoderParams<F> {
    pub blocks: Vec<ConvBlock<F>>,
    pub arch: ArchConfig,
    pub tag: FeatureTag,
}

/// Per-sample activation cache for one block.
pub struct BlockTrace<F> {
    col: Array2<F>,
    in_dim: (usize, usize, usize),
    xhat: Array3<F>,
    y: Array3<F>,
}

/// Per-sample activation cache for a full encoder pass.
pub struct EncoderTrace<F> {
    blocks: Vec<BlockTrace<F>>,
}

/// Per-block normalization statistics used by a batched forward. In training
/// the transform uses the current batch statistics of the first `n_stat`
/// elements per channel (the labeled-source half) and the backward couples
/// through them; frozen passes use the running buffers as constants.
pub struct BlockStats<F> {
    mean: Array1<F>,
    var: Array1<F>,
    coupled: bool,
    /// Leading samples of the batch the statistics were computed from.
    stat_samples: usize,
    /// Elements per channel behind the statistics (stat_samples x H x W).
    n_stat: usize,
}

/// Activation caches for a whole batch, including the statistics each block
/// actually normalized with.
pub struct BatchTrace<F> {
    samples: Vec<EncoderTrace<F>>,
    stats: Vec<BlockStats<F>>,
}

#[derive(Debug, Clone)]
pub struct BlockGrads<F> {
    pub conv: Conv2dGrad<F>,
    pub norm: RunningNormGrad<F>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads<F> {
    pub blocks: Vec<BlockGrads<F>>,
}

impl<F: Real> EncoderGrads<F> {
    pub fn add_assign(&mut self, other: &EncoderGrads<F>) {
        for (a, b) in self.blocks.iter_mut().zip(other.blocks.iter()) {
            a.conv.add_assign(&b.conv);
            a.norm.add_assign(&b.norm);
        }
    }

    pub fn views(&self) -> Vec<ArrayViewD<'_, F>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.conv.dw.view().into_dyn());
            out.push(b.conv.db.view().into_dyn());
            out.push(b.norm.dgamma.view().into_dyn());
            out.push(b.norm.dbeta.view().into_dyn());
        }
        out
    }
}

impl<F: Real> EncoderParams<F> {
    pub fn init(rng: &mut ChaCha8Rng, arch: &ArchConfig, tag: FeatureTag) -> SadResult<Self> {
        arch.validate()?;
        let mut blocks = Vec::with_capacity(arch.widths.len());
        let mut c_in = arch.in_channels;
        for (&c_out, &stride) in arch.widths.iter().zip(arch.strides.iter()) {
            blocks.push(ConvBlock {
                conv: Conv2d::kaiming(c_in, c_out, arch.kernel, stride, arch.kernel / 2, rng),
                norm: RunningNorm::new(c_out),
            });
            c_in = c_out;
        }
        Ok(EncoderParams {
            blocks,
            arch: arch.clone(),
            tag,
        })
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, v| n += v.len());
        n
    }

    /// Batched forward. In training mode each block normalizes by the current
    /// batch statistics of the first `stat_count` samples (the labeled-source
    /// half; target samples never touch the statistics) and the running
    /// buffers track them by EMA. Frozen passes normalize by the buffers.
    pub fn forward_batch(
        &mut self,
        imgs: &[Array3<F>],
        train: bool,
        stat_count: usize,
    ) -> (Vec<FeatureMap<F>>, BatchTrace<F>) {
        let n = imgs.len();
        let mut xs: Vec<Array3<F>> = imgs.to_vec();
        let mut traces: Vec<EncoderTrace<F>> = (0..n)
            .map(|_| EncoderTrace { blocks: Vec::new() })
            .collect();
        let mut stats = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let pres: Vec<(Array3<F>, Array2<F>)> =
                xs.par_iter().map(|x| block.conv.forward(x)).collect();
            let coupled = train && stat_count > 0;
            let block_stats = if coupled {
                let refs: Vec<&Array3<F>> =
                    pres.iter().take(stat_count).map(|(p, _)| p).collect();
                let (mean, var) = channel_stats(&refs);
                block.norm.update_stats(&mean, &var);
                let (_, h, w) = pres[0].0.dim();
                BlockStats {
                    mean,
                    var,
                    coupled: true,
                    stat_samples: stat_count,
                    n_stat: stat_count * h * w,
                }
            } else {
                BlockStats {
                    mean: block.norm.mean.clone(),
                    var: block.norm.var.clone(),
                    coupled: false,
                    stat_samples: 0,
                    n_stat: 0,
                }
            };
            let outs: Vec<(Array3<F>, Array3<F>)> = pres
                .par_iter()
                .map(|(pre, _)| {
                    let (normed, xhat) =
                        block.norm.apply(pre, &block_stats.mean, &block_stats.var);
                    (relu(&normed), xhat)
                })
                .collect();
            let mut next_xs = Vec::with_capacity(n);
            for (i, ((_, col), (y, xhat))) in pres.into_iter().zip(outs).enumerate() {
                traces[i].blocks.push(BlockTrace {
                    col,
                    in_dim: xs[i].dim(),
                    xhat,
                    y: y.clone(),
                });
                next_xs.push(y);
            }
            stats.push(block_stats);
            xs = next_xs;
        }
        let maps = xs
            .into_iter()
            .map(|values| FeatureMap {
                values,
                tag: self.tag,
            })
            .collect();
        (maps, BatchTrace { samples: traces, stats })
    }

    /// Eval-mode convenience for a single image.
    pub fn encode(&mut self, img: &Array3<F>) -> FeatureMap<F> {
        let (mut maps, _) = self.forward_batch(std::slice::from_ref(img), false, 0);
        maps.remove(0)
    }

    /// Batched backward. Blocks are walked in reverse with the normalization
    /// gradient coupled through the batch statistics where the forward used
    /// them: for a stat sample `dx = (g - (xhat * A + B) / N) * gamma / sigma`
    /// with A = sum(g * xhat) and B = sum(g) over every sample normalized by
    /// those statistics; non-stat (target) samples receive the plain affine
    /// gradient but still contribute to A and B. All reductions run in batch
    /// order so the result is independent of thread scheduling.
    pub fn backward_batch(&self, trace: &BatchTrace<F>, dzs: &[Array3<F>]) -> EncoderGrads<F> {
        let n = trace.samples.len();
        assert_eq!(n, dzs.len());
        let n_blocks = self.blocks.len();
        let mut dy: Vec<Array3<F>> = dzs.to_vec();
        let mut grads = self.zero_grads();
        for bi in (0..n_blocks).rev() {
            let block = &self.blocks[bi];
            let stats = &trace.stats[bi];
            let c_n = block.norm.gamma.len();
            // gradient at the normalization output
            let gs: Vec<Array3<F>> = (0..n)
                .into_par_iter()
                .map(|i| relu_backward(&trace.samples[i].blocks[bi].y, &dy[i]))
                .collect();
            // per-channel sums of g and g*xhat over the whole batch
            let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let xhat = &trace.samples[i].blocks[bi].xhat;
                    let g = &gs[i];
                    let mut sum_g = vec![0.0f64; c_n];
                    let mut sum_gx = vec![0.0f64; c_n];
                    for c in 0..c_n {
                        let gc = g.index_axis(ndarray::Axis(0), c);
                        let xc = xhat.index_axis(ndarray::Axis(0), c);
                        let mut sg = 0.0;
                        let mut sgx = 0.0;
                        for (&gv, &xv) in gc.iter().zip(xc.iter()) {
                            let gv = gv.to_f64();
                            sg += gv;
                            sgx += gv * xv.to_f64();
                        }
                        sum_g[c] = sg;
                        sum_gx[c] = sgx;
                    }
                    (sum_g, sum_gx)
                })
                .collect();
            let mut b_sum = vec![0.0f64; c_n];
            let mut a_sum = vec![0.0f64; c_n];
            for (sg, sgx) in &partials {
                for c in 0..c_n {
                    b_sum[c] += sg[c];
                    a_sum[c] += sgx[c];
                }
            }
            for c in 0..c_n {
                grads.blocks[bi].norm.dgamma[c] += F::from_f64(a_sum[c]);
                grads.blocks[bi].norm.dbeta[c] += F::from_f64(b_sum[c]);
            }
            let inv_std: Vec<F> = (0..c_n)
                .map(|c| F::one() / (stats.var[c] + F::from_f64(block.norm.eps)).sqrt())
                .collect();
            let inv_n = if stats.n_stat > 0 {
                1.0 / stats.n_stat as f64
            } else {
                0.0
            };
            // conv backward per sample, with the norm gradient folded in
            let per: Vec<(Conv2dGrad<F>, Array3<F>)> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let tr = &trace.samples[i].blocks[bi];
                    let g = &gs[i];
                    let in_s = i < stats.stat_samples;
                    let mut dpre = g.clone();
                    for c in 0..c_n {
                        let scale = block.norm.gamma[c] * inv_std[c];
                        if stats.coupled && in_s {
                            let a = F::from_f64(a_sum[c] * inv_n);
                            let b = F::from_f64(b_sum[c] * inv_n);
                            let xc = tr.xhat.index_axis(ndarray::Axis(0), c);
                            let mut dc = dpre.index_axis_mut(ndarray::Axis(0), c);
                            ndarray::Zip::from(&mut dc).and(&xc).for_each(|d, &x| {
                                *d = (*d - x * a - b) * scale;
                            });
                        } else {
                            dpre.index_axis_mut(ndarray::Axis(0), c)
                                .mapv_inplace(|v| v * scale);
                        }
                    }
                    block.conv.backward(&tr.col, tr.in_dim, &dpre)
                })
                .collect();
            let mut next_dy = Vec::with_capacity(n);
            for (cg, dx) in per {
                grads.blocks[bi].conv.add_assign(&cg);
                next_dy.push(dx);
            }
            dy = next_dy;
        }
        grads
    }

    pub fn zero_grads(&self) -> EncoderGrads<F> {
        EncoderGrads {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockGrads {
                    conv: b.conv.zero_grad(),
                    norm: b.norm.zero_grad(),
                })
                .collect(),
        }
    }

    /// Visit every stored array (learned parameters and buffers) by name.
    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, F>)) {
        for (i, b) in self.blocks.iter().enumerate() {
            f(format!("{prefix}block{i}.conv.w"), b.conv.w.view().into_dyn());
            f(format!("{prefix}block{i}.conv.b"), b.conv.b.view().into_dyn());
            f(format!("{prefix}block{i}.norm.gamma"), b.norm.gamma.view().into_dyn());
            f(format!("{prefix}block{i}.norm.beta"), b.norm.beta.view().into_dyn());
            f(format!("{prefix}block{i}.norm.mean"), b.norm.mean.view().into_dyn());
            f(format!("{prefix}block{i}.norm.var"), b.norm.var.view().into_dyn());
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(format!("{prefix}block{i}.conv.w"), b.conv.w.view_mut().into_dyn());
            f(format!("{prefix}block{i}.conv.b"), b.conv.b.view_mut().into_dyn());
            f(format!("{prefix}block{i}.norm.gamma"), b.norm.gamma.view_mut().into_dyn());
            f(format!("{prefix}block{i}.norm.beta"), b.norm.beta.view_mut().into_dyn());
            f(format!("{prefix}block{i}.norm.mean"), b.norm.mean.view_mut().into_dyn());
            f(format!("{prefix}block{i}.norm.var"), b.norm.var.view_mut().into_dyn());
        }
    }

    /// Learned parameters in the fixed order matched by `EncoderGrads::views`.
    pub fn learned_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = Vec::new();
        for b in self.blocks.iter_mut() {
            out.push(b.conv.w.view_mut().into_dyn());
            out.push(b.conv.b.view_mut().into_dyn());
            out.push(b.norm.gamma.view_mut().into_dyn());
            out.push(b.norm.beta.view_mut().into_dyn());
        }
        out
    }
}

/// Initialize the two encoders from independent streams of one seed.
pub fn init_encoders<F: Real>(
    seed: u64,
    arch: &ArchConfig,
) -> SadResult<(EncoderParams<F>, EncoderParams<F>)> {
    let mut rng_spf = ChaCha8Rng::seed_from_u64(seed);
    rng_spf.set_stream(1);
    let mut rng_inv = ChaCha8Rng::seed_from_u64(seed);
    rng_inv.set_stream(2);
    let spf = EncoderParams::init(&mut rng_spf, arch, FeatureTag::Spf)?;
    let inv = EncoderParams::init(&mut rng_inv, arch, FeatureTag::Inv)?;
    Ok((spf, inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::Rng;

    fn rand_img(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_simple_fn((3, h, w), || rng.random::<f64>())
    }

    #[test]
    fn shapes_match_and_params_differ() {
        let arch = ArchConfig::default();
        let (spf, inv) = init_encoders::<f64>(7, &arch).unwrap();
        assert_eq!(spf.arch, inv.arch);
        assert_eq!(spf.param_count(), inv.param_count());
        let mut max_diff = 0.0f64;
        let mut spf_named = Vec::new();
        spf.visit("", &mut |n, v| spf_named.push((n, v.to_owned())));
        inv.visit("", &mut |n, v| {
            let (n2, v2) = spf_named.remove(0);
            assert_eq!(n, n2);
            assert_eq!(v.shape(), v2.shape());
            for (a, b) in v.iter().zip(v2.iter()) {
                max_diff = max_diff.max((a - b).abs());
            }
        });
        assert!(max_diff > 0.0, "independent draws must differ");
    }

    #[test]
    fn init_reproducible() {
        let arch = ArchConfig::default();
        let (a, _) = init_encoders::<f64>(3, &arch).unwrap();
        let (b, _) = init_encoders::<f64>(3, &arch).unwrap();
        let mut equal = true;
        let mut bs = Vec::new();
        b.visit("", &mut |_, v| bs.push(v.to_owned()));
        a.visit("", &mut |_, v| {
            let w = bs.remove(0);
            if v != w.view() {
                equal = false;
            }
        });
        assert!(equal);
    }

    #[test]
    fn eval_forward_deterministic_and_correct_shape() {
        let arch = ArchConfig::default();
        let (mut enc, _) = init_encoders::<f64>(1, &arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = rand_img(&mut rng, 32, 32);
        let a = enc.encode(&img);
        let b = enc.encode(&img);
        assert_eq!(a.values, b.values);
        assert_eq!(a.values.dim(), (64, 4, 4));
        assert_eq!(a.tag, FeatureTag::Spf);
    }

    #[test]
    fn zero_image_through_zero_final_layer_gives_zero_map() {
        let arch = ArchConfig::default();
        let (mut enc, _) = init_encoders::<f64>(2, &arch).unwrap();
        let last = enc.blocks.last_mut().unwrap();
        let (co, ci, k, _) = last.conv.w.dim();
        last.conv.w = ndarray::Array4::zeros((co, ci, k, k));
        last.conv.b = Array1::zeros(co);
        let img = Array3::<f64>::zeros((3, 32, 32));
        let z = enc.encode(&img);
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    /// Train-mode backward couples samples through the batch statistics; the
    /// analytic input gradient must match finite differences of a forward
    /// that recomputes those statistics, including the cross-sample terms
    /// into and out of the non-stat (target) tail of the batch.
    #[test]
    fn gradcheck_coupled_batch_statistics() {
        let arch = ArchConfig {
            widths: vec![4, 4],
            strides: vec![2, 1],
            ..ArchConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        rng.set_stream(3);
        let mut enc = EncoderParams::<f64>::init(&mut rng, &arch, FeatureTag::Inv).unwrap();
        let imgs: Vec<Array3<f64>> = (0..3)
            .map(|_| Array3::from_shape_simple_fn((3, 8, 8), || rng.random::<f64>()))
            .collect();
        // weighted scalar loss so every output matters differently
        let weights: Vec<Array3<f64>> = (0..3)
            .map(|_| Array3::from_shape_simple_fn((4, 4, 4), || rng.random::<f64>() - 0.5))
            .collect();
        // stats from the first 2 samples; the third acts as a target sample
        let loss = |e: &mut EncoderParams<f64>, imgs: &[Array3<f64>]| -> f64 {
            let saved: Vec<_> = e
                .blocks
                .iter()
                .map(|b| (b.norm.mean.clone(), b.norm.var.clone()))
                .collect();
            let (zs, _) = e.forward_batch(imgs, true, 2);
            for (b, (m, v)) in e.blocks.iter_mut().zip(saved) {
                b.norm.mean = m;
                b.norm.var = v;
            }
            zs.iter()
                .zip(weights.iter())
                .map(|(z, w)| (&z.values * w).sum())
                .sum()
        };
        let (zs, trace) = enc.forward_batch(&imgs, true, 2);
        assert_eq!(zs[0].values.dim(), (4, 4, 4));
        let grads = enc.backward_batch(&trace, &weights);

        let eps = 1e-6;
        // input-gradient check via a weight of the first conv (flows through
        // the statistics of every downstream block)
        for &idx in &[(0usize, 0usize, 0usize, 0usize), (3, 2, 1, 1), (1, 0, 2, 0)] {
            let orig = enc.blocks[0].conv.w[idx];
            enc.blocks[0].conv.w[idx] = orig + eps;
            let up = loss(&mut enc, &imgs);
            enc.blocks[0].conv.w[idx] = orig - eps;
            let dn = loss(&mut enc, &imgs);
            enc.blocks[0].conv.w[idx] = orig;
            let num = (up - dn) / (2.0 * eps);
            let ana = grads.blocks[0].conv.dw[idx];
            let rel = (num - ana).abs() / ana.abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-5, "w{idx:?}: num {num} vs ana {ana}");
        }
        // gamma of the last block
        let orig = enc.blocks[1].norm.gamma[2];
        enc.blocks[1].norm.gamma[2] = orig + eps;
        let up = loss(&mut enc, &imgs);
        enc.blocks[1].norm.gamma[2] = orig - eps;
        let dn = loss(&mut enc, &imgs);
        enc.blocks[1].norm.gamma[2] = orig;
        let num = (up - dn) / (2.0 * eps);
        let ana = grads.blocks[1].norm.dgamma[2];
        assert!(
            ((num - ana) / ana.abs().max(1e-6)).abs() < 1e-5,
            "gamma: num {num} vs ana {ana}"
        );
    }

    fn cast_f64(enc: &EncoderParams<f32>) -> EncoderParams<f64> {
        EncoderParams {
            blocks: enc
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    conv: crate::nn::ops::Conv2d {
                        w: b.conv.w.mapv(|v| v as f64),
                        b: b.conv.b.mapv(|v| v as f64),
                        stride: b.conv.stride,
                        pad: b.conv.pad,
                    },
                    norm: crate::nn::ops::RunningNorm {
                        gamma: b.norm.gamma.mapv(|v| v as f64),
                        beta: b.norm.beta.mapv(|v| v as f64),
                        mean: b.norm.mean.mapv(|v| v as f64),
                        var: b.norm.var.mapv(|v| v as f64),
                        momentum: b.norm.momentum,
                        eps: b.norm.eps,
                    },
                })
                .collect(),
            arch: enc.arch.clone(),
            tag: enc.tag,
        }
    }

    /// Relu activation pattern; central differences are only trusted on
    /// coordinates whose perturbation does not cross a kink.
    fn relu_pattern(enc: &mut EncoderParams<f64>, img: &Array3<f64>) -> Vec<bool> {
        let (_, traces) = enc.forward_batch(std::slice::from_ref(img), false, 0);
        traces.samples[0]
            .blocks
            .iter()
            .flat_map(|b| b.y.iter().map(|&v| v > 0.0))
            .collect()
    }

    /// Analytic gradients of sum(encode(img)) at f32 vs central differences
    /// (step 1e-3, evaluated in f64 at the same weights) on kink-free
    /// coordinates.
    #[test]
    fn gradcheck_f32_against_finite_differences() {
        let arch = ArchConfig {
            widths: vec![8, 8],
            strides: vec![2, 1],
            ..ArchConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(9);
        let mut enc = EncoderParams::<f32>::init(&mut rng, &arch, FeatureTag::Inv).unwrap();
        let img: Array3<f32> = Array3::from_shape_simple_fn((3, 16, 16), || rng.random::<f32>());
        let (maps, traces) = enc.forward_batch(std::slice::from_ref(&img), false, 0);
        let dz = Array3::from_elem(maps[0].values.raw_dim(), 1.0f32);
        let grads = enc.backward_batch(&traces, &[dz]);

        let mut ref_enc = cast_f64(&enc);
        let img64 = img.mapv(|v| v as f64);
        let f = |e: &mut EncoderParams<f64>| e.encode(&img64).values.sum();
        let eps = 1e-3f64;
        let mut checked = 0;
        let mut pick_rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..60 {
            if checked >= 10 {
                break;
            }
            let blk = (pick_rng.random::<f64>() * 2.0) as usize % 2;
            let orig = ref_enc.blocks[blk].conv.w.clone();
            let flat = (pick_rng.random::<f64>() * orig.len() as f64) as usize % orig.len();
            let idx = {
                let sh = orig.shape().to_vec();
                let mut rem = flat;
                let mut id = [0usize; 4];
                for d in (0..4).rev() {
                    id[d] = rem % sh[d];
                    rem /= sh[d];
                }
                (id[0], id[1], id[2], id[3])
            };
            let ana = grads.blocks[blk].conv.dw[idx] as f64;
            if ana.abs() < 1e-3 {
                continue; // relative comparison is meaningless near zero
            }
            ref_enc.blocks[blk].conv.w[idx] = orig[idx] + eps;
            let pat_up = relu_pattern(&mut ref_enc, &img64);
            let up = f(&mut ref_enc);
            ref_enc.blocks[blk].conv.w[idx] = orig[idx] - eps;
            let pat_dn = relu_pattern(&mut ref_enc, &img64);
            let dn = f(&mut ref_enc);
            ref_enc.blocks[blk].conv.w = orig;
            if pat_up != pat_dn {
                continue; // perturbation crosses a relu kink; not differentiable here
            }
            let num = (up - dn) / (2.0 * eps);
            let rel = (num - ana).abs() / ana.abs().max(num.abs());
            assert!(rel < 1e-3, "block {blk} idx {idx:?}: num {num} vs ana {ana}");
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} kink-free coordinates checked");
    }
}
