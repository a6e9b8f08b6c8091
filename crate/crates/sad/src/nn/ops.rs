//! Layer primitives: 2-d convolution (im2col + gemm), running-statistics
//! normalization, relu, pooling, bilinear upsampling and affine layers.
//!
//! Every primitive exposes a `forward` that returns whatever cache its
//! `backward` needs, and a `backward` that maps the output gradient to
//! parameter gradients plus the input gradient. Parameter gradients live in
//! small mirror structs so batch accumulation and optimizer updates stay
//! explicit.

use super::Real;
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Draw from N(0, std) in f64 and convert, so the consumed random stream is
/// identical for f32 and f64 parameter sets.
fn sample_normal<F: Real, R: Rng>(rng: &mut R, std: f64) -> F {
    let n = Normal::new(0.0, std).expect("valid normal");
    F::from_f64(n.sample(rng))
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// Square-kernel convolution with zero padding `k/2` semantics left to the
/// caller (`pad` is explicit).
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    /// [c_out, c_in, k, k]
    pub w: Array4<F>,
    pub b: Array1<F>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrad<F> {
    pub dw: Array4<F>,
    pub db: Array1<F>,
}

impl<F: Real> Conv2d<F> {
    pub fn kaiming<R: Rng>(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let std = (2.0 / (c_in * k * k) as f64).sqrt();
        let w = Array4::from_shape_simple_fn((c_out, c_in, k, k), || sample_normal::<F, _>(rng, std));
        Conv2d {
            w,
            b: Array1::zeros(c_out),
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.w.shape()[2];
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }

    /// Unfold `x` into a [c_in*k*k, ho*wo] patch matrix.
    fn im2col(&self, x: &Array3<F>) -> Array2<F> {
        let (c_in, h, w) = x.dim();
        let k = self.w.shape()[2];
        let (ho, wo) = self.out_hw(h, w);
        let mut col = Array2::<F>::zeros((c_in * k * k, ho * wo));
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let mut col_row = col.row_mut(row);
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            col_row[oy * wo + ox] = x[(c, iy as usize, ix as usize)];
                        }
                    }
                }
            }
        }
        col
    }

    /// Fold a patch-matrix gradient back onto the input grid.
    fn col2im(&self, dcol: &Array2<F>, in_dim: (usize, usize, usize)) -> Array3<F> {
        let (c_in, h, w) = in_dim;
        let k = self.w.shape()[2];
        let (ho, wo) = self.out_hw(h, w);
        let mut dx = Array3::<F>::zeros((c_in, h, w));
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dcol_row = dcol.row(row);
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dx[(c, iy as usize, ix as usize)] =
                                dx[(c, iy as usize, ix as usize)] + dcol_row[oy * wo + ox];
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output map and the patch matrix consumed by `backward`.
    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, Array2<F>) {
        let (_, h, w) = x.dim();
        let (ho, wo) = self.out_hw(h, w);
        let (c_out, c_in, k, _) = self.w.dim();
        let col = self.im2col(x);
        let w2 = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("contiguous conv weights");
        let mut y2 = w2.dot(&col);
        for (mut row, &b) in y2.axis_iter_mut(Axis(0)).zip(self.b.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        let y = y2
            .into_shape_with_order((c_out, ho, wo))
            .expect("conv output reshape");
        (y, col)
    }

    pub fn backward(
        &self,
        col: &Array2<F>,
        in_dim: (usize, usize, usize),
        dy: &Array3<F>,
    ) -> (Conv2dGrad<F>, Array3<F>) {
        let (c_out, c_in, k, _) = self.w.dim();
        let (ho, wo) = (dy.shape()[1], dy.shape()[2]);
        let dy2 = dy
            .view()
            .into_shape_with_order((c_out, ho * wo))
            .expect("contiguous dy");
        let dw2 = dy2.dot(&col.t());
        let dw = dw2
            .into_shape_with_order((c_out, c_in, k, k))
            .expect("dw reshape");
        let db = dy2.sum_axis(Axis(1));
        let w2 = self
            .w
            .view()
            .into_shape_with_order((c_out, c_in * k * k))
            .expect("contiguous conv weights");
        let dcol = w2.t().dot(&dy2);
        let dx = self.col2im(&dcol, in_dim);
        (Conv2dGrad { dw, db }, dx)
    }

    pub fn zero_grad(&self) -> Conv2dGrad<F> {
        Conv2dGrad {
            dw: Array4::zeros(self.w.raw_dim()),
            db: Array1::zeros(self.b.raw_dim()),
        }
    }
}

impl<F: Real> Conv2dGrad<F> {
    pub fn add_assign(&mut self, other: &Conv2dGrad<F>) {
        self.dw += &other.dw;
        self.db += &other.db;
    }
}

// ---------------------------------------------------------------------------
// RunningNorm
// ---------------------------------------------------------------------------

/// Per-channel affine normalization against running statistics. The transform
/// always reads the buffers; gradients treat them as constants. In training
/// the buffers track batch statistics by exponential moving average and are
/// frozen at eval.
#[derive(Debug, Clone)]
pub struct RunningNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub mean: Array1<F>,
    pub var: Array1<F>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct RunningNormGrad<F> {
    pub dgamma: Array1<F>,
    pub dbeta: Array1<F>,
}

impl<F: Real> RunningNorm<F> {
    pub fn new(channels: usize) -> Self {
        RunningNorm {
            gamma: Array1::from_elem(channels, F::one()),
            beta: Array1::zeros(channels),
            mean: Array1::zeros(channels),
            var: Array1::from_elem(channels, F::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn inv_std(&self, c: usize) -> F {
        F::one() / (self.var[c] + F::from_f64(self.eps)).sqrt()
    }

    /// Returns the output and the normalized (pre-affine) map for `backward`,
    /// normalizing with the running buffers.
    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, Array3<F>) {
        self.apply(x, &self.mean, &self.var)
    }

    /// Normalize with explicit statistics (batch statistics in training,
    /// buffers when frozen).
    pub fn apply(
        &self,
        x: &Array3<F>,
        mean: &Array1<F>,
        var: &Array1<F>,
    ) -> (Array3<F>, Array3<F>) {
        let c_n = x.shape()[0];
        let eps = F::from_f64(self.eps);
        let mut xhat = x.clone();
        for c in 0..c_n {
            let m = mean[c];
            let s = F::one() / (var[c] + eps).sqrt();
            xhat.index_axis_mut(Axis(0), c).mapv_inplace(|v| (v - m) * s);
        }
        let mut y = xhat.clone();
        for c in 0..c_n {
            let g = self.gamma[c];
            let b = self.beta[c];
            y.index_axis_mut(Axis(0), c).mapv_inplace(|v| g * v + b);
        }
        (y, xhat)
    }

    pub fn backward(&self, xhat: &Array3<F>, dy: &Array3<F>) -> (RunningNormGrad<F>, Array3<F>) {
        let c_n = dy.shape()[0];
        let mut dgamma = Array1::<F>::zeros(c_n);
        let mut dbeta = Array1::<F>::zeros(c_n);
        let mut dx = dy.clone();
        for c in 0..c_n {
            let dy_c = dy.index_axis(Axis(0), c);
            let xh_c = xhat.index_axis(Axis(0), c);
            dgamma[c] = dy_c.iter().zip(xh_c.iter()).map(|(&d, &x)| d * x).sum();
            dbeta[c] = dy_c.sum();
            let scale = self.gamma[c] * self.inv_std(c);
            dx.index_axis_mut(Axis(0), c).mapv_inplace(|v| v * scale);
        }
        (RunningNormGrad { dgamma, dbeta }, dx)
    }

    /// EMA update from aggregated batch statistics (f64 accumulated upstream).
    pub fn update_stats(&mut self, batch_mean: &Array1<F>, batch_var: &Array1<F>) {
        let m = F::from_f64(self.momentum);
        let keep = F::one() - m;
        for c in 0..self.mean.len() {
            self.mean[c] = keep * self.mean[c] + m * batch_mean[c];
            self.var[c] = keep * self.var[c] + m * batch_var[c];
        }
    }

    pub fn zero_grad(&self) -> RunningNormGrad<F> {
        RunningNormGrad {
            dgamma: Array1::zeros(self.gamma.raw_dim()),
            dbeta: Array1::zeros(self.beta.raw_dim()),
        }
    }
}

impl<F: Real> RunningNormGrad<F> {
    pub fn add_assign(&mut self, other: &RunningNormGrad<F>) {
        self.dgamma += &other.dgamma;
        self.dbeta += &other.dbeta;
    }
}

/// Accumulate per-channel mean/variance over a slice of maps in f64,
/// in slice order, so the result does not depend on thread scheduling.
pub fn channel_stats<F: Real>(maps: &[&Array3<F>]) -> (Array1<F>, Array1<F>) {
    assert!(!maps.is_empty(), "channel_stats of empty batch");
    let c_n = maps[0].shape()[0];
    let mut sum = vec![0.0f64; c_n];
    let mut sumsq = vec![0.0f64; c_n];
    let mut count = 0usize;
    for m in maps {
        for c in 0..c_n {
            let lane = m.index_axis(Axis(0), c);
            for &v in lane.iter() {
                let v = v.to_f64();
                sum[c] += v;
                sumsq[c] += v * v;
            }
        }
        count += m.shape()[1] * m.shape()[2];
    }
    let n = count as f64;
    let mean = Array1::from_iter(sum.iter().map(|&s| F::from_f64(s / n)));
    let var = Array1::from_iter(
        sum.iter()
            .zip(sumsq.iter())
            .map(|(&s, &sq)| F::from_f64((sq / n - (s / n) * (s / n)).max(0.0))),
    );
    (mean, var)
}

// ---------------------------------------------------------------------------
// Relu
// ---------------------------------------------------------------------------

pub fn relu<F: Real>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_backward<F: Real>(y: &Array3<F>, dy: &Array3<F>) -> Array3<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn relu1<F: Real>(x: &Array1<F>) -> Array1<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu1_backward<F: Real>(y: &Array1<F>, dy: &Array1<F>) -> Array1<F> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

fn pool_bounds(i: usize, len: usize, out: usize) -> (usize, usize) {
    (i * len / out, (i + 1) * len / out)
}

/// Average-pool the whole map onto an `(hp, wp)` grid (region pooling).
pub fn avg_pool_grid<F: Real>(x: &Array3<F>, hp: usize, wp: usize) -> Array3<F> {
    let (c_n, h, w) = x.dim();
    let mut y = Array3::<F>::zeros((c_n, hp, wp));
    for c in 0..c_n {
        for i in 0..hp {
            let (y0, y1) = pool_bounds(i, h, hp);
            for j in 0..wp {
                let (x0, x1) = pool_bounds(j, w, wp);
                let mut acc = F::zero();
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        acc = acc + x[(c, yy, xx)];
                    }
                }
                y[(c, i, j)] = acc / F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    y
}

pub fn avg_pool_grid_backward<F: Real>(
    in_dim: (usize, usize, usize),
    hp: usize,
    wp: usize,
    dy: &Array3<F>,
) -> Array3<F> {
    let (c_n, h, w) = in_dim;
    let mut dx = Array3::<F>::zeros(in_dim);
    for c in 0..c_n {
        for i in 0..hp {
            let (y0, y1) = pool_bounds(i, h, hp);
            for j in 0..wp {
                let (x0, x1) = pool_bounds(j, w, wp);
                let share = dy[(c, i, j)] / F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        dx[(c, yy, xx)] = dx[(c, yy, xx)] + share;
                    }
                }
            }
        }
    }
    dx
}

/// Mean over the spatial extent, one value per channel.
pub fn global_avg<F: Real>(x: &Array3<F>) -> Array1<F> {
    let (c_n, h, w) = x.dim();
    let inv = F::from_f64(1.0 / (h * w) as f64);
    Array1::from_iter((0..c_n).map(|c| x.index_axis(Axis(0), c).sum() * inv))
}

pub fn global_avg_backward<F: Real>(in_dim: (usize, usize, usize), dy: &Array1<F>) -> Array3<F> {
    let (c_n, h, w) = in_dim;
    let inv = F::from_f64(1.0 / (h * w) as f64);
    let mut dx = Array3::<F>::zeros(in_dim);
    for c in 0..c_n {
        dx.index_axis_mut(Axis(0), c).fill(dy[c] * inv);
    }
    dx
}

// ---------------------------------------------------------------------------
// Bilinear upsampling
// ---------------------------------------------------------------------------

fn bilinear_taps(out_len: usize, in_len: usize, scale: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / scale as f64 - 0.5;
            let lo = src.floor();
            let t = src - lo;
            let i0 = (lo.max(0.0) as usize).min(in_len - 1);
            let i1 = ((lo + 1.0).max(0.0) as usize).min(in_len - 1);
            (i0, i1, t)
        })
        .collect()
}

/// Integer-factor bilinear upsampling, half-pixel-center convention.
pub fn upsample_bilinear<F: Real>(x: &Array3<F>, scale: usize) -> Array3<F> {
    let (c_n, h, w) = x.dim();
    let (ho, wo) = (h * scale, w * scale);
    let ys = bilinear_taps(ho, h, scale);
    let xs = bilinear_taps(wo, w, scale);
    let mut y = Array3::<F>::zeros((c_n, ho, wo));
    for c in 0..c_n {
        let xc = x.index_axis(Axis(0), c);
        let mut yc = y.index_axis_mut(Axis(0), c);
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let a = xc[(y0, x0)].to_f64();
                let b = xc[(y0, x1)].to_f64();
                let cth = xc[(y1, x0)].to_f64();
                let d = xc[(y1, x1)].to_f64();
                let top = a * (1.0 - tx) + b * tx;
                let bot = cth * (1.0 - tx) + d * tx;
                yc[(oy, ox)] = F::from_f64(top * (1.0 - ty) + bot * ty);
            }
        }
    }
    y
}

pub fn upsample_bilinear_backward<F: Real>(
    in_dim: (usize, usize, usize),
    scale: usize,
    dy: &Array3<F>,
) -> Array3<F> {
    let (c_n, h, w) = in_dim;
    let (ho, wo) = (h * scale, w * scale);
    let ys = bilinear_taps(ho, h, scale);
    let xs = bilinear_taps(wo, w, scale);
    let mut dx = Array3::<F>::zeros(in_dim);
    for c in 0..c_n {
        let dyc = dy.index_axis(Axis(0), c);
        let mut dxc = dx.index_axis_mut(Axis(0), c);
        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                let g = dyc[(oy, ox)].to_f64();
                dxc[(y0, x0)] = dxc[(y0, x0)] + F::from_f64(g * (1.0 - ty) * (1.0 - tx));
                dxc[(y0, x1)] = dxc[(y0, x1)] + F::from_f64(g * (1.0 - ty) * tx);
                dxc[(y1, x0)] = dxc[(y1, x0)] + F::from_f64(g * ty * (1.0 - tx));
                dxc[(y1, x1)] = dxc[(y1, x1)] + F::from_f64(g * ty * tx);
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Linear<F> {
    /// [out, in]
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct LinearGrad<F> {
    pub dw: Array2<F>,
    pub db: Array1<F>,
}

impl<F: Real> Linear<F> {
    pub fn kaiming<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / n_in as f64).sqrt();
        Linear {
            w: Array2::from_shape_simple_fn((n_out, n_in), || sample_normal::<F, _>(rng, std)),
            b: Array1::zeros(n_out),
        }
    }

    pub fn forward(&self, x: &Array1<F>) -> Array1<F> {
        self.w.dot(x) + &self.b
    }

    pub fn backward(&self, x: &Array1<F>, dy: &Array1<F>) -> (LinearGrad<F>, Array1<F>) {
        let mut dw = Array2::<F>::zeros(self.w.raw_dim());
        for (i, &d) in dy.iter().enumerate() {
            let mut row = dw.row_mut(i);
            row.zip_mut_with(x, |r, &v| *r = d * v);
        }
        let dx = self.w.t().dot(dy);
        (
            LinearGrad {
                dw,
                db: dy.clone(),
            },
            dx,
        )
    }

    pub fn zero_grad(&self) -> LinearGrad<F> {
        LinearGrad {
            dw: Array2::zeros(self.w.raw_dim()),
            db: Array1::zeros(self.b.raw_dim()),
        }
    }
}

impl<F: Real> LinearGrad<F> {
    pub fn add_assign(&mut self, other: &LinearGrad<F>) {
        self.dw += &other.dw;
        self.db += &other.db;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn3(rng: &mut ChaCha8Rng, dim: (usize, usize, usize)) -> Array3<f64> {
        Array::from_shape_simple_fn(dim, || sample_normal::<f64, _>(rng, 1.0))
    }

    /// Central-difference check of conv backward against a scalar sum loss.
    #[test]
    fn conv_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::kaiming(2, 3, 3, 2, 1, &mut rng);
        let x = randn3(&mut rng, (2, 8, 8));
        let (y, col) = conv.forward(&x);
        let dy = Array3::from_elem(y.raw_dim(), 1.0);
        let (grad, dx) = conv.backward(&col, x.dim(), &dy);

        let loss = |c: &Conv2d<f64>, x: &Array3<f64>| c.forward(x).0.sum();
        let eps = 1e-6;
        for &idx in &[(0, 0, 0, 0), (1, 1, 2, 2), (2, 0, 1, 0)] {
            let mut cp = conv.clone();
            cp.w[idx] += eps;
            let up = loss(&cp, &x);
            cp.w[idx] -= 2.0 * eps;
            let dn = loss(&cp, &x);
            let num = (up - dn) / (2.0 * eps);
            assert!((num - grad.dw[idx]).abs() < 1e-6, "dw mismatch at {idx:?}");
        }
        for &idx in &[(0, 0, 0), (1, 3, 3), (0, 7, 7)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let up = loss(&conv, &xp);
            xp[idx] -= 2.0 * eps;
            let dn = loss(&conv, &xp);
            let num = (up - dn) / (2.0 * eps);
            assert!((num - dx[idx]).abs() < 1e-6, "dx mismatch at {idx:?}");
        }
    }

    #[test]
    fn pool_and_upsample_preserve_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn3(&mut rng, (3, 16, 16));
        let y = avg_pool_grid(&x, 4, 4);
        assert_eq!(y.dim(), (3, 4, 4));
        // pooled mean equals the full mean
        let full_mean = x.sum() / (3.0 * 256.0);
        let pooled_mean = y.sum() / (3.0 * 16.0);
        assert!((full_mean - pooled_mean).abs() < 1e-12);

        let up = upsample_bilinear(&x, 8);
        assert_eq!(up.dim(), (3, 128, 128));
        // upsampling is linear: gradient via transpose matches finite differences
        let dy = Array3::from_elem((3, 128, 128), 0.5);
        let dx = upsample_bilinear_backward(x.dim(), 8, &dy);
        let eps = 1e-6;
        let idx = (1, 5, 9);
        let mut xp = x.clone();
        xp[idx] += eps;
        let up1 = upsample_bilinear(&xp, 8).sum() * 0.5;
        xp[idx] -= 2.0 * eps;
        let up0 = upsample_bilinear(&xp, 8).sum() * 0.5;
        assert!(((up1 - up0) / (2.0 * eps) - dx[idx]).abs() < 1e-5);
    }

    #[test]
    fn norm_is_affine_in_buffers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut norm = RunningNorm::<f64>::new(2);
        norm.mean = Array1::from_vec(vec![0.3, -0.1]);
        norm.var = Array1::from_vec(vec![2.0, 0.5]);
        norm.gamma = Array1::from_vec(vec![1.5, 0.7]);
        norm.beta = Array1::from_vec(vec![0.1, -0.2]);
        let x = randn3(&mut rng, (2, 4, 4));
        let (y, xhat) = norm.forward(&x);
        let dy = randn3(&mut rng, (2, 4, 4));
        let (g, dx) = norm.backward(&xhat, &dy);
        let eps = 1e-6;
        let loss = |n: &RunningNorm<f64>, x: &Array3<f64>, dy: &Array3<f64>| {
            (n.forward(x).0 * dy).sum()
        };
        let idx = (1, 2, 3);
        let mut xp = x.clone();
        xp[idx] += eps;
        let up = loss(&norm, &xp, &dy);
        xp[idx] -= 2.0 * eps;
        let dn = loss(&norm, &xp, &dy);
        assert!(((up - dn) / (2.0 * eps) - dx[idx]).abs() < 1e-7);
        let mut np = norm.clone();
        np.gamma[1] += eps;
        let up = loss(&np, &x, &dy);
        np.gamma[1] -= 2.0 * eps;
        let dn = loss(&np, &x, &dy);
        assert!(((up - dn) / (2.0 * eps) - g.dgamma[1]).abs() < 1e-6);
        assert_eq!(y.dim(), x.dim());
    }
}
