//! Procedural scene generation: flat-colored geometric shapes at per-shape
//! constant depth over a textured gradient background, with aligned metric
//! depth and class masks. Everything is deterministic in (seed, config) and
//! quantized to the on-disk encoding at generation time, so stored files are
//! bit-reproducible.

pub mod io;
pub mod splits;

use crate::domainness::DomainnessSpec;
use crate::error::{SadError, SadResult};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One RGB scene with aligned metric depth and class mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    /// (H, W, 3) reals in [0, 1].
    pub image: Array3<f64>,
    /// (H, W) depth in meters, finite and >= the configured minimum.
    pub depth: Array2<f64>,
    /// (H, W) class indices in [0, K-1] (255 reserved for ignore).
    pub mask: Array2<u8>,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub domainness: Option<DomainnessSpec>,
    pub fov_x_deg: f64,
}

impl SceneSample {
    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }

    /// Checks the cross-field invariants against a class count and minimum depth.
    pub fn validate(&self, classes: usize, min_depth: f64) -> SadResult<()> {
        let (h, w, c) = self.image.dim();
        if c != 3 {
            return Err(SadError::Shape(format!("image has {c} channels, want 3")));
        }
        if self.depth.dim() != (h, w) || self.mask.dim() != (h, w) {
            return Err(SadError::Shape(format!(
                "image {h}x{w}, depth {:?}, mask {:?} disagree",
                self.depth.dim(),
                self.mask.dim()
            )));
        }
        for &d in self.depth.iter() {
            if !d.is_finite() || d < min_depth {
                return Err(SadError::Data(format!(
                    "depth value {d} below minimum {min_depth} or non-finite"
                )));
            }
        }
        for &m in self.mask.iter() {
            if m as usize >= classes && m != crate::nn::losses::IGNORE_INDEX {
                return Err(SadError::Data(format!(
                    "mask value {m} >= class count {classes}"
                )));
            }
        }
        Ok(())
    }

    /// Image as a [3, H, W] tensor in the engine precision.
    pub fn image_chw<F: crate::nn::Real>(&self) -> Array3<F> {
        let (h, w, _) = self.image.dim();
        let mut out = Array3::<F>::zeros((3, h, w));
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out[(c, y, x)] = F::from_f64(self.image[(y, x, c)]);
                }
            }
        }
        out
    }
}

/// Scene generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGenConfig {
    pub width: usize,
    pub height: usize,
    /// Class count K: background plus up to five shape classes.
    pub classes: usize,
    /// Inclusive range of shapes per scene.
    pub shape_count: (usize, usize),
    /// Depth range [d_min, d_max] in meters; shapes draw log-uniformly from it.
    pub depth_range: (f64, f64),
    /// Shape size as a fraction of min(W, H).
    pub size_range: (f64, f64),
    /// Native horizontal FoV recorded in metadata.
    pub fov_x_deg: f64,
    /// Per-sample uniform jitter applied to each class base color.
    pub color_jitter: f64,
    /// Background value-noise amplitude.
    pub noise_amp: f64,
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        SceneGenConfig {
            width: 128,
            height: 128,
            classes: 6,
            shape_count: (3, 8),
            depth_range: (1.0, 100.0),
            size_range: (0.10, 0.32),
            fov_x_deg: 90.0,
            color_jitter: 0.15,
            noise_amp: 0.04,
        }
    }
}

impl SceneGenConfig {
    pub fn validate(&self) -> SadResult<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SadError::Config("image size must be positive".into()));
        }
        if !(2..=6).contains(&self.classes) {
            return Err(SadError::Config(format!(
                "classes={} must lie in [2, 6] (background + up to 5 shape kinds)",
                self.classes
            )));
        }
        if self.shape_count.0 > self.shape_count.1 {
            return Err(SadError::Config(format!(
                "shape count range {:?} is inverted",
                self.shape_count
            )));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && lo < hi) {
            return Err(SadError::Config(format!(
                "depth range [{lo}, {hi}] must satisfy 0 < d_min < d_max"
            )));
        }
        if !(self.size_range.0 > 0.0 && self.size_range.0 <= self.size_range.1) {
            return Err(SadError::Config(format!(
                "size range {:?} invalid",
                self.size_range
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Circle,
    Rect,
    Triangle,
    Cross,
    Ring,
}

const SHAPE_KINDS: [ShapeKind; 5] = [
    ShapeKind::Circle,
    ShapeKind::Rect,
    ShapeKind::Triangle,
    ShapeKind::Cross,
    ShapeKind::Ring,
];

/// Geometry, class, color and depth of one shape instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub class: u8,
    pub cx: f64,
    pub cy: f64,
    /// Characteristic extent in pixels (diameter / height).
    pub size: f64,
    /// Width-over-height factor for rect, triangle and cross.
    pub aspect: f64,
    /// Constant depth in meters, snapped to the u16 on-disk grid.
    pub depth: f64,
    pub color: [f64; 3],
}

impl ShapeSpec {
    /// Point-in-shape test at pixel centers.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let h2 = self.size / 2.0;
        let w2 = self.size * self.aspect / 2.0;
        match self.kind {
            ShapeKind::Circle => dx * dx + dy * dy <= h2 * h2,
            ShapeKind::Rect => dx.abs() <= w2 && dy.abs() <= h2,
            ShapeKind::Triangle => {
                // isoceles, apex up
                if dy.abs() > h2 {
                    return false;
                }
                let u = (dy + h2) / self.size;
                dx.abs() <= u * w2
            }
            ShapeKind::Cross => {
                let bar = self.size / 6.0;
                (dx.abs() <= w2 && dy.abs() <= bar) || (dx.abs() <= bar && dy.abs() <= h2)
            }
            ShapeKind::Ring => {
                let r2 = dx * dx + dy * dy;
                let r_out = h2;
                let r_in = 0.55 * r_out;
                r2 >= r_in * r_in && r2 <= r_out * r_out
            }
        }
    }

    fn bbox(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let half = self.size * self.aspect.max(1.0) / 2.0 + 1.0;
        let x0 = (self.cx - half).floor().max(0.0) as usize;
        let y0 = (self.cy - half).floor().max(0.0) as usize;
        let x1 = ((self.cx + half).ceil() as usize).min(w);
        let y1 = ((self.cy + half).ceil() as usize).min(h);
        (x0, y0, x1, y1)
    }
}

/// Snap a depth value onto the 16-bit on-disk grid (value = depth_m * 256).
pub fn snap_depth(d: f64) -> f64 {
    (d * 256.0).round() / 256.0
}

/// Snap a color channel onto the 8-bit on-disk grid.
pub fn snap_u8(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-pixel value noise in [0, 1).
fn hash01(seed: u64, x: usize, y: usize) -> f64 {
    let h = splitmix64(
        seed ^ (x as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ (y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const BASE_PALETTE: [[f64; 3]; 5] = [
    [0.80, 0.22, 0.20], // circle
    [0.20, 0.68, 0.28], // rect
    [0.25, 0.38, 0.85], // triangle
    [0.86, 0.78, 0.20], // cross
    [0.74, 0.26, 0.78], // ring
];

/// The sampled content of a scene before rasterization: background colors and
/// the shape list. Exposed so tests can re-rasterize independently.
#[derive(Debug, Clone)]
pub struct SceneContent {
    pub top_color: [f64; 3],
    pub bottom_color: [f64; 3],
    pub shapes: Vec<ShapeSpec>,
}

/// Sample the scene content for `seed` without rasterizing it.
pub fn scene_content(seed: u64, cfg: &SceneGenConfig) -> SadResult<SceneContent> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut top_color = [0.0; 3];
    let mut bottom_color = [0.0; 3];
    for c in 0..3 {
        top_color[c] = 0.15 + 0.45 * rng.random::<f64>();
    }
    for c in 0..3 {
        bottom_color[c] = 0.15 + 0.45 * rng.random::<f64>();
    }
    // one jittered color per class per sample
    let n_kinds = cfg.classes - 1;
    let mut class_colors = Vec::with_capacity(n_kinds);
    for k in 0..n_kinds {
        let mut col = [0.0; 3];
        for c in 0..3 {
            let j = (rng.random::<f64>() * 2.0 - 1.0) * cfg.color_jitter;
            col[c] = (BASE_PALETTE[k][c] + j).clamp(0.05, 0.95);
        }
        class_colors.push(col);
    }
    let (lo, hi) = cfg.shape_count;
    let n_shapes = if lo == hi {
        lo
    } else {
        lo + (rng.random::<f64>() * (hi - lo + 1) as f64).floor() as usize
    }
    .min(hi);
    let min_side = cfg.width.min(cfg.height) as f64;
    let (ln_lo, ln_hi) = (cfg.depth_range.0.ln(), cfg.depth_range.1.ln());
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        let class = 1 + (rng.random::<f64>() * n_kinds as f64).floor().min((n_kinds - 1) as f64) as usize;
        let kind = SHAPE_KINDS[class - 1];
        let cx = (0.12 + 0.76 * rng.random::<f64>()) * cfg.width as f64;
        let cy = (0.12 + 0.76 * rng.random::<f64>()) * cfg.height as f64;
        let size =
            (cfg.size_range.0 + rng.random::<f64>() * (cfg.size_range.1 - cfg.size_range.0))
                * min_side;
        let aspect = 0.6 + rng.random::<f64>();
        let depth = snap_depth((ln_lo + rng.random::<f64>() * (ln_hi - ln_lo)).exp());
        shapes.push(ShapeSpec {
            kind,
            class: class as u8,
            cx,
            cy,
            size,
            aspect,
            depth,
            color: class_colors[class - 1],
        });
    }
    Ok(SceneContent {
        top_color,
        bottom_color,
        shapes,
    })
}

/// Generate one clear-weather scene, deterministic in (seed, cfg).
///
/// The background carries a log-space depth gradient (far at the top, near at
/// the bottom) with value noise on its colors; shapes paint over it
/// back-to-front so the mask holds the front-most class per pixel.
pub fn generate_scene(seed: u64, cfg: &SceneGenConfig) -> SadResult<SceneSample> {
    let content = scene_content(seed, cfg)?;
    let (w, h) = (cfg.width, cfg.height);
    let mut image = Array3::<f64>::zeros((h, w, 3));
    let mut depth = Array2::<f64>::zeros((h, w));
    let mut mask = Array2::<u8>::zeros((h, w));

    let (ln_lo, ln_hi) = (cfg.depth_range.0.ln(), cfg.depth_range.1.ln());
    for y in 0..h {
        let t = (y as f64 + 0.5) / h as f64;
        let bg_depth = snap_depth((ln_hi + (ln_lo - ln_hi) * t).exp());
        for x in 0..w {
            let noise = (hash01(seed, x, y) - 0.5) * 2.0 * cfg.noise_amp;
            for c in 0..3 {
                let base = content.top_color[c] * (1.0 - t) + content.bottom_color[c] * t;
                image[(y, x, c)] = (base + noise).clamp(0.0, 1.0);
            }
            depth[(y, x)] = bg_depth;
        }
    }

    // painter's order: far to near, nearer shapes overwrite
    let mut order: Vec<usize> = (0..content.shapes.len()).collect();
    order.sort_by(|&a, &b| {
        content.shapes[b]
            .depth
            .partial_cmp(&content.shapes[a].depth)
            .unwrap()
            .then(a.cmp(&b))
    });
    for idx in order {
        let s = &content.shapes[idx];
        let (x0, y0, x1, y1) = s.bbox(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                if s.covers(x as f64 + 0.5, y as f64 + 0.5) {
                    for c in 0..3 {
                        image[(y, x, c)] = s.color[c];
                    }
                    depth[(y, x)] = s.depth;
                    mask[(y, x)] = s.class;
                }
            }
        }
    }

    image.mapv_inplace(snap_u8);
    let sample = SceneSample {
        image,
        depth,
        mask,
        meta: SampleMeta {
            seed,
            domainness: None,
            fov_x_deg: cfg.fov_x_deg,
        },
    };
    sample.validate(cfg.classes, cfg.depth_range.0)?;
    Ok(sample)
}

/// Bilinear resize of an (H, W, 3) image, half-pixel-center convention.
pub fn resize_bilinear_hwc(img: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, ch) = img.dim();
    let mut out = Array3::<f64>::zeros((out_h, out_w, ch));
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let src_y = ((oy as f64 + 0.5) * sy - 0.5).max(0.0);
        let y0 = (src_y.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let ty = src_y - y0 as f64;
        for ox in 0..out_w {
            let src_x = ((ox as f64 + 0.5) * sx - 0.5).max(0.0);
            let x0 = (src_x.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let tx = src_x - x0 as f64;
            for c in 0..ch {
                let top = img[(y0, x0, c)] * (1.0 - tx) + img[(y0, x1, c)] * tx;
                let bot = img[(y1, x0, c)] * (1.0 - tx) + img[(y1, x1, c)] * tx;
                out[(oy, ox, c)] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

/// Nearest-neighbor resize for label-like 2-d grids.
pub fn resize_nearest<T: Copy>(grid: &Array2<T>, out_h: usize, out_w: usize) -> Array2<T> {
    let (h, w) = grid.dim();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    Array2::from_shape_fn((out_h, out_w), |(oy, ox)| {
        let iy = (((oy as f64 + 0.5) * sy).floor() as usize).min(h - 1);
        let ix = (((ox as f64 + 0.5) * sx).floor() as usize).min(w - 1);
        grid[(iy, ix)]
    })
}
