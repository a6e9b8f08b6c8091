//! Domainness creator: transforms a clear source sample along one named
//! dimension (fog thickness or horizontal field of view) by a sampled
//! magnitude, and emits the exact supervisory label for that magnitude.
//!
//! The continuous value is discretized into `n_bins` equal-width bins over the
//! sampling range; labels carry both the raw value and the one-hot bin.

use crate::error::{SadError, SadResult};
use crate::synthdata::{resize_bilinear_hwc, resize_nearest, SceneSample};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// The named domain-shift dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    /// Atmospheric attenuation coefficient beta in 1/m.
    Fog,
    /// Target horizontal field of view in degrees (narrowing only).
    Fov,
    /// Placeholder; pre-rendered rain is not synthesized here. See README.
    Rain,
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dimension::Fog => write!(f, "fog"),
            Dimension::Fov => write!(f, "fov"),
            Dimension::Rain => write!(f, "rain"),
        }
    }
}

impl std::str::FromStr for Dimension {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fog" => Ok(Dimension::Fog),
            "fov" => Ok(Dimension::Fov),
            "rain" => Ok(Dimension::Rain),
            other => Err(format!("unknown dimension {other:?} (expected fog or fov)")),
        }
    }
}

/// One sampled domainness event: the dimension, its continuous magnitude, and
/// the discretized supervisory label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainnessSpec {
    pub dimension: Dimension,
    pub value: f64,
    pub bin: usize,
    pub onehot: Vec<f64>,
    pub n_bins: usize,
}

impl DomainnessSpec {
    /// Build a spec from an explicit bin index (used when the bin is an index
    /// into a known value list rather than a range discretization).
    pub fn from_value_index(
        dimension: Dimension,
        value: f64,
        bin: usize,
        n_bins: usize,
    ) -> SadResult<Self> {
        if bin >= n_bins || n_bins == 0 {
            return Err(SadError::Domain(format!(
                "bin {bin} out of range for {n_bins} bins"
            )));
        }
        let mut onehot = vec![0.0; n_bins];
        onehot[bin] = 1.0;
        Ok(DomainnessSpec {
            dimension,
            value,
            bin,
            onehot,
            n_bins,
        })
    }

    pub fn check(&self) -> SadResult<()> {
        if self.onehot.len() != self.n_bins {
            return Err(SadError::Shape(format!(
                "onehot length {} != n_bins {}",
                self.onehot.len(),
                self.n_bins
            )));
        }
        let sum: f64 = self.onehot.iter().sum();
        let nonzero = self.onehot.iter().filter(|&&v| v != 0.0).count();
        if (sum - 1.0).abs() > 1e-12 || nonzero != 1 || self.onehot[self.bin] != 1.0 {
            return Err(SadError::Domain(format!(
                "onehot is not an indicator of bin {}",
                self.bin
            )));
        }
        Ok(())
    }
}

/// Free parameters of the domainness creator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DcConfig {
    pub dimension: Dimension,
    /// Sampling range [lo, hi] for the continuous domainness value.
    pub range: (f64, f64),
    /// Number of discretization bins N.
    pub n_bins: usize,
    /// Atmospheric light per RGB channel, the color fog converges to.
    pub atmospheric_light: [f64; 3],
    /// Native horizontal FoV of the source camera, degrees.
    pub native_fov_deg: f64,
    /// Resample FoV crops back to the native resolution.
    pub resize_after_crop: bool,
}

impl Default for DcConfig {
    fn default() -> Self {
        DcConfig {
            dimension: Dimension::Fog,
            range: (0.0, 0.04),
            n_bins: 4,
            atmospheric_light: [0.9, 0.9, 0.9],
            native_fov_deg: 90.0,
            resize_after_crop: true,
        }
    }
}

impl DcConfig {
    pub fn validate(&self) -> SadResult<()> {
        let (lo, hi) = self.range;
        if !(lo < hi) {
            return Err(SadError::Config(format!(
                "domainness range lo={lo} must be < hi={hi}"
            )));
        }
        if self.n_bins < 2 {
            return Err(SadError::Config(format!(
                "n_bins={} must be >= 2",
                self.n_bins
            )));
        }
        match self.dimension {
            Dimension::Fog => {
                if lo < 0.0 {
                    return Err(SadError::Config("fog beta range must be >= 0".into()));
                }
            }
            Dimension::Fov => {
                if lo <= 0.0 || hi > self.native_fov_deg {
                    return Err(SadError::Config(format!(
                        "fov range ({lo}, {hi}) must lie in (0, native {}]",
                        self.native_fov_deg
                    )));
                }
            }
            Dimension::Rain => {
                return Err(SadError::Config(
                    "unsupported dimension: rain uses pre-rendered data and is not \
                     synthesized here (see README, Dimensions)"
                        .into(),
                ));
            }
        }
        if self
            .atmospheric_light
            .iter()
            .any(|&l| !(0.0..=1.0).contains(&l))
        {
            return Err(SadError::Config(
                "atmospheric light channels must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Equal-width discretization of `value` over the configured range,
/// right-edge clamped into [0, N-1].
pub fn bin_domainness(value: f64, cfg: &DcConfig) -> (usize, Vec<f64>) {
    let (lo, hi) = cfg.range;
    let n = cfg.n_bins;
    let frac = (value - lo) / (hi - lo);
    let bin = ((frac * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
    let mut onehot = vec![0.0; n];
    onehot[bin] = 1.0;
    (bin, onehot)
}

/// Draw a uniform domainness value over the sampling range and label it.
pub fn sample_domainness<R: Rng>(rng: &mut R, cfg: &DcConfig) -> SadResult<DomainnessSpec> {
    cfg.validate()?;
    let (lo, hi) = cfg.range;
    let value = lo + rng.random::<f64>() * (hi - lo);
    let (bin, onehot) = bin_domainness(value, cfg);
    Ok(DomainnessSpec {
        dimension: cfg.dimension,
        value,
        bin,
        onehot,
        n_bins: cfg.n_bins,
    })
}

/// Transmission of the homogeneous fog medium after `depth` meters.
#[inline]
pub fn fog_transmission(beta: f64, depth: f64) -> f64 {
    (-beta * depth).exp()
}

/// Fog synthesis from the standard optical model:
/// `out = img * t + L_atm * (1 - t)` with `t = exp(-beta * depth)`.
/// Depth and mask pass through unchanged.
pub fn apply_fog(sample: &SceneSample, beta: f64, cfg: &DcConfig) -> SadResult<SceneSample> {
    if beta < 0.0 {
        return Err(SadError::Domain(format!(
            "fog attenuation beta={beta} must be >= 0"
        )));
    }
    let (h, w, _) = sample.image.dim();
    let mut out = sample.clone();
    for y in 0..h {
        for x in 0..w {
            let t = fog_transmission(beta, sample.depth[(y, x)]);
            for c in 0..3 {
                let r = sample.image[(y, x, c)];
                out.image[(y, x, c)] = r * t + cfg.atmospheric_light[c] * (1.0 - t);
            }
        }
    }
    let (bin, onehot) = bin_domainness(beta, cfg);
    out.meta.domainness = Some(DomainnessSpec {
        dimension: Dimension::Fog,
        value: beta,
        bin,
        onehot,
        n_bins: cfg.n_bins,
    });
    Ok(out)
}

/// Crop geometry of the FoV narrowing under the pinhole model:
/// `w' = round(W * tan(theta1/2) / tan(theta0/2))`, aspect preserved.
pub fn fov_crop_size(
    width: usize,
    height: usize,
    theta1_deg: f64,
    theta0_deg: f64,
) -> (usize, usize) {
    let ratio = (theta1_deg.to_radians() / 2.0).tan() / (theta0_deg.to_radians() / 2.0).tan();
    let wc = ((width as f64 * ratio).round() as usize).clamp(1, width);
    let hc = ((height as f64 * ratio).round() as usize).clamp(1, height);
    (wc, hc)
}

/// Narrow the horizontal FoV to `theta1_deg` by center-cropping image, depth
/// and mask identically; optionally resample back to the native resolution
/// (image bilinear, depth and mask nearest-neighbor).
pub fn apply_fov(sample: &SceneSample, theta1_deg: f64, cfg: &DcConfig) -> SadResult<SceneSample> {
    let theta0 = sample.meta.fov_x_deg;
    if theta1_deg <= 0.0 {
        return Err(SadError::Domain(format!(
            "target fov {theta1_deg} must be positive"
        )));
    }
    if theta1_deg > theta0 {
        return Err(SadError::Domain(format!(
            "target fov {theta1_deg} exceeds native fov {theta0}; the creator only narrows"
        )));
    }
    let (h, w, _) = sample.image.dim();
    let (wc, hc) = fov_crop_size(w, h, theta1_deg, theta0);
    let x0 = (w - wc) / 2;
    let y0 = (h - hc) / 2;

    let image = sample
        .image
        .slice(ndarray::s![y0..y0 + hc, x0..x0 + wc, ..])
        .to_owned();
    let depth = sample
        .depth
        .slice(ndarray::s![y0..y0 + hc, x0..x0 + wc])
        .to_owned();
    let mask = sample
        .mask
        .slice(ndarray::s![y0..y0 + hc, x0..x0 + wc])
        .to_owned();

    let mut out = sample.clone();
    if cfg.resize_after_crop && (wc != w || hc != h) {
        out.image = resize_bilinear_hwc(&image, h, w);
        out.depth = resize_nearest(&depth, h, w);
        out.mask = resize_nearest(&mask, h, w);
    } else {
        out.image = image;
        out.depth = depth;
        out.mask = mask;
    }
    out.meta.fov_x_deg = theta1_deg;
    let (bin, onehot) = bin_domainness(theta1_deg, cfg);
    out.meta.domainness = Some(DomainnessSpec {
        dimension: Dimension::Fov,
        value: theta1_deg,
        bin,
        onehot,
        n_bins: cfg.n_bins,
    });
    Ok(out)
}

/// Sample a domainness value and push the sample through the matching
/// transform. Pure given the rng state.
pub fn diversify<R: Rng>(
    sample: &SceneSample,
    rng: &mut R,
    cfg: &DcConfig,
) -> SadResult<(SceneSample, DomainnessSpec)> {
    let spec = sample_domainness(rng, cfg)?;
    let mut out = match cfg.dimension {
        Dimension::Fog => apply_fog(sample, spec.value, cfg)?,
        Dimension::Fov => apply_fov(sample, spec.value, cfg)?,
        Dimension::Rain => unreachable!("validate rejects rain"),
    };
    out.meta.domainness = Some(spec.clone());
    Ok((out, spec))
}
