//! On-disk dataset layout: `<id>_img.png` (8-bit RGB), `<id>_depth.png`
//! (16-bit grayscale, value = depth_m * 256), `<id>_mask.png` (8-bit class
//! indices) plus `manifest.json` describing the split.

use super::{SampleMeta, SceneSample};
use crate::domainness::DomainnessSpec;
use crate::error::{SadError, SadResult};
use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const DEPTH_ENCODING: &str = "u16 = depth_m * 256";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainTag {
    #[serde(rename = "source")]
    Source,
    #[serde(rename = "source-diversified")]
    SourceDiversified,
    #[serde(rename = "target")]
    Target,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub domainness: Option<DomainnessSpec>,
    pub fov_x_deg: f64,
}

/// Split description stored as `manifest.json` next to the PNG triplets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub count: usize,
    pub classes: usize,
    pub width: usize,
    pub height: usize,
    pub domain: DomainTag,
    pub depth_encoding: String,
    pub entries: Vec<ManifestEntry>,
    /// Directory holding the files; set on load, not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> SadResult<()> {
        fs::create_dir_all(dir).map_err(|e| SadError::io(dir, e))?;
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(self).map_err(|e| SadError::json(&path, e))?;
        fs::write(&path, body).map_err(|e| SadError::io(&path, e))
    }

    pub fn load(path: &Path) -> SadResult<Self> {
        let path = if path.is_dir() {
            path.join("manifest.json")
        } else {
            path.to_path_buf()
        };
        let body = fs::read_to_string(&path).map_err(|e| SadError::io(&path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_str(&body).map_err(|e| SadError::json(&path, e))?;
        m.root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> SadResult<()> {
        if self.count == 0 || self.entries.is_empty() {
            return Err(SadError::Data(format!(
                "manifest for split {:?} lists no samples",
                self.split
            )));
        }
        if self.count != self.entries.len() {
            return Err(SadError::Data(format!(
                "manifest count {} != entry count {}",
                self.count,
                self.entries.len()
            )));
        }
        for e in &self.entries {
            for suffix in ["img", "depth", "mask"] {
                let p = self.root.join(format!("{}_{suffix}.png", e.id));
                if !p.exists() {
                    return Err(SadError::Data(format!("missing file {}", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Quantize and write one sample triplet.
pub fn save_sample(dir: &Path, id: &str, sample: &SceneSample) -> SadResult<()> {
    fs::create_dir_all(dir).map_err(|e| SadError::io(dir, e))?;
    let (h, w, _) = sample.image.dim();

    let mut rgb = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = rgb.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                px.0[c] = (sample.image[(y, x, c)].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let img_path = dir.join(format!("{id}_img.png"));
    rgb.save(&img_path).map_err(|e| SadError::image(&img_path, e))?;

    let mut depth16: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (sample.depth[(y, x)] * 256.0).round().clamp(0.0, 65535.0) as u16;
            depth16.put_pixel(x as u32, y as u32, Luma([v]));
        }
    }
    let depth_path = dir.join(format!("{id}_depth.png"));
    depth16
        .save(&depth_path)
        .map_err(|e| SadError::image(&depth_path, e))?;

    let mut mask8 = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            mask8.put_pixel(x as u32, y as u32, Luma([sample.mask[(y, x)]]));
        }
    }
    let mask_path = dir.join(format!("{id}_mask.png"));
    mask8
        .save(&mask_path)
        .map_err(|e| SadError::image(&mask_path, e))
}

/// Compact in-memory form of one stored sample (keeps the on-disk encoding).
#[derive(Debug, Clone)]
pub struct RawScene {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub depth: Vec<u16>,
    pub mask: Vec<u8>,
    pub meta: SampleMeta,
}

impl RawScene {
    pub fn to_scene(&self) -> SceneSample {
        let (h, w) = (self.height, self.width);
        let image = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            self.rgb[(y * w + x) * 3 + c] as f64 / 255.0
        });
        let depth = Array2::from_shape_fn((h, w), |(y, x)| self.depth[y * w + x] as f64 / 256.0);
        let mask = Array2::from_shape_fn((h, w), |(y, x)| self.mask[y * w + x]);
        SceneSample {
            image,
            depth,
            mask,
            meta: self.meta.clone(),
        }
    }
}

/// Read one sample triplet into its compact form.
pub fn load_raw(dir: &Path, entry: &ManifestEntry) -> SadResult<RawScene> {
    let img_path = dir.join(format!("{}_img.png", entry.id));
    let rgb = image::open(&img_path)
        .map_err(|e| SadError::image(&img_path, e))?
        .to_rgb8();
    let depth_path = dir.join(format!("{}_depth.png", entry.id));
    let depth = image::open(&depth_path)
        .map_err(|e| SadError::image(&depth_path, e))?
        .to_luma16();
    let mask_path = dir.join(format!("{}_mask.png", entry.id));
    let mask = image::open(&mask_path)
        .map_err(|e| SadError::image(&mask_path, e))?
        .to_luma8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if depth.dimensions() != (w as u32, h as u32) || mask.dimensions() != (w as u32, h as u32) {
        return Err(SadError::Shape(format!(
            "sample {} triplet dimensions disagree",
            entry.id
        )));
    }
    Ok(RawScene {
        width: w,
        height: h,
        rgb: rgb.into_raw(),
        depth: depth.into_raw(),
        mask: mask.into_raw(),
        meta: SampleMeta {
            seed: entry.seed,
            domainness: entry.domainness.clone(),
            fov_x_deg: entry.fov_x_deg,
        },
    })
}

/// A fully loaded split: manifest plus all samples in compact form.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub manifest: DatasetManifest,
    pub samples: Vec<RawScene>,
}

impl LoadedSplit {
    pub fn load(manifest_path: &Path) -> SadResult<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        use rayon::prelude::*;
        let samples: SadResult<Vec<RawScene>> = manifest
            .entries
            .par_iter()
            .map(|e| load_raw(&manifest.root, e))
            .collect();
        Ok(LoadedSplit {
            samples: samples?,
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
