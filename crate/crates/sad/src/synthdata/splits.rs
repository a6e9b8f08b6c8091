//! Split construction: a clear source split plus target and target-val splits
//! pushed through the domainness creator at held-out values, with pairwise
//! disjoint seed ranges and an unseen-domainness guard.

use super::io::{save_sample, DatasetManifest, DomainTag, ManifestEntry, DEPTH_ENCODING};
use super::{generate_scene, SceneGenConfig};
use crate::domainness::{apply_fog, apply_fov, DcConfig, Dimension, DomainnessSpec};
use crate::error::{SadError, SadResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub scene: SceneGenConfig,
    pub dimension: Dimension,
    /// Domainness value(s) applied to the target splits.
    pub target_values: Vec<f64>,
    /// Sampling range the creator will use during training diversification;
    /// target values must fall outside it when `strict_unseen` is set.
    pub train_range: (f64, f64),
    pub strict_unseen: bool,
    pub source_count: usize,
    pub target_count: usize,
    pub target_val_count: usize,
    /// Base of the disjoint seed ranges given to the three splits.
    pub seed0: u64,
    /// Atmospheric light forwarded to the fog transform.
    pub atmospheric_light: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            scene: SceneGenConfig::default(),
            dimension: Dimension::Fog,
            target_values: vec![0.06],
            train_range: (0.0, 0.04),
            strict_unseen: true,
            source_count: 2000,
            target_count: 500,
            target_val_count: 200,
            seed0: 0,
            atmospheric_light: [0.9, 0.9, 0.9],
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> SadResult<()> {
        self.scene.validate()?;
        if self.target_values.is_empty() {
            return Err(SadError::Config("target_values must not be empty".into()));
        }
        if self.source_count == 0 || self.target_count == 0 || self.target_val_count == 0 {
            return Err(SadError::Config("split sizes must be >= 1".into()));
        }
        self.dc_config().validate()?;
        if self.strict_unseen {
            let (lo, hi) = self.train_range;
            for &v in &self.target_values {
                if v >= lo && v <= hi {
                    return Err(SadError::Config(format!(
                        "target domainness {v} lies inside the training sampling range \
                         [{lo}, {hi}] but strict_unseen is set"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The creator configuration implied by this split plan (used both for
    /// validation and by the trainer that consumes the emitted manifests).
    pub fn dc_config(&self) -> DcConfig {
        DcConfig {
            dimension: self.dimension,
            range: self.train_range,
            atmospheric_light: self.atmospheric_light,
            native_fov_deg: self.scene.fov_x_deg,
            ..DcConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltSplits {
    pub source: DatasetManifest,
    pub target: DatasetManifest,
    pub target_val: DatasetManifest,
}

fn write_split(
    cfg: &SplitConfig,
    dir: &Path,
    split: &str,
    domain: DomainTag,
    seeds: std::ops::Range<u64>,
    diversify_targets: bool,
) -> SadResult<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| SadError::io(dir, e))?;
    let dc = cfg.dc_config();
    let seeds: Vec<u64> = seeds.collect();
    let entries: SadResult<Vec<ManifestEntry>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut sample = generate_scene(seed, &cfg.scene)?;
            if diversify_targets {
                let value = cfg.target_values[i % cfg.target_values.len()];
                sample = match cfg.dimension {
                    Dimension::Fog => apply_fog(&sample, value, &dc)?,
                    Dimension::Fov => apply_fov(&sample, value, &dc)?,
                    Dimension::Rain => unreachable!("validate rejects rain"),
                };
                // targets are tagged by their index in the value list, which is
                // the binning used for per-domainness evaluation
                sample.meta.domainness = Some(DomainnessSpec::from_value_index(
                    cfg.dimension,
                    value,
                    i % cfg.target_values.len(),
                    cfg.target_values.len(),
                )?);
            }
            let id = format!("{seed:08}");
            save_sample(dir, &id, &sample)?;
            Ok(ManifestEntry {
                id,
                seed,
                domainness: sample.meta.domainness.clone(),
                fov_x_deg: sample.meta.fov_x_deg,
            })
        })
        .collect();
    let entries = entries?;
    let manifest = DatasetManifest {
        split: split.to_string(),
        count: entries.len(),
        classes: cfg.scene.classes,
        width: cfg.scene.width,
        height: cfg.scene.height,
        domain,
        depth_encoding: DEPTH_ENCODING.to_string(),
        entries,
        root: dir.to_path_buf(),
    };
    manifest.save(dir)?;
    Ok(manifest)
}

/// Generate the three splits under `out/{source,target,target-val}` and write
/// their manifests. Seed ranges are contiguous and pairwise disjoint.
pub fn build_splits(cfg: &SplitConfig, out: &Path) -> SadResult<BuiltSplits> {
    cfg.validate()?;
    let s0 = cfg.seed0;
    let s1 = s0 + cfg.source_count as u64;
    let s2 = s1 + cfg.target_count as u64;
    let s3 = s2 + cfg.target_val_count as u64;
    let source = write_split(cfg, &out.join("source"), "source", DomainTag::Source, s0..s1, false)?;
    let target = write_split(cfg, &out.join("target"), "target", DomainTag::Target, s1..s2, true)?;
    let target_val = write_split(
        cfg,
        &out.join("target-val"),
        "target-val",
        DomainTag::Target,
        s2..s3,
        true,
    )?;
    Ok(BuiltSplits {
        source,
        target,
        target_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SplitConfig {
        SplitConfig {
            scene: SceneGenConfig {
                width: 24,
                height: 24,
                ..SceneGenConfig::default()
            },
            source_count: 6,
            target_count: 6,
            target_val_count: 3,
            ..SplitConfig::default()
        }
    }

    #[test]
    fn strict_unseen_guard() {
        let ok = SplitConfig {
            target_values: vec![0.06],
            train_range: (0.0, 0.04),
            ..tiny_cfg()
        };
        ok.validate().unwrap();
        let bad = SplitConfig {
            target_values: vec![0.02],
            train_range: (0.0, 0.04),
            ..tiny_cfg()
        };
        assert!(matches!(bad.validate(), Err(SadError::Config(_))));
    }

    #[test]
    fn multi_domainness_bins_partition_split() {
        let cfg = SplitConfig {
            target_values: vec![0.05, 0.08, 0.12],
            ..tiny_cfg()
        };
        let dir = tempfile::tempdir().unwrap();
        let built = build_splits(&cfg, dir.path()).unwrap();
        let mut counts = [0usize; 3];
        for e in &built.target.entries {
            let d = e.domainness.as_ref().unwrap();
            assert_eq!(d.n_bins, 3);
            counts[d.bin] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), cfg.target_count);
        assert!(counts.iter().all(|&c| c > 0));
        // source entries stay clear
        assert!(built.source.entries.iter().all(|e| e.domainness.is_none()));
    }

    #[test]
    fn split_seeds_disjoint_and_manifests_parse() {
        let cfg = tiny_cfg();
        let dir = tempfile::tempdir().unwrap();
        let built = build_splits(&cfg, dir.path()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for m in [&built.source, &built.target, &built.target_val] {
            for e in &m.entries {
                assert!(seen.insert(e.seed), "seed {} reused across splits", e.seed);
            }
        }
        let reloaded = DatasetManifest::load(&dir.path().join("target")).unwrap();
        assert_eq!(reloaded.count, cfg.target_count);
        assert_eq!(reloaded.domain, DomainTag::Target);
    }
}
