//! Adaptation-quality and disentanglement metrics: mean IoU over a confusion
//! matrix, per-domainness-bin score spread, and linear probes that measure how
//! much domainness information each encoder's pooled features still carry.

use crate::encoder::{EncoderParams, FeatureMap};
use crate::error::{SadError, SadResult};
use crate::nn::losses::IGNORE_INDEX;
use crate::nn::ops::avg_pool_grid;
use crate::nn::Real;
use crate::seghead::SegHeadParams;
use crate::synthdata::io::LoadedSplit;
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// Per-class IoU (None for classes absent from both prediction and truth) and
/// their mean over present classes. Pixels labeled 255 are excluded.
pub fn miou(
    preds: &[Array2<u8>],
    gts: &[Array2<u8>],
    classes: usize,
) -> SadResult<(Vec<Option<f64>>, f64)> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(SadError::Data(format!(
            "miou needs matching non-empty inputs, got {} preds / {} gts",
            preds.len(),
            gts.len()
        )));
    }
    let mut confusion = vec![0u64; classes * classes];
    for (p, g) in preds.iter().zip(gts.iter()) {
        if p.dim() != g.dim() {
            return Err(SadError::Shape(format!(
                "pred {:?} vs gt {:?}",
                p.dim(),
                g.dim()
            )));
        }
        for (&pc, &gc) in p.iter().zip(g.iter()) {
            if gc == IGNORE_INDEX || pc == IGNORE_INDEX {
                continue;
            }
            if pc as usize >= classes || gc as usize >= classes {
                return Err(SadError::Data(format!(
                    "class out of range: pred {pc}, gt {gc}, K={classes}"
                )));
            }
            confusion[gc as usize * classes + pc as usize] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(classes);
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..classes {
        let tp = confusion[c * classes + c];
        let fp: u64 = (0..classes).map(|g| confusion[g * classes + c]).sum::<u64>() - tp;
        let fn_: u64 = (0..classes).map(|p| confusion[c * classes + p]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        if denom == 0 {
            per_class.push(None);
        } else {
            let iou = tp as f64 / denom as f64;
            per_class.push(Some(iou));
            sum += iou;
            present += 1;
        }
    }
    if present == 0 {
        return Err(SadError::Data("no class present in either input".into()));
    }
    Ok((per_class, sum / present as f64))
}

/// Spread (max - min) of per-bin scores; needs at least two bins.
pub fn intra_gap(per_bin: &BTreeMap<usize, f64>) -> SadResult<f64> {
    if per_bin.len() < 2 {
        return Err(SadError::Data(format!(
            "intra gap needs >= 2 bins, got {}",
            per_bin.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in per_bin.values() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi - lo)
}

/// Multinomial logistic probe on frozen feature vectors: stratified 80/20
/// split, L2 strength 1e-3 on the weights, deterministic in `seed`. Returns
/// held-out accuracy.
pub fn probe_domainness(features: &[(Vec<f64>, usize)], n_bins: usize, seed: u64) -> SadResult<f64> {
    if n_bins < 2 {
        return Err(SadError::Config("probe needs >= 2 bins".into()));
    }
    let mut by_bin: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for (i, (_, bin)) in features.iter().enumerate() {
        if *bin >= n_bins {
            return Err(SadError::Data(format!("bin {bin} out of range")));
        }
        by_bin[*bin].push(i);
    }
    let populated = by_bin.iter().filter(|v| !v.is_empty()).count();
    if populated < 2 {
        return Err(SadError::Data(
            "probe needs samples from at least two bins".into(),
        ));
    }
    for (b, v) in by_bin.iter().enumerate() {
        if !v.is_empty() && v.len() < 10 {
            return Err(SadError::Data(format!(
                "bin {b} has {} samples, need >= 10",
                v.len()
            )));
        }
    }
    let dim = features[0].0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(21);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for bin in by_bin.iter() {
        let mut order = bin.clone();
        // Fisher-Yates with the seeded stream
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let n_train = (order.len() * 8) / 10;
        train_idx.extend_from_slice(&order[..n_train]);
        test_idx.extend_from_slice(&order[n_train..]);
    }
    if test_idx.is_empty() {
        return Err(SadError::Data("probe test split is empty".into()));
    }

    // standardize on the training split
    let mut mean = vec![0.0f64; dim];
    for &i in &train_idx {
        for (m, v) in mean.iter_mut().zip(features[i].0.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= train_idx.len() as f64;
    }
    let mut sd = vec![0.0f64; dim];
    for &i in &train_idx {
        for (s, (v, m)) in sd.iter_mut().zip(features[i].0.iter().zip(mean.iter())) {
            *s += (v - m) * (v - m);
        }
    }
    for s in sd.iter_mut() {
        *s = (*s / train_idx.len() as f64).sqrt().max(1e-8);
    }
    let standardized = |i: usize| -> Vec<f64> {
        features[i]
            .0
            .iter()
            .zip(mean.iter().zip(sd.iter()))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    };

    // full-batch gradient descent with momentum on softmax cross-entropy
    const L2: f64 = 1e-3;
    const ITERS: usize = 300;
    const LR: f64 = 0.5;
    const MOMENTUM: f64 = 0.9;
    let mut w = Array2::<f64>::zeros((n_bins, dim));
    let mut b = Array1::<f64>::zeros(n_bins);
    let mut vw = Array2::<f64>::zeros((n_bins, dim));
    let mut vb = Array1::<f64>::zeros(n_bins);
    let xs: Vec<Vec<f64>> = train_idx.iter().map(|&i| standardized(i)).collect();
    let ys: Vec<usize> = train_idx.iter().map(|&i| features[i].1).collect();
    let n = xs.len() as f64;
    for _ in 0..ITERS {
        let mut gw = Array2::<f64>::zeros((n_bins, dim));
        let mut gb = Array1::<f64>::zeros(n_bins);
        for (x, &y) in xs.iter().zip(ys.iter()) {
            let mut logits = vec![0.0f64; n_bins];
            for (k, lg) in logits.iter_mut().enumerate() {
                *lg = b[k] + w.row(k).iter().zip(x.iter()).map(|(a, c)| a * c).sum::<f64>();
            }
            let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - maxv).exp()).sum();
            for k in 0..n_bins {
                let p = (logits[k] - maxv).exp() / z;
                let d = (p - if k == y { 1.0 } else { 0.0 }) / n;
                gb[k] += d;
                let mut row = gw.row_mut(k);
                for (g, &xv) in row.iter_mut().zip(x.iter()) {
                    *g += d * xv;
                }
            }
        }
        gw.scaled_add(L2, &w);
        vw.zip_mut_with(&gw, |v, &g| *v = MOMENTUM * *v - LR * g);
        vb.zip_mut_with(&gb, |v, &g| *v = MOMENTUM * *v - LR * g);
        w += &vw;
        b += &vb;
    }

    let mut correct = 0usize;
    for &i in &test_idx {
        let x = standardized(i);
        let mut best = (0usize, f64::NEG_INFINITY);
        for k in 0..n_bins {
            let l = b[k] + w.row(k).iter().zip(x.iter()).map(|(a, c)| a * c).sum::<f64>();
            if l > best.1 {
                best = (k, l);
            }
        }
        if best.0 == features[i].1 {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_idx.len() as f64)
}

/// Pool a feature map to the probe grid and flatten to a vector.
pub fn pooled_vector<F: Real>(z: &FeatureMap<F>, grid: (usize, usize)) -> Vec<f64> {
    avg_pool_grid(&z.values, grid.0, grid.1)
        .iter()
        .map(|&v| Real::to_f64(v))
        .collect()
}

/// Argmax segmentation masks for a batch of images through an encoder + head.
pub fn predict_masks<F: Real>(
    encoder: &mut EncoderParams<F>,
    head: &SegHeadParams<F>,
    imgs: &[Array3<F>],
) -> SadResult<Vec<Array2<u8>>> {
    let (zs, _) = encoder.forward_batch(imgs, false, 0);
    zs.par_iter()
        .map(|z| {
            let (logits, _) = head.forward(z)?;
            let (k, h, w) = logits.dim();
            let mut mask = Array2::<u8>::zeros((h, w));
            for y in 0..h {
                for x in 0..w {
                    let mut best = (0usize, logits[(0, y, x)]);
                    for c in 1..k {
                        if logits[(c, y, x)] > best.1 {
                            best = (c, logits[(c, y, x)]);
                        }
                    }
                    mask[(y, x)] = best.0 as u8;
                }
            }
            Ok(mask)
        })
        .collect()
}

/// Evaluate mIoU of an encoder/head pair over a loaded split, in batches.
pub fn eval_split_miou<F: Real>(
    encoder: &mut EncoderParams<F>,
    head: &SegHeadParams<F>,
    split: &LoadedSplit,
    batch: usize,
) -> SadResult<(Vec<Option<f64>>, f64)> {
    let classes = split.manifest.classes;
    let (preds, gts) = predict_split(encoder, head, split, batch)?;
    miou(&preds, &gts, classes)
}

/// Predictions plus ground truths for a split (kept for per-bin breakdowns).
pub fn predict_split<F: Real>(
    encoder: &mut EncoderParams<F>,
    head: &SegHeadParams<F>,
    split: &LoadedSplit,
    batch: usize,
) -> SadResult<(Vec<Array2<u8>>, Vec<Array2<u8>>)> {
    let mut preds = Vec::with_capacity(split.len());
    let mut gts = Vec::with_capacity(split.len());
    for chunk in split.samples.chunks(batch.max(1)) {
        let scenes: Vec<_> = chunk.par_iter().map(|r| r.to_scene()).collect();
        let imgs: Vec<Array3<F>> = scenes.par_iter().map(|s| s.image_chw::<F>()).collect();
        preds.extend(predict_masks(encoder, head, &imgs)?);
        gts.extend(scenes.into_iter().map(|s| s.mask));
    }
    Ok((preds, gts))
}

/// Per-domainness-bin mIoU over a split whose entries carry bin tags.
pub fn per_bin_miou<F: Real>(
    encoder: &mut EncoderParams<F>,
    head: &SegHeadParams<F>,
    split: &LoadedSplit,
    batch: usize,
) -> SadResult<BTreeMap<usize, f64>> {
    let classes = split.manifest.classes;
    let (preds, gts) = predict_split(encoder, head, split, batch)?;
    let mut by_bin: BTreeMap<usize, (Vec<Array2<u8>>, Vec<Array2<u8>>)> = BTreeMap::new();
    for (i, entry) in split.manifest.entries.iter().enumerate() {
        let bin = entry
            .domainness
            .as_ref()
            .map(|d| d.bin)
            .ok_or_else(|| SadError::Data(format!("entry {} has no domainness tag", entry.id)))?;
        let slot = by_bin.entry(bin).or_default();
        slot.0.push(preds[i].clone());
        slot.1.push(gts[i].clone());
    }
    let mut out = BTreeMap::new();
    for (bin, (p, g)) in by_bin {
        out.insert(bin, miou(&p, &g, classes)?.1);
    }
    Ok(out)
}

/// Build a balanced probe set by diversifying source scenes bin-by-bin:
/// sample `count` values round-robin over the creator's bins (uniform within
/// each bin's sub-range), transform, encode in eval mode and pool to vectors.
pub fn build_probe_features<F: Real>(
    encoder: &mut EncoderParams<F>,
    source: &LoadedSplit,
    dc: &crate::domainness::DcConfig,
    count: usize,
    seed: u64,
    grid: (usize, usize),
) -> SadResult<Vec<(Vec<f64>, usize)>> {
    dc.validate()?;
    if source.is_empty() {
        return Err(SadError::Data("probe needs a non-empty source split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(22);
    let n = dc.n_bins;
    let (lo, hi) = dc.range;
    let bin_width = (hi - lo) / n as f64;
    let mut labeled_imgs = Vec::with_capacity(count);
    for i in 0..count {
        let bin = i % n;
        let value = lo + (bin as f64 + rng.random::<f64>().min(1.0 - 1e-12)) * bin_width;
        let scene = source.samples[i % source.len()].to_scene();
        let transformed = match dc.dimension {
            crate::domainness::Dimension::Fog => crate::domainness::apply_fog(&scene, value, dc)?,
            crate::domainness::Dimension::Fov => crate::domainness::apply_fov(&scene, value, dc)?,
            crate::domainness::Dimension::Rain => unreachable!("validate rejects rain"),
        };
        labeled_imgs.push((transformed.image_chw::<F>(), bin));
    }
    let mut out = Vec::with_capacity(count);
    for chunk in labeled_imgs.chunks(16) {
        let imgs: Vec<Array3<F>> = chunk.iter().map(|(img, _)| img.clone()).collect();
        let (zs, _) = encoder.forward_batch(&imgs, false, 0);
        for (z, (_, bin)) in zs.iter().zip(chunk.iter()) {
            out.push((pooled_vector(z, grid), *bin));
        }
    }
    Ok(out)
}

/// Evaluation report emitted by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
    pub per_bin: BTreeMap<usize, f64>,
    pub intra_gap: Option<f64>,
    pub probe_spf: Option<f64>,
    pub probe_inv: Option<f64>,
    pub samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = arr2(&[[0u8, 1], [2, 3]]);
        let (_, mean) = miou(&[gt.clone()], &[gt], 6).unwrap();
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn hand_confusion_matrix_case() {
        let gt = arr2(&[[0u8, 0], [1, 1]]);
        let pred = arr2(&[[0u8, 1], [1, 1]]);
        let (per_class, mean) = miou(&[pred], &[gt], 2).unwrap();
        assert!((per_class[0].unwrap() - 0.5).abs() < 1e-12);
        assert!((per_class[1].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((mean - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_single_class_scores_zero() {
        let gt = arr2(&[[1u8, 1], [1, 1]]);
        let pred = arr2(&[[2u8, 2], [2, 2]]);
        let (_, mean) = miou(&[pred], &[gt], 3).unwrap();
        assert_eq!(mean, 0.0);
    }

    #[test]
    fn absent_classes_excluded_and_ignore_respected() {
        let gt = arr2(&[[0u8, 255], [0, 0]]);
        let pred = arr2(&[[0u8, 5], [0, 0]]);
        let (per_class, mean) = miou(&[pred], &[gt], 6).unwrap();
        assert_eq!(mean, 1.0); // the 255 pixel is excluded entirely
        assert!(per_class[1].is_none());
    }

    #[test]
    fn empty_input_rejected() {
        assert!(miou(&[], &[], 3).is_err());
    }

    #[test]
    fn class_permutation_invariance() {
        let gt = arr2(&[[0u8, 1, 2], [2, 1, 0], [0, 0, 1]]);
        let pred = arr2(&[[0u8, 2, 2], [2, 1, 1], [0, 0, 1]]);
        let (_, base) = miou(&[pred.clone()], &[gt.clone()], 3).unwrap();
        let perm = [1u8, 2, 0];
        let pg = gt.mapv(|v| perm[v as usize]);
        let pp = pred.mapv(|v| perm[v as usize]);
        let (_, permuted) = miou(&[pp], &[pg], 3).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn intra_gap_cases() {
        let mut m = BTreeMap::new();
        m.insert(0, 0.4);
        m.insert(1, 0.6);
        assert!((intra_gap(&m).unwrap() - 0.2).abs() < 1e-12);
        m.insert(2, 0.6);
        // brute-force max/min over random maps
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut m = BTreeMap::new();
            for b in 0..4 {
                m.insert(b, rng.random::<f64>());
            }
            let want = m.values().cloned().fold(f64::NEG_INFINITY, f64::max)
                - m.values().cloned().fold(f64::INFINITY, f64::min);
            assert!((intra_gap(&m).unwrap() - want).abs() < 1e-12);
        }
        let single: BTreeMap<usize, f64> = [(0, 0.5)].into_iter().collect();
        assert!(intra_gap(&single).is_err());
        let equal: BTreeMap<usize, f64> = [(0, 0.5), (1, 0.5)].into_iter().collect();
        assert_eq!(intra_gap(&equal).unwrap(), 0.0);
    }

    fn gaussian_features(
        rng: &mut ChaCha8Rng,
        n_per_bin: usize,
        n_bins: usize,
        dim: usize,
    ) -> Vec<(Vec<f64>, usize)> {
        let mut out = Vec::new();
        for bin in 0..n_bins {
            for _ in 0..n_per_bin {
                let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
                out.push((v, bin));
            }
        }
        out
    }

    #[test]
    fn probe_identical_features_scores_chance() {
        let feats: Vec<(Vec<f64>, usize)> = (0..400)
            .map(|i| (vec![0.7, -0.3, 1.1, 0.0], i % 4))
            .collect();
        let acc = probe_domainness(&feats, 4, 0).unwrap();
        assert!((acc - 0.25).abs() < 1e-9, "got {acc}");
    }

    #[test]
    fn probe_one_hot_features_scores_one() {
        let feats: Vec<(Vec<f64>, usize)> = (0..400)
            .map(|i| {
                let bin = i % 4;
                let mut v = vec![0.0; 4];
                v[bin] = 1.0;
                (v, bin)
            })
            .collect();
        let acc = probe_domainness(&feats, 4, 0).unwrap();
        assert!(acc >= 0.999, "got {acc}");
    }

    #[test]
    fn probe_random_features_stay_near_chance() {
        // repeated-seed simulation: the median sits inside the binomial band
        let mut accs = Vec::new();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let feats = gaussian_features(&mut rng, 100, 4, 64);
            accs.push(probe_domainness(&feats, 4, seed).unwrap());
        }
        accs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = accs[2];
        assert!(
            (0.15..=0.35).contains(&median),
            "median held-out accuracy {median} outside the band"
        );
    }

    #[test]
    fn probe_shuffled_labels_collapse_to_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // informative features
        let mut feats = Vec::new();
        for bin in 0..4usize {
            for _ in 0..100 {
                let mut v: Vec<f64> = (0..16).map(|_| 0.1 * (rng.random::<f64>() - 0.5)).collect();
                v[bin] += 1.0;
                feats.push((v, bin));
            }
        }
        let informative = probe_domainness(&feats, 4, 0).unwrap();
        assert!(informative > 0.9);
        // shuffle the labels: signal gone
        let labels: Vec<usize> = feats.iter().map(|(_, b)| *b).collect();
        let mut shuffled = labels.clone();
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        for (f, l) in feats.iter_mut().zip(shuffled) {
            f.1 = l;
        }
        let chance = probe_domainness(&feats, 4, 0).unwrap();
        assert!(
            (0.10..=0.45).contains(&chance),
            "shuffled-label accuracy {chance} should be near chance"
        );
    }

    #[test]
    fn probe_single_bin_rejected() {
        let feats: Vec<(Vec<f64>, usize)> = (0..50).map(|_| (vec![1.0, 2.0], 0)).collect();
        assert!(probe_domainness(&feats, 4, 0).is_err());
    }
}
