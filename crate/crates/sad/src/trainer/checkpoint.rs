//! Single-file checkpoint container: a magic tag, a JSON header describing
//! named arrays (with the config snapshot, rng positions and optimizer
//! scalars), then the raw little-endian array payload. Writes are atomic
//! (temp file + rename). The same container, with the array set restricted to
//! the invariant encoder and the task head, serves as the inference bundle.

use super::{ModelParams, Trainer, TrainerConfig};
use crate::encoder::EncoderParams;
use crate::error::{SadError, SadResult};
use crate::nn::adam::Adam;
use crate::nn::{Dtype, Real};
use crate::seghead::SegHeadParams;
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SADCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the payload, in elements.
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub kind: String,
    pub dtype: Dtype,
    pub step: u64,
    pub clamp_warnings: u64,
    pub classes: usize,
    pub config: TrainerConfig,
    pub rng_data_word_pos: String,
    pub rng_dc_word_pos: String,
    pub adam_t: u64,
    pub arrays: Vec<ArrayEntry>,
}

fn write_container<F: Real>(
    path: &Path,
    header: &Header,
    arrays: &[(String, ArrayD<F>)],
) -> SadResult<()> {
    let mut payload: Vec<u8> = Vec::new();
    for (_, arr) in arrays {
        for &v in arr.iter() {
            v.write_le(&mut payload);
        }
    }
    let header_json = serde_json::to_vec(header).map_err(|e| SadError::json(path, e))?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| SadError::io(&tmp, e))?;
        f.write_all(MAGIC).map_err(|e| SadError::io(&tmp, e))?;
        f.write_all(&(header_json.len() as u64).to_le_bytes())
            .map_err(|e| SadError::io(&tmp, e))?;
        f.write_all(&header_json).map_err(|e| SadError::io(&tmp, e))?;
        f.write_all(&payload).map_err(|e| SadError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| SadError::io(path, e))
}

fn build_entries<F: Real>(arrays: &[(String, ArrayD<F>)]) -> Vec<ArrayEntry> {
    let mut offset = 0u64;
    arrays
        .iter()
        .map(|(name, arr)| {
            let e = ArrayEntry {
                name: name.clone(),
                shape: arr.shape().to_vec(),
                offset,
                len: arr.len() as u64,
            };
            offset += arr.len() as u64;
            e
        })
        .collect()
}

fn model_arrays<F: Real>(model: &ModelParams<F>) -> Vec<(String, ArrayD<F>)> {
    let mut out = Vec::new();
    model.visit(&mut |name, view| out.push((name, view.to_owned())));
    out
}

/// Write a full training checkpoint.
pub fn save<F: Real>(trainer: &Trainer<F>, path: &Path) -> SadResult<()> {
    let mut arrays = model_arrays(&trainer.model);
    for (i, m) in trainer.opt.m.iter().enumerate() {
        arrays.push((format!("adam.m.{i}"), m.clone()));
    }
    for (i, v) in trainer.opt.v.iter().enumerate() {
        arrays.push((format!("adam.v.{i}"), v.clone()));
    }
    let header = Header {
        version: 1,
        kind: "train".into(),
        dtype: F::DTYPE,
        step: trainer.step,
        clamp_warnings: trainer.clamp_warnings,
        classes: trainer.model.classes,
        config: trainer.cfg.clone(),
        rng_data_word_pos: trainer.rng_data.get_word_pos().to_string(),
        rng_dc_word_pos: trainer.rng_dc.get_word_pos().to_string(),
        adam_t: trainer.opt.t,
        arrays: build_entries(&arrays),
    };
    write_container(path, &header, &arrays)
}

/// Read the header and the raw payload bytes.
pub fn read_container(path: &Path) -> SadResult<(Header, Vec<u8>)> {
    let mut f = std::fs::File::open(path).map_err(|e| SadError::io(path, e))?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|e| SadError::io(path, e))?;
    if &magic != MAGIC {
        return Err(SadError::Checkpoint(format!(
            "{} is not a checkpoint container",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(|e| SadError::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json).map_err(|e| SadError::io(path, e))?;
    let header: Header =
        serde_json::from_slice(&header_json).map_err(|e| SadError::json(path, e))?;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload).map_err(|e| SadError::io(path, e))?;
    Ok((header, payload))
}

/// Element precision stored in a container (for dtype dispatch).
pub fn peek(path: &Path) -> SadResult<(Dtype, String)> {
    let (header, _) = read_container(path)?;
    Ok((header.dtype, header.kind))
}

struct PayloadReader<'a, F> {
    by_name: BTreeMap<String, &'a ArrayEntry>,
    payload: &'a [u8],
    _marker: std::marker::PhantomData<F>,
}

impl<'a, F: Real> PayloadReader<'a, F> {
    fn new(header: &'a Header, payload: &'a [u8]) -> Self {
        PayloadReader {
            by_name: header.arrays.iter().map(|e| (e.name.clone(), e)).collect(),
            payload,
            _marker: std::marker::PhantomData,
        }
    }

    fn get(&self, name: &str, want_shape: &[usize]) -> SadResult<ArrayD<F>> {
        let entry = self.by_name.get(name).ok_or_else(|| {
            SadError::Checkpoint(format!("container is missing array {name:?}"))
        })?;
        if entry.shape != want_shape {
            return Err(SadError::Checkpoint(format!(
                "array {name:?} has shape {:?}, expected {:?}",
                entry.shape, want_shape
            )));
        }
        self.read_entry(entry)
    }

    fn read_entry(&self, entry: &ArrayEntry) -> SadResult<ArrayD<F>> {
        let bytes = F::BYTES;
        let start = entry.offset as usize * bytes;
        let end = start + entry.len as usize * bytes;
        if end > self.payload.len() {
            return Err(SadError::Checkpoint(format!(
                "array {:?} overruns the payload",
                entry.name
            )));
        }
        let vals: Vec<F> = (0..entry.len as usize)
            .map(|i| F::read_le(&self.payload[start + i * bytes..start + (i + 1) * bytes]))
            .collect();
        ArrayD::from_shape_vec(ndarray::IxDyn(&entry.shape), vals)
            .map_err(|e| SadError::Checkpoint(format!("array {:?}: {e}", entry.name)))
    }
}

fn parse_word_pos(s: &str, path: &Path) -> SadResult<u128> {
    s.parse::<u128>().map_err(|_| {
        SadError::Checkpoint(format!("bad rng word position in {}", path.display()))
    })
}

/// Restore a full trainer: parameters, buffers, optimizer state, step counter
/// and rng positions.
pub fn load<F: Real>(path: &Path) -> SadResult<Trainer<F>> {
    let (header, payload) = read_container(path)?;
    if header.kind != "train" {
        return Err(SadError::Checkpoint(format!(
            "{} holds an {} bundle, not a training checkpoint",
            path.display(),
            header.kind
        )));
    }
    if header.dtype != F::DTYPE {
        return Err(SadError::Checkpoint(format!(
            "checkpoint is {}, loader instantiated at {}",
            header.dtype.as_str(),
            F::DTYPE.as_str()
        )));
    }
    let reader = PayloadReader::<F>::new(&header, &payload);
    let mut trainer = Trainer::<F>::new(header.config.clone(), header.classes)?;
    let mut assign_err: Option<SadError> = None;
    trainer.model.visit_mut(&mut |name, mut view| {
        if assign_err.is_some() {
            return;
        }
        match reader.get(&name, view.shape()) {
            Ok(arr) => view.assign(&arr),
            Err(e) => assign_err = Some(e),
        }
    });
    if let Some(e) = assign_err {
        return Err(e);
    }
    let mut opt = Adam::<F>::new();
    opt.t = header.adam_t;
    let mut i = 0;
    while reader.by_name.contains_key(&format!("adam.m.{i}")) {
        let m_entry = reader.by_name[&format!("adam.m.{i}")];
        let v_entry = reader.by_name.get(&format!("adam.v.{i}")).ok_or_else(|| {
            SadError::Checkpoint(format!("adam.v.{i} missing from container"))
        })?;
        opt.m.push(reader.read_entry(m_entry)?);
        opt.v.push(reader.read_entry(v_entry)?);
        i += 1;
    }
    trainer.opt = opt;
    trainer.step = header.step;
    trainer.clamp_warnings = header.clamp_warnings;
    trainer.rng_data = ChaCha8Rng::seed_from_u64(header.config.seed);
    trainer.rng_data.set_stream(10);
    trainer
        .rng_data
        .set_word_pos(parse_word_pos(&header.rng_data_word_pos, path)?);
    trainer.rng_dc = ChaCha8Rng::seed_from_u64(header.config.seed);
    trainer.rng_dc.set_stream(11);
    trainer
        .rng_dc
        .set_word_pos(parse_word_pos(&header.rng_dc_word_pos, path)?);
    Ok(trainer)
}

/// Prefixes kept in an exported inference bundle.
const INFERENCE_PREFIXES: [&str; 2] = ["encoder_inv.", "taskhead."];

/// Write the pruned inference bundle: only the invariant encoder and the task
/// head survive; the creator, the regularizer, the specific encoder and the
/// discriminator are dropped.
pub fn export_inference<F: Real>(trainer: &Trainer<F>, path: &Path) -> SadResult<()> {
    let arrays: Vec<(String, ArrayD<F>)> = model_arrays(&trainer.model)
        .into_iter()
        .filter(|(name, _)| INFERENCE_PREFIXES.iter().any(|p| name.starts_with(p)))
        .collect();
    let header = Header {
        version: 1,
        kind: "inference".into(),
        dtype: F::DTYPE,
        step: trainer.step,
        clamp_warnings: 0,
        classes: trainer.model.classes,
        config: trainer.cfg.clone(),
        rng_data_word_pos: "0".into(),
        rng_dc_word_pos: "0".into(),
        adam_t: 0,
        arrays: build_entries(&arrays),
    };
    write_container(path, &header, &arrays)
}

/// Load an inference bundle (also accepts a full checkpoint, from which it
/// reads just the two surviving modules).
pub fn load_inference<F: Real>(
    path: &Path,
) -> SadResult<(EncoderParams<F>, SegHeadParams<F>, Header)> {
    let (header, payload) = read_container(path)?;
    if header.dtype != F::DTYPE {
        return Err(SadError::Checkpoint(format!(
            "bundle is {}, loader instantiated at {}",
            header.dtype.as_str(),
            F::DTYPE.as_str()
        )));
    }
    let reader = PayloadReader::<F>::new(&header, &payload);
    let mut model =
        ModelParams::<F>::init(header.config.seed, &header.config.arch, &header.config.sar, header.classes)?;
    let mut assign_err: Option<SadError> = None;
    model.encoder_inv.visit_mut("encoder_inv.", &mut |name, mut view| {
        if assign_err.is_some() {
            return;
        }
        match reader.get(&name, view.shape()) {
            Ok(arr) => view.assign(&arr),
            Err(e) => assign_err = Some(e),
        }
    });
    model.taskhead.visit_mut("taskhead.", &mut |name, mut view| {
        if assign_err.is_some() {
            return;
        }
        match reader.get(&name, view.shape()) {
            Ok(arr) => view.assign(&arr),
            Err(e) => assign_err = Some(e),
        }
    });
    if let Some(e) = assign_err {
        return Err(e);
    }
    let ModelParams {
        encoder_inv,
        taskhead,
        ..
    } = model;
    Ok((encoder_inv, taskhead, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dtype;
    use crate::synthdata::{generate_scene, SceneGenConfig};
    use crate::trainer::{LossBundle, TrainerConfig};

    fn scenes(n: usize, base: u64) -> Vec<crate::synthdata::SceneSample> {
        let cfg = SceneGenConfig {
            width: 32,
            height: 32,
            ..SceneGenConfig::default()
        };
        (0..n)
            .map(|i| generate_scene(base + i as u64, &cfg).unwrap())
            .collect()
    }

    fn step(t: &mut Trainer<f64>, src: &[crate::synthdata::SceneSample], tgt: &[crate::synthdata::SceneSample]) -> LossBundle {
        let src_ids = t.draw_indices(src.len(), 2);
        let tgt_ids = t.draw_indices(tgt.len(), 2);
        let s: Vec<_> = src_ids.iter().map(|&i| src[i].clone()).collect();
        let g: Vec<_> = tgt_ids.iter().map(|&i| tgt[i].clone()).collect();
        t.train_step(&s, &src_ids, &g, &tgt_ids).unwrap().bundle
    }

    #[test]
    fn resume_reproduces_uninterrupted_run_bit_exactly() {
        let cfg = TrainerConfig {
            precision: Dtype::F64,
            steps: 6,
            batch_size: 2,
            seed: 13,
            ..TrainerConfig::default()
        };
        let src = scenes(5, 0);
        let tgt = scenes(5, 50);

        let mut full = Trainer::<f64>::new(cfg.clone(), 6).unwrap();
        let mut full_bundles = Vec::new();
        for _ in 0..6 {
            full_bundles.push(step(&mut full, &src, &tgt));
        }

        let mut first = Trainer::<f64>::new(cfg, 6).unwrap();
        for _ in 0..3 {
            step(&mut first, &src, &tgt);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.sad");
        save(&first, &path).unwrap();
        let mut resumed = load::<f64>(&path).unwrap();
        assert_eq!(resumed.step, 3);
        for k in 3..6 {
            let b = step(&mut resumed, &src, &tgt);
            assert_eq!(b, full_bundles[k], "step {k} diverged after resume");
        }
    }

    #[test]
    fn export_keeps_only_inference_modules() {
        let cfg = TrainerConfig {
            precision: Dtype::F64,
            steps: 2,
            batch_size: 2,
            seed: 3,
            ..TrainerConfig::default()
        };
        let src = scenes(3, 0);
        let tgt = scenes(3, 50);
        let mut t = Trainer::<f64>::new(cfg, 6).unwrap();
        step(&mut t, &src, &tgt);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("export.sad");
        export_inference(&t, &path).unwrap();
        let (header, _) = read_container(&path).unwrap();
        assert_eq!(header.kind, "inference");
        for e in &header.arrays {
            assert!(
                e.name.starts_with("encoder_inv.") || e.name.starts_with("taskhead."),
                "unexpected entry {}",
                e.name
            );
        }
        // parameter accounting: export holds exactly those two module's arrays
        let mut want = 0usize;
        t.model.encoder_inv.visit("", &mut |_, v| want += v.len());
        t.model.taskhead.visit("", &mut |_, v| want += v.len());
        let got: usize = header.arrays.iter().map(|e| e.len as usize).sum();
        assert_eq!(got, want);

        // predictions agree with the full model bit-exactly
        let (mut enc, head, _) = load_inference::<f64>(&path).unwrap();
        let probe = scenes(1, 99)[0].clone();
        let img = probe.image_chw::<f64>();
        let z_full = t.model.encoder_inv.encode(&img);
        let (logits_full, _) = t.model.taskhead.forward(&z_full).unwrap();
        let z_exp = enc.encode(&img);
        let (logits_exp, _) = head.forward(&z_exp).unwrap();
        assert_eq!(logits_full, logits_exp);
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let cfg = TrainerConfig {
            precision: Dtype::F64,
            steps: 1,
            batch_size: 1,
            ..TrainerConfig::default()
        };
        let t = Trainer::<f64>::new(cfg, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.sad");
        save(&t, &path).unwrap();
        assert!(matches!(
            load::<f32>(&path),
            Err(SadError::Checkpoint(_))
        ));
        assert_eq!(peek(&path).unwrap().0, Dtype::F64);
    }
}
