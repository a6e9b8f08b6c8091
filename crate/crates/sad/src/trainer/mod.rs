//! End-to-end optimization of the composite objective over paired
//! source/target batches.
//!
//! Per step: every source sample is diversified online by the domainness
//! creator; the specific encoder sees the diversified image and is trained
//! only by the domainness-specific loss; the invariant encoder feeds the task
//! head, the regularizer's uniform-KL penalty, and the domain adversary.
//! The discriminator is trained on its own binary objective while the
//! invariant encoder receives the reversed, `lambda_adv`-scaled gradient of
//! the target branch (single optimizer pass).

pub mod checkpoint;

use crate::discriminator::DiscParams;
use crate::domainness::{diversify, DcConfig, DomainnessSpec};
use crate::encoder::{init_encoders, ArchConfig, EncoderGrads, EncoderParams};
use crate::error::{SadError, SadResult};
use crate::nn::adam::{poly_lr, Adam};
use crate::nn::losses::{clamp_prob, cross_entropy_logits, kl_uniform_logits};
use crate::nn::{Dtype, Real};
use crate::sar::{SarConfig, SarGrads, SarMode, SarParams};
use crate::seghead::{loss_task, SegHeadGrads, SegHeadParams};
use crate::synthdata::io::LoadedSplit;
use crate::synthdata::SceneSample;
use ndarray::{Array3, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Which loss terms contribute gradients; used by ablations and wiring tests.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LossToggle {
    pub task: bool,
    pub adv: bool,
    pub inv: bool,
    pub spf: bool,
}

impl Default for LossToggle {
    fn default() -> Self {
        LossToggle {
            task: true,
            adv: true,
            inv: true,
            spf: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Optional held-out split evaluated during/after training.
    pub eval: Option<PathBuf>,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            source: PathBuf::from("data/source"),
            target: PathBuf::from("data/target"),
            eval: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub data: DataPaths,
    pub arch: ArchConfig,
    pub sar: SarConfig,
    pub dc: DcConfig,
    /// Diversify the source domain online during training.
    pub use_dc: bool,
    /// Enable the self-adversarial regularizer (requires `use_dc`).
    pub use_sar: bool,
    pub sar_mode: SarMode,
    pub lambda_adv: f64,
    pub lambda_spf: f64,
    /// The invariant KL carries unit weight in the total; exposed for ablation.
    pub lambda_inv: f64,
    pub loss_enable: LossToggle,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub poly_power: f64,
    /// Reversal coefficient at the encoder/discriminator boundary.
    pub grl_coeff: f64,
    pub seed: u64,
    pub precision: Dtype,
    pub log_every: u64,
    /// 0 = checkpoint only at the end.
    pub ckpt_every: u64,
    /// 0 = evaluate only at the end (when an eval split is configured).
    pub eval_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            data: DataPaths::default(),
            arch: ArchConfig::default(),
            sar: SarConfig::default(),
            dc: DcConfig::default(),
            use_dc: true,
            use_sar: true,
            sar_mode: SarMode::SplitHeadsShared,
            lambda_adv: 0.001,
            lambda_spf: 0.1,
            lambda_inv: 1.0,
            loss_enable: LossToggle::default(),
            steps: 600,
            batch_size: 6,
            lr: 2.5e-4,
            poly_power: 0.9,
            grl_coeff: 1.0,
            seed: 0,
            precision: Dtype::F32,
            log_every: 25,
            ckpt_every: 0,
            eval_every: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> SadResult<()> {
        self.arch.validate()?;
        if self.use_dc {
            self.dc.validate()?;
        }
        if self.use_sar && !self.use_dc {
            return Err(SadError::Config(
                "use_sar requires use_dc: the regularizer is supervised by created domainness"
                    .into(),
            ));
        }
        if self.use_sar && self.sar.n_bins != self.dc.n_bins {
            return Err(SadError::Config(format!(
                "sar n_bins {} != dc n_bins {}",
                self.sar.n_bins, self.dc.n_bins
            )));
        }
        if self.lambda_adv < 0.0 || self.lambda_spf < 0.0 || self.lambda_inv < 0.0 {
            return Err(SadError::Config("loss weights must be >= 0".into()));
        }
        if self.steps == 0 {
            return Err(SadError::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SadError::Config("batch_size must be >= 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(SadError::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Named scalar losses of one step and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub task: f64,
    pub adv: f64,
    pub inv: f64,
    pub spf: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn compose(task: f64, adv: f64, inv: f64, spf: f64, cfg: &TrainerConfig) -> Self {
        LossBundle {
            task,
            adv,
            inv,
            spf,
            total: task + cfg.lambda_adv * adv + cfg.lambda_inv * inv + cfg.lambda_spf * spf,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.task.is_finite()
            && self.adv.is_finite()
            && self.inv.is_finite()
            && self.spf.is_finite()
            && self.total.is_finite()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepOutput {
    pub step: u64,
    pub bundle: LossBundle,
    pub sar_acc: f64,
    pub disc_acc: f64,
    pub lr: f64,
}

/// All five parameter collections.
pub struct ModelParams<F> {
    pub encoder_spf: EncoderParams<F>,
    pub encoder_inv: EncoderParams<F>,
    pub sar: SarParams<F>,
    pub discriminator: DiscParams<F>,
    pub taskhead: SegHeadParams<F>,
    pub classes: usize,
}

pub struct ModelGrads<F> {
    pub encoder_spf: EncoderGrads<F>,
    pub encoder_inv: EncoderGrads<F>,
    pub sar: SarGrads<F>,
    pub discriminator: crate::discriminator::DiscGrads<F>,
    pub taskhead: SegHeadGrads<F>,
}

impl<F: Real> ModelGrads<F> {
    pub fn views(&self) -> Vec<ArrayViewD<'_, F>> {
        let mut v = self.encoder_spf.views();
        v.extend(self.encoder_inv.views());
        v.extend(self.sar.views());
        v.extend(self.discriminator.views());
        v.extend(self.taskhead.views());
        v
    }
}

impl<F: Real> ModelParams<F> {
    pub fn init(
        seed: u64,
        arch: &ArchConfig,
        sar_cfg: &SarConfig,
        classes: usize,
    ) -> SadResult<Self> {
        let (encoder_spf, encoder_inv) = init_encoders(seed, arch)?;
        let channels = arch.feature_channels();
        let mut rng_sar = ChaCha8Rng::seed_from_u64(seed);
        rng_sar.set_stream(3);
        let sar = SarParams::init(&mut rng_sar, channels, sar_cfg)?;
        let mut rng_disc = ChaCha8Rng::seed_from_u64(seed);
        rng_disc.set_stream(4);
        let discriminator = DiscParams::init(&mut rng_disc, channels);
        let mut rng_head = ChaCha8Rng::seed_from_u64(seed);
        rng_head.set_stream(5);
        let taskhead = SegHeadParams::init(&mut rng_head, channels, classes, arch.downscale());
        Ok(ModelParams {
            encoder_spf,
            encoder_inv,
            sar,
            discriminator,
            taskhead,
            classes,
        })
    }

    pub fn zero_grads(&self) -> ModelGrads<F> {
        ModelGrads {
            encoder_spf: self.encoder_spf.zero_grads(),
            encoder_inv: self.encoder_inv.zero_grads(),
            sar: self.sar.zero_grads(),
            discriminator: self.discriminator.zero_grads(),
            taskhead: self.taskhead.zero_grads(),
        }
    }

    /// Every stored array (parameters and buffers) by checkpoint entry name.
    pub fn visit(&self, f: &mut dyn FnMut(String, ArrayViewD<'_, F>)) {
        self.encoder_spf.visit("encoder_spf.", f);
        self.encoder_inv.visit("encoder_inv.", f);
        self.sar.visit("sar.", f);
        self.discriminator.visit("discriminator.", f);
        self.taskhead.visit("taskhead.", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, ArrayViewMutD<'_, F>)) {
        self.encoder_spf.visit_mut("encoder_spf.", f);
        self.encoder_inv.visit_mut("encoder_inv.", f);
        self.sar.visit_mut("sar.", f);
        self.discriminator.visit_mut("discriminator.", f);
        self.taskhead.visit_mut("taskhead.", f);
    }

    /// Learned parameters in the fixed order matched by `ModelGrads::views`.
    pub fn learned_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut v = self.encoder_spf.learned_mut();
        v.extend(self.encoder_inv.learned_mut());
        v.extend(self.sar.learned_mut());
        v.extend(self.discriminator.learned_mut());
        v.extend(self.taskhead.learned_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, v| n += v.len());
        n
    }
}

/// A source batch after online diversification, ready for the forward pass.
pub struct PreparedBatch {
    pub scenes: Vec<SceneSample>,
    pub specs: Vec<Option<DomainnessSpec>>,
    pub ids: Vec<usize>,
}

pub struct Trainer<F: Real> {
    pub cfg: TrainerConfig,
    pub model: ModelParams<F>,
    pub opt: Adam<F>,
    pub step: u64,
    pub rng_data: ChaCha8Rng,
    pub rng_dc: ChaCha8Rng,
    pub clamp_warnings: u64,
    /// Freeze normalization buffers (used by gradient checks, which need the
    /// step to be a pure function of parameters and inputs).
    pub norm_frozen: bool,
}

impl<F: Real> Trainer<F> {
    pub fn new(cfg: TrainerConfig, classes: usize) -> SadResult<Self> {
        cfg.validate()?;
        if F::DTYPE != cfg.precision {
            return Err(SadError::Config(format!(
                "trainer instantiated at {} but config asks for {}",
                F::DTYPE.as_str(),
                cfg.precision.as_str()
            )));
        }
        let model = ModelParams::init(cfg.seed, &cfg.arch, &cfg.sar, classes)?;
        let mut rng_data = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_data.set_stream(10);
        let mut rng_dc = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_dc.set_stream(11);
        Ok(Trainer {
            cfg,
            model,
            opt: Adam::new(),
            step: 0,
            rng_data,
            rng_dc,
            clamp_warnings: 0,
            norm_frozen: false,
        })
    }

    /// Diversify a source batch with the trainer's creator rng.
    pub fn prepare_batch(
        &mut self,
        src: &[SceneSample],
        ids: &[usize],
    ) -> SadResult<PreparedBatch> {
        let mut scenes = Vec::with_capacity(src.len());
        let mut specs = Vec::with_capacity(src.len());
        for s in src {
            if self.cfg.use_dc {
                let (d, spec) = diversify(s, &mut self.rng_dc, &self.cfg.dc)?;
                scenes.push(d);
                specs.push(Some(spec));
            } else {
                scenes.push(s.clone());
                specs.push(None);
            }
        }
        Ok(PreparedBatch {
            scenes,
            specs,
            ids: ids.to_vec(),
        })
    }

    /// One optimization step over freshly drawn batches.
    pub fn train_step(
        &mut self,
        batch_src: &[SceneSample],
        src_ids: &[usize],
        batch_tgt: &[SceneSample],
        tgt_ids: &[usize],
    ) -> SadResult<StepOutput> {
        let prepared = self.prepare_batch(batch_src, src_ids)?;
        let (out, _) = self.step_prepared(&prepared, batch_tgt, tgt_ids, true)?;
        Ok(out)
    }

    /// Forward + backward over an already-diversified batch; optionally apply
    /// the optimizer update. Returns the analytic gradients so wiring tests
    /// can inspect them without stepping.
    pub fn step_prepared(
        &mut self,
        prepared: &PreparedBatch,
        batch_tgt: &[SceneSample],
        tgt_ids: &[usize],
        update: bool,
    ) -> SadResult<(StepOutput, ModelGrads<F>)> {
        let b_s = prepared.scenes.len();
        let b_t = batch_tgt.len();
        if b_s == 0 || b_t == 0 {
            return Err(SadError::Config("train_step needs non-empty batches".into()));
        }
        let cfg = &self.cfg;
        let spf_on = cfg.loss_enable.spf && cfg.use_sar;
        let inv_on = cfg.loss_enable.inv && cfg.use_sar;
        let adv_on = cfg.loss_enable.adv;
        let task_on = cfg.loss_enable.task;
        let train_norm = !self.norm_frozen;

        let imgs_src: Vec<Array3<F>> = prepared
            .scenes
            .par_iter()
            .map(|s| s.image_chw::<F>())
            .collect();
        let imgs_tgt: Vec<Array3<F>> = batch_tgt.par_iter().map(|s| s.image_chw::<F>()).collect();

        // encoders: the invariant encoder sees source and target in one batch;
        // its normalization statistics come from the source half only
        let mut all_inv = imgs_src.clone();
        all_inv.extend(imgs_tgt.iter().cloned());
        let (z_inv_all, tr_inv_all) =
            self.model
                .encoder_inv
                .forward_batch(&all_inv, train_norm, b_s);
        let spf_pass = if spf_on {
            Some(
                self.model
                    .encoder_spf
                    .forward_batch(&imgs_src, train_norm, b_s),
            )
        } else {
            None
        };

        let mut grads = self.model.zero_grads();
        let feat_dim = z_inv_all[0].values.raw_dim();
        let mut dz_inv: Vec<Array3<F>> = (0..b_s + b_t).map(|_| Array3::zeros(feat_dim.clone())).collect();
        let mut dz_spf: Vec<Array3<F>> = Vec::new();

        // domainness-specific loss: cross-entropy on the spf path, trains the
        // regularizer head and the specific encoder
        let mut spf_sum = 0.0f64;
        let mut sar_correct = 0usize;
        if let Some((z_spf, _)) = &spf_pass {
            let scale = F::from_f64(cfg.lambda_spf / b_s as f64);
            for i in 0..b_s {
                let spec = prepared.specs[i].as_ref().ok_or_else(|| {
                    SadError::Contract("spf loss needs a domainness label".into())
                })?;
                let (pred, trace) = self.model.sar.forward(&z_spf[i])?;
                if pred.n_bins() != spec.n_bins {
                    return Err(SadError::Shape(format!(
                        "sar predicts {} bins, label has {}",
                        pred.n_bins(),
                        spec.n_bins
                    )));
                }
                let (l, mut dlog) = cross_entropy_logits(&pred.logits, spec.bin);
                spf_sum += l.to_f64();
                if pred.argmax() == spec.bin {
                    sar_correct += 1;
                }
                dlog.mapv_inplace(|v| v * scale);
                let (g, dz) = self.model.sar.backward(&trace, &dlog);
                grads.sar.add_assign(&g);
                dz_spf.push(dz);
            }
        }

        // domainness-invariant loss: KL to uniform on the inv path; flows into
        // the invariant encoder, and into the head only in the ablation mode
        let mut inv_sum = 0.0f64;
        if inv_on {
            let scale = F::from_f64(cfg.lambda_inv / b_s as f64);
            for i in 0..b_s {
                let (pred, trace) = self.model.sar.forward(&z_inv_all[i])?;
                let (l, mut dlog) = kl_uniform_logits(&pred.logits);
                inv_sum += l.to_f64();
                dlog.mapv_inplace(|v| v * scale);
                let (g, dz) = self.model.sar.backward(&trace, &dlog);
                if cfg.sar_mode == SarMode::BothIntoSar {
                    grads.sar.add_assign(&g);
                }
                dz_inv[i] += &dz;
            }
        }

        // task loss on the (diversified) source half
        let mut task_sum = 0.0f64;
        if task_on {
            let scale = F::from_f64(1.0 / b_s as f64);
            let results: SadResult<Vec<_>> = (0..b_s)
                .into_par_iter()
                .map(|i| {
                    let (logits, trace) = self.model.taskhead.forward(&z_inv_all[i])?;
                    let (l, mut dlog) = loss_task(&logits, &prepared.scenes[i].mask)?;
                    dlog.mapv_inplace(|v| v * scale);
                    let (g, dz) = self.model.taskhead.backward(&trace, &dlog);
                    Ok((l.to_f64(), g, dz))
                })
                .collect();
            for (i, (l, g, dz)) in results?.into_iter().enumerate() {
                task_sum += l;
                grads.taskhead.add_assign(&g);
                dz_inv[i] += &dz;
            }
        }

        // inter-domain adversary: the discriminator minimizes its own binary
        // objective on both branches (unweighted); the invariant encoder
        // receives only the reversed, lambda-scaled target-branch gradient
        let mut adv_loss = 0.0f64;
        let mut disc_correct = 0usize;
        if adv_on {
            let mut src_term = 0.0f64;
            let mut tgt_term = 0.0f64;
            let half = F::from_f64(0.5);
            for i in 0..b_s {
                let (p, trace) = self.model.discriminator.forward(&z_inv_all[i])?;
                let (pc, clamped) = clamp_prob(p, 1e-6);
                if clamped {
                    self.clamp_warnings += 1;
                }
                src_term += -pc.to_f64().ln();
                if p > half {
                    disc_correct += 1;
                }
                let dl_dp = if clamped { F::zero() } else { -F::one() / pc };
                let dlogit = dl_dp * p * (F::one() - p) / F::from_f64(b_s as f64);
                let (g, _detached) = self.model.discriminator.backward(&trace, dlogit);
                grads.discriminator.add_assign(&g);
            }
            let rev = F::from_f64(-cfg.grl_coeff * cfg.lambda_adv);
            for j in 0..b_t {
                let (p, trace) = self.model.discriminator.forward(&z_inv_all[b_s + j])?;
                let (pc, clamped) = clamp_prob(p, 1e-6);
                if clamped {
                    self.clamp_warnings += 1;
                }
                tgt_term += -(1.0 - pc.to_f64()).ln();
                if p < half {
                    disc_correct += 1;
                }
                let dl_dp = if clamped {
                    F::zero()
                } else {
                    F::one() / (F::one() - pc)
                };
                let dlogit = dl_dp * p * (F::one() - p) / F::from_f64(b_t as f64);
                let (g, dz) = self.model.discriminator.backward(&trace, dlogit);
                grads.discriminator.add_assign(&g);
                dz_inv[b_s + j] += &dz.mapv(|v| v * rev);
            }
            adv_loss = src_term / b_s as f64 + tgt_term / b_t as f64;
        }

        // encoder backwards
        grads.encoder_inv = self.model.encoder_inv.backward_batch(&tr_inv_all, &dz_inv);
        if let Some((_, tr_spf)) = &spf_pass {
            grads.encoder_spf = self.model.encoder_spf.backward_batch(tr_spf, &dz_spf);
        }

        let bundle = LossBundle::compose(
            if task_on { task_sum / b_s as f64 } else { 0.0 },
            adv_loss,
            if inv_on { inv_sum / b_s as f64 } else { 0.0 },
            if spf_on { spf_sum / b_s as f64 } else { 0.0 },
            cfg,
        );
        if !bundle.is_finite() {
            return Err(SadError::NonFiniteLoss {
                step: self.step,
                src_ids: prepared.ids.clone(),
                tgt_ids: tgt_ids.to_vec(),
            });
        }

        let lr = poly_lr(cfg.lr, self.step, cfg.steps, cfg.poly_power);
        if update {
            let views = grads.views();
            let params = self.model.learned_mut();
            self.opt.step(lr, params.into_iter().zip(views).collect());
            self.step += 1;
        }

        let out = StepOutput {
            step: self.step,
            bundle,
            sar_acc: if spf_on {
                sar_correct as f64 / b_s as f64
            } else {
                0.0
            },
            disc_acc: if adv_on {
                disc_correct as f64 / (b_s + b_t) as f64
            } else {
                0.0
            },
            lr,
        };
        Ok((out, grads))
    }

    /// Draw a batch of indices from a split (uniform with replacement).
    pub fn draw_indices(&mut self, len: usize, count: usize) -> Vec<usize> {
        (0..count)
            .map(|_| self.rng_data.random_range(0..len))
            .collect()
    }
}

/// Everything a finished run leaves on disk.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub steps: u64,
    pub final_bundle: Option<LossBundle>,
}

fn scenes_for<'a>(split: &'a LoadedSplit, ids: &[usize]) -> Vec<SceneSample> {
    ids.iter().map(|&i| split.samples[i].to_scene()).collect()
}

/// Full training loop: loads the splits, runs the step loop with periodic
/// logging and checkpointing, writes the resolved config snapshot, the
/// metrics stream and the final checkpoint under `run_dir`.
pub fn train<F: Real>(cfg: &TrainerConfig, run_dir: &Path) -> SadResult<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| SadError::io(run_dir, e))?;

    let source = LoadedSplit::load(&cfg.data.source)?;
    let target = LoadedSplit::load(&cfg.data.target)?;
    if source.is_empty() || target.is_empty() {
        return Err(SadError::Data("empty source or target split".into()));
    }
    let classes = source.manifest.classes;
    if target.manifest.classes != classes {
        return Err(SadError::Data(format!(
            "source has {} classes, target {}",
            classes, target.manifest.classes
        )));
    }

    let snapshot_path = run_dir.join("config_snapshot.json");
    let snapshot = serde_json::to_string_pretty(cfg)
        .map_err(|e| SadError::json(&snapshot_path, e))?;
    std::fs::write(&snapshot_path, snapshot).map_err(|e| SadError::io(&snapshot_path, e))?;

    let metrics_path = run_dir.join("metrics.jsonl");
    let mut metrics = std::fs::File::create(&metrics_path)
        .map_err(|e| SadError::io(&metrics_path, e))?;

    let mut trainer = Trainer::<F>::new(cfg.clone(), classes)?;
    let ckpt_path = run_dir.join("checkpoint.sad");
    let mut last: Option<StepOutput> = None;
    for _ in 0..cfg.steps {
        let src_ids = trainer.draw_indices(source.len(), cfg.batch_size);
        let tgt_ids = trainer.draw_indices(target.len(), cfg.batch_size);
        let src = scenes_for(&source, &src_ids);
        let tgt = scenes_for(&target, &tgt_ids);
        let out = trainer.train_step(&src, &src_ids, &tgt, &tgt_ids)?;
        let do_log = cfg.log_every > 0
            && (out.step % cfg.log_every == 0 || out.step == cfg.steps || out.step == 1);
        if do_log {
            let mut rec = serde_json::to_value(out).map_err(|e| SadError::json(&metrics_path, e))?;
            rec["clamp_warnings"] = serde_json::json!(trainer.clamp_warnings);
            writeln!(metrics, "{rec}").map_err(|e| SadError::io(&metrics_path, e))?;
        }
        if cfg.ckpt_every > 0 && out.step % cfg.ckpt_every == 0 && out.step < cfg.steps {
            checkpoint::save(&trainer, &ckpt_path)?;
        }
        last = Some(out);
    }
    checkpoint::save(&trainer, &ckpt_path)?;
    Ok(TrainReport {
        run_dir: run_dir.to_path_buf(),
        checkpoint: ckpt_path,
        metrics: metrics_path,
        steps: trainer.step,
        final_bundle: last.map(|o| o.bundle),
    })
}
