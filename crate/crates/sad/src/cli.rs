//! Command-line entry point: dataset generation, source diversification,
//! training, evaluation, probing, inference export, and the ablation grids.
//!
//! Every run writes its fully resolved config snapshot next to its outputs.
//! Exit codes: 0 success, 2 usage error, 3 config validation failure,
//! 1 anything else; failures print a single `error: ...` line on stderr.

use crate::domainness::{diversify, DcConfig, Dimension};
use crate::encoder::EncoderParams;
use crate::error::{SadError, SadResult};
use crate::evaluation::{
    build_probe_features, eval_split_miou, intra_gap, per_bin_miou, probe_domainness, EvalReport,
};
use crate::nn::{Dtype, Real};
use crate::seghead::SegHeadParams;
use crate::synthdata::io::{
    save_sample, DatasetManifest, DomainTag, LoadedSplit, ManifestEntry, DEPTH_ENCODING,
};
use crate::synthdata::splits::{build_splits, SplitConfig};
use crate::trainer::{checkpoint, train, LossToggle, TrainerConfig};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "sad",
    about = "Self-adversarial disentangling for specific domain adaptation (desk-scale benchmark)",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the source / target / target-val splits from a config file.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Push a split through the domainness creator; writes PNG triplets plus
    /// labels.jsonl with one domainness record per line.
    Diversify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dim: Dimension,
        /// Sampling range as "lo,hi".
        #[arg(long)]
        range: String,
        #[arg(long, default_value_t = 4)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a config file; writes metrics, snapshots and a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled split; writes a JSON report.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Linear-probe domainness information in both encoders' pooled features.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        /// Clear source split the probe set is diversified from.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 400)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export the pruned inference bundle (invariant encoder + task head).
    Export {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the component ablation grid and the specific-loss ablation.
    Ablate {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Override the preset's step count.
        #[arg(long)]
        steps: Option<u64>,
    },
}

/// Entry point used by `main`; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolve a dataset path against SAD_DATA_ROOT when it is relative.
pub fn resolve_data_path(p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match std::env::var_os("SAD_DATA_ROOT") {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> SadResult<T> {
    if !path.exists() {
        return Err(SadError::Config(format!(
            "config not found: {}",
            path.display()
        )));
    }
    let body = std::fs::read_to_string(path).map_err(|e| SadError::io(path, e))?;
    toml::from_str(&body).map_err(|e| SadError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> SadResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| SadError::io(dir, e))?;
    }
    let body = serde_json::to_string_pretty(value).map_err(|e| SadError::json(path, e))?;
    std::fs::write(path, body).map_err(|e| SadError::io(path, e))
}

fn dispatch(cli: Cli) -> SadResult<()> {
    match cli.command {
        Command::GenData { config, out } => cmd_gen_data(&config, &out),
        Command::Diversify {
            input,
            out,
            dim,
            range,
            bins,
            seed,
        } => cmd_diversify(&input, &out, dim, &range, bins, seed),
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Eval { ckpt, data, report } => cmd_eval(&ckpt, &data, &report),
        Command::Probe {
            ckpt,
            data,
            report,
            count,
            seed,
        } => cmd_probe(&ckpt, &data, &report, count, seed),
        Command::Export { ckpt, out } => cmd_export(&ckpt, &out),
        Command::Ablate {
            preset,
            out,
            seeds,
            steps,
        } => cmd_ablate(&preset, &out, seeds, steps),
    }
}

fn cmd_gen_data(config: &Path, out: &Path) -> SadResult<()> {
    let cfg: SplitConfig = load_toml(config)?;
    let built = build_splits(&cfg, out)?;
    write_json(&out.join("config_snapshot.json"), &cfg)?;
    println!(
        "wrote {} source / {} target / {} target-val samples under {}",
        built.source.count,
        built.target.count,
        built.target_val.count,
        out.display()
    );
    Ok(())
}

fn parse_range(s: &str) -> SadResult<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(SadError::Config(format!("range {s:?} must be \"lo,hi\"")));
    }
    let lo = parts[0]
        .trim()
        .parse::<f64>()
        .map_err(|_| SadError::Config(format!("bad range low {:?}", parts[0])))?;
    let hi = parts[1]
        .trim()
        .parse::<f64>()
        .map_err(|_| SadError::Config(format!("bad range high {:?}", parts[1])))?;
    Ok((lo, hi))
}

fn cmd_diversify(
    input: &Path,
    out: &Path,
    dim: Dimension,
    range: &str,
    bins: usize,
    seed: u64,
) -> SadResult<()> {
    let split = LoadedSplit::load(&resolve_data_path(input))?;
    let dc = DcConfig {
        dimension: dim,
        range: parse_range(range)?,
        n_bins: bins,
        native_fov_deg: split
            .samples
            .first()
            .map(|s| s.meta.fov_x_deg)
            .unwrap_or(90.0),
        ..DcConfig::default()
    };
    dc.validate()?;
    std::fs::create_dir_all(out).map_err(|e| SadError::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(11);
    let labels_path = out.join("labels.jsonl");
    let mut labels = std::fs::File::create(&labels_path).map_err(|e| SadError::io(&labels_path, e))?;
    let mut entries = Vec::with_capacity(split.len());
    for raw in &split.samples {
        let scene = raw.to_scene();
        let (diversified, spec) = diversify(&scene, &mut rng, &dc)?;
        let id = format!("{:08}", raw.meta.seed);
        save_sample(out, &id, &diversified)?;
        let line = serde_json::to_string(&spec).map_err(|e| SadError::json(&labels_path, e))?;
        writeln!(labels, "{line}").map_err(|e| SadError::io(&labels_path, e))?;
        entries.push(ManifestEntry {
            id,
            seed: raw.meta.seed,
            domainness: Some(spec),
            fov_x_deg: diversified.meta.fov_x_deg,
        });
    }
    let manifest = DatasetManifest {
        split: format!("{}-diversified", split.manifest.split),
        count: entries.len(),
        classes: split.manifest.classes,
        width: split.manifest.width,
        height: split.manifest.height,
        domain: DomainTag::SourceDiversified,
        depth_encoding: DEPTH_ENCODING.to_string(),
        entries,
        root: out.to_path_buf(),
    };
    manifest.save(out)?;
    println!("diversified {} samples into {}", split.len(), out.display());
    Ok(())
}

fn cmd_train(config: &Path, out: &Path) -> SadResult<()> {
    let mut cfg: TrainerConfig = load_toml(config)?;
    cfg.data.source = resolve_data_path(&cfg.data.source);
    cfg.data.target = resolve_data_path(&cfg.data.target);
    cfg.data.eval = cfg.data.eval.as_deref().map(resolve_data_path);
    let report = match cfg.precision {
        Dtype::F32 => train::<f32>(&cfg, out)?,
        Dtype::F64 => train::<f64>(&cfg, out)?,
    };
    if let Some(eval_path) = &cfg.data.eval {
        let summary = eval_checkpoint_any(&report.checkpoint, eval_path)?;
        write_json(&out.join("eval_report.json"), &summary)?;
        println!(
            "trained {} steps; eval mIoU {:.4} -> {}",
            report.steps,
            summary.miou,
            report.checkpoint.display()
        );
    } else {
        println!(
            "trained {} steps -> {}",
            report.steps,
            report.checkpoint.display()
        );
    }
    Ok(())
}

fn eval_checkpoint<F: Real>(ckpt: &Path, data: &Path) -> SadResult<EvalReport> {
    let (mut encoder, head, _header) = checkpoint::load_inference::<F>(ckpt)?;
    let split = LoadedSplit::load(&resolve_data_path(data))?;
    eval_loaded(&mut encoder, &head, &split)
}

fn eval_loaded<F: Real>(
    encoder: &mut EncoderParams<F>,
    head: &SegHeadParams<F>,
    split: &LoadedSplit,
) -> SadResult<EvalReport> {
    let (per_class, mean) = eval_split_miou(encoder, head, split, 16)?;
    let tagged = split
        .manifest
        .entries
        .iter()
        .filter(|e| e.domainness.is_some())
        .count();
    let (per_bin, gap) = if tagged == split.len() {
        let per_bin = per_bin_miou(encoder, head, split, 16)?;
        let gap = if per_bin.len() >= 2 {
            Some(intra_gap(&per_bin)?)
        } else {
            None
        };
        (per_bin, gap)
    } else {
        (Default::default(), None)
    };
    Ok(EvalReport {
        miou: mean,
        per_class,
        per_bin,
        intra_gap: gap,
        probe_spf: None,
        probe_inv: None,
        samples: split.len(),
    })
}

/// Evaluate a checkpoint whatever its stored precision.
pub fn eval_checkpoint_any(ckpt: &Path, data: &Path) -> SadResult<EvalReport> {
    match checkpoint::peek(ckpt)?.0 {
        Dtype::F32 => eval_checkpoint::<f32>(ckpt, data),
        Dtype::F64 => eval_checkpoint::<f64>(ckpt, data),
    }
}

fn cmd_eval(ckpt: &Path, data: &Path, report: &Path) -> SadResult<()> {
    let summary = eval_checkpoint_any(ckpt, data)?;
    write_json(report, &summary)?;
    println!(
        "mIoU {:.4} over {} samples -> {}",
        summary.miou,
        summary.samples,
        report.display()
    );
    Ok(())
}

fn probe_checkpoint<F: Real>(
    ckpt: &Path,
    data: &Path,
    count: usize,
    seed: u64,
) -> SadResult<(f64, f64)> {
    let mut trainer = checkpoint::load::<F>(ckpt)?;
    let split = LoadedSplit::load(&resolve_data_path(data))?;
    let dc = trainer.cfg.dc.clone();
    let grid = trainer.cfg.sar.pooled;
    let n_bins = dc.n_bins;
    let feats_spf = build_probe_features(
        &mut trainer.model.encoder_spf,
        &split,
        &dc,
        count,
        seed,
        grid,
    )?;
    let feats_inv = build_probe_features(
        &mut trainer.model.encoder_inv,
        &split,
        &dc,
        count,
        seed,
        grid,
    )?;
    Ok((
        probe_domainness(&feats_spf, n_bins, seed)?,
        probe_domainness(&feats_inv, n_bins, seed)?,
    ))
}

/// Probe both encoders of a training checkpoint whatever its precision.
pub fn probe_checkpoint_any(
    ckpt: &Path,
    data: &Path,
    count: usize,
    seed: u64,
) -> SadResult<(f64, f64)> {
    match checkpoint::peek(ckpt)?.0 {
        Dtype::F32 => probe_checkpoint::<f32>(ckpt, data, count, seed),
        Dtype::F64 => probe_checkpoint::<f64>(ckpt, data, count, seed),
    }
}

fn cmd_probe(ckpt: &Path, data: &Path, report: &Path, count: usize, seed: u64) -> SadResult<()> {
    let (acc_spf, acc_inv) = probe_checkpoint_any(ckpt, data, count, seed)?;
    #[derive(Serialize)]
    struct ProbeReport {
        probe_spf: f64,
        probe_inv: f64,
        count: usize,
        seed: u64,
    }
    write_json(
        report,
        &ProbeReport {
            probe_spf: acc_spf,
            probe_inv: acc_inv,
            count,
            seed,
        },
    )?;
    println!("probe accuracy: spf {acc_spf:.4}, inv {acc_inv:.4} -> {}", report.display());
    Ok(())
}

fn cmd_export(ckpt: &Path, out: &Path) -> SadResult<()> {
    match checkpoint::peek(ckpt)?.0 {
        Dtype::F32 => export_typed::<f32>(ckpt, out),
        Dtype::F64 => export_typed::<f64>(ckpt, out),
    }
}

fn export_typed<F: Real>(ckpt: &Path, out: &Path) -> SadResult<()> {
    let trainer = checkpoint::load::<F>(ckpt)?;
    checkpoint::export_inference(&trainer, out)?;
    let (header, _) = checkpoint::read_container(out)?;
    let exported: usize = header.arrays.iter().map(|e| e.len as usize).sum();
    let full = trainer.model.param_count();
    println!(
        "exported {} of {} parameters ({:.1}%) -> {}",
        exported,
        full,
        100.0 * exported as f64 / full as f64,
        out.display()
    );
    Ok(())
}

/// A named ablation variant: which components are on and the specific-loss weight.
#[derive(Debug, Clone, Serialize)]
pub struct AblationVariant {
    pub name: String,
    pub use_dc: bool,
    pub use_sar: bool,
    pub lambda_spf: f64,
}

/// The component grid (baseline, +DC, +DC+SAR) plus the specific-loss ablation.
pub fn ablation_grid() -> Vec<AblationVariant> {
    vec![
        AblationVariant {
            name: "baseline".into(),
            use_dc: false,
            use_sar: false,
            lambda_spf: 0.0,
        },
        AblationVariant {
            name: "dc".into(),
            use_dc: true,
            use_sar: false,
            lambda_spf: 0.0,
        },
        AblationVariant {
            name: "dc-sar".into(),
            use_dc: true,
            use_sar: true,
            lambda_spf: 0.1,
        },
        AblationVariant {
            name: "dc-sar-no-spf".into(),
            use_dc: true,
            use_sar: true,
            lambda_spf: 0.0,
        },
    ]
}

/// Apply a variant to a base config (everything else untouched).
pub fn apply_variant(base: &TrainerConfig, v: &AblationVariant, seed: u64) -> TrainerConfig {
    TrainerConfig {
        use_dc: v.use_dc,
        use_sar: v.use_sar,
        lambda_spf: v.lambda_spf,
        loss_enable: LossToggle::default(),
        seed,
        ..base.clone()
    }
}

/// Benchmark preset: how to build the data and the base trainer config.
pub struct Preset {
    pub split: SplitConfig,
    pub trainer: TrainerConfig,
}

/// Named experiment presets for the ablation grids.
pub fn preset(name: &str) -> SadResult<Preset> {
    let mut split = SplitConfig::default();
    match name {
        "fog-small" => {}
        "fog-multi" => {
            split.target_values = vec![0.05, 0.08, 0.12];
        }
        "fov-small" => {
            split.dimension = Dimension::Fov;
            split.target_values = vec![45.0];
            split.train_range = (55.0, 85.0);
        }
        other => {
            return Err(SadError::Config(format!(
                "unknown preset {other:?} (expected fog-small, fog-multi or fov-small)"
            )))
        }
    }
    let trainer = TrainerConfig {
        dc: split.dc_config(),
        ..TrainerConfig::default()
    };
    Ok(Preset { split, trainer })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub miou: f64,
    pub intra_gap: Option<f64>,
    pub run_dir: PathBuf,
}

fn cmd_ablate(preset_name: &str, out: &Path, seeds: u64, steps: Option<u64>) -> SadResult<()> {
    let Preset { split, mut trainer } = preset(preset_name)?;
    if let Some(s) = steps {
        trainer.steps = s;
    }
    std::fs::create_dir_all(out).map_err(|e| SadError::io(out, e))?;
    let data_dir = out.join("data");
    if !data_dir.join("source").join("manifest.json").exists() {
        println!("generating benchmark data under {} ...", data_dir.display());
        build_splits(&split, &data_dir)?;
        write_json(&data_dir.join("config_snapshot.json"), &split)?;
    }
    trainer.data.source = data_dir.join("source");
    trainer.data.target = data_dir.join("target");
    trainer.data.eval = Some(data_dir.join("target-val"));

    let mut rows = Vec::new();
    for v in ablation_grid() {
        for seed in 0..seeds {
            let cfg = apply_variant(&trainer, &v, seed);
            let run_dir = out.join(format!("{}-s{}", v.name, seed));
            println!("running {} (seed {seed}) ...", v.name);
            let report = match cfg.precision {
                Dtype::F32 => train::<f32>(&cfg, &run_dir)?,
                Dtype::F64 => train::<f64>(&cfg, &run_dir)?,
            };
            let summary = eval_checkpoint_any(&report.checkpoint, trainer.data.eval.as_ref().unwrap())?;
            write_json(&run_dir.join("eval_report.json"), &summary)?;
            rows.push(AblationRow {
                variant: v.name.clone(),
                seed,
                miou: summary.miou,
                intra_gap: summary.intra_gap,
                run_dir,
            });
        }
    }
    write_json(&out.join("ablation_report.json"), &rows)?;

    println!("\nvariant          seed   mIoU     gap");
    let baseline: Option<f64> = rows
        .iter()
        .find(|r| r.variant == "baseline")
        .map(|r| r.miou);
    for r in &rows {
        let gain = baseline
            .map(|b| format!("  (+{:.1} pts)", (r.miou - b) * 100.0))
            .unwrap_or_default();
        let gap = r
            .intra_gap
            .map(|g| format!("{g:.4}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:<16} {:<6} {:.4}  {}{}",
            r.variant, r.seed, r.miou, gap, gain
        );
    }
    Ok(())
}
