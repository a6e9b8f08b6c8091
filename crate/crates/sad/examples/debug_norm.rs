// scratch diagnostic: watch running-norm variance and task loss during training
use sad::synthdata::io::LoadedSplit;
use sad::trainer::{Trainer, TrainerConfig};

fn main() {
    let data = std::env::args().nth(1).unwrap_or("/root/scratch/abl300/data".into());
    let source = LoadedSplit::load(std::path::Path::new(&format!("{data}/source"))).unwrap();
    let target = LoadedSplit::load(std::path::Path::new(&format!("{data}/target"))).unwrap();
    let cfg = TrainerConfig {
        steps: 400,
        batch_size: 6,
        use_sar: false,
        use_dc: true,
        ..TrainerConfig::default()
    };
    let mut t = Trainer::<f32>::new(cfg.clone(), 6).unwrap();
    for step in 0..cfg.steps {
        let src_ids = t.draw_indices(source.len(), cfg.batch_size);
        let tgt_ids = t.draw_indices(target.len(), cfg.batch_size);
        let src: Vec<_> = src_ids.iter().map(|&i| source.samples[i].to_scene()).collect();
        let tgt: Vec<_> = tgt_ids.iter().map(|&i| target.samples[i].to_scene()).collect();
        let out = t.train_step(&src, &src_ids, &tgt, &tgt_ids).unwrap();
        if step % 25 == 0 || step == cfg.steps - 1 {
            let vars: Vec<(f32, f32)> = t
                .model
                .encoder_inv
                .blocks
                .iter()
                .map(|b| {
                    let mn = b.norm.var.iter().cloned().fold(f32::INFINITY, f32::min);
                    let mx = b.norm.var.iter().cloned().fold(0.0f32, f32::max);
                    (mn, mx)
                })
                .collect();
            let wmax: f32 = t
                .model
                .taskhead
                .conv
                .w
                .iter()
                .cloned()
                .fold(0.0f32, |a, v| a.max(v.abs()));
            println!(
                "step {:4} task {:.4} adv {:.4} var[min,max] {:?} head|w|max {:.3}",
                out.step, out.bundle.task, out.bundle.adv, vars, wmax
            );
        }
    }
}
