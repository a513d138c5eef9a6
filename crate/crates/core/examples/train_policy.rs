//! Trains the full dual-rate model on hard-brake episodes, prints the loss
//! curve and saves a checkpoint. Usage: `train_policy [STEPS] [OUT]`.

use eta::harness::{
    collect_dataset, save_checkpoint, train, CheckpointMeta, CollectOptions, Split, SuiteSpec, TrainConfig,
};
use eta::models::{Mode, ModelConfig};
use eta::world::{CameraModel, ExpertConfig, ScenarioKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let out = args.next().unwrap_or_else(|| "full_seed0.ckpt".into());

    let suite = SuiteSpec {
        kinds: vec![ScenarioKind::HardBrake],
        episodes: 8,
        split: Split::Train,
    };
    let opts = CollectOptions {
        delta_ticks: 5,
        max_ticks: None,
        camera: CameraModel::default(),
        expert: ExpertConfig::default(),
        config_hash: String::new(),
        seed: 0,
    };
    let ds = collect_dataset(&suite.build(0), &opts)?;

    let model_cfg = ModelConfig {
        dim: 16,
        heads: 2,
        large_depth: 3,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        steps: Some(steps),
        batch_size: 16,
        lr: 1e-3,
        seed: 0,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let outcome = train(&ds.samples, Mode::Full, &model_cfg, &cfg)?;
    println!(
        "{} samples, {steps} steps in {:.1} s",
        ds.len(),
        t0.elapsed().as_secs_f64()
    );
    let term = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    for r in outcome.records.iter().step_by((steps / 10).max(1)) {
        println!(
            "step {:>5}  lr {:.2e}  total {:.4}  action {:.4}  mask {}  forecast {}",
            r.step,
            r.lr,
            r.loss.total,
            r.loss.action,
            term(r.loss.mask),
            term(r.loss.forecast)
        );
    }
    let meta = CheckpointMeta {
        mode: Mode::Full,
        model: model_cfg,
        config_hash: String::new(),
        seed: 0,
        steps,
    };
    save_checkpoint(&out, &outcome.model, &meta)?;
    println!("saved {out}");
    Ok(())
}
