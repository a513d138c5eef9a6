//! Trains one small checkpoint per training mode and evaluates every
//! pipeline variant on the same suite. Usage: `ablation_matrix [STEPS]`.
//! Rows only separate after a few thousand steps per mode.

use eta::harness::ablation::{run_ablation_matrix, training_modes, CheckpointSet};
use eta::harness::{collect_dataset, train, CollectOptions, EvalConfig, Split, SuiteSpec, TrainConfig};
use eta::models::ModelConfig;
use eta::world::{CameraModel, ExpertConfig, ScenarioKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let kinds = ScenarioKind::ALL.to_vec();
    let opts = CollectOptions {
        delta_ticks: 5,
        max_ticks: None,
        camera: CameraModel::default(),
        expert: ExpertConfig::default(),
        config_hash: String::new(),
        seed: 0,
    };
    let train_suite = SuiteSpec {
        kinds: kinds.clone(),
        episodes: 10,
        split: Split::Train,
    };
    let ds = collect_dataset(&train_suite.build(0), &opts)?;

    let model_cfg = ModelConfig {
        dim: 16,
        heads: 2,
        large_depth: 3,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        steps: Some(steps),
        batch_size: 16,
        lr: 1e-3,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut set = CheckpointSet::new();
    for mode in training_modes() {
        let t0 = std::time::Instant::now();
        let out = train(&ds.samples, mode, &model_cfg, &train_cfg)?;
        println!("trained {mode} in {:.1} s", t0.elapsed().as_secs_f64());
        set.insert(mode, vec![(0, out.model)]);
    }

    let eval_suite = SuiteSpec {
        kinds,
        episodes: 10,
        split: Split::Eval,
    };
    let table = run_ablation_matrix(&set, &eval_suite, &EvalConfig::default())?;
    print!("{}", table.render());
    Ok(())
}
