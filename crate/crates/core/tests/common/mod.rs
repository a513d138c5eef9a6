//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use eta::harness::{collect_dataset, CollectOptions, Dataset, Split, SuiteSpec};
use eta::models::{EtaModel, ModelConfig};
use eta::world::{CameraModel, ExpertConfig, ScenarioKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Small enough for gradient checks and many forward passes.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        heads: 2,
        large_depth: 3,
        decoder_depth: 1,
        forecast_depth: 1,
        ..ModelConfig::default()
    }
}

/// The configuration the closed-loop experiments train.
pub fn experiment_config() -> ModelConfig {
    ModelConfig {
        dim: 16,
        heads: 2,
        large_depth: 3,
        ..ModelConfig::default()
    }
}

/// Adds seeded Gaussian noise to every parameter, so zero-initialised heads
/// produce non-trivial outputs.
pub fn jitter(model: &mut EtaModel, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.get_mut(id).data_mut() {
            *v += noise.sample(&mut rng);
        }
    }
}

pub fn jittered(cfg: &ModelConfig, seed: u64) -> EtaModel {
    let mut m = EtaModel::new(cfg, seed).unwrap();
    jitter(&mut m, seed ^ 0xfeed, 0.05);
    m
}

pub fn collect(kinds: &[ScenarioKind], episodes: usize, split: Split, seed: u64) -> Dataset {
    let suite = SuiteSpec {
        kinds: kinds.to_vec(),
        episodes,
        split,
    };
    let opts = CollectOptions {
        delta_ticks: 5,
        max_ticks: None,
        camera: CameraModel::default(),
        expert: ExpertConfig::default(),
        config_hash: String::new(),
        seed,
    };
    collect_dataset(&suite.build(seed), &opts).unwrap()
}
