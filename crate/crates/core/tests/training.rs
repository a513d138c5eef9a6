//! Dataset, training and evaluation invariants that span several modules.

mod common;

use eta::harness::{
    load_checkpoint, make_batch, objective, run_expert_episode, run_model_episode, save_checkpoint, train, train_from,
    CheckpointMeta, EvalConfig, Sampling, Split, TrainConfig,
};
use eta::losses::LossWeights;
use eta::models::{patchify, Mode, ReactiveInputs, COND_DIM, FORECAST_COND_DIM};
use eta::scheduler::Pipeline;
use eta::tensor::{Graph, Tensor};
use eta::world::{action_to_mask, render_observation, ActionPlan, ExpertConfig, ScenarioKind};

fn bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[test]
fn dataset_frames_and_masks_rerender_from_the_expert_log() {
    let ds = common::collect(&[ScenarioKind::LaneChange, ScenarioKind::RedLight], 2, Split::Train, 4);
    let cam = ds.header.camera;
    for ep in &ds.header.episodes {
        let scenario = eta::world::make_scenario(ep.kind, ep.seed);
        let (_, log) = run_expert_episode(&ExpertConfig::default(), &scenario, &cam);
        let (states, _) = log.replay_states().unwrap();
        for s in ds.samples.iter().filter(|s| s.kind == ep.kind && s.seed == ep.seed) {
            assert_eq!(
                &*s.frame_now,
                render_observation(&states[s.tick], &cam).to_bytes().as_slice()
            );
            assert_eq!(
                &*s.frame_prev,
                render_observation(&states[s.tick - s.delta_ticks], &cam)
                    .to_bytes()
                    .as_slice()
            );
            let plan = ActionPlan::from_residual_slice(&log.ticks[s.tick].residuals).unwrap();
            assert_eq!(s.mask, action_to_mask(&plan, &cam), "tick {}", s.tick);
        }
    }
}

#[test]
fn every_parameter_receives_gradient_from_the_full_objective() {
    let ds = common::collect(&[ScenarioKind::HardBrake, ScenarioKind::GiveWay], 1, Split::Train, 9);
    let model = common::jittered(&common::tiny_config(), 9);
    let picked: Vec<_> = ds.samples.iter().step_by(ds.len() / 4).take(4).collect();
    let batch = make_batch(&picked).unwrap();
    let g = Graph::new();
    let obj = objective(&model, &g, &batch, Mode::Full, &LossWeights::default(), false).unwrap();
    let grads = g.backward(obj.total).unwrap().for_params(model.params.len());
    for id in model.params.ids() {
        let live = grads[id.index()]
            .as_ref()
            .is_some_and(|t| t.data().iter().any(|&v| v != 0.0));
        assert!(live, "{} gets no gradient", model.params.name(id));
    }
}

#[test]
fn batched_large_encoding_equals_one_frame_at_a_time() {
    let ds = common::collect(&[ScenarioKind::Merge], 1, Split::Train, 2);
    let model = common::jittered(&common::tiny_config(), 2);
    let frames: Vec<Tensor> = ds
        .samples
        .iter()
        .step_by(7)
        .take(5)
        .map(|s| patchify(&s.frame_now()).unwrap())
        .collect();
    let refs: Vec<&Tensor> = frames.iter().collect();
    let batched = model.encode_large_batch(&refs).unwrap();
    for (f, b) in frames.iter().zip(&batched) {
        let single = model.encode_large_batch(&[f]).unwrap().remove(0);
        assert!(bit_equal(single.data(), b.data()));
    }
}

#[test]
fn zero_forecast_weight_trains_like_a_detached_forecaster() {
    let ds = common::collect(&[ScenarioKind::HardBrake], 1, Split::Train, 3);
    let base = TrainConfig {
        steps: Some(50),
        batch_size: 4,
        lr: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let zero = TrainConfig {
        loss: LossWeights {
            lambda_forecast: 0.0,
            ..LossWeights::default()
        },
        ..base.clone()
    };
    let detached = TrainConfig {
        detach_forecast: true,
        ..base
    };
    let a = train(&ds.samples, Mode::Full, &common::tiny_config(), &zero).unwrap();
    let b = train(&ds.samples, Mode::Full, &common::tiny_config(), &detached).unwrap();
    for ((name, ta), (_, tb)) in a.model.params.iter().zip(b.model.params.iter()) {
        assert!(ta.max_abs_diff(tb) <= 1e-9, "{name}");
    }
}

#[test]
fn continuing_training_from_a_checkpoint_is_deterministic() {
    let ds = common::collect(&[ScenarioKind::RedLight], 1, Split::Train, 5);
    let cfg = TrainConfig {
        steps: Some(10),
        batch_size: 4,
        lr: 1e-3,
        seed: 5,
        sampling: Sampling::Shuffled,
        ..TrainConfig::default()
    };
    let start = common::jittered(&common::tiny_config(), 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("start.ckpt");
    let meta = CheckpointMeta {
        mode: Mode::NoForecast,
        model: start.cfg.clone(),
        config_hash: String::new(),
        seed: 5,
        steps: 0,
    };
    save_checkpoint(&path, &start, &meta).unwrap();
    let (reloaded, _) = load_checkpoint(&path).unwrap();
    let a = train_from(start, &ds.samples, Mode::NoForecast, &cfg).unwrap();
    let b = train_from(reloaded, &ds.samples, Mode::NoForecast, &cfg).unwrap();
    assert_eq!(a.records, b.records);
    for ((_, ta), (_, tb)) in a.model.params.iter().zip(b.model.params.iter()) {
        assert!(bit_equal(ta.data(), tb.data()));
    }
}

#[test]
fn reloaded_checkpoint_reacts_bit_identically() {
    let model = common::jittered(&common::tiny_config(), 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let meta = CheckpointMeta {
        mode: Mode::Full,
        model: model.cfg.clone(),
        config_hash: String::new(),
        seed: 6,
        steps: 0,
    };
    save_checkpoint(&path, &model, &meta).unwrap();
    let (back, _) = load_checkpoint(&path).unwrap();
    let ds = common::collect(&[ScenarioKind::GiveWay], 1, Split::Train, 6);
    let s = &ds.samples[ds.len() / 2];
    let now = patchify(&s.frame_now()).unwrap();
    let stale = model
        .encode_large_batch(&[&patchify(&s.frame_prev()).unwrap()])
        .unwrap()
        .remove(0);
    let fc = vec![0.1; FORECAST_COND_DIM];
    let cond = vec![0.2; COND_DIM];
    for mode in Mode::ALL {
        let x = ReactiveInputs {
            now: &now,
            stale_large: Some(&stale),
            forecast_cond: &fc,
            cond_now: &cond,
        };
        let (a, b) = (model.reactive(mode, x).unwrap(), back.reactive(mode, x).unwrap());
        assert!(bit_equal(&a.residuals, &b.residuals), "{mode}");
        assert_eq!(a.mask_logits, b.mask_logits);
    }
}

#[test]
fn threaded_runtime_drives_the_same_episode() {
    let model = common::jittered(&common::tiny_config(), 7);
    let scenario = eta::world::make_scenario(ScenarioKind::GiveWay, 7);
    let sim_cfg = EvalConfig::default();
    let thr_cfg = EvalConfig {
        threaded: true,
        ..EvalConfig::default()
    };
    for mode in [Mode::Full, Mode::NoSmall, Mode::Base] {
        let p = Pipeline::new(&sim_cfg.costs, &sim_cfg.pipeline, mode).unwrap();
        let a = run_model_episode(&model, &p, &scenario, &sim_cfg).unwrap();
        let b = run_model_episode(&model, &p, &scenario, &thr_cfg).unwrap();
        assert_eq!(a.pipeline.actions, b.pipeline.actions, "{mode}");
        assert_eq!(a.log.ticks, b.log.ticks);
        assert!(b.pipeline.wall.is_some());
    }
}

#[test]
fn model_episode_logs_replay_to_the_same_outcome() {
    let model = common::jittered(&common::tiny_config(), 8);
    let cfg = EvalConfig::default();
    let p = Pipeline::new(&cfg.costs, &cfg.pipeline, Mode::Full).unwrap();
    let scenario = eta::world::make_scenario(ScenarioKind::HardBrake, 8);
    let run = run_model_episode(&model, &p, &scenario, &cfg).unwrap();
    let mut text = Vec::new();
    run.log.write_to(&mut text).unwrap();
    let back = eta::world::EpisodeLog::read_from(text.as_slice()).unwrap();
    let (_, outcome) = back.replay_states().unwrap();
    assert_eq!(outcome.collision, run.result.collision);
    assert_eq!(outcome.collision_tick, run.result.collision_tick);
}
