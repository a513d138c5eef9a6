//! Acceptance criteria, one pass/fail line each.
//!
//! Runs as a plain binary (`harness = false`) so the lines print in order.
//! Positional arguments filter criteria by name, e.g.
//! `cargo test --test acceptance -- AC-3 AC-5`.

mod common;

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use eta::harness::ablation::row_label;
use eta::harness::train::evaluate_loss;
use eta::harness::{
    evaluate_closed_loop, load_checkpoint, make_batch, objective, run_model_episode, save_checkpoint, train,
    BucketWeights, CheckpointMeta, EvalConfig, ModelBackend, Policy, Sample, Sampling, Split, SuiteSpec, TrainConfig,
    WeightedSampler, WorldEnv,
};
use eta::losses::{action_loss, forecast_loss, mask_loss, mask_term, total_async, LossWeights};
use eta::models::{cond_features, Batch, BatchVars, EtaModel, Mode, ReactiveOutput, POOLED_TOKENS, TOKENS};
use eta::scheduler::{
    plan_mode, plan_schedule, run_sequential, Backend, CostModel, Environment, Event, Pipeline, PipelineConfig, Stale,
    SyntheticBackend, SyntheticEnv, TickInput,
};
use eta::tensor::gradcheck::GradCheckOptions;
use eta::tensor::{grad_check, Graph, Tensor};
use eta::world::{
    action_to_mask, make_scenario, ActionPlan, CameraModel, Conditioning, PatchMask, Residuals, ScenarioKind,
    ACTION_POINTS, PATCH, PATH_POINTS,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 9] = [
        ("AC-1", "gradient suite", ac1_gradients),
        ("AC-2", "stop-gradient on the forecast target", ac2_stop_gradient),
        ("AC-3", "scheduling invariants", ac3_scheduling),
        ("AC-4", "pipeline matches the sequential oracle", ac4_decoupling),
        ("AC-5", "mask oracle and token pooling", ac5_mask_oracle),
        ("AC-6", "information ablation on hard_brake", ac6_information_ablation),
        ("AC-7", "ablation ordering", ac7_ablation_ordering),
        ("AC-8", "training mechanics", ac8_training_mechanics),
        ("AC-9", "residual codec", ac9_residual_codec),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id} PASS  {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id} FAIL  {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn pick_batch<'a>(samples: &'a [Sample], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Sample> {
    (0..n).map(|_| &samples[rng.gen_range(0..samples.len())]).collect()
}

fn random_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// The async objective with the forecast target held at a fixed value. This
/// is the function whose derivative the stop-gradient defines.
fn frozen_target_objective(model: &EtaModel, batch: &Batch, target: &Tensor) -> f64 {
    let g = Graph::new();
    let out = model
        .forward_with_target(
            &g,
            batch.constants(&g),
            Mode::Full,
            Some(g.constant(target.clone()).stop_grad()),
        )
        .unwrap();
    let action = action_loss(out.residuals, g.constant(batch.target.clone())).unwrap();
    let mask = mask_term(&g, out.mask.unwrap(), &batch.mask).unwrap();
    let (pred, gt) = out.forecast.unwrap();
    let forecast = forecast_loss(gt, pred).unwrap();
    total_async(action, Some(mask), Some(forecast), &LossWeights::default())
        .unwrap()
        .scalar()
}

fn current_large_features(model: &EtaModel, batch: &Batch) -> Tensor {
    let g = Graph::new();
    model
        .large
        .forward(&g, &model.params, g.constant(batch.now.clone()))
        .unwrap()
        .pooled
        .value()
}

fn ac1_gradients() -> Outcome {
    const TOL: f64 = 1e-4;
    let opts = GradCheckOptions::default();
    let data = common::collect(&ScenarioKind::ALL, 5, Split::Train, 11);
    let mut worst = [0.0f64; 4];
    let mut coords = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 3;

        let pred = random_tensor(&[n * ACTION_POINTS, 2], 2.0, &mut rng);
        let expert = random_tensor(&[n * ACTION_POINTS, 2], 2.0, &mut rng);
        let r = grad_check(|g, v| action_loss(v[0], g.constant(expert.clone())), &[pred], &opts).unwrap();
        worst[0] = worst[0].max(r.max_rel_err());
        coords += r.coords_checked;

        let logits = random_tensor(&[n, TOKENS], 4.0, &mut rng);
        let target = Tensor::new(
            vec![n, TOKENS],
            (0..n * TOKENS).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect(),
        )
        .unwrap();
        let r = grad_check(|g, v| mask_loss(g, v[0], &target), &[logits], &opts).unwrap();
        worst[1] = worst[1].max(r.max_rel_err());
        coords += r.coords_checked;

        let pred = random_tensor(&[n * POOLED_TOKENS, 8], 1.0, &mut rng);
        let gt = random_tensor(&[n * POOLED_TOKENS, 8], 1.0, &mut rng);
        let r = grad_check(
            |g, v| forecast_loss(g.constant(gt.clone()).stop_grad(), v[0]),
            &[pred],
            &opts,
        )
        .unwrap();
        worst[2] = worst[2].max(r.max_rel_err());
        coords += r.coords_checked;

        // Full objective against parameters, through every network.
        let model = common::jittered(&common::tiny_config(), seed);
        let batch = make_batch(&pick_batch(&data.samples, 2, &mut rng)).unwrap();
        let g = Graph::new();
        let obj = objective(&model, &g, &batch, Mode::Full, &LossWeights::default(), false).unwrap();
        let analytic = g.backward(obj.total).unwrap().for_params(model.params.len());
        let target = current_large_features(&model, &batch);
        // A deep objective sums enough terms that at h = 1e-6 rounding error
        // reaches the relative-error floor; much larger steps straddle the
        // kinks of the L1 terms.
        let h = 1e-5;
        let mut probe = model.clone();
        for id in model.params.ids() {
            let numel = model.params.get(id).numel();
            for _ in 0..2 {
                let c = rng.gen_range(0..numel);
                let orig = model.params.get(id).data()[c];
                let mut at = |dx: f64| {
                    probe.params.get_mut(id).data_mut()[c] = orig + dx;
                    frozen_target_objective(&probe, &batch, &target)
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                probe.params.get_mut(id).data_mut()[c] = orig;
                let a = analytic[id.index()].as_ref().map_or(0.0, |t| t.data()[c]);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
                if rel >= TOL {
                    return Err(format!(
                        "objective seed {seed}: {}[{c}] analytic {a:e} numeric {numeric:e} rel {rel:e}",
                        model.params.name(id)
                    ));
                }
                worst[3] = worst[3].max(rel);
                coords += 1;
            }
        }
    }
    ensure!(
        worst.iter().all(|&w| w < TOL),
        "worst relative errors {worst:?} exceed {TOL:e}"
    );
    Ok(format!(
        "5 minibatches, {coords} coordinates; worst rel err action {:.1e}, mask {:.1e}, forecast {:.1e}, objective {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn ac2_stop_gradient() -> Outcome {
    let data = common::collect(&[ScenarioKind::HardBrake, ScenarioKind::Merge], 2, Split::Train, 12);
    let mut checked = 0;
    for seed in 0..3u64 {
        let model = common::jittered(&common::tiny_config(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = make_batch(&pick_batch(&data.samples, 3, &mut rng)).unwrap();

        let g = Graph::new();
        let now = g.variable(batch.now.clone());
        let x = BatchVars {
            now,
            ..batch.constants(&g)
        };
        let out = model.forward(&g, x, Mode::Full, true).unwrap();
        let (pred, gt) = out.forecast.unwrap();
        let loss = forecast_loss(gt, pred).unwrap();
        let grads = g.backward(loss).unwrap();
        if let Some(d) = grads.wrt(now) {
            ensure!(
                d.data().iter().all(|&v| v == 0.0),
                "forecast loss reaches the current frame through the target"
            );
        }
        let through_branch = grads.for_params(model.params.len());

        // Same loss with the target supplied as an opaque constant.
        let g2 = Graph::new();
        let target = g2.constant(current_large_features(&model, &batch)).stop_grad();
        let out2 = model
            .forward_with_target(&g2, batch.constants(&g2), Mode::Full, Some(target))
            .unwrap();
        let (pred2, gt2) = out2.forecast.unwrap();
        let loss2 = forecast_loss(gt2, pred2).unwrap();
        ensure!(loss.scalar() == loss2.scalar(), "target values differ");
        let reference = g2.backward(loss2).unwrap().for_params(model.params.len());

        for id in model.params.ids() {
            let name = model.params.name(id);
            let (a, b) = (&through_branch[id.index()], &reference[id.index()]);
            let same = match (a, b) {
                (None, None) => true,
                (Some(a), Some(b)) => a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
                (Some(t), None) | (None, Some(t)) => t.data().iter().all(|&v| v == 0.0),
            };
            ensure!(same, "seed {seed}: gradient of {name} carries target-branch terms");
            if name.starts_with("small.") || name.starts_with("action.") {
                ensure!(
                    a.as_ref().is_none_or(|t| t.data().iter().all(|&v| v == 0.0)),
                    "seed {seed}: forecast loss reaches {name}"
                );
            }
            checked += 1;
        }
    }
    Ok(format!(
        "3 models, {checked} parameter gradients bit-identical to the detached-target reference; current frame gets none"
    ))
}

fn ac3_scheduling() -> Outcome {
    const TICKS: usize = 10_000;
    let costs = CostModel::default();
    let cfg = PipelineConfig::default();
    ensure!(
        cfg.tick_ms == 50.0 && cfg.delta_ms == 500.0,
        "default schedule is not T=50, Δ=500"
    );
    let plan = plan_schedule(&costs, &cfg).map_err(|e| e.to_string())?;
    ensure!(plan.batch == 2, "planned batch {}", plan.batch);
    let forced = PipelineConfig {
        batch: Some(plan.batch - 1),
        ..cfg.clone()
    };
    ensure!(plan_schedule(&costs, &forced).is_err(), "B-1 = 1 was accepted");

    let p = Pipeline::new(&costs, &cfg, Mode::Full).map_err(|e| e.to_string())?;
    let run = p
        .run(&mut SyntheticEnv::new(TICKS as u64), &SyntheticBackend, TICKS)
        .unwrap();
    ensure!(run.ticks == TICKS, "ran {} ticks", run.ticks);
    ensure!(
        run.trace.miss_count() == 0,
        "{} deadline misses",
        run.trace.miss_count()
    );
    run.trace.check_staleness(cfg.delta_ms, cfg.delta_ticks())?;
    run.trace.check_conservation(TICKS)?;
    let d = cfg.delta_ticks();
    let fuses: Vec<f64> = run
        .trace
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Fuse {
                staleness_ms,
                warmup: false,
                ..
            } => Some(*staleness_ms),
            _ => None,
        })
        .collect();
    ensure!(fuses.len() == TICKS - d, "{} steady-state fuses", fuses.len());
    ensure!(
        fuses.iter().all(|&s| s == cfg.delta_ms),
        "a fuse was not exactly Δ stale"
    );

    ensure!(
        plan_mode(&costs, &cfg, Mode::Base).is_err(),
        "base mode planned at T=50"
    );
    let base = Pipeline::new(&costs, &cfg, Mode::Base).map_err(|e| e.to_string())?;
    let run = base
        .run(&mut SyntheticEnv::new(TICKS as u64), &SyntheticBackend, TICKS)
        .unwrap();
    let missed = run.trace.missed_ticks();
    ensure!(
        missed.len() == TICKS && missed.iter().enumerate().all(|(i, &k)| i == k),
        "base mode missed {} of {TICKS} ticks",
        missed.len()
    );
    Ok(format!(
        "B=2 (B=1 infeasible), 0 misses over {TICKS} ticks, {} fuses at exactly {} ms, frames conserved; base ({} ms) misses all {TICKS}",
        fuses.len(),
        cfg.delta_ms,
        costs.reactive(Mode::Base)
    ))
}

fn ac4_decoupling() -> Outcome {
    let model = common::jittered(&common::experiment_config(), 4);
    let costs = CostModel::default();
    let cfg = PipelineConfig::default();
    let p = Pipeline::new(&costs, &cfg, Mode::Full).map_err(|e| e.to_string())?;
    let backend = ModelBackend { model: &model };
    let mut lens = Vec::new();
    for (kind, seed) in [
        (ScenarioKind::HardBrake, 1),
        (ScenarioKind::LaneChange, 3),
        (ScenarioKind::Merge, 5),
    ] {
        let scenario = make_scenario(kind, seed);
        let mut env = WorldEnv::new(scenario.clone(), CameraModel::default());
        let run = p.run(&mut env, &backend, scenario.max_ticks).unwrap();
        ensure!(env.episode.done(), "{kind} did not run to the end");
        let mut env = WorldEnv::new(scenario.clone(), CameraModel::default());
        let oracle = run_sequential(&mut env, &backend, &cfg, Mode::Full, scenario.max_ticks).unwrap();
        ensure!(
            run.actions.len() == oracle.len(),
            "{kind}: {} vs {} ticks",
            run.actions.len(),
            oracle.len()
        );
        for (k, (a, b)) in run.actions.iter().zip(&oracle).enumerate() {
            let same = a
                .residuals
                .iter()
                .zip(&b.residuals)
                .all(|(x, y)| x.to_bits() == y.to_bits());
            ensure!(same, "{kind}: action differs at tick {k}");
        }
        ensure!(
            run.actions.iter().any(|a| a.residuals.iter().any(|&v| v != 0.0)),
            "{kind}: actions are trivial"
        );
        lens.push(format!("{kind} {}", oracle.len()));
    }
    Ok(format!(
        "bit-identical actions at B=2, Δ=10 ticks over 3 episodes ({})",
        lens.join(", ")
    ))
}

/// Rasterizes each visible point into its pixel, then ORs pixels per patch.
fn pixel_oracle(plan: &ActionPlan, cam: &CameraModel) -> PatchMask {
    let (w, h) = (cam.width, cam.height);
    let mut pixels = vec![false; w * h];
    for p in plan.path.iter().chain(&plan.waypoints) {
        let (x, y) = (p[0], p[1]);
        if x < cam.x_min {
            continue;
        }
        let u = cam.c_u - cam.f_u * y / x;
        let v = cam.c_v + cam.f_v * cam.h_cam / x;
        if u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64 {
            pixels[v.floor() as usize * w + u.floor() as usize] = true;
        }
    }
    let (rows, cols) = (h / PATCH, w / PATCH);
    let cells = (0..rows * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            (0..PATCH).any(|dy| (0..PATCH).any(|dx| pixels[(r * PATCH + dy) * w + c * PATCH + dx]))
        })
        .collect();
    PatchMask::from_cells(rows, cols, cells).unwrap()
}

fn ac5_mask_oracle() -> Outcome {
    let cam = CameraModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut set = 0;
    for i in 0..1000 {
        let mut plan = ActionPlan::stationary();
        for p in plan.path.iter_mut().chain(plan.waypoints.iter_mut()) {
            *p = [rng.gen_range(-2.0..30.0), rng.gen_range(-12.0..12.0)];
        }
        let got = action_to_mask(&plan, &cam);
        ensure!(got == pixel_oracle(&plan, &cam), "plan {i} differs from the oracle");
        set += got.count();
    }
    ensure!(set > 0, "no plan produced a visible point");
    let model = EtaModel::new(&common::tiny_config(), 0).unwrap();
    let (pre, pooled) = model
        .encode_large(&Tensor::zeros(&[TOKENS, eta::models::encoder::PATCH_FEATURES]))
        .unwrap();
    ensure!(
        pre.len() == 4 * pooled.len() && TOKENS == 4 * POOLED_TOKENS,
        "pooling maps {} tokens to {}",
        pre.len(),
        pooled.len()
    );
    Ok(format!(
        "1000 plans equal the pixel oracle ({set} patches set); pooling {} -> {} tokens",
        pre.len(),
        pooled.len()
    ))
}

/// Inputs the reactive path saw at one tick, as bit patterns: the stale
/// frame id, its conditioning and features, the action emitted at that
/// frame, and the current conditioning.
type SeenInputs = (usize, Option<(usize, Vec<u64>, Option<Vec<u64>>)>, Vec<u64>);

/// Records the inputs of every reactive call, then defers to the model.
struct Recording<'m> {
    inner: ModelBackend<'m>,
    log: RefCell<Vec<SeenInputs>>,
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|v| v.to_bits()).collect()
}

impl<'m> Backend for Recording<'m> {
    type Frame = Arc<Tensor>;
    type Cond = Conditioning;
    type Features = Tensor;
    type Action = ReactiveOutput;

    fn encode_large(&self, frames: &[&Arc<Tensor>]) -> eta::Result<Vec<Tensor>> {
        self.inner.encode_large(frames)
    }

    fn react(&self, mode: Mode, x: TickInput<'_, Self>) -> eta::Result<ReactiveOutput> {
        let stale = x.stale.as_ref().map(|s| {
            let mut seen = bits(&cond_features(s.cond));
            seen.extend(bits(s.features.data()));
            (s.frame, seen, s.action.map(|a| bits(&a.residuals)))
        });
        self.log
            .borrow_mut()
            .push((x.tick, stale, bits(&cond_features(x.cond))));
        let input = TickInput::<ModelBackend<'m>> {
            tick: x.tick,
            frame: x.frame,
            cond: x.cond,
            stale: x.stale.map(|s| Stale {
                frame: s.frame,
                features: s.features,
                action: s.action,
                cond: s.cond,
            }),
        };
        self.inner.react(mode, input)
    }
}

struct RecordingEnv(WorldEnv);

impl<'m> Environment<Recording<'m>> for RecordingEnv {
    fn observe(&mut self) -> eta::Result<(Arc<Tensor>, Conditioning)> {
        <WorldEnv as Environment<ModelBackend<'m>>>::observe(&mut self.0)
    }

    fn apply(&mut self, action: &ReactiveOutput) -> eta::Result<bool> {
        <WorldEnv as Environment<ModelBackend<'m>>>::apply(&mut self.0, action)
    }
}

fn ac6_information_ablation() -> Outcome {
    let data = common::collect(&[ScenarioKind::HardBrake], 10, Split::Train, 0);
    let mc = common::experiment_config();
    let cfg = TrainConfig {
        steps: Some(2000),
        batch_size: 16,
        lr: 1e-3,
        seed: 0,
        ..TrainConfig::default()
    };
    let eval = EvalConfig::default();
    let d = eval.pipeline.delta_ticks();
    let suite = SuiteSpec {
        kinds: vec![ScenarioKind::HardBrake],
        episodes: 5,
        split: Split::Eval,
    }
    .build(0);

    let full = train(&data.samples, Mode::Full, &mc, &cfg).map_err(|e| e.to_string())?;
    let initial = full.records[0].loss.total;
    let last = evaluate_loss(&full.model, &data.samples, Mode::Full, &LossWeights::default())
        .map_err(|e| e.to_string())?
        .total;
    ensure!(
        last < 0.1 * initial,
        "full model loss {last:.4} is not below 10% of {initial:.4}"
    );
    let p_full = Pipeline::new(&eval.costs, &eval.pipeline, Mode::Full).map_err(|e| e.to_string())?;
    let mut braked = 0;
    for s in &suite {
        braked += run_model_episode(&full.model, &p_full, s, &eval)
            .map_err(|e| e.to_string())?
            .result
            .success as usize;
    }

    let blind = train(&data.samples, Mode::NoSmall, &mc, &cfg).map_err(|e| e.to_string())?;
    let p_blind = Pipeline::new(&eval.costs, &eval.pipeline, Mode::NoSmall).map_err(|e| e.to_string())?;
    let mut collided = 0;
    let mut identical_ticks = 0;
    for s in &suite {
        let trigger = s.hazard_tick.expect("hard_brake has a trigger");
        // Ticks before trigger + Δ decide from frames older than the trigger.
        let window = trigger + d;
        let mut logs = Vec::new();
        for scenario in [s.clone(), s.without_hazards()] {
            let rec = Recording {
                inner: ModelBackend { model: &blind.model },
                log: Default::default(),
            };
            let mut env = RecordingEnv(WorldEnv::new(scenario, eval.camera));
            let run = p_blind.run(&mut env, &rec, window).map_err(|e| e.to_string())?;
            logs.push((rec.log.into_inner(), run.actions));
        }
        let ((inputs_a, acts_a), (inputs_b, acts_b)) = (&logs[0], &logs[1]);
        ensure!(
            inputs_a.len() == window,
            "seed {}: episode ended before the decision window",
            s.seed
        );
        for k in 0..window {
            ensure!(inputs_a[k] == inputs_b[k], "seed {}: inputs differ at tick {k}", s.seed);
            ensure!(acts_a[k] == acts_b[k], "seed {}: actions differ at tick {k}", s.seed);
        }
        identical_ticks += window;
        let r = run_model_episode(&blind.model, &p_blind, s, &eval).map_err(|e| e.to_string())?;
        collided += r.result.collision as usize;
    }
    ensure!(
        collided == suite.len(),
        "no_small collided in {collided} of {}",
        suite.len()
    );
    ensure!(braked >= 4, "full mode braked safely in {braked} of {}", suite.len());
    Ok(format!(
        "no_small inputs bit-identical to the no-brake episode on {identical_ticks} decision ticks, collides {collided}/5; full (loss {:.1}% of initial) brakes {braked}/5",
        100.0 * last / initial
    ))
}

/// Steps per training run. Chosen so one run takes about three minutes on a
/// single core; fewer steps leave whole scenario kinds unlearned.
const AC7_STEPS: usize = 6000;
const AC7_SEEDS: [u64; 3] = [0, 1, 2];

fn ac7_ablation_ordering() -> Outcome {
    let mc = common::experiment_config();
    let eval = EvalConfig::default();
    let suite = SuiteSpec {
        kinds: ScenarioKind::ALL.to_vec(),
        episodes: 50,
        split: Split::Eval,
    };
    let modes = [Mode::Full, Mode::NoForecast, Mode::NoMask, Mode::GtForecast];
    let mut models: Vec<Vec<(u64, EtaModel)>> = vec![Vec::new(); modes.len()];
    for seed in AC7_SEEDS {
        let data = common::collect(&ScenarioKind::ALL, 50, Split::Train, seed);
        for (i, &mode) in modes.iter().enumerate() {
            let cfg = TrainConfig {
                steps: Some(AC7_STEPS),
                batch_size: 16,
                lr: 1e-3,
                seed,
                ..TrainConfig::default()
            };
            let out = train(&data.samples, mode, &mc, &cfg).map_err(|e| e.to_string())?;
            models[i].push((seed, out.model));
        }
    }
    let mut sr = Vec::new();
    for (i, &mode) in modes.iter().enumerate() {
        let runs: Vec<(u64, Policy<'_>)> = models[i].iter().map(|(s, m)| (*s, Policy::Model(m))).collect();
        let report = evaluate_closed_loop(&runs, mode, &suite, &eval).map_err(|e| e.to_string())?;
        sr.push(report.success_rate);
    }
    let table = modes
        .iter()
        .zip(&sr)
        .map(|(m, s)| format!("{} {m} {s}", row_label(*m)))
        .collect::<Vec<_>>()
        .join("; ");
    let (full, no_forecast, no_mask, gt) = (sr[0].mean, sr[1].mean, sr[2].mean, sr[3].mean);
    ensure!(
        full > no_forecast,
        "SR full {full:.2} <= no_forecast {no_forecast:.2} ({table})"
    );
    ensure!(full > no_mask, "SR full {full:.2} <= no_mask {no_mask:.2} ({table})");
    ensure!(
        gt >= full - 5.0,
        "SR gt_forecast {gt:.2} < full {full:.2} - 5 ({table})"
    );
    Ok(table)
}

fn ac8_training_mechanics() -> Outcome {
    let sched = TrainConfig::default().schedule(4000);
    let curve = sched.curve();
    let restarts = curve.windows(2).filter(|w| w[1] > w[0]).count();
    ensure!(curve[0] == 3e-5, "schedule starts at {}", curve[0]);
    ensure!(restarts == 4, "{restarts} restarts");

    let data = common::collect(&ScenarioKind::ALL, 10, Split::Train, 8);
    let weights = BucketWeights::default();
    let mut sampler = WeightedSampler::new(&data.samples, &weights, 8).map_err(|e| e.to_string())?;
    let k = sampler.buckets.len();
    let expected: Vec<f64> = sampler.buckets.iter().map(|(b, _)| weights.get(*b)).collect();
    let total: f64 = expected.iter().sum();
    let draws = 200_000;
    let mut counts = vec![0usize; k];
    for _ in 0..draws {
        counts[sampler.draw().0] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&expected)
        .map(|(&o, &w)| {
            let e = draws as f64 * w / total;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(chi2);
    ensure!(p > 0.01, "χ² = {chi2:.2} over {k} buckets, p = {p:.4}");

    let model = common::jittered(&common::tiny_config(), 8);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("m.ckpt");
    let meta = CheckpointMeta {
        mode: Mode::Full,
        model: model.cfg.clone(),
        config_hash: "abc".into(),
        seed: 8,
        steps: 0,
    };
    save_checkpoint(&path, &model, &meta).map_err(|e| e.to_string())?;
    let (back, meta_back) = load_checkpoint(&path).map_err(|e| e.to_string())?;
    ensure!(meta_back == meta, "metadata changed");
    for ((na, ta), (nb, tb)) in model.params.iter().zip(back.params.iter()) {
        ensure!(na == nb && ta.shape() == tb.shape(), "parameter {na} changed identity");
        ensure!(
            ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "parameter {na} changed value"
        );
    }

    let picked: Vec<Sample> = data.samples.iter().step_by(data.len() / 32).take(32).cloned().collect();
    let cfg = TrainConfig {
        steps: Some(2000),
        batch_size: 32,
        lr: 1e-3,
        seed: 8,
        sampling: Sampling::Shuffled,
        ..TrainConfig::default()
    };
    let out = train(&picked, Mode::Full, &common::experiment_config(), &cfg).map_err(|e| e.to_string())?;
    let initial = out.records[0].loss.total;
    let last = evaluate_loss(&out.model, &picked, Mode::Full, &LossWeights::default())
        .map_err(|e| e.to_string())?
        .total;
    ensure!(
        last < 0.1 * initial,
        "overfit gate: loss {last:.4} vs initial {initial:.4}"
    );
    Ok(format!(
        "lr0 3e-5 with 4 restarts; χ² {chi2:.2} on {} dof, p = {p:.3}; checkpoint bit-exact; 32-sample loss {initial:.4} -> {last:.4} ({:.1}%)",
        k - 1,
        100.0 * last / initial
    ))
}

fn ac9_residual_codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let mut plan = ActionPlan::stationary();
        for p in plan.path.iter_mut().chain(plan.waypoints.iter_mut()) {
            *p = [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)];
        }
        let back = ActionPlan::from_residuals(&plan.residuals()).unwrap();
        let mut res: Residuals = [[0.0; 2]; ACTION_POINTS];
        for r in res.iter_mut() {
            *r = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        }
        let res_back = ActionPlan::from_residuals(&res).unwrap().residuals();
        let err = plan
            .points()
            .zip(back.points())
            .chain(res.iter().copied().zip(res_back.iter().copied()))
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max);
        ensure!(err <= 1e-9, "plan {i}: round-trip error {err:e}");
        worst = worst.max(err);
    }
    ensure!(PATH_POINTS + 4 == ACTION_POINTS, "unexpected point count");
    Ok(format!(
        "10000 plans and residual sets round-trip, worst error {worst:.1e}"
    ))
}
