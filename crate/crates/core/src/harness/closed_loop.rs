//! Closed-loop evaluation: a trained model driven through the dual-rate
//! pipeline in the world, episode by episode.
//!
//! The simulator is paused while the networks run, so an overrun tick costs
//! time but not control. Success needs the route completed with no
//! collision, no red-light violation and no tick missing its features.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{cond_features, forecast_features, patchify, EtaModel, Mode, ReactiveOutput, FORECAST_COND_DIM};
use crate::scheduler::{Backend, CostModel, Environment, MissKind, Pipeline, PipelineConfig, PipelineRun, TickInput};
use crate::tensor::Tensor;
use crate::world::{
    make_scenario, run_expert, ActionPlan, CameraModel, Conditioning, Episode, EpisodeLog, EpisodeOutcome,
    ExpertConfig, LogHeader, Scenario, ScenarioKind, TickRecord,
};

/// The networks behind the pipeline's [`Backend`] interface.
pub struct ModelBackend<'m> {
    pub model: &'m EtaModel,
}

impl Backend for ModelBackend<'_> {
    type Frame = Arc<Tensor>;
    type Cond = Conditioning;
    type Features = Tensor;
    type Action = ReactiveOutput;

    fn encode_large(&self, frames: &[&Arc<Tensor>]) -> Result<Vec<Tensor>> {
        let refs: Vec<&Tensor> = frames.iter().map(|f| f.as_ref()).collect();
        Ok(self.model.encode_large_batch(&refs)?)
    }

    fn react(&self, mode: Mode, x: TickInput<'_, Self>) -> Result<ReactiveOutput> {
        let forecast_cond = match &x.stale {
            Some(s) => {
                let plan = match s.action {
                    Some(a) => a.plan()?,
                    None => ActionPlan::stationary(),
                };
                forecast_features(&plan, s.cond)
            }
            None => vec![0.0; FORECAST_COND_DIM],
        };
        let out = self.model.reactive(
            mode,
            crate::models::ReactiveInputs {
                now: x.frame,
                stale_large: x.stale.as_ref().map(|s| s.features),
                forecast_cond: &forecast_cond,
                cond_now: &cond_features(x.cond),
            },
        )?;
        Ok(out)
    }
}

/// An [`Episode`] seen through the pipeline's [`Environment`] interface.
pub struct WorldEnv {
    pub episode: Episode,
    pub records: Vec<TickRecord>,
}

impl WorldEnv {
    pub fn new(scenario: Scenario, cam: CameraModel) -> Self {
        Self {
            episode: Episode::new(scenario, cam),
            records: Vec::new(),
        }
    }
}

impl<'m> Environment<ModelBackend<'m>> for WorldEnv {
    fn observe(&mut self) -> Result<(Arc<Tensor>, Conditioning)> {
        Ok((
            Arc::new(patchify(&self.episode.observe())?),
            self.episode.conditioning(),
        ))
    }

    fn apply(&mut self, action: &ReactiveOutput) -> Result<bool> {
        action.plan()?;
        self.records.push(self.episode.step_residuals(&action.residuals));
        Ok(self.episode.done())
    }
}

/// Timing regime and camera shared by every evaluated episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub costs: CostModel,
    pub pipeline: PipelineConfig,
    pub camera: CameraModel,
    /// Runs the heavy worker on its own thread.
    pub threaded: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            costs: CostModel::default(),
            // The world ticks at 10 Hz; five ticks of staleness.
            pipeline: PipelineConfig::new(100.0, 500.0),
            camera: CameraModel::default(),
            threaded: false,
        }
    }
}

/// Which held-out scenario seeds a suite draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

/// `episodes` scenarios cycling through `kinds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub kinds: Vec<ScenarioKind>,
    pub episodes: usize,
    pub split: Split,
}

impl SuiteSpec {
    pub fn build(&self, seed: u64) -> Vec<Scenario> {
        (0..self.episodes)
            .map(|i| {
                let kind = self.kinds[i % self.kinds.len()];
                make_scenario(kind, scenario_seed(self.split, seed, i))
            })
            .collect()
    }
}

/// Disjoint scenario seeds per split: training uses even values, evaluation
/// odd ones.
pub fn scenario_seed(split: Split, seed: u64, index: usize) -> u64 {
    let base = seed * 100_000 + index as u64;
    2 * base + u64::from(split == Split::Eval)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub kind: ScenarioKind,
    pub scenario_seed: u64,
    pub success: bool,
    pub collision: bool,
    pub ran_red_light: bool,
    pub route_fraction: f64,
    pub ticks: usize,
    pub collision_tick: Option<usize>,
    pub missing_features: usize,
    pub overruns: usize,
    pub reactive_ms: Option<f64>,
}

impl EpisodeResult {
    fn new(out: &EpisodeOutcome, missing_features: usize, overruns: usize, reactive_ms: Option<f64>) -> Self {
        Self {
            kind: out.kind,
            scenario_seed: out.seed,
            success: out.success() && missing_features == 0,
            collision: out.collision,
            ran_red_light: out.ran_red_light,
            route_fraction: out.route_fraction,
            ticks: out.ticks,
            collision_tick: out.collision_tick,
            missing_features,
            overruns,
            reactive_ms,
        }
    }
}

/// A model run through the pipeline, or the rule-based expert.
#[derive(Clone, Copy)]
pub enum Policy<'m> {
    Expert(ExpertConfig),
    Model(&'m EtaModel),
}

/// Everything one model episode produced.
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub pipeline: PipelineRun<ReactiveOutput>,
    pub log: EpisodeLog,
}

fn log_header(s: &Scenario, cam: &CameraModel, policy: String, config_hash: &str) -> LogHeader {
    LogHeader {
        kind: s.kind,
        seed: s.seed,
        hazards_removed: !s.has_hazards() && make_scenario(s.kind, s.seed).has_hazards(),
        camera: *cam,
        policy,
        config_hash: config_hash.to_string(),
    }
}

/// Runs one episode of `model` in `mode` under a prepared pipeline.
pub fn run_model_episode(
    model: &EtaModel,
    pipeline: &Pipeline,
    scenario: &Scenario,
    cfg: &EvalConfig,
) -> Result<EpisodeRun> {
    let mut env = WorldEnv::new(scenario.clone(), cfg.camera);
    let backend = ModelBackend { model };
    let limit = scenario.max_ticks;
    let run = if cfg.threaded {
        pipeline.run_threaded(&mut env, &backend, limit)?
    } else {
        pipeline.run(&mut env, &backend, limit)?
    };
    let missing = run
        .trace
        .misses()
        .filter(|(_, k)| *k == MissKind::MissingFeatures)
        .count();
    let overruns = run.trace.misses().filter(|(_, k)| *k == MissKind::Overrun).count();
    let result = EpisodeResult::new(&env.episode.outcome(), missing, overruns, Some(pipeline.reactive_ms()));
    let log = EpisodeLog {
        header: log_header(scenario, &cfg.camera, pipeline.mode.name().to_string(), ""),
        ticks: env.records,
    };
    Ok(EpisodeRun {
        result,
        pipeline: run,
        log,
    })
}

/// Runs the expert with no pipeline.
pub fn run_expert_episode(
    expert: &ExpertConfig,
    scenario: &Scenario,
    cam: &CameraModel,
) -> (EpisodeResult, EpisodeLog) {
    let (out, ticks) = run_expert(scenario, cam, expert);
    let log = EpisodeLog {
        header: log_header(scenario, cam, "expert".into(), ""),
        ticks,
    };
    (EpisodeResult::new(&out, 0, 0, None), log)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KindMetrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
}

/// Aggregates over one suite, rates in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub route_completion: f64,
    pub mean_reactive_ms: Option<f64>,
    pub overruns: usize,
    pub missing_features: usize,
    pub per_kind: BTreeMap<ScenarioKind, KindMetrics>,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

impl SuiteMetrics {
    pub fn from_results(results: &[EpisodeResult]) -> Self {
        let n = results.len();
        let mut per_kind: BTreeMap<ScenarioKind, (usize, usize, usize)> = BTreeMap::new();
        for r in results {
            let e = per_kind.entry(r.kind).or_default();
            e.0 += 1;
            e.1 += usize::from(r.success);
            e.2 += usize::from(r.collision);
        }
        let lat: Vec<f64> = results.iter().filter_map(|r| r.reactive_ms).collect();
        Self {
            episodes: n,
            success_rate: pct(results.iter().filter(|r| r.success).count(), n),
            collision_rate: pct(results.iter().filter(|r| r.collision).count(), n),
            route_completion: if n == 0 {
                0.0
            } else {
                100.0 * results.iter().map(|r| r.route_fraction).sum::<f64>() / n as f64
            },
            mean_reactive_ms: (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64),
            overruns: results.iter().map(|r| r.overruns).sum(),
            missing_features: results.iter().map(|r| r.missing_features).sum(),
            per_kind: per_kind
                .into_iter()
                .map(|(k, (e, s, c))| {
                    (
                        k,
                        KindMetrics {
                            episodes: e,
                            success_rate: pct(s, e),
                            collision_rate: pct(c, e),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Evaluates `policy` on every scenario of `suite` in `mode`.
pub fn evaluate_suite(
    policy: Policy<'_>,
    mode: Mode,
    suite: &[Scenario],
    cfg: &EvalConfig,
) -> Result<Vec<EpisodeResult>> {
    match policy {
        Policy::Expert(expert) => Ok(suite
            .iter()
            .map(|s| run_expert_episode(&expert, s, &cfg.camera).0)
            .collect()),
        Policy::Model(model) => {
            let pipeline = Pipeline::new(&cfg.costs, &cfg.pipeline, mode)?;
            let run = |s: &Scenario| run_model_episode(model, &pipeline, s, cfg).map(|r| r.result);
            parallel_map(suite, run)
        }
    }
}

/// Maps over `items` on all available cores; output order is input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation over the runs.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Metrics over several seeded runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub runs: Vec<(u64, SuiteMetrics)>,
    pub success_rate: MeanStd,
    pub collision_rate: MeanStd,
    pub route_completion: MeanStd,
    pub mean_reactive_ms: Option<f64>,
    pub per_kind_success: BTreeMap<ScenarioKind, MeanStd>,
}

impl EvalReport {
    pub fn from_runs(mode: Mode, runs: Vec<(u64, SuiteMetrics)>) -> Self {
        let col = |f: &dyn Fn(&SuiteMetrics) -> f64| MeanStd::of(&runs.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
        let mut kinds: BTreeMap<ScenarioKind, Vec<f64>> = BTreeMap::new();
        for (_, m) in &runs {
            for (k, km) in &m.per_kind {
                kinds.entry(*k).or_default().push(km.success_rate);
            }
        }
        Self {
            mode,
            success_rate: col(&|m| m.success_rate),
            collision_rate: col(&|m| m.collision_rate),
            route_completion: col(&|m| m.route_completion),
            mean_reactive_ms: runs.first().and_then(|(_, m)| m.mean_reactive_ms),
            per_kind_success: kinds.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect(),
            runs,
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("mode {}\n", self.mode);
        for (seed, m) in &self.runs {
            s += &format!(
                "  seed {seed}: SR {:.2}  collisions {:.2}  RC {:.2}  overruns {}  missing {}\n",
                m.success_rate, m.collision_rate, m.route_completion, m.overruns, m.missing_features
            );
        }
        s += &format!(
            "  SR {}\n  collision rate {}\n  route completion {}\n",
            self.success_rate, self.collision_rate, self.route_completion
        );
        if let Some(l) = self.mean_reactive_ms {
            s += &format!("  reactive latency {l:.0} ms\n");
        }
        for (k, v) in &self.per_kind_success {
            s += &format!("  {k}: SR {v}\n");
        }
        s
    }
}

/// Evaluates each `(seed, policy)` run on the suite built for its seed.
pub fn evaluate_closed_loop(
    runs: &[(u64, Policy<'_>)],
    mode: Mode,
    suite: &SuiteSpec,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if runs.iter().any(|(_, p)| matches!(p, Policy::Model(_))) {
        // Surfaces an infeasible schedule before any episode runs.
        Pipeline::new(&cfg.costs, &cfg.pipeline, mode)?;
    }
    if suite.kinds.is_empty() {
        return Err(Error::Config("evaluation suite has no scenario kinds".into()));
    }
    let mut out = Vec::new();
    for &(seed, policy) in runs {
        let results = evaluate_suite(policy, mode, &suite.build(seed), cfg)?;
        out.push((seed, SuiteMetrics::from_results(&results)));
    }
    Ok(EvalReport::from_runs(mode, out))
}
