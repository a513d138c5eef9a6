//! The `eta` command line. Every artifact gets a header line carrying the
//! resolved config hash and seed, and the resolved config is written next
//! to it as `<out>.config.toml`.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage or config error.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::ablation::{run_ablation_matrix, AblationTable, CheckpointSet};
use crate::harness::closed_loop::{run_expert_episode, run_model_episode, EvalReport, SuiteMetrics};
use crate::harness::{
    collect_dataset, load_checkpoint, save_checkpoint, train, CheckpointMeta, CollectOptions, Dataset, StepRecord,
};
use crate::models::Mode;
use crate::scheduler::{plan_mode, Constraint, Pipeline, PipelineConfig, SyntheticBackend, SyntheticEnv};
use crate::world::{action_to_mask, expert_policy_with, ActionPlan, EpisodeLog, ScenarioKind};

/// `print!` that propagates write errors, so a closed pipe ends the command
/// instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {
        write!(std::io::stdout().lock(), $($t)*).map_err(Error::from)?
    };
}

macro_rules! outln {
    ($($t:tt)*) => {
        writeln!(std::io::stdout().lock(), $($t)*).map_err(Error::from)?
    };
}

#[derive(Debug, Parser)]
#[command(
    name = "eta",
    version,
    about = "Dual-rate driving policy: data, training, evaluation and scheduling"
)]
pub struct Cli {
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed recorded in every output.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output path.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Base,
    Async,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll the expert through a scenario suite and store paired samples.
    Collect {
        /// Comma-separated scenario kinds.
        #[arg(long, value_delimiter = ',')]
        scenarios: Vec<ScenarioKind>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train one model on a dataset.
    Train {
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "async")]
        kind: Kind,
        /// Async variant; defaults to `full`.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Closed-loop evaluation of checkpoints or the expert.
    Eval {
        #[arg(long, default_value = "full")]
        mode: Mode,
        /// Checkpoint files or directories of `*.ckpt`.
        #[arg(long, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Evaluate the rule-based expert instead of a model.
        #[arg(long)]
        expert: bool,
        /// Directory for per-episode logs.
        #[arg(long, value_name = "DIR")]
        logs: Option<PathBuf>,
    },
    /// Evaluate every ablation variant.
    Ablate {
        #[arg(long, num_args = 1..)]
        checkpoints: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Plan the schedule and run the pipeline with synthetic networks.
    Bench {
        #[arg(long, default_value = "full")]
        mode: Mode,
        /// Print the feasibility frontier over tick period and staleness.
        #[arg(long)]
        sweep: bool,
        #[arg(long, default_value_t = 10_000)]
        ticks: usize,
        /// Ticks of textual timeline to print.
        #[arg(long, default_value_t = 20)]
        timeline: usize,
    },
    /// Re-simulate an episode log and print its frames.
    Replay {
        log: PathBuf,
        /// Overlay the executed plan's patch mask on the expert's.
        #[arg(long)]
        show_mask: bool,
        #[arg(long, default_value_t = 0)]
        from: usize,
        #[arg(long)]
        to: Option<usize>,
    },
    /// Summarize loss records and metrics files.
    Report { files: Vec<PathBuf> },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    let seed = cli.seed.unwrap_or(cfg.train.seed);
    let ctx = Ctx {
        out: cli.out.clone(),
        seed,
    };
    match cli.command {
        Command::Collect { scenarios, episodes } => {
            if !scenarios.is_empty() {
                cfg.data.kinds = scenarios;
            }
            if let Some(n) = episodes {
                cfg.data.episodes = n;
            }
            cfg.validate()?;
            cmd_collect(&cfg, &ctx)
        }
        Command::Train { data, kind, mode } => {
            cfg.train.seed = seed;
            let mode = match (kind, mode) {
                (Kind::Base, None | Some(Mode::Base)) => Mode::Base,
                (Kind::Base, Some(m)) => return Err(Error::Config(format!("--kind base conflicts with --mode {m}"))),
                (Kind::Async, None) => Mode::Full,
                (Kind::Async, Some(Mode::Base)) => {
                    return Err(Error::Config("--mode base needs --kind base".into()));
                }
                (Kind::Async, Some(m)) => m.training_mode(),
            };
            cmd_train(&cfg, &ctx, &data, mode)
        }
        Command::Eval {
            mode,
            checkpoints,
            seeds,
            expert,
            logs,
        } => {
            let seeds = pick_seeds(&cfg, &cli.seed, seeds);
            cmd_eval(&cfg, &ctx, mode, &checkpoints, &seeds, expert, logs.as_deref())
        }
        Command::Ablate { checkpoints, seeds } => {
            let seeds = pick_seeds(&cfg, &cli.seed, seeds);
            cmd_ablate(&cfg, &ctx, &checkpoints, &seeds)
        }
        Command::Bench {
            mode,
            sweep,
            ticks,
            timeline,
        } => cmd_bench(&cfg, &ctx, mode, sweep, ticks, timeline),
        Command::Replay {
            log,
            show_mask,
            from,
            to,
        } => cmd_replay(&cfg, &log, show_mask, from, to),
        Command::Report { files } => cmd_report(&files),
    }
}

fn pick_seeds(cfg: &RunConfig, seed: &Option<u64>, seeds: Vec<u64>) -> Vec<u64> {
    match (seeds.is_empty(), seed) {
        (false, _) => seeds,
        (true, Some(s)) => vec![*s],
        (true, None) => cfg.eval.seeds.clone(),
    }
}

/// Global output path and seed.
pub struct Ctx {
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Ctx {
    fn out(&self, what: &str) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{what} needs --out PATH")))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::write(sibling(out, ".config.toml"), cfg.to_toml())?;
    Ok(())
}

fn header_line(cfg: &RunConfig, seed: u64, command: &str) -> serde_json::Value {
    json!({ "type": "header", "command": command, "config_hash": cfg.hash(), "seed": seed })
}

fn write_jsonl(path: &Path, lines: &[serde_json::Value]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_collect(cfg: &RunConfig, ctx: &Ctx) -> Result<()> {
    let out = ctx.out("collect")?;
    let suite = cfg.train_suite().build(ctx.seed);
    let opts = CollectOptions {
        delta_ticks: cfg.data.delta_ticks,
        max_ticks: (cfg.data.max_ticks > 0).then_some(cfg.data.max_ticks),
        camera: cfg.world.camera,
        expert: cfg.world.expert,
        config_hash: cfg.hash(),
        seed: ctx.seed,
    };
    let ds = collect_dataset(&suite, &opts)?;
    ds.save(out)?;
    write_config(cfg, out)?;
    outln!(
        "collected {} samples from {} episodes -> {}",
        ds.len(),
        ds.header.episodes.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, ctx: &Ctx, data: &Path, mode: Mode) -> Result<()> {
    let out = ctx.out("train")?;
    let ds = Dataset::load(data)?;
    let outcome = train(&ds.samples, mode, &cfg.model, &cfg.train)?;
    let meta = CheckpointMeta {
        mode,
        model: cfg.model.clone(),
        config_hash: cfg.hash(),
        seed: cfg.train.seed,
        steps: outcome.records.len(),
    };
    save_checkpoint(out, &outcome.model, &meta)?;
    write_config(cfg, out)?;
    let mut lines = vec![header_line(cfg, cfg.train.seed, "train")];
    for r in &outcome.records {
        lines.push(serde_json::to_value(r)?);
    }
    write_jsonl(&sibling(out, ".loss.jsonl"), &lines)?;
    let first = outcome.records.first().map_or(f64::NAN, |r| r.loss.total);
    let last = outcome.records.last().map_or(f64::NAN, |r| r.loss.total);
    outln!(
        "trained {mode} for {} steps: loss {first:.4} -> {last:.4}; checkpoint {}",
        outcome.records.len(),
        out.display()
    );
    Ok(())
}

/// Loads every checkpoint under `paths`, grouped by training mode and
/// restricted to `seeds` when given.
pub fn load_checkpoints(paths: &[PathBuf], seeds: &[u64]) -> Result<CheckpointSet> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "ckpt"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut set = CheckpointSet::new();
    for f in files {
        let (model, meta) = load_checkpoint(&f)?;
        if seeds.is_empty() || seeds.contains(&meta.seed) {
            set.entry(meta.mode).or_default().push((meta.seed, model));
        }
    }
    for v in set.values_mut() {
        v.sort_by_key(|(s, _)| *s);
    }
    Ok(set)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    ctx: &Ctx,
    mode: Mode,
    checkpoints: &[PathBuf],
    seeds: &[u64],
    expert: bool,
    logs: Option<&Path>,
) -> Result<()> {
    let ecfg = cfg.eval_config();
    let suite = cfg.eval_suite();
    if let Some(dir) = logs {
        std::fs::create_dir_all(dir)?;
    }
    let hash = cfg.hash();
    let mut runs = Vec::new();
    let mut lines = vec![header_line(cfg, ctx.seed, "eval")];
    let mut emit = |seed: u64,
                    policy: &str,
                    results: Vec<crate::harness::EpisodeResult>,
                    logs_out: Vec<EpisodeLog>|
     -> Result<()> {
        if let Some(dir) = logs {
            for mut l in logs_out {
                l.header.config_hash = hash.clone();
                let name = format!("{}_{}_{}_seed{seed}.jsonl", policy, l.header.kind, l.header.seed);
                l.write_to(BufWriter::new(File::create(dir.join(name))?))?;
            }
        }
        for r in &results {
            let mut v = serde_json::to_value(r)?;
            v["type"] = "episode".into();
            v["run_seed"] = seed.into();
            lines.push(v);
        }
        runs.push((seed, SuiteMetrics::from_results(&results)));
        Ok(())
    };
    if expert {
        for &seed in seeds {
            let (results, l): (Vec<_>, Vec<_>) = suite
                .build(seed)
                .iter()
                .map(|s| run_expert_episode(&cfg.world.expert, s, &ecfg.camera))
                .unzip();
            emit(seed, "expert", results, l)?;
        }
    } else {
        let set = load_checkpoints(checkpoints, seeds)?;
        let models = set
            .get(&mode.training_mode())
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::MissingCheckpoints(mode.training_mode().name().to_string()))?;
        let pipeline = Pipeline::new(&ecfg.costs, &ecfg.pipeline, mode)?;
        for (seed, model) in models {
            let mut results = Vec::new();
            let mut l = Vec::new();
            for s in suite.build(*seed) {
                let run = run_model_episode(model, &pipeline, &s, &ecfg)?;
                results.push(run.result);
                l.push(run.log);
            }
            emit(*seed, mode.name(), results, l)?;
        }
    }
    let report = EvalReport::from_runs(mode, runs);
    out!("{}", report.render());
    if let Some(out) = &ctx.out {
        let mut v = serde_json::to_value(&report)?;
        v["type"] = "eval_report".into();
        lines.push(v);
        write_jsonl(out, &lines)?;
        write_config(cfg, out)?;
    }
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig, ctx: &Ctx, checkpoints: &[PathBuf], seeds: &[u64]) -> Result<()> {
    let set = load_checkpoints(checkpoints, seeds)?;
    let table = run_ablation_matrix(&set, &cfg.eval_suite(), &cfg.eval_config())?;
    out!("{}", table.render());
    if let Some(out) = &ctx.out {
        let mut w = BufWriter::new(File::create(out)?);
        serde_json::to_writer(&mut w, &header_line(cfg, ctx.seed, "ablate"))?;
        w.write_all(b"\n")?;
        table.write_jsonl(&mut w, &cfg.hash())?;
        w.flush()?;
        write_config(cfg, out)?;
    }
    Ok(())
}

/// One cell of the feasibility frontier.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub tick_ms: f64,
    pub delta_ms: f64,
    pub batch: Option<usize>,
    pub binding: Option<Constraint>,
}

/// Feasibility of `mode` over every tick period and every staleness that is
/// a multiple of it up to `max_delta_ms`.
pub fn feasibility_sweep(
    costs: &crate::scheduler::CostModel,
    mode: Mode,
    ticks: &[f64],
    max_delta_ms: f64,
) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for &t in ticks {
        let mut k = 1;
        while k as f64 * t <= max_delta_ms {
            let cfg = PipelineConfig::new(t, k as f64 * t);
            let p = plan_mode(costs, &cfg, mode);
            out.push(SweepPoint {
                tick_ms: t,
                delta_ms: k as f64 * t,
                batch: p.as_ref().ok().and_then(|p| p.batch.as_ref().map(|b| b.batch)),
                binding: p.err().map(|e| e.constraint),
            });
            k += 1;
        }
    }
    out
}

fn render_sweep(points: &[SweepPoint]) -> String {
    let mut s = String::from("feasibility frontier (cell: worker batch, '+' feasible without one, '.' infeasible)\n");
    let mut ticks: Vec<f64> = points.iter().map(|p| p.tick_ms).collect();
    ticks.dedup();
    for t in ticks {
        s += &format!("T={t:>4} ms |");
        for p in points.iter().filter(|p| p.tick_ms == t) {
            let cell = match (p.binding, p.batch) {
                (Some(_), _) => ".".to_string(),
                (None, Some(b)) => b.to_string(),
                (None, None) => "+".to_string(),
            };
            s += &format!(" Δ{:.0}:{cell}", p.delta_ms);
        }
        s.push('\n');
    }
    s
}

pub fn cmd_bench(cfg: &RunConfig, ctx: &Ctx, mode: Mode, sweep: bool, ticks: usize, timeline: usize) -> Result<()> {
    let costs = &cfg.costs;
    let sched = &cfg.schedule;
    if sweep {
        out!(
            "{}",
            render_sweep(&feasibility_sweep(costs, mode, &[25.0, 50.0, 100.0], 1000.0))
        );
    }
    outln!(
        "mode {mode}: reactive {:.0} ms, large L(B) = {:.0} + {:.0} B ms, T = {} ms, Δ = {} ms",
        costs.reactive(mode),
        costs.large_fixed,
        costs.large_marginal,
        sched.tick_ms,
        sched.delta_ms
    );
    let plan = plan_mode(costs, sched, mode);
    match &plan {
        Ok(p) => match &p.batch {
            Some(b) => outln!(
                "feasible: batch {} (large {:.0} ms, worst feature latency {:.0} ms)",
                b.batch,
                b.large_ms,
                b.worst_latency_ms
            ),
            None => outln!("feasible: no asynchronous worker"),
        },
        Err(e) => outln!("infeasible: {e}"),
    }
    let pipeline = match (&plan, mode.uses_stale_large()) {
        (Ok(_), _) | (Err(_), false) => Some(Pipeline::new(costs, sched, mode)?),
        (Err(_), true) => None,
    };
    if let Some(p) = pipeline {
        let run = p.run(&mut SyntheticEnv::new(ticks as u64), &SyntheticBackend, ticks)?;
        let st = run.trace.stats();
        outln!(
            "ran {} ticks: {} misses ({} missing features, {} overruns), {} batches",
            st.ticks,
            st.misses,
            st.missing_features,
            st.overruns,
            st.batches
        );
        outln!("staleness histogram (ms: fuses): {:?}", st.staleness);
        outln!(
            "utilization: large {:.1}%, reactive {:.1}%",
            100.0 * st.large_utilization,
            100.0 * st.reactive_utilization
        );
        out!("{}", run.trace.gantt(sched.tick_ms, 0, timeline.min(st.ticks)));
        if let Some(out) = &ctx.out {
            let mut w = BufWriter::new(File::create(out)?);
            serde_json::to_writer(&mut w, &header_line(cfg, ctx.seed, "bench"))?;
            w.write_all(b"\n")?;
            run.trace.write_jsonl(&mut w)?;
            w.flush()?;
            write_config(cfg, out)?;
        }
    }
    plan.map(|_| ()).map_err(Error::from)
}

/// Per-patch overlay: `#` both masks, `p` executed plan only, `g` expert
/// only, `.` neither.
pub fn mask_overlay(pred: &crate::world::PatchMask, gt: &crate::world::PatchMask) -> String {
    let mut s = String::new();
    for r in 0..gt.rows() {
        for c in 0..gt.cols() {
            s.push(match (pred.get(r, c), gt.get(r, c)) {
                (true, true) => '#',
                (true, false) => 'p',
                (false, true) => 'g',
                (false, false) => '.',
            });
        }
        s.push('\n');
    }
    s
}

pub fn cmd_replay(cfg: &RunConfig, path: &Path, show_mask: bool, from: usize, to: Option<usize>) -> Result<()> {
    let log = EpisodeLog::read_from(BufReader::new(File::open(path)?))?;
    let (states, outcome) = log.replay_states()?;
    let cam = log.header.camera;
    outln!(
        "{} seed {} policy {}: replay matches the log over {} ticks",
        log.header.kind,
        log.header.seed,
        log.header.policy,
        log.ticks.len()
    );
    let to = to.unwrap_or(log.ticks.len()).min(log.ticks.len());
    for (i, rec) in log.ticks.iter().enumerate().take(to).skip(from) {
        let st = &states[i];
        outln!(
            "tick {i} t={:.1}s x={:.2} y={:.2} v={:.2} flags={:?}",
            st.sim_time,
            st.ego.x,
            st.ego.y,
            st.ego.speed,
            rec.flags
        );
        out!("{}", crate::world::render_observation(st, &cam).ascii());
        if show_mask {
            let plan = ActionPlan::from_residual_slice(&rec.residuals)?;
            let gt = action_to_mask(&expert_policy_with(st, &cfg.world.expert), &cam);
            out!("{}", mask_overlay(&action_to_mask(&plan, &cam), &gt));
        }
    }
    outln!(
        "outcome: success {} collision {} (tick {:?}) red light {} route {:.1}%",
        outcome.success(),
        outcome.collision,
        outcome.collision_tick,
        outcome.ran_red_light,
        100.0 * outcome.route_fraction
    );
    Ok(())
}

pub fn cmd_report(files: &[PathBuf]) -> Result<()> {
    for f in files {
        outln!("== {}", f.display());
        let mut header = None;
        let mut losses: Vec<StepRecord> = Vec::new();
        let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
        let mut ablation = Vec::new();
        for line in BufReader::new(File::open(f)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(&line)?;
            match v.get("type").and_then(|t| t.as_str()) {
                Some("header") => header = Some(v),
                Some("eval_report") => out!("{}", serde_json::from_value::<EvalReport>(v)?.render()),
                Some(t) => *kinds.entry(t.to_string()).or_default() += 1,
                None if v.get("lr").is_some() => losses.push(serde_json::from_value(v)?),
                None if v.get("report").is_some() => ablation.push(serde_json::from_value(v)?),
                None => *kinds.entry("other".into()).or_default() += 1,
            }
        }
        if let Some(h) = header {
            outln!("config {} seed {} ({})", h["config_hash"], h["seed"], h["command"]);
        }
        if !losses.is_empty() {
            let first = losses[0].loss.total;
            let last = losses[losses.len() - 1].loss.total;
            let restarts = losses.windows(2).filter(|w| w[1].lr > w[0].lr).count();
            outln!(
                "{} steps, loss {first:.5} -> {last:.5} ({:.1}% of initial), lr {:.2e} with {restarts} restarts",
                losses.len(),
                100.0 * last / first,
                losses[0].lr
            );
        }
        if !ablation.is_empty() {
            out!("{}", AblationTable { rows: ablation }.render());
        }
        for (k, n) in kinds {
            outln!("{n} {k} records");
        }
    }
    Ok(())
}
