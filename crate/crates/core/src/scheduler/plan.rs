//! Latency model and batch planning for the large-encoder worker.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::models::Mode;

/// Simulated costs in milliseconds. Only the relations between them carry
/// meaning; toy networks cannot reproduce absolute latencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub large_fixed: f64,
    pub large_marginal: f64,
    pub small: f64,
    pub forecast: f64,
    pub action: f64,
}

impl Default for CostModel {
    /// The unique split satisfying async = 50, no-small = 31, base = 102 and
    /// GT-forecast = 124 with a 24 ms per-frame marginal.
    fn default() -> Self {
        Self {
            large_fixed: 50.0,
            large_marginal: 24.0,
            small: 19.0,
            forecast: 3.0,
            action: 28.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("large_fixed", self.large_fixed),
            ("large_marginal", self.large_marginal),
            ("small", self.small),
            ("forecast", self.forecast),
            ("action", self.action),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("cost.{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Cost of one large-encoder batch of `batch` frames.
    pub fn large(&self, batch: usize) -> f64 {
        self.large_fixed + self.large_marginal * batch as f64
    }

    /// Critical path of one tick in `mode`.
    pub fn reactive(&self, mode: Mode) -> f64 {
        let (s, f, a, l1) = (self.small, self.forecast, self.action, self.large(1));
        match mode {
            Mode::Full | Mode::NoMask => s + f + a,
            Mode::NoForecast | Mode::SmallOnly => s + a,
            Mode::NoSmall => f + a,
            // The forecaster slot stays on the path; only its input changes.
            Mode::GtForecast | Mode::GtForecastTestOnly => l1 + s + f + a,
            Mode::Base => l1 + a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub tick_ms: f64,
    pub delta_ms: f64,
    /// Largest batch the planner may choose.
    pub capacity: usize,
    /// Forces a batch size instead of planning one.
    pub batch: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tick_ms: 50.0,
            delta_ms: 500.0,
            capacity: 8,
            batch: None,
        }
    }
}

impl PipelineConfig {
    pub fn new(tick_ms: f64, delta_ms: f64) -> Self {
        Self {
            tick_ms,
            delta_ms,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.tick_ms > 0.0 && self.tick_ms.is_finite()) {
            return Err(format!("schedule.tick_ms must be positive, got {}", self.tick_ms));
        }
        if !(self.delta_ms > 0.0 && self.delta_ms.is_finite()) {
            return Err(format!("schedule.delta_ms must be positive, got {}", self.delta_ms));
        }
        let ratio = self.delta_ms / self.tick_ms;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(format!(
                "schedule.delta_ms ({}) must be a positive multiple of schedule.tick_ms ({})",
                self.delta_ms, self.tick_ms
            ));
        }
        if self.capacity == 0 {
            return Err("schedule.capacity must be at least 1".into());
        }
        if self.batch == Some(0) {
            return Err("schedule.batch must be at least 1".into());
        }
        Ok(())
    }

    /// Staleness in ticks.
    pub fn delta_ticks(&self) -> usize {
        (self.delta_ms / self.tick_ms).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Work arrives faster than it can be processed.
    Throughput,
    /// Results arrive later than `Δ` after their frame.
    Staleness,
}

/// Why no batch size works, with the smallest relaxation that would fix it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Infeasible {
    pub constraint: Constraint,
    pub detail: String,
    pub min_delta_ms: Option<f64>,
    pub min_tick_ms: Option<f64>,
}

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.constraint {
            Constraint::Throughput => "throughput",
            Constraint::Staleness => "staleness",
        };
        write!(f, "{name} violated: {}", self.detail)?;
        if let Some(d) = self.min_delta_ms {
            write!(f, "; smallest feasible delta {d} ms")?;
        }
        if let Some(t) = self.min_tick_ms {
            write!(f, "; smallest feasible tick {t} ms")?;
        }
        Ok(())
    }
}

impl std::error::Error for Infeasible {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch: usize,
    pub tick_ms: f64,
    pub delta_ms: f64,
    /// `cost_large(batch)`.
    pub large_ms: f64,
    /// Worst-case frame-to-result time, `(batch - 1) * T + cost_large(batch)`.
    pub worst_latency_ms: f64,
}

/// One planned large-encoder batch in steady state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedBatch {
    pub id: usize,
    pub frames: Vec<usize>,
    pub start_ms: f64,
    pub end_ms: f64,
}

impl BatchPlan {
    /// Batches covering the first `ticks` frames when the worker starts each
    /// batch as soon as it is full and the previous one is done.
    pub fn timeline(&self, ticks: usize) -> Vec<PlannedBatch> {
        let mut out = Vec::new();
        let mut free = 0.0f64;
        for (id, first) in (0..ticks).step_by(self.batch).enumerate() {
            let last = first + self.batch - 1;
            if last >= ticks {
                break;
            }
            let start = (last as f64 * self.tick_ms).max(free);
            free = start + self.large_ms;
            out.push(PlannedBatch {
                id,
                frames: (first..=last).collect(),
                start_ms: start,
                end_ms: free,
            });
        }
        out
    }
}

fn throughput_ok(costs: &CostModel, tick: f64, b: usize) -> bool {
    costs.large(b) <= b as f64 * tick
}

fn latency(costs: &CostModel, tick: f64, b: usize) -> f64 {
    (b - 1) as f64 * tick + costs.large(b)
}

/// Chooses the smallest batch size that keeps up with the tick rate and
/// delivers every result within `Δ` of its frame.
pub fn plan_schedule(costs: &CostModel, cfg: &PipelineConfig) -> Result<BatchPlan, Infeasible> {
    let (t, delta) = (cfg.tick_ms, cfg.delta_ms);
    let plan = |b: usize| BatchPlan {
        batch: b,
        tick_ms: t,
        delta_ms: delta,
        large_ms: costs.large(b),
        worst_latency_ms: latency(costs, t, b),
    };
    if let Some(b) = cfg.batch {
        return check_batch(costs, cfg, b).map(|_| plan(b));
    }
    // Every batch waits at least cost_large(1); no tick rate rescues that.
    if costs.large(1) > delta {
        return Err(Infeasible {
            constraint: Constraint::Staleness,
            detail: format!("cost_large(1) = {} ms > delta = {delta} ms", costs.large(1)),
            min_delta_ms: Some(costs.large(1)),
            min_tick_ms: None,
        });
    }
    let sizes = 1..=cfg.capacity;
    if let Some(b) = sizes
        .clone()
        .find(|&b| throughput_ok(costs, t, b) && latency(costs, t, b) <= delta)
    {
        return Ok(plan(b));
    }
    let fast: Vec<usize> = sizes.filter(|&b| throughput_ok(costs, t, b)).collect();
    if fast.is_empty() {
        let cap = cfg.capacity;
        return Err(Infeasible {
            constraint: Constraint::Throughput,
            detail: format!(
                "cost_large(B) > B * {t} ms for every B <= {cap} (cost_large({cap}) = {} ms)",
                costs.large(cap)
            ),
            min_delta_ms: None,
            min_tick_ms: Some(min_tick(costs, cap)),
        });
    }
    let best = fast.iter().map(|&b| latency(costs, t, b)).fold(f64::INFINITY, f64::min);
    Err(Infeasible {
        constraint: Constraint::Staleness,
        detail: format!("(B - 1) * {t} + cost_large(B) > {delta} ms for every B that keeps up (best {best} ms)"),
        min_delta_ms: Some((best / t).ceil() * t),
        min_tick_ms: None,
    })
}

/// Smallest tick period for which some batch size up to `cap` keeps up.
fn min_tick(costs: &CostModel, cap: usize) -> f64 {
    (1..=cap)
        .map(|b| costs.large(b) / b as f64)
        .fold(f64::INFINITY, f64::min)
}

fn check_batch(costs: &CostModel, cfg: &PipelineConfig, b: usize) -> Result<(), Infeasible> {
    let (t, delta) = (cfg.tick_ms, cfg.delta_ms);
    if !throughput_ok(costs, t, b) {
        return Err(Infeasible {
            constraint: Constraint::Throughput,
            detail: format!("cost_large({b}) = {} ms > {b} * {t} ms", costs.large(b)),
            min_delta_ms: None,
            min_tick_ms: Some(costs.large(b) / b as f64),
        });
    }
    let l = latency(costs, t, b);
    if l > delta {
        return Err(Infeasible {
            constraint: Constraint::Staleness,
            detail: format!("({b} - 1) * {t} + cost_large({b}) = {l} ms > delta = {delta} ms"),
            min_delta_ms: Some((l / t).ceil() * t),
            min_tick_ms: None,
        });
    }
    Ok(())
}

/// Plan for one mode: its reactive path must fit the tick, and modes that
/// consume stale large features also need a worker batch plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModePlan {
    pub mode: Mode,
    pub reactive_ms: f64,
    pub batch: Option<BatchPlan>,
}

pub fn plan_mode(costs: &CostModel, cfg: &PipelineConfig, mode: Mode) -> Result<ModePlan, Infeasible> {
    let reactive = costs.reactive(mode);
    if reactive > cfg.tick_ms {
        return Err(Infeasible {
            constraint: Constraint::Throughput,
            detail: format!("reactive path {reactive} ms > tick {} ms in mode {mode}", cfg.tick_ms),
            min_delta_ms: None,
            min_tick_ms: Some(reactive),
        });
    }
    let batch = if mode.uses_stale_large() {
        Some(plan_schedule(costs, cfg)?)
    } else {
        None
    };
    Ok(ModePlan {
        mode,
        reactive_ms: reactive,
        batch,
    })
}
