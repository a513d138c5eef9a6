//! The dual-rate runtime: a heavy worker encodes past frames in batches
//! while the reactive path acts on every tick with features `Δ` old.
//!
//! Two interleavings share the same numerics. The simulated one advances a
//! virtual clock with [`CostModel`] latencies and is canonical. The threaded
//! one runs the heavy worker on its own thread and blocks when a result is
//! late. A sequential oracle computes the same actions with no batching.

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::plan::{plan_schedule, CostModel, PipelineConfig};
use super::trace::{Event, MissKind, ScheduleTrace};
use crate::error::{Error, Result};
use crate::models::Mode;

/// The networks as seen by the runtime.
pub trait Backend {
    type Frame: Clone;
    type Cond;
    type Features: Clone;
    type Action: Clone;

    /// Large encoder over a batch. Each result must depend only on its own
    /// frame, so batching never changes numerics.
    fn encode_large(&self, frames: &[&Self::Frame]) -> Result<Vec<Self::Features>>;

    /// The per-tick computation.
    fn react(&self, mode: Mode, input: TickInput<'_, Self>) -> Result<Self::Action>;
}

/// Large features of a past frame with the action and conditioning observed
/// at that frame. `action` is absent during warm-up.
pub struct Stale<'a, B: Backend + ?Sized> {
    pub frame: usize,
    pub features: &'a B::Features,
    pub action: Option<&'a B::Action>,
    pub cond: &'a B::Cond,
}

pub struct TickInput<'a, B: Backend + ?Sized> {
    pub tick: usize,
    pub frame: &'a B::Frame,
    pub cond: &'a B::Cond,
    /// Present exactly when the mode consumes stale large features.
    pub stale: Option<Stale<'a, B>>,
}

/// A closed-loop world driven by the pipeline.
pub trait Environment<B: Backend> {
    fn observe(&mut self) -> Result<(B::Frame, B::Cond)>;
    /// Applies an action; returns `true` once the episode is over.
    fn apply(&mut self, action: &B::Action) -> Result<bool>;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WallStats {
    pub total_ms: f64,
    /// Times the reactive thread blocked on the heavy worker.
    pub waits: usize,
    pub max_wait_ms: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineRun<A> {
    pub actions: Vec<A>,
    pub trace: ScheduleTrace,
    pub ticks: usize,
    pub batch: Option<usize>,
    pub wall: Option<WallStats>,
}

/// A resolved pipeline variant: mode, costs and the worker batch size.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub costs: CostModel,
    pub cfg: PipelineConfig,
    pub mode: Mode,
    pub batch: Option<usize>,
}

impl Pipeline {
    /// Plans the worker batch; errors when the schedule is infeasible.
    pub fn new(costs: &CostModel, cfg: &PipelineConfig, mode: Mode) -> Result<Self> {
        cfg.validate().map_err(Error::Config)?;
        costs.validate().map_err(Error::Config)?;
        let batch = if mode.uses_stale_large() {
            Some(plan_schedule(costs, cfg)?.batch)
        } else {
            None
        };
        Self::build(costs, cfg, mode, batch)
    }

    /// Uses `batch` without checking its timing, so deadline misses can be
    /// provoked. Results must still exist before they are consumed.
    pub fn with_batch(costs: &CostModel, cfg: &PipelineConfig, mode: Mode, batch: usize) -> Result<Self> {
        cfg.validate().map_err(Error::Config)?;
        costs.validate().map_err(Error::Config)?;
        Self::build(costs, cfg, mode, mode.uses_stale_large().then_some(batch))
    }

    fn build(costs: &CostModel, cfg: &PipelineConfig, mode: Mode, batch: Option<usize>) -> Result<Self> {
        if let Some(b) = batch {
            if b == 0 || b - 1 > cfg.delta_ticks() {
                return Err(Error::Config(format!(
                    "batch {b} cannot deliver frame t - {} before tick t",
                    cfg.delta_ticks()
                )));
            }
        }
        Ok(Self {
            costs: costs.clone(),
            cfg: cfg.clone(),
            mode,
            batch,
        })
    }

    pub fn reactive_ms(&self) -> f64 {
        self.costs.reactive(self.mode)
    }

    /// Canonical simulated-time run.
    pub fn run<B: Backend, E: Environment<B>>(
        &self,
        env: &mut E,
        backend: &B,
        max_ticks: usize,
    ) -> Result<PipelineRun<B::Action>> {
        let tick_ms = self.cfg.tick_ms;
        let d = self.cfg.delta_ticks();
        let reactive = self.reactive_ms();
        let mut ev = Vec::new();
        let mut feats: BTreeMap<usize, B::Features> = BTreeMap::new();
        let mut done_at: Vec<f64> = Vec::new();
        let mut pending: Vec<(usize, B::Frame)> = Vec::new();
        let mut bootstrap: Option<B::Features> = None;
        let (mut worker_free, mut reactive_free, mut batch_id) = (0.0f64, 0.0f64, 0usize);
        let mut conds: Vec<B::Cond> = Vec::new();
        let mut actions: Vec<B::Action> = Vec::new();
        let mut last_t = 0.0;

        for k in 0..max_ticks {
            let t = k as f64 * tick_ms;
            last_t = t;
            let (frame, cond) = env.observe()?;
            conds.push(cond);
            done_at.push(f64::INFINITY);
            ev.push(Event::FrameIn { t, frame: k });
            if let Some(b) = self.batch {
                if k == 0 {
                    bootstrap = backend.encode_large(&[&frame])?.pop();
                    ev.push(Event::Bootstrap { t, frame: 0 });
                }
                pending.push((k, frame.clone()));
                if pending.len() == b {
                    let start = t.max(worker_free);
                    let end = start + self.costs.large(b);
                    let ids: Vec<usize> = pending.iter().map(|p| p.0).collect();
                    let refs: Vec<&B::Frame> = pending.iter().map(|p| &p.1).collect();
                    let out = backend.encode_large(&refs)?;
                    for (&id, f) in ids.iter().zip(out) {
                        feats.insert(id, f);
                        done_at[id] = end;
                    }
                    ev.push(Event::BatchStart {
                        t: start,
                        batch: batch_id,
                        frames: ids.clone(),
                    });
                    ev.push(Event::BatchEnd {
                        t: end,
                        batch: batch_id,
                        frames: ids,
                    });
                    worker_free = end;
                    batch_id += 1;
                    pending.clear();
                }
            }
            let start_r = t.max(reactive_free);
            let stale = match (&self.batch, &bootstrap) {
                (None, _) => None,
                (Some(_), _) if k >= d => {
                    let j = k - d;
                    if done_at[j] > t {
                        ev.push(Event::DeadlineMiss {
                            t,
                            tick: k,
                            reason: MissKind::MissingFeatures,
                        });
                    }
                    ev.push(Event::Fuse {
                        t: start_r,
                        tick: k,
                        frame: j,
                        staleness_ms: d as f64 * tick_ms,
                        warmup: false,
                    });
                    let features = feats.get(&j).expect("batch size bounded by delta");
                    Some(Stale {
                        frame: j,
                        features,
                        action: Some(&actions[j]),
                        cond: &conds[j],
                    })
                }
                (Some(_), Some(boot)) => {
                    ev.push(Event::Fuse {
                        t: start_r,
                        tick: k,
                        frame: 0,
                        staleness_ms: t,
                        warmup: true,
                    });
                    Some(Stale {
                        frame: 0,
                        features: boot,
                        action: None,
                        cond: &conds[0],
                    })
                }
                (Some(_), None) => unreachable!("bootstrap encoded at tick 0"),
            };
            let action = backend.react(
                self.mode,
                TickInput {
                    tick: k,
                    frame: &frame,
                    cond: &conds[k],
                    stale,
                },
            )?;
            if k >= d {
                feats.remove(&(k - d));
            }
            let end_r = start_r + reactive;
            ev.push(Event::ActOut { t: end_r, tick: k });
            if end_r > t + tick_ms {
                ev.push(Event::DeadlineMiss {
                    t: end_r,
                    tick: k,
                    reason: MissKind::Overrun,
                });
            }
            reactive_free = end_r;
            let finished = env.apply(&action)?;
            actions.push(action);
            if finished {
                break;
            }
        }
        // Frames still buffered are encoded for conservation; no tick reads them.
        if let Some(b) = self.batch {
            if !pending.is_empty() {
                let start = last_t.max(worker_free);
                let ids: Vec<usize> = pending.iter().map(|p| p.0).collect();
                ev.push(Event::BatchStart {
                    t: start,
                    batch: batch_id,
                    frames: ids.clone(),
                });
                ev.push(Event::BatchEnd {
                    t: start + self.costs.large(ids.len().min(b)),
                    batch: batch_id,
                    frames: ids,
                });
            }
        }
        Ok(PipelineRun {
            ticks: actions.len(),
            actions,
            trace: ScheduleTrace::from_unordered(ev),
            batch: self.batch,
            wall: None,
        })
    }

    /// The same computation with the heavy worker on its own thread. The
    /// reactive thread blocks when a result is late; actions are identical
    /// to [`Pipeline::run`]. The trace carries wall-clock times.
    pub fn run_threaded<B, E>(&self, env: &mut E, backend: &B, max_ticks: usize) -> Result<PipelineRun<B::Action>>
    where
        B: Backend + Sync,
        B::Frame: Send,
        B::Features: Send,
        E: Environment<B>,
    {
        let Some(batch) = self.batch else {
            return self.run(env, backend, max_ticks).map(|mut r| {
                r.wall = Some(WallStats::default());
                r
            });
        };
        let d = self.cfg.delta_ticks();
        let clock = Instant::now();
        let ms = move || clock.elapsed().as_secs_f64() * 1e3;
        std::thread::scope(|scope| {
            let (frame_tx, frame_rx) = mpsc::channel::<(usize, B::Frame)>();
            let (res_tx, res_rx) = mpsc::channel::<Result<(Vec<Event>, Vec<(usize, B::Features)>)>>();
            scope.spawn(move || {
                let mut batch_id = 0usize;
                let mut pending: Vec<(usize, B::Frame)> = Vec::new();
                let flush = |pending: &mut Vec<(usize, B::Frame)>, id: usize| {
                    let ids: Vec<usize> = pending.iter().map(|p| p.0).collect();
                    let start = ms();
                    let refs: Vec<&B::Frame> = pending.iter().map(|p| &p.1).collect();
                    let out = backend.encode_large(&refs).map(|f| {
                        let events = vec![
                            Event::BatchStart {
                                t: start,
                                batch: id,
                                frames: ids.clone(),
                            },
                            Event::BatchEnd {
                                t: ms(),
                                batch: id,
                                frames: ids.clone(),
                            },
                        ];
                        (events, ids.iter().copied().zip(f).collect())
                    });
                    pending.clear();
                    res_tx.send(out).is_ok()
                };
                while let Ok(item) = frame_rx.recv() {
                    pending.push(item);
                    if pending.len() == batch {
                        if !flush(&mut pending, batch_id) {
                            return;
                        }
                        batch_id += 1;
                    }
                }
                if !pending.is_empty() {
                    flush(&mut pending, batch_id);
                }
            });

            let mut ev = Vec::new();
            let mut feats: BTreeMap<usize, B::Features> = BTreeMap::new();
            let mut conds = Vec::new();
            let mut actions: Vec<B::Action> = Vec::new();
            let mut wall = WallStats::default();
            let mut bootstrap = None;
            for k in 0..max_ticks {
                let (frame, cond) = env.observe()?;
                conds.push(cond);
                ev.push(Event::FrameIn { t: ms(), frame: k });
                if k == 0 {
                    bootstrap = backend.encode_large(&[&frame])?.pop();
                    ev.push(Event::Bootstrap { t: ms(), frame: 0 });
                }
                frame_tx
                    .send((k, frame.clone()))
                    .map_err(|_| Error::Config("heavy worker stopped".into()))?;
                let stale = if k >= d {
                    let j = k - d;
                    let w0 = ms();
                    let mut waited = false;
                    while !feats.contains_key(&j) {
                        waited = true;
                        let (events, out) = res_rx
                            .recv()
                            .map_err(|_| Error::Config("heavy worker stopped".into()))??;
                        ev.extend(events);
                        feats.extend(out);
                    }
                    if waited {
                        wall.waits += 1;
                        wall.max_wait_ms = wall.max_wait_ms.max(ms() - w0);
                    }
                    ev.push(Event::Fuse {
                        t: ms(),
                        tick: k,
                        frame: j,
                        staleness_ms: self.cfg.delta_ms,
                        warmup: false,
                    });
                    Stale {
                        frame: j,
                        features: &feats[&j],
                        action: Some(&actions[j]),
                        cond: &conds[j],
                    }
                } else {
                    ev.push(Event::Fuse {
                        t: ms(),
                        tick: k,
                        frame: 0,
                        staleness_ms: k as f64 * self.cfg.tick_ms,
                        warmup: true,
                    });
                    Stale {
                        frame: 0,
                        features: bootstrap.as_ref().expect("bootstrap encoded at tick 0"),
                        action: None,
                        cond: &conds[0],
                    }
                };
                let action = backend.react(
                    self.mode,
                    TickInput {
                        tick: k,
                        frame: &frame,
                        cond: &conds[k],
                        stale: Some(stale),
                    },
                )?;
                ev.push(Event::ActOut { t: ms(), tick: k });
                if k >= d {
                    feats.remove(&(k - d));
                }
                let finished = env.apply(&action)?;
                actions.push(action);
                if finished {
                    break;
                }
            }
            drop(frame_tx);
            while let Ok(r) = res_rx.recv() {
                ev.extend(r?.0);
            }
            wall.total_ms = ms();
            Ok(PipelineRun {
                ticks: actions.len(),
                actions,
                trace: ScheduleTrace::from_unordered(ev),
                batch: Some(batch),
                wall: Some(wall),
            })
        })
    }
}

/// Reference computation with no scheduling: every tick encodes its stale
/// frame alone, in order.
pub fn run_sequential<B: Backend, E: Environment<B>>(
    env: &mut E,
    backend: &B,
    cfg: &PipelineConfig,
    mode: Mode,
    max_ticks: usize,
) -> Result<Vec<B::Action>> {
    cfg.validate().map_err(Error::Config)?;
    let d = cfg.delta_ticks();
    let mut frames = Vec::new();
    let mut conds = Vec::new();
    let mut actions: Vec<B::Action> = Vec::new();
    for k in 0..max_ticks {
        let (frame, cond) = env.observe()?;
        frames.push(frame);
        conds.push(cond);
        let feats;
        let stale = if mode.uses_stale_large() {
            let j = k.saturating_sub(d);
            feats = backend
                .encode_large(&[&frames[j]])?
                .pop()
                .ok_or_else(|| Error::Config("backend returned no features".into()))?;
            Some(Stale {
                frame: j,
                features: &feats,
                action: (k >= d).then(|| &actions[j]),
                cond: &conds[j],
            })
        } else {
            None
        };
        let action = backend.react(
            mode,
            TickInput {
                tick: k,
                frame: &frames[k],
                cond: &conds[k],
                stale,
            },
        )?;
        let finished = env.apply(&action)?;
        actions.push(action);
        if finished {
            break;
        }
    }
    Ok(actions)
}

/// Simulated run with the planned batch size.
pub fn run_pipeline<B: Backend, E: Environment<B>>(
    env: &mut E,
    backend: &B,
    costs: &CostModel,
    cfg: &PipelineConfig,
    mode: Mode,
    max_ticks: usize,
) -> Result<PipelineRun<B::Action>> {
    Pipeline::new(costs, cfg, mode)?.run(env, backend, max_ticks)
}
