//! Timestamped event log of a pipeline run, with the invariant checks and
//! textual reports built on it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissKind {
    /// Large features for the frame `Δ` old were not complete at the tick.
    MissingFeatures,
    /// The reactive path finished after the next tick began.
    Overrun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    FrameIn {
        t: f64,
        frame: usize,
    },
    /// Frame 0 encoded before the first tick, serving the warm-up ticks.
    Bootstrap {
        t: f64,
        frame: usize,
    },
    BatchStart {
        t: f64,
        batch: usize,
        frames: Vec<usize>,
    },
    BatchEnd {
        t: f64,
        batch: usize,
        frames: Vec<usize>,
    },
    /// The reactive path consumed large features of `frame` at `tick`.
    Fuse {
        t: f64,
        tick: usize,
        frame: usize,
        staleness_ms: f64,
        warmup: bool,
    },
    ActOut {
        t: f64,
        tick: usize,
    },
    DeadlineMiss {
        t: f64,
        tick: usize,
        reason: MissKind,
    },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::FrameIn { t, .. }
            | Event::Bootstrap { t, .. }
            | Event::BatchStart { t, .. }
            | Event::BatchEnd { t, .. }
            | Event::Fuse { t, .. }
            | Event::ActOut { t, .. }
            | Event::DeadlineMiss { t, .. } => *t,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Event::FrameIn { .. } => "frame_in",
            Event::Bootstrap { .. } => "bootstrap",
            Event::BatchStart { .. } => "batch_start",
            Event::BatchEnd { .. } => "batch_end",
            Event::Fuse { .. } => "fuse",
            Event::ActOut { .. } => "act_out",
            Event::DeadlineMiss { .. } => "deadline_miss",
        }
    }
}

/// Events in non-decreasing time order; equal times keep emission order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub ticks: usize,
    pub frames: usize,
    pub batches: usize,
    pub misses: usize,
    pub missing_features: usize,
    pub overruns: usize,
    /// Fuse count per staleness in ms (warm-up fuses excluded).
    pub staleness: BTreeMap<String, usize>,
    pub warmup_fuses: usize,
    /// Fraction of the run the large worker was busy.
    pub large_utilization: f64,
    /// Fraction of the run the reactive path was busy.
    pub reactive_utilization: f64,
    pub span_ms: f64,
}

impl ScheduleTrace {
    /// Orders arbitrarily emitted events by time, stably.
    pub fn from_unordered(mut events: Vec<Event>) -> Self {
        events.sort_by(|a, b| a.time().total_cmp(&b.time()));
        Self { events }
    }

    pub fn is_time_ordered(&self) -> bool {
        self.events.windows(2).all(|w| w[0].time() <= w[1].time())
    }

    pub fn misses(&self) -> impl Iterator<Item = (usize, MissKind)> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::DeadlineMiss { tick, reason, .. } => Some((*tick, *reason)),
            _ => None,
        })
    }

    pub fn miss_count(&self) -> usize {
        self.misses().count()
    }

    /// Ticks that missed, sorted and deduplicated.
    pub fn missed_ticks(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.misses().map(|(t, _)| t).collect();
        t.dedup();
        t
    }

    /// Every non-warm-up fuse consumed features exactly `delta_ms` old, and
    /// the frame index lags the tick by exactly `delta_ticks`.
    pub fn check_staleness(&self, delta_ms: f64, delta_ticks: usize) -> Result<(), String> {
        for e in &self.events {
            if let Event::Fuse {
                tick,
                frame,
                staleness_ms,
                warmup: false,
                ..
            } = e
            {
                if *staleness_ms != delta_ms || tick.checked_sub(delta_ticks) != Some(*frame) {
                    return Err(format!(
                        "tick {tick} fused frame {frame} ({staleness_ms} ms old), expected {delta_ms} ms"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Each of frames `0..frames` entered once, started in exactly one batch,
    /// and finished in the batch it started in.
    pub fn check_conservation(&self, frames: usize) -> Result<(), String> {
        let mut entered = vec![0usize; frames];
        let mut started = vec![None::<usize>; frames];
        let mut ended = vec![None::<usize>; frames];
        let slot = |f: usize| -> Result<usize, String> {
            if f < frames {
                Ok(f)
            } else {
                Err(format!("unknown frame {f}"))
            }
        };
        for e in &self.events {
            match e {
                Event::FrameIn { frame, .. } => entered[slot(*frame)?] += 1,
                Event::BatchStart { batch, frames: fs, .. } => {
                    for &f in fs {
                        if started[slot(f)?].replace(*batch).is_some() {
                            return Err(format!("frame {f} started in two batches"));
                        }
                    }
                }
                Event::BatchEnd { batch, frames: fs, .. } => {
                    for &f in fs {
                        if started[slot(f)?] != Some(*batch) {
                            return Err(format!("frame {f} ended in batch {batch} it did not start in"));
                        }
                        if ended[f].replace(*batch).is_some() {
                            return Err(format!("frame {f} ended twice"));
                        }
                    }
                }
                _ => {}
            }
        }
        for f in 0..frames {
            if entered[f] != 1 {
                return Err(format!("frame {f} entered {} times", entered[f]));
            }
            if ended[f].is_none() {
                return Err(format!("frame {f} never processed"));
            }
        }
        Ok(())
    }

    pub fn stats(&self) -> TraceStats {
        let mut s = TraceStats::default();
        let mut open_batch: BTreeMap<usize, f64> = BTreeMap::new();
        let mut large_busy = 0.0;
        let mut tick_in: BTreeMap<usize, f64> = BTreeMap::new();
        let mut reactive_busy = 0.0;
        for e in &self.events {
            match e {
                Event::FrameIn { t, frame } => {
                    s.frames += 1;
                    s.ticks += 1;
                    tick_in.insert(*frame, *t);
                }
                Event::BatchStart { t, batch, .. } => {
                    s.batches += 1;
                    open_batch.insert(*batch, *t);
                }
                Event::BatchEnd { t, batch, .. } => {
                    if let Some(t0) = open_batch.remove(batch) {
                        large_busy += t - t0;
                    }
                }
                Event::Fuse {
                    staleness_ms, warmup, ..
                } => {
                    if *warmup {
                        s.warmup_fuses += 1;
                    } else {
                        *s.staleness.entry(format!("{staleness_ms}")).or_default() += 1;
                    }
                }
                Event::ActOut { t, tick } => {
                    if let Some(t0) = tick_in.get(tick) {
                        reactive_busy += t - t0;
                    }
                }
                Event::DeadlineMiss { reason, .. } => {
                    s.misses += 1;
                    match reason {
                        MissKind::MissingFeatures => s.missing_features += 1,
                        MissKind::Overrun => s.overruns += 1,
                    }
                }
                Event::Bootstrap { .. } => {}
            }
        }
        s.span_ms = self.events.last().map_or(0.0, Event::time);
        if s.span_ms > 0.0 {
            s.large_utilization = large_busy / s.span_ms;
            s.reactive_utilization = reactive_busy / s.span_ms;
        }
        s
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> std::io::Result<Self> {
        let mut events = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Self { events })
    }

    /// Text timeline of ticks `from..to`, one column per tick. Row `in`
    /// marks frames, `L` rows show large-worker batches by id, `R` shows
    /// reactive activity and `!` marks misses.
    pub fn gantt(&self, tick_ms: f64, from: usize, to: usize) -> String {
        let cols = to.saturating_sub(from);
        let col = |t: f64| -> Option<usize> {
            let c = (t / tick_ms).floor() as isize - from as isize;
            (c >= 0 && (c as usize) < cols).then_some(c as usize)
        };
        let mut frames = vec![b'.'; cols];
        let mut large = vec![b' '; cols];
        let mut react = vec![b' '; cols];
        let mut miss = vec![b' '; cols];
        let mut starts: BTreeMap<usize, f64> = BTreeMap::new();
        for e in &self.events {
            match e {
                Event::FrameIn { t, .. } => {
                    if let Some(c) = col(*t) {
                        frames[c] = b'|';
                    }
                }
                Event::BatchStart { t, batch, .. } => {
                    starts.insert(*batch, *t);
                }
                Event::BatchEnd { t, batch, .. } => {
                    if let Some(&t0) = starts.get(batch) {
                        let glyph = b"0123456789"[batch % 10];
                        let mut x = t0;
                        while x < *t {
                            if let Some(c) = col(x) {
                                large[c] = glyph;
                            }
                            x += tick_ms / 2.0;
                        }
                    }
                }
                Event::Fuse { t, .. } => {
                    if let Some(c) = col(*t) {
                        react[c] = b'R';
                    }
                }
                Event::DeadlineMiss { t, .. } => {
                    if let Some(c) = col(*t) {
                        miss[c] = b'!';
                    }
                }
                _ => {}
            }
        }
        let mut out = String::new();
        for (name, row) in [("in", frames), ("L ", large), ("R ", react), ("! ", miss)] {
            let _ = writeln!(out, "{name} {}", String::from_utf8_lossy(&row));
        }
        out
    }
}
