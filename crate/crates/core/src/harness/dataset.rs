//! Expert demonstrations paired across the staleness window, and their
//! record file.
//!
//! File layout (little-endian): magic `ETAD`, a version byte, a `u32`-length
//! JSON header, a `u64` sample count, then one `u32`-length-prefixed binary
//! record per sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::dynamics::{pursuit_curvature, tracker_accel};
use crate::world::geometry::dist;
use crate::world::{
    action_to_mask, expert_policy_with, ActionPlan, CameraModel, Conditioning, Episode, ExpertConfig, FrameTensor,
    PatchMask, Scenario, ScenarioKind, WorldState, ACTION_POINTS, TARGET_COUNT,
};

pub const MAGIC: &[u8; 4] = b"ETAD";
pub const VERSION: u8 = 1;
const FRAME_H: usize = 32;
const FRAME_W: usize = 64;
const FRAME_BYTES: usize = crate::world::CHANNELS * FRAME_H * FRAME_W;
/// Constant-velocity look-ahead for the vehicle-hazard predicates, seconds.
pub const HAZARD_HORIZON: f64 = 2.0;

/// Which side of the ego a predicted collision comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardSides {
    pub front: bool,
    pub rear: bool,
    pub side: bool,
}

/// Quantities the bucket predicates read, captured at the sample tick.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub speed: f64,
    /// Longitudinal acceleration the expert's plan commands.
    pub accel: f64,
    /// Pure-pursuit curvature of the expert path, positive to the left.
    pub curvature: f64,
    pub red_light_in_range: bool,
    pub hazards: HazardSides,
}

impl SampleInfo {
    pub fn capture(state: &WorldState, plan: &ActionPlan, expert: &ExpertConfig) -> Self {
        let v = state.ego.speed;
        let red_light_in_range = state.light_is_red()
            && state.traffic_light.is_some_and(|l| {
                let d = l.stop_arc - state.progress();
                (0.0..=expert.red_light_range).contains(&d)
            });
        Self {
            speed: v,
            accel: tracker_accel(v, plan.implied_speed()),
            curvature: pursuit_curvature(plan, v),
            red_light_in_range,
            hazards: hazard_sides(state),
        }
    }
}

/// Extrapolates every vehicle at constant speed and heading and reports the
/// bearing class of each one predicted to touch the ego.
pub fn hazard_sides(state: &WorldState) -> HazardSides {
    let mut out = HazardSides::default();
    let step = 0.1;
    let ego = state.ego;
    let at = |x: f64, y: f64, h: f64, v: f64, t: f64| [x + h.cos() * v * t, y + h.sin() * v * t];
    for n in &state.npcs {
        let p = n.pose;
        let hit = (0..=(HAZARD_HORIZON / step).round() as usize).any(|k| {
            let t = k as f64 * step;
            dist(
                at(ego.x, ego.y, ego.heading, ego.speed, t),
                at(p.x, p.y, p.heading, p.speed, t),
            ) < 2.0 * crate::world::state::VEHICLE_RADIUS
        });
        if !hit {
            continue;
        }
        let local = ego.to_local(p.position());
        let bearing = local[1].atan2(local[0]).abs().to_degrees();
        if bearing <= 30.0 {
            out.front = true;
        } else if bearing >= 150.0 {
            out.rear = true;
        } else {
            out.side = true;
        }
    }
    out
}

/// Two observations `Δ` apart with everything the objectives need.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Tick of the current frame; the past frame is `tick - delta_ticks`.
    pub tick: usize,
    pub delta_ticks: usize,
    pub frame_now: Arc<[u8]>,
    pub frame_prev: Arc<[u8]>,
    pub cond_now: Conditioning,
    pub cond_prev: Conditioning,
    /// Expert residuals at the current tick, point-major.
    pub action_now: Vec<f64>,
    pub action_prev: Vec<f64>,
    pub mask: PatchMask,
    pub info: SampleInfo,
}

impl Sample {
    pub fn frame_now(&self) -> FrameTensor {
        FrameTensor::from_bytes(FRAME_H, FRAME_W, &self.frame_now).expect("frame size checked on load")
    }

    pub fn frame_prev(&self) -> FrameTensor {
        FrameTensor::from_bytes(FRAME_H, FRAME_W, &self.frame_prev).expect("frame size checked on load")
    }

    pub fn plan_now(&self) -> ActionPlan {
        ActionPlan::from_residual_slice(&self.action_now).expect("finite residuals")
    }

    pub fn plan_prev(&self) -> ActionPlan {
        ActionPlan::from_residual_slice(&self.action_prev).expect("finite residuals")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Ticks played, i.e. frames observed.
    pub ticks: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u8,
    pub delta_ticks: usize,
    pub camera: CameraModel,
    pub expert: ExpertConfig,
    pub config_hash: String,
    pub seed: u64,
    pub episodes: Vec<EpisodeEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

/// Episode horizon and pairing used for collection.
#[derive(Clone, Debug)]
pub struct CollectOptions {
    pub delta_ticks: usize,
    /// Truncates every episode to at most this many ticks.
    pub max_ticks: Option<usize>,
    pub camera: CameraModel,
    pub expert: ExpertConfig,
    pub config_hash: String,
    pub seed: u64,
}

struct TickData {
    frame: Arc<[u8]>,
    cond: Conditioning,
    plan: ActionPlan,
    info: SampleInfo,
}

/// Rolls the expert through every scenario and pairs each tick `t >= Δ`
/// with tick `t - Δ`.
pub fn collect_dataset(suite: &[Scenario], opts: &CollectOptions) -> Result<Dataset> {
    if opts.delta_ticks == 0 {
        return Err(Error::Config("delta must be at least one tick".into()));
    }
    let mut samples = Vec::new();
    let mut episodes = Vec::new();
    for scenario in suite {
        let limit = opts.max_ticks.unwrap_or(usize::MAX);
        let mut ep = Episode::new(scenario.clone(), opts.camera);
        let mut ticks: Vec<TickData> = Vec::new();
        while !ep.done() && ticks.len() < limit {
            let plan = expert_policy_with(&ep.state, &opts.expert);
            ticks.push(TickData {
                frame: ep.observe().to_bytes().into(),
                cond: ep.conditioning(),
                info: SampleInfo::capture(&ep.state, &plan, &opts.expert),
                plan: ActionPlan::from_residual_slice(&plan.residual_vec())?,
            });
            ep.step(&plan);
        }
        let out = ep.outcome();
        let truncated = ticks.len() >= limit && !ep.done();
        if out.collision || out.ran_red_light || !(out.route_completed || truncated) {
            return Err(Error::ExpertFailure {
                kind: scenario.kind.to_string(),
                seed: scenario.seed,
                detail: format!("{out:?}"),
            });
        }
        let d = opts.delta_ticks;
        let before = samples.len();
        for t in d..ticks.len() {
            let (now, prev) = (&ticks[t], &ticks[t - d]);
            samples.push(Sample {
                kind: scenario.kind,
                seed: scenario.seed,
                tick: t,
                delta_ticks: d,
                frame_now: now.frame.clone(),
                frame_prev: prev.frame.clone(),
                cond_now: now.cond,
                cond_prev: prev.cond,
                action_now: now.plan.residual_vec(),
                action_prev: prev.plan.residual_vec(),
                mask: action_to_mask(&now.plan, &opts.camera),
                info: now.info,
            });
        }
        episodes.push(EpisodeEntry {
            kind: scenario.kind,
            seed: scenario.seed,
            ticks: ticks.len(),
            samples: samples.len() - before,
        });
    }
    Ok(Dataset {
        header: DatasetHeader {
            version: VERSION,
            delta_ticks: opts.delta_ticks,
            camera: opts.camera,
            expert: opts.expert,
            config_hash: opts.config_hash.clone(),
            seed: opts.seed,
            episodes,
        },
        samples,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Every stored mask matches the projection of its stored action.
    pub fn check_masks(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if action_to_mask(&s.plan_now(), &self.header.camera) != s.mask {
                return Err(Error::Data(format!("sample {i}: mask does not match its action")));
            }
        }
        Ok(())
    }

    /// Samples whose scenario kind is in `kinds`.
    pub fn filter_kinds(&self, kinds: &[ScenarioKind]) -> Dataset {
        Dataset {
            header: self.header.clone(),
            samples: self
                .samples
                .iter()
                .filter(|s| kinds.contains(&s.kind))
                .cloned()
                .collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        let mut rec = Vec::new();
        for s in &self.samples {
            rec.clear();
            encode_sample(s, &mut rec);
            w.write_all(&(rec.len() as u32).to_le_bytes())?;
            w.write_all(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic[..4] != MAGIC {
            return Err(Error::Data("not a dataset file".into()));
        }
        if magic[4] != VERSION {
            return Err(Error::Data(format!("unsupported dataset version {}", magic[4])));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let mut header = vec![0u8; u32::from_le_bytes(b4) as usize];
        r.read_exact(&mut header)?;
        let header: DatasetHeader = serde_json::from_slice(&header)?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut samples = Vec::with_capacity(n);
        let mut rec = Vec::new();
        for i in 0..n {
            r.read_exact(&mut b4)?;
            rec.resize(u32::from_le_bytes(b4) as usize, 0);
            r.read_exact(&mut rec)?;
            samples.push(decode_sample(&rec).ok_or_else(|| Error::Data(format!("record {i} is malformed")))?);
        }
        Ok(Self { header, samples })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn encode_sample(s: &Sample, out: &mut Vec<u8>) {
    let kind = ScenarioKind::ALL.iter().position(|&k| k == s.kind).expect("known kind") as u8;
    out.push(kind);
    out.extend_from_slice(&s.seed.to_le_bytes());
    out.extend_from_slice(&(s.tick as u32).to_le_bytes());
    out.extend_from_slice(&(s.delta_ticks as u32).to_le_bytes());
    put_f64s(out, &s.cond_now.to_vec());
    put_f64s(out, &s.cond_prev.to_vec());
    put_f64s(out, &s.action_now);
    put_f64s(out, &s.action_prev);
    out.extend(s.mask.cells().iter().map(|&c| c as u8));
    put_f64s(out, &[s.info.speed, s.info.accel, s.info.curvature]);
    let h = s.info.hazards;
    out.extend_from_slice(&[
        s.info.red_light_in_range as u8,
        h.front as u8,
        h.rear as u8,
        h.side as u8,
    ]);
    out.extend_from_slice(&s.frame_now);
    out.extend_from_slice(&s.frame_prev);
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Some(a)
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Some(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        )
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }
}

fn cond_from(v: &[f64]) -> Conditioning {
    let mut targets = [[0.0; 2]; TARGET_COUNT];
    for (i, t) in targets.iter_mut().enumerate() {
        *t = [v[1 + 2 * i], v[2 + 2 * i]];
    }
    Conditioning { speed: v[0], targets }
}

fn decode_sample(rec: &[u8]) -> Option<Sample> {
    let mut c = Cursor { buf: rec };
    let kind = *ScenarioKind::ALL.get(c.take(1)?[0] as usize)?;
    let seed = u64::from_le_bytes(c.take(8)?.try_into().ok()?);
    let tick = c.u32()? as usize;
    let delta_ticks = c.u32()? as usize;
    let cond_dim = 1 + 2 * TARGET_COUNT;
    let cond_now = cond_from(&c.f64s(cond_dim)?);
    let cond_prev = cond_from(&c.f64s(cond_dim)?);
    let action_now = c.f64s(2 * ACTION_POINTS)?;
    let action_prev = c.f64s(2 * ACTION_POINTS)?;
    let cam = CameraModel::default();
    let (rows, cols) = (cam.height / crate::world::PATCH, cam.width / crate::world::PATCH);
    let mask_bytes = c.take(rows * cols)?;
    let mask = PatchMask::from_cells(rows, cols, mask_bytes.iter().map(|&b| b != 0).collect())?;
    let info = c.f64s(3)?;
    let flags = c.take(4)?;
    let frame_now: Arc<[u8]> = c.take(FRAME_BYTES)?.into();
    let frame_prev: Arc<[u8]> = c.take(FRAME_BYTES)?.into();
    if !c.buf.is_empty() {
        return None;
    }
    Some(Sample {
        kind,
        seed,
        tick,
        delta_ticks,
        frame_now,
        frame_prev,
        cond_now,
        cond_prev,
        action_now,
        action_prev,
        mask,
        info: SampleInfo {
            speed: info[0],
            accel: info[1],
            curvature: info[2],
            red_light_in_range: flags[0] != 0,
            hazards: HazardSides {
                front: flags[1] != 0,
                rear: flags[2] != 0,
                side: flags[3] != 0,
            },
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::make_scenario;

    fn opts() -> CollectOptions {
        CollectOptions {
            delta_ticks: 5,
            max_ticks: Some(30),
            camera: CameraModel::default(),
            expert: ExpertConfig::default(),
            config_hash: "test".into(),
            seed: 0,
        }
    }

    #[test]
    fn sample_count_and_round_trip() {
        let suite: Vec<_> = [ScenarioKind::HardBrake, ScenarioKind::RedLight]
            .into_iter()
            .map(|k| make_scenario(k, 1))
            .collect();
        let ds = collect_dataset(&suite, &opts()).unwrap();
        assert_eq!(ds.len(), 2 * 25);
        ds.check_masks().unwrap();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let back = Dataset::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn pairs_are_delta_apart() {
        let ds = collect_dataset(&[make_scenario(ScenarioKind::Merge, 0)], &opts()).unwrap();
        for w in ds.samples.windows(6) {
            assert_eq!(w[5].frame_prev, w[0].frame_now);
        }
    }
}
