//! Line-delimited JSON episode logs: one header line, then one record per
//! tick. Replaying rebuilds the scenario from the header and re-applies the
//! logged residuals.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::action::ActionPlan;
use super::camera::CameraModel;
use super::episode::{Episode, EpisodeOutcome};
use super::geometry::Pose;
use super::scenario::{make_scenario, ScenarioKind};
use super::state::{Flags, WorldState};
use super::WorldError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Whether scripted hazards were stripped from the scenario.
    pub hazards_removed: bool,
    pub camera: CameraModel,
    pub policy: String,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: usize,
    pub sim_time: f64,
    pub ego: Pose,
    pub residuals: Vec<f64>,
    pub flags: Flags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(LogHeader),
    Tick(TickRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
}

impl EpisodeLog {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), WorldError> {
        serde_json::to_writer(&mut w, &Line::Header(self.header.clone()))?;
        w.write_all(b"\n")?;
        for t in &self.ticks {
            serde_json::to_writer(&mut w, &Line::Tick(t.clone()))?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, WorldError> {
        let mut header = None;
        let mut ticks = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Line>(&line)? {
                Line::Header(h) if i == 0 => header = Some(h),
                Line::Tick(t) if header.is_some() => ticks.push(t),
                _ => return Err(WorldError::Log(format!("unexpected record on line {}", i + 1))),
            }
        }
        let header = header.ok_or_else(|| WorldError::Log("missing header".into()))?;
        Ok(Self { header, ticks })
    }

    /// Every world state of the replayed episode, starting with the initial one.
    pub fn replay_states(&self) -> Result<(Vec<WorldState>, EpisodeOutcome), WorldError> {
        let mut scenario = make_scenario(self.header.kind, self.header.seed);
        if self.header.hazards_removed {
            scenario = scenario.without_hazards();
        }
        let mut ep = Episode::new(scenario, self.header.camera);
        let mut states = vec![ep.state.clone()];
        for rec in &self.ticks {
            ActionPlan::from_residual_slice(&rec.residuals)?;
            let got = ep.step_residuals(&rec.residuals);
            if got != *rec {
                return Err(WorldError::ReplayMismatch { tick: rec.tick });
            }
            states.push(ep.state.clone());
        }
        Ok((states, ep.outcome()))
    }
}
