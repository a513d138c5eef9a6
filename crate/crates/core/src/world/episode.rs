use serde::{Deserialize, Serialize};

use super::action::ActionPlan;
use super::camera::CameraModel;
use super::dynamics::step_world;
use super::expert::{expert_policy_with, Conditioning, ExpertConfig};
use super::log::TickRecord;
use super::render::{render_observation, FrameTensor};
use super::scenario::{Scenario, ScenarioKind};
use super::state::WorldState;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub ticks: usize,
    pub collision: bool,
    pub ran_red_light: bool,
    pub route_completed: bool,
    /// Fraction of the route covered, in `[0, 1]`.
    pub route_fraction: f64,
    /// First tick whose resulting state was in collision.
    pub collision_tick: Option<usize>,
}

impl EpisodeOutcome {
    pub fn success(&self) -> bool {
        self.route_completed && !self.collision && !self.ran_red_light
    }
}

/// A scenario being played out one control tick at a time.
#[derive(Clone, Debug)]
pub struct Episode {
    pub scenario: Scenario,
    pub state: WorldState,
    pub tick: usize,
    pub cam: CameraModel,
    collision_tick: Option<usize>,
}

impl Episode {
    pub fn new(scenario: Scenario, cam: CameraModel) -> Self {
        let state = scenario.initial.clone();
        Self {
            scenario,
            state,
            tick: 0,
            cam,
            collision_tick: None,
        }
    }

    pub fn observe(&self) -> FrameTensor {
        render_observation(&self.state, &self.cam)
    }

    pub fn conditioning(&self) -> Conditioning {
        Conditioning::from_state(&self.state)
    }

    pub fn done(&self) -> bool {
        self.state.flags.terminal() || self.tick >= self.scenario.max_ticks
    }

    /// Applies `action` for one tick through its residual encoding, so that
    /// the logged residuals replay bit-exactly.
    pub fn step(&mut self, action: &ActionPlan) -> TickRecord {
        self.step_residuals(&action.residual_vec())
    }

    /// Applies the plan with these 28 residuals and records them verbatim.
    /// Malformed residuals act as the stationary plan.
    pub fn step_residuals(&mut self, residuals: &[f64]) -> TickRecord {
        let residuals = residuals.to_vec();
        let plan = ActionPlan::from_residual_slice(&residuals).unwrap_or_default();
        self.state = step_world(&self.state, &plan, self.scenario.dt);
        self.tick += 1;
        if self.state.flags.collision && self.collision_tick.is_none() {
            self.collision_tick = Some(self.tick);
        }
        TickRecord {
            tick: self.tick,
            sim_time: self.state.sim_time,
            ego: self.state.ego,
            residuals,
            flags: self.state.flags,
        }
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        let f = self.state.flags;
        EpisodeOutcome {
            kind: self.scenario.kind,
            seed: self.scenario.seed,
            ticks: self.tick,
            collision: f.collision,
            ran_red_light: f.ran_red_light,
            route_completed: f.route_completed,
            route_fraction: if f.route_completed {
                1.0
            } else {
                self.state.route_fraction()
            },
            collision_tick: self.collision_tick,
        }
    }
}

/// Drives a scenario with the expert to termination.
pub fn run_expert(scenario: &Scenario, cam: &CameraModel, cfg: &ExpertConfig) -> (EpisodeOutcome, Vec<TickRecord>) {
    let mut ep = Episode::new(scenario.clone(), *cam);
    let mut log = Vec::new();
    while !ep.done() {
        let plan = expert_policy_with(&ep.state, cfg);
        log.push(ep.step(&plan));
    }
    (ep.outcome(), log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::scenario::make_scenario;

    #[test]
    fn expert_completes_every_scenario_kind() {
        let cam = CameraModel::default();
        for kind in ScenarioKind::ALL {
            for seed in 0..10 {
                let (out, _) = run_expert(&make_scenario(kind, seed), &cam, &ExpertConfig::default());
                assert!(out.success(), "{out:?}");
            }
        }
    }

    #[test]
    fn hard_brake_frames_match_the_no_brake_episode_until_the_trigger() {
        let cam = CameraModel::default();
        for seed in 0..10 {
            let s = make_scenario(ScenarioKind::HardBrake, seed);
            let trigger = s.hazard_tick.unwrap();
            let mut a = Episode::new(s.clone(), cam);
            let mut b = Episode::new(s.without_hazards(), cam);
            for tick in 0..=trigger {
                let same = a.observe() == b.observe();
                assert_eq!(same, tick < trigger, "seed {seed} tick {tick}");
                // Both worlds take the same action, so only the hazard differs.
                let plan = expert_policy_with(&b.state, &ExpertConfig::default());
                a.step(&plan);
                b.step(&plan);
            }
        }
    }
}
