//! Seeded scenario construction.
//!
//! All scenarios share a two-lane road along the world x axis: the ego lane is
//! centered on `y = 0` and the left lane on `y = LANE_WIDTH`. The ego starts at
//! the origin (on a ramp for `merge`) cruising at the expert's target speed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Pose, Rect, Route};
use super::state::{HazardEvent, HazardKind, Npc, TrafficLight, WorldState};
use super::WorldError;

pub const LANE_WIDTH: f64 = 3.5;
pub const TICK: f64 = 0.1;
pub const EGO_START_SPEED: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    HardBrake,
    LaneChange,
    RedLight,
    GiveWay,
    Merge,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::HardBrake,
        ScenarioKind::LaneChange,
        ScenarioKind::RedLight,
        ScenarioKind::GiveWay,
        ScenarioKind::Merge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::HardBrake => "hard_brake",
            ScenarioKind::LaneChange => "lane_change",
            ScenarioKind::RedLight => "red_light",
            ScenarioKind::GiveWay => "give_way",
            ScenarioKind::Merge => "merge",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| WorldError::UnknownScenario(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub initial: WorldState,
    pub dt: f64,
    pub max_ticks: usize,
    /// First tick whose state, and so whose frame, shows the scripted hazard.
    pub hazard_tick: Option<usize>,
    /// Latest time by which the ego must start reacting to the hazard.
    pub t_react: Option<f64>,
}

impl Scenario {
    /// The same episode with every scripted hazard removed.
    pub fn without_hazards(&self) -> Self {
        let mut s = self.clone();
        s.initial.hazard_events.clear();
        s.hazard_tick = None;
        s.t_react = None;
        s
    }

    pub fn has_hazards(&self) -> bool {
        !self.initial.hazard_events.is_empty()
    }
}

fn rng_for(kind: ScenarioKind, seed: u64) -> ChaCha8Rng {
    let salt = kind as u64 + 1;
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt)
}

fn two_lane_road(x_end: f64) -> Rect {
    Rect {
        x0: -20.0,
        x1: x_end,
        y0: -0.5 * LANE_WIDTH,
        y1: 1.5 * LANE_WIDTH,
    }
}

fn straight_route(len: f64) -> Route {
    Route::new(vec![[0.0, 0.0], [len, 0.0]]).expect("nondegenerate")
}

fn ego() -> Pose {
    Pose::new(0.0, 0.0, 0.0, EGO_START_SPEED)
}

/// Lead vehicle cruising at the ego's speed brakes hard at a seeded tick.
pub const HARD_BRAKE_DECEL: f64 = 12.0;
/// Reaction deadline after the brake light appears.
pub const HARD_BRAKE_REACT: f64 = 0.3;

fn hard_brake(seed: u64, rng: &mut ChaCha8Rng) -> Scenario {
    let len = 50.0;
    let gap = 5.8 + rng.gen_range(0.0..0.3);
    let tick: usize = rng.gen_range(20..=28);
    let trigger = tick as f64 * TICK;
    let mut w = WorldState::new(ego(), straight_route(len), vec![two_lane_road(len + 40.0)]);
    w.npcs.push(Npc::cruising(gap, 0.0, 0.0, EGO_START_SPEED));
    w.hazard_events.push(HazardEvent {
        trigger,
        kind: HazardKind::HardBrake {
            npc: 0,
            decel: HARD_BRAKE_DECEL,
            hold: 1.5,
            resume_accel: 2.5,
        },
        fired: false,
    });
    Scenario {
        kind: ScenarioKind::HardBrake,
        seed,
        initial: w,
        dt: TICK,
        max_ticks: 150,
        hazard_tick: Some(tick),
        t_react: Some(trigger + HARD_BRAKE_REACT),
    }
}

/// A parked car blocks the ego lane; the route moves to the left lane, where a
/// slower car is already driving.
fn lane_change(seed: u64, rng: &mut ChaCha8Rng) -> Scenario {
    let len_x = 55.0;
    let route =
        Route::new(vec![[0.0, 0.0], [12.0, 0.0], [22.0, LANE_WIDTH], [len_x, LANE_WIDTH]]).expect("nondegenerate");
    let mut w = WorldState::new(ego(), route, vec![two_lane_road(len_x + 40.0)]);
    w.npcs.push(Npc::parked(36.0 + rng.gen_range(0.0..2.0), 0.0, 0.0));
    let slow = 5.0 + rng.gen_range(0.0..0.5);
    w.npcs
        .push(Npc::cruising(20.0 + rng.gen_range(0.0..4.0), LANE_WIDTH, 0.0, slow));
    Scenario {
        kind: ScenarioKind::LaneChange,
        seed,
        initial: w,
        dt: TICK,
        max_ticks: 150,
        hazard_tick: None,
        t_react: None,
    }
}

/// Distance before the stop line at which the signal turns red.
pub const RED_LIGHT_WARNING: f64 = 20.0;

fn red_light(seed: u64, rng: &mut ChaCha8Rng) -> Scenario {
    let red_tick: usize = rng.gen_range(10..=20);
    let red_from = red_tick as f64 * TICK;
    let red_for = rng.gen_range(25..=35) as f64 * TICK;
    let stop = RED_LIGHT_WARNING + EGO_START_SPEED * red_from;
    let len = stop + 25.0;
    let mut w = WorldState::new(ego(), straight_route(len), vec![two_lane_road(len + 40.0)]);
    w.traffic_light = Some(TrafficLight {
        state: super::state::LightState::Green,
        switch_time: red_from,
        position: [stop, 0.0],
        stop_arc: stop,
        red_from,
        red_until: red_from + red_for,
    });
    Scenario {
        kind: ScenarioKind::RedLight,
        seed,
        initial: w,
        dt: TICK,
        max_ticks: 150,
        hazard_tick: None,
        t_react: None,
    }
}

/// Crossing road position for `give_way`.
pub const CROSSING_X: f64 = 30.0;

/// Approach speed of the crossing car, spread over `[4, 8]` m/s by seed.
pub fn give_way_speed(seed: u64) -> f64 {
    4.0 + 4.0 * (seed % 10) as f64 / 9.0
}

fn give_way(seed: u64, _rng: &mut ChaCha8Rng) -> Scenario {
    let len = 50.0;
    let v = give_way_speed(seed);
    // arrives at the ego lane when an undisturbed ego would
    let arrival = CROSSING_X / EGO_START_SPEED;
    let cross = Rect {
        x0: CROSSING_X - 0.5 * LANE_WIDTH,
        x1: CROSSING_X + 0.5 * LANE_WIDTH,
        y0: -60.0,
        y1: 60.0,
    };
    let mut w = WorldState::new(ego(), straight_route(len), vec![two_lane_road(len + 40.0), cross]);
    w.npcs
        .push(Npc::cruising(CROSSING_X, v * arrival, -std::f64::consts::FRAC_PI_2, v));
    Scenario {
        kind: ScenarioKind::GiveWay,
        seed,
        initial: w,
        dt: TICK,
        max_ticks: 140,
        hazard_tick: None,
        t_react: None,
    }
}

fn merge(seed: u64, rng: &mut ChaCha8Rng) -> Scenario {
    let len_x = 50.0;
    let route =
        Route::new(vec![[0.0, -LANE_WIDTH], [15.0, -LANE_WIDTH], [25.0, 0.0], [len_x, 0.0]]).expect("nondegenerate");
    let ramp = Rect {
        x0: -20.0,
        x1: 25.0,
        y0: -1.5 * LANE_WIDTH,
        y1: -0.5 * LANE_WIDTH,
    };
    let start = Pose::new(0.0, -LANE_WIDTH, 0.0, EGO_START_SPEED);
    let mut w = WorldState::new(start, route, vec![two_lane_road(len_x + 40.0), ramp]);
    let v = 3.5 + rng.gen_range(0.0..1.0);
    w.npcs.push(Npc::cruising(12.0 + rng.gen_range(0.0..4.0), 0.0, 0.0, v));
    Scenario {
        kind: ScenarioKind::Merge,
        seed,
        initial: w,
        dt: TICK,
        max_ticks: 150,
        hazard_tick: None,
        t_react: None,
    }
}

pub fn make_scenario(kind: ScenarioKind, seed: u64) -> Scenario {
    let mut rng = rng_for(kind, seed);
    match kind {
        ScenarioKind::HardBrake => hard_brake(seed, &mut rng),
        ScenarioKind::LaneChange => lane_change(seed, &mut rng),
        ScenarioKind::RedLight => red_light(seed, &mut rng),
        ScenarioKind::GiveWay => give_way(seed, &mut rng),
        ScenarioKind::Merge => merge(seed, &mut rng),
    }
}

/// Parses a scenario name and builds it.
pub fn make_scenario_named(kind: &str, seed: u64) -> Result<Scenario, WorldError> {
    Ok(make_scenario(kind.parse()?, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_unknown_is_an_error() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!(make_scenario_named("roundabout", 0).is_err());
    }

    #[test]
    fn construction_is_deterministic_per_seed() {
        for k in ScenarioKind::ALL {
            assert_eq!(make_scenario(k, 3), make_scenario(k, 3));
        }
        assert_ne!(
            make_scenario(ScenarioKind::HardBrake, 0),
            make_scenario(ScenarioKind::HardBrake, 1)
        );
    }

    #[test]
    fn hard_brake_trigger_precedes_reaction_by_three_ticks() {
        let s = make_scenario(ScenarioKind::HardBrake, 0);
        let trig = s.initial.hazard_events[0].trigger;
        assert!((s.t_react.unwrap() - 0.3 - trig).abs() < 1e-12);
        // hidden from a view half a second old
        assert!(s.t_react.unwrap() - 0.5 < trig);
    }

    #[test]
    fn red_light_turns_red_twenty_meters_out() {
        let s = make_scenario(ScenarioKind::RedLight, 0);
        let l = s.initial.traffic_light.unwrap();
        let ego_x_at_red = EGO_START_SPEED * l.red_from;
        assert!((l.stop_arc - ego_x_at_red - 20.0).abs() < 1e-9);
    }

    #[test]
    fn give_way_speeds_are_distinct_and_in_range() {
        let mut v: Vec<f64> = (0..10).map(give_way_speed).collect();
        assert!(v.iter().all(|s| (4.0..=8.0).contains(s)));
        v.dedup();
        assert_eq!(v.len(), 10);
    }
}
