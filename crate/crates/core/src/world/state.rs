use serde::{Deserialize, Serialize};

use super::geometry::{Point, Pose, Rect, Route};

/// Vehicle disc radius; two vehicles collide when their centers are closer
/// than twice this.
pub const VEHICLE_RADIUS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NpcScript {
    /// Holds `speed` along its heading unless a hazard intervenes.
    Cruise {
        speed: f64,
    },
    Parked,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NpcPhase {
    Cruising,
    Braking { decel: f64, hold: f64, resume_accel: f64 },
    Stopped { until: f64, resume_accel: f64 },
    Resuming { accel: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Npc {
    pub pose: Pose,
    pub script: NpcScript,
    pub phase: NpcPhase,
}

impl Npc {
    pub fn cruising(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self {
            pose: Pose::new(x, y, heading, speed),
            script: NpcScript::Cruise { speed },
            phase: NpcPhase::Cruising,
        }
    }

    pub fn parked(x: f64, y: f64, heading: f64) -> Self {
        Self {
            pose: Pose::new(x, y, heading, 0.0),
            script: NpcScript::Parked,
            phase: NpcPhase::Cruising,
        }
    }

    /// Brake lights are lit while decelerating or held at a stop.
    pub fn brake_light(&self) -> bool {
        matches!(self.phase, NpcPhase::Braking { .. } | NpcPhase::Stopped { .. })
    }

    /// Current longitudinal acceleration implied by the phase.
    pub fn accel(&self) -> f64 {
        match (self.phase, self.script) {
            (NpcPhase::Braking { decel, .. }, _) => -decel,
            (NpcPhase::Resuming { accel }, _) => accel,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightState {
    Red,
    Green,
}

/// Signal guarding a stop line on the route. Red during `[red_from, red_until)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub state: LightState,
    /// Next time the state changes, or infinity.
    pub switch_time: f64,
    pub position: Point,
    /// Arc length of the stop line along the route.
    pub stop_arc: f64,
    pub red_from: f64,
    pub red_until: f64,
}

impl TrafficLight {
    pub fn state_at(&self, t: f64) -> LightState {
        if t >= self.red_from && t < self.red_until {
            LightState::Red
        } else {
            LightState::Green
        }
    }

    pub fn switch_after(&self, t: f64) -> f64 {
        [self.red_from, self.red_until]
            .into_iter()
            .find(|&s| s > t)
            .unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum HazardKind {
    HardBrake {
        npc: usize,
        decel: f64,
        hold: f64,
        resume_accel: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardEvent {
    pub trigger: f64,
    pub kind: HazardKind,
    pub fired: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub collision: bool,
    pub ran_red_light: bool,
    pub route_completed: bool,
}

impl Flags {
    pub fn terminal(&self) -> bool {
        self.collision || self.ran_red_light || self.route_completed
    }

    pub fn failed(&self) -> bool {
        self.collision || self.ran_red_light
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub sim_time: f64,
    pub ego: Pose,
    /// Longitudinal acceleration over the last step.
    pub ego_accel: f64,
    pub npcs: Vec<Npc>,
    pub traffic_light: Option<TrafficLight>,
    pub route: Route,
    /// Union of these rectangles is the drivable area.
    pub drivable: Vec<Rect>,
    pub hazard_events: Vec<HazardEvent>,
    pub flags: Flags,
}

impl WorldState {
    pub fn new(ego: Pose, route: Route, drivable: Vec<Rect>) -> Self {
        Self {
            sim_time: 0.0,
            ego,
            ego_accel: 0.0,
            npcs: Vec::new(),
            traffic_light: None,
            route,
            drivable,
            hazard_events: Vec::new(),
            flags: Flags::default(),
        }
    }

    pub fn is_drivable(&self, p: Point) -> bool {
        self.drivable.iter().any(|r| r.contains(p))
    }

    /// Ego progress along the route, meters.
    pub fn progress(&self) -> f64 {
        self.route.project(self.ego.position()).0
    }

    pub fn route_fraction(&self) -> f64 {
        (self.progress() / self.route.length()).clamp(0.0, 1.0)
    }

    pub fn light_is_red(&self) -> bool {
        self.traffic_light.is_some_and(|l| l.state == LightState::Red)
    }
}
