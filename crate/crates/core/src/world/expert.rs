//! Rule-based driver used to collect demonstrations.

use serde::{Deserialize, Serialize};

use super::action::{ActionPlan, PATH_POINTS, PATH_SPACING, WAYPOINTS, WAYPOINT_TIMES};
use super::dynamics::tracker_accel;
use super::geometry::{dist, Point};
use super::state::{Npc, NpcPhase, NpcScript, WorldState};

/// Route targets fed to the policy as conditioning.
pub const TARGET_COUNT: usize = 2;
/// Arc distances ahead of the ego at which route targets are taken.
pub const TARGET_ARCS: [f64; TARGET_COUNT] = [5.0, 12.0];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub target_speed: f64,
    pub speed_step: f64,
    /// Red lights closer than this along the route force a stop.
    pub red_light_range: f64,
    pub horizon: f64,
    pub horizon_step: f64,
    /// Predicted center distance below which a candidate speed is unsafe.
    pub safety_distance: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            target_speed: 6.0,
            speed_step: 0.5,
            red_light_range: 15.0,
            horizon: 2.0,
            horizon_step: 0.1,
            safety_distance: 3.0,
        }
    }
}

/// Speed and route targets in the ego frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub speed: f64,
    pub targets: [Point; TARGET_COUNT],
}

impl Conditioning {
    pub fn from_state(state: &WorldState) -> Self {
        let s = state.progress();
        let mut targets = [[0.0; 2]; TARGET_COUNT];
        for (t, a) in targets.iter_mut().zip(TARGET_ARCS) {
            *t = state.ego.to_local(state.route.point_at(s + a));
        }
        Self {
            speed: state.ego.speed,
            targets,
        }
    }

    /// `[speed, x0, y0, x1, y1]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.speed];
        v.extend(self.targets.iter().flatten());
        v
    }
}

fn npc_speed_after(npc: &Npc, t: f64) -> (f64, f64) {
    // (distance travelled, speed) under the current phase's acceleration
    let v0 = npc.pose.speed;
    let a = match npc.phase {
        NpcPhase::Braking { decel, .. } => -decel,
        NpcPhase::Resuming { accel } => accel,
        _ => 0.0,
    };
    let cap = match npc.script {
        NpcScript::Cruise { speed } if a > 0.0 => speed,
        _ => f64::INFINITY,
    };
    if a < 0.0 {
        let t_stop = v0 / -a;
        let tt = t.min(t_stop);
        (v0 * tt + 0.5 * a * tt * tt, (v0 + a * tt).max(0.0))
    } else if a > 0.0 {
        let t_cap = ((cap - v0) / a).max(0.0);
        let tt = t.min(t_cap);
        let d = v0 * tt + 0.5 * a * tt * tt;
        let v = (v0 + a * tt).min(cap);
        (d + v * (t - tt), v)
    } else {
        (v0 * t, v0)
    }
}

fn predicted_npc_position(npc: &Npc, t: f64) -> Point {
    let (d, _) = npc_speed_after(npc, t);
    let (s, c) = npc.pose.heading.sin_cos();
    [npc.pose.x + c * d, npc.pose.y + s * d]
}

/// Whether driving the route at `v_cmd` keeps every NPC ahead of the ego
/// beyond the safety distance over the horizon.
fn candidate_is_safe(state: &WorldState, ahead: &[&Npc], v_cmd: f64, cfg: &ExpertConfig) -> bool {
    let dt = cfg.horizon_step;
    let steps = (cfg.horizon / dt).round() as usize;
    let (mut s, mut v) = (state.progress(), state.ego.speed);
    for k in 1..=steps {
        let v1 = (v + tracker_accel(v, v_cmd) * dt).max(0.0);
        s += 0.5 * (v + v1) * dt;
        v = v1;
        let ego = state.route.point_at(s);
        let t = k as f64 * dt;
        if ahead
            .iter()
            .any(|n| dist(predicted_npc_position(n, t), ego) < cfg.safety_distance)
        {
            return false;
        }
    }
    true
}

/// Highest safe commanded speed, honoring red lights.
pub fn expert_speed(state: &WorldState, cfg: &ExpertConfig) -> f64 {
    let s = state.progress();
    if let Some(light) = state.traffic_light.filter(|_| state.light_is_red()) {
        let d = light.stop_arc - s;
        if (0.0..=cfg.red_light_range).contains(&d) {
            return 0.0;
        }
    }
    let ahead: Vec<&Npc> = state
        .npcs
        .iter()
        .filter(|n| state.ego.to_local(n.pose.position())[0] > 0.0)
        .collect();
    let n = (cfg.target_speed / cfg.speed_step).round() as usize;
    (0..=n)
        .rev()
        .map(|i| i as f64 * cfg.speed_step)
        .find(|&v| candidate_is_safe(state, &ahead, v, cfg))
        .unwrap_or(0.0)
}

/// Path along the route centerline; waypoints where the commanded speed would
/// place the ego at each waypoint time.
pub fn expert_policy_with(state: &WorldState, cfg: &ExpertConfig) -> ActionPlan {
    let s = state.progress();
    let v_cmd = expert_speed(state, cfg);
    let local = |arc: f64| state.ego.to_local(state.route.point_at(arc));
    let mut plan = ActionPlan::stationary();
    for i in 0..PATH_POINTS {
        plan.path[i] = local(s + PATH_SPACING * (i + 1) as f64);
    }
    for (i, t) in WAYPOINT_TIMES.iter().enumerate().take(WAYPOINTS) {
        plan.waypoints[i] = local(s + v_cmd * t);
    }
    plan
}

pub fn expert_policy(state: &WorldState) -> ActionPlan {
    expert_policy_with(state, &ExpertConfig::default())
}
