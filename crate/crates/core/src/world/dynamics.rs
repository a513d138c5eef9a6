use super::action::ActionPlan;
use super::geometry::dist;
use super::state::{HazardKind, Npc, NpcPhase, NpcScript, WorldState, VEHICLE_RADIUS};

/// Proportional speed gain of the longitudinal tracker, 1/s.
pub const SPEED_GAIN: f64 = 4.0;
pub const MAX_ACCEL: f64 = 3.0;
pub const MAX_DECEL: f64 = 8.0;
pub const MAX_CURVATURE: f64 = 0.5;
/// Distance short of the route end that counts as completion.
pub const COMPLETION_MARGIN: f64 = 1.0;

/// Pure-pursuit lookahead at speed `v`.
fn lookahead(v: f64) -> f64 {
    (1.5 + 0.5 * v).clamp(2.0, 6.0)
}

/// Curvature that steers the ego origin onto the path point nearest the
/// lookahead distance. Zero for a degenerate path.
pub fn pursuit_curvature(plan: &ActionPlan, v: f64) -> f64 {
    let ld = lookahead(v);
    let target = plan
        .path
        .iter()
        .find(|p| p[0].hypot(p[1]) >= ld)
        .or(plan.path.last())
        .copied()
        .unwrap_or([0.0, 0.0]);
    let d2 = target[0] * target[0] + target[1] * target[1];
    if d2 < 1e-12 {
        return 0.0;
    }
    (2.0 * target[1] / d2).clamp(-MAX_CURVATURE, MAX_CURVATURE)
}

/// Commanded longitudinal acceleration toward `v_target`.
pub fn tracker_accel(v: f64, v_target: f64) -> f64 {
    (SPEED_GAIN * (v_target - v)).clamp(-MAX_DECEL, MAX_ACCEL)
}

fn step_npc(npc: &mut Npc, t_new: f64, dt: f64) {
    let v0 = npc.pose.speed;
    let cruise = match npc.script {
        NpcScript::Cruise { speed } => speed,
        NpcScript::Parked => 0.0,
    };
    let v1 = match npc.phase {
        NpcPhase::Cruising => v0,
        NpcPhase::Braking {
            decel,
            hold,
            resume_accel,
        } => {
            let v = v0 - decel * dt;
            if v <= 1e-9 {
                npc.phase = NpcPhase::Stopped {
                    until: t_new + hold,
                    resume_accel,
                };
                0.0
            } else {
                v
            }
        }
        NpcPhase::Stopped { until, resume_accel } => {
            if t_new >= until {
                npc.phase = NpcPhase::Resuming { accel: resume_accel };
            }
            0.0
        }
        NpcPhase::Resuming { accel } => {
            let v = v0 + accel * dt;
            if v >= cruise {
                npc.phase = NpcPhase::Cruising;
                cruise
            } else {
                v
            }
        }
    };
    let d = 0.5 * (v0 + v1) * dt;
    let (s, c) = npc.pose.heading.sin_cos();
    npc.pose.x += c * d;
    npc.pose.y += s * d;
    npc.pose.speed = v1;
}

/// Advances the world by `dt` seconds with the ego tracking `action`.
///
/// Terminal states are absorbing: once any terminal flag is set the state is
/// returned unchanged apart from the clock.
pub fn step_world(state: &WorldState, action: &ActionPlan, dt: f64) -> WorldState {
    debug_assert!(dt > 0.0);
    let mut next = state.clone();
    let t_new = state.sim_time + dt;
    next.sim_time = t_new;
    if state.flags.terminal() {
        return next;
    }

    let ego = &mut next.ego;
    let v0 = ego.speed;
    let accel = tracker_accel(v0, action.implied_speed());
    let v1 = (v0 + accel * dt).max(0.0);
    next.ego_accel = (v1 - v0) / dt;
    let v_avg = 0.5 * (v0 + v1);
    let kappa = pursuit_curvature(action, v_avg);
    let dh = kappa * v_avg * dt;
    let mid = ego.heading + 0.5 * dh;
    ego.x += v_avg * dt * mid.cos();
    ego.y += v_avg * dt * mid.sin();
    ego.heading += dh;
    ego.speed = v1;

    for npc in &mut next.npcs {
        step_npc(npc, t_new, dt);
    }

    // events fire at the end of the step that reaches their trigger time
    for ev in &mut next.hazard_events {
        if !ev.fired && t_new >= ev.trigger - 1e-9 {
            ev.fired = true;
            match ev.kind {
                HazardKind::HardBrake {
                    npc,
                    decel,
                    hold,
                    resume_accel,
                } => {
                    if let Some(n) = next.npcs.get_mut(npc) {
                        n.phase = NpcPhase::Braking {
                            decel,
                            hold,
                            resume_accel,
                        };
                    }
                }
            }
        }
    }

    let prev_progress = state.progress();
    let progress = next.progress();
    if let Some(light) = next.traffic_light.as_mut() {
        if state.light_is_red() && prev_progress < light.stop_arc && progress >= light.stop_arc {
            next.flags.ran_red_light = true;
        }
        light.state = light.state_at(t_new + 1e-9);
        light.switch_time = light.switch_after(t_new + 1e-9);
    }
    let ego_pos = next.ego.position();
    if next
        .npcs
        .iter()
        .any(|n| dist(n.pose.position(), ego_pos) < 2.0 * VEHICLE_RADIUS)
    {
        next.flags.collision = true;
    }
    if progress >= next.route.length() - COMPLETION_MARGIN {
        next.flags.route_completed = true;
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::action::{ActionPlan, PATH_POINTS, WAYPOINTS, WAYPOINT_TIMES};
    use crate::world::geometry::{Pose, Rect, Route};
    use crate::world::state::HazardEvent;

    fn world(speed: f64) -> WorldState {
        let route = Route::new(vec![[0.0, 0.0], [200.0, 0.0]]).unwrap();
        let road = Rect {
            x0: -10.0,
            x1: 200.0,
            y0: -2.0,
            y1: 2.0,
        };
        WorldState::new(Pose::new(0.0, 0.0, 0.0, speed), route, vec![road])
    }

    fn straight_plan(spacing: f64) -> ActionPlan {
        let mut plan = ActionPlan::stationary();
        for i in 0..PATH_POINTS {
            plan.path[i] = [(i + 1) as f64, 0.0];
        }
        for i in 0..WAYPOINTS {
            plan.waypoints[i] = [spacing * (i + 1) as f64, 0.0];
        }
        plan
    }

    #[test]
    fn zero_plan_leaves_stationary_ego_in_place() {
        let w = world(0.0);
        let next = step_world(&w, &ActionPlan::stationary(), 0.1);
        assert_eq!(next.ego, w.ego);
        assert_eq!(next.sim_time, 0.1);
    }

    #[test]
    fn speed_converges_to_waypoint_rate() {
        // 0.5 m per 0.5 s => 1 m/s
        assert!((straight_plan(0.5).implied_speed() - 1.0).abs() < 1e-12);
        assert_eq!(WAYPOINT_TIMES[0], 0.5);
        let plan = straight_plan(0.5);
        let mut w = world(0.0);
        for _ in 0..200 {
            w = step_world(&w, &plan, 0.01);
        }
        assert!((w.ego.speed - 1.0).abs() < 0.05, "{}", w.ego.speed);
        assert!(w.ego.y.abs() < 1e-12);
    }

    #[test]
    fn scripted_hard_brake_stops_the_npc() {
        let mut w = world(0.0);
        w.npcs.push(Npc::cruising(50.0, 0.0, 0.0, 6.0));
        w.hazard_events.push(HazardEvent {
            trigger: 3.0,
            kind: HazardKind::HardBrake {
                npc: 0,
                decel: 12.0,
                hold: 10.0,
                resume_accel: 2.0,
            },
            fired: false,
        });
        let plan = ActionPlan::stationary();
        let mut stopped_at = None;
        for k in 1..=60 {
            w = step_world(&w, &plan, 0.1);
            if k == 30 {
                assert!(w.npcs[0].brake_light());
                assert_eq!(w.npcs[0].pose.speed, 6.0);
            }
            if stopped_at.is_none() && w.npcs[0].pose.speed == 0.0 {
                stopped_at = Some(w.sim_time);
            }
        }
        // 6 m/s at 12 m/s^2 takes 0.5 s
        let t = stopped_at.unwrap();
        assert!((t - 3.5).abs() < 1e-6, "{t}");
    }

    #[test]
    fn collision_is_terminal_and_absorbing() {
        let mut w = world(5.0);
        w.npcs.push(Npc::parked(2.3, 0.0, 0.0));
        let next = step_world(&w, &straight_plan(2.5), 0.1);
        assert!(next.flags.collision);
        let after = step_world(&next, &straight_plan(2.5), 0.1);
        assert_eq!(after.ego, next.ego);
    }
}
