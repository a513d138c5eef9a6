//! Projects an expert action plan through the pinhole camera onto the patch
//! grid and prints the frame next to the resulting mask.

use eta::world::{
    action_to_mask, expert_policy, make_scenario, render_observation, CameraModel, Episode, ScenarioKind,
};

fn main() {
    let cam = CameraModel::default();
    let mut ep = Episode::new(make_scenario(ScenarioKind::LaneChange, 11), cam);
    for _ in 0..20 {
        let plan = expert_policy(&ep.state);
        ep.step(&plan);
    }
    let plan = expert_policy(&ep.state);
    println!("frame at t = {:.1} s:", ep.state.sim_time);
    print!("{}", render_observation(&ep.state, &cam).ascii());
    for p in plan.points() {
        match cam.project_point(p) {
            Some((u, v)) => println!("  ({:6.2}, {:6.2}) m -> pixel ({u:.1}, {v:.1})", p[0], p[1]),
            None => println!("  ({:6.2}, {:6.2}) m -> off image", p[0], p[1]),
        }
    }
    let mask = action_to_mask(&plan, &cam);
    println!("{} of {} patches marked:", mask.count(), mask.rows() * mask.cols());
    print!("{}", mask.render('#', '.'));
}
