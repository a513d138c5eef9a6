//! Writes an expert episode log, reads it back and re-simulates it from the
//! recorded actions alone.

use eta::harness::run_expert_episode;
use eta::world::{make_scenario, CameraModel, EpisodeLog, ExpertConfig, ScenarioKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = make_scenario(ScenarioKind::RedLight, 7);
    let (result, log) = run_expert_episode(&ExpertConfig::default(), &scenario, &CameraModel::default());
    println!(
        "{} seed {}: success {} over {} ticks, route {:.0}%",
        result.kind,
        result.scenario_seed,
        result.success,
        result.ticks,
        100.0 * result.route_fraction
    );

    let mut bytes = Vec::new();
    log.write_to(&mut bytes)?;
    println!("log is {} bytes of JSON lines", bytes.len());
    let back = EpisodeLog::read_from(bytes.as_slice())?;
    let (states, outcome) = back.replay_states()?;
    println!(
        "replayed {} states; success {}, red light {}, collision {}",
        states.len(),
        outcome.success(),
        outcome.ran_red_light,
        outcome.collision
    );
    let last = states.last().expect("episodes have at least one state");
    println!(
        "final ego pose x={:.2} y={:.2} v={:.2}",
        last.ego.x, last.ego.y, last.ego.speed
    );
    Ok(())
}
