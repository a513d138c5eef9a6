//! Deterministic planar driving world: scripted scenarios, a rule-based
//! expert, a semantic front-camera renderer and the projection of plans into
//! per-patch masks.

pub mod action;
pub mod camera;
pub mod dynamics;
pub mod episode;
pub mod expert;
pub mod geometry;
pub mod log;
pub mod mask;
pub mod render;
pub mod scenario;
pub mod state;

pub use action::{ActionPlan, Residuals, ACTION_POINTS, PATH_POINTS, WAYPOINTS, WAYPOINT_TIMES};
pub use camera::{project_point, CameraModel};
pub use dynamics::step_world;
pub use episode::{run_expert, Episode, EpisodeOutcome};
pub use expert::{expert_policy, expert_policy_with, Conditioning, ExpertConfig, TARGET_COUNT};
pub use geometry::{Point, Pose, Rect, Route};
pub use log::{EpisodeLog, LogHeader, TickRecord};
pub use mask::{action_to_mask, PatchMask, PATCH};
pub use render::{render_observation, FrameTensor, CHANNELS};
pub use scenario::{make_scenario, make_scenario_named, Scenario, ScenarioKind};
pub use state::{Flags, LightState, Npc, WorldState};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("unknown scenario kind `{0}`")]
    UnknownScenario(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("{what}: expected {expected} values, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("episode log: {0}")]
    Log(String),
    #[error("replay diverged from the log at tick {tick}")]
    ReplayMismatch { tick: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
