//! Scenario predicates that partition training samples, with the weights
//! that oversample rare, action-critical situations.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use crate::world::dynamics::MAX_ACCEL;
use crate::world::ScenarioKind;

/// Bands of commanded acceleration as fractions of the maximum.
pub const LIGHT_ACCEL: f64 = 0.2 * MAX_ACCEL;
pub const MEDIUM_ACCEL: f64 = 0.5 * MAX_ACCEL;
pub const STRONG_ACCEL: f64 = 0.9 * MAX_ACCEL;
/// Stronger deceleration than this counts as braking.
pub const BRAKE_ACCEL: f64 = -1.0;
/// Deceleration milder than braking but above this is coasting.
pub const COAST_ACCEL: f64 = -0.05;
pub const STATIONARY_SPEED: f64 = 0.05;
/// Pure-pursuit curvature beyond which a sample is steering, 1/m.
pub const STEER_CURVATURE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    LightAccel,
    MediumAccel,
    StrongAccel,
    Coasting,
    Braking,
    SteerLeft,
    SteerRight,
    AccelFromScratch,
    FrontHazard,
    RearHazard,
    SideHazard,
    RedLight,
    Swerving,
    Pedestrian,
    Default,
}

impl Bucket {
    pub const ALL: [Bucket; 15] = [
        Bucket::LightAccel,
        Bucket::MediumAccel,
        Bucket::StrongAccel,
        Bucket::Coasting,
        Bucket::Braking,
        Bucket::SteerLeft,
        Bucket::SteerRight,
        Bucket::AccelFromScratch,
        Bucket::FrontHazard,
        Bucket::RearHazard,
        Bucket::SideHazard,
        Bucket::RedLight,
        Bucket::Swerving,
        Bucket::Pedestrian,
        Bucket::Default,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::LightAccel => "light_accel",
            Bucket::MediumAccel => "medium_accel",
            Bucket::StrongAccel => "strong_accel",
            Bucket::Coasting => "coasting",
            Bucket::Braking => "braking",
            Bucket::SteerLeft => "steer_left",
            Bucket::SteerRight => "steer_right",
            Bucket::AccelFromScratch => "accel_from_scratch",
            Bucket::FrontHazard => "front_hazard",
            Bucket::RearHazard => "rear_hazard",
            Bucket::SideHazard => "side_hazard",
            Bucket::RedLight => "red_light",
            Bucket::Swerving => "swerving",
            Bucket::Pedestrian => "pedestrian",
            Bucket::Default => "default",
        }
    }

    /// Light and medium acceleration get 2, steering gets 3, the rest 1.
    pub fn default_weight(self) -> f64 {
        match self {
            Bucket::LightAccel | Bucket::MediumAccel => 2.0,
            Bucket::SteerLeft | Bucket::SteerRight => 3.0,
            _ => 1.0,
        }
    }

    fn matches(self, s: &Sample) -> bool {
        let i = &s.info;
        match self {
            Bucket::LightAccel => i.accel > LIGHT_ACCEL && i.accel <= MEDIUM_ACCEL,
            Bucket::MediumAccel => i.accel > MEDIUM_ACCEL && i.accel <= STRONG_ACCEL,
            Bucket::StrongAccel => i.accel > STRONG_ACCEL,
            Bucket::Braking => i.accel < BRAKE_ACCEL,
            Bucket::Coasting => (BRAKE_ACCEL..COAST_ACCEL).contains(&i.accel) && i.speed > STATIONARY_SPEED,
            Bucket::SteerLeft => i.curvature > STEER_CURVATURE,
            Bucket::SteerRight => i.curvature < -STEER_CURVATURE,
            Bucket::AccelFromScratch => i.speed < STATIONARY_SPEED && i.accel > 0.0,
            Bucket::FrontHazard => i.hazards.front,
            Bucket::RearHazard => i.hazards.rear,
            Bucket::SideHazard => i.hazards.side,
            Bucket::RedLight => i.red_light_in_range,
            Bucket::Swerving => s.kind == ScenarioKind::LaneChange,
            Bucket::Pedestrian => s.kind == ScenarioKind::GiveWay,
            Bucket::Default => false,
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every bucket the sample belongs to; `Default` alone when none match.
pub fn assign_buckets(s: &Sample) -> Vec<Bucket> {
    let out: Vec<Bucket> = Bucket::ALL.into_iter().filter(|b| b.matches(s)).collect();
    if out.is_empty() {
        vec![Bucket::Default]
    } else {
        out
    }
}

/// Bucket weights; each must be positive.
#[derive(Clone, Debug, PartialEq)]
pub struct BucketWeights(pub Vec<(Bucket, f64)>);

impl Default for BucketWeights {
    fn default() -> Self {
        Self(Bucket::ALL.into_iter().map(|b| (b, b.default_weight())).collect())
    }
}

impl BucketWeights {
    /// All buckets at weight 1.
    pub fn uniform() -> Self {
        Self(Bucket::ALL.into_iter().map(|b| (b, 1.0)).collect())
    }

    pub fn get(&self, b: Bucket) -> f64 {
        self.0.iter().find(|(k, _)| *k == b).map_or(1.0, |(_, w)| *w)
    }

    pub fn validate(&self) -> Result<(), String> {
        for &(b, w) in &self.0 {
            if !(w.is_finite() && w > 0.0) {
                return Err(format!("bucket {b} weight must be positive, got {w}"));
            }
        }
        Ok(())
    }
}
