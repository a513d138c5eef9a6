//! Driving action: an arc-length-spaced path and time-indexed waypoints, both
//! in the ego frame, with the residual encoding used as the learning target.

use serde::{Deserialize, Serialize};

use super::geometry::Point;
use super::WorldError;

pub const PATH_POINTS: usize = 10;
pub const WAYPOINTS: usize = 4;
pub const ACTION_POINTS: usize = PATH_POINTS + WAYPOINTS;
/// Spacing between consecutive path points, meters.
pub const PATH_SPACING: f64 = 1.0;
/// Future time of each waypoint, seconds.
pub const WAYPOINT_TIMES: [f64; WAYPOINTS] = [0.5, 1.0, 1.5, 2.0];

/// Per-point deltas: path group first, then waypoint group.
pub type Residuals = [Point; ACTION_POINTS];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub path: [Point; PATH_POINTS],
    pub waypoints: [Point; WAYPOINTS],
}

impl Default for ActionPlan {
    fn default() -> Self {
        Self::stationary()
    }
}

fn deltas<const N: usize>(points: &[Point; N], out: &mut [Point]) {
    let mut prev = [0.0, 0.0];
    for (o, p) in out.iter_mut().zip(points) {
        *o = [p[0] - prev[0], p[1] - prev[1]];
        prev = *p;
    }
}

fn cumulative<const N: usize>(res: &[Point]) -> [Point; N] {
    let mut out = [[0.0; 2]; N];
    let mut acc = [0.0, 0.0];
    for (o, r) in out.iter_mut().zip(res) {
        acc = [acc[0] + r[0], acc[1] + r[1]];
        *o = acc;
    }
    out
}

impl ActionPlan {
    /// Every point at the origin: the tracker holds still.
    pub fn stationary() -> Self {
        Self {
            path: [[0.0; 2]; PATH_POINTS],
            waypoints: [[0.0; 2]; WAYPOINTS],
        }
    }

    pub fn residuals(&self) -> Residuals {
        let mut out = [[0.0; 2]; ACTION_POINTS];
        deltas(&self.path, &mut out[..PATH_POINTS]);
        deltas(&self.waypoints, &mut out[PATH_POINTS..]);
        out
    }

    /// Inverse of [`ActionPlan::residuals`]: cumulative sums within each group.
    pub fn from_residuals(res: &Residuals) -> Result<Self, WorldError> {
        if res.iter().flatten().any(|v| !v.is_finite()) {
            return Err(WorldError::NonFinite("action residuals"));
        }
        Ok(Self {
            path: cumulative(&res[..PATH_POINTS]),
            waypoints: cumulative(&res[PATH_POINTS..]),
        })
    }

    /// Residuals flattened row-major into 28 values.
    pub fn residual_vec(&self) -> Vec<f64> {
        self.residuals().iter().flatten().copied().collect()
    }

    pub fn from_residual_slice(flat: &[f64]) -> Result<Self, WorldError> {
        if flat.len() != ACTION_POINTS * 2 {
            return Err(WorldError::Shape {
                what: "action residuals",
                expected: ACTION_POINTS * 2,
                got: flat.len(),
            });
        }
        let mut res = [[0.0; 2]; ACTION_POINTS];
        for (r, c) in res.iter_mut().zip(flat.chunks_exact(2)) {
            *r = [c[0], c[1]];
        }
        Self::from_residuals(&res)
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.path.iter().chain(self.waypoints.iter()).copied()
    }

    /// True when path points advance strictly in cumulative arc length.
    pub fn path_is_monotone(&self) -> bool {
        self.residuals()[..PATH_POINTS].iter().all(|r| r[0].hypot(r[1]) > 0.0)
    }

    /// Average speed implied by the waypoints, m/s.
    pub fn implied_speed(&self) -> f64 {
        self.waypoints
            .iter()
            .zip(WAYPOINT_TIMES)
            .map(|(w, t)| w[0].hypot(w[1]) / t)
            .sum::<f64>()
            / WAYPOINTS as f64
    }
}
