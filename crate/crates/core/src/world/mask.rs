use serde::{Deserialize, Serialize};

use super::action::ActionPlan;
use super::camera::CameraModel;

pub const PATCH: usize = 8;

/// Binary per-patch grid over the camera image.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchMask {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl PatchMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    pub fn for_camera(cam: &CameraModel) -> Self {
        Self::empty(cam.height / PATCH, cam.width / PATCH)
    }

    pub fn from_cells(rows: usize, cols: usize, cells: Vec<bool>) -> Option<Self> {
        (cells.len() == rows * cols).then_some(Self { rows, cols, cells })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize) {
        self.cells[r * self.cols + c] = true;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Row-major 0/1 values.
    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Cells whose logit is positive (probability above one half).
    pub fn from_logits(rows: usize, cols: usize, logits: &[f64]) -> Option<Self> {
        Self::from_cells(rows, cols, logits.iter().map(|&l| l > 0.0).collect())
    }

    /// One character per patch, one line per row.
    pub fn render(&self, on: char, off: char) -> String {
        let mut s = String::with_capacity(self.rows * (self.cols + 1));
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push(if self.get(r, c) { on } else { off });
            }
            s.push('\n');
        }
        s
    }
}

/// Marks every patch that contains the projection of a path point or
/// waypoint. Points outside the view contribute nothing.
pub fn action_to_mask(action: &ActionPlan, cam: &CameraModel) -> PatchMask {
    let mut mask = PatchMask::for_camera(cam);
    for p in action.points() {
        if let Some((u, v)) = cam.project_point(p) {
            let (r, c) = (v as usize / PATCH, u as usize / PATCH);
            if r < mask.rows && c < mask.cols {
                mask.set(r, c);
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::action::{PATH_POINTS, WAYPOINTS};

    fn plan_with(points: &[[f64; 2]]) -> ActionPlan {
        let mut plan = ActionPlan::stationary();
        for (i, p) in points.iter().enumerate() {
            if i < PATH_POINTS {
                plan.path[i] = *p;
            } else {
                plan.waypoints[i - PATH_POINTS] = *p;
            }
        }
        plan
    }

    #[test]
    fn points_behind_the_camera_set_nothing() {
        let plan = plan_with(&[[0.5, 0.0]; PATH_POINTS + WAYPOINTS]);
        assert_eq!(action_to_mask(&plan, &CameraModel::default()).count(), 0);
    }

    #[test]
    fn single_visible_point_sets_one_patch() {
        let cam = CameraModel::default();
        let mut plan = plan_with(&[[0.5, 0.0]; PATH_POINTS + WAYPOINTS]);
        plan.path[4] = [6.0, 0.0];
        let mask = action_to_mask(&plan, &cam);
        assert_eq!(mask.count(), 1);
        // v = 8 + 32 * 1.5 / 6 = 16 -> row 2; u = 32 -> column 4
        assert!(mask.get(2, 4));
    }

    #[test]
    fn logits_threshold_and_text_rendering() {
        let m = PatchMask::from_logits(1, 3, &[0.3, -0.1, 0.0]).unwrap();
        assert_eq!(m.render('#', '.'), "#..\n");
    }
}
