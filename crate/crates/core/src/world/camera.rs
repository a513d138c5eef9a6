use serde::{Deserialize, Serialize};

use super::geometry::Point;

/// Forward-looking pinhole camera over a flat ground plane.
///
/// Ego frame: `x` forward, `y` left. A ground point at `(x, y)` projects to
/// `u = c_u - f_u * y / x`, `v = c_v + f_v * h_cam / x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub h_cam: f64,
    pub f_u: f64,
    pub f_v: f64,
    pub c_u: f64,
    pub c_v: f64,
    pub x_min: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            h_cam: 1.5,
            f_u: 16.0,
            f_v: 32.0,
            c_u: 32.0,
            c_v: 8.0,
            x_min: 1.0,
            width: 64,
            height: 32,
        }
    }
}

impl CameraModel {
    pub fn is_valid(&self) -> bool {
        self.f_u > 0.0 && self.f_v > 0.0 && self.x_min > 0.0 && self.width > 0 && self.height > 0
    }

    /// Projects a point at height `z` above the ground, without bounds checks.
    pub fn project_raw(&self, p: Point, z: f64) -> Option<(f64, f64)> {
        let x = p[0];
        if x < self.x_min {
            return None;
        }
        Some((
            self.c_u - self.f_u * p[1] / x,
            self.c_v + self.f_v * (self.h_cam - z) / x,
        ))
    }

    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Pixel coordinates of a ground point, or `None` when it is behind the
    /// clip distance or outside the image.
    pub fn project_point(&self, p: Point) -> Option<(f64, f64)> {
        self.project_raw(p, 0.0).filter(|&(u, v)| self.in_bounds(u, v))
    }

    /// Ground point seen through image position `(u, v)`; `None` at or above
    /// the horizon.
    pub fn ground_ray(&self, u: f64, v: f64) -> Option<Point> {
        if v <= self.c_v {
            return None;
        }
        let x = self.f_v * self.h_cam / (v - self.c_v);
        Some([x, (self.c_u - u) * x / self.f_u])
    }
}

/// Free-function form of [`CameraModel::project_point`].
pub fn project_point(p_ego: Point, cam: &CameraModel) -> Option<(f64, f64)> {
    cam.project_point(p_ego)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optical_axis_projects_to_principal_column() {
        let cam = CameraModel::default();
        for x in [1.0, 2.5, 7.0, 30.0] {
            if let Some((u, _)) = cam.project_raw([x, 0.0], 0.0) {
                assert_eq!(u, cam.c_u);
            }
        }
    }

    #[test]
    fn hand_evaluated_projection() {
        let cam = CameraModel {
            f_u: 32.0,
            ..CameraModel::default()
        };
        let (u, v) = cam.project_point([4.0, -1.0]).unwrap();
        assert_eq!(u, 40.0);
        assert_eq!(v, 8.0 + 32.0 * 1.5 / 4.0);
    }

    #[test]
    fn far_points_approach_the_horizon_from_below() {
        let cam = CameraModel::default();
        let mut prev = f64::INFINITY;
        for x in [2.0, 10.0, 100.0, 1e4, 1e8] {
            let (_, v) = cam.project_raw([x, 0.0], 0.0).unwrap();
            assert!(v > cam.c_v && v < prev);
            prev = v;
        }
        assert!(prev - cam.c_v < 1e-6);
    }

    #[test]
    fn behind_clip_and_out_of_frame_are_none() {
        let cam = CameraModel::default();
        assert!(cam.project_point([0.5, 0.0]).is_none());
        assert!(cam.project_point([1.2, 0.0]).is_none()); // below the image
        assert!(cam.project_point([5.0, 50.0]).is_none());
    }

    #[test]
    fn ground_ray_inverts_projection() {
        let cam = CameraModel::default();
        let (u, v) = cam.project_point([6.0, 1.5]).unwrap();
        let p = cam.ground_ray(u, v).unwrap();
        assert!((p[0] - 6.0).abs() < 1e-12 && (p[1] - 1.5).abs() < 1e-12);
    }
}
