use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];

/// Planar pose plus longitudinal speed. `x` forward, `y` left, heading in
/// radians counter-clockwise from the world x axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Self { x, y, heading, speed }
    }

    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    /// World point expressed in this pose's frame.
    pub fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (p[0] - self.x, p[1] - self.y);
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// Point in this pose's frame expressed in the world frame.
    pub fn to_world(&self, p: Point) -> Point {
        let (s, c) = self.heading.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        dist(self.position(), other.position())
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Axis-aligned rectangle in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Piecewise-linear route with cumulative arc length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    points: Vec<Point>,
    arc: Vec<f64>,
}

impl Route {
    /// Requires at least two points with no two consecutive points equal.
    pub fn new(points: Vec<Point>) -> Option<Self> {
        if points.len() < 2 {
            return None;
        }
        let mut arc = vec![0.0];
        for w in points.windows(2) {
            let d = dist(w[0], w[1]);
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            arc.push(arc.last().unwrap() + d);
        }
        Some(Self { points, arc })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    /// Arc length of the closest point on the route and the distance to it.
    pub fn project(&self, p: Point) -> (f64, f64) {
        let mut best = (0.0, f64::INFINITY);
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let len2 = ex * ex + ey * ey;
            let t = (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * ex, a[1] + t * ey];
            let d = dist(p, q);
            if d < best.1 {
                best = (self.arc[i] + t * len2.sqrt(), d);
            }
        }
        best
    }

    /// Point at arc length `s`, extrapolated linearly beyond either end.
    pub fn point_at(&self, s: f64) -> Point {
        let n = self.points.len();
        let seg = match self.arc.iter().position(|&a| a > s) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => n - 2,
        };
        let (a, b) = (self.points[seg], self.points[seg + 1]);
        let len = self.arc[seg + 1] - self.arc[seg];
        let t = (s - self.arc[seg]) / len;
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_and_world_frames_are_inverse() {
        let pose = Pose::new(3.0, -2.0, 0.7, 0.0);
        let p = [5.5, 1.25];
        let back = pose.to_world(pose.to_local(p));
        assert!(dist(back, p) < 1e-12);
    }

    #[test]
    fn route_rejects_degenerate_polylines() {
        assert!(Route::new(vec![[0.0, 0.0]]).is_none());
        assert!(Route::new(vec![[0.0, 0.0], [0.0, 0.0]]).is_none());
    }

    #[test]
    fn route_projection_and_lookup() {
        let r = Route::new(vec![[0.0, 0.0], [10.0, 0.0], [10.0, 5.0]]).unwrap();
        assert_eq!(r.length(), 15.0);
        let (s, d) = r.project([4.0, 1.0]);
        assert!((s - 4.0).abs() < 1e-12 && (d - 1.0).abs() < 1e-12);
        assert_eq!(r.point_at(12.0), [10.0, 2.0]);
        assert_eq!(r.point_at(17.0), [10.0, 7.0]);
        assert_eq!(r.point_at(-1.0), [-1.0, 0.0]);
    }
}
