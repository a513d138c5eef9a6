//! Semantic front-camera rasterizer.
//!
//! Ground-plane channels are sampled by casting each pixel center onto the
//! ground; vehicles and the signal are upright billboards. Every value is a
//! multiple of 1/4, which lets frames be stored losslessly as bytes.

use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use super::geometry::Point;
use super::state::{Npc, WorldState, VEHICLE_RADIUS};

pub const CHANNELS: usize = 4;
pub const CH_DRIVABLE: usize = 0;
pub const CH_VEHICLE: usize = 1;
pub const CH_RED_LIGHT: usize = 2;
pub const CH_ROUTE: usize = 3;

/// Lateral reach of the route marking on either side of the centerline.
pub const ROUTE_HALF_WIDTH: f64 = 0.9;
pub const VEHICLE_HEIGHT: f64 = 1.5;
const VEHICLE_VALUE: f64 = 0.5;
const BRAKING_VALUE: f64 = 1.0;
/// Signal head: a box spanning these heights and this width at the stop line.
pub const SIGNAL_Z: (f64, f64) = (2.5, 4.0);
pub const SIGNAL_WIDTH: f64 = 3.0;

/// Channel-major `CHANNELS x height x width` image with values in `[0, 1]`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTensor {
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for FrameTensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FrameTensor({}x{}x{})", CHANNELS, self.height, self.width)
    }
}

impl FrameTensor {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; CHANNELS * height * width],
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, ch: usize, row: usize, col: usize) -> f64 {
        self.data[(ch * self.height + row) * self.width + col]
    }

    fn put(&mut self, ch: usize, row: usize, col: usize, v: f64) {
        self.data[(ch * self.height + row) * self.width + col] = v;
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[ch * n..(ch + 1) * n]
    }

    /// Quarter-step quantization; exact for every rendered frame.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 4.0).round() as u8).collect()
    }

    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != CHANNELS * height * width || bytes.iter().any(|&b| b > 4) {
            return None;
        }
        Some(Self {
            height,
            width,
            data: bytes.iter().map(|&b| b as f64 / 4.0).collect(),
        })
    }

    /// Horizontal mirror image.
    pub fn mirrored(&self) -> Self {
        let mut out = Self::zeros(self.height, self.width);
        for ch in 0..CHANNELS {
            for r in 0..self.height {
                for c in 0..self.width {
                    out.put(ch, r, self.width - 1 - c, self.at(ch, r, c));
                }
            }
        }
        out
    }

    /// Text view: vehicles `V`/`B`(braking), red light `R`, route `=`,
    /// drivable `.`, everything else blank.
    pub fn ascii(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                let ch = if self.at(CH_VEHICLE, r, c) >= BRAKING_VALUE {
                    'B'
                } else if self.at(CH_VEHICLE, r, c) > 0.0 {
                    'V'
                } else if self.at(CH_RED_LIGHT, r, c) > 0.0 {
                    'R'
                } else if self.at(CH_ROUTE, r, c) > 0.0 {
                    '='
                } else if self.at(CH_DRIVABLE, r, c) > 0.0 {
                    '.'
                } else {
                    ' '
                };
                s.push(ch);
            }
            s.push('\n');
        }
        s
    }
}

/// Fills pixels whose centers fall inside `[u0, u1] x [v0, v1]`.
fn fill_box(frame: &mut FrameTensor, ch: usize, (u0, u1): (f64, f64), (v0, v1): (f64, f64), value: f64) {
    let (w, h) = (frame.width as f64, frame.height as f64);
    let c0 = (u0 - 0.5).ceil().max(0.0);
    let c1 = (u1 - 0.5).floor().min(w - 1.0);
    let r0 = (v0 - 0.5).ceil().max(0.0);
    let r1 = (v1 - 0.5).floor().min(h - 1.0);
    if c0 > c1 || r0 > r1 {
        return;
    }
    for r in r0 as usize..=r1 as usize {
        for c in c0 as usize..=c1 as usize {
            frame.put(ch, r, c, value);
        }
    }
}

fn draw_vehicle(frame: &mut FrameTensor, cam: &CameraModel, local: Point, npc: &Npc) {
    let x = local[0];
    if x < cam.x_min {
        return;
    }
    let u = cam.c_u - cam.f_u * local[1] / x;
    let half = cam.f_u * VEHICLE_RADIUS / x;
    let v_bottom = cam.c_v + cam.f_v * cam.h_cam / x;
    let v_top = cam.c_v + cam.f_v * (cam.h_cam - VEHICLE_HEIGHT) / x;
    let value = if npc.brake_light() {
        BRAKING_VALUE
    } else {
        VEHICLE_VALUE
    };
    fill_box(frame, CH_VEHICLE, (u - half, u + half), (v_top, v_bottom), value);
}

pub fn render_observation(state: &WorldState, cam: &CameraModel) -> FrameTensor {
    let mut frame = FrameTensor::zeros(cam.height, cam.width);
    let ego = &state.ego;

    for r in 0..cam.height {
        for c in 0..cam.width {
            let Some(local) = cam.ground_ray(c as f64 + 0.5, r as f64 + 0.5) else {
                continue;
            };
            let world = ego.to_world(local);
            if state.is_drivable(world) {
                frame.put(CH_DRIVABLE, r, c, 1.0);
            }
            if state.route.project(world).1 <= ROUTE_HALF_WIDTH {
                frame.put(CH_ROUTE, r, c, 1.0);
            }
        }
    }

    // far to near so nearer vehicles occlude
    let mut order: Vec<(Point, &Npc)> = state
        .npcs
        .iter()
        .map(|n| (ego.to_local(n.pose.position()), n))
        .collect();
    order.sort_by(|a, b| b.0[0].total_cmp(&a.0[0]));
    for (local, npc) in order {
        draw_vehicle(&mut frame, cam, local, npc);
    }

    if let Some(light) = state.traffic_light.filter(|_| state.light_is_red()) {
        let local = ego.to_local(light.position);
        let x = local[0];
        if x >= cam.x_min {
            let u = cam.c_u - cam.f_u * local[1] / x;
            let half = cam.f_u * 0.5 * SIGNAL_WIDTH / x;
            let v_top = cam.c_v + cam.f_v * (cam.h_cam - SIGNAL_Z.1) / x;
            let v_bottom = cam.c_v + cam.f_v * (cam.h_cam - SIGNAL_Z.0) / x;
            fill_box(&mut frame, CH_RED_LIGHT, (u - half, u + half), (v_top, v_bottom), 1.0);
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::geometry::{Pose, Rect, Route};

    fn straight_world() -> WorldState {
        let route = Route::new(vec![[0.0, 0.0], [100.0, 0.0]]).unwrap();
        let road = Rect {
            x0: -10.0,
            x1: 100.0,
            y0: -1.75,
            y1: 1.75,
        };
        WorldState::new(Pose::new(0.0, 0.0, 0.0, 0.0), route, vec![road])
    }

    #[test]
    fn empty_world_has_no_vehicle_or_signal_pixels() {
        let f = render_observation(&straight_world(), &CameraModel::default());
        assert!(f.channel(CH_VEHICLE).iter().all(|&v| v == 0.0));
        assert!(f.channel(CH_RED_LIGHT).iter().all(|&v| v == 0.0));
        assert!(f.channel(CH_DRIVABLE).iter().any(|&v| v > 0.0));
        assert!(f.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let mut w = straight_world();
        w.npcs.push(Npc::cruising(8.0, 0.5, 0.0, 3.0));
        let f = render_observation(&w, &CameraModel::default());
        let back = FrameTensor::from_bytes(f.height, f.width, &f.to_bytes()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn mirror_is_an_involution() {
        let mut w = straight_world();
        w.npcs.push(Npc::cruising(6.0, 1.0, 0.0, 3.0));
        let f = render_observation(&w, &CameraModel::default());
        assert_eq!(f.mirrored().mirrored(), f);
        assert_ne!(f.mirrored(), f);
    }
}
