//! One-row depth and material scans from a listener's viewpoint.

use super::geometry::{heading, Pose, SceneSpec, Wall};
use crate::error::{Error, Result};

pub const DEFAULT_FOV: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Clone, Debug, PartialEq)]
pub struct RaycastScan {
    pub depths: Vec<f64>,
    pub materials: Vec<u8>,
    pub camera: [f64; 2],
    pub orientation: u8,
    pub fov: f64,
}

impl RaycastScan {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Offset of ray `i` from the heading, spanning `[-fov/2, fov/2]`.
    pub fn ray_offset(&self, i: usize) -> f64 {
        ray_offset(i, self.len(), self.fov)
    }

    /// Unit direction of ray `i`.
    pub fn direction(&self, i: usize) -> [f64; 2] {
        rotate(heading(self.orientation), self.ray_offset(i))
    }

    /// World position where ray `i` hit a surface.
    pub fn endpoint(&self, i: usize) -> [f64; 2] {
        let d = self.direction(i);
        [self.camera[0] + self.depths[i] * d[0], self.camera[1] + self.depths[i] * d[1]]
    }
}

fn ray_offset(i: usize, w: usize, fov: f64) -> f64 {
    if w == 1 {
        0.0
    } else {
        fov * (i as f64 / (w - 1) as f64 - 0.5)
    }
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    if angle == 0.0 {
        return v;
    }
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Entry distance of a ray into an axis-aligned box, if ahead of the origin.
fn box_entry(p: [f64; 2], d: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..2 {
        if d[a] == 0.0 {
            if p[a] < lo[a] || p[a] > hi[a] {
                return None;
            }
        } else {
            let (ta, tb) = ((lo[a] - p[a]) / d[a], (hi[a] - p[a]) / d[a]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

/// Casts `w` rays across the field of view from the listener.
pub fn raycast_scan(scene: &SceneSpec, pose: &Pose, w: usize, fov: f64) -> Result<RaycastScan> {
    if w == 0 || !(fov > 0.0 && fov < std::f64::consts::PI) {
        return Err(Error::InvalidArgument(format!("scan of {w} rays with fov {fov}")));
    }
    let p = pose.listener;
    if !scene.contains(p) {
        return Err(Error::Scene(format!("camera {p:?} outside the room")));
    }
    let hi = scene.max_corner();
    let mut depths = Vec::with_capacity(w);
    let mut materials = Vec::with_capacity(w);
    for i in 0..w {
        let d = rotate(pose.heading(), ray_offset(i, w, fov));
        // Nearest wall; a corner counts as the south/north wall.
        let wall_t = |a: usize| -> (f64, Wall) {
            let (low, high) = if a == 0 { (Wall::West, Wall::East) } else { (Wall::South, Wall::North) };
            if d[a] > 0.0 {
                ((hi[a] - p[a]) / d[a], high)
            } else if d[a] < 0.0 {
                ((scene.origin[a] - p[a]) / d[a], low)
            } else {
                (f64::INFINITY, low)
            }
        };
        let (tx, wx) = wall_t(0);
        let (ty, wy) = wall_t(1);
        let (mut t, wall) = if tx < ty { (tx, wx) } else { (ty, wy) };
        let mut material = scene.walls[wall as usize].id;
        for ob in &scene.obstacles {
            if let Some(te) = box_entry(p, d, ob.min, ob.max) {
                if te < t {
                    t = te;
                    material = ob.material;
                }
            }
        }
        depths.push(t);
        materials.push(material);
    }
    Ok(RaycastScan {
        depths,
        materials,
        camera: p,
        orientation: pose.orientation,
        fov,
    })
}
