//! Rooms, wall materials, obstacles and poses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy absorption of each palette material, indexed by material id.
pub const PALETTE: [f64; 8] = [0.05, 0.1, 0.2, 0.3, 0.45, 0.6, 0.75, 0.9];

/// Minimum distance between any pose and a wall.
pub const WALL_MARGIN: f64 = 0.5;

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub id: u8,
    /// Fraction of incident energy absorbed per reflection.
    pub absorption: f64,
}

impl Material {
    pub fn new(id: u8, absorption: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&absorption) {
            return Err(Error::Scene(format!("absorption {absorption} outside [0, 1]")));
        }
        Ok(Self { id, absorption })
    }

    pub fn from_palette(id: u8) -> Result<Self> {
        let alpha = *PALETTE
            .get(id as usize)
            .ok_or_else(|| Error::Scene(format!("material id {id} outside the palette")))?;
        Self::new(id, alpha)
    }

    /// Amplitude reflection factor.
    pub fn beta(&self) -> f64 {
        (1.0 - self.absorption).sqrt()
    }
}

/// Wall order used for reflection counts and materials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wall {
    West = 0,
    East = 1,
    South = 2,
    North = 3,
}

/// Axis-aligned box that blocks rays but not sound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub material: u8,
}

impl Obstacle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|a| p[a] >= self.min[a] - EPS && p[a] <= self.max[a] + EPS)
    }
}

/// Rectangular room `[origin, origin + extent]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    /// West, east, south, north.
    pub walls: [Material; 4],
    pub obstacles: Vec<Obstacle>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(origin: [f64; 2], extent: [f64; 2], walls: [Material; 4], obstacles: Vec<Obstacle>) -> Result<Self> {
        if extent.iter().any(|&e| !(e.is_finite() && e > 2.0 * WALL_MARGIN)) {
            return Err(Error::Scene(format!("room extent {extent:?} too small")));
        }
        let scene = Self {
            origin,
            extent,
            walls,
            obstacles,
            seed: 0,
        };
        for ob in &scene.obstacles {
            let inside = (0..2).all(|a| ob.min[a] > origin[a] && ob.max[a] < origin[a] + extent[a] && ob.min[a] < ob.max[a]);
            if !inside {
                return Err(Error::Scene(format!("obstacle {ob:?} not strictly inside the room")));
            }
        }
        Ok(scene)
    }

    /// Room with every wall made of one material.
    pub fn uniform(origin: [f64; 2], extent: [f64; 2], material: Material) -> Result<Self> {
        Self::new(origin, extent, [material; 4], Vec::new())
    }

    pub fn max_corner(&self) -> [f64; 2] {
        [self.origin[0] + self.extent[0], self.origin[1] + self.extent[1]]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let hi = self.max_corner();
        (0..2).all(|a| p[a] > self.origin[a] && p[a] < hi[a])
    }

    /// Inside the room, at least [`WALL_MARGIN`] from every wall, and not
    /// inside an obstacle.
    pub fn is_valid_position(&self, p: [f64; 2]) -> bool {
        let hi = self.max_corner();
        let clear = (0..2).all(|a| p[a] >= self.origin[a] + WALL_MARGIN - EPS && p[a] <= hi[a] - WALL_MARGIN + EPS);
        clear && !self.obstacles.iter().any(|o| o.contains(p))
    }

    pub fn check_pose(&self, pose: &Pose) -> Result<()> {
        for (what, p) in [("speaker", pose.speaker), ("listener", pose.listener)] {
            if !self.is_valid_position(p) {
                return Err(Error::Scene(format!("{what} at {p:?} is not a valid room position")));
            }
        }
        if pose.orientation > 3 {
            return Err(Error::Scene(format!("orientation index {} not in 0..4", pose.orientation)));
        }
        Ok(())
    }

    /// Interior pose grid: points at `origin + margin + k * resolution`
    /// that are valid positions.
    pub fn grid_points(&self, resolution: f64) -> Vec<[f64; 2]> {
        let count = |a: usize| ((self.extent[a] - 2.0 * WALL_MARGIN) / resolution + EPS).floor() as usize + 1;
        let (nx, ny) = (count(0), count(1));
        let mut pts = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let p = [
                    self.origin[0] + WALL_MARGIN + i as f64 * resolution,
                    self.origin[1] + WALL_MARGIN + j as f64 * resolution,
                ];
                if self.is_valid_position(p) {
                    pts.push(p);
                }
            }
        }
        pts
    }

    pub fn translated(&self, by: [f64; 2]) -> Self {
        let shift = |p: [f64; 2]| [p[0] + by[0], p[1] + by[1]];
        Self {
            origin: shift(self.origin),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    min: shift(o.min),
                    max: shift(o.max),
                    material: o.material,
                })
                .collect(),
            ..self.clone()
        }
    }

    /// The room rotated a quarter turn counterclockwise about the world origin.
    pub fn rotated_quarter(&self) -> Self {
        let hi = self.max_corner();
        let [w, e, s, n] = self.walls;
        Self {
            origin: [-hi[1], self.origin[0]],
            extent: [self.extent[1], self.extent[0]],
            // West becomes south, east north, south east, north west.
            walls: [n, s, w, e],
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    min: [-o.max[1], o.min[0]],
                    max: [-o.min[1], o.max[0]],
                    material: o.material,
                })
                .collect(),
            seed: self.seed,
        }
    }
}

/// Speaker and listener positions with the listener's heading as a
/// quarter-turn index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub speaker: [f64; 2],
    pub listener: [f64; 2],
    pub orientation: u8,
}

impl Pose {
    /// Co-located speaker and listener, as for an echo observation.
    pub fn echo(at: [f64; 2], orientation: u8) -> Self {
        Self {
            speaker: at,
            listener: at,
            orientation,
        }
    }

    pub fn theta(&self) -> f64 {
        self.orientation as f64 * std::f64::consts::FRAC_PI_2
    }

    /// Exact unit heading vector.
    pub fn heading(&self) -> [f64; 2] {
        heading(self.orientation)
    }

    pub fn rotated_quarter(&self) -> Self {
        let r = |p: [f64; 2]| [-p[1], p[0]];
        Self {
            speaker: r(self.speaker),
            listener: r(self.listener),
            orientation: (self.orientation + 1) % 4,
        }
    }

    pub fn translated(&self, by: [f64; 2]) -> Self {
        let s = |p: [f64; 2]| [p[0] + by[0], p[1] + by[1]];
        Self {
            speaker: s(self.speaker),
            listener: s(self.listener),
            orientation: self.orientation,
        }
    }
}

/// Unit vector of a quarter-turn orientation, free of rounding.
pub fn heading(orientation: u8) -> [f64; 2] {
    match orientation % 4 {
        0 => [1.0, 0.0],
        1 => [0.0, 1.0],
        2 => [-1.0, 0.0],
        _ => [0.0, -1.0],
    }
}
