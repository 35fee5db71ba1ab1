//! Egocentric observations onto a shared top-down grid.
//!
//! Poses become sinusoidal embeddings relative to an episode reference
//! point, and ray endpoints are binned into map cells where their features
//! are max-pooled on the autodiff tape.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scene::{Pose, RaycastScan, SceneSpec, WALL_MARGIN};

/// Square grid of `size × size` cells centered on `origin`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub size: usize,
    /// World units per cell.
    pub resolution: f64,
    pub origin: [f64; 2],
}

impl MapSpec {
    pub fn new(size: usize, resolution: f64, origin: [f64; 2]) -> Result<Self> {
        if size == 0 || size % 2 != 0 || !(resolution > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "map of {size} cells at resolution {resolution}"
            )));
        }
        Ok(Self {
            size,
            resolution,
            origin,
        })
    }

    /// `(row, col)` of a world point, or `None` outside the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let half = (self.size / 2) as i64;
        let row = half + ((p[1] - self.origin[1]) / self.resolution).round() as i64;
        let col = half + ((p[0] - self.origin[0]) / self.resolution).round() as i64;
        let m = self.size as i64;
        ((0..m).contains(&row) && (0..m).contains(&col)).then_some((row as usize, col as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        let half = (self.size / 2) as f64;
        [
            self.origin[0] + (col as f64 - half) * self.resolution,
            self.origin[1] + (row as f64 - half) * self.resolution,
        ]
    }

    /// Rotated a quarter turn counterclockwise about the world origin.
    pub fn rotated_quarter(&self) -> Self {
        Self {
            origin: [-self.origin[1], self.origin[0]],
            ..*self
        }
    }
}

/// Centroid of the context listeners, snapped to the scene's pose grid.
pub fn episode_origin(scene: &SceneSpec, listeners: &[[f64; 2]], grid_resolution: f64) -> Result<[f64; 2]> {
    if listeners.is_empty() {
        return Err(Error::InvalidArgument("episode origin needs at least one listener".into()));
    }
    let n = listeners.len() as f64;
    let mut out = [0.0; 2];
    for (a, o) in out.iter_mut().enumerate() {
        let mean = listeners.iter().map(|p| p[a]).sum::<f64>() / n;
        let base = scene.origin[a] + WALL_MARGIN;
        *o = base + ((mean - base) / grid_resolution).round() * grid_resolution;
    }
    Ok(out)
}

/// Number of scalars expanded by [`sinusoidal_pose_embed`].
pub const POSE_SCALARS: usize = 5;

/// Sinusoidal features of `(Δx_s, Δy_s, Δx_l, Δy_l, θ)` relative to
/// `reference`; each scalar gives `d_pe` values `[sin, cos]` per frequency.
pub fn sinusoidal_pose_embed(pose: &Pose, reference: [f64; 2], d_pe: usize) -> Result<Vec<f64>> {
    if d_pe == 0 || d_pe % 2 != 0 {
        return Err(Error::InvalidArgument(format!("pose embedding width {d_pe} must be even")));
    }
    let scalars = [
        pose.speaker[0] - reference[0],
        pose.speaker[1] - reference[1],
        pose.listener[0] - reference[0],
        pose.listener[1] - reference[1],
        pose.theta(),
    ];
    let mut out = Vec::with_capacity(POSE_SCALARS * d_pe);
    for s in scalars {
        for k in 0..d_pe / 2 {
            let freq = 10000f64.powf(-2.0 * k as f64 / d_pe as f64);
            let (sin, cos) = (s * freq).sin_cos();
            out.push(sin);
            out.push(cos);
        }
    }
    Ok(out)
}

/// Map cell hit by every ray of a scan, `None` when outside the grid.
pub fn scan_cells(scan: &RaycastScan, spec: &MapSpec) -> Vec<Option<(usize, usize)>> {
    (0..scan.len()).map(|i| spec.cell_of(scan.endpoint(i))).collect()
}

/// Max-pools per-ray features of every scan into one `[m, m, c_f]` map.
///
/// `features[k]` is `[W_k, c_f]` with row `i` belonging to ray `i` of
/// `scans[k]`. Cells nobody hits stay zero. Returns `None` only if no
/// endpoint lands on the grid; callers then use an all-zero map.
pub fn project_scans(g: &mut Graph, features: &[Var], scans: &[&RaycastScan], spec: &MapSpec) -> Result<Option<Var>> {
    if features.len() != scans.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature blocks for {} scans",
            features.len(),
            scans.len()
        )));
    }
    for (&f, scan) in features.iter().zip(scans) {
        let shape = g.shape(f);
        if shape.len() != 2 || shape[0] != scan.len() {
            return Err(Error::ShapeMismatch {
                op: "project_scans",
                lhs: vec![scan.len()],
                rhs: shape.to_vec(),
            });
        }
    }
    let all = if features.len() == 1 { features[0] } else { g.concat(features, 0)? };
    project_stacked(g, all, scans, spec)
}

/// [`project_scans`] for features already stacked scan after scan into one
/// `[ΣW_k, c_f]` block.
pub fn project_stacked(g: &mut Graph, stacked: Var, scans: &[&RaycastScan], spec: &MapSpec) -> Result<Option<Var>> {
    let total: usize = scans.iter().map(|s| s.len()).sum();
    let shape = g.shape(stacked);
    if shape.len() != 2 || shape[0] != total {
        return Err(Error::ShapeMismatch {
            op: "project_stacked",
            lhs: vec![total],
            rhs: shape.to_vec(),
        });
    }
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    let mut offset = 0;
    for scan in scans {
        for (i, cell) in scan_cells(scan, spec).into_iter().enumerate() {
            if let Some(c) = cell {
                rows.push(offset + i);
                cells.push(c);
            }
        }
        offset += scan.len();
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let kept = if rows.len() == total { stacked } else { g.gather_rows(stacked, &rows)? };
    Ok(Some(g.scatter_max(kept, &cells, spec.size)?))
}
