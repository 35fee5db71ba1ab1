//! Image-source model of a rectangular room and binaural RIR rendering.

use serde::{Deserialize, Serialize};

use super::geometry::{Pose, SceneSpec};
use crate::dsp::Rir;
use crate::error::{Error, Result};

/// Virtual source with the number of reflections off each wall
/// (west, east, south, north).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageSource {
    pub position: [f64; 2],
    pub counts: [u32; 4],
}

impl ImageSource {
    pub fn order(&self) -> u32 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub sample_rate: u32,
    pub length: usize,
    pub max_order: u32,
    pub sound_speed: f64,
    /// Distance between the two ears; 0 gives a monaural pair.
    pub ear_separation: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            length: 4096,
            max_order: 12,
            sound_speed: 343.0,
            ear_separation: 0.2,
        }
    }
}

/// Offset of image `n` along one axis from the room's low wall, for a
/// source at offset `u` in a room of extent `l`, with its (low, high)
/// wall reflection counts.
fn image_1d(n: i64, u: f64, l: f64) -> (f64, u32, u32) {
    let pos = if n % 2 == 0 { n as f64 * l + u } else { (n + 1) as f64 * l - u };
    let m = n.unsigned_abs() as u32;
    let (near, far) = (m.div_ceil(2), m / 2);
    // Moving toward +axis hits the high wall first.
    if n >= 0 {
        (pos, far, near)
    } else {
        (pos, near, far)
    }
}

/// Every image source with at most `max_order` reflections, ordered by
/// (order, x index, y index).
pub fn image_sources(scene: &SceneSpec, speaker: [f64; 2], max_order: u32) -> Result<Vec<ImageSource>> {
    if !scene.contains(speaker) {
        return Err(Error::Scene(format!("speaker {speaker:?} outside the room")));
    }
    Ok(relative_images(scene, speaker, max_order)
        .into_iter()
        .map(|(rel, counts)| ImageSource {
            position: [scene.origin[0] + rel[0], scene.origin[1] + rel[1]],
            counts,
        })
        .collect())
}

/// Image positions relative to the room origin.
fn relative_images(scene: &SceneSpec, speaker: [f64; 2], max_order: u32) -> Vec<([f64; 2], [u32; 4])> {
    let u = [speaker[0] - scene.origin[0], speaker[1] - scene.origin[1]];
    let k = max_order as i64;
    let mut out = Vec::with_capacity((2 * k * k + 2 * k + 1) as usize);
    for order in 0..=k {
        for nx in -order..=order {
            let rest = order - nx.abs();
            let nys: &[i64] = if rest == 0 { &[0] } else { &[-rest, rest] };
            for &ny in nys {
                let (x, w, e) = image_1d(nx, u[0], scene.extent[0]);
                let (y, s, n) = image_1d(ny, u[1], scene.extent[1]);
                out.push(([x, y], [w, e, s, n]));
            }
        }
    }
    out
}

/// Ear positions relative to the room origin: left then right.
fn ears(scene: &SceneSpec, pose: &Pose, separation: f64) -> [[f64; 2]; 2] {
    let v = [pose.listener[0] - scene.origin[0], pose.listener[1] - scene.origin[1]];
    let h = pose.heading();
    let half = separation / 2.0;
    // Left is the heading turned a quarter counterclockwise.
    let left = [-h[1] * half, h[0] * half];
    [[v[0] + left[0], v[1] + left[1]], [v[0] - left[0], v[1] - left[1]]]
}

/// Binaural RIR by the image-source method with linear fractional delays.
///
/// Contributions are accumulated in sorted (delay, amplitude) order so the
/// result depends only on the multiset of paths.
pub fn render_rir(scene: &SceneSpec, pose: &Pose, cfg: &RenderConfig) -> Result<Rir> {
    scene.check_pose(pose)?;
    if cfg.length == 0 || cfg.sound_speed <= 0.0 || cfg.sample_rate == 0 {
        return Err(Error::InvalidArgument(format!("invalid render config {cfg:?}")));
    }
    let images = relative_images(scene, pose.speaker, cfg.max_order);
    let betas: Vec<f64> = scene.walls.iter().map(|m| m.beta()).collect();
    let gains: Vec<f64> = images
        .iter()
        .map(|(_, c)| c.iter().zip(&betas).map(|(&n, b)| b.powi(n as i32)).product())
        .collect();
    let samples_per_unit = cfg.sample_rate as f64 / cfg.sound_speed;
    let mut channels = [vec![0.0; cfg.length], vec![0.0; cfg.length]];
    let mut paths: Vec<(f64, f64)> = Vec::with_capacity(images.len());
    for (ear, out) in ears(scene, pose, cfg.ear_separation).iter().zip(channels.iter_mut()) {
        paths.clear();
        for ((pos, _), &g) in images.iter().zip(&gains) {
            if g == 0.0 {
                continue;
            }
            let d = ((pos[0] - ear[0]).powi(2) + (pos[1] - ear[1]).powi(2)).sqrt();
            paths.push((d * samples_per_unit, g / d.max(0.1)));
        }
        paths.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for &(delay, amp) in &paths {
            let i = delay.floor() as usize;
            let frac = delay - i as f64;
            if i < cfg.length {
                out[i] += amp * (1.0 - frac);
            }
            if i + 1 < cfg.length {
                out[i + 1] += amp * frac;
            }
        }
    }
    let [l, r] = channels;
    Rir::new(l, r, cfg.sample_rate)
}
