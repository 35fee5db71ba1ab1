//! Random rooms and few-shot episodes of context observations and queries.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{Material, Obstacle, Pose, SceneSpec, PALETTE, WALL_MARGIN};
use super::image_source::{render_rir, RenderConfig};
use super::raycast::{raycast_scan, RaycastScan};
use crate::dsp::Rir;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Context observations per episode.
    pub context: usize,
    /// Query poses per episode.
    pub queries: usize,
    pub grid_resolution: f64,
    pub rays: usize,
    /// Field of view in degrees.
    pub fov_deg: f64,
    /// Room extents are drawn from `min..=max` in steps of `extent_step`.
    pub extent_min: f64,
    pub extent_max: f64,
    pub extent_step: f64,
    /// Visual-only obstacles per scene.
    pub obstacles: usize,
    pub render: RenderConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            context: 8,
            queries: 16,
            grid_resolution: 0.5,
            rays: 64,
            fov_deg: 90.0,
            extent_min: 3.0,
            extent_max: 6.0,
            extent_step: 0.5,
            obstacles: 0,
            render: RenderConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn fov(&self) -> f64 {
        self.fov_deg.to_radians()
    }
}

/// Pose, echo and scan observed at one context position.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextObservation {
    pub pose: Pose,
    pub echo: Rir,
    pub scan: RaycastScan,
}

/// A query pose and its ground-truth response.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub pose: Pose,
    pub target: Rir,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub scene: SceneSpec,
    pub context: Vec<ContextObservation>,
    pub queries: Vec<QueryRecord>,
}

/// Draws a room: extents on the configured lattice, palette wall materials,
/// and optional obstacles away from the walls.
pub fn sample_scene(rng: &mut impl Rng, cfg: &EpisodeConfig) -> Result<SceneSpec> {
    let steps = ((cfg.extent_max - cfg.extent_min) / cfg.extent_step + 1e-9).floor() as usize;
    let mut extent = [0.0; 2];
    for e in &mut extent {
        *e = cfg.extent_min + rng.gen_range(0..=steps) as f64 * cfg.extent_step;
    }
    let mut walls = [Material::from_palette(0)?; 4];
    for w in &mut walls {
        *w = Material::from_palette(rng.gen_range(0..PALETTE.len() as u8))?;
    }
    let mut obstacles = Vec::with_capacity(cfg.obstacles);
    for _ in 0..cfg.obstacles {
        let mut corner = [0.0; 2];
        let mut size = [0.0; 2];
        for a in 0..2 {
            size[a] = rng.gen_range(0.25..1.0);
            corner[a] = rng.gen_range(WALL_MARGIN..extent[a] - WALL_MARGIN - size[a]);
        }
        obstacles.push(Obstacle {
            min: corner,
            max: [corner[0] + size[0], corner[1] + size[1]],
            material: rng.gen_range(0..PALETTE.len() as u8),
        });
    }
    let mut scene = SceneSpec::new([0.0, 0.0], extent, walls, obstacles)?;
    scene.seed = rng.gen();
    Ok(scene)
}

/// `n` distinct grid cells as echo poses with random orientations.
pub fn sample_context_poses(rng: &mut impl Rng, scene: &SceneSpec, cfg: &EpisodeConfig, n: usize) -> Result<Vec<Pose>> {
    let grid = scene.grid_points(cfg.grid_resolution);
    if grid.len() < n + 1 {
        return Err(Error::Scene(format!(
            "grid of {} cells too small for {n} context poses and a free query cell",
            grid.len()
        )));
    }
    Ok(grid
        .choose_multiple(rng, n)
        .map(|&p| Pose::echo(p, rng.gen_range(0..4)))
        .collect())
}

/// Query poses with independent speaker and listener cells. Listeners
/// avoid every cell in `avoid`; speaker and listener never coincide.
pub fn sample_query_poses(
    rng: &mut impl Rng,
    scene: &SceneSpec,
    cfg: &EpisodeConfig,
    avoid: &[[f64; 2]],
    n: usize,
) -> Result<Vec<Pose>> {
    let grid = scene.grid_points(cfg.grid_resolution);
    let listeners: Vec<[f64; 2]> = grid.iter().copied().filter(|p| !avoid.contains(p)).collect();
    if listeners.is_empty() || grid.len() < 2 {
        return Err(Error::Scene("no free cell for query listeners".into()));
    }
    let mut poses = Vec::with_capacity(n);
    while poses.len() < n {
        let listener = *listeners.choose(rng).expect("non-empty");
        let speaker = *grid.choose(rng).expect("non-empty");
        let orientation = rng.gen_range(0..4);
        if speaker != listener {
            poses.push(Pose {
                speaker,
                listener,
                orientation,
            });
        }
    }
    Ok(poses)
}

pub fn observe(scene: &SceneSpec, pose: &Pose, cfg: &EpisodeConfig) -> Result<ContextObservation> {
    Ok(ContextObservation {
        pose: *pose,
        echo: render_rir(scene, pose, &cfg.render)?,
        scan: raycast_scan(scene, pose, cfg.rays, cfg.fov())?,
    })
}

pub fn render_queries(scene: &SceneSpec, poses: &[Pose], cfg: &EpisodeConfig) -> Result<Vec<QueryRecord>> {
    poses
        .iter()
        .map(|p| {
            Ok(QueryRecord {
                pose: *p,
                target: render_rir(scene, p, &cfg.render)?,
            })
        })
        .collect()
}

/// Context observations and queries in a given room.
pub fn sample_episode_in(rng: &mut impl Rng, scene: SceneSpec, cfg: &EpisodeConfig) -> Result<Episode> {
    let poses = sample_context_poses(rng, &scene, cfg, cfg.context)?;
    let context = poses.iter().map(|p| observe(&scene, p, cfg)).collect::<Result<Vec<_>>>()?;
    let cells: Vec<[f64; 2]> = poses.iter().map(|p| p.listener).collect();
    let query_poses = sample_query_poses(rng, &scene, cfg, &cells, cfg.queries)?;
    let queries = render_queries(&scene, &query_poses, cfg)?;
    Ok(Episode { scene, context, queries })
}

/// A fresh room with its episode.
pub fn sample_episode(rng: &mut impl Rng, cfg: &EpisodeConfig) -> Result<Episode> {
    let scene = sample_scene(rng, cfg)?;
    sample_episode_in(rng, scene, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> EpisodeConfig {
        EpisodeConfig {
            queries: 4,
            rays: 16,
            ..EpisodeConfig::default()
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let a = sample_episode(&mut ChaCha8Rng::seed_from_u64(3), &small()).unwrap();
        let b = sample_episode(&mut ChaCha8Rng::seed_from_u64(3), &small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn context_is_colocated_and_distinct() {
        let ep = sample_episode(&mut ChaCha8Rng::seed_from_u64(4), &small()).unwrap();
        assert_eq!(ep.context.len(), 8);
        for (i, c) in ep.context.iter().enumerate() {
            assert_eq!(c.pose.speaker, c.pose.listener);
            for d in &ep.context[..i] {
                assert_ne!(c.pose.listener, d.pose.listener);
            }
        }
        for q in &ep.queries {
            assert_ne!(q.pose.speaker, q.pose.listener);
            assert!(ep.context.iter().all(|c| c.pose.listener != q.pose.listener));
        }
    }

    #[test]
    fn small_grid_without_replacement() {
        // 3 x 3 room: interior from 0.5 to 2.5 gives a 5 x 5 grid.
        let scene = SceneSpec::uniform([0.0, 0.0], [3.0, 3.0], Material::from_palette(0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let poses = sample_context_poses(&mut rng, &scene, &small(), 8).unwrap();
        let mut cells: Vec<_> = poses.iter().map(|p| p.listener.map(|v| (v * 2.0) as i32)).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 8);
        assert!(sample_context_poses(&mut rng, &scene, &small(), 25).is_err());
    }

    #[test]
    fn sampled_extents_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let s = sample_scene(&mut rng, &small()).unwrap();
            assert!(s.extent.iter().all(|&e| (3.0..=6.0).contains(&e) && (e * 2.0).fract() == 0.0));
        }
    }
}
