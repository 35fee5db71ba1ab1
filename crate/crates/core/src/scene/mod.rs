//! Synthetic ground truth: shoebox rooms, image-source binaural RIRs,
//! ray-cast observations and few-shot episode sampling.

mod episode;
mod geometry;
mod image_source;
mod raycast;

pub use episode::{
    observe, render_queries, sample_context_poses, sample_episode, sample_episode_in, sample_query_poses, sample_scene,
    ContextObservation, Episode, EpisodeConfig, QueryRecord,
};
pub use geometry::{heading, Material, Obstacle, Pose, SceneSpec, Wall, PALETTE, WALL_MARGIN};
pub use image_source::{image_sources, render_rir, ImageSource, RenderConfig};
pub use raycast::{raycast_scan, RaycastScan, DEFAULT_FOV};
