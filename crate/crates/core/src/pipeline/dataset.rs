//! Seeded scene sets for training and evaluation, and their archive form.
//!
//! Training scenes store only context observations; query sets are drawn
//! fresh at train time. Seen-split episodes hold out query sets inside
//! training scenes, unseen-split episodes live in rooms whose seeds never
//! appear in training.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::archive::{decode_shaped, encode_array, manifest_of, Archive, Dtype};
use super::config::{DataConfig, RunConfig};
use crate::dsp::{stft_log_mag, Rir, StftConfig};
use crate::error::{Error, Result};
use crate::mapping::{episode_origin, MapSpec};
use crate::model::{ContextInput, EpisodeInputs};
use crate::scene::{
    observe, render_queries, sample_context_poses, sample_query_poses, sample_scene, ContextObservation, EpisodeConfig,
    Pose, QueryRecord, RaycastScan, SceneSpec,
};

pub const ARCHIVE_KIND: &str = "dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Seen,
    Unseen,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(Split::Seen),
            "unseen" => Ok(Split::Unseen),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?} (seen, unseen)"))),
        }
    }
}

/// A room and its fixed context observations.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub scene: SceneSpec,
    pub context: Vec<ContextObservation>,
}

/// Held-out queries in one room. `scene` indexes the training scenes for
/// the seen split and the unseen scenes otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalEpisode {
    pub split: Split,
    pub scene: usize,
    pub queries: Vec<QueryRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub fingerprint: String,
    pub train: Vec<SceneRecord>,
    pub unseen: Vec<SceneRecord>,
    pub seen_eval: Vec<EvalEpisode>,
    pub unseen_eval: Vec<EvalEpisode>,
}

/// Derived seed for `(label, index)`, below 2^62 and tagged in its lowest
/// bit so that differently tagged families can never collide.
pub fn derive_seed(master: u64, label: &str, index: usize, tag: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    h.update((index as u64).to_le_bytes());
    let d = h.finalize();
    let v = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    ((v >> 3) << 1) | (tag & 1)
}

pub fn train_scene_seed(master: u64, i: usize) -> u64 {
    derive_seed(master, "train-scene", i, 0)
}

pub fn unseen_scene_seed(master: u64, i: usize) -> u64 {
    derive_seed(master, "unseen-scene", i, 1)
}

fn f32_round(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

/// Rounds stored arrays to their archived precision so that a generated
/// dataset equals its reloaded copy.
fn quantize_rir(rir: &mut Rir) {
    for ch in 0..2 {
        f32_round(rir.channel_mut(ch));
    }
}

fn quantize_observation(obs: &mut ContextObservation) {
    quantize_rir(&mut obs.echo);
    f32_round(&mut obs.scan.depths);
}

fn quantize_queries(queries: &mut [QueryRecord]) {
    for q in queries {
        quantize_rir(&mut q.target);
    }
}

fn gen_scene(seed: u64, cfg: &EpisodeConfig) -> Result<(SceneRecord, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = sample_scene(&mut rng, cfg)?;
    scene.seed = seed;
    let poses = sample_context_poses(&mut rng, &scene, cfg, cfg.context)?;
    let mut context = Vec::with_capacity(poses.len());
    for p in &poses {
        let mut obs = observe(&scene, p, cfg)?;
        quantize_observation(&mut obs);
        context.push(obs);
    }
    Ok((SceneRecord { scene, context }, rng))
}

fn context_cells(record: &SceneRecord) -> Vec<[f64; 2]> {
    record.context.iter().map(|c| c.pose.listener).collect()
}

/// Training scene used by seen-split episode `j`: evenly spaced.
pub fn seen_scene_index(j: usize, seen: usize, train: usize) -> usize {
    j * train / seen.max(1)
}

impl Dataset {
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let data = &cfg.data;
        let ep = &data.episode;
        let train = (0..data.train_scenes)
            .map(|i| gen_scene(train_scene_seed(cfg.seed, i), ep).map(|(r, _)| r))
            .collect::<Result<Vec<_>>>()?;
        let mut seen_eval = Vec::with_capacity(data.seen_eval_episodes);
        for j in 0..data.seen_eval_episodes {
            let scene = seen_scene_index(j, data.seen_eval_episodes, data.train_scenes);
            let record = &train[scene];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "seen-queries", j, 0));
            let poses = sample_query_poses(&mut rng, &record.scene, ep, &context_cells(record), ep.queries)?;
            let mut queries = render_queries(&record.scene, &poses, ep)?;
            quantize_queries(&mut queries);
            seen_eval.push(EvalEpisode {
                split: Split::Seen,
                scene,
                queries,
            });
        }
        let mut unseen = Vec::with_capacity(data.unseen_eval_episodes);
        let mut unseen_eval = Vec::with_capacity(data.unseen_eval_episodes);
        for i in 0..data.unseen_eval_episodes {
            let (record, mut rng) = gen_scene(unseen_scene_seed(cfg.seed, i), ep)?;
            let poses = sample_query_poses(&mut rng, &record.scene, ep, &context_cells(&record), ep.queries)?;
            let mut queries = render_queries(&record.scene, &poses, ep)?;
            quantize_queries(&mut queries);
            unseen.push(record);
            unseen_eval.push(EvalEpisode {
                split: Split::Unseen,
                scene: i,
                queries,
            });
        }
        let out = Self {
            fingerprint: cfg.data_fingerprint()?,
            train,
            unseen,
            seen_eval,
            unseen_eval,
        };
        out.check_splits()?;
        Ok(out)
    }

    /// Split contract: disjoint scene seeds, held-out listeners away from
    /// context cells.
    pub fn check_splits(&self) -> Result<()> {
        let train: BTreeSet<u64> = self.train.iter().map(|r| r.scene.seed).collect();
        if let Some(r) = self.unseen.iter().find(|r| train.contains(&r.scene.seed)) {
            return Err(Error::Scene(format!("unseen scene seed {} also used for training", r.scene.seed)));
        }
        for ep in self.seen_eval.iter().chain(&self.unseen_eval) {
            let cells = context_cells(self.scene(ep));
            if ep.queries.iter().any(|q| cells.contains(&q.pose.listener)) {
                return Err(Error::Scene(format!("{} episode has a query at a context cell", ep.split.name())));
            }
        }
        Ok(())
    }

    pub fn episodes(&self, split: Split) -> &[EvalEpisode] {
        match split {
            Split::Seen => &self.seen_eval,
            Split::Unseen => &self.unseen_eval,
        }
    }

    pub fn scene(&self, ep: &EvalEpisode) -> &SceneRecord {
        match ep.split {
            Split::Seen => &self.train[ep.scene],
            Split::Unseen => &self.unseen[ep.scene],
        }
    }

    /// Speaker-listener pairs held out for evaluation in training scene `i`.
    pub fn held_out_pairs(&self, i: usize) -> Vec<([f64; 2], [f64; 2])> {
        self.seen_eval
            .iter()
            .filter(|e| e.scene == i)
            .flat_map(|e| e.queries.iter().map(|q| (q.pose.speaker, q.pose.listener)))
            .collect()
    }

    /// Looks a room up by its seed in either scene set.
    pub fn scene_by_seed(&self, seed: u64) -> Option<&SceneRecord> {
        self.train.iter().chain(&self.unseen).find(|r| r.scene.seed == seed)
    }

    pub fn to_archive(&self, cfg: &RunConfig) -> Result<Archive> {
        let manifest = Manifest {
            fingerprint: self.fingerprint.clone(),
            seed: cfg.seed,
            data: cfg.data.clone(),
            scenes: self
                .train
                .iter()
                .map(|r| SceneEntry::of(r, "train"))
                .chain(self.unseen.iter().map(|r| SceneEntry::of(r, "unseen")))
                .collect(),
            episodes: self
                .seen_eval
                .iter()
                .chain(&self.unseen_eval)
                .map(|e| EpisodeEntry {
                    split: e.split,
                    scene: e.scene,
                    scene_seed: self.scene(e).scene.seed,
                    queries: e.queries.len(),
                })
                .collect(),
        };
        let mut a = Archive::new(ARCHIVE_KIND, manifest_of(&manifest)?);
        for (prefix, records) in [("train", &self.train), ("unseen", &self.unseen)] {
            for (i, r) in records.iter().enumerate() {
                let poses: Vec<Pose> = r.context.iter().map(|c| c.pose).collect();
                let n = r.context.len();
                let w = r.context.first().map_or(0, |c| c.scan.len());
                let mut depths = Vec::with_capacity(n * w);
                let mut materials = Vec::with_capacity(n * w);
                for c in &r.context {
                    depths.extend_from_slice(&c.scan.depths);
                    materials.extend(c.scan.materials.iter().map(|&m| m as f64));
                }
                let echoes: Vec<&Rir> = r.context.iter().map(|c| &c.echo).collect();
                a.push(format!("{prefix}/{i}/poses"), encode_poses(&poses)?);
                a.push(format!("{prefix}/{i}/depths"), encode_array(Dtype::F32, &[n, w], &depths)?);
                a.push(format!("{prefix}/{i}/materials"), encode_array(Dtype::F32, &[n, w], &materials)?);
                a.push(format!("{prefix}/{i}/echoes"), encode_rirs(&echoes)?);
            }
        }
        for (k, e) in self.seen_eval.iter().chain(&self.unseen_eval).enumerate() {
            let poses: Vec<Pose> = e.queries.iter().map(|q| q.pose).collect();
            let targets: Vec<&Rir> = e.queries.iter().map(|q| &q.target).collect();
            a.push(format!("episode/{k}/poses"), encode_poses(&poses)?);
            a.push(format!("episode/{k}/targets"), encode_rirs(&targets)?);
        }
        Ok(a)
    }

    /// Decodes an archive generated under `cfg`; a fingerprint mismatch is
    /// rejected.
    pub fn from_archive(a: &Archive, cfg: &RunConfig) -> Result<Self> {
        let m: Manifest = a.manifest_as()?;
        let expected = cfg.data_fingerprint()?;
        if m.fingerprint != expected {
            return Err(Error::ConfigMismatch {
                expected,
                found: m.fingerprint,
            });
        }
        let ep = &cfg.data.episode;
        let (sr, len) = (ep.render.sample_rate, ep.render.length);
        let mut train = Vec::new();
        let mut unseen = Vec::new();
        for s in &m.scenes {
            let (prefix, list) = match s.split.as_str() {
                "train" => ("train", &mut train),
                "unseen" => ("unseen", &mut unseen),
                other => return Err(Error::Format(format!("unknown scene split {other}"))),
            };
            let i = list.len();
            let n = s.context;
            let blob = |what: &str| a.blob(&format!("{prefix}/{i}/{what}"));
            let poses = decode_poses(blob("poses")?, n)?;
            let depths = decode_shaped(blob("depths")?, &[n, ep.rays])?;
            let materials = decode_shaped(blob("materials")?, &[n, ep.rays])?;
            let echoes = decode_rirs(blob("echoes")?, n, len, sr)?;
            let context = poses
                .into_iter()
                .zip(echoes)
                .enumerate()
                .map(|(k, (pose, echo))| ContextObservation {
                    pose,
                    echo,
                    scan: RaycastScan {
                        depths: depths[k * ep.rays..(k + 1) * ep.rays].to_vec(),
                        materials: materials[k * ep.rays..(k + 1) * ep.rays].iter().map(|&v| v as u8).collect(),
                        camera: pose.listener,
                        orientation: pose.orientation,
                        fov: ep.fov(),
                    },
                })
                .collect();
            list.push(SceneRecord {
                scene: s.scene.clone(),
                context,
            });
        }
        let mut seen_eval = Vec::new();
        let mut unseen_eval = Vec::new();
        for (k, e) in m.episodes.iter().enumerate() {
            let poses = decode_poses(a.blob(&format!("episode/{k}/poses"))?, e.queries)?;
            let targets = decode_rirs(a.blob(&format!("episode/{k}/targets"))?, e.queries, len, sr)?;
            let episode = EvalEpisode {
                split: e.split,
                scene: e.scene,
                queries: poses
                    .into_iter()
                    .zip(targets)
                    .map(|(pose, target)| QueryRecord { pose, target })
                    .collect(),
            };
            let (list, scenes) = match e.split {
                Split::Seen => (&mut seen_eval, &train),
                Split::Unseen => (&mut unseen_eval, &unseen),
            };
            if scenes.get(e.scene).map(|r| r.scene.seed) != Some(e.scene_seed) {
                return Err(Error::Format(format!("episode {k} points at a missing scene")));
            }
            list.push(episode);
        }
        let out = Self {
            fingerprint: m.fingerprint,
            train,
            unseen,
            seen_eval,
            unseen_eval,
        };
        out.check_splits()?;
        Ok(out)
    }

    pub fn save(&self, path: &Path, cfg: &RunConfig) -> Result<()> {
        self.to_archive(cfg)?.write(path)
    }

    pub fn load(path: &Path, cfg: &RunConfig) -> Result<Self> {
        Self::from_archive(&Archive::read(path, ARCHIVE_KIND)?, cfg)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    fingerprint: String,
    seed: u64,
    data: DataConfig,
    scenes: Vec<SceneEntry>,
    episodes: Vec<EpisodeEntry>,
}

#[derive(Serialize, Deserialize)]
struct SceneEntry {
    split: String,
    context: usize,
    scene: SceneSpec,
}

impl SceneEntry {
    fn of(r: &SceneRecord, split: &str) -> Self {
        Self {
            split: split.into(),
            context: r.context.len(),
            scene: r.scene.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EpisodeEntry {
    split: Split,
    scene: usize,
    scene_seed: u64,
    queries: usize,
}

/// `[n, 5]`: speaker xy, listener xy, orientation.
fn encode_poses(poses: &[Pose]) -> Result<Vec<u8>> {
    let data: Vec<f64> = poses
        .iter()
        .flat_map(|p| [p.speaker[0], p.speaker[1], p.listener[0], p.listener[1], p.orientation as f64])
        .collect();
    encode_array(Dtype::F32, &[poses.len(), 5], &data)
}

fn decode_poses(bytes: &[u8], n: usize) -> Result<Vec<Pose>> {
    let data = decode_shaped(bytes, &[n, 5])?;
    Ok(data
        .chunks_exact(5)
        .map(|r| Pose {
            speaker: [r[0], r[1]],
            listener: [r[2], r[3]],
            orientation: r[4] as u8,
        })
        .collect())
}

/// `[n, 2, len]`.
fn encode_rirs(rirs: &[&Rir]) -> Result<Vec<u8>> {
    let len = rirs.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rirs.len() * 2 * len);
    for r in rirs {
        data.extend_from_slice(r.channel(0));
        data.extend_from_slice(r.channel(1));
    }
    encode_array(Dtype::F32, &[rirs.len(), 2, len], &data)
}

fn decode_rirs(bytes: &[u8], n: usize, len: usize, sample_rate: u32) -> Result<Vec<Rir>> {
    let data = decode_shaped(bytes, &[n, 2, len])?;
    data.chunks_exact(2 * len)
        .map(|r| Rir::new(r[..len].to_vec(), r[len..].to_vec(), sample_rate))
        .collect()
}

/// Model-ready view of a room: echo spectrograms and a map centred on the
/// context listeners.
pub fn episode_inputs(record: &SceneRecord, cfg: &RunConfig) -> Result<EpisodeInputs> {
    let listeners = context_cells(record);
    let origin = episode_origin(&record.scene, &listeners, cfg.data.episode.grid_resolution)?;
    Ok(EpisodeInputs {
        map: MapSpec::new(cfg.map.size, cfg.map.resolution, origin)?,
        context: record
            .context
            .iter()
            .map(|c| {
                Ok(ContextInput {
                    pose: c.pose,
                    echo: stft_log_mag(&c.echo, &cfg.stft)?,
                    scan: c.scan.clone(),
                })
            })
            .collect::<Result<_>>()?,
    })
}

/// `[N', 2, F, T]` target spectrograms, row-major.
pub fn target_spectrograms(queries: &[QueryRecord], stft: &StftConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(queries.len() * 2 * stft.bins() * stft.frames);
    for q in queries {
        out.extend_from_slice(stft_log_mag(&q.target, stft)?.values());
    }
    Ok(out)
}

/// Fresh training queries in a room: listeners avoid the context cells and
/// no held-out evaluation pair is reused.
pub fn sample_train_queries(
    rng: &mut impl Rng,
    record: &SceneRecord,
    held_out: &[([f64; 2], [f64; 2])],
    cfg: &EpisodeConfig,
    n: usize,
) -> Result<Vec<Pose>> {
    let cells = context_cells(record);
    let mut out = Vec::with_capacity(n);
    // Each draw fails with small probability; the bound only guards against
    // rooms whose every free pair is held out.
    for _ in 0..1000 * n.max(1) {
        if out.len() == n {
            break;
        }
        let p = sample_query_poses(rng, &record.scene, cfg, &cells, 1)?[0];
        if !held_out.contains(&(p.speaker, p.listener)) {
            out.push(p);
        }
    }
    if out.len() < n {
        return Err(Error::Scene("no free query pairs left for training".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_families_are_disjoint_by_construction() {
        for i in 0..100 {
            assert_eq!(train_scene_seed(3, i) & 1, 0);
            assert_eq!(unseen_scene_seed(3, i) & 1, 1);
            assert!(train_scene_seed(3, i) < 1 << 62);
        }
        assert_ne!(train_scene_seed(3, 0), train_scene_seed(4, 0));
    }

    #[test]
    fn seen_scenes_spread_over_training_rooms() {
        let idx: Vec<usize> = (0..4).map(|j| seen_scene_index(j, 4, 10)).collect();
        assert_eq!(idx, vec![0, 2, 5, 7]);
        assert_eq!(seen_scene_index(0, 1, 1), 0);
    }
}
