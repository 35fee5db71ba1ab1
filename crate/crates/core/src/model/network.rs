//! Forward pass of every component on one autodiff tape.

use super::config::{Ablation, ModelConfig};
use crate::autodiff::{BoundParams, ConvGeometry, Graph, ParamStore, ReduceKind, Tensor, Var};
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::mapping::{project_stacked, sinusoidal_pose_embed, MapSpec};
use crate::scene::{Pose, RaycastScan};

/// One context observation in model-ready form.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextInput {
    pub pose: Pose,
    pub echo: Spectrogram,
    pub scan: RaycastScan,
}

/// Everything the network may see about an episode. Query targets are
/// deliberately absent.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeInputs {
    /// Map grid; its origin is also the pose-embedding reference.
    pub map: MapSpec,
    pub context: Vec<ContextInput>,
}

/// Handles produced by [`Forward::predict_rir`].
#[derive(Clone, Copy, Debug)]
pub struct Outputs {
    /// `[N', 2, F, T]` log-magnitude predictions.
    pub spectrograms: Var,
    /// `[m, m, c_f]` projected map, absent under `no_mapper`.
    pub m_osm: Option<Var>,
    pub m_ssm: Option<Var>,
}

/// Stacked `[n, 5·d_pe]` pose embeddings.
pub fn pose_matrix(poses: &[Pose], reference: [f64; 2], d_pe: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    for p in poses {
        data.extend(sinusoidal_pose_embed(p, reference, d_pe)?);
    }
    Tensor::new(vec![poses.len(), data.len() / poses.len().max(1)], data)
}

/// Fixed 2-D sinusoidal features for a `side × side` token grid: the first
/// half of each row encodes the token row, the second half its column.
pub fn position_features(side: usize, d: usize) -> Tensor {
    let half = d / 2;
    let mut data = vec![0.0; side * side * d];
    for (token, row) in data.chunks_mut(d).enumerate() {
        for (offset, pos) in [(0, token / side), (half, token % side)] {
            for k in 0..half / 2 {
                let freq = 10000f64.powf(-2.0 * k as f64 / half as f64);
                let (s, c) = (pos as f64 * freq).sin_cos();
                row[offset + 2 * k] = s;
                row[offset + 2 * k + 1] = c;
            }
        }
    }
    Tensor::new(vec![side * side, d], data).expect("sized above")
}

/// A forward pass under construction: the tape plus lazily bound parameters.
pub struct Forward<'p> {
    pub graph: Graph,
    pub params: BoundParams<'p>,
    cfg: &'p ModelConfig,
}

impl<'p> Forward<'p> {
    /// `trainable` makes parameters gradient-carrying leaves.
    pub fn new(cfg: &'p ModelConfig, store: &'p ParamStore, trainable: bool) -> Self {
        Self {
            graph: Graph::new(),
            params: BoundParams::new(store, trainable),
            cfg,
        }
    }

    /// Continues recording on an existing tape.
    pub fn with_graph(cfg: &'p ModelConfig, store: &'p ParamStore, trainable: bool, graph: Graph) -> Self {
        Self {
            graph,
            params: BoundParams::new(store, trainable),
            cfg,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.params.get(&mut self.graph, name)
    }

    fn linear(&mut self, x: Var, name: &str) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        self.graph.linear(x, w, b)
    }

    fn add_channel_bias(&mut self, x: Var, name: &str) -> Result<Var> {
        let b = self.param(&format!("{name}.bias"))?;
        let c = self.graph.shape(b)[0];
        let b = self.graph.reshape(b, &[c, 1, 1])?;
        self.graph.add(x, b)
    }

    fn conv(&mut self, x: Var, name: &str, geom: ConvGeometry) -> Result<Var> {
        let k = self.param(&format!("{name}.weight"))?;
        let y = self.graph.conv2d(x, k, geom)?;
        self.add_channel_bias(y, name)
    }

    fn conv_t(&mut self, x: Var, name: &str, geom: ConvGeometry) -> Result<Var> {
        let k = self.param(&format!("{name}.weight"))?;
        let y = self.graph.conv_transpose2d(x, k, geom)?;
        self.add_channel_bias(y, name)
    }

    fn norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let gain = self.param(&format!("{name}.gain"))?;
        let bias = self.param(&format!("{name}.bias"))?;
        self.graph.layer_norm(x, gain, bias)
    }

    /// Row-broadcast of a `[1, k]` token to `[n, k]`.
    fn repeat_rows(&mut self, token: Var, n: usize) -> Result<Var> {
        let ones = self.graph.constant(Tensor::ones(&[n, 1]));
        self.graph.matmul(ones, token)
    }

    /// Per-ray features `[ΣW, c_f]` for scans stacked in order.
    pub fn visual_encoder(&mut self, scans: &[&RaycastScan]) -> Result<Var> {
        let w = scans.first().map(|s| s.len()).ok_or_else(|| Error::InvalidArgument("no scans".into()))?;
        if w == 0 || w % 4 != 0 || scans.iter().any(|s| s.len() != w) {
            return Err(Error::Geometry {
                op: "visual_encoder",
                detail: format!("scan widths must agree and divide by 4, got {:?}", scans.iter().map(|s| s.len()).collect::<Vec<_>>()),
            });
        }
        let n = scans.len();
        let ids: Vec<usize> = scans.iter().flat_map(|s| s.materials.iter().map(|&m| m as usize)).collect();
        if let Some(bad) = ids.iter().find(|&&m| m >= self.cfg.materials) {
            return Err(Error::InvalidArgument(format!("material id {bad} outside the embedding table")));
        }
        let table = self.param("material.embed")?;
        let mats = self.graph.gather_rows(table, &ids)?;
        let depths: Vec<f64> = scans.iter().flat_map(|s| s.depths.iter().copied()).collect();
        let depths = self.graph.constant(Tensor::new(vec![n * w, 1], depths)?);
        let rays = self.graph.concat(&[depths, mats], 1)?;
        let ch = 1 + self.cfg.material_dim;
        let x = self.graph.reshape(rays, &[n, w, ch])?;
        let x = self.graph.permute(x, &[0, 2, 1])?;
        let x = self.graph.reshape(x, &[n, ch, 1, w])?;

        let same = ConvGeometry::along_width(1, 1);
        let half = ConvGeometry::along_width(2, 1);
        let e0 = self.conv(x, "visual.in", same)?;
        let e0 = self.graph.relu(e0)?;
        let e1 = self.conv(e0, "visual.down1", half)?;
        let e1 = self.graph.relu(e1)?;
        let e2 = self.conv(e1, "visual.down2", half)?;
        let e2 = self.graph.relu(e2)?;
        let u1 = self.conv_t(e2, "visual.up1", half)?;
        let u1 = self.graph.relu(u1)?;
        let u1 = self.graph.add(u1, e1)?;
        let u0 = self.conv_t(u1, "visual.up2", half)?;
        let u0 = self.graph.relu(u0)?;
        let u0 = self.graph.add(u0, e0)?;
        let out = self.conv(u0, "visual.out", ConvGeometry::new(1, 0))?;

        let c = self.cfg.c_f;
        let out = self.graph.reshape(out, &[n, c, w])?;
        let out = self.graph.permute(out, &[0, 2, 1])?;
        self.graph.reshape(out, &[n * w, c])
    }

    /// Top-down map `[m, m, c_f]` of the encoded scans; all-zero if no ray
    /// lands on the grid.
    pub fn observation_map(&mut self, features: Var, scans: &[&RaycastScan], spec: &MapSpec) -> Result<Var> {
        if spec.size != self.cfg.map_size {
            return Err(Error::Geometry {
                op: "observation_map",
                detail: format!("map of {} cells, config expects {}", spec.size, self.cfg.map_size),
            });
        }
        match project_stacked(&mut self.graph, features, scans, spec)? {
            Some(map) => Ok(map),
            None => Ok(self.graph.constant(Tensor::zeros(&[spec.size, spec.size, self.cfg.c_f]))),
        }
    }

    /// `M_OSM + UNet(M_OSM)` on an `[m, m, c_f]` map; `skip = false` drops
    /// the residual sum.
    pub fn anticipate(&mut self, m_osm: Var, skip: bool) -> Result<Var> {
        let (m, c) = (self.cfg.map_size, self.cfg.c_f);
        if self.graph.shape(m_osm) != [m, m, c] {
            return Err(Error::ShapeMismatch {
                op: "anticipate",
                lhs: vec![m, m, c],
                rhs: self.graph.shape(m_osm).to_vec(),
            });
        }
        let geom = ConvGeometry::new(2, 1);
        let depth = self.cfg.anticipation_channels.len();
        let mut x = self.graph.permute(m_osm, &[2, 0, 1])?;
        let mut skips = Vec::with_capacity(depth);
        for i in 1..=depth {
            skips.push(x);
            let y = self.conv(x, &format!("anticipation.down{i}"), geom)?;
            x = self.graph.relu(y)?;
        }
        for i in (1..=depth).rev() {
            let y = self.conv_t(x, &format!("anticipation.up{i}"), geom)?;
            x = if i > 1 {
                let y = self.graph.relu(y)?;
                self.graph.add(y, skips[i - 1])?
            } else {
                y
            };
        }
        let delta = self.graph.permute(x, &[1, 2, 0])?;
        if skip {
            self.graph.add(m_osm, delta)
        } else {
            Ok(delta)
        }
    }

    /// Stride-`p` patch convolution flattened to `[(m/p)², d_model]`, before
    /// any position or modality features.
    pub fn patch_project(&mut self, map: Var) -> Result<Var> {
        let (m, c, p, d) = (self.cfg.map_size, self.cfg.c_f, self.cfg.patch, self.cfg.d_model);
        if self.graph.shape(map) != [m, m, c] {
            return Err(Error::ShapeMismatch {
                op: "patch_embed",
                lhs: vec![m, m, c],
                rhs: self.graph.shape(map).to_vec(),
            });
        }
        let x = self.graph.permute(map, &[2, 0, 1])?;
        let y = self.conv(x, "patch", ConvGeometry::new(p, 0))?;
        let tokens = self.cfg.tokens_per_map();
        let y = self.graph.reshape(y, &[d, tokens])?;
        self.graph.transpose(y)
    }

    pub fn patch_embed(&mut self, map: Var) -> Result<Var> {
        let tokens = self.patch_project(map)?;
        let side = self.cfg.map_size / self.cfg.patch;
        let pos = self.graph.constant(position_features(side, self.cfg.d_model));
        let tokens = self.graph.add(tokens, pos)?;
        let modality = self.param("tokens.map")?;
        self.graph.add(tokens, modality)
    }

    /// One `[N, d_model]` token per echo.
    pub fn audio_encoder(&mut self, echoes: &[&Spectrogram], poses: &Tensor) -> Result<Var> {
        let (f, t) = (self.cfg.freq_bins, self.cfg.frames);
        let n = echoes.len();
        let mut data = Vec::with_capacity(n * 2 * f * t);
        for e in echoes {
            if e.config().shape() != [2, f, t] {
                return Err(Error::ShapeMismatch {
                    op: "audio_encoder",
                    lhs: vec![2, f, t],
                    rhs: e.config().shape().to_vec(),
                });
            }
            data.extend_from_slice(e.values());
        }
        let mut x = self.graph.constant(Tensor::new(vec![n, 2, f, t], data)?);
        for i in 1..=self.cfg.audio_channels.len() {
            let y = self.conv(x, &format!("audio.conv{i}"), ConvGeometry::new(2, 1))?;
            x = self.graph.relu(y)?;
        }
        let s = self.graph.shape(x).to_vec();
        let x = self.graph.reshape(x, &[n, s[1], s[2] * s[3]])?;
        let pooled = self.graph.reduce(x, ReduceKind::Mean, Some(2))?;
        self.fuse(pooled, poses, "audio")
    }

    /// Pooled per-view visual tokens replacing the map (`no_mapper`).
    pub fn visual_tokens(&mut self, features: Var, views: usize, poses: &Tensor) -> Result<Var> {
        let c = self.cfg.c_f;
        let total = self.graph.shape(features)[0];
        let x = self.graph.reshape(features, &[views, total / views, c])?;
        let pooled = self.graph.reduce(x, ReduceKind::Mean, Some(1))?;
        self.fuse(pooled, poses, "visual")
    }

    /// `[feature ‖ modality token ‖ pose embedding]` through one linear layer.
    fn fuse(&mut self, features: Var, poses: &Tensor, prefix: &str) -> Result<Var> {
        let n = self.graph.shape(features)[0];
        if poses.shape() != [n, self.cfg.pose_dim()] {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                lhs: vec![n, self.cfg.pose_dim()],
                rhs: poses.shape().to_vec(),
            });
        }
        let token = self.param(&format!("{prefix}.modality"))?;
        let token = self.repeat_rows(token, n)?;
        let pose = self.graph.constant(poses.clone());
        let x = self.graph.concat(&[features, token, pose], 1)?;
        self.linear(x, &format!("{prefix}.fuse"))
    }

    /// Multi-head scaled dot-product attention of `xq` over `xkv`.
    pub fn attention(&mut self, xq: Var, xkv: Var, name: &str) -> Result<Var> {
        let q = self.linear(xq, &format!("{name}.q"))?;
        let k = self.linear(xkv, &format!("{name}.k"))?;
        let v = self.linear(xkv, &format!("{name}.v"))?;
        let heads = self.cfg.heads;
        let dh = self.cfg.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.graph.narrow(q, 1, h * dh, dh)?;
            let kh = self.graph.narrow(k, 1, h * dh, dh)?;
            let vh = self.graph.narrow(v, 1, h * dh, dh)?;
            let kt = self.graph.transpose(kh)?;
            let scores = self.graph.matmul(qh, kt)?;
            let scores = self.graph.scale(scores, scale)?;
            let weights = self.graph.softmax(scores, 1)?;
            outs.push(self.graph.matmul(weights, vh)?);
        }
        let joined = if heads == 1 { outs[0] } else { self.graph.concat(&outs, 1)? };
        self.linear(joined, &format!("{name}.o"))
    }

    fn feed_forward(&mut self, x: Var, name: &str) -> Result<Var> {
        let h = self.linear(x, &format!("{name}.ffn1"))?;
        let h = self.graph.relu(h)?;
        self.linear(h, &format!("{name}.ffn2"))
    }

    /// Pre-norm block; `memory = None` means self-attention.
    fn block(&mut self, x: Var, memory: Option<Var>, name: &str) -> Result<Var> {
        let h = self.norm(x, &format!("{name}.ln1"))?;
        let a = self.attention(h, memory.unwrap_or(h), &format!("{name}.attn"))?;
        let x = self.graph.add(x, a)?;
        let h = self.norm(x, &format!("{name}.ln2"))?;
        let f = self.feed_forward(h, name)?;
        self.graph.add(x, f)
    }

    /// Self-attention stack over `[L, d_model]` tokens, final-normed.
    pub fn encode(&mut self, tokens: Var) -> Result<Var> {
        let d = self.cfg.d_model;
        if self.graph.shape(tokens).len() != 2 || self.graph.shape(tokens)[1] != d {
            return Err(Error::ShapeMismatch {
                op: "encode",
                lhs: vec![0, d],
                rhs: self.graph.shape(tokens).to_vec(),
            });
        }
        let mut x = tokens;
        for l in 0..self.cfg.encoder_layers {
            x = self.block(x, None, &format!("encoder.{l}"))?;
        }
        self.norm(x, "encoder.norm")
    }

    /// One decoder token per query pose, cross-attending to `memory` only.
    pub fn decode(&mut self, memory: Var, queries: &Tensor) -> Result<Var> {
        if queries.rank() != 2 || queries.shape()[1] != self.cfg.pose_dim() {
            return Err(Error::ShapeMismatch {
                op: "decode",
                lhs: vec![0, self.cfg.pose_dim()],
                rhs: queries.shape().to_vec(),
            });
        }
        let q = self.graph.constant(queries.clone());
        let mut x = self.linear(q, "query.lift")?;
        for l in 0..self.cfg.decoder_layers {
            x = self.block(x, Some(memory), &format!("decoder.{l}"))?;
        }
        self.norm(x, "decoder.norm")
    }

    pub fn encode_decode(&mut self, tokens: Var, queries: &Tensor) -> Result<Var> {
        let memory = self.encode(tokens)?;
        self.decode(memory, queries)
    }

    /// `[N', d_model]` → `[N', 2, F, T]`, nonnegative.
    pub fn spectrogram_head(&mut self, x: Var) -> Result<Var> {
        let n = self.graph.shape(x)[0];
        let [h, w] = self.cfg.head_seed();
        let seed = self.linear(x, "head.seed")?;
        let mut y = self.graph.reshape(seed, &[n, self.cfg.head_channels[0], h, w])?;
        let blocks = self.cfg.head_channels.len();
        for i in 1..=blocks {
            y = self.conv_t(y, &format!("head.up{i}"), ConvGeometry::new(2, 0))?;
            if i < blocks {
                y = self.graph.relu(y)?;
            }
        }
        self.graph.relu(y)
    }

    /// The full composition from context observations to query spectrograms.
    pub fn predict_rir(&mut self, inputs: &EpisodeInputs, queries: &[Pose], ablation: Ablation) -> Result<Outputs> {
        let n = inputs.context.len();
        if n == 0 || queries.is_empty() {
            return Err(Error::InvalidArgument(format!("{n} context observations, {} queries", queries.len())));
        }
        let reference = inputs.map.origin;
        let d_pe = self.cfg.d_pe;
        let context_poses: Vec<Pose> = inputs.context.iter().map(|c| c.pose).collect();
        let context_emb = pose_matrix(&context_poses, reference, d_pe)?;
        let query_emb = pose_matrix(queries, reference, d_pe)?;

        let scans: Vec<&RaycastScan> = inputs.context.iter().map(|c| &c.scan).collect();
        let features = self.visual_encoder(&scans)?;
        let (visual, m_osm, m_ssm) = if ablation.no_mapper {
            (self.visual_tokens(features, n, &context_emb)?, None, None)
        } else {
            let m_osm = self.observation_map(features, &scans, &inputs.map)?;
            let m_ssm = if ablation.no_anticipation {
                m_osm
            } else {
                self.anticipate(m_osm, !ablation.no_skip)?
            };
            (self.patch_embed(m_ssm)?, Some(m_osm), Some(m_ssm))
        };
        let echoes: Vec<&Spectrogram> = inputs.context.iter().map(|c| &c.echo).collect();
        let audio = self.audio_encoder(&echoes, &context_emb)?;
        let tokens = self.graph.concat(&[visual, audio], 0)?;
        let decoded = self.encode_decode(tokens, &query_emb)?;
        let spectrograms = self.spectrogram_head(decoded)?;
        Ok(Outputs {
            spectrograms,
            m_osm,
            m_ssm,
        })
    }
}
