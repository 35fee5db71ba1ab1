//! Parameter names, shapes and initialization.
//!
//! Conv kernels are `[C_out, C_in, kH, kW]`; transposed-conv kernels are
//! `[C_in, C_out, kH, kW]` (the adjoint layout). Linear weights are
//! `[in, out]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{ParamStore, Tensor};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(−√(3/fan_in), √(3/fan_in))`: unit-variance preserving.
    FanIn(usize),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Default)]
struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn linear(&mut self, name: &str, d_in: usize, d_out: usize) {
        self.push(format!("{name}.weight"), vec![d_in, d_out], Init::FanIn(d_in));
        self.push(format!("{name}.bias"), vec![d_out], Init::Zeros);
    }

    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, k: [usize; 2]) {
        self.push(format!("{name}.weight"), vec![c_out, c_in, k[0], k[1]], Init::FanIn(c_in * k[0] * k[1]));
        self.push(format!("{name}.bias"), vec![c_out], Init::Zeros);
    }

    /// Transposed conv; each output sees `c_in·kH·kW/(sH·sW)` inputs.
    fn conv_t(&mut self, name: &str, c_in: usize, c_out: usize, k: [usize; 2], stride: [usize; 2], zero: bool) {
        let fan_in = (c_in * k[0] * k[1] / (stride[0] * stride[1])).max(1);
        let init = if zero { Init::Zeros } else { Init::FanIn(fan_in) };
        self.push(format!("{name}.weight"), vec![c_in, c_out, k[0], k[1]], init);
        self.push(format!("{name}.bias"), vec![c_out], Init::Zeros);
    }

    fn norm(&mut self, name: &str, d: usize) {
        self.push(format!("{name}.gain"), vec![d], Init::Ones);
        self.push(format!("{name}.bias"), vec![d], Init::Zeros);
    }

    fn block(&mut self, name: &str, cfg: &ModelConfig) {
        let d = cfg.d_model;
        self.norm(&format!("{name}.ln1"), d);
        for proj in ["q", "k", "v", "o"] {
            self.linear(&format!("{name}.attn.{proj}"), d, d);
        }
        self.norm(&format!("{name}.ln2"), d);
        self.linear(&format!("{name}.ffn1"), d, cfg.ffn_hidden);
        self.linear(&format!("{name}.ffn2"), cfg.ffn_hidden, d);
    }
}

/// Every parameter of the network in declaration order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut s = Specs::default();
    let [v0, v1, v2] = cfg.visual_channels;
    s.push("material.embed".into(), vec![cfg.materials, cfg.material_dim], Init::FanIn(1));
    s.conv("visual.in", v0, 1 + cfg.material_dim, [1, 3]);
    s.conv("visual.down1", v1, v0, [1, 4]);
    s.conv("visual.down2", v2, v1, [1, 4]);
    s.conv_t("visual.up1", v2, v1, [1, 4], [1, 2], false);
    s.conv_t("visual.up2", v1, v0, [1, 4], [1, 2], false);
    s.conv("visual.out", cfg.c_f, v0, [1, 1]);

    let mut widths = vec![cfg.c_f];
    widths.extend(&cfg.anticipation_channels);
    for i in 1..widths.len() {
        s.conv(&format!("anticipation.down{i}"), widths[i], widths[i - 1], [4, 4]);
    }
    for i in (1..widths.len()).rev() {
        s.conv_t(&format!("anticipation.up{i}"), widths[i], widths[i - 1], [4, 4], [2, 2], i == 1);
    }

    s.conv("patch", cfg.d_model, cfg.c_f, [cfg.patch, cfg.patch]);
    s.push("tokens.map".into(), vec![cfg.d_model], Init::FanIn(1));

    let mut c_prev = 2;
    for (i, &c) in cfg.audio_channels.iter().enumerate() {
        s.conv(&format!("audio.conv{}", i + 1), c, c_prev, [3, 3]);
        c_prev = c;
    }
    s.push("audio.modality".into(), vec![1, cfg.modality_dim], Init::FanIn(1));
    s.linear("audio.fuse", c_prev + cfg.modality_dim + cfg.pose_dim(), cfg.d_model);
    s.push("visual.modality".into(), vec![1, cfg.modality_dim], Init::FanIn(1));
    s.linear("visual.fuse", cfg.c_f + cfg.modality_dim + cfg.pose_dim(), cfg.d_model);

    for l in 0..cfg.encoder_layers {
        s.block(&format!("encoder.{l}"), cfg);
    }
    s.norm("encoder.norm", cfg.d_model);
    s.linear("query.lift", cfg.pose_dim(), cfg.d_model);
    for l in 0..cfg.decoder_layers {
        s.block(&format!("decoder.{l}"), cfg);
    }
    s.norm("decoder.norm", cfg.d_model);

    let [h, w] = cfg.head_seed();
    s.linear("head.seed", cfg.d_model, cfg.head_channels[0] * h * w);
    let mut widths = cfg.head_channels.clone();
    widths.push(2);
    for i in 1..widths.len() {
        s.conv_t(&format!("head.up{i}"), widths[i - 1], widths[i], [2, 2], [2, 2], false);
    }
    s.0
}

/// Seeded initialization of [`param_specs`].
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for spec in param_specs(cfg) {
        let n = spec.shape.iter().product();
        let data = match spec.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn(fan_in) => {
                let bound = (3.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        store.insert(spec.name, Tensor::new(spec.shape, data)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn names_are_unique_and_seeded() {
        let cfg = ModelConfig::desk();
        let specs = param_specs(&cfg);
        let names: HashSet<_> = specs.iter().map(|s| &s.name).collect();
        assert_eq!(names.len(), specs.len());
        let a = init_params(&cfg, 1).unwrap();
        assert_eq!(a, init_params(&cfg, 1).unwrap());
        assert_ne!(a, init_params(&cfg, 2).unwrap());
    }

    #[test]
    fn anticipation_output_starts_at_zero() {
        let p = init_params(&ModelConfig::desk(), 3).unwrap();
        assert!(p.get("anticipation.up1.weight").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("anticipation.up2.weight").unwrap().data().iter().any(|&v| v != 0.0));
    }
}
