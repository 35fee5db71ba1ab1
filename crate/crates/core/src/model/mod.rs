//! The few-shot RIR network: ray and map encoders, echo encoder, an
//! encoder-decoder transformer over map and echo tokens, and a transposed-conv
//! spectrogram head, together with its training losses.

mod config;
mod loss;
mod network;
mod params;

pub use config::{Ablation, ModelConfig};
pub use loss::{decay_db, decay_target, loss_edm, loss_stft, loss_total, DECAY_FLOOR};
pub use network::{pose_matrix, position_features, ContextInput, EpisodeInputs, Forward, Outputs};
pub use params::{init_params, param_specs, Init, ParamSpec};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::Result;
use crate::scene::Pose;

/// Configuration plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// Inference result with the intermediate maps kept for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub spectrograms: Tensor,
    pub m_osm: Option<Tensor>,
    pub m_ssm: Option<Tensor>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, trainable: bool) -> Forward<'_> {
        Forward::new(&self.config, &self.params, trainable)
    }

    /// Gradient-free prediction of `[N', 2, F, T]` spectrograms.
    pub fn predict(&self, inputs: &EpisodeInputs, queries: &[Pose], ablation: Ablation) -> Result<Prediction> {
        let mut f = self.forward(false);
        let out = f.predict_rir(inputs, queries, ablation)?;
        let take = |v: Option<_>| v.map(|v| f.graph.value(v).clone());
        Ok(Prediction {
            spectrograms: f.graph.value(out.spectrograms).clone(),
            m_osm: take(out.m_osm),
            m_ssm: take(out.m_ssm),
        })
    }
}
