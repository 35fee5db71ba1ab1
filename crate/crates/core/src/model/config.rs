use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::POSE_SCALARS;

/// Widths and geometry of every network component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature channels per ray and per map cell.
    pub c_f: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_hidden: usize,
    pub patch: usize,
    /// Weight of the decay-curve loss.
    pub lambda: f64,
    pub freq_bins: usize,
    pub frames: usize,
    pub map_size: usize,
    pub rays: usize,
    /// Sinusoidal width per pose scalar.
    pub d_pe: usize,
    /// Palette entries in the material embedding table.
    pub materials: usize,
    pub material_dim: usize,
    /// Width of the audio and per-view visual modality tokens.
    pub modality_dim: usize,
    /// Ray U-Net widths at full, half and quarter resolution.
    pub visual_channels: [usize; 3],
    /// Anticipation U-Net widths below the input; the depth is the length.
    pub anticipation_channels: Vec<usize>,
    /// Output widths of the stride-2 echo convolutions.
    pub audio_channels: Vec<usize>,
    /// Input widths of the head's upsampling blocks; the first is the seed.
    pub head_channels: Vec<usize>,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            c_f: 16,
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_hidden: 128,
            patch: 4,
            lambda: 0.01,
            freq_bins: 64,
            frames: 128,
            map_size: 32,
            rays: 64,
            d_pe: 16,
            materials: 8,
            material_dim: 8,
            modality_dim: 16,
            visual_channels: [16, 32, 64],
            anticipation_channels: vec![32, 64, 64],
            audio_channels: vec![8, 16, 32, 64],
            head_channels: vec![64, 32, 16, 8],
        }
    }

    /// Full-size widths: 64 map channels, 512-wide tokens, depth-4 U-Net
    /// reaching 1024 channels, 64-cell maps.
    pub fn paper() -> Self {
        Self {
            c_f: 64,
            d_model: 512,
            heads: 8,
            ffn_hidden: 2048,
            map_size: 64,
            d_pe: 32,
            visual_channels: [64, 128, 256],
            anticipation_channels: vec![128, 256, 512, 1024],
            audio_channels: vec![32, 64, 128, 256],
            head_channels: vec![256, 128, 64, 32],
            ..Self::desk()
        }
    }

    /// Smallest sizes that still exercise every block.
    pub fn tiny() -> Self {
        Self {
            c_f: 4,
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_hidden: 8,
            patch: 4,
            freq_bins: 8,
            frames: 8,
            map_size: 8,
            rays: 8,
            d_pe: 4,
            material_dim: 3,
            modality_dim: 2,
            visual_channels: [4, 4, 4],
            anticipation_channels: vec![4, 4, 4],
            audio_channels: vec![3, 3, 3, 3],
            head_channels: vec![4, 3],
            ..Self::desk()
        }
    }

    pub fn pose_dim(&self) -> usize {
        POSE_SCALARS * self.d_pe
    }

    pub fn tokens_per_map(&self) -> usize {
        (self.map_size / self.patch).pow(2)
    }

    /// Spatial size of the head's seed.
    pub fn head_seed(&self) -> [usize; 2] {
        let k = 1 << self.head_channels.len();
        [self.freq_bins / k, self.frames / k]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("model config: {msg}")));
        let nonzero = [
            self.c_f,
            self.d_model,
            self.heads,
            self.ffn_hidden,
            self.patch,
            self.freq_bins,
            self.frames,
            self.map_size,
            self.rays,
            self.materials,
            self.material_dim,
            self.modality_dim,
        ];
        if nonzero.contains(&0) || self.visual_channels.contains(&0) {
            return bad("zero width".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if self.d_model % 4 != 0 {
            return bad(format!("d_model {} must be a multiple of 4 for 2-D position features", self.d_model));
        }
        if self.map_size % self.patch != 0 {
            return bad(format!("map size {} not divisible by patch {}", self.map_size, self.patch));
        }
        let depth = self.anticipation_channels.len();
        if self.map_size % (1 << depth) != 0 {
            return bad(format!("map size {} not divisible by 2^{depth}", self.map_size));
        }
        if self.rays % 4 != 0 {
            return bad(format!("{} rays not divisible by 4", self.rays));
        }
        if self.d_pe == 0 || self.d_pe % 2 != 0 {
            return bad(format!("pose embedding width {} must be even", self.d_pe));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if self.audio_channels.is_empty() || self.audio_channels.contains(&0) {
            return bad("audio encoder needs at least one block".into());
        }
        if self.head_channels.is_empty() || self.head_channels.contains(&0) || self.anticipation_channels.contains(&0) {
            return bad("empty or zero-width head / anticipation stage".into());
        }
        let [h, w] = self.head_seed();
        if h == 0 || w == 0 || h << self.head_channels.len() != self.freq_bins || w << self.head_channels.len() != self.frames
        {
            return bad(format!(
                "{}x{} spectrogram not reachable by {} doubling blocks",
                self.freq_bins,
                self.frames,
                self.head_channels.len()
            ));
        }
        Ok(())
    }
}

/// Components removed for the ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Visual evidence enters as one pooled token per view instead of a map.
    pub no_mapper: bool,
    /// The map skips the anticipation U-Net.
    pub no_anticipation: bool,
    /// The anticipation U-Net output replaces the map instead of adding to it.
    pub no_skip: bool,
}

impl Ablation {
    /// `full`, or the removed components joined by `+`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.no_mapper, "no_mapper"),
            (self.no_anticipation, "no_anticipation"),
            (self.no_skip, "no_skip"),
        ]
        .iter()
        .filter_map(|&(on, name)| on.then_some(name))
        .collect();
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}
