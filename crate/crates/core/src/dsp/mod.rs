//! Acoustic signal processing outside the autodiff graph.
//!
//! Spectrogram analysis and synthesis, Schroeder decay curves, RT60 and DRR
//! estimators, the three evaluation metrics, and WAV export.

mod decay;
mod metrics;
mod stft;
mod wav;

pub use decay::{drr, drr_at_peak, rt60_estimate, schroeder_edc, EdcCurve, DRR_CLAMP_DB, EDC_FLOOR_DB};
pub use metrics::{envelope, evaluate_metrics, Metrics};
pub use stft::{griffin_lim, griffin_lim_trace, hann_periodic, istft, stft_log_mag, Rir, Spectrogram, StftConfig};
pub use wav::{read_wav, write_wav, PEAK_DBFS};
