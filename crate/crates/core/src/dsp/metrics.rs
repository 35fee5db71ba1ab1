//! Spectrogram-domain evaluation metrics.

use super::decay::{drr_at_peak, rt60_estimate, schroeder_edc, DRR_CLAMP_DB};
use super::stft::Spectrogram;
use crate::error::{Error, Result};

/// Per-query evaluation result.
///
/// `rte_s` and `drre_db` are `None` when the target's decay cannot be
/// measured; such queries are counted and skipped by the reports.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub stft_error: f64,
    pub rte_s: Option<f64>,
    pub drre_db: Option<f64>,
}

/// Frame energies `Σ_ch Σ_f (exp(v) - 1)²`.
pub fn envelope(spec: &Spectrogram) -> Vec<f64> {
    let [c, f, t] = spec.config().shape();
    let mut env = vec![0.0; t];
    for ch in 0..c {
        for bin in 0..f {
            for (frame, e) in env.iter_mut().enumerate() {
                let m = spec.at(ch, bin, frame).exp_m1();
                *e += m * m;
            }
        }
    }
    env
}

/// RT60 and DRR of a prediction. A prediction whose decay cannot be
/// measured is assigned the longest representable reverberation (the
/// spectrogram duration) and, when silent, the lowest DRR.
fn predicted_acoustics(spec: &Spectrogram) -> (f64, f64) {
    let env = envelope(spec);
    let fallback_rt = spec.config().duration();
    let rt = schroeder_edc(&env)
        .and_then(|edc| rt60_estimate(&edc, spec.config().frame_rate()))
        .unwrap_or(fallback_rt);
    let drr = drr_at_peak(&env).unwrap_or(-DRR_CLAMP_DB);
    (rt, drr)
}

/// STFT L1 error, absolute RT60 error and absolute DRR error.
pub fn evaluate_metrics(pred: &Spectrogram, target: &Spectrogram) -> Result<Metrics> {
    if pred.config() != target.config() {
        return Err(Error::ShapeMismatch {
            op: "evaluate_metrics",
            lhs: pred.config().shape().to_vec(),
            rhs: target.config().shape().to_vec(),
        });
    }
    let n = pred.values().len() as f64;
    let stft_error = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    let env = envelope(target);
    let target_rt = schroeder_edc(&env).and_then(|edc| rt60_estimate(&edc, target.config().frame_rate()));
    let target_drr = drr_at_peak(&env);
    let (pred_rt, pred_drr) = predicted_acoustics(pred);
    Ok(Metrics {
        stft_error,
        rte_s: target_rt.ok().map(|rt| (pred_rt - rt).abs()),
        drre_db: target_drr.ok().map(|d| (pred_drr - d).abs()),
    })
}
