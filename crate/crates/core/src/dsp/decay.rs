//! Schroeder energy decay, reverberation time and direct-to-reverberant ratio.

use crate::error::{Error, Result};

pub const EDC_FLOOR_DB: f64 = -100.0;
pub const DRR_CLAMP_DB: f64 = 80.0;

/// RT60 regression band, in dB below the start of the decay.
const FIT_START_DB: f64 = -5.0;
const FIT_END_DB: f64 = -25.0;

/// Normalized energy decay curve in dB.
#[derive(Clone, Debug, PartialEq)]
pub struct EdcCurve {
    pub db: Vec<f64>,
}

impl EdcCurve {
    pub fn floor_db(&self) -> f64 {
        EDC_FLOOR_DB
    }
}

/// Backward-integrated decay of a nonnegative energy sequence.
pub fn schroeder_edc(energy: &[f64]) -> Result<EdcCurve> {
    if energy.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidDomain {
            op: "schroeder_edc",
            detail: "energies must be finite and nonnegative".into(),
        });
    }
    let mut edc = vec![0.0; energy.len()];
    let mut acc = 0.0;
    for (slot, e) in edc.iter_mut().zip(energy).rev() {
        acc += e;
        *slot = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if total <= 0.0 {
        return Err(Error::Unmeasurable("energy sequence is all zero".into()));
    }
    let db = edc
        .iter()
        .map(|&v| {
            if v > 0.0 {
                (10.0 * (v / total).log10()).max(EDC_FLOOR_DB)
            } else {
                EDC_FLOOR_DB
            }
        })
        .collect();
    Ok(EdcCurve { db })
}

/// Reverberation time from a least-squares fit of the decay between its
/// first crossings of -5 dB and -25 dB.
///
/// When both crossings fall on the same entry the preceding entry is
/// included so the fit has two points.
pub fn rt60_estimate(edc: &EdcCurve, frame_rate: f64) -> Result<f64> {
    let first_below = |level: f64| edc.db.iter().position(|&d| d <= level);
    let (Some(start), Some(end)) = (first_below(FIT_START_DB), first_below(FIT_END_DB)) else {
        return Err(Error::Unmeasurable(format!("decay never reaches {FIT_END_DB} dB")));
    };
    let start = if start == end { start - 1 } else { start };
    let n = (end - start + 1) as f64;
    let mean_x = (start + end) as f64 / 2.0;
    let mean_y = edc.db[start..=end].iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in (start..=end).zip(&edc.db[start..=end]) {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx * frame_rate;
    if !(slope < 0.0) {
        return Err(Error::Unmeasurable("decay slope is not negative".into()));
    }
    Ok(-60.0 / slope)
}

/// Direct-to-reverberant ratio in dB with the direct window `direct_frame ± 1`.
pub fn drr(envelope: &[f64], direct_frame: usize) -> Result<f64> {
    if direct_frame >= envelope.len() {
        return Err(Error::InvalidArgument(format!(
            "direct frame {direct_frame} outside envelope of {} frames",
            envelope.len()
        )));
    }
    if envelope.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidDomain {
            op: "drr",
            detail: "envelope must be finite and nonnegative".into(),
        });
    }
    if envelope.iter().all(|&e| e == 0.0) {
        return Err(Error::Unmeasurable("envelope is all zero".into()));
    }
    let lo = direct_frame.saturating_sub(1);
    let hi = (direct_frame + 1).min(envelope.len() - 1);
    let direct: f64 = envelope[lo..=hi].iter().sum();
    let reverb: f64 = envelope[..lo].iter().chain(&envelope[hi + 1..]).sum();
    let ratio = if reverb == 0.0 {
        DRR_CLAMP_DB
    } else if direct == 0.0 {
        -DRR_CLAMP_DB
    } else {
        10.0 * (direct / reverb).log10()
    };
    Ok(ratio.clamp(-DRR_CLAMP_DB, DRR_CLAMP_DB))
}

/// [`drr`] with the direct frame at the first envelope maximum.
pub fn drr_at_peak(envelope: &[f64]) -> Result<f64> {
    let peak = envelope
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0;
    drr(envelope, peak)
}
