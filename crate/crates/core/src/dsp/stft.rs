//! Binaural RIRs, log-magnitude spectrograms and Griffin-Lim resynthesis.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const INIT_PHASE_SEED: u64 = 0x6c69_6d5f;

/// Two-channel impulse response.
#[derive(Clone, Debug, PartialEq)]
pub struct Rir {
    channels: [Vec<f64>; 2],
    sample_rate: u32,
}

impl Rir {
    pub fn new(left: Vec<f64>, right: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if left.is_empty() || left.len() != right.len() {
            return Err(Error::InvalidArgument(format!(
                "rir channels must be non-empty and equal length, got {} and {}",
                left.len(),
                right.len()
            )));
        }
        if left.iter().chain(&right).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "rir" });
        }
        Ok(Self {
            channels: [left, right],
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            channels: [vec![0.0; len], vec![0.0; len]],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.channels[ch]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        &mut self.channels[ch]
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|v| v * v).sum()
    }

    pub fn peak(&self) -> f64 {
        self.channels.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Analysis parameters shared by every spectrogram in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    /// Power-of-two frame length.
    pub window_len: usize,
    pub hop: usize,
    /// Number of frames kept; frame `t` is centered on sample `t * hop`.
    pub frames: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            window_len: 128,
            hop: 32,
            frames: 128,
        }
    }
}

impl StftConfig {
    /// Frequency bins kept after dropping Nyquist.
    pub fn bins(&self) -> usize {
        self.window_len / 2
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Seconds spanned by the kept frames.
    pub fn duration(&self) -> f64 {
        (self.frames * self.hop) as f64 / self.sample_rate as f64
    }

    pub fn shape(&self) -> [usize; 3] {
        [2, self.bins(), self.frames]
    }

    pub fn validate(&self) -> Result<()> {
        if !self.window_len.is_power_of_two() || self.window_len < 2 {
            return Err(Error::InvalidArgument(format!(
                "window length {} is not a power of two",
                self.window_len
            )));
        }
        if self.hop == 0 || self.frames == 0 || self.sample_rate == 0 {
            return Err(Error::InvalidArgument("hop, frames and sample rate must be positive".into()));
        }
        Ok(())
    }
}

/// Log-compressed magnitudes laid out as `[channel][bin][frame]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    config: StftConfig,
    values: Vec<f64>,
}

impl Spectrogram {
    pub fn new(config: StftConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let [c, f, t] = config.shape();
        if values.len() != c * f * t {
            return Err(Error::ShapeMismatch {
                op: "spectrogram",
                lhs: vec![c, f, t],
                rhs: vec![values.len()],
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDomain {
                op: "spectrogram",
                detail: "values must be finite and nonnegative".into(),
            });
        }
        Ok(Self { config, values })
    }

    pub fn zeros(config: StftConfig) -> Self {
        let [c, f, t] = config.shape();
        Self {
            config,
            values: vec![0.0; c * f * t],
        }
    }

    pub fn from_tensor(config: StftConfig, tensor: &Tensor) -> Result<Self> {
        if tensor.shape() != config.shape() {
            return Err(Error::ShapeMismatch {
                op: "spectrogram",
                lhs: config.shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        Self::new(config, tensor.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.config.shape().to_vec(), self.values.clone()).expect("validated shape")
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, ch: usize, bin: usize, frame: usize) -> f64 {
        let [_, f, t] = self.config.shape();
        self.values[(ch * f + bin) * t + frame]
    }

    /// Linear magnitude `exp(v) - 1` of every cell.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.exp_m1()).collect()
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Plans {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            window: hann_periodic(n),
        }
    }
}

/// Complex spectra `[frame][bin]` for bins `0..=N/2` of one channel.
fn analyze(signal: &[f64], cfg: &StftConfig, plans: &Plans) -> Vec<Vec<Complex<f64>>> {
    let n = cfg.window_len;
    let half = (n / 2) as isize;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    (0..cfg.frames)
        .map(|t| {
            let start = (t * cfg.hop) as isize - half;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = start + i as isize;
                let x = if s >= 0 && (s as usize) < signal.len() { signal[s as usize] } else { 0.0 };
                *b = Complex::new(x * plans.window[i], 0.0);
            }
            plans.forward.process(&mut buf);
            buf[..=n / 2].to_vec()
        })
        .collect()
}

/// Least-squares overlap-add inverse of [`analyze`], truncated to `len` samples.
fn synthesize(spectra: &[Vec<Complex<f64>>], cfg: &StftConfig, plans: &Plans, len: usize) -> Vec<f64> {
    let n = cfg.window_len;
    let half = (n / 2) as isize;
    let mut num = vec![0.0; len];
    let mut den = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (t, spec) in spectra.iter().enumerate() {
        buf[..=n / 2].copy_from_slice(spec);
        // Hermitian completion; DC and Nyquist must be real for a real frame.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for k in 1..n / 2 {
            buf[n - k] = spec[k].conj();
        }
        plans.inverse.process(&mut buf);
        let start = (t * cfg.hop) as isize - half;
        for i in 0..n {
            let s = start + i as isize;
            if s >= 0 && (s as usize) < len {
                let w = plans.window[i];
                num[s as usize] += w * buf[i].re / n as f64;
                den[s as usize] += w * w;
            }
        }
    }
    num.iter()
        .zip(&den)
        .map(|(a, d)| if *d > 1e-12 { a / d } else { 0.0 })
        .collect()
}

/// Periodic-Hann STFT magnitudes compressed as `log(1 + |X|)`, Nyquist dropped.
pub fn stft_log_mag(rir: &Rir, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if rir.len() < cfg.window_len {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples is shorter than the {}-sample window",
            rir.len(),
            cfg.window_len
        )));
    }
    let plans = Plans::new(cfg.window_len);
    let (f, t) = (cfg.bins(), cfg.frames);
    let mut values = vec![0.0; 2 * f * t];
    for ch in 0..2 {
        for (ti, frame) in analyze(rir.channel(ch), cfg, &plans).iter().enumerate() {
            for (bin, x) in frame[..f].iter().enumerate() {
                values[(ch * f + bin) * t + ti] = x.norm().ln_1p();
            }
        }
    }
    Spectrogram::new(*cfg, values)
}

/// Inverse STFT of complex spectra shaped like [`stft_log_mag`]'s frames.
pub fn istft(spectra: &[Vec<Complex<f64>>], cfg: &StftConfig, len: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if spectra.len() != cfg.frames || spectra.iter().any(|s| s.len() != cfg.window_len / 2 + 1) {
        return Err(Error::InvalidArgument("spectra do not match the stft configuration".into()));
    }
    Ok(synthesize(spectra, cfg, &Plans::new(cfg.window_len), len))
}

/// Griffin-Lim phase retrieval from a fixed pseudo-random initial phase.
pub fn griffin_lim(spec: &Spectrogram, iterations: usize, len: usize) -> Result<Rir> {
    Ok(run_griffin_lim(spec, iterations, len, false)?.0)
}

/// Like [`griffin_lim`], also returning after each iteration the relative
/// magnitude error `Σ||X|−M| / ΣM` of the re-analyzed signal.
pub fn griffin_lim_trace(spec: &Spectrogram, iterations: usize, len: usize) -> Result<(Rir, Vec<f64>)> {
    run_griffin_lim(spec, iterations, len, true)
}

fn run_griffin_lim(spec: &Spectrogram, iterations: usize, len: usize, trace: bool) -> Result<(Rir, Vec<f64>)> {
    let cfg = *spec.config();
    if len < cfg.window_len {
        return Err(Error::InvalidArgument(format!("output length {len} shorter than the window")));
    }
    let plans = Plans::new(cfg.window_len);
    let (f, t) = (cfg.bins(), cfg.frames);
    let mags = spec.magnitudes();
    let total: f64 = mags.iter().sum();
    let mut errors = vec![0.0; if trace { iterations } else { 0 }];
    let mut out: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (ch, slot) in out.iter_mut().enumerate() {
        let target = &mags[ch * f * t..(ch + 1) * f * t];
        // Seeded random initial phase; the Nyquist bin is left unconstrained.
        let mut rng = ChaCha8Rng::seed_from_u64(INIT_PHASE_SEED + ch as u64);
        let mut spectra: Vec<Vec<Complex<f64>>> = (0..t)
            .map(|ti| {
                let mut s: Vec<Complex<f64>> = (0..f)
                    .map(|b| Complex::from_polar(target[b * t + ti], rng.gen_range(0.0..2.0 * PI)))
                    .collect();
                s.push(Complex::new(0.0, 0.0));
                s
            })
            .collect();
        let mut signal = synthesize(&spectra, &cfg, &plans, len);
        for it in 0..iterations {
            spectra = analyze(&signal, &cfg, &plans);
            for (ti, frame) in spectra.iter_mut().enumerate() {
                for (bin, x) in frame[..f].iter_mut().enumerate() {
                    let m = target[bin * t + ti];
                    let r = x.norm();
                    *x = if r > 0.0 { *x * (m / r) } else { Complex::new(m, 0.0) };
                }
            }
            signal = synthesize(&spectra, &cfg, &plans, len);
            if trace {
                errors[it] += magnitude_error(&analyze(&signal, &cfg, &plans), target, f, t);
            }
        }
        *slot = signal;
    }
    let scale = if total > 0.0 { total } else { 1.0 };
    errors.iter_mut().for_each(|e| *e /= scale);
    let [l, r] = out;
    Ok((Rir::new(l, r, cfg.sample_rate)?, errors))
}

fn magnitude_error(spectra: &[Vec<Complex<f64>>], target: &[f64], f: usize, t: usize) -> f64 {
    let mut err = 0.0;
    for (ti, frame) in spectra.iter().enumerate() {
        for (bin, x) in frame[..f].iter().enumerate() {
            err += (x.norm() - target[bin * t + ti]).abs();
        }
    }
    err
}
