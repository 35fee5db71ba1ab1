//! 16-bit stereo WAV export.

use std::path::Path;

use super::stft::Rir;
use crate::error::{Error, Result};

/// Export peak level.
pub const PEAK_DBFS: f64 = -1.0;

/// Writes `rir` peak-normalized to [`PEAK_DBFS`]; returns the applied gain.
/// Silent input is written unscaled with gain 1.
pub fn write_wav(path: &Path, rir: &Rir) -> Result<f64> {
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: rir.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let peak = rir.peak();
    let gain = if peak > 0.0 { 10f64.powf(PEAK_DBFS / 20.0) / peak } else { 1.0 };
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for i in 0..rir.len() {
        for ch in 0..2 {
            let v = (rir.channel(ch)[i] * gain * i16::MAX as f64).round();
            writer.write_sample(v as i16).map_err(wav_err)?;
        }
    }
    writer.finalize().map_err(wav_err)?;
    Ok(gain)
}

/// Reads a 16-bit stereo WAV back to full-scale-normalized samples.
pub fn read_wav(path: &Path) -> Result<Rir> {
    let wav_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 2 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!("{}: expected 16-bit stereo PCM", path.display())));
    }
    let samples: Vec<i16> = reader.samples::<i16>().collect::<Result<_, _>>().map_err(wav_err)?;
    let scale = i16::MAX as f64;
    let left = samples.iter().step_by(2).map(|&s| s as f64 / scale).collect();
    let right = samples.iter().skip(1).step_by(2).map(|&s| s as f64 / scale).collect();
    Rir::new(left, right, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_shape_and_peak() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let left: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin() * 0.2).collect();
        let right: Vec<f64> = left.iter().map(|v| -v * 0.5).collect();
        let rir = Rir::new(left, right, 8000).unwrap();
        let gain = write_wav(&path, &rir).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), 100);
        assert_eq!(back.sample_rate(), 8000);
        assert!((back.peak() - 10f64.powf(-0.05)).abs() < 1e-4);
        for i in 0..100 {
            assert!((back.channel(0)[i] / gain - rir.channel(0)[i]).abs() < 1e-4);
        }
    }
}
