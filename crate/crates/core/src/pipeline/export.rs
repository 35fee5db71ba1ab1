//! Prediction for a single query pose with CSV, SVG and WAV artifacts.
//!
//! Files written into the output directory:
//!
//! | file | content |
//! |---|---|
//! | `pred_spectrogram.csv`, `target_spectrogram.csv` | header `t0..t{T-1}`, then `2F` rows (channel-major) |
//! | `pred_spectrogram.svg`, `target_spectrogram.svg` | one `F × T` panel per channel |
//! | `map.svg` | per-cell feature norm of M_OSM and M_SSM, `m × m` each (skipped without a mapper) |
//! | `pred.wav`, `target.wav` | Griffin-Lim reconstructions, 16-bit stereo |
//! | `export.toml` | pose, scene seed, WAV gains and Griffin-Lim iterations |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{episode_inputs, Dataset};
use super::report::{heatmap_svg, Panel};
use super::train::Checkpoint;
use crate::autodiff::Tensor;
use crate::dsp::{griffin_lim, read_wav, stft_log_mag, write_wav, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::scene::{render_rir, Pose};

pub const GRIFFIN_LIM_ITERATIONS: usize = 256;
pub const SIDECAR: &str = "export.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportInfo {
    pub scene_seed: u64,
    pub pose: Pose,
    pub griffin_lim_iterations: usize,
    /// Gains applied when peak-normalizing each WAV; divide to undo.
    pub pred_gain: f64,
    pub target_gain: f64,
    pub freq_bins: usize,
    pub frames: usize,
    pub map_size: Option<usize>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn spectrogram_csv(spec: &Spectrogram) -> String {
    let [c, f, t] = spec.config().shape();
    let mut s = (0..t).map(|k| format!("t{k}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for row in spec.values().chunks(t).take(c * f) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Reads a spectrogram CSV back as `(rows, cols, values)`.
pub fn parse_grid_csv(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = text.lines();
    let cols = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?.split(',').count();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let before = values.len();
        for v in line.split(',') {
            values.push(v.parse::<f64>().map_err(|_| Error::Format(format!("CSV row {}", i + 2)))?);
        }
        if values.len() - before != cols {
            return Err(Error::Format(format!("CSV row {} has {} fields", i + 2, values.len() - before)));
        }
        rows += 1;
    }
    Ok((rows, cols, values))
}

fn spectrogram_svg(spec: &Spectrogram, label: &str) -> Result<String> {
    let [_, f, t] = spec.config().shape();
    let v = spec.values();
    heatmap_svg(
        &[
            Panel {
                title: format!("{label} left"),
                rows: f,
                cols: t,
                values: &v[..f * t],
                flip: true,
            },
            Panel {
                title: format!("{label} right"),
                rows: f,
                cols: t,
                values: &v[f * t..],
                flip: true,
            },
        ],
        3.0,
    )
}

/// L2 norm over the feature axis of an `[m, m, c]` map.
pub fn feature_norms(map: &Tensor) -> Vec<f64> {
    let c = *map.shape().last().unwrap_or(&1);
    map.data().chunks(c).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
}

/// Relative L1 distance between a WAV's re-analysed spectrogram (after
/// undoing `gain`) and `reference`.
pub fn wav_round_trip_error(wav: &Path, gain: f64, reference: &Spectrogram) -> Result<f64> {
    let mut rir = read_wav(wav)?;
    for ch in 0..2 {
        for v in rir.channel_mut(ch) {
            *v /= gain;
        }
    }
    let back = stft_log_mag(&rir, reference.config())?;
    let num: f64 = back.values().iter().zip(reference.values()).map(|(a, b)| (a - b).abs()).sum();
    let den: f64 = reference.values().iter().map(|v| v.abs()).sum();
    Ok(num / den.max(f64::MIN_POSITIVE))
}

pub struct Exported {
    pub dir: PathBuf,
    pub info: ExportInfo,
    pub prediction: Spectrogram,
    pub target: Spectrogram,
}

/// Predicts the response at `pose` in the stored room with `scene_seed`,
/// using that room's context observations, and writes the artifacts.
pub fn predict_and_export(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    scene_seed: u64,
    pose: Pose,
    out_dir: &Path,
) -> Result<Exported> {
    let cfg = &ckpt.config;
    let record = dataset
        .scene_by_seed(scene_seed)
        .ok_or_else(|| Error::InvalidArgument(format!("no stored scene with seed {scene_seed}")))?;
    record.scene.check_pose(&pose)?;
    let inputs = episode_inputs(record, cfg)?;
    let pred = ckpt.model.predict(&inputs, &[pose], cfg.ablation)?;
    let stft: StftConfig = cfg.stft;
    let prediction = Spectrogram::from_tensor(stft, &pred.spectrograms.reshaped(&stft.shape())?)?;
    let target = stft_log_mag(&render_rir(&record.scene, &pose, &cfg.data.episode.render)?, &stft)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let len = cfg.data.episode.render.length;
    let mut gains = [0.0; 2];
    for (k, (label, spec)) in [("pred", &prediction), ("target", &target)].into_iter().enumerate() {
        write(&out_dir.join(format!("{label}_spectrogram.csv")), &spectrogram_csv(spec))?;
        write(&out_dir.join(format!("{label}_spectrogram.svg")), &spectrogram_svg(spec, label)?)?;
        let rir = griffin_lim(spec, GRIFFIN_LIM_ITERATIONS, len)?;
        gains[k] = write_wav(&out_dir.join(format!("{label}.wav")), &rir)?;
    }
    let map_size = match (&pred.m_osm, &pred.m_ssm) {
        (Some(osm), Some(ssm)) => {
            let m = osm.shape()[0];
            let (a, b) = (feature_norms(osm), feature_norms(ssm));
            let svg = heatmap_svg(
                &[
                    Panel {
                        title: "M_OSM".into(),
                        rows: m,
                        cols: m,
                        values: &a,
                        flip: true,
                    },
                    Panel {
                        title: "M_SSM".into(),
                        rows: m,
                        cols: m,
                        values: &b,
                        flip: true,
                    },
                ],
                6.0,
            )?;
            write(&out_dir.join("map.svg"), &svg)?;
            Some(m)
        }
        _ => None,
    };
    let info = ExportInfo {
        scene_seed,
        pose,
        griffin_lim_iterations: GRIFFIN_LIM_ITERATIONS,
        pred_gain: gains[0],
        target_gain: gains[1],
        freq_bins: stft.bins(),
        frames: stft.frames,
        map_size,
    };
    let mut text = toml::to_string(&info).map_err(|e| Error::Format(format!("export sidecar: {e}")))?;
    writeln!(text).expect("string write");
    write(&out_dir.join(SIDECAR), &text)?;
    Ok(Exported {
        dir: out_dir.to_path_buf(),
        info,
        prediction,
        target,
    })
}
