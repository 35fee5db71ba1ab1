//! Per-query metrics for the network and the two echo-copying baselines.
//!
//! Every predictor receives the same [`EpisodeInputs`] and query poses;
//! targets are rendered into spectrograms only after prediction, when the
//! metrics are computed.

use std::fmt::Write as _;

use super::config::RunConfig;
use super::dataset::{episode_inputs, Dataset, Split};
use crate::dsp::{evaluate_metrics, stft_log_mag, Metrics, Spectrogram};
use crate::error::{Error, Result};
use crate::model::{Ablation, EpisodeInputs, Model};
use crate::scene::Pose;

/// Distance floor for inverse-distance weights.
pub const MIN_DISTANCE: f64 = 1e-6;
/// Neighbours averaged by the interpolation baseline.
pub const INTERP_NEIGHBOURS: usize = 4;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_context(inputs: &EpisodeInputs) -> Result<()> {
    if inputs.context.is_empty() {
        return Err(Error::InvalidArgument("baseline needs at least one context observation".into()));
    }
    Ok(())
}

/// Index of the context echo nearest the query listener; ties go to the
/// lowest index.
pub fn nearest_context(inputs: &EpisodeInputs, query: &Pose) -> Result<usize> {
    check_context(inputs)?;
    let mut best = (0, f64::INFINITY);
    for (i, c) in inputs.context.iter().enumerate() {
        let d = dist(c.pose.listener, query.listener);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

pub fn baseline_nearest(inputs: &EpisodeInputs, queries: &[Pose]) -> Result<Vec<Spectrogram>> {
    queries
        .iter()
        .map(|q| Ok(inputs.context[nearest_context(inputs, q)?].echo.clone()))
        .collect()
}

/// Normalized inverse-distance weights over the nearest four context
/// listeners (all of them when fewer), as `(index, weight)` pairs.
pub fn interp_weights(inputs: &EpisodeInputs, query: &Pose) -> Result<Vec<(usize, f64)>> {
    check_context(inputs)?;
    let mut by_dist: Vec<(usize, f64)> = inputs
        .context
        .iter()
        .enumerate()
        .map(|(i, c)| (i, dist(c.pose.listener, query.listener)))
        .collect();
    // Stable sort keeps lower indices first among equal distances.
    by_dist.sort_by(|a, b| a.1.total_cmp(&b.1));
    by_dist.truncate(INTERP_NEIGHBOURS);
    let raw: Vec<f64> = by_dist.iter().map(|&(_, d)| 1.0 / d.max(MIN_DISTANCE)).collect();
    let total: f64 = raw.iter().sum();
    Ok(by_dist.iter().zip(raw).map(|(&(i, _), w)| (i, w / total)).collect())
}

pub fn baseline_interp(inputs: &EpisodeInputs, queries: &[Pose]) -> Result<Vec<Spectrogram>> {
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let weights = interp_weights(inputs, q)?;
        let cfg = *inputs.context[weights[0].0].echo.config();
        let mut values = vec![0.0; inputs.context[0].echo.values().len()];
        for (i, w) in weights {
            for (acc, &v) in values.iter_mut().zip(inputs.context[i].echo.values()) {
                *acc += w * v;
            }
        }
        out.push(Spectrogram::new(cfg, values)?);
    }
    Ok(out)
}

/// Anything that maps an episode's inputs and query poses to spectrograms.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'m> {
    Model(&'m Model, Ablation),
    Nearest,
    Interp,
}

impl Predictor<'_> {
    pub fn name(&self) -> String {
        match self {
            Predictor::Model(_, a) => format!("model-{}", a.label()),
            Predictor::Nearest => "nearest".into(),
            Predictor::Interp => "interp".into(),
        }
    }

    pub fn predict(&self, inputs: &EpisodeInputs, queries: &[Pose]) -> Result<Vec<Spectrogram>> {
        match self {
            Predictor::Model(model, ablation) => {
                let cfg = *inputs.context[0].echo.config();
                let pred = model.predict(inputs, queries, *ablation)?;
                pred.spectrograms
                    .data()
                    .chunks(pred.spectrograms.numel() / queries.len())
                    .map(|c| Spectrogram::new(cfg, c.to_vec()))
                    .collect()
            }
            Predictor::Nearest => baseline_nearest(inputs, queries),
            Predictor::Interp => baseline_interp(inputs, queries),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub split: Split,
    pub episode: usize,
    pub query: usize,
    pub metrics: Metrics,
}

/// Means over the queries of one split; RTE and DRRE skip unmeasurable
/// queries, which are counted separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub split: Split,
    pub queries: usize,
    pub stft_error: f64,
    pub rte_s: Option<f64>,
    pub drre_db: Option<f64>,
    pub unmeasured: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricTable {
    pub method: String,
    pub rows: Vec<MetricRow>,
}

fn mean_some(v: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
    for x in v {
        match x {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => missing += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), missing)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl MetricTable {
    pub fn summary(&self, split: Split) -> Option<Summary> {
        let rows: Vec<&MetricRow> = self.rows.iter().filter(|r| r.split == split).collect();
        if rows.is_empty() {
            return None;
        }
        let stft = rows.iter().map(|r| r.metrics.stft_error).sum::<f64>() / rows.len() as f64;
        let (rte, missing_rte) = mean_some(rows.iter().map(|r| r.metrics.rte_s));
        let (drre, missing_drre) = mean_some(rows.iter().map(|r| r.metrics.drre_db));
        Some(Summary {
            split,
            queries: rows.len(),
            stft_error: stft,
            rte_s: rte,
            drre_db: drre,
            unmeasured: missing_rte.max(missing_drre),
        })
    }

    pub fn splits(&self) -> Vec<Split> {
        let mut s: Vec<Split> = self.rows.iter().map(|r| r.split).collect();
        s.dedup();
        s
    }

    /// One row per query followed by one `mean` row per split. Values are
    /// stored unscaled.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("split,episode,query,stft_error,rte_s,drre_db\n");
        for r in &self.rows {
            let m = &r.metrics;
            writeln!(
                s,
                "{},{},{},{:e},{},{}",
                r.split.name(),
                r.episode,
                r.query,
                m.stft_error,
                opt(m.rte_s),
                opt(m.drre_db)
            )
            .expect("string write");
        }
        for split in self.splits() {
            let sm = self.summary(split).expect("split has rows");
            writeln!(
                s,
                "{},mean,,{:e},{},{}",
                split.name(),
                sm.stft_error,
                opt(sm.rte_s),
                opt(sm.drre_db)
            )
            .expect("string write");
        }
        s
    }

    /// Inverse of [`to_csv`](Self::to_csv); summary rows are recomputed,
    /// not read.
    pub fn from_csv(method: &str, text: &str) -> Result<Self> {
        let bad = |i: usize| Error::Format(format!("metrics line {}", i + 1));
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i));
            }
            if f[1] == "mean" {
                continue;
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            rows.push(MetricRow {
                split: Split::parse(f[0])?,
                episode: f[1].parse().map_err(|_| bad(i))?,
                query: f[2].parse().map_err(|_| bad(i))?,
                metrics: Metrics {
                    stft_error: num(f[3])?,
                    rte_s: opt(f[4])?,
                    drre_db: opt(f[5])?,
                },
            });
        }
        Ok(Self {
            method: method.to_string(),
            rows,
        })
    }
}

/// Metrics of `predictor` on every episode of `split`.
pub fn evaluate(predictor: Predictor, dataset: &Dataset, cfg: &RunConfig, split: Split) -> Result<MetricTable> {
    let mut rows = Vec::new();
    for (e, ep) in dataset.episodes(split).iter().enumerate() {
        let inputs = episode_inputs(dataset.scene(ep), cfg)?;
        let poses: Vec<Pose> = ep.queries.iter().map(|q| q.pose).collect();
        let preds = predictor.predict(&inputs, &poses)?;
        // Targets are touched only from here on.
        for (q, (pred, query)) in preds.iter().zip(&ep.queries).enumerate() {
            let target = stft_log_mag(&query.target, &cfg.stft)?;
            rows.push(MetricRow {
                split,
                episode: e,
                query: q,
                metrics: evaluate_metrics(pred, &target)?,
            });
        }
    }
    Ok(MetricTable {
        method: predictor.name(),
        rows,
    })
}

/// Both splits, seen first.
pub fn evaluate_all(predictor: Predictor, dataset: &Dataset, cfg: &RunConfig) -> Result<MetricTable> {
    let mut t = evaluate(predictor, dataset, cfg, Split::Seen)?;
    t.rows.extend(evaluate(predictor, dataset, cfg, Split::Unseen)?.rows);
    Ok(t)
}
