//! Episodic training loop and checkpoint persistence.
//!
//! Each step draws a batch of training rooms, pairs each room's stored
//! context with freshly sampled query poses, renders their targets and
//! takes one Adam step on the batch-mean loss. Everything random flows
//! from one ChaCha stream that is saved with the checkpoint.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{decode_array, decode_shaped, encode_array, manifest_of, Archive, Dtype};
use super::config::RunConfig;
use super::dataset::{derive_seed, episode_inputs, sample_train_queries, target_spectrograms, Dataset};
use crate::autodiff::{AdamState, Moments, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{loss_total, EpisodeInputs, Model};
use crate::scene::render_queries;

pub const ARCHIVE_KIND: &str = "checkpoint";

/// Parameters, optimizer and sampler state after `step` updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub fingerprint: String,
    pub step: usize,
    pub model: Model,
    pub adam: AdamState,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    fingerprint: String,
    step: usize,
    adam_step: u64,
    rng_seed: String,
    rng_stream: String,
    rng_word_pos: String,
    params: Vec<String>,
    moments: Vec<String>,
    config: RunConfig,
}

impl Checkpoint {
    /// Untrained state for `cfg`.
    pub fn initial(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config: cfg.clone(),
            fingerprint: cfg.fingerprint()?,
            step: 0,
            model: Model::new(cfg.model.clone(), derive_seed(cfg.seed, "init", 0, 0))?,
            adam: AdamState::new(cfg.train.adam),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train", 0, 0)),
        })
    }

    pub fn to_archive(&self) -> Result<Archive> {
        let manifest = CheckpointManifest {
            fingerprint: self.fingerprint.clone(),
            step: self.step,
            adam_step: self.adam.step,
            rng_seed: hex::encode(self.rng.get_seed()),
            rng_stream: self.rng.get_stream().to_string(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            params: self.model.params.names().cloned().collect(),
            moments: self.adam.moments.keys().cloned().collect(),
            config: self.config.clone(),
        };
        let mut a = Archive::new(ARCHIVE_KIND, manifest_of(&manifest)?);
        for (name, t) in self.model.params.iter() {
            a.push(format!("param/{name}"), encode_array(Dtype::F64, t.shape(), t.data())?);
        }
        for (name, m) in &self.adam.moments {
            a.push(format!("adam.m/{name}"), encode_array(Dtype::F64, &[m.m.len()], &m.m)?);
            a.push(format!("adam.v/{name}"), encode_array(Dtype::F64, &[m.v.len()], &m.v)?);
        }
        Ok(a)
    }

    /// Decodes a checkpoint, checking its internal consistency only.
    pub fn from_archive(a: &Archive) -> Result<Self> {
        let m: CheckpointManifest = a.manifest_as()?;
        m.config.validate()?;
        let own = m.config.fingerprint()?;
        if own != m.fingerprint {
            return Err(Error::ConfigMismatch {
                expected: own,
                found: m.fingerprint,
            });
        }
        let mut params = ParamStore::new();
        for name in &m.params {
            let (shape, data) = decode_array(a.blob(&format!("param/{name}"))?)?;
            params.insert(name.clone(), Tensor::new(shape, data)?)?;
        }
        let model = Model {
            config: m.config.model.clone(),
            params,
        };
        let mut moments = BTreeMap::new();
        for name in &m.moments {
            let n = model
                .params
                .get(name)
                .ok_or_else(|| Error::Format(format!("moments for unknown parameter {name}")))?
                .numel();
            moments.insert(
                name.clone(),
                Moments {
                    m: decode_shaped(a.blob(&format!("adam.m/{name}"))?, &[n])?,
                    v: decode_shaped(a.blob(&format!("adam.v/{name}"))?, &[n])?,
                },
            );
        }
        let bad = |what: &str| Error::Format(format!("checkpoint rng {what}"));
        let seed: [u8; 32] = hex::decode(&m.rng_seed)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| bad("seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(m.rng_stream.parse().map_err(|_| bad("stream"))?);
        rng.set_word_pos(m.rng_word_pos.parse().map_err(|_| bad("position"))?);
        Ok(Self {
            adam: AdamState {
                config: m.config.train.adam,
                step: m.adam_step,
                moments,
            },
            config: m.config,
            fingerprint: m.fingerprint,
            step: m.step,
            model,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.write(path)
    }

    /// Reads a checkpoint without checking it against a configuration.
    pub fn read(path: &Path) -> Result<Self> {
        Self::from_archive(&Archive::read(path, ARCHIVE_KIND)?)
    }

    /// Reads a checkpoint and rejects it unless it was produced under `cfg`.
    pub fn load(path: &Path, cfg: &RunConfig) -> Result<Self> {
        let ckpt = Self::read(path)?;
        let expected = cfg.fingerprint()?;
        if ckpt.fingerprint != expected {
            return Err(Error::ConfigMismatch {
                expected,
                found: ckpt.fingerprint,
            });
        }
        Ok(ckpt)
    }
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

pub fn loss_csv(trace: &[StepRecord]) -> String {
    let mut s = String::from("step,loss,lr\n");
    for r in trace {
        writeln!(s, "{},{:e},{:e}", r.step, r.loss, r.lr).expect("string write");
    }
    s
}

pub fn parse_loss_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("loss trace line {}", i + 1)));
        if f.len() != 3 {
            return Err(Error::Format(format!("loss trace line {} has {} fields", i + 1, f.len())));
        }
        out.push(StepRecord {
            step: f[0].parse().map_err(|_| Error::Format(format!("loss trace line {}", i + 1)))?,
            loss: parse(f[1])?,
            lr: parse(f[2])?,
        });
    }
    Ok(out)
}

/// Mean of the first ten losses and mean of the last twentieth.
pub fn smoothed_endpoints(losses: &[f64]) -> Option<(f64, f64)> {
    if losses.is_empty() {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let head = losses.len().min(10);
    let tail = (losses.len() / 20).max(1);
    Some((mean(&losses[..head]), mean(&losses[losses.len() - tail..])))
}

/// Training state bound to a dataset.
pub struct Trainer<'d> {
    pub state: Checkpoint,
    dataset: &'d Dataset,
    inputs: Vec<EpisodeInputs>,
    held_out: Vec<Vec<([f64; 2], [f64; 2])>>,
}

/// One sampled training episode, kept so a step can be replayed.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub scene: usize,
    pub queries: Vec<crate::scene::Pose>,
    pub target: Tensor,
}

impl<'d> Trainer<'d> {
    pub fn new(state: Checkpoint, dataset: &'d Dataset) -> Result<Self> {
        let cfg = &state.config;
        let expected = cfg.data_fingerprint()?;
        if dataset.fingerprint != expected {
            return Err(Error::ConfigMismatch {
                expected,
                found: dataset.fingerprint.clone(),
            });
        }
        let inputs = dataset
            .train
            .iter()
            .map(|r| episode_inputs(r, cfg))
            .collect::<Result<Vec<_>>>()?;
        let held_out = (0..dataset.train.len()).map(|i| dataset.held_out_pairs(i)).collect();
        Ok(Self {
            state,
            dataset,
            inputs,
            held_out,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.state.config
    }

    /// Draws the next batch from the sampler stream.
    pub fn sample_batch(&mut self) -> Result<Vec<BatchItem>> {
        let cfg = &self.state.config;
        let ep = &cfg.data.episode;
        let mut out = Vec::with_capacity(cfg.train.batch);
        for _ in 0..cfg.train.batch {
            let scene = self.state.rng.gen_range(0..self.dataset.train.len());
            let record = &self.dataset.train[scene];
            let queries = sample_train_queries(&mut self.state.rng, record, &self.held_out[scene], ep, ep.queries)?;
            let rendered = render_queries(&record.scene, &queries, ep)?;
            let target = Tensor::new(
                vec![queries.len(), 2, cfg.stft.bins(), cfg.stft.frames],
                target_spectrograms(&rendered, &cfg.stft)?,
            )?;
            out.push(BatchItem { scene, queries, target });
        }
        Ok(out)
    }

    /// Batch-mean loss and gradients for every parameter at the current
    /// weights. Parameters the forward pass never touched get zeros.
    pub fn loss_and_grads(&self, batch: &[BatchItem]) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let cfg = &self.state.config;
        let model = &self.state.model;
        let mut total = 0.0;
        let mut grads: BTreeMap<String, Tensor> = model
            .params
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        let scale = 1.0 / batch.len() as f64;
        for item in batch {
            let mut f = model.forward(true);
            let out = f.predict_rir(&self.inputs[item.scene], &item.queries, cfg.ablation)?;
            let loss = loss_total(&mut f.graph, out.spectrograms, &item.target, cfg.model.lambda)?;
            total += f.graph.value(loss).item();
            let mut g = f.graph.backward(loss)?;
            for (name, t) in f.params.collect(&mut g) {
                let acc = grads.get_mut(&name).expect("every bound name is a parameter");
                for (a, &v) in acc.data_mut().iter_mut().zip(t.data()) {
                    *a += scale * v;
                }
            }
        }
        Ok((total * scale, grads))
    }

    /// One optimizer step; returns its trace row.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.state.step;
        let train = &self.state.config.train;
        let lr = train.schedule.lr(step, train.steps, train.base_lr)?;
        let batch = self.sample_batch()?;
        // The tape refuses to propagate non-finite values, so a blow-up
        // surfaces as an op error before any loss exists.
        let (loss, grads) = match self.loss_and_grads(&batch) {
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step, loss: f64::NAN }),
            other => other?,
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        self.state.adam.step(&mut self.state.model.params, &grads, lr)?;
        self.state.step += 1;
        Ok(StepRecord { step, loss, lr })
    }
}

/// Where [`train`] writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

pub const FINAL_CHECKPOINT: &str = "checkpoint.ckpt";
pub const LOSS_TRACE: &str = "loss.csv";

/// Runs from `state` to the configured step count. With an output
/// directory, writes the loss trace, periodic checkpoints
/// (`checkpoint-<step>.ckpt`) and the final `checkpoint.ckpt`.
pub fn train(
    state: Checkpoint,
    dataset: &Dataset,
    out: &TrainOutput,
    mut progress: impl FnMut(&StepRecord),
) -> Result<(Checkpoint, Vec<StepRecord>)> {
    let mut trainer = Trainer::new(state, dataset)?;
    let steps = trainer.config().train.steps;
    let every = trainer.config().train.checkpoint_every;
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut trace = Vec::with_capacity(steps);
    while trainer.state.step < steps {
        let rec = trainer.step()?;
        progress(&rec);
        trace.push(rec);
        if let Some(dir) = &out.dir {
            let done = trainer.state.step;
            if every > 0 && done % every == 0 && done < steps {
                trainer.state.save(&dir.join(format!("checkpoint-{done}.ckpt")))?;
            }
        }
    }
    if let Some(dir) = &out.dir {
        trainer.state.save(&dir.join(FINAL_CHECKPOINT))?;
        let path = dir.join(LOSS_TRACE);
        std::fs::write(&path, loss_csv(&trace)).map_err(|e| Error::io(&path, e))?;
    }
    Ok((trainer.state, trace))
}
