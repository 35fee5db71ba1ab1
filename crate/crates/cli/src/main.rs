//! `fewshot-rir`: generate data, train, evaluate, export predictions and
//! write reports. Output goes under `$FEWSHOT_RIR_OUT` (default
//! `./fewshot-rir-out`). Failures print one line
//! `error: kind=<kind> msg="<message>"` and exit with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fewshot_rir::pipeline::evaluate::{evaluate, evaluate_all, MetricTable, Predictor};
use fewshot_rir::pipeline::layout::{read_text, write_text, CONFIG_FILE};
use fewshot_rir::pipeline::report::DISPLAY_SCALE;
use fewshot_rir::pipeline::train::{parse_loss_csv, FINAL_CHECKPOINT, LOSS_TRACE};
use fewshot_rir::pipeline::{
    predict_and_export, smoothed_endpoints, train, write_report, Checkpoint, Dataset, Layout, Profile, RunConfig,
    Split, TrainOutput,
};
use fewshot_rir::scene::Pose;
use fewshot_rir::{Error, Result};

#[derive(Parser)]
#[command(name = "fewshot-rir", version, about = "Few-shot room impulse response prediction")]
struct Cli {
    /// TOML run configuration; overrides --profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration: desk, ablation, paper or smoke.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Remove a component; repeatable.
    #[arg(long, global = true, value_enum)]
    ablate: Vec<Component>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Component {
    Mapper,
    Anticipation,
    Skip,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and store the dataset archive.
    GenData,
    /// Train a model; generates the dataset first if missing.
    Train {
        /// Override the configured number of steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate the trained model and both baselines.
    Eval {
        /// seen, unseen or all.
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Predict one query pose in a stored room and export artifacts.
    Predict {
        /// Seed of a stored training or unseen room.
        #[arg(long)]
        scene_seed: u64,
        /// Speaker position `x,y`.
        #[arg(long, value_parser = parse_point)]
        speaker: [f64; 2],
        /// Listener position `x,y`.
        #[arg(long, value_parser = parse_point)]
        listener: [f64; 2],
        /// Listener heading in quarter turns from +x.
        #[arg(long, default_value_t = 0)]
        orientation: u8,
        /// Defaults to `<run>/predict`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write loss and metric plots plus a markdown summary for a run.
    Report,
}

fn parse_point(s: &str) -> std::result::Result<[f64; 2], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [x, y] => Ok([x, y]),
        _ => Err(format!("expected x,y, got {s:?}")),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::for_profile(Profile::parse(&cli.profile)?),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    for c in &cli.ablate {
        match c {
            Component::Mapper => cfg.ablation.no_mapper = true,
            Component::Anticipation => cfg.ablation.no_anticipation = true,
            Component::Skip => cfg.ablation.no_skip = true,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_or_generate(layout: &Layout, cfg: &RunConfig) -> Result<Dataset> {
    let path = layout.dataset_path(cfg);
    if path.exists() {
        return Dataset::load(&path, cfg);
    }
    eprintln!("generating dataset {}", path.display());
    let ds = Dataset::generate(cfg)?;
    ds.save(&path, cfg)?;
    Ok(ds)
}

const SCENE_INDEX: &str = "scenes.csv";

/// One row per stored room, so `predict --scene-seed` has something to aim at.
fn scene_index(ds: &Dataset) -> String {
    let mut s = String::from("split,index,seed,x0,y0,width,depth\n");
    for (split, records) in [("train", &ds.train), ("unseen", &ds.unseen)] {
        for (i, r) in records.iter().enumerate() {
            let sc = &r.scene;
            s.push_str(&format!(
                "{split},{i},{},{},{},{},{}\n",
                sc.seed, sc.origin[0], sc.origin[1], sc.extent[0], sc.extent[1]
            ));
        }
    }
    s
}

fn load_checkpoint(run: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    Checkpoint::load(&run.join(FINAL_CHECKPOINT), cfg)
}

fn metrics_file(method: &str) -> String {
    format!("metrics_{method}.csv")
}

fn print_summary(t: &MetricTable) {
    for split in [Split::Seen, Split::Unseen] {
        if let Some(s) = t.summary(split) {
            let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", x * DISPLAY_SCALE));
            println!(
                "{:<24} {:<6} stft={:.2} rte={} drre={} (x1e-2, {} queries)",
                t.method,
                split.name(),
                s.stft_error * DISPLAY_SCALE,
                f(s.rte_s),
                f(s.drre_db),
                s.queries
            );
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let layout = Layout::from_env();
    let mut cfg = resolve_config(&cli)?;
    match cli.command {
        Command::GenData => {
            let ds = Dataset::generate(&cfg)?;
            let path = layout.dataset_path(&cfg);
            ds.save(&path, &cfg)?;
            write_text(&layout.data_dir(&cfg).join(CONFIG_FILE), &cfg.to_toml()?)?;
            write_text(&layout.data_dir(&cfg).join(SCENE_INDEX), &scene_index(&ds))?;
            println!(
                "{}: {} train scenes, {} seen and {} unseen episodes; room seeds in {SCENE_INDEX}",
                path.display(),
                ds.train.len(),
                ds.seen_eval.len(),
                ds.unseen_eval.len()
            );
        }
        Command::Train { steps } => {
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            let ds = load_or_generate(&layout, &cfg)?;
            let dir = layout.run_dir(&cfg);
            write_text(&dir.join(CONFIG_FILE), &cfg.to_toml()?)?;
            let every = (cfg.train.steps / 20).max(1);
            let out = TrainOutput { dir: Some(dir.clone()) };
            let (_, trace) = train(Checkpoint::initial(&cfg)?, &ds, &out, |r| {
                if (r.step + 1) % every == 0 {
                    eprintln!("step {:>6} loss {:.5} lr {:.2e}", r.step + 1, r.loss, r.lr);
                }
            })?;
            let losses: Vec<f64> = trace.iter().map(|r| r.loss).collect();
            if let Some((a, b)) = smoothed_endpoints(&losses) {
                println!("{}: smoothed loss {a:.4} -> {b:.4}", dir.display());
            }
        }
        Command::Eval { split } => {
            let dir = layout.run_dir(&cfg);
            let cfg = resolve_run_config(&dir, &cfg)?;
            let ds = Dataset::load(&layout.dataset_path(&cfg), &cfg)?;
            let ckpt = load_checkpoint(&dir, &cfg)?;
            for p in [Predictor::Model(&ckpt.model, cfg.ablation), Predictor::Nearest, Predictor::Interp] {
                let table = match split.as_str() {
                    "all" => evaluate_all(p, &ds, &cfg)?,
                    s => evaluate(p, &ds, &cfg, Split::parse(s)?)?,
                };
                write_text(&dir.join(metrics_file(&table.method)), &table.to_csv())?;
                print_summary(&table);
            }
        }
        Command::Predict {
            scene_seed,
            speaker,
            listener,
            orientation,
            out,
        } => {
            let dir = layout.run_dir(&cfg);
            let cfg = resolve_run_config(&dir, &cfg)?;
            let ds = Dataset::load(&layout.dataset_path(&cfg), &cfg)?;
            let ckpt = load_checkpoint(&dir, &cfg)?;
            let pose = Pose {
                speaker,
                listener,
                orientation,
            };
            let out = out.unwrap_or_else(|| dir.join("predict"));
            let e = predict_and_export(&ckpt, &ds, scene_seed, pose, &out)?;
            println!("wrote {}", e.dir.display());
        }
        Command::Report => {
            let dir = layout.run_dir(&cfg);
            let trace = parse_loss_csv(&read_text(&dir.join(LOSS_TRACE))?)?;
            let mut tables = Vec::new();
            let model = format!("model-{}", cfg.ablation.label());
            for method in [model.as_str(), "nearest", "interp"] {
                let path = dir.join(metrics_file(method));
                if path.exists() {
                    tables.push(MetricTable::from_csv(method, &read_text(&path)?)?);
                }
            }
            write_report(&dir, &cfg.run_name(), &trace, &tables)?;
            println!("wrote {}", dir.join("report.md").display());
        }
    }
    Ok(())
}

/// The configuration stored with a run wins over the command line when
/// `train --steps` changed it; everything else must agree.
fn resolve_run_config(dir: &Path, cfg: &RunConfig) -> Result<RunConfig> {
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Ok(cfg.clone());
    }
    let stored = RunConfig::from_toml(&read_text(&path)?)?;
    let mut probe = stored.clone();
    probe.train.steps = cfg.train.steps;
    if probe != *cfg {
        return Err(Error::ConfigMismatch {
            expected: cfg.fingerprint()?,
            found: stored.fingerprint()?,
        });
    }
    Ok(stored)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error: kind={} msg=\"{msg}\"", e.kind());
            ExitCode::FAILURE
        }
    }
}
