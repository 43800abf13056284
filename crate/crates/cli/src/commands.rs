use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use log::info;

use rap_core::checkpoint::Checkpoint;
use rap_core::clustering::estimate_k as estimate_cluster_count;
use rap_core::config::TrainConfig;
use rap_core::dataset::{feature_matrix, parse_jsonl, synth_mixture, write_jsonl, Dataset, SynthConfig};

use crate::manifest::{config_map, Artifacts, DatasetFingerprint, RunManifest, RunMetrics};
use crate::report::{self, EvalReport};

const CHECKPOINT_FILE: &str = "checkpoint.json";
const EPOCH_LOG_FILE: &str = "epochs.csv";
const CONFIG_FILE: &str = "config.cfg";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 16)]
    d: usize,
    /// Minimum distance between class centers.
    #[arg(long, default_value_t = 6.0)]
    sep: f64,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Fraction of each known class that is labeled.
    #[arg(long, default_value_t = 0.1)]
    labeled_frac: f64,
    /// Fraction of classes that are known.
    #[arg(long, default_value_t = 0.75)]
    known_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL path.
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        classes: args.k,
        n_per_class: args.n,
        dim: args.d,
        sep: args.sep,
        sigma: args.sigma,
        labeled_fraction: args.labeled_frac,
        known_fraction: args.known_frac,
        seed: args.seed,
    };
    let data = synth_mixture(&cfg)?;
    write_jsonl(&data, &args.out)?;
    println!(
        "wrote {} samples to {}: {} labeled, {} unlabeled; {} classes ({} known, {} novel), d = {}",
        data.len(),
        args.out.display(),
        data.labeled.len(),
        data.unlabeled.len(),
        data.task.total_classes(),
        data.task.known_count(),
        data.task.novel_count(),
        data.dim()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset JSONL.
    #[arg(long)]
    data: PathBuf,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override a config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cluster count: an integer, `ground_truth` or `estimate`.
    #[arg(long)]
    k: Option<String>,
    /// Drop the prototype dispersion term.
    #[arg(long)]
    no_apdl: bool,
}

impl TrainArgs {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    fn resolve_config(&self) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            config
                .apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {pair:?}"))?;
            config.set(key.trim(), value)?;
        }
        let flags: [(&str, Option<String>); 12] = [
            ("tau", self.tau.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("omega", self.omega.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("warmup_epochs", self.warmup_epochs.map(|v| v.to_string())),
            ("early_stop_patience", self.patience.map(|v| v.to_string())),
            ("embed_dim", self.embed_dim.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("k", self.k.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, &v)?;
            }
        }
        if self.no_apdl {
            config.loss.use_apdl = false;
        }
        config.validate()?;
        Ok(config)
    }
}

fn read_dataset(path: &Path) -> Result<(Dataset, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    let data = parse_jsonl(text).with_context(|| format!("loading {}", path.display()))?;
    Ok((data, bytes))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = args.resolve_config()?;
    let (data, bytes) = read_dataset(&args.data)?;
    info!(
        "{} labeled, {} unlabeled, {} test samples; d = {}",
        data.labeled.len(),
        data.unlabeled.len(),
        data.test.len(),
        data.dim()
    );
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let model = rap_core::trainer::train(&data, &config)?;
    let ckpt = Checkpoint::new(
        &model,
        &config,
        data.task.known_classes(),
        data.task.total_classes(),
    );
    ckpt.save(args.out.join(CHECKPOINT_FILE))?;
    report::write_epoch_log(&args.out.join(EPOCH_LOG_FILE), &model.logs)?;
    let config_path = args.out.join(CONFIG_FILE);
    fs::write(&config_path, config.to_text())
        .with_context(|| format!("writing {}", config_path.display()))?;

    let samples = data.eval_samples();
    let eval = if samples.is_empty() {
        None
    } else {
        let names = data.all_class_names();
        Some(report::evaluate(&model.encoder, samples, model.k, config.seed, &names)?.0)
    };
    let manifest = RunManifest {
        format: crate::manifest::FORMAT.to_owned(),
        version: crate::manifest::VERSION,
        seed: config.seed,
        config: config_map(&config),
        dataset: DatasetFingerprint::of_bytes(&args.data, &bytes),
        artifacts: Artifacts {
            checkpoint: CHECKPOINT_FILE.to_owned(),
            epoch_log: EPOCH_LOG_FILE.to_owned(),
            config: CONFIG_FILE.to_owned(),
        },
        metrics: RunMetrics {
            k: model.k,
            best_epoch: model.best_epoch,
            epochs_run: model.logs.len(),
            best_val_nmi: model.best_epoch.checked_sub(1).map(|i| model.logs[i].val_nmi),
            warmup_ce: model.warmup_ce.clone(),
            eval: eval.clone(),
        },
    };
    manifest.save(&args.out.join(MANIFEST_FILE))?;

    println!(
        "trained {} epochs (best {}), k = {}; artifacts in {}",
        model.logs.len(),
        model.best_epoch,
        model.k,
        args.out.display()
    );
    if let Some(r) = &eval {
        print!("{}", report::table(r));
    }
    Ok(())
}

/// A checkpoint file, or a run directory containing one.
fn checkpoint_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(CHECKPOINT_FILE)
    } else {
        path.to_owned()
    }
}

/// Loads a checkpoint and checks it against the dataset. A run directory's
/// manifest also tells whether `bytes` are the training data.
fn load_checkpoint(path: &Path, data: &Dataset, bytes: &[u8]) -> Result<Checkpoint> {
    let manifest_path = path.join(MANIFEST_FILE);
    if path.is_dir() && manifest_path.is_file() {
        let manifest = RunManifest::load(&manifest_path)?;
        match manifest.dataset.verify(bytes) {
            Ok(()) => info!("dataset matches the training data of {}", path.display()),
            Err(e) => info!("dataset differs from the training data: {e}"),
        }
    }
    let path = checkpoint_path(path);
    let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if ckpt.input_dim != data.dim() {
        bail!(
            "dimension mismatch: dataset features are {}-dimensional but the checkpoint expects {}",
            data.dim(),
            ckpt.input_dim
        );
    }
    Ok(ckpt)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file or run directory.
    #[arg(long)]
    ckpt: PathBuf,
    /// Cluster count; defaults to the checkpoint's.
    #[arg(long)]
    k: Option<usize>,
    /// k-means seed; defaults to the checkpoint's training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report as JSON.
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
    /// Write per-sample embeddings and clusters as CSV.
    #[arg(long, value_name = "PATH")]
    dump_embeddings: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let (data, bytes) = read_dataset(&args.data)?;
    let ckpt = load_checkpoint(&args.ckpt, &data, &bytes)?;
    let model = ckpt.restore()?;
    let samples = data.eval_samples();
    if samples.is_empty() {
        bail!("{} has no samples to evaluate", args.data.display());
    }
    let k = args.k.unwrap_or(ckpt.k);
    let seed = args.seed.unwrap_or(ckpt.seed);
    let (report, inference) = report::evaluate(&model.encoder, samples, k, seed, &data.all_class_names())?;
    print!("{}", report::table(&report));
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    if let Some(path) = &args.dump_embeddings {
        report::write_embeddings(path, samples, &inference)?;
    }
    Ok(())
}

fn write_json(path: &Path, report: &EvalReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `k_init` as a multiple of the class count (`2x`) or an absolute number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KInit {
    Times(usize),
    Absolute(usize),
}

impl FromStr for KInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("expected a positive integer or a multiple such as `2x`, got {s:?}");
        let (digits, times) = match s.strip_suffix('x') {
            Some(d) => (d, true),
            None => (s, false),
        };
        let n: usize = digits.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        Ok(if times {
            KInit::Times(n)
        } else {
            KInit::Absolute(n)
        })
    }
}

#[derive(Debug, Args)]
pub struct EstimateKArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file or run directory; raw features are clustered without one.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Initial cluster count: `Nx` times the dataset's class count, or an integer.
    #[arg(long, default_value = "2x")]
    k_init: KInit,
    #[arg(long, default_value_t = rap_core::clustering::DEFAULT_DROP_RATIO)]
    drop_ratio: f64,
    /// k-means seed; defaults to the checkpoint's training seed, else 0.
    #[arg(long)]
    seed: Option<u64>,
}

pub fn estimate_k(args: EstimateKArgs) -> Result<()> {
    let (data, bytes) = read_dataset(&args.data)?;
    let samples: Vec<_> = data
        .labeled
        .iter()
        .chain(&data.unlabeled)
        .chain(&data.test)
        .collect();
    let x = feature_matrix(samples.iter().copied(), data.dim());
    let (points, ckpt_seed) = match &args.ckpt {
        Some(path) => {
            let ckpt = load_checkpoint(path, &data, &bytes)?;
            (ckpt.restore()?.encoder.embed(x.view())?, Some(ckpt.seed))
        }
        None => (x, None),
    };
    let k_init = match args.k_init {
        KInit::Times(m) => m * data.task.total_classes(),
        KInit::Absolute(n) => n,
    };
    let seed = args.seed.or(ckpt_seed).unwrap_or(0);
    let k = estimate_cluster_count(points.view(), k_init, args.drop_ratio, seed)?;

    println!("estimated K   {k}");
    println!("k_init        {k_init}");
    println!("drop ratio    {}", args.drop_ratio);
    if samples.iter().all(|s| s.truth().is_some()) {
        let truth: BTreeSet<&str> = samples.iter().filter_map(|s| s.truth()).collect();
        let gt = truth.len();
        let error = 100.0 * (k as f64 - gt as f64).abs() / gt as f64;
        println!("ground truth  {gt}");
        println!("error (%)     {error:.2}");
    }
    Ok(())
}
