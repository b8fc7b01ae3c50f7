//! `ltr train | eval | predict | synth`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ltr_core::features::FeatureKind;
use ltr_core::model::{build_model, EvalReport};
use ltr_core::{Batch, BatchIterator, ExampleList, FeatureTransform, Model, TruncatePolicy};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{self, Command, Overrides, RunConfig};
use crate::error::{LtrError, Result};
use crate::formats::{self, load_dataset, pad_lists, DataFormat, LIBSVM_FEATURE};
use crate::parallel::{shard_data, train_async, WorkerReport};
use crate::synth::{self, CategoricalSpec, LabelScheme, OutputFormat, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(
    name = "ltr",
    version,
    about = "Train, evaluate and serve neural learning-to-rank models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train a model and write a checkpoint, loss trace and manifest.
    Train(RunArgs),
    /// Evaluate a checkpoint on labelled data.
    Eval(RunArgs),
    /// Score items with a checkpoint (TSV: qid, item_index, score).
    Predict(RunArgs),
    /// Generate a synthetic dataset with known utilities.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON config file (or a run manifest).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "train_path")]
    pub train_path: Option<PathBuf>,
    /// Labelled data for `eval`, items to score for `predict`.
    #[arg(long = "eval_path")]
    pub eval_path: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "list_size")]
    pub list_size: Option<usize>,
    #[arg(long = "group_size")]
    pub group_size: Option<usize>,
    /// sigmoid_cross_entropy | pairwise_logistic | softmax_cross_entropy | list_mle
    #[arg(long)]
    pub loss: Option<String>,
    /// Comma-separated keys such as `mrr,arp,ndcg@5`.
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long = "learning_rate")]
    pub learning_rate: Option<f64>,
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long = "num_steps")]
    pub num_steps: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            train_path: self.train_path.clone(),
            eval_path: self.eval_path.clone(),
            checkpoint: self.checkpoint.clone(),
            out: self.out.clone(),
            list_size: self.list_size,
            group_size: self.group_size,
            loss: self.loss.clone(),
            metrics: self.metrics.clone(),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            num_steps: self.num_steps,
            workers: self.workers,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// JSON file with a synthetic spec; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long = "items_min")]
    pub items_min: Option<usize>,
    #[arg(long = "items_max")]
    pub items_max: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    /// Simulate position-biased clicks with propensity r^-eta.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long = "logging_noise")]
    pub logging_noise: Option<f64>,
    #[arg(long = "logging_bias")]
    pub logging_bias: Option<f64>,
    /// Add a categorical token feature with this many tokens.
    #[arg(long = "vocab_size")]
    pub vocab_size: Option<usize>,
    /// jsonl | libsvm
    #[arg(long)]
    pub format: Option<String>,
}

/// Summary of a training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_trace: Vec<(u64, f64)>,
    pub workers: Vec<WorkerReport>,
    pub config: RunConfig,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| LtrError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| LtrError::io(path, e))
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

/// Width of the declared `libsvm` feature, if any.
fn libsvm_width(model: &ltr_core::RankingConfig) -> Option<usize> {
    model.features.iter().find_map(|s| match s.kind {
        FeatureKind::DenseNumeric { width } if s.name == LIBSVM_FEATURE => Some(width),
        _ => None,
    })
}

/// Trains per `cfg` (already resolved) and writes the checkpoint, loss trace,
/// manifest and, for several workers, the worker reports.
pub fn cmd_train(mut cfg: RunConfig) -> Result<TrainSummary> {
    let train_path = cfg.train_path.clone().expect("resolved config has train_path");
    let data = load_dataset(&train_path, libsvm_width(&cfg.model))?;
    if data.lists.is_empty() {
        return Err(ltr_core::Error::Domain(format!("{} holds no queries", train_path.display())).into());
    }
    if cfg.model.features.is_empty() {
        cfg.model.features = match data.format {
            DataFormat::Libsvm => vec![ltr_core::FeatureSpec::dense(
                LIBSVM_FEATURE,
                ltr_core::FeatureScope::PerItem,
                data.libsvm_width.max(1),
            )],
            DataFormat::Jsonl => formats::infer_features(&data.lists, cfg.embedding_dim),
        };
    }
    let mut vocabs = formats::build_vocabularies(
        &data.lists,
        &cfg.model.features,
        cfg.vocab_min_frequency,
        cfg.oov_buckets,
    )?;
    for (id, path) in &cfg.vocab_files {
        if vocabs.contains_key(id) {
            vocabs.insert(id.clone(), formats::read_vocab(path, id, cfg.oov_buckets)?);
        }
    }
    let transform = FeatureTransform::new(cfg.model.features.clone(), vocabs)?;
    let model = build_model(cfg.model.clone(), transform)?;
    let lists = pad_lists(
        data.lists,
        cfg.model.list_size,
        cfg.model.seed,
        cfg.model.truncate_policy,
    )?;

    let (model, loss_trace, workers) = if cfg.model.worker_count == 1 {
        let mut model = model;
        let mut iter = BatchIterator::new(lists, cfg.model.batch_size, true, cfg.model.seed)?;
        let outcome = model.train(&mut iter, cfg.model.num_steps)?;
        (model, outcome.loss_trace, Vec::new())
    } else {
        let shards = shard_data(lists, cfg.model.worker_count)?;
        let outcome = train_async(model, &shards, cfg.model.num_steps)?;
        (outcome.model, outcome.loss_trace, outcome.reports)
    };

    let out = cfg.out.clone().expect("resolved config has out");
    let checkpoint = cfg.checkpoint.clone().expect("resolved config has checkpoint");
    save_checkpoint(&model, &checkpoint)?;
    let mut trace = String::from("step\tloss\n");
    for (step, loss) in &loss_trace {
        writeln!(trace, "{step}\t{loss}").expect("write to string");
    }
    write_file(&out.join("loss_trace.tsv"), trace)?;
    write_file(
        &out.join("manifest.json"),
        json_pretty(&config::manifest(Command::Train, &cfg)),
    )?;
    if !workers.is_empty() {
        write_file(&out.join("workers.json"), json_pretty(&workers))?;
    }
    Ok(TrainSummary {
        checkpoint,
        loss_trace,
        workers,
        config: cfg,
    })
}

/// Loads the checkpoint, replacing its metric set when the run config names
/// one explicitly.
fn load_model(cfg: &RunConfig, metrics_override: bool) -> Result<Model> {
    let path = cfg.checkpoint.as_ref().expect("resolved config has checkpoint");
    let model = load_checkpoint(path)?;
    if !metrics_override || model.config().metrics == cfg.model.metrics {
        return Ok(model);
    }
    let mut mc = model.config().clone();
    mc.metrics = cfg.model.metrics.clone();
    Ok(Model::restore(
        mc,
        model.transform().clone(),
        model.params().clone(),
        model.optimizer().clone(),
        model.global_step(),
    )?)
}

/// Eval batches in file order.
pub fn eval_batches(model: &Model, lists: Vec<ExampleList>) -> Result<Vec<Batch>> {
    let c = model.config();
    let lists = pad_lists(lists, c.list_size, c.seed, c.truncate_policy)?;
    lists
        .chunks(c.batch_size)
        .map(|chunk| Ok(Batch::new(chunk.to_vec())?))
        .collect()
}

pub fn format_report(report: &EvalReport) -> String {
    let mut s = format!(
        "{:<12}{:>14}{:>14}{:>8}{:>9}\n",
        "metric", "weighted", "unweighted", "lists", "skipped"
    );
    for m in &report.metrics {
        writeln!(
            s,
            "{:<12}{:>14.6}{:>14.6}{:>8}{:>9}",
            m.name, m.weighted, m.unweighted, m.lists, m.skipped
        )
        .expect("write to string");
    }
    s
}

pub fn cmd_eval(cfg: &RunConfig, metrics_override: bool) -> Result<EvalReport> {
    let mut model = load_model(cfg, metrics_override)?;
    let path = cfg.eval_path.as_ref().expect("resolved config has eval_path");
    let data = load_dataset(path, libsvm_width(model.config()))?;
    let batches = eval_batches(&model, data.lists)?;
    let report = model.evaluate(batches)?;
    if let Some(out) = &cfg.out {
        write_file(&out.join("eval_report.txt"), format_report(&report))?;
        write_file(&out.join("eval_report.json"), json_pretty(&report))?;
        write_file(
            &out.join("eval_manifest.json"),
            json_pretty(&config::manifest(Command::Eval, cfg)),
        )?;
    }
    Ok(report)
}

/// Scores of one unpadded list, in input order.
pub fn predict_list(model: &mut Model, list: &ExampleList) -> Result<Vec<f64>> {
    let size = list.items.len().max(model.config().group_size);
    let padded = ltr_core::data::pad_to_list_size(
        list.clone(),
        size,
        &mut ltr_core::rng::stream_rng(0, ltr_core::rng::Stream::Sampling, 0),
        TruncatePolicy::First,
    )?;
    let scored = model.predict(&Batch::new(vec![padded])?)?;
    Ok(scored[0].scores[..list.items.len()].to_vec())
}

/// `(qid, item_index, score)` rows in input order.
pub fn cmd_predict(cfg: &RunConfig) -> Result<Vec<(String, usize, f64)>> {
    let mut model = load_model(cfg, false)?;
    let path = cfg.eval_path.as_ref().expect("resolved config has eval_path");
    let data = load_dataset(path, libsvm_width(model.config()))?;
    let mut rows = Vec::new();
    for list in &data.lists {
        for (i, s) in predict_list(&mut model, list)?.into_iter().enumerate() {
            rows.push((list.query_id.clone(), i, s));
        }
    }
    if let Some(out) = &cfg.out {
        write_file(&out.join("predictions.tsv"), format_predictions(&rows))?;
        write_file(
            &out.join("predict_manifest.json"),
            json_pretty(&config::manifest(Command::Predict, cfg)),
        )?;
    }
    Ok(rows)
}

pub fn format_predictions(rows: &[(String, usize, f64)]) -> String {
    let mut s = String::new();
    for (q, i, score) in rows {
        writeln!(s, "{q}\t{i}\t{score}").expect("write to string");
    }
    s
}

fn synth_spec(a: &SynthArgs) -> Result<SyntheticSpec> {
    let mut spec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| LtrError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| LtrError::Validation(vec![format!("{}: {e}", p.display())]))?
        }
        None => SyntheticSpec::default(),
    };
    let mut problems = Vec::new();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { spec.$f = v; })* };
    }
    set!(seed, queries, items_min, items_max, dim);
    let levels = a.levels.unwrap_or(spec.labels.levels());
    spec.labels = match (spec.labels.clone(), a.eta) {
        (
            LabelScheme::Clicks {
                eta,
                logging_noise,
                logging_bias,
                ..
            },
            new_eta,
        ) => LabelScheme::Clicks {
            levels,
            eta: new_eta.unwrap_or(eta),
            logging_noise: a.logging_noise.unwrap_or(logging_noise),
            logging_bias: a.logging_bias.unwrap_or(logging_bias),
        },
        (LabelScheme::Graded { .. }, Some(eta)) => LabelScheme::Clicks {
            levels,
            eta,
            logging_noise: a.logging_noise.unwrap_or(0.5),
            logging_bias: a.logging_bias.unwrap_or(1.0),
        },
        (LabelScheme::Graded { .. }, None) => LabelScheme::Graded { levels },
    };
    if let Some(v) = a.vocab_size {
        spec.categorical = Some(CategoricalSpec {
            vocab_size: v,
            ..spec.categorical.clone().unwrap_or(CategoricalSpec {
                vocab_size: v,
                token_scale: 1.0,
                dense_scale: 0.1,
            })
        });
    }
    match a.format.as_deref() {
        None => {}
        Some("jsonl") => spec.format = OutputFormat::Jsonl,
        Some("libsvm") => spec.format = OutputFormat::Libsvm,
        Some(other) => problems.push(format!("unknown format `{other}` (jsonl | libsvm)")),
    }
    problems.extend(spec.problems());
    if problems.is_empty() {
        Ok(spec)
    } else {
        Err(LtrError::Validation(problems))
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<SyntheticSpec> {
    let spec = synth_spec(a)?;
    let data = synth::generate(&spec)?;
    synth::write_dataset(&spec, &data, &a.out)?;
    Ok(spec)
}

fn run_command(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let emit = |text: &str| {
        let mut lock = stdout.lock();
        // A closed stdout (e.g. piping into `head`) is not an error.
        let _ = lock.write_all(text.as_bytes());
    };
    match cli.command {
        Cmd::Train(a) => {
            let cfg = config::resolve(Command::Train, a.config.as_deref(), &a.overrides())?;
            let s = cmd_train(cfg)?;
            let last = s
                .loss_trace
                .last()
                .map_or(String::from("n/a"), |(st, l)| format!("{l} at step {st}"));
            emit(&format!(
                "checkpoint: {}\nfinal logged loss: {last}\n",
                s.checkpoint.display()
            ));
        }
        Cmd::Eval(a) => {
            let cfg = config::resolve(Command::Eval, a.config.as_deref(), &a.overrides())?;
            let explicit = a.metrics.is_some() || a.config.is_some();
            emit(&format_report(&cmd_eval(&cfg, explicit)?));
        }
        Cmd::Predict(a) => {
            let cfg = config::resolve(Command::Predict, a.config.as_deref(), &a.overrides())?;
            let rows = cmd_predict(&cfg)?;
            if cfg.out.is_none() {
                emit(&format_predictions(&rows));
            }
        }
        Cmd::Synth(a) => {
            let spec = cmd_synth(&a)?;
            emit(&format!("wrote {} queries to {}\n", spec.queries, a.out.display()));
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run_command(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Metric names of a report mapped to `(weighted, unweighted)`.
pub fn report_map(report: &EvalReport) -> BTreeMap<String, (f64, f64)> {
    report
        .metrics
        .iter()
        .map(|m| (m.name.clone(), (m.weighted, m.unweighted)))
        .collect()
}
