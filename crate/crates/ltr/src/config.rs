//! Run configuration: a flat JSON object whose keys are the command-line
//! flag names. Values resolve as flag > config file > built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ltr_core::{LossKey, MetricKey, RankingConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{LtrError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train_path: Option<PathBuf>,
    /// Evaluation data for `eval`; the items to score for `predict`.
    pub eval_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Embedding width for categorical features found in the data when no
    /// features are declared.
    pub embedding_dim: usize,
    pub vocab_min_frequency: usize,
    pub oov_buckets: usize,
    /// Vocabulary id to a file with one token per line; other vocabularies
    /// are built from the training data.
    pub vocab_files: BTreeMap<String, PathBuf>,
    #[serde(flatten)]
    pub model: RankingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_path: None,
            eval_path: None,
            checkpoint: None,
            out: None,
            embedding_dim: 20,
            vocab_min_frequency: 1,
            oov_buckets: 1,
            vocab_files: BTreeMap::new(),
            model: RankingConfig::default(),
        }
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub list_size: Option<usize>,
    pub group_size: Option<usize>,
    pub loss: Option<String>,
    pub metrics: Option<String>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub num_steps: Option<u64>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Predict,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Predict => "predict",
        }
    }
}

fn known_keys() -> Vec<String> {
    match serde_json::to_value(RunConfig::default()).expect("config serializes") {
        Value::Object(m) => m.keys().cloned().collect(),
        _ => unreachable!("RunConfig serializes to an object"),
    }
}

/// Parses a config file. A run manifest (`{"command": .., "config": {..}}`)
/// is accepted too, so a manifest reproduces its run.
pub fn parse_config_file(text: &str, source: &str) -> Result<RunConfig> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| LtrError::Validation(vec![format!("{source}: {e}")]))?;
    if let Value::Object(m) = &mut v {
        if m.contains_key("command") {
            if let Some(inner) = m.remove("config") {
                v = inner;
            }
        }
    }
    let Value::Object(m) = &v else {
        return Err(LtrError::Validation(vec![format!(
            "{source}: config must be a JSON object"
        )]));
    };
    let known = known_keys();
    let unknown: Vec<String> = m
        .keys()
        .filter(|k| !known.contains(k))
        .map(|k| format!("{source}: unknown key `{k}`"))
        .collect();
    if !unknown.is_empty() {
        return Err(LtrError::Validation(unknown));
    }
    serde_json::from_value(v).map_err(|e| LtrError::Validation(vec![format!("{source}: {e}")]))
}

pub fn load_config_file(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| LtrError::io(path, e))?;
    parse_config_file(&text, &path.display().to_string())
}

/// Applies flags on top of `base`, collecting every unparsable value.
pub fn apply_overrides(mut cfg: RunConfig, o: &Overrides, problems: &mut Vec<String>) -> RunConfig {
    macro_rules! set {
        ($($src:ident => $($dst:ident).+),* $(,)?) => {
            $(if let Some(v) = &o.$src { cfg.$($dst).+ = v.clone().into(); })*
        };
    }
    set!(
        train_path => train_path,
        eval_path => eval_path,
        checkpoint => checkpoint,
        out => out,
        list_size => model.list_size,
        group_size => model.group_size,
        learning_rate => model.learning_rate,
        batch_size => model.batch_size,
        num_steps => model.num_steps,
        workers => model.worker_count,
        seed => model.seed,
    );
    if let Some(s) = &o.loss {
        match s.parse::<LossKey>() {
            Ok(k) => cfg.model.loss = k,
            Err(e) => problems.push(problem_text(e)),
        }
    }
    if let Some(s) = &o.metrics {
        match parse_metrics(s) {
            Ok(m) => cfg.model.metrics = m,
            Err(mut e) => problems.append(&mut e),
        }
    }
    cfg
}

fn problem_text(e: ltr_core::Error) -> String {
    match e {
        ltr_core::Error::Config(m) => m,
        e => e.to_string(),
    }
}

/// Comma-separated metric keys, e.g. `mrr,ndcg@5`.
pub fn parse_metrics(s: &str) -> std::result::Result<Vec<MetricKey>, Vec<String>> {
    let mut keys = Vec::new();
    let mut errs = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.parse::<MetricKey>() {
            Ok(k) => keys.push(k),
            Err(e) => errs.push(problem_text(e)),
        }
    }
    if keys.is_empty() && errs.is_empty() {
        errs.push("--metrics needs at least one key".into());
    }
    if errs.is_empty() {
        Ok(keys)
    } else {
        Err(errs)
    }
}

fn require_file(problems: &mut Vec<String>, flag: &str, path: &Option<PathBuf>) {
    match path {
        None => problems.push(format!("--{flag} is required")),
        Some(p) if !p.is_file() => problems.push(format!("--{flag} {} does not exist", p.display())),
        Some(_) => {}
    }
}

/// Builds the effective config for `command` and reports every problem at
/// once.
pub fn resolve(command: Command, config_file: Option<&Path>, o: &Overrides) -> Result<RunConfig> {
    let mut problems = Vec::new();
    let base = match config_file {
        Some(p) => match load_config_file(p) {
            Ok(c) => c,
            Err(LtrError::Validation(mut e)) => {
                problems.append(&mut e);
                RunConfig::default()
            }
            Err(e) => return Err(e),
        },
        None => RunConfig::default(),
    };
    let mut cfg = apply_overrides(base, o, &mut problems);
    match command {
        Command::Train => {
            require_file(&mut problems, "train_path", &cfg.train_path);
            problems.extend(cfg.model.problems());
            if cfg.embedding_dim == 0 || cfg.vocab_min_frequency == 0 || cfg.oov_buckets == 0 {
                problems.push("embedding_dim, vocab_min_frequency and oov_buckets must be at least 1".into());
            }
            for (id, p) in &cfg.vocab_files {
                if !p.is_file() {
                    problems.push(format!("vocabulary file for `{id}` ({}) does not exist", p.display()));
                }
            }
            match (&cfg.out, &cfg.checkpoint) {
                (None, None) => problems.push("train needs --out or --checkpoint".into()),
                (Some(out), None) => cfg.checkpoint = Some(out.join("model.ltrf")),
                (None, Some(ck)) => {
                    cfg.out = Some(ck.parent().map(Path::to_path_buf).unwrap_or_default());
                }
                _ => {}
            }
        }
        Command::Eval | Command::Predict => {
            require_file(&mut problems, "checkpoint", &cfg.checkpoint);
            require_file(&mut problems, "eval_path", &cfg.eval_path);
            if cfg.model.metrics.is_empty() {
                problems.push("at least one metric is required".into());
            }
        }
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(LtrError::Validation(problems))
    }
}

/// Manifest written next to a run's outputs; loadable with `--config`.
pub fn manifest(command: Command, cfg: &RunConfig) -> Value {
    serde_json::json!({
        "command": command.as_str(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
    })
}
