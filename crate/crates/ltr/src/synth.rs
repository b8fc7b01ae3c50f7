//! Synthetic ranking data with a known utility.
//!
//! Every item has dense features `x ~ U(0,1)^d` and true utility
//! `u = w . x` (plus a token value when a categorical feature is enabled).
//! Graded labels bucket `u` at global quantiles. Click labels simulate a
//! logged ranking with rank-power position bias: an item shown at rank `r`
//! with grade `g` is clicked with probability `g/(levels-1) * r^-eta`, and
//! clicked items carry the inverse-propensity weight `r^eta`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ltr_core::rng::{stream_rng, Stream};
use ltr_core::{ExampleList, FeatureMap, FeatureScope, FeatureSpec, Item};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{LtrError, Result};
use crate::formats::{write_jsonl, write_libsvm, LIBSVM_FEATURE};

/// Dense feature name used by JSONL output.
pub const DENSE_FEATURE: &str = "x";
/// Categorical feature (and vocabulary) name.
pub const TOKEN_FEATURE: &str = "token";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightScheme {
    /// `w_i ~ U(-1, 1)` from the seed.
    Uniform,
    Ones,
    Explicit {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelScheme {
    Graded {
        levels: usize,
    },
    /// Click labels on training queries; evaluation queries keep grades.
    Clicks {
        levels: usize,
        eta: f64,
        /// Std-dev of the logging ranker's noise, in units of the utility's
        /// standard deviation.
        logging_noise: f64,
        /// Extra logging score per unit of the standardized last feature,
        /// which the true utility does not reward.
        logging_bias: f64,
    },
}

impl LabelScheme {
    pub fn levels(&self) -> usize {
        match self {
            LabelScheme::Graded { levels } | LabelScheme::Clicks { levels, .. } => *levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub vocab_size: usize,
    /// Utility of a token is `token_scale * v_t` with `v_t ~ U(0,1)`.
    pub token_scale: f64,
    /// Multiplier on the dense part of the utility.
    pub dense_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Jsonl,
    Libsvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub queries: usize,
    pub items_min: usize,
    pub items_max: usize,
    pub dim: usize,
    pub weights: WeightScheme,
    pub labels: LabelScheme,
    pub categorical: Option<CategoricalSpec>,
    /// Fraction of queries (the last ones) held out for evaluation.
    pub eval_fraction: f64,
    pub format: OutputFormat,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            queries: 1000,
            items_min: 10,
            items_max: 10,
            dim: 10,
            weights: WeightScheme::Uniform,
            labels: LabelScheme::Graded { levels: 5 },
            categorical: None,
            eval_fraction: 0.1,
            format: OutputFormat::Jsonl,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim == 0 {
            out.push("dim must be at least 1".into());
        }
        if self.queries == 0 {
            out.push("queries must be at least 1".into());
        }
        if self.items_min == 0 || self.items_min > self.items_max {
            out.push("items per query must satisfy 1 <= items_min <= items_max".into());
        }
        if self.labels.levels() < 2 {
            out.push("levels must be at least 2".into());
        }
        if let LabelScheme::Clicks { eta, logging_noise, .. } = self.labels {
            if !(eta >= 0.0) || !(logging_noise >= 0.0) {
                out.push("eta and logging_noise must be non-negative".into());
            }
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            out.push("eval_fraction must lie in [0, 1)".into());
        }
        if let WeightScheme::Explicit { values } = &self.weights {
            if values.len() != self.dim {
                out.push(format!(
                    "explicit weights have {} entries, dim is {}",
                    values.len(),
                    self.dim
                ));
            }
        }
        if let Some(c) = &self.categorical {
            if c.vocab_size == 0 {
                out.push("vocab_size must be at least 1".into());
            }
        }
        if self.format == OutputFormat::Libsvm
            && (self.categorical.is_some() || matches!(self.labels, LabelScheme::Clicks { .. }))
        {
            out.push("LIBSVM output carries neither tokens nor item weights; use jsonl".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(LtrError::Validation(p))
        }
    }

    fn dense_name(&self) -> &'static str {
        match self.format {
            OutputFormat::Jsonl => DENSE_FEATURE,
            OutputFormat::Libsvm => LIBSVM_FEATURE,
        }
    }

    /// Feature declarations matching the generated data.
    pub fn feature_specs(&self, embedding_dim: usize, with_tokens: bool) -> Vec<FeatureSpec> {
        let mut specs = vec![FeatureSpec::dense(self.dense_name(), FeatureScope::PerItem, self.dim)];
        if with_tokens && self.categorical.is_some() {
            specs.push(FeatureSpec::categorical(
                TOKEN_FEATURE,
                FeatureScope::PerItem,
                TOKEN_FEATURE,
                embedding_dim,
            ));
        }
        specs
    }

    pub fn token(t: usize) -> String {
        format!("tok{t}")
    }
}

/// Ground truth for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub query_id: String,
    pub item_index: usize,
    pub utility: f64,
    pub grade: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub weights: Vec<f64>,
    pub train: Vec<ExampleList>,
    pub eval: Vec<ExampleList>,
    pub truth: Vec<TruthRow>,
}

struct Query {
    id: String,
    xs: Vec<Vec<f64>>,
    tokens: Vec<Option<usize>>,
    utility: Vec<f64>,
}

/// Generates the dataset. Output depends only on `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut wrng = stream_rng(spec.seed, Stream::Synthetic, 0);
    let weights: Vec<f64> = match &spec.weights {
        WeightScheme::Uniform => (0..spec.dim).map(|_| wrng.random_range(-1.0..1.0)).collect(),
        WeightScheme::Ones => vec![1.0; spec.dim],
        WeightScheme::Explicit { values } => values.clone(),
    };
    let token_values: Vec<f64> = spec
        .categorical
        .as_ref()
        .map(|c| (0..c.vocab_size).map(|_| wrng.random::<f64>()).collect())
        .unwrap_or_default();

    let mut rng = stream_rng(spec.seed, Stream::Synthetic, 1);
    let mut queries = Vec::with_capacity(spec.queries);
    for q in 0..spec.queries {
        let n = rng.random_range(spec.items_min..=spec.items_max);
        let mut query = Query {
            id: format!("q{q:05}"),
            xs: Vec::with_capacity(n),
            tokens: Vec::with_capacity(n),
            utility: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let x: Vec<f64> = (0..spec.dim).map(|_| rng.random::<f64>()).collect();
            let dense: f64 = x.iter().zip(&weights).map(|(a, b)| a * b).sum();
            let (token, u) = match &spec.categorical {
                Some(c) => {
                    let t = rng.random_range(0..c.vocab_size);
                    (Some(t), c.dense_scale * dense + c.token_scale * token_values[t])
                }
                None => (None, dense),
            };
            query.xs.push(x);
            query.tokens.push(token);
            query.utility.push(u);
        }
        queries.push(query);
    }

    let levels = spec.labels.levels();
    let mut all: Vec<f64> = queries.iter().flat_map(|q| q.utility.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = (1..levels).map(|k| all[k * all.len() / levels]).collect();
    let grade = |u: f64| thresholds.iter().filter(|&&t| u >= t).count();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let sd = (all.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / all.len() as f64)
        .sqrt()
        .max(1e-12);

    let n_eval = ((spec.queries as f64) * spec.eval_fraction).round() as usize;
    let n_train = spec.queries - n_eval;
    let mut click_rng = stream_rng(spec.seed, Stream::Synthetic, 2);
    let mut out = SyntheticData {
        weights,
        train: Vec::with_capacity(n_train),
        eval: Vec::with_capacity(n_eval),
        truth: Vec::new(),
    };
    let dense_name = spec.dense_name();
    let features = |q: &Query, i: usize| {
        let mut f = FeatureMap::default();
        f.dense.insert(dense_name.to_string(), q.xs[i].clone());
        if let Some(t) = q.tokens[i] {
            f.categorical
                .insert(TOKEN_FEATURE.to_string(), vec![SyntheticSpec::token(t)]);
        }
        f
    };
    for (qi, q) in queries.iter().enumerate() {
        let grades: Vec<usize> = q.utility.iter().map(|&u| grade(u)).collect();
        let is_train = qi < n_train;
        let list = match (&spec.labels, is_train) {
            (
                LabelScheme::Clicks {
                    eta,
                    logging_noise,
                    logging_bias,
                    ..
                },
                true,
            ) => {
                // Items appear in the order the logging ranker showed them.
                let last = spec.dim - 1;
                let logged: Vec<f64> = (0..q.utility.len())
                    .map(|i| {
                        let noise: f64 = StandardNormal.sample(&mut click_rng);
                        (q.utility[i] - mean) / sd
                            + logging_bias * (q.xs[i][last] - 0.5) * 12f64.sqrt()
                            + logging_noise * noise
                    })
                    .collect();
                let mut order: Vec<usize> = (0..logged.len()).collect();
                order.sort_by(|&a, &b| logged[b].total_cmp(&logged[a]));
                let items = order
                    .iter()
                    .enumerate()
                    .map(|(pos, &i)| {
                        let r = (pos + 1) as f64;
                        let p = grades[i] as f64 / (levels - 1) as f64 * r.powf(-eta);
                        let clicked = click_rng.random::<f64>() < p;
                        let mut item = Item::new(features(q, i), if clicked { 1.0 } else { 0.0 });
                        item.weight = if clicked { r.powf(*eta) } else { 1.0 };
                        item
                    })
                    .collect();
                for (pos, &i) in order.iter().enumerate() {
                    out.truth.push(TruthRow {
                        query_id: q.id.clone(),
                        item_index: pos,
                        utility: q.utility[i],
                        grade: grades[i],
                    });
                }
                ExampleList::new(q.id.clone(), FeatureMap::default(), items)
            }
            _ => {
                let items = grades
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| Item::new(features(q, i), g as f64))
                    .collect();
                for (i, (&utility, &grade)) in q.utility.iter().zip(&grades).enumerate() {
                    out.truth.push(TruthRow {
                        query_id: q.id.clone(),
                        item_index: i,
                        utility,
                        grade,
                    });
                }
                ExampleList::new(q.id.clone(), FeatureMap::default(), items)
            }
        };
        if is_train {
            out.train.push(list);
        } else {
            out.eval.push(list);
        }
    }
    Ok(out)
}

/// Same lists with every weight reset to 1.
pub fn without_weights(lists: &[ExampleList]) -> Vec<ExampleList> {
    let mut out = lists.to_vec();
    for l in &mut out {
        for (item, &m) in l.items.iter_mut().zip(&l.mask) {
            if m {
                item.weight = 1.0;
            }
        }
    }
    out
}

/// Same lists with every positive label collapsed to 1.
pub fn binarized(lists: &[ExampleList]) -> Vec<ExampleList> {
    let mut out = lists.to_vec();
    for l in &mut out {
        for (item, &m) in l.items.iter_mut().zip(&l.mask) {
            if m && item.label > 0.0 {
                item.label = 1.0;
            }
        }
    }
    out
}

/// Writes `train.*`, `eval.*`, `truth.tsv` and `spec.json` into `dir`.
pub fn write_dataset(spec: &SyntheticSpec, data: &SyntheticData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LtrError::io(dir, e))?;
    let ext = match spec.format {
        OutputFormat::Jsonl => "jsonl",
        OutputFormat::Libsvm => "txt",
    };
    for (name, lists) in [("train", &data.train), ("eval", &data.eval)] {
        let path = dir.join(format!("{name}.{ext}"));
        let file = fs::File::create(&path).map_err(|e| LtrError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        match spec.format {
            OutputFormat::Jsonl => write_jsonl(&mut w, lists),
            OutputFormat::Libsvm => write_libsvm(&mut w, lists),
        }
        .and_then(|_| w.flush())
        .map_err(|e| LtrError::io(&path, e))?;
    }
    let path = dir.join("truth.tsv");
    let mut text = String::from("qid\titem_index\tutility\tgrade\n");
    for t in &data.truth {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            t.query_id, t.item_index, t.utility, t.grade
        ));
    }
    fs::write(&path, text).map_err(|e| LtrError::io(&path, e))?;
    let path = dir.join("spec.json");
    let json = serde_json::json!({ "spec": spec, "weights": data.weights });
    fs::write(
        &path,
        serde_json::to_string_pretty(&json).expect("spec serializes") + "\n",
    )
    .map_err(|e| LtrError::io(&path, e))
}
