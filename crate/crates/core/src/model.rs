//! The ranking model: feature transform, scorer, loss and metrics wired
//! together behind a `run(mode, batch)` entry point, trained with Adagrad.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adagrad::{AdagradConfig, AdagradState, BlockGrad};
use crate::data::{Batch, BatchIterator, TruncatePolicy};
use crate::error::{Error, Result};
use crate::features::{EmbeddingTable, FeatureScope, FeatureSpec, FeatureTransform};
use crate::losses::{make_loss_fn, BatchLoss, LossFn, LossKey};
use crate::metrics::{make_metric_fn, MetricAccumulator, MetricFn, MetricKey, MetricSummary};
use crate::nn::DenseLayerParams;
use crate::rng::{stream_rng, Stream};
use crate::scoring::{GroupLayout, ScoredList, Scorer, ScorerArchitecture};

pub use crate::scoring::Mode;

fn default_metrics() -> Vec<MetricKey> {
    vec![
        MetricKey {
            kind: crate::metrics::MetricKind::Mrr,
            topn: None,
        },
        MetricKey {
            kind: crate::metrics::MetricKind::Ndcg,
            topn: Some(5),
        },
    ]
}

/// Every hyperparameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingConfig {
    pub list_size: usize,
    pub group_size: usize,
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_steps: u64,
    pub loss: LossKey,
    pub metrics: Vec<MetricKey>,
    pub seed: u64,
    pub worker_count: usize,
    pub features: Vec<FeatureSpec>,
    pub truncate_policy: TruncatePolicy,
    pub shuffle_groups: bool,
    pub adagrad_epsilon: f64,
    pub adagrad_initial_accumulator: f64,
    /// Record the training loss every this many steps.
    pub log_interval: u64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        let arch = ScorerArchitecture::default();
        let opt = AdagradConfig::default();
        Self {
            list_size: 10,
            group_size: arch.group_size,
            hidden_dims: arch.hidden_dims,
            dropout_rate: arch.dropout_rate,
            learning_rate: opt.learning_rate,
            batch_size: 32,
            num_steps: 1000,
            loss: LossKey::SoftmaxCrossEntropy,
            metrics: default_metrics(),
            seed: 0,
            worker_count: 1,
            features: Vec::new(),
            truncate_policy: TruncatePolicy::default(),
            shuffle_groups: false,
            adagrad_epsilon: opt.epsilon,
            adagrad_initial_accumulator: opt.initial_accumulator,
            log_interval: 100,
        }
    }
}

impl RankingConfig {
    pub fn architecture(&self) -> ScorerArchitecture {
        ScorerArchitecture {
            hidden_dims: self.hidden_dims.clone(),
            dropout_rate: self.dropout_rate,
            group_size: self.group_size,
            shuffle_groups: self.shuffle_groups,
        }
    }

    pub fn adagrad(&self) -> AdagradConfig {
        AdagradConfig {
            learning_rate: self.learning_rate,
            epsilon: self.adagrad_epsilon,
            initial_accumulator: self.adagrad_initial_accumulator,
        }
    }

    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        check(self.list_size >= 1, "list_size must be at least 1".into());
        check(
            self.group_size >= 1 && self.group_size <= self.list_size.max(1),
            alloc::format!("group_size must lie in [1, list_size], got {}", self.group_size),
        );
        check(
            !self.hidden_dims.is_empty() && !self.hidden_dims.contains(&0),
            "hidden_dims must be non-empty and positive".into(),
        );
        check(
            (0.0..1.0).contains(&self.dropout_rate),
            alloc::format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate),
        );
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            alloc::format!("learning_rate must be positive, got {}", self.learning_rate),
        );
        check(self.batch_size >= 1, "batch_size must be at least 1".into());
        check(self.num_steps >= 1, "num_steps must be at least 1".into());
        check(self.worker_count >= 1, "worker_count must be at least 1".into());
        check(self.log_interval >= 1, "log_interval must be at least 1".into());
        check(!self.metrics.is_empty(), "at least one metric is required".into());
        check(
            self.adagrad_epsilon > 0.0 && self.adagrad_initial_accumulator >= 0.0,
            "adagrad_epsilon must be positive and adagrad_initial_accumulator non-negative".into(),
        );
        if let Err(e) = crate::features::validate_specs(&self.features) {
            out.push(alloc::format!("{e}"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Trainable parameters: scorer layers then embedding tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<DenseLayerParams>,
    pub embeddings: Vec<EmbeddingTable>,
}

impl ModelParams {
    /// Block names in canonical order: `layer{k}.weight`, `layer{k}.bias`,
    /// then `embedding.{vocabulary}`.
    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for k in 0..self.layers.len() {
            names.push(alloc::format!("layer{k}.weight"));
            names.push(alloc::format!("layer{k}.bias"));
        }
        for t in &self.embeddings {
            names.push(alloc::format!("embedding.{}", t.vocabulary_id));
        }
        names
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(&l.bias);
        }
        for t in &self.embeddings {
            out.push(t.table.data());
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(&mut l.bias);
        }
        for t in &mut self.embeddings {
            out.push(t.table.data_mut());
        }
        out
    }

    pub fn block_lens(&self) -> Vec<usize> {
        self.blocks().iter().map(|b| b.len()).collect()
    }

    /// Overwrites every block with the values of `other` (same shapes).
    pub fn copy_from(&mut self, other: &ModelParams) -> Result<()> {
        if self.block_lens() != other.block_lens() {
            return Err(Error::Dimension {
                op: "ModelParams::copy_from",
                left: alloc::format!("{:?}", self.block_lens()),
                right: alloc::format!("{:?}", other.block_lens()),
            });
        }
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Loss and metrics sharing one `(labels, scores, weights, mask)` interface.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingHead {
    pub loss: LossFn,
    pub metrics: Vec<MetricFn>,
}

impl RankingHead {
    pub fn new(loss: LossKey, metrics: &[MetricKey]) -> Self {
        Self {
            loss: make_loss_fn(loss),
            metrics: metrics.iter().copied().map(make_metric_fn).collect(),
        }
    }

    fn flatten(batch: &Batch, scored: &[ScoredList]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<bool>) {
        let n = batch.batch_size() * batch.list_size;
        let (mut y, mut s, mut w, mut m) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for (list, sc) in batch.lists.iter().zip(scored) {
            for (item, (&score, &valid)) in list.items.iter().zip(sc.scores.iter().zip(&list.mask)) {
                y.push(item.label);
                s.push(score);
                w.push(item.weight);
                m.push(valid);
            }
        }
        (y, s, w, m)
    }

    /// Batch loss and per-slot score gradients.
    pub fn loss(&self, batch: &Batch, scored: &[ScoredList], seed: u64, step: u64) -> Result<BatchLoss> {
        let (y, s, w, m) = Self::flatten(batch, scored);
        let mut ties = stream_rng(seed, Stream::Ties, step);
        self.loss.batch_loss(batch.list_size, &y, &s, &w, &m, &mut ties)
    }

    /// Adds every list of the batch to one accumulator per metric.
    pub fn accumulate(&self, batch: &Batch, scored: &[ScoredList], accs: &mut [MetricAccumulator]) -> Result<()> {
        for (list, sc) in batch.lists.iter().zip(scored) {
            let (labels, weights) = (list.labels(), list.weights());
            for (f, acc) in self.metrics.iter().zip(accs.iter_mut()) {
                acc.push(f.evaluate_list(&labels, &sc.scores, &weights, &list.mask)?);
            }
        }
        Ok(())
    }

    pub fn accumulators(&self) -> Vec<MetricAccumulator> {
        self.metrics.iter().map(|f| MetricAccumulator::new(f.key)).collect()
    }
}

/// Metric report over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lists: usize,
    pub metrics: Vec<MetricSummary>,
}

impl EvalReport {
    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Output of [`Model::run`].
#[derive(Debug, Clone, PartialEq)]
pub enum RunOutput {
    Train { loss: f64, active_lists: usize },
    Eval(EvalReport),
    Predict(Vec<ScoredList>),
}

/// Loss and parameter gradients for one batch, in block order.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub loss: f64,
    pub active_lists: usize,
    pub grads: Vec<BlockGrad>,
}

/// Result of [`Model::train`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainOutcome {
    /// `(global step, loss)` pairs at the configured interval.
    pub loss_trace: Vec<(u64, f64)>,
    pub final_loss: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: RankingConfig,
    transform: FeatureTransform,
    head: RankingHead,
    scorer: Scorer,
    params: ModelParams,
    optimizer: AdagradState,
    global_step: u64,
}

/// Builds a freshly initialised model. Layers draw from the init stream at
/// index 0, embedding tables at index 1.
pub fn build_model(config: RankingConfig, transform: FeatureTransform) -> Result<Model> {
    check_compatible(&config, &transform)?;
    let arch = config.architecture();
    let layers = arch.init_layers(
        transform.width(FeatureScope::PerItem),
        transform.width(FeatureScope::Context),
        &mut stream_rng(config.seed, Stream::Init, 0),
    );
    let embeddings = transform.init_tables(&mut stream_rng(config.seed, Stream::Init, 1));
    let params = ModelParams { layers, embeddings };
    let optimizer = AdagradState::new(config.adagrad(), &params.block_lens());
    Model::restore(config, transform, params, optimizer, 0)
}

fn check_compatible(config: &RankingConfig, transform: &FeatureTransform) -> Result<()> {
    config.validate()?;
    config.architecture().validate(config.list_size)?;
    if transform.specs() != config.features.as_slice() {
        return Err(Error::Config(
            "feature transform specs differ from the configured features".into(),
        ));
    }
    if transform.width(FeatureScope::PerItem) == 0 {
        return Err(Error::Config("the scorer needs at least one per-item feature".into()));
    }
    Ok(())
}

impl Model {
    /// Reassembles a model from saved parts, checking every shape.
    pub fn restore(
        config: RankingConfig,
        transform: FeatureTransform,
        params: ModelParams,
        optimizer: AdagradState,
        global_step: u64,
    ) -> Result<Self> {
        check_compatible(&config, &transform)?;
        let arch = config.architecture();
        arch.check_layers(
            &params.layers,
            transform.width(FeatureScope::PerItem),
            transform.width(FeatureScope::Context),
        )?;
        transform.check_tables(&params.embeddings)?;
        let lens = params.block_lens();
        if optimizer.accumulators.len() != lens.len()
            || optimizer.accumulators.iter().zip(&lens).any(|(a, &n)| a.len() != n)
        {
            return Err(Error::Config("optimizer state does not match parameter shapes".into()));
        }
        Ok(Self {
            head: RankingHead::new(config.loss, &config.metrics),
            scorer: Scorer::new(arch),
            config,
            transform,
            params,
            optimizer,
            global_step,
        })
    }

    pub fn config(&self) -> &RankingConfig {
        &self.config
    }

    pub fn transform(&self) -> &FeatureTransform {
        &self.transform
    }

    pub fn head(&self) -> &RankingHead {
        &self.head
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn optimizer(&self) -> &AdagradState {
        &self.optimizer
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    fn layout(&self, batch: &Batch, mask: &[bool]) -> Result<GroupLayout> {
        let qids: Vec<&str> = batch.lists.iter().map(|l| l.query_id.as_str()).collect();
        let shuffle = self
            .config
            .shuffle_groups
            .then_some((self.config.seed, qids.as_slice()));
        GroupLayout::build(mask, batch.list_size, self.config.group_size, shuffle)
    }

    fn score(&mut self, batch: &Batch, mode: Mode, step: u64) -> Result<Vec<ScoredList>> {
        let enc = self.transform.encode(batch, &self.params.embeddings)?;
        let layout = self.layout(batch, &enc.mask)?;
        let mut rng = stream_rng(self.config.seed, Stream::Dropout, step);
        self.scorer.forward(&self.params.layers, &enc, &layout, mode, &mut rng)
    }

    /// Loss and gradients of the current parameters on `batch`, with dropout
    /// and tie-breaking drawn for global step `step`. Parameters are not
    /// touched.
    pub fn compute_gradients(&mut self, batch: &Batch, step: u64) -> Result<StepGradients> {
        let scored = self.score(batch, Mode::Train, step)?;
        let loss = self.head.loss(batch, &scored, self.config.seed, step)?;
        let g = self.scorer.backward(&self.params.layers, &loss.grad_scores)?;
        let emb = self.transform.backward(batch, &g.context, &g.per_item)?;
        let mut grads = Vec::with_capacity(2 * g.layers.len() + emb.len());
        for (w, b) in g.layers {
            grads.push(BlockGrad::Dense(w.into_vec()));
            grads.push(BlockGrad::Dense(b));
        }
        for (rows, t) in emb.into_iter().zip(&self.params.embeddings) {
            grads.push(BlockGrad::Rows { width: t.dim(), rows });
        }
        Ok(StepGradients {
            loss: loss.value,
            active_lists: loss.active_lists,
            grads,
        })
    }

    /// Applies `grads` with Adagrad; nothing changes if any gradient is
    /// non-finite.
    pub fn apply_gradients(&mut self, grads: &[BlockGrad]) -> Result<()> {
        let names = self.params.block_names();
        let mut blocks: Vec<(&str, &mut [f64])> =
            names.iter().map(String::as_str).zip(self.params.blocks_mut()).collect();
        self.optimizer.update(&mut blocks, grads)
    }

    /// One optimizer step on `batch`; `batch_id` is reported if the loss is
    /// not finite.
    pub fn train_step(&mut self, batch: &Batch, batch_id: u64) -> Result<f64> {
        let step = self.global_step;
        let out = self.compute_gradients(batch, step)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, batch: batch_id });
        }
        self.apply_gradients(&out.grads)?;
        self.global_step += 1;
        Ok(out.loss)
    }

    pub fn run(&mut self, mode: Mode, batch: &Batch) -> Result<RunOutput> {
        match mode {
            Mode::Train => {
                let step = self.global_step;
                let out = self.compute_gradients(batch, step)?;
                if !out.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step, batch: step });
                }
                self.apply_gradients(&out.grads)?;
                self.global_step += 1;
                Ok(RunOutput::Train {
                    loss: out.loss,
                    active_lists: out.active_lists,
                })
            }
            Mode::Eval => Ok(RunOutput::Eval(self.evaluate(core::iter::once(batch.clone()))?)),
            Mode::Predict => Ok(RunOutput::Predict(self.predict(batch)?)),
        }
    }

    /// Runs exactly `num_steps` optimizer steps. The iterator is first moved to
    /// the model's global step, so resuming from a checkpoint replays the same
    /// batch sequence as an uninterrupted run.
    pub fn train(&mut self, iter: &mut BatchIterator, num_steps: u64) -> Result<TrainOutcome> {
        if num_steps == 0 {
            return Err(Error::Config("num_steps must be at least 1".into()));
        }
        iter.seek(self.global_step);
        let mut outcome = TrainOutcome::default();
        for _ in 0..num_steps {
            let batch_id = iter.cursor();
            let batch = iter
                .next()
                .ok_or_else(|| Error::Domain("training set is empty".into()))?;
            let loss = self.train_step(&batch, batch_id)?;
            if self.global_step.is_multiple_of(self.config.log_interval) {
                outcome.loss_trace.push((self.global_step, loss));
            }
            outcome.final_loss = loss;
        }
        Ok(outcome)
    }

    /// Weighted and unweighted metrics over every list yielded by `batches`.
    pub fn evaluate<I: IntoIterator<Item = Batch>>(&mut self, batches: I) -> Result<EvalReport> {
        let mut accs = self.head.accumulators();
        let mut lists = 0;
        for batch in batches {
            let scored = self.score(&batch, Mode::Eval, 0)?;
            self.head.accumulate(&batch, &scored, &mut accs)?;
            lists += batch.batch_size();
        }
        if lists == 0 {
            return Err(Error::Domain("evaluation set is empty".into()));
        }
        let metrics = accs.iter().map(MetricAccumulator::finish).collect::<Result<Vec<_>>>()?;
        Ok(EvalReport { lists, metrics })
    }

    /// Scores every valid slot; labels and weights are never read. Lists may
    /// have any size at least `group_size`.
    pub fn predict(&mut self, batch: &Batch) -> Result<Vec<ScoredList>> {
        self.score(batch, Mode::Predict, 0)
    }

    /// Metric map for one batch, keyed by metric name.
    pub fn metric_map(&mut self, batch: &Batch) -> Result<BTreeMap<String, f64>> {
        let report = self.evaluate(core::iter::once(batch.clone()))?;
        Ok(report.metrics.into_iter().map(|m| (m.name, m.unweighted)).collect())
    }
}
