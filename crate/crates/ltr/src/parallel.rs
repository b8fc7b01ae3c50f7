//! In-process asynchronous data-parallel training.
//!
//! Workers own disjoint shards, snapshot the shared parameters, compute a
//! gradient on their next local batch and apply it with Adagrad directly to
//! the shared store. Each parameter block sits behind its own lock, so an
//! update is atomic per block while different blocks may interleave.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ltr_core::adagrad::apply_block;
use ltr_core::model::ModelParams;
use ltr_core::{AdagradConfig, AdagradState, BatchIterator, BlockGrad, Error as CoreError, ExampleList, Model};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{LtrError, Result};

/// Round-robin partition: list `i` goes to worker `i % worker_count`.
pub fn shard_data(lists: Vec<ExampleList>, worker_count: usize) -> Result<Vec<Vec<ExampleList>>> {
    if worker_count == 0 {
        return Err(CoreError::Config("worker_count must be at least 1".into()).into());
    }
    let mut shards = vec![Vec::new(); worker_count];
    for (i, l) in lists.into_iter().enumerate() {
        shards[i % worker_count].push(l);
    }
    Ok(shards)
}

struct Block {
    param: Vec<f64>,
    acc: Vec<f64>,
}

/// Shared parameters and Adagrad accumulators, one lock per block.
pub struct ParameterStore {
    names: Vec<String>,
    blocks: Vec<Mutex<Block>>,
    config: AdagradConfig,
    version: AtomicU64,
}

impl ParameterStore {
    pub fn new(params: &ModelParams, optimizer: &AdagradState) -> Self {
        let blocks = params
            .blocks()
            .into_iter()
            .zip(&optimizer.accumulators)
            .map(|(p, a)| {
                Mutex::new(Block {
                    param: p.to_vec(),
                    acc: a.clone(),
                })
            })
            .collect();
        Self {
            names: params.block_names(),
            blocks,
            config: optimizer.config,
            version: AtomicU64::new(0),
        }
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }

    /// Copies every block into `params` and returns the version read before
    /// copying. Blocks are individually consistent.
    pub fn snapshot_into(&self, params: &mut ModelParams) -> u64 {
        let v = self.version();
        for (dst, block) in params.blocks_mut().into_iter().zip(&self.blocks) {
            dst.copy_from_slice(&block.lock().expect("store lock poisoned").param);
        }
        v
    }

    /// Applies one Adagrad update block by block and returns the new
    /// version. Nothing is applied if any gradient is non-finite.
    pub fn apply(&self, grads: &[BlockGrad]) -> Result<u64> {
        if grads.len() != self.blocks.len() {
            return Err(CoreError::Dimension {
                op: "ParameterStore::apply",
                left: format!("{} blocks", self.blocks.len()),
                right: format!("{} gradients", grads.len()),
            }
            .into());
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(CoreError::NonFiniteGradient {
                block: self.names[i].clone(),
            }
            .into());
        }
        for ((name, block), grad) in self.names.iter().zip(&self.blocks).zip(grads) {
            let mut b = block.lock().expect("store lock poisoned");
            let Block { param, acc } = &mut *b;
            apply_block(&self.config, name, param, acc, grad)?;
        }
        Ok(self.version.fetch_add(1, Ordering::AcqRel) + 1)
    }

    /// Current parameters and optimizer state.
    pub fn export(&self, template: &ModelParams) -> (ModelParams, AdagradState) {
        let mut params = template.clone();
        self.snapshot_into(&mut params);
        let accumulators = self
            .blocks
            .iter()
            .map(|b| b.lock().expect("store lock poisoned").acc.clone())
            .collect();
        (
            params,
            AdagradState {
                config: self.config,
                accumulators,
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub id: usize,
    /// Steps claimed from the global budget.
    pub steps: u64,
    pub applied: u64,
    /// Updates discarded for non-finite loss or gradient.
    pub dropped: u64,
    pub wall_time_secs: f64,
    /// Mean of (store version at apply - version at snapshot) over applied updates.
    pub mean_staleness: f64,
    pub max_staleness: u64,
    pub shard_lists: usize,
}

pub struct AsyncOutcome {
    pub model: Model,
    pub reports: Vec<WorkerReport>,
    /// Store version after training; equals the number of applied updates.
    pub version: u64,
    pub elapsed_secs: f64,
    /// `(global step, loss)` for steps landing on the log interval.
    pub loss_trace: Vec<(u64, f64)>,
}

impl AsyncOutcome {
    pub fn total_steps(&self) -> u64 {
        self.reports.iter().map(|r| r.steps).sum()
    }
    pub fn dropped(&self) -> u64 {
        self.reports.iter().map(|r| r.dropped).sum()
    }
}

/// A worker's report and its logged `(step, loss)` pairs.
type WorkerOutput = (WorkerReport, Vec<(u64, f64)>);

#[allow(clippy::too_many_arguments)]
fn run_worker(
    id: usize,
    template: &Model,
    shard: &[ExampleList],
    workers: usize,
    store: &ParameterStore,
    next_step: &AtomicU64,
    end: u64,
    opts: AsyncOptions,
) -> Result<WorkerOutput> {
    let started = Instant::now();
    let mut report = WorkerReport {
        id,
        steps: 0,
        applied: 0,
        dropped: 0,
        wall_time_secs: 0.0,
        mean_staleness: 0.0,
        max_staleness: 0,
        shard_lists: shard.len(),
    };
    let mut losses = Vec::new();
    if shard.is_empty() {
        return Ok((report, losses));
    }
    let cfg = template.config();
    let mut model = template.clone();
    let mut iter = BatchIterator::with_stream(shard.to_vec(), cfg.batch_size, true, cfg.seed, id as u64)?;
    iter.seek(template.global_step() / workers as u64);
    let mut staleness = 0u64;
    loop {
        let step = next_step.fetch_add(1, Ordering::AcqRel);
        if step >= end {
            break;
        }
        report.steps += 1;
        let seen = store.snapshot_into(model.params_mut());
        let batch = iter.next().expect("non-empty shard yields batches");
        let grads = model.compute_gradients(&batch, step)?;
        for _ in 0..opts.compute_load {
            std::hint::black_box(model.compute_gradients(&batch, step)?);
        }
        if !grads.loss.is_finite() {
            report.dropped += 1;
            continue;
        }
        match store.apply(&grads.grads) {
            Ok(v) => {
                staleness += v - 1 - seen;
                report.max_staleness = report.max_staleness.max(v - 1 - seen);
                report.applied += 1;
                if (step + 1).is_multiple_of(cfg.log_interval) {
                    losses.push((step + 1, grads.loss));
                }
            }
            Err(LtrError::Core(CoreError::NonFiniteGradient { .. })) => report.dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if report.applied > 0 {
        report.mean_staleness = staleness as f64 / report.applied as f64;
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((report, losses))
}

/// Knobs for throughput experiments.
#[derive(Debug, Clone, Copy, Default)]
pub struct AsyncOptions {
    /// Extra forward/backward passes per step whose results are discarded.
    /// Makes a step compute-bound without changing what is learned.
    pub compute_load: u32,
}

/// Trains `model` for `total_steps` further steps with one worker thread per
/// shard. Workers share one step budget, so the steps they claim sum to
/// `total_steps`; each step's dropout and tie-breaking follow the global
/// step index it claimed. With a single shard this reproduces
/// [`Model::train`] exactly.
pub fn train_async(model: Model, shards: &[Vec<ExampleList>], total_steps: u64) -> Result<AsyncOutcome> {
    train_async_with(model, shards, total_steps, AsyncOptions::default())
}

/// [`train_async`] with explicit [`AsyncOptions`].
pub fn train_async_with(
    model: Model,
    shards: &[Vec<ExampleList>],
    total_steps: u64,
    opts: AsyncOptions,
) -> Result<AsyncOutcome> {
    if total_steps == 0 {
        return Err(CoreError::Config("num_steps must be at least 1".into()).into());
    }
    if shards.iter().all(Vec::is_empty) {
        return Err(CoreError::Domain("training set is empty".into()).into());
    }
    let store = ParameterStore::new(model.params(), model.optimizer());
    let start = model.global_step();
    let end = start + total_steps;
    let next_step = AtomicU64::new(start);
    let started = Instant::now();
    let results: Vec<Result<WorkerOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = shards
            .iter()
            .enumerate()
            .map(|(id, shard)| {
                let (store, next_step, model) = (&store, &next_step, &model);
                s.spawn(move || run_worker(id, model, shard, shards.len(), store, next_step, end, opts))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let elapsed_secs = started.elapsed().as_secs_f64();
    let mut reports = Vec::new();
    let mut loss_trace = Vec::new();
    for r in results {
        let (report, losses) = r?;
        reports.push(report);
        loss_trace.extend(losses);
    }
    loss_trace.sort_by_key(|&(step, _)| step);
    let (params, optimizer) = store.export(model.params());
    let version = store.version();
    let model = Model::restore(
        model.config().clone(),
        model.transform().clone(),
        params,
        optimizer,
        end,
    )?;
    Ok(AsyncOutcome {
        model,
        reports,
        version,
        elapsed_secs,
        loss_trace,
    })
}

/// One timed training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeasurement {
    pub workers: usize,
    pub steps: u64,
    pub elapsed_secs: f64,
    pub final_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRow {
    pub workers: usize,
    pub runs: usize,
    /// Steps per second normalized by the mean single-worker rate.
    pub steps_per_sec_mean: f64,
    /// Half-width of the 95% Student-t interval of the normalized rate.
    pub steps_per_sec_ci95: f64,
    pub final_metric: f64,
}

fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    (mean, t * (var / n).sqrt())
}

/// Groups runs by worker count (ascending) and normalizes throughput by the
/// mean rate of the single-worker runs, or of the smallest worker count if
/// there are none.
pub fn throughput_report(runs: &[RunMeasurement]) -> Result<Vec<ThroughputRow>> {
    if runs.is_empty() {
        return Err(LtrError::Measurement("no runs to report".into()));
    }
    if let Some(r) = runs.iter().find(|r| !(r.elapsed_secs > 0.0)) {
        return Err(LtrError::Measurement(format!(
            "run with {} workers has non-positive elapsed time {}",
            r.workers, r.elapsed_secs
        )));
    }
    let mut counts: Vec<usize> = runs.iter().map(|r| r.workers).collect();
    counts.sort_unstable();
    counts.dedup();
    let rate = |r: &RunMeasurement| r.steps as f64 / r.elapsed_secs;
    let base_rates: Vec<f64> = runs.iter().filter(|r| r.workers == counts[0]).map(rate).collect();
    let base = base_rates.iter().sum::<f64>() / base_rates.len() as f64;
    Ok(counts
        .into_iter()
        .map(|w| {
            let group: Vec<&RunMeasurement> = runs.iter().filter(|r| r.workers == w).collect();
            let normalized: Vec<f64> = group.iter().map(|r| rate(r) / base).collect();
            let (mean, ci) = mean_ci95(&normalized);
            let metric = group.iter().map(|r| r.final_metric).sum::<f64>() / group.len() as f64;
            ThroughputRow {
                workers: w,
                runs: group.len(),
                steps_per_sec_mean: mean,
                steps_per_sec_ci95: ci,
                final_metric: metric,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ltr_core::FeatureMap;

    fn lists(n: usize) -> Vec<ExampleList> {
        (0..n)
            .map(|i| ExampleList::new(i.to_string(), FeatureMap::default(), vec![]))
            .collect()
    }

    #[test]
    fn shards_are_round_robin() {
        let sizes: Vec<usize> = shard_data(lists(5), 2).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2]);
        assert_eq!(shard_data(lists(5), 1).unwrap()[0], lists(5));
        let shards = shard_data(lists(6), 3).unwrap();
        let mut ids: Vec<String> = shards.iter().flatten().map(|l| l.query_id.clone()).collect();
        ids.sort();
        let mut want: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        want.sort();
        assert_eq!(ids, want);
        assert!(shard_data(lists(2), 0).is_err());
        assert_eq!(shard_data(lists(2), 3).unwrap()[2].len(), 0);
    }

    fn run(workers: usize, steps: u64, secs: f64) -> RunMeasurement {
        RunMeasurement {
            workers,
            steps,
            elapsed_secs: secs,
            final_metric: 0.5,
        }
    }

    #[test]
    fn single_baseline_run_normalizes_to_one() {
        let rows = throughput_report(&[run(1, 100, 2.0)]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].steps_per_sec_mean, 1.0);
        assert_eq!(rows[0].steps_per_sec_ci95, 0.0);
    }

    #[test]
    fn ci_uses_student_t() {
        let runs = [run(1, 100, 1.0), run(1, 100, 1.0), run(2, 100, 0.5), run(2, 100, 0.25)];
        let rows = throughput_report(&runs).unwrap();
        // Normalized 2-worker rates: 2 and 4; t(0.975, 1) = 12.7062.
        assert!((rows[1].steps_per_sec_mean - 3.0).abs() < 1e-12);
        let want = 12.706204736 * (2.0f64 / 2.0).sqrt();
        assert!(
            (rows[1].steps_per_sec_ci95 - want).abs() < 1e-6,
            "{}",
            rows[1].steps_per_sec_ci95
        );
    }

    #[test]
    fn zero_elapsed_is_a_measurement_error() {
        assert!(matches!(
            throughput_report(&[run(1, 10, 0.0)]),
            Err(LtrError::Measurement(_))
        ));
    }
}
