mod common;

use common::{model_for, padded};
use ltr::parallel::{shard_data, throughput_report, train_async, train_async_with, AsyncOptions, RunMeasurement};
use ltr::synth::{generate, SyntheticSpec};
use ltr_core::{BatchIterator, ExampleList, FeatureMap, Model, RankingConfig};
use proptest::prelude::*;

fn setup(queries: usize) -> (Model, Vec<ExampleList>) {
    let spec = SyntheticSpec {
        queries,
        dim: 4,
        eval_fraction: 0.0,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).unwrap();
    let cfg = RankingConfig {
        hidden_dims: vec![8],
        batch_size: 4,
        ..RankingConfig::default()
    };
    let model = model_for(&spec, &data.train, cfg, false);
    let lists = padded(&model, data.train);
    (model, lists)
}

#[test]
fn workers_share_one_step_budget() {
    let (model, lists) = setup(40);
    let out = train_async(model, &shard_data(lists, 3).unwrap(), 50).unwrap();
    assert_eq!(out.total_steps(), 50);
    assert_eq!(out.reports.iter().map(|r| r.steps).sum::<u64>(), 50);
    let applied: u64 = out.reports.iter().map(|r| r.applied).sum();
    assert_eq!(out.version, applied);
    assert_eq!(applied + out.dropped(), 50);
    assert_eq!(out.model.global_step(), 50);
    for r in &out.reports {
        assert!(r.mean_staleness >= 0.0 && r.mean_staleness <= r.max_staleness as f64);
        assert!(r.wall_time_secs >= 0.0);
    }
    let steps: Vec<u64> = out.loss_trace.iter().map(|&(s, _)| s).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn single_worker_matches_sequential_training() {
    let (model, lists) = setup(20);
    let mut seq = model.clone();
    let mut iter = BatchIterator::new(lists.clone(), 4, true, seq.config().seed).unwrap();
    seq.train(&mut iter, 12).unwrap();
    let out = train_async(model, &[lists], 12).unwrap();
    assert_eq!(out.model.params(), seq.params());
    assert_eq!(out.model.optimizer(), seq.optimizer());
    assert_eq!(out.reports[0].max_staleness, 0);
}

#[test]
fn resumed_async_run_continues_the_step_count() {
    let (model, lists) = setup(20);
    let shards = shard_data(lists, 2).unwrap();
    let first = train_async(model, &shards, 7).unwrap();
    let second = train_async(first.model, &shards, 5).unwrap();
    assert_eq!(second.model.global_step(), 12);
    assert!(second.loss_trace.iter().all(|&(s, _)| s > 7));
}

#[test]
fn compute_load_does_not_change_the_result() {
    let (model, lists) = setup(20);
    let a = train_async(model.clone(), std::slice::from_ref(&lists), 6).unwrap();
    let b = train_async_with(model, &[lists], 6, AsyncOptions { compute_load: 2 }).unwrap();
    assert_eq!(a.model.params(), b.model.params());
}

#[test]
fn more_workers_than_lists_leaves_idle_shards() {
    let (model, lists) = setup(3);
    let shards = shard_data(lists, 5).unwrap();
    assert_eq!(shards.iter().filter(|s| s.is_empty()).count(), 2);
    let out = train_async(model, &shards, 10).unwrap();
    assert_eq!(out.total_steps(), 10);
    for r in out.reports.iter().filter(|r| r.shard_lists == 0) {
        assert_eq!(r.steps, 0);
    }
}

#[test]
fn bad_arguments_are_rejected() {
    let (model, lists) = setup(4);
    assert!(shard_data(lists.clone(), 0).is_err());
    assert!(train_async(model.clone(), &[lists], 0).is_err());
    assert!(train_async(model, &[Vec::new(), Vec::new()], 5).is_err());
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
fn throughput_is_normalized_by_single_worker_rate() {
    let rows = throughput_report(&[run(1, 100, 1.0), run(1, 100, 1.0), run(2, 100, 0.5), run(2, 100, 0.25)]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].workers, rows[0].runs), (1, 2));
    assert_eq!((rows[0].steps_per_sec_mean, rows[0].steps_per_sec_ci95), (1.0, 0.0));
    assert_eq!(rows[1].steps_per_sec_mean, 3.0);
    // t(0.975, 1) * sd / sqrt(2) with sd = sqrt(2): 12.706...
    assert!((rows[1].steps_per_sec_ci95 - 12.706204736).abs() < 1e-6);
    assert!(throughput_report(&[]).is_err());
    assert!(throughput_report(&[run(1, 10, 0.0)]).is_err());
}

proptest! {
    #[test]
    fn shards_partition_the_lists(n in 1usize..40, workers in 1usize..8) {
        let lists: Vec<ExampleList> =
            (0..n).map(|i| ExampleList::new(format!("q{i}"), FeatureMap::default(), Vec::new())).collect();
        let shards = shard_data(lists.clone(), workers).unwrap();
        prop_assert_eq!(shards.len(), workers);
        let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut ids: Vec<String> = shards.concat().into_iter().map(|l| l.query_id).collect();
        ids.sort();
        let mut want: Vec<String> = lists.into_iter().map(|l| l.query_id).collect();
        want.sort();
        prop_assert_eq!(ids, want);
    }
}
