#![allow(dead_code)]

use ltr::cli::eval_batches;
use ltr::formats::{build_vocabularies, pad_lists};
use ltr::synth::SyntheticSpec;
use ltr_core::model::EvalReport;
use ltr_core::{build_model, BatchIterator, ExampleList, FeatureTransform, Model, RankingConfig};

/// Untrained model whose features match `spec`'s data.
pub fn model_for(spec: &SyntheticSpec, train: &[ExampleList], mut cfg: RankingConfig, with_tokens: bool) -> Model {
    cfg.features = spec.feature_specs(20, with_tokens);
    let vocabs = build_vocabularies(train, &cfg.features, 1, 1).unwrap();
    let t = FeatureTransform::new(cfg.features.clone(), vocabs).unwrap();
    build_model(cfg, t).unwrap()
}

pub fn padded(model: &Model, lists: Vec<ExampleList>) -> Vec<ExampleList> {
    let c = model.config();
    pad_lists(lists, c.list_size, c.seed, c.truncate_policy).unwrap()
}

/// Sequential training for the configured number of steps.
pub fn train(model: &mut Model, lists: Vec<ExampleList>) {
    let lists = padded(model, lists);
    let c = model.config().clone();
    let mut iter = BatchIterator::new(lists, c.batch_size, true, c.seed).unwrap();
    model.train(&mut iter, c.num_steps).unwrap();
}

pub fn evaluate(model: &mut Model, lists: &[ExampleList]) -> EvalReport {
    let batches = eval_batches(model, lists.to_vec()).unwrap();
    model.evaluate(batches).unwrap()
}

pub fn unweighted(report: &EvalReport, name: &str) -> f64 {
    report
        .get(name)
        .unwrap_or_else(|| panic!("no metric {name}"))
        .unweighted
}

pub fn weighted(report: &EvalReport, name: &str) -> f64 {
    report.get(name).unwrap_or_else(|| panic!("no metric {name}")).weighted
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
