//! Analytic gradients against central finite differences, for every loss and
//! for the full scoring pipeline (context, dense and embedded features).

mod support;

use ltr_core::LossKey;
use support::grad::{loss_suite, pipeline_suite, GradStats};

fn report(label: &str, s: &GradStats) {
    println!(
        "{label}: {} instances, {} coordinates, {} kink crossings, worst relative error {:.2e}",
        s.instances, s.checked, s.skipped, s.worst
    );
    assert!(s.ok(), "{label}: {:?}", s.failures);
}

#[test]
fn every_loss_matches_central_differences() {
    for key in LossKey::ALL {
        report(key.as_str(), &loss_suite(key, 150, 7, 1e-5));
    }
}

#[test]
fn univariate_pipeline_matches_central_differences() {
    report("group_size 1", &pipeline_suite(1, 100, 101, 1e-4));
}

#[test]
fn groupwise_pipeline_matches_central_differences() {
    report("group_size 2", &pipeline_suite(2, 100, 102, 1e-4));
}
