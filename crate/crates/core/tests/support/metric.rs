//! Brute-force metric evaluation over an explicitly materialized permutation.

use ltr_core::data::PAD_LABEL;
use ltr_core::metrics::{list_weight, MetricAccumulator};
use ltr_core::{make_metric_fn, MetricKey, MetricKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Valid slot indices in ranked order, built by repeated selection of the
/// highest remaining score (lowest index among equals).
pub fn permutation(scores: &[f64], mask: &[bool]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).filter(|&i| mask[i]).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if scores[left[k]] > scores[left[best]] {
                best = k;
            }
        }
        out.push(left.remove(best));
    }
    out
}

fn cut(n: usize, topn: Option<usize>) -> usize {
    topn.map_or(n, |k| k.min(n))
}

fn rr(labels: &[f64], pi: &[usize], topn: Option<usize>) -> f64 {
    for r in 0..cut(pi.len(), topn) {
        if labels[pi[r]] > 0.0 {
            return 1.0 / (r + 1) as f64;
        }
    }
    0.0
}

fn arp(labels: &[f64], pi: &[usize], topn: Option<usize>) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..cut(pi.len(), topn) {
        num += labels[pi[r]] * (r + 1) as f64;
        den += labels[pi[r]];
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

fn dcg(labels: &[f64], pi: &[usize], topn: Option<usize>) -> f64 {
    let mut s = 0.0;
    for r in 0..cut(pi.len(), topn) {
        s += (2f64.powf(labels[pi[r]]) - 1.0) / ((r + 2) as f64).ln() * std::f64::consts::LN_2;
    }
    s
}

fn all_permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in all_permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Ideal DCG as the maximum over every ordering of the valid items.
fn ndcg(labels: &[f64], pi: &[usize], topn: Option<usize>) -> f64 {
    let ideal = all_permutations(pi)
        .iter()
        .map(|p| dcg(labels, p, topn))
        .fold(0.0, f64::max);
    if ideal > 0.0 {
        dcg(labels, pi, topn) / ideal
    } else {
        0.0
    }
}

pub fn oracle(kind: MetricKind, labels: &[f64], pi: &[usize], topn: Option<usize>) -> Option<f64> {
    match kind {
        MetricKind::Mrr => Some(rr(labels, pi, topn)),
        MetricKind::Arp => arp(labels, pi, topn),
        MetricKind::Dcg => Some(dcg(labels, pi, topn)),
        MetricKind::Ndcg => Some(ndcg(labels, pi, topn)),
    }
}

pub struct Draw {
    pub labels: Vec<f64>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
    pub mask: Vec<bool>,
}

/// `n` valid items plus up to two padded slots at random positions.
pub fn draw(rng: &mut ChaCha8Rng, n: usize) -> Draw {
    let pad = rng.random_range(0..=2);
    // Coarse scores on half the draws, so ties are common.
    let coarse = rng.random_bool(0.5);
    let mut d = Draw {
        labels: Vec::new(),
        scores: Vec::new(),
        weights: Vec::new(),
        mask: Vec::new(),
    };
    for i in 0..n + pad {
        let valid = i < n;
        d.mask.push(valid);
        d.scores.push(if coarse {
            rng.random_range(0..3) as f64
        } else {
            rng.random_range(-2.0..2.0)
        });
        d.labels.push(if valid {
            rng.random_range(0..5) as f64
        } else {
            PAD_LABEL
        });
        d.weights.push(if valid { rng.random_range(0.1..3.0) } else { 1.0 });
    }
    for i in (1..d.mask.len()).rev() {
        let j = rng.random_range(0..=i);
        d.labels.swap(i, j);
        d.scores.swap(i, j);
        d.weights.swap(i, j);
        d.mask.swap(i, j);
    }
    d
}

/// Label-weighted mean item weight, or the plain mean without relevance.
pub fn oracle_weight(d: &Draw) -> f64 {
    let idx: Vec<usize> = (0..d.mask.len()).filter(|&i| d.mask[i]).collect();
    let y: f64 = idx.iter().map(|&i| d.labels[i]).sum();
    if y > 0.0 {
        idx.iter().map(|&i| d.weights[i] * d.labels[i]).sum::<f64>() / y
    } else {
        idx.iter().map(|&i| d.weights[i]).sum::<f64>() / idx.len() as f64
    }
}

pub fn keys() -> Vec<MetricKey> {
    let mut out = Vec::new();
    for kind in [MetricKind::Mrr, MetricKind::Arp, MetricKind::Dcg, MetricKind::Ndcg] {
        for topn in [None, Some(1), Some(2), Some(3), Some(5)] {
            out.push(MetricKey::new(kind, topn).unwrap());
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct OracleStats {
    pub compared: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl OracleStats {
    fn check(&mut self, got: f64, want: f64, tol: f64, what: impl FnOnce() -> String) {
        self.compared += 1;
        let e = (got - want).abs();
        self.worst = self.worst.max(e);
        if !(e <= tol) && self.failures.len() < 5 {
            self.failures.push(format!("{}: {got} vs {want}", what()));
        }
    }

    fn fail(&mut self, msg: String) {
        if self.failures.len() < 5 {
            self.failures.push(msg);
        }
    }
}

/// Per-list values and list weights for every metric key, `draws` lists per
/// size in `1..=6`.
pub fn per_list_suite(draws: usize, seed: u64, tol: f64) -> OracleStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = keys();
    let mut stats = OracleStats::default();
    for n in 1..=6 {
        for _ in 0..draws {
            let d = draw(&mut rng, n);
            let pi = permutation(&d.scores, &d.mask);
            let w = oracle_weight(&d);
            for key in &keys {
                let got = make_metric_fn(*key)
                    .evaluate_list(&d.labels, &d.scores, &d.weights, &d.mask)
                    .unwrap();
                match (got.value, oracle(key.kind, &d.labels, &pi, key.topn)) {
                    (Some(g), Some(o)) => stats.check(g, o, tol, || format!("{key} n={n}")),
                    (None, None) => {}
                    other => stats.fail(format!("{key} n={n}: defined-ness differs {other:?}")),
                }
                stats.check(got.weight, w, tol, || format!("{key} n={n} list weight"));
                if list_weight(&d.labels, &d.weights, &d.mask) != got.weight {
                    stats.fail(format!("{key}: list_weight disagrees with evaluate_list"));
                }
            }
        }
    }
    stats
}

/// Weighted and unweighted means over random sets of 1..=8 lists.
pub fn aggregate_suite(sets: usize, seed: u64, tol: f64) -> OracleStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = OracleStats::default();
    for key in keys() {
        for _ in 0..sets {
            let draws: Vec<Draw> = (0..rng.random_range(1..=8))
                .map(|_| {
                    let n = rng.random_range(1..=6);
                    draw(&mut rng, n)
                })
                .collect();
            let mut acc = MetricAccumulator::new(key);
            let (mut sum, mut wsum, mut wtotal, mut count, mut skipped) = (0.0, 0.0, 0.0, 0usize, 0usize);
            for d in &draws {
                acc.push(
                    make_metric_fn(key)
                        .evaluate_list(&d.labels, &d.scores, &d.weights, &d.mask)
                        .unwrap(),
                );
                match oracle(key.kind, &d.labels, &permutation(&d.scores, &d.mask), key.topn) {
                    Some(v) => {
                        let w = oracle_weight(d);
                        sum += v;
                        wsum += w * v;
                        wtotal += w;
                        count += 1;
                    }
                    None => skipped += 1,
                }
            }
            match acc.finish() {
                Ok(s) => {
                    if (s.lists, s.skipped) != (count, skipped) {
                        stats.fail(format!(
                            "{key}: counts {:?} vs {:?}",
                            (s.lists, s.skipped),
                            (count, skipped)
                        ));
                    }
                    stats.check(s.unweighted, sum / count as f64, tol, || format!("{key} unweighted"));
                    stats.check(s.weighted, wsum / wtotal, tol, || format!("{key} weighted"));
                }
                Err(_) if count == 0 => {}
                Err(e) => stats.fail(format!("{key}: {e}")),
            }
        }
    }
    stats
}
