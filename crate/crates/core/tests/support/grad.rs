//! Central finite differences for the losses and the full scoring pipeline.

use std::collections::BTreeMap;

use ltr_core::adagrad::BlockGrad;
use ltr_core::data::PAD_LABEL;
use ltr_core::features::build_vocab;
use ltr_core::{
    build_model, make_loss_fn, Batch, ExampleList, FeatureMap, FeatureScope, FeatureSpec, FeatureTransform, Item,
    LossKey, Model, RankingConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

#[derive(Debug, Default, Clone)]
pub struct GradStats {
    pub instances: usize,
    pub checked: usize,
    /// Coordinates whose perturbation straddles a ReLU kink.
    pub skipped: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl GradStats {
    fn record(&mut self, e: f64, tol: f64, what: impl FnOnce() -> String) {
        self.checked += 1;
        self.worst = self.worst.max(e);
        if !(e < tol) && self.failures.len() < 5 {
            self.failures.push(what());
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.skipped * 100 < self.checked.max(1)
    }
}

struct ListCase {
    labels: Vec<f64>,
    scores: Vec<f64>,
    weights: Vec<f64>,
    mask: Vec<bool>,
}

fn random_list(rng: &mut ChaCha8Rng, binary: bool) -> ListCase {
    let n = rng.random_range(1..=5);
    let pad = rng.random_range(0..=2);
    let mut c = ListCase {
        labels: Vec::new(),
        scores: Vec::new(),
        weights: Vec::new(),
        mask: Vec::new(),
    };
    for i in 0..n + pad {
        let valid = i < n;
        c.mask.push(valid);
        c.scores.push(rng.random_range(-3.0..3.0));
        if valid {
            let y = if binary {
                rng.random_range(0..2)
            } else {
                rng.random_range(0..4)
            };
            c.labels.push(y as f64);
            c.weights.push(rng.random_range(0.5..2.0));
        } else {
            c.labels.push(PAD_LABEL);
            c.weights.push(1.0);
        }
    }
    c
}

/// `instances` random lists of at most 5 valid items (plus padding); every
/// valid slot's gradient is compared at relative tolerance `tol`.
pub fn loss_suite(key: LossKey, instances: u64, seed: u64, tol: f64) -> GradStats {
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = make_loss_fn(key);
    let mut stats = GradStats::default();
    for inst in 0..instances {
        let c = random_list(&mut rng, key == LossKey::SigmoidCrossEntropy);
        let eval = |s: &[f64]| {
            let mut tie = ChaCha8Rng::seed_from_u64(inst);
            f.list_loss(&c.labels, s, &c.weights, &c.mask, &mut tie).unwrap()
        };
        let out = eval(&c.scores);
        for j in 0..c.scores.len() {
            let mut s = c.scores.clone();
            s[j] += h;
            let up = eval(&s).value;
            s[j] -= 2.0 * h;
            let down = eval(&s).value;
            let fd = (up - down) / (2.0 * h);
            let a = out.grad_scores[j];
            if !c.mask[j] {
                if a != 0.0 || fd != 0.0 {
                    stats
                        .failures
                        .push(format!("{key} instance {inst}: padded slot {j} has gradient"));
                }
                continue;
            }
            stats.record(rel_err(a, fd, 1e-6), tol, || {
                format!("{key} instance {inst} slot {j}: analytic {a} vs numeric {fd}")
            });
        }
        stats.instances += 1;
    }
    stats
}

fn dense(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

const TOKENS: [&str; 4] = ["a", "b", "c", "d"];
const LIST_SIZE: usize = 4;

fn random_batch(rng: &mut ChaCha8Rng, binary: bool) -> Batch {
    let lists = (0..2)
        .map(|q| {
            let mut ctx = FeatureMap::default();
            ctx.dense.insert("c".into(), dense(rng, 2));
            let n = rng.random_range(2..=LIST_SIZE);
            let mut items: Vec<Item> = (0..n)
                .map(|_| {
                    let mut f = FeatureMap::default();
                    f.dense.insert("x".into(), dense(rng, 3));
                    // "zz" is out of vocabulary and lands in the OOV bucket.
                    let toks = (0..rng.random_range(0..=2))
                        .map(|_| {
                            if rng.random_bool(0.2) {
                                "zz".into()
                            } else {
                                TOKENS[rng.random_range(0..4)].into()
                            }
                        })
                        .collect();
                    f.categorical.insert("tok".into(), toks);
                    let y = if binary {
                        rng.random_range(0..2)
                    } else {
                        rng.random_range(0..4)
                    };
                    let mut it = Item::new(f, y as f64);
                    it.weight = rng.random_range(0.5..2.0);
                    it
                })
                .collect();
            items.resize(LIST_SIZE, Item::padding());
            let mut l = ExampleList::new(format!("q{q}"), ctx, items);
            for m in l.mask.iter_mut().skip(n) {
                *m = false;
            }
            l
        })
        .collect();
    Batch::new(lists).unwrap()
}

fn pipeline_model(seed: u64, group_size: usize, loss: LossKey) -> Model {
    let features = vec![
        FeatureSpec::dense("c", FeatureScope::Context, 2),
        FeatureSpec::dense("x", FeatureScope::PerItem, 3),
        FeatureSpec::categorical("tok", FeatureScope::PerItem, "tok", 2),
    ];
    let cfg = RankingConfig {
        list_size: LIST_SIZE,
        group_size,
        hidden_dims: vec![5, 3],
        dropout_rate: 0.3,
        loss,
        seed,
        features: features.clone(),
        ..RankingConfig::default()
    };
    let vocab = build_vocab("tok", TOKENS.iter().copied(), 1, 1).unwrap();
    let t = FeatureTransform::new(features, BTreeMap::from([("tok".to_string(), vocab)])).unwrap();
    build_model(cfg, t).unwrap()
}

fn check_model(model: &mut Model, batch: &Batch, step: u64, tol: f64, stats: &mut GradStats) {
    let h = 1e-6;
    let lens = model.params().block_lens();
    let names = model.params().block_names();
    let g = model.compute_gradients(batch, step).unwrap();
    let base = g.loss;
    let analytic: Vec<Vec<f64>> = g
        .grads
        .iter()
        .zip(&lens)
        .map(|(g, &n)| BlockGrad::to_dense(g, n))
        .collect();
    for (b, (&len, analytic)) in lens.iter().zip(&analytic).enumerate() {
        for (k, &a) in analytic.iter().enumerate().take(len) {
            let orig = model.params().blocks()[b][k];
            let mut at = |v: f64| {
                model.params_mut().blocks_mut()[b][k] = v;
                model.compute_gradients(batch, step).unwrap().loss
            };
            let up = at(orig + h);
            let down = at(orig - h);
            model.params_mut().blocks_mut()[b][k] = orig;
            let fd = (up - down) / (2.0 * h);
            // A kink inside [orig-h, orig+h] shows up as one-sided slopes
            // that disagree; the central difference means nothing there.
            if rel_err((up - base) / h, (base - down) / h, 1e-4) > 1e-2 {
                stats.skipped += 1;
                continue;
            }
            // Central-difference roundoff is about |loss| * eps / h ~ 1e-9,
            // so near-zero coordinates are compared absolutely at tol * 1e-4.
            stats.record(rel_err(a, fd, 1e-4), tol, || {
                format!("{} coord {k}: analytic {a} vs numeric {fd}", names[b])
            });
        }
    }
}

/// Every parameter coordinate of a small network with context, dense and
/// embedded features, cycling through the four losses. Parameters are moved
/// off their initialization first: zero biases put pre-activations exactly on
/// a ReLU kink.
pub fn pipeline_suite(group_size: usize, instances: u64, seed: u64, tol: f64) -> GradStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = GradStats::default();
    for inst in 0..instances {
        let loss = LossKey::ALL[inst as usize % LossKey::ALL.len()];
        let mut model = pipeline_model(inst, group_size, loss);
        for block in model.params_mut().blocks_mut() {
            for v in block.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let batch = random_batch(&mut rng, loss == LossKey::SigmoidCrossEntropy);
        check_model(&mut model, &batch, inst, tol, &mut stats);
        stats.instances += 1;
    }
    stats
}
