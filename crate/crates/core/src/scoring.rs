//! Feed-forward scoring networks.
//!
//! A scorer maps `(context, features of a group of items)` to one logit per
//! group member. With `group_size = 1` this is the plain per-item scorer.
//! Larger groups are enumerated as circular windows over the valid items of
//! each list and every item's final score is the mean of the logits it
//! received (the voting layer).

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{fnv1a64, EncodedBatch};
use crate::matrix::Matrix;
use crate::nn::{self, DenseLayerParams};
use crate::rng::{stream_rng, Stream};

/// What a forward pass is for. Only `Train` applies dropout and keeps the
/// activations needed by [`Scorer::backward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
    Predict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerArchitecture {
    pub hidden_dims: Vec<usize>,
    pub dropout_rate: f64,
    pub group_size: usize,
    /// Shuffle valid items (seeded per query id) before cutting windows.
    #[serde(default)]
    pub shuffle_groups: bool,
}

impl Default for ScorerArchitecture {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128, 128, 128],
            dropout_rate: 0.5,
            group_size: 1,
            shuffle_groups: false,
        }
    }
}

impl ScorerArchitecture {
    pub fn validate(&self, list_size: usize) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be non-empty and positive".into()));
        }
        nn::check_dropout_rate(self.dropout_rate)?;
        if self.group_size == 0 || self.group_size > list_size {
            return Err(Error::Config(alloc::format!(
                "group_size must lie in [1, list_size={list_size}], got {}",
                self.group_size
            )));
        }
        Ok(())
    }

    pub fn input_width(&self, item_width: usize, context_width: usize) -> usize {
        self.group_size * item_width + context_width
    }

    /// Glorot-initialised hidden layers followed by a linear output layer of
    /// width `group_size`.
    pub fn init_layers<R: Rng + ?Sized>(
        &self,
        item_width: usize,
        context_width: usize,
        rng: &mut R,
    ) -> Vec<DenseLayerParams> {
        let mut layers = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_width(item_width, context_width);
        for &h in &self.hidden_dims {
            layers.push(DenseLayerParams::glorot(fan_in, h, rng));
            fan_in = h;
        }
        layers.push(DenseLayerParams::glorot(fan_in, self.group_size, rng));
        layers
    }

    pub fn check_layers(&self, layers: &[DenseLayerParams], item_width: usize, context_width: usize) -> Result<()> {
        let mut dims = vec![self.input_width(item_width, context_width)];
        dims.extend(&self.hidden_dims);
        dims.push(self.group_size);
        let ok = layers.len() + 1 == dims.len()
            && layers
                .iter()
                .zip(dims.windows(2))
                .all(|(l, d)| l.in_dim() == d[0] && l.out_dim() == d[1] && l.bias.len() == d[1]);
        if !ok {
            let got: Vec<(usize, usize)> = layers.iter().map(|l| l.weight.shape()).collect();
            return Err(Error::Config(alloc::format!(
                "scorer layers {got:?} do not fit layer widths {dims:?}"
            )));
        }
        Ok(())
    }
}

/// Circular windows over the first `valid_count` positions:
/// group `g` is `(g, g+1, ..., g+group_size-1) mod valid_count`.
pub fn make_groups(list_size: usize, group_size: usize, valid_count: usize) -> Result<Vec<Vec<usize>>> {
    if group_size == 0 || group_size > list_size || valid_count > list_size {
        return Err(Error::Config(alloc::format!(
            "invalid grouping: list_size={list_size} group_size={group_size} valid={valid_count}"
        )));
    }
    Ok((0..valid_count)
        .map(|g| (0..group_size).map(|p| (g + p) % valid_count).collect())
        .collect())
}

/// Groups of one batch: `(list index, slot indices)` per scorer row.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLayout {
    pub group_size: usize,
    pub list_size: usize,
    pub batch_size: usize,
    pub groups: Vec<(usize, Vec<usize>)>,
}

impl GroupLayout {
    /// Windows over the valid slots of each list, in slot order. When
    /// `shuffle_seed` is set, each list's valid slots are permuted first with a
    /// generator keyed by the query id, so the enumeration is a function of
    /// the list and identical across train, eval and predict.
    pub fn build(
        mask: &[bool],
        list_size: usize,
        group_size: usize,
        shuffle_seed: Option<(u64, &[&str])>,
    ) -> Result<Self> {
        if list_size == 0 || !mask.len().is_multiple_of(list_size) {
            return Err(Error::Dimension {
                op: "GroupLayout::build",
                left: alloc::format!("mask of {}", mask.len()),
                right: alloc::format!("list_size {list_size}"),
            });
        }
        let batch_size = mask.len() / list_size;
        let mut groups = Vec::new();
        for b in 0..batch_size {
            let mut valid: Vec<usize> = (0..list_size).filter(|&i| mask[b * list_size + i]).collect();
            if let Some((seed, qids)) = shuffle_seed {
                let key = fnv1a64(qids[b].as_bytes());
                valid.shuffle(&mut stream_rng(seed, Stream::Groups, key));
            }
            for window in make_groups(list_size, group_size, valid.len())? {
                groups.push((b, window.into_iter().map(|p| valid[p]).collect()));
            }
        }
        Ok(Self {
            group_size,
            list_size,
            batch_size,
            groups,
        })
    }
}

/// Scores for one list; padded slots carry `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList {
    pub scores: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Per-layer parameter gradients plus gradients w.r.t. the encoded inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerGrads {
    pub layers: Vec<(Matrix, Vec<f64>)>,
    pub context: Matrix,
    pub per_item: Matrix,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    layout: GroupLayout,
    /// Input of every layer; `inputs[0]` is the assembled group matrix.
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    dropout_masks: Vec<Matrix>,
    counts: Vec<usize>,
    item_width: usize,
    context_width: usize,
}

/// Stateful scorer: a training forward pass stores the activations that the
/// next [`Scorer::backward`] consumes.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub arch: ScorerArchitecture,
    cache: Option<ForwardCache>,
}

impl Scorer {
    pub fn new(arch: ScorerArchitecture) -> Self {
        Self { arch, cache: None }
    }

    fn assemble(&self, enc: &EncodedBatch, layout: &GroupLayout) -> Matrix {
        let (iw, cw) = (enc.per_item.cols(), enc.context.cols());
        let g = layout.group_size;
        let l = enc.list_size;
        let mut x = Matrix::zeros(layout.groups.len(), g * iw + cw);
        for (r, (b, members)) in layout.groups.iter().enumerate() {
            let row = x.row_mut(r);
            for (p, &slot) in members.iter().enumerate() {
                row[p * iw..(p + 1) * iw].copy_from_slice(enc.per_item.row(b * l + slot));
            }
            row[g * iw..].copy_from_slice(enc.context.row(*b));
        }
        x
    }

    /// Runs the network over every group in `layout` and averages the logits
    /// each item receives.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        layers: &[DenseLayerParams],
        enc: &EncodedBatch,
        layout: &GroupLayout,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<ScoredList>> {
        self.cache = None;
        let (iw, cw) = (enc.per_item.cols(), enc.context.cols());
        self.arch.check_layers(layers, iw, cw)?;
        if layout.group_size != self.arch.group_size
            || layout.list_size != enc.list_size
            || layout.batch_size != enc.context.rows()
            || enc.per_item.rows() != enc.list_size * enc.context.rows()
        {
            return Err(Error::Dimension {
                op: "Scorer::forward",
                left: alloc::format!(
                    "layout {}x{} (group {})",
                    layout.batch_size,
                    layout.list_size,
                    layout.group_size
                ),
                right: alloc::format!(
                    "encoded {} lists, {} item rows (group {})",
                    enc.context.rows(),
                    enc.per_item.rows(),
                    self.arch.group_size
                ),
            });
        }
        let training = mode == Mode::Train;
        let hidden = layers.len() - 1;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre_activations = Vec::with_capacity(hidden);
        let mut dropout_masks = Vec::with_capacity(hidden);
        let mut x = self.assemble(enc, layout);
        for layer in &layers[..hidden] {
            let z = nn::dense_forward(&x, layer)?;
            let a = nn::relu(&z);
            let (d, m) = nn::dropout(&a, self.arch.dropout_rate, rng, training)?;
            if training {
                inputs.push(x);
                pre_activations.push(z);
                dropout_masks.push(m);
            }
            x = d;
        }
        let logits = nn::dense_forward(&x, &layers[hidden])?;
        if training {
            inputs.push(x);
        }

        let slots = enc.mask.len();
        let mut sums = vec![0.0; slots];
        let mut counts = vec![0usize; slots];
        for (r, (b, members)) in layout.groups.iter().enumerate() {
            for (p, &slot) in members.iter().enumerate() {
                let idx = b * enc.list_size + slot;
                sums[idx] += logits.get(r, p);
                counts[idx] += 1;
            }
        }
        let scored = (0..layout.batch_size)
            .map(|b| {
                let span = b * enc.list_size..(b + 1) * enc.list_size;
                let scores = span
                    .clone()
                    .map(|i| {
                        if enc.mask[i] && counts[i] > 0 {
                            sums[i] / counts[i] as f64
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                ScoredList {
                    scores,
                    mask: enc.mask[span].to_vec(),
                }
            })
            .collect();
        if training {
            self.cache = Some(ForwardCache {
                layout: layout.clone(),
                inputs,
                pre_activations,
                dropout_masks,
                counts,
                item_width: iw,
                context_width: cw,
            });
        }
        Ok(scored)
    }

    /// Exact gradients of the last training forward pass. `upstream` holds one
    /// entry per slot (`batch_size * list_size`); padded entries are ignored.
    pub fn backward(&mut self, layers: &[DenseLayerParams], upstream: &[f64]) -> Result<ScorerGrads> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached training forward pass".into()))?;
        let layout = &cache.layout;
        let l = layout.list_size;
        if upstream.len() != cache.counts.len() {
            return Err(Error::Dimension {
                op: "Scorer::backward",
                left: alloc::format!("{} slots", cache.counts.len()),
                right: alloc::format!("{} upstream values", upstream.len()),
            });
        }
        let mut d = Matrix::zeros(layout.groups.len(), layout.group_size);
        for (r, (b, members)) in layout.groups.iter().enumerate() {
            for (p, &slot) in members.iter().enumerate() {
                let idx = b * l + slot;
                d.set(r, p, upstream[idx] / cache.counts[idx] as f64);
            }
        }

        let hidden = layers.len() - 1;
        let mut layer_grads = vec![(Matrix::zeros(0, 0), Vec::new()); layers.len()];
        let out = nn::dense_backward(&cache.inputs[hidden], &layers[hidden], &d)?;
        layer_grads[hidden] = (out.weight, out.bias);
        let mut d = out.input;
        for k in (0..hidden).rev() {
            d = nn::dropout_backward(&d, &cache.dropout_masks[k], self.arch.dropout_rate)?;
            d = nn::relu_backward(&cache.pre_activations[k], &d)?;
            let g = nn::dense_backward(&cache.inputs[k], &layers[k], &d)?;
            layer_grads[k] = (g.weight, g.bias);
            d = g.input;
        }

        let (iw, cw, gs) = (cache.item_width, cache.context_width, layout.group_size);
        let mut per_item = Matrix::zeros(layout.batch_size * l, iw);
        let mut context = Matrix::zeros(layout.batch_size, cw);
        for (r, (b, members)) in layout.groups.iter().enumerate() {
            let row = d.row(r);
            for (p, &slot) in members.iter().enumerate() {
                for (acc, v) in per_item
                    .row_mut(b * l + slot)
                    .iter_mut()
                    .zip(&row[p * iw..(p + 1) * iw])
                {
                    *acc += v;
                }
            }
            for (acc, v) in context.row_mut(*b).iter_mut().zip(&row[gs * iw..]) {
                *acc += v;
            }
        }
        Ok(ScorerGrads {
            layers: layer_grads,
            context,
            per_item,
        })
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Per-item scorer. Requires `group_size == 1`.
    pub fn score_univariate<R: Rng + ?Sized>(
        &mut self,
        layers: &[DenseLayerParams],
        enc: &EncodedBatch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<ScoredList>> {
        if self.arch.group_size != 1 {
            return Err(Error::Config(alloc::format!(
                "univariate scoring needs group_size 1, got {}",
                self.arch.group_size
            )));
        }
        let layout = GroupLayout::build(&enc.mask, enc.list_size, 1, None)?;
        self.forward(layers, enc, &layout, mode, rng)
    }

    /// Groupwise scorer over the given layout (see [`GroupLayout::build`]).
    pub fn score_groupwise<R: Rng + ?Sized>(
        &mut self,
        layers: &[DenseLayerParams],
        enc: &EncodedBatch,
        layout: &GroupLayout,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<ScoredList>> {
        self.forward(layers, enc, layout, mode, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use rand::SeedableRng;

    fn enc_from(items: &[&[f64]], context: &[f64], list_size: usize) -> EncodedBatch {
        let iw = items[0].len();
        let mut per_item = Matrix::zeros(list_size, iw);
        let mut mask = vec![false; list_size];
        for (i, it) in items.iter().enumerate() {
            per_item.row_mut(i).copy_from_slice(it);
            mask[i] = true;
        }
        EncodedBatch {
            context: Matrix::from_vec(1, context.len(), context.to_vec()).unwrap(),
            per_item,
            mask,
            list_size,
        }
    }

    fn arch(hidden: &[usize], group_size: usize) -> ScorerArchitecture {
        ScorerArchitecture {
            hidden_dims: hidden.to_vec(),
            dropout_rate: 0.0,
            group_size,
            shuffle_groups: false,
        }
    }

    #[test]
    fn windows_are_circular() {
        assert_eq!(make_groups(3, 2, 3).unwrap(), vec![vec![0, 1], vec![1, 2], vec![2, 0]]);
        assert_eq!(make_groups(3, 1, 3).unwrap(), vec![vec![0], vec![1], vec![2]]);
        let g = make_groups(5, 2, 2).unwrap();
        assert_eq!(g, vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(make_groups(5, 3, 1).unwrap(), vec![vec![0, 0, 0]]);
        assert!(make_groups(2, 3, 2).is_err());
        assert!(make_groups(2, 0, 2).is_err());
    }

    #[test]
    fn layout_skips_padding() {
        let layout = GroupLayout::build(&[true, true, false, false, false], 5, 2, None).unwrap();
        assert_eq!(layout.groups, vec![(0, vec![0, 1]), (0, vec![1, 0])]);
    }

    proptest::proptest! {
        #[test]
        fn every_valid_item_appears_group_size_times(n in 1usize..8, g in 1usize..8) {
            let g = g.min(8);
            let groups = make_groups(8, g, n).unwrap();
            proptest::prop_assert_eq!(groups.len(), n);
            for item in 0..n {
                let hits = groups.iter().flatten().filter(|&&i| i == item).count();
                proptest::prop_assert_eq!(hits, g);
            }
        }
    }

    #[test]
    fn identical_items_get_identical_scores() {
        let mut rng = StreamRng::seed_from_u64(0);
        let a = arch(&[8, 8], 1);
        let layers = a.init_layers(3, 1, &mut rng);
        let enc = enc_from(&[&[0.1, 0.2, 0.3], &[0.1, 0.2, 0.3], &[0.5, -1.0, 2.0]], &[0.4], 4);
        let s = Scorer::new(a)
            .score_univariate(&layers, &enc, Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(s[0].scores[0], s[0].scores[1]);
        assert_eq!(s[0].scores[3], f64::NEG_INFINITY);
        assert_eq!(s[0].mask, vec![true, true, true, false]);
    }

    #[test]
    fn zero_weights_score_output_bias() {
        let mut rng = StreamRng::seed_from_u64(0);
        let a = arch(&[4], 1);
        let mut layers = a.init_layers(2, 0, &mut rng);
        for l in &mut layers {
            l.weight.data_mut().fill(0.0);
            l.bias.fill(0.0);
        }
        layers[1].bias[0] = 1.25;
        let enc = enc_from(&[&[3.0, 4.0], &[-1.0, 9.0]], &[], 2);
        let s = Scorer::new(a)
            .score_univariate(&layers, &enc, Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(s[0].scores, vec![1.25, 1.25]);
    }

    #[test]
    fn univariate_score_ignores_other_items() {
        let mut rng = StreamRng::seed_from_u64(3);
        let a = arch(&[6, 5], 1);
        for _ in 0..20 {
            let layers = a.init_layers(2, 1, &mut rng);
            let mut items: Vec<[f64; 2]> = (0..4)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let refs: Vec<&[f64]> = items.iter().map(|x| x.as_slice()).collect();
            let before = Scorer::new(a.clone())
                .score_univariate(&layers, &enc_from(&refs, &[0.3], 4), Mode::Eval, &mut rng)
                .unwrap();
            items[2] = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let refs: Vec<&[f64]> = items.iter().map(|x| x.as_slice()).collect();
            let after = Scorer::new(a.clone())
                .score_univariate(&layers, &enc_from(&refs, &[0.3], 4), Mode::Eval, &mut rng)
                .unwrap();
            for i in [0, 1, 3] {
                assert_eq!(before[0].scores[i], after[0].scores[i]);
            }
        }
    }

    #[test]
    fn group_size_one_matches_univariate() {
        let mut rng = StreamRng::seed_from_u64(1);
        let a = arch(&[5], 1);
        let layers = a.init_layers(2, 0, &mut rng);
        let enc = enc_from(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]], &[], 3);
        let uni = Scorer::new(a.clone())
            .score_univariate(&layers, &enc, Mode::Eval, &mut rng)
            .unwrap();
        let layout = GroupLayout::build(&enc.mask, 3, 1, None).unwrap();
        let grp = Scorer::new(a)
            .score_groupwise(&layers, &enc, &layout, Mode::Eval, &mut rng)
            .unwrap();
        assert_eq!(uni, grp);
    }

    #[test]
    fn co_item_blind_group_scorer_reduces_to_univariate() {
        // Single linear layer: zero the weights that read the co-item slot.
        let mut rng = StreamRng::seed_from_u64(9);
        let uni_arch = arch(&[3], 1);
        let uni = uni_arch.init_layers(2, 1, &mut rng);
        let grp_arch = arch(&[6], 2);
        // Hidden layer: two independent copies of the univariate hidden layer,
        // each reading its own item slot plus the context.
        let mut hidden = DenseLayerParams::zeros(2 * 2 + 1, 6);
        for p in 0..2 {
            for h in 0..3 {
                for i in 0..2 {
                    hidden.weight.set(p * 2 + i, p * 3 + h, uni[0].weight.get(i, h));
                }
                hidden.weight.set(4, p * 3 + h, uni[0].weight.get(2, h));
                hidden.bias[p * 3 + h] = uni[0].bias[h];
            }
        }
        let mut out = DenseLayerParams::zeros(6, 2);
        for p in 0..2 {
            for h in 0..3 {
                out.weight.set(p * 3 + h, p, uni[1].weight.get(h, 0));
            }
            out.bias[p] = uni[1].bias[0];
        }
        let grp = vec![hidden, out];
        let enc = enc_from(&[&[0.2, -0.4], &[1.0, 0.3], &[-0.7, 0.9]], &[0.5], 4);
        let a = Scorer::new(uni_arch)
            .score_univariate(&uni, &enc, Mode::Eval, &mut rng)
            .unwrap();
        let layout = GroupLayout::build(&enc.mask, 4, 2, None).unwrap();
        let b = Scorer::new(grp_arch)
            .score_groupwise(&grp, &enc, &layout, Mode::Eval, &mut rng)
            .unwrap();
        for i in 0..3 {
            assert!((a[0].scores[i] - b[0].scores[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn voting_averages_received_logits() {
        // Linear group scorer: logit for position p = w_p . (x_0, x_1).
        let a = ScorerArchitecture {
            hidden_dims: vec![2],
            dropout_rate: 0.0,
            group_size: 2,
            shuffle_groups: false,
        };
        // Hidden layer is identity on a 2-d input (one scalar per item), ReLU
        // keeps positives; inputs are positive so the net is linear.
        let hidden = DenseLayerParams::new(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        let out = DenseLayerParams::new(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]), vec![0.0, 0.0]).unwrap();
        let enc = enc_from(&[&[1.0], &[2.0], &[3.0]], &[], 3);
        let layout = GroupLayout::build(&enc.mask, 3, 2, None).unwrap();
        let s = Scorer::new(a)
            .score_groupwise(
                &[hidden, out],
                &enc,
                &layout,
                Mode::Eval,
                &mut StreamRng::seed_from_u64(0),
            )
            .unwrap();
        // Group (a, b) logits: [a + 3b, 2a + 4b].
        let logit = |a: f64, b: f64| [a + 3.0 * b, 2.0 * a + 4.0 * b];
        let (g01, g12, g20) = (logit(1.0, 2.0), logit(2.0, 3.0), logit(3.0, 1.0));
        assert_eq!(s[0].scores[0], (g01[0] + g20[1]) / 2.0);
        assert_eq!(s[0].scores[1], (g01[1] + g12[0]) / 2.0);
        assert_eq!(s[0].scores[2], (g12[1] + g20[0]) / 2.0);
    }

    #[test]
    fn rotated_window_origin_gives_same_scores() {
        let mut rng = StreamRng::seed_from_u64(4);
        let a = arch(&[7], 2);
        let layers = a.init_layers(2, 1, &mut rng);
        let enc = enc_from(&[&[0.1, 0.9], &[-0.3, 0.2], &[0.8, -0.5], &[0.0, 0.4]], &[0.7], 5);
        let base = GroupLayout::build(&enc.mask, 5, 2, None).unwrap();
        let mut rotated = base.clone();
        rotated.groups.rotate_left(2);
        let mut s = Scorer::new(a);
        let x = s.forward(&layers, &enc, &base, Mode::Eval, &mut rng).unwrap();
        let y = s.forward(&layers, &enc, &rotated, Mode::Eval, &mut rng).unwrap();
        for i in 0..4 {
            assert!((x[0].scores[i] - y[0].scores[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_is_bit_deterministic() {
        let mut rng = StreamRng::seed_from_u64(2);
        let a = ScorerArchitecture {
            dropout_rate: 0.5,
            ..arch(&[8, 8], 1)
        };
        let layers = a.init_layers(2, 0, &mut rng);
        let enc = enc_from(&[&[0.3, 0.1], &[0.9, -0.2]], &[], 2);
        let mut s = Scorer::new(a);
        let x = s.score_univariate(&layers, &enc, Mode::Eval, &mut rng).unwrap();
        let y = s.score_univariate(&layers, &enc, Mode::Eval, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn backward_needs_training_forward() {
        let mut rng = StreamRng::seed_from_u64(2);
        let a = arch(&[3], 1);
        let layers = a.init_layers(1, 0, &mut rng);
        let enc = enc_from(&[&[0.3]], &[], 1);
        let mut s = Scorer::new(a);
        assert!(matches!(s.backward(&layers, &[1.0]), Err(Error::State(_))));
        s.score_univariate(&layers, &enc, Mode::Eval, &mut rng).unwrap();
        assert!(matches!(s.backward(&layers, &[1.0]), Err(Error::State(_))));
        s.score_univariate(&layers, &enc, Mode::Train, &mut rng).unwrap();
        let g = s.backward(&layers, &[0.0]).unwrap();
        assert!(g
            .layers
            .iter()
            .all(|(w, b)| w.data().iter().chain(b).all(|&v| v == 0.0)));
        assert!(matches!(s.backward(&layers, &[1.0]), Err(Error::State(_))));
    }

    #[test]
    fn shuffled_enumeration_depends_only_on_query() {
        let mask = [true, true, true, true, false, true, true, true, true, false];
        let a = GroupLayout::build(&mask, 5, 2, Some((7, &["q1", "q2"]))).unwrap();
        let b = GroupLayout::build(&mask, 5, 2, Some((7, &["q1", "q2"]))).unwrap();
        assert_eq!(a, b);
        for (_, members) in &a.groups {
            assert!(members.iter().all(|&s| s < 4));
        }
    }
}
