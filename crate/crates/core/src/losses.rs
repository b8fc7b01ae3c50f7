//! Pointwise, pairwise and listwise ranking losses with item weights and
//! padding masks.
//!
//! Every loss takes `(labels, scores, weights, mask)` for one list and returns
//! the value together with its exact gradient w.r.t. the scores. Masked slots
//! are never read beyond the mask check and always receive zero gradient.
//!
//! Top-one ListNet is not a separate key: softmax cross-entropy with
//! label-normalized targets is the same objective.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKey {
    SigmoidCrossEntropy,
    PairwiseLogistic,
    SoftmaxCrossEntropy,
    ListMle,
}

impl LossKey {
    pub const ALL: [LossKey; 4] = [
        LossKey::SigmoidCrossEntropy,
        LossKey::PairwiseLogistic,
        LossKey::SoftmaxCrossEntropy,
        LossKey::ListMle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKey::SigmoidCrossEntropy => "sigmoid_cross_entropy",
            LossKey::PairwiseLogistic => "pairwise_logistic",
            LossKey::SoftmaxCrossEntropy => "softmax_cross_entropy",
            LossKey::ListMle => "list_mle",
        }
    }
}

impl core::fmt::Display for LossKey {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for LossKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossKey::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(alloc::format!("unknown loss key `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_scores: Vec<f64>,
    /// Whether the list had anything to learn from; inactive lists are left
    /// out of the batch mean.
    pub active: bool,
}

impl LossOutput {
    fn inactive(n: usize) -> Self {
        Self {
            value: 0.0,
            grad_scores: vec![0.0; n],
            active: false,
        }
    }
}

fn check_lengths(labels: &[f64], scores: &[f64], weights: &[f64], mask: &[bool]) -> Result<()> {
    let n = labels.len();
    if scores.len() != n || weights.len() != n || mask.len() != n {
        return Err(Error::Dimension {
            op: "loss",
            left: alloc::format!("{n} labels"),
            right: alloc::format!(
                "{} scores / {} weights / {} mask",
                scores.len(),
                weights.len(),
                mask.len()
            ),
        });
    }
    Ok(())
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Weighted sigmoid cross-entropy over binary labels.
pub fn loss_sigmoid_ce(labels: &[f64], scores: &[f64], weights: &[f64], mask: &[bool]) -> Result<LossOutput> {
    check_lengths(labels, scores, weights, mask)?;
    let mut out = LossOutput::inactive(labels.len());
    for j in (0..labels.len()).filter(|&j| mask[j]) {
        let (y, s, w) = (labels[j], scores[j], weights[j]);
        if y != 0.0 && y != 1.0 {
            return Err(Error::Domain(alloc::format!(
                "sigmoid cross-entropy needs labels in {{0, 1}}, got {y}"
            )));
        }
        // -y log p - (1-y) log(1-p) = softplus(s) - y s
        out.value += w * (softplus(s) - y * s);
        out.grad_scores[j] = w * (sigmoid(s) - y);
        out.active = true;
    }
    Ok(out)
}

/// `sum_{j,k} [y_j > y_k] w_j log(1 + exp(s_k - s_j))`.
///
/// Each pair carries the weight of its preferred (higher-labeled) item.
pub fn loss_pairwise_logistic(labels: &[f64], scores: &[f64], weights: &[f64], mask: &[bool]) -> Result<LossOutput> {
    check_lengths(labels, scores, weights, mask)?;
    let mut out = LossOutput::inactive(labels.len());
    let valid: Vec<usize> = (0..labels.len()).filter(|&j| mask[j]).collect();
    for &j in &valid {
        for &k in &valid {
            if labels[j] > labels[k] {
                let diff = scores[k] - scores[j];
                out.value += weights[j] * softplus(diff);
                let g = weights[j] * sigmoid(diff);
                out.grad_scores[k] += g;
                out.grad_scores[j] -= g;
                out.active = true;
            }
        }
    }
    Ok(out)
}

/// `-sum_j w_j y_j log softmax(s)_j` over valid slots.
pub fn loss_softmax_ce(labels: &[f64], scores: &[f64], weights: &[f64], mask: &[bool]) -> Result<LossOutput> {
    check_lengths(labels, scores, weights, mask)?;
    let valid: Vec<usize> = (0..labels.len()).filter(|&j| mask[j]).collect();
    if let Some(&j) = valid.iter().find(|&&j| labels[j] < 0.0) {
        return Err(Error::Domain(alloc::format!(
            "softmax cross-entropy needs non-negative labels, got {}",
            labels[j]
        )));
    }
    let mut out = LossOutput::inactive(labels.len());
    if valid.is_empty() || valid.iter().all(|&j| labels[j] == 0.0) {
        return Ok(out);
    }
    let max = valid.iter().map(|&j| scores[j]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = valid.iter().map(|&j| libm::exp(scores[j] - max)).sum();
    let log_z = libm::log(z);
    let total: f64 = valid.iter().map(|&j| weights[j] * labels[j]).sum();
    for &j in &valid {
        let log_p = scores[j] - max - log_z;
        out.value -= weights[j] * labels[j] * log_p;
        out.grad_scores[j] = libm::exp(log_p) * total - weights[j] * labels[j];
    }
    out.active = true;
    Ok(out)
}

/// Negative Plackett-Luce log-likelihood of the label-sorted permutation.
///
/// Ties in the labels are broken by shuffling the valid items with `rng`
/// before a stable sort. The list is weighted by the mean valid item weight.
pub fn loss_listmle<R: Rng + ?Sized>(
    labels: &[f64],
    scores: &[f64],
    weights: &[f64],
    mask: &[bool],
    rng: &mut R,
) -> Result<LossOutput> {
    check_lengths(labels, scores, weights, mask)?;
    let mut order: Vec<usize> = (0..labels.len()).filter(|&j| mask[j]).collect();
    let mut out = LossOutput::inactive(labels.len());
    if order.len() < 2 {
        return Ok(out);
    }
    order.shuffle(rng);
    order.sort_by(|&a, &b| labels[b].total_cmp(&labels[a]));
    let n = order.len();
    let list_weight = order.iter().map(|&j| weights[j]).sum::<f64>() / n as f64;

    // Suffix log-sum-exp: lse[r] = log sum_{t >= r} exp(s_order[t]).
    let mut lse = vec![0.0; n];
    let mut running = f64::NEG_INFINITY;
    for r in (0..n).rev() {
        let s = scores[order[r]];
        running = if running == f64::NEG_INFINITY {
            s
        } else {
            let m = running.max(s);
            m + libm::log(libm::exp(running - m) + libm::exp(s - m))
        };
        lse[r] = running;
    }
    let mut value = 0.0;
    for r in 0..n {
        value += lse[r] - scores[order[r]];
    }
    // d/ds_{order[r]} = -1 + sum_{t <= r} exp(s_{order[r]} - lse[t]).
    let mut grads = vec![0.0; n];
    for r in 0..n {
        let s = scores[order[r]];
        let mut g = -1.0;
        for &l in &lse[..=r] {
            g += libm::exp(s - l);
        }
        grads[r] = g;
    }
    out.value = list_weight * value;
    for (r, &j) in order.iter().enumerate() {
        out.grad_scores[j] = list_weight * grads[r];
    }
    out.active = true;
    Ok(out)
}

/// Batch-level result of a [`LossFn`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    /// Gradient per slot, concatenated over lists.
    pub grad_scores: Vec<f64>,
    pub active_lists: usize,
}

/// A loss selected by key, with one uniform call signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossFn {
    pub key: LossKey,
}

pub fn make_loss_fn(key: LossKey) -> LossFn {
    LossFn { key }
}

impl LossFn {
    /// `rng` is only consumed by ListMLE tie-breaking.
    pub fn list_loss<R: Rng + ?Sized>(
        &self,
        labels: &[f64],
        scores: &[f64],
        weights: &[f64],
        mask: &[bool],
        rng: &mut R,
    ) -> Result<LossOutput> {
        match self.key {
            LossKey::SigmoidCrossEntropy => loss_sigmoid_ce(labels, scores, weights, mask),
            LossKey::PairwiseLogistic => loss_pairwise_logistic(labels, scores, weights, mask),
            LossKey::SoftmaxCrossEntropy => loss_softmax_ce(labels, scores, weights, mask),
            LossKey::ListMle => loss_listmle(labels, scores, weights, mask, rng),
        }
    }

    /// Sum over lists divided by the number of active lists. Inputs are
    /// concatenated per-slot arrays of `lists * list_size` entries.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        list_size: usize,
        labels: &[f64],
        scores: &[f64],
        weights: &[f64],
        mask: &[bool],
        rng: &mut R,
    ) -> Result<BatchLoss> {
        check_lengths(labels, scores, weights, mask)?;
        if list_size == 0 || !labels.len().is_multiple_of(list_size) {
            return Err(Error::Dimension {
                op: "batch_loss",
                left: alloc::format!("{} slots", labels.len()),
                right: alloc::format!("list_size {list_size}"),
            });
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; labels.len()];
        let mut active = 0usize;
        for start in (0..labels.len()).step_by(list_size) {
            let span = start..start + list_size;
            let out = self.list_loss(
                &labels[span.clone()],
                &scores[span.clone()],
                &weights[span.clone()],
                &mask[span.clone()],
                rng,
            )?;
            if out.active {
                active += 1;
                value += out.value;
                grad[span].copy_from_slice(&out.grad_scores);
            }
        }
        if active > 0 {
            let scale = 1.0 / active as f64;
            value *= scale;
            for g in &mut grad {
                *g *= scale;
            }
        }
        Ok(BatchLoss {
            value,
            grad_scores: grad,
            active_lists: active,
        })
    }
}
