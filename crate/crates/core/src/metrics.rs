//! Ranking metrics: reciprocal rank, average relevance position, DCG and
//! NDCG, with optional `@k` cutoffs and per-list weights.
//!
//! Ranks are 1-based. A rank of `0` marks an unranked (padded) slot; every
//! metric ignores such slots.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ranks valid slots by descending score; ties go to the lower index.
/// Padded slots get rank 0.
pub fn rank_from_scores(scores: &[f64], mask: &[bool]) -> Result<Vec<usize>> {
    if scores.len() != mask.len() {
        return Err(Error::Dimension {
            op: "rank_from_scores",
            left: alloc::format!("{} scores", scores.len()),
            right: alloc::format!("{} mask", mask.len()),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).filter(|&i| mask[i]).collect();
    if order.is_empty() {
        return Err(Error::Domain("cannot rank a list without valid items".into()));
    }
    // Stable sort keeps index order among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = alloc::vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    Ok(ranks)
}

fn within(rank: usize, topn: Option<usize>) -> bool {
    rank > 0 && topn.is_none_or(|k| rank <= k)
}

/// Reciprocal rank of the first relevant item, 0 if none is ranked within
/// `topn`.
pub fn metric_rr(labels: &[f64], ranks: &[usize], topn: Option<usize>) -> f64 {
    labels
        .iter()
        .zip(ranks)
        .filter(|&(&y, &r)| y > 0.0 && within(r, topn))
        .map(|(_, &r)| r)
        .min()
        .map_or(0.0, |r| 1.0 / r as f64)
}

/// Relevance-weighted mean rank; `None` when no relevance falls within
/// `topn` (the list is skipped).
pub fn metric_arp(labels: &[f64], ranks: &[usize], topn: Option<usize>) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (&y, &r) in labels.iter().zip(ranks) {
        if within(r, topn) {
            num += y * r as f64;
            den += y;
        }
    }
    (den > 0.0).then(|| num / den)
}

#[inline]
fn gain(y: f64) -> f64 {
    libm::exp2(y) - 1.0
}

#[inline]
fn discount(rank: usize) -> f64 {
    libm::log2(1.0 + rank as f64)
}

pub fn metric_dcg(labels: &[f64], ranks: &[usize], topn: Option<usize>) -> f64 {
    labels
        .iter()
        .zip(ranks)
        .filter(|&(_, &r)| within(r, topn))
        .map(|(&y, &r)| gain(y) / discount(r))
        .sum()
}

/// DCG of the label-sorted ranking of the ranked slots.
pub fn ideal_dcg(labels: &[f64], ranks: &[usize], topn: Option<usize>) -> f64 {
    let mut ys: Vec<f64> = labels
        .iter()
        .zip(ranks)
        .filter(|&(_, &r)| r > 0)
        .map(|(&y, _)| y)
        .collect();
    ys.sort_by(|a, b| b.total_cmp(a));
    ys.iter()
        .enumerate()
        .filter(|&(i, _)| within(i + 1, topn))
        .map(|(i, &y)| gain(y) / discount(i + 1))
        .sum()
}

pub fn metric_ndcg(labels: &[f64], ranks: &[usize], topn: Option<usize>) -> f64 {
    let ideal = ideal_dcg(labels, ranks, topn);
    if ideal > 0.0 {
        metric_dcg(labels, ranks, topn) / ideal
    } else {
        0.0
    }
}

/// `sum w_k m_k / sum w_k`.
pub fn aggregate(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::Dimension {
            op: "aggregate",
            left: alloc::format!("{} values", values.len()),
            right: alloc::format!("{} weights", weights.len()),
        });
    }
    let total: f64 = weights.iter().sum();
    if values.is_empty() || total <= 0.0 {
        return Err(Error::Domain("no list contributes to the metric".into()));
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total)
}

/// Weight of one list for weighted metrics: the label-weighted mean of the
/// item weights, or the plain mean when no valid item is relevant.
pub fn list_weight(labels: &[f64], weights: &[f64], mask: &[bool]) -> f64 {
    let (mut wy, mut y, mut w, mut n) = (0.0, 0.0, 0.0, 0usize);
    for j in (0..labels.len()).filter(|&j| mask[j]) {
        wy += weights[j] * labels[j];
        y += labels[j];
        w += weights[j];
        n += 1;
    }
    if y > 0.0 {
        wy / y
    } else if n > 0 {
        w / n as f64
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Mrr,
    Arp,
    Dcg,
    Ndcg,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Mrr => "mrr",
            MetricKind::Arp => "arp",
            MetricKind::Dcg => "dcg",
            MetricKind::Ndcg => "ndcg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricKey {
    pub kind: MetricKind,
    pub topn: Option<usize>,
}

impl MetricKey {
    pub fn new(kind: MetricKind, topn: Option<usize>) -> Result<Self> {
        if topn == Some(0) {
            return Err(Error::Config("metric cutoff must be at least 1".into()));
        }
        Ok(Self { kind, topn })
    }
}

impl fmt::Display for MetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.topn {
            Some(k) => write!(f, "{}@{k}", self.kind.as_str()),
            None => f.write_str(self.kind.as_str()),
        }
    }
}

impl FromStr for MetricKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, topn) = match s.split_once('@') {
            Some((n, k)) => {
                let k = k
                    .parse::<usize>()
                    .map_err(|_| Error::Config(alloc::format!("bad metric cutoff in `{s}`")))?;
                (n, Some(k))
            }
            None => (s, None),
        };
        let kind = [MetricKind::Mrr, MetricKind::Arp, MetricKind::Dcg, MetricKind::Ndcg]
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(alloc::format!("unknown metric key `{s}`")))?;
        MetricKey::new(kind, topn)
    }
}

impl Serialize for MetricKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetricKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-list result of a metric function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ListMetric {
    /// `None` if the metric is undefined for this list.
    pub value: Option<f64>,
    pub weight: f64,
}

/// A metric selected by key, with the same `(labels, scores, weights, mask)`
/// signature as the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricFn {
    pub key: MetricKey,
}

pub fn make_metric_fn(key: MetricKey) -> MetricFn {
    MetricFn { key }
}

impl MetricFn {
    pub fn evaluate_list(&self, labels: &[f64], scores: &[f64], weights: &[f64], mask: &[bool]) -> Result<ListMetric> {
        if labels.len() != scores.len() || weights.len() != scores.len() {
            return Err(Error::Dimension {
                op: "metric",
                left: alloc::format!("{} labels / {} weights", labels.len(), weights.len()),
                right: alloc::format!("{} scores", scores.len()),
            });
        }
        let ranks = rank_from_scores(scores, mask)?;
        let topn = self.key.topn;
        let value = match self.key.kind {
            MetricKind::Mrr => Some(metric_rr(labels, &ranks, topn)),
            MetricKind::Arp => metric_arp(labels, &ranks, topn),
            MetricKind::Dcg => Some(metric_dcg(labels, &ranks, topn)),
            MetricKind::Ndcg => Some(metric_ndcg(labels, &ranks, topn)),
        };
        Ok(ListMetric {
            value,
            weight: list_weight(labels, weights, mask),
        })
    }

    /// Summary over every list of a batch.
    pub fn evaluate_batch(&self, batch: &crate::data::Batch, scores: &[Vec<f64>]) -> Result<MetricSummary> {
        let mut acc = MetricAccumulator::new(self.key);
        for (list, s) in batch.lists.iter().zip(scores) {
            acc.push(self.evaluate_list(&list.labels(), s, &list.weights(), &list.mask)?);
        }
        acc.finish()
    }
}

/// Collects per-list values for both the weighted and unweighted means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAccumulator {
    pub key: MetricKey,
    values: Vec<f64>,
    weights: Vec<f64>,
    skipped: usize,
}

impl MetricAccumulator {
    pub fn new(key: MetricKey) -> Self {
        Self {
            key,
            values: Vec::new(),
            weights: Vec::new(),
            skipped: 0,
        }
    }

    pub fn push(&mut self, m: ListMetric) {
        match m.value {
            Some(v) => {
                self.values.push(v);
                self.weights.push(m.weight);
            }
            None => self.skipped += 1,
        }
    }

    pub fn finish(&self) -> Result<MetricSummary> {
        let ones = alloc::vec![1.0; self.values.len()];
        let unweighted = aggregate(&self.values, &ones)
            .map_err(|_| Error::Domain(alloc::format!("no list contributes to `{}`", self.key)))?;
        // Lists whose weights are all zero only drop out of the weighted mean.
        let weighted = aggregate(&self.values, &self.weights).unwrap_or(f64::NAN);
        Ok(MetricSummary {
            name: self.key.to_string(),
            weighted,
            unweighted,
            lists: self.values.len(),
            skipped: self.skipped,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub weighted: f64,
    pub unweighted: f64,
    /// Lists that contributed.
    pub lists: usize,
    /// Lists where the metric was undefined.
    pub skipped: usize,
}
