//! Listwise data model: records, per-query lists with padding masks, and
//! deterministic batching.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Label carried by padded slots.
pub const PAD_LABEL: f64 = -1.0;

/// Named features of one item (or of a query context).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    #[serde(default)]
    pub dense: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub categorical: BTreeMap<String, Vec<String>>,
}

impl FeatureMap {
    pub fn is_empty(&self) -> bool {
        self.dense.is_empty() && self.categorical.is_empty()
    }
}

/// One parsed input line before grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub label: f64,
    pub query_id: String,
    /// Feature index (as written in the file) to value.
    pub dense_features: BTreeMap<u32, f64>,
    pub categorical_features: BTreeMap<String, Vec<String>>,
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub features: FeatureMap,
    pub label: f64,
    pub weight: f64,
}

impl Item {
    pub fn new(features: FeatureMap, label: f64) -> Self {
        Self {
            features,
            label,
            weight: 1.0,
        }
    }

    pub fn padding() -> Self {
        Self {
            features: FeatureMap::default(),
            label: PAD_LABEL,
            weight: 0.0,
        }
    }
}

/// One query: shared context features plus a fixed number of item slots.
///
/// `mask[i] == false` marks slot `i` as padding, which also carries label -1
/// and weight 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleList {
    pub query_id: String,
    pub context: FeatureMap,
    pub items: Vec<Item>,
    pub mask: Vec<bool>,
}

impl ExampleList {
    /// An unpadded list where every slot is valid.
    pub fn new(query_id: impl Into<String>, context: FeatureMap, items: Vec<Item>) -> Self {
        let mask = alloc::vec![true; items.len()];
        Self {
            query_id: query_id.into(),
            context,
            items,
            mask,
        }
    }

    pub fn list_size(&self) -> usize {
        self.items.len()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.weight).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask.len() != self.items.len() {
            return Err(Error::Domain(alloc::format!(
                "list {}: mask length {} != item count {}",
                self.query_id,
                self.mask.len(),
                self.items.len()
            )));
        }
        if self.valid_count() == 0 {
            return Err(Error::Domain(alloc::format!(
                "list {} has no valid items",
                self.query_id
            )));
        }
        for (item, &valid) in self.items.iter().zip(&self.mask) {
            if valid && !(item.weight > 0.0 && item.weight.is_finite()) {
                return Err(Error::Domain(alloc::format!(
                    "list {}: valid item weight must be positive, got {}",
                    self.query_id,
                    item.weight
                )));
            }
            if !valid && item.label != PAD_LABEL {
                return Err(Error::Domain(alloc::format!(
                    "list {}: padded slot must carry label -1",
                    self.query_id
                )));
            }
        }
        Ok(())
    }
}

/// Groups records by query id, preserving first-appearance order of queries and
/// file order within each query. Grouping is global, not run-length.
pub fn group_by_qid<I>(records: I) -> Vec<(String, Vec<RawRecord>)>
where
    I: IntoIterator<Item = RawRecord>,
{
    let mut slot_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut groups: Vec<(String, Vec<RawRecord>)> = Vec::new();
    for record in records {
        match slot_of.get(&record.query_id) {
            Some(&g) => groups[g].1.push(record),
            None => {
                slot_of.insert(record.query_id.clone(), groups.len());
                groups.push((record.query_id.clone(), alloc::vec![record]));
            }
        }
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncatePolicy {
    /// Uniform sample without replacement, kept in original relative order.
    #[default]
    Sample,
    /// Keep the first `list_size` items.
    First,
}

impl core::str::FromStr for TruncatePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "first" => Ok(Self::First),
            other => Err(Error::Config(alloc::format!("unknown truncate policy `{other}`"))),
        }
    }
}

/// Pads (or down-samples) the valid items of `list` to exactly `list_size` slots.
pub fn pad_to_list_size<R: Rng + ?Sized>(
    list: ExampleList,
    list_size: usize,
    rng: &mut R,
    policy: TruncatePolicy,
) -> Result<ExampleList> {
    if list_size == 0 {
        return Err(Error::Config("list_size must be at least 1".into()));
    }
    let ExampleList {
        query_id,
        context,
        items,
        mask,
    } = list;
    let mut valid: Vec<Item> = items
        .into_iter()
        .zip(mask)
        .filter_map(|(item, m)| m.then_some(item))
        .collect();
    if valid.len() > list_size {
        valid = match policy {
            TruncatePolicy::First => {
                valid.truncate(list_size);
                valid
            }
            TruncatePolicy::Sample => {
                let mut keep = index::sample(rng, valid.len(), list_size).into_vec();
                keep.sort_unstable();
                let mut slots: Vec<Option<Item>> = valid.into_iter().map(Some).collect();
                keep.into_iter()
                    .map(|i| slots[i].take().expect("sampled index is unique"))
                    .collect()
            }
        };
    }
    let n = valid.len();
    let mut mask = alloc::vec![true; n];
    mask.resize(list_size, false);
    valid.resize_with(list_size, Item::padding);
    Ok(ExampleList {
        query_id,
        context,
        items: valid,
        mask,
    })
}

/// A fixed-shape group of lists handed to the model in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub lists: Vec<ExampleList>,
    pub list_size: usize,
}

impl Batch {
    pub fn new(lists: Vec<ExampleList>) -> Result<Self> {
        let list_size = lists.first().map_or(0, ExampleList::list_size);
        if lists.iter().any(|l| l.list_size() != list_size) {
            return Err(Error::Domain("all lists in a batch must share one list_size".into()));
        }
        Ok(Self { lists, list_size })
    }

    pub fn batch_size(&self) -> usize {
        self.lists.len()
    }
}

/// Endless epoch-by-epoch batch stream.
///
/// Batch `t` is a pure function of `(lists, batch_size, shuffle, seed, stream, t)`:
/// epoch `t / batches_per_epoch` uses its own shuffle stream, so the iterator
/// can be repositioned with [`BatchIterator::seek`] to resume training.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    lists: Vec<ExampleList>,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    stream_index: u64,
    step: u64,
    order: Option<(u64, Vec<usize>)>,
}

impl BatchIterator {
    pub fn new(lists: Vec<ExampleList>, batch_size: usize, shuffle: bool, seed: u64) -> Result<Self> {
        Self::with_stream(lists, batch_size, shuffle, seed, 0)
    }

    /// Uses shuffle streams keyed by `stream_index` (one per async worker).
    pub fn with_stream(
        lists: Vec<ExampleList>,
        batch_size: usize,
        shuffle: bool,
        seed: u64,
        stream_index: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(Self {
            lists,
            batch_size,
            shuffle,
            seed,
            stream_index,
            step: 0,
            order: None,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.lists.len().div_ceil(self.batch_size)
    }

    pub fn cursor(&self) -> u64 {
        self.step
    }

    pub fn seek(&mut self, step: u64) {
        self.step = step;
    }

    pub fn lists(&self) -> &[ExampleList] {
        &self.lists
    }

    fn epoch_order(&mut self, epoch: u64) -> &[usize] {
        let stale = !matches!(&self.order, Some((e, _)) if *e == epoch);
        if stale {
            let mut order: Vec<usize> = (0..self.lists.len()).collect();
            if self.shuffle {
                // Epoch index in the low bits, worker stream in the high bits.
                let index = (self.stream_index << 32) | (epoch & 0xFFFF_FFFF);
                order.shuffle(&mut stream_rng(self.seed, Stream::Shuffle, index));
            }
            self.order = Some((epoch, order));
        }
        &self.order.as_ref().expect("order cached above").1
    }
}

impl Iterator for BatchIterator {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let per_epoch = self.batches_per_epoch() as u64;
        if per_epoch == 0 {
            return None;
        }
        let (epoch, pos) = (self.step / per_epoch, (self.step % per_epoch) as usize);
        self.step += 1;
        let batch_size = self.batch_size;
        let order = self.epoch_order(epoch);
        let end = ((pos + 1) * batch_size).min(order.len());
        let picked: Vec<usize> = order[pos * batch_size..end].to_vec();
        let lists = picked.into_iter().map(|i| self.lists[i].clone()).collect();
        Some(Batch::new(lists).expect("lists were padded to one size"))
    }
}
