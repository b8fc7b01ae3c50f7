//! Feature declarations, vocabularies, embedding tables, and the listwise
//! encoder that turns a [`Batch`] into a context matrix and a per-item matrix.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, FeatureMap};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureScope {
    Context,
    PerItem,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    DenseNumeric {
        width: usize,
    },
    Categorical {
        vocabulary_id: String,
        embedding_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub scope: FeatureScope,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn dense(name: &str, scope: FeatureScope, width: usize) -> Self {
        Self {
            name: name.into(),
            scope,
            kind: FeatureKind::DenseNumeric { width },
        }
    }

    pub fn categorical(name: &str, scope: FeatureScope, vocabulary_id: &str, embedding_dim: usize) -> Self {
        Self {
            name: name.into(),
            scope,
            kind: FeatureKind::Categorical {
                vocabulary_id: vocabulary_id.into(),
                embedding_dim,
            },
        }
    }

    pub fn width(&self) -> usize {
        match &self.kind {
            FeatureKind::DenseNumeric { width } => *width,
            FeatureKind::Categorical { embedding_dim, .. } => *embedding_dim,
        }
    }
}

/// Checks widths and per-scope name uniqueness.
pub fn validate_specs(specs: &[FeatureSpec]) -> Result<()> {
    for (i, s) in specs.iter().enumerate() {
        if s.width() == 0 {
            return Err(Error::Config(alloc::format!("feature `{}` has zero width", s.name)));
        }
        if specs[..i].iter().any(|o| o.scope == s.scope && o.name == s.name) {
            return Err(Error::Config(alloc::format!(
                "feature `{}` declared twice in one scope",
                s.name
            )));
        }
    }
    let mut dims: BTreeMap<&str, usize> = BTreeMap::new();
    for s in specs {
        if let FeatureKind::Categorical {
            vocabulary_id,
            embedding_dim,
        } = &s.kind
        {
            if let Some(&d) = dims.get(vocabulary_id.as_str()) {
                if d != *embedding_dim {
                    return Err(Error::Config(alloc::format!(
                        "vocabulary `{vocabulary_id}` is shared with embedding dims {d} and {embedding_dim}"
                    )));
                }
            }
            dims.insert(vocabulary_id, *embedding_dim);
        }
    }
    Ok(())
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Token to row index map with hashed out-of-vocabulary buckets.
///
/// In-vocabulary tokens occupy `[0, len)`; unknown tokens hash into
/// `[len, len + oov_bucket_count)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub id: String,
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    pub oov_bucket_count: usize,
    pub min_frequency: usize,
}

impl Vocabulary {
    /// Vocabulary whose indices follow the given token order.
    pub fn from_tokens(id: &str, tokens: Vec<String>, oov_bucket_count: usize) -> Result<Self> {
        if oov_bucket_count == 0 {
            return Err(Error::Config("oov_bucket_count must be at least 1".into()));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(alloc::format!(
                    "vocabulary `{id}` lists token `{t}` twice"
                )));
            }
        }
        Ok(Self {
            id: id.into(),
            tokens,
            index,
            oov_bucket_count,
            min_frequency: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rows needed by an embedding table for this vocabulary.
    pub fn rows(&self) -> usize {
        self.tokens.len() + self.oov_bucket_count
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn lookup(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) => i,
            None => self.tokens.len() + (fnv1a64(token.as_bytes()) % self.oov_bucket_count as u64) as usize,
        }
    }
}

/// Keeps tokens seen at least `min_frequency` times, indexed by descending
/// frequency with lexicographic tie-break.
pub fn build_vocab<'a, I>(id: &str, tokens: I, min_frequency: usize, oov_bucket_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if min_frequency == 0 {
        return Err(Error::Config("min_frequency must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_frequency).collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps it for ties.
    kept.sort_by_key(|&(_, c)| core::cmp::Reverse(c));
    let mut vocab = Vocabulary::from_tokens(
        id,
        kept.into_iter().map(|(t, _)| t.to_string()).collect(),
        oov_bucket_count,
    )?;
    vocab.min_frequency = min_frequency;
    Ok(vocab)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vocabulary_id: String,
    pub table: Matrix,
}

impl EmbeddingTable {
    /// Uniform init in `[-1/sqrt(dim), 1/sqrt(dim)]`.
    pub fn init<R: Rng + ?Sized>(vocab: &Vocabulary, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(dim as f64);
        let mut table = Matrix::zeros(vocab.rows(), dim);
        for v in table.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        Self {
            vocabulary_id: vocab.id.clone(),
            table,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    fn check(&self, vocab: &Vocabulary) -> Result<()> {
        if self.table.rows() != vocab.rows() {
            return Err(Error::Dimension {
                op: "embedding",
                left: alloc::format!("table `{}` with {} rows", self.vocabulary_id, self.table.rows()),
                right: alloc::format!("vocabulary with {} rows", vocab.rows()),
            });
        }
        Ok(())
    }
}

/// Mean of the rows for `tokens`; the zero vector for an empty list.
pub fn embed_lookup<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, table: &EmbeddingTable) -> Result<Vec<f64>> {
    table.check(vocab)?;
    let mut out = vec![0.0; table.dim()];
    embed_into(tokens, vocab, table, &mut out);
    Ok(out)
}

fn embed_into<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, table: &EmbeddingTable, out: &mut [f64]) {
    if tokens.is_empty() {
        return;
    }
    let scale = 1.0 / tokens.len() as f64;
    for t in tokens {
        let row = table.table.row(vocab.lookup(t.as_ref()));
        for (o, v) in out.iter_mut().zip(row) {
            *o += v * scale;
        }
    }
}

/// Row gradients of [`embed_lookup`]: each contributing row receives
/// `upstream / token_count` (accumulated for repeated tokens).
pub fn embed_backward<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    table: &EmbeddingTable,
    upstream: &[f64],
) -> Result<BTreeMap<usize, Vec<f64>>> {
    table.check(vocab)?;
    if upstream.len() != table.dim() {
        return Err(Error::Dimension {
            op: "embed_backward",
            left: alloc::format!("dim {}", table.dim()),
            right: alloc::format!("upstream {}", upstream.len()),
        });
    }
    let mut rows = BTreeMap::new();
    accumulate_rows(tokens, vocab, upstream, &mut rows);
    Ok(rows)
}

fn accumulate_rows<S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    upstream: &[f64],
    rows: &mut BTreeMap<usize, Vec<f64>>,
) {
    if tokens.is_empty() {
        return;
    }
    let scale = 1.0 / tokens.len() as f64;
    for t in tokens {
        let acc = rows
            .entry(vocab.lookup(t.as_ref()))
            .or_insert_with(|| vec![0.0; upstream.len()]);
        for (a, u) in acc.iter_mut().zip(upstream) {
            *a += u * scale;
        }
    }
}

/// Dense encoding of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    /// `batch_size x context_width`.
    pub context: Matrix,
    /// `(batch_size * list_size) x item_width`.
    pub per_item: Matrix,
    pub mask: Vec<bool>,
    pub list_size: usize,
}

/// Declared features plus the vocabularies they reference.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTransform {
    specs: Vec<FeatureSpec>,
    vocabs: BTreeMap<String, Vocabulary>,
    /// Vocabulary ids in first-reference order; this is the table order.
    table_ids: Vec<String>,
}

impl FeatureTransform {
    pub fn new(specs: Vec<FeatureSpec>, vocabs: BTreeMap<String, Vocabulary>) -> Result<Self> {
        validate_specs(&specs)?;
        let mut table_ids: Vec<String> = Vec::new();
        for s in &specs {
            if let FeatureKind::Categorical { vocabulary_id, .. } = &s.kind {
                if !vocabs.contains_key(vocabulary_id) {
                    return Err(Error::Config(alloc::format!(
                        "feature `{}` references unknown vocabulary `{vocabulary_id}`",
                        s.name
                    )));
                }
                if !table_ids.contains(vocabulary_id) {
                    table_ids.push(vocabulary_id.clone());
                }
            }
        }
        Ok(Self {
            specs,
            vocabs,
            table_ids,
        })
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn vocabularies(&self) -> &BTreeMap<String, Vocabulary> {
        &self.vocabs
    }

    pub fn table_ids(&self) -> &[String] {
        &self.table_ids
    }

    pub fn width(&self, scope: FeatureScope) -> usize {
        self.specs
            .iter()
            .filter(|s| s.scope == scope)
            .map(FeatureSpec::width)
            .sum()
    }

    /// `(vocabulary_id, rows, dim)` for each embedding table, in table order.
    pub fn table_shapes(&self) -> Vec<(String, usize, usize)> {
        self.table_ids
            .iter()
            .map(|id| {
                let dim = self
                    .specs
                    .iter()
                    .find_map(|s| match &s.kind {
                        FeatureKind::Categorical {
                            vocabulary_id,
                            embedding_dim,
                        } if vocabulary_id == id => Some(*embedding_dim),
                        _ => None,
                    })
                    .expect("table ids come from specs");
                (id.clone(), self.vocabs[id].rows(), dim)
            })
            .collect()
    }

    pub fn init_tables<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<EmbeddingTable> {
        self.table_shapes()
            .into_iter()
            .map(|(id, _, dim)| EmbeddingTable::init(&self.vocabs[&id], dim, rng))
            .collect()
    }

    pub fn check_tables(&self, tables: &[EmbeddingTable]) -> Result<()> {
        let shapes = self.table_shapes();
        if shapes.len() != tables.len() {
            return Err(Error::Config(alloc::format!(
                "expected {} embedding tables, got {}",
                shapes.len(),
                tables.len()
            )));
        }
        for ((id, rows, dim), t) in shapes.iter().zip(tables) {
            if &t.vocabulary_id != id || t.table.shape() != (*rows, *dim) {
                return Err(Error::Config(alloc::format!(
                    "embedding table `{}` ({}x{}) does not match vocabulary `{id}` ({rows}x{dim})",
                    t.vocabulary_id,
                    t.table.rows(),
                    t.table.cols()
                )));
            }
        }
        Ok(())
    }

    fn table_index(&self, vocabulary_id: &str) -> usize {
        self.table_ids
            .iter()
            .position(|t| t == vocabulary_id)
            .expect("validated at construction")
    }

    fn encode_row(&self, scope: FeatureScope, features: &FeatureMap, tables: &[EmbeddingTable], out: &mut [f64]) {
        let mut offset = 0;
        for spec in self.specs.iter().filter(|s| s.scope == scope) {
            let w = spec.width();
            let slot = &mut out[offset..offset + w];
            match &spec.kind {
                FeatureKind::DenseNumeric { .. } => {
                    if let Some(values) = features.dense.get(&spec.name) {
                        for (o, v) in slot.iter_mut().zip(values) {
                            *o = *v;
                        }
                    }
                }
                FeatureKind::Categorical { vocabulary_id, .. } => {
                    if let Some(tokens) = features.categorical.get(&spec.name) {
                        let table = &tables[self.table_index(vocabulary_id)];
                        embed_into(tokens, &self.vocabs[vocabulary_id], table, slot);
                    }
                }
            }
            offset += w;
        }
    }

    /// Concatenates features in declaration order. Padded slots and missing
    /// features encode as zeros.
    pub fn encode(&self, batch: &Batch, tables: &[EmbeddingTable]) -> Result<EncodedBatch> {
        self.check_tables(tables)?;
        let (cw, iw) = (self.width(FeatureScope::Context), self.width(FeatureScope::PerItem));
        let l = batch.list_size;
        let mut context = Matrix::zeros(batch.batch_size(), cw);
        let mut per_item = Matrix::zeros(batch.batch_size() * l, iw);
        let mut mask = Vec::with_capacity(batch.batch_size() * l);
        for (b, list) in batch.lists.iter().enumerate() {
            self.encode_row(FeatureScope::Context, &list.context, tables, context.row_mut(b));
            for (i, (item, &valid)) in list.items.iter().zip(&list.mask).enumerate() {
                if valid {
                    self.encode_row(
                        FeatureScope::PerItem,
                        &item.features,
                        tables,
                        per_item.row_mut(b * l + i),
                    );
                }
                mask.push(valid);
            }
        }
        Ok(EncodedBatch {
            context,
            per_item,
            mask,
            list_size: l,
        })
    }

    fn backward_row(
        &self,
        scope: FeatureScope,
        features: &FeatureMap,
        upstream: &[f64],
        grads: &mut [BTreeMap<usize, Vec<f64>>],
    ) {
        let mut offset = 0;
        for spec in self.specs.iter().filter(|s| s.scope == scope) {
            let w = spec.width();
            if let FeatureKind::Categorical { vocabulary_id, .. } = &spec.kind {
                if let Some(tokens) = features.categorical.get(&spec.name) {
                    let t = self.table_index(vocabulary_id);
                    accumulate_rows(
                        tokens,
                        &self.vocabs[vocabulary_id],
                        &upstream[offset..offset + w],
                        &mut grads[t],
                    );
                }
            }
            offset += w;
        }
    }

    /// Pushes gradients w.r.t. the encoded matrices back into the embedding
    /// tables. Returns one row-sparse gradient per table, in table order.
    pub fn backward(
        &self,
        batch: &Batch,
        grad_context: &Matrix,
        grad_per_item: &Matrix,
    ) -> Result<Vec<BTreeMap<usize, Vec<f64>>>> {
        let l = batch.list_size;
        if grad_context.shape() != (batch.batch_size(), self.width(FeatureScope::Context))
            || grad_per_item.shape() != (batch.batch_size() * l, self.width(FeatureScope::PerItem))
        {
            return Err(Error::Dimension {
                op: "FeatureTransform::backward",
                left: alloc::format!("{:?} / {:?}", grad_context.shape(), grad_per_item.shape()),
                right: alloc::format!("batch of {} lists x {l} slots", batch.batch_size()),
            });
        }
        let mut grads = vec![BTreeMap::new(); self.table_ids.len()];
        if grads.is_empty() {
            return Ok(grads);
        }
        for (b, list) in batch.lists.iter().enumerate() {
            self.backward_row(FeatureScope::Context, &list.context, grad_context.row(b), &mut grads);
            for (i, (item, &valid)) in list.items.iter().zip(&list.mask).enumerate() {
                if valid {
                    self.backward_row(
                        FeatureScope::PerItem,
                        &item.features,
                        grad_per_item.row(b * l + i),
                        &mut grads,
                    );
                }
            }
        }
        Ok(grads)
    }
}

/// Free-function form of [`FeatureTransform::encode`].
pub fn encode_listwise(
    batch: &Batch,
    specs: &[FeatureSpec],
    vocabs: &BTreeMap<String, Vocabulary>,
    tables: &[EmbeddingTable],
) -> Result<EncodedBatch> {
    FeatureTransform::new(specs.to_vec(), vocabs.clone())?.encode(batch, tables)
}
