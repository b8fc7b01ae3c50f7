//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LTRF" | version u32 | crc32c(payload) u32 | payload length u64 | payload
//! payload = config JSON (u64 length + bytes)
//!         | global step u64
//!         | vocabularies: u32 count, each id, oov buckets u64, min frequency u64, tokens
//!         | arrays: u32 count, each name, u32 rank, u64 dims..., f64 values
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Arrays hold every
//! parameter block under its block name and the matching Adagrad accumulator
//! under `adagrad.<name>`.

use std::collections::BTreeMap;
use std::path::Path;

use ltr_core::model::ModelParams;
use ltr_core::nn::DenseLayerParams;
use ltr_core::{AdagradState, EmbeddingTable, FeatureTransform, Matrix, Model, RankingConfig, Vocabulary};

use crate::error::{LtrError, Result};

pub const MAGIC: &[u8; 4] = b"LTRF";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("array `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<u64>,
        found: Vec<u64>,
    },
    #[error("checkpoint is missing array `{0}`")]
    Missing(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn array(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.str(name);
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u64(d as u64);
        }
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("field overruns payload at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Malformed("string is not UTF-8".into()))
    }
    fn array(&mut self) -> Result<(String, Vec<u64>, Vec<f64>), CheckpointError> {
        let name = self.str()?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64()).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .filter(|&n| n <= self.buf.len() / 8)
            .ok_or_else(|| CheckpointError::Malformed(format!("array `{name}` is too large")))?;
        let data = self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((name, shape, data))
    }
}

/// Serializes a model into checkpoint bytes.
pub fn encode(model: &Model) -> Vec<u8> {
    let mut p = Writer(Vec::new());
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    p.u64(config.len() as u64);
    p.0.extend_from_slice(&config);
    p.u64(model.global_step());
    let vocabs = model.transform().vocabularies();
    p.u32(vocabs.len() as u32);
    for v in vocabs.values() {
        p.str(&v.id);
        p.u64(v.oov_bucket_count as u64);
        p.u64(v.min_frequency as u64);
        p.u32(v.len() as u32);
        for t in v.tokens() {
            p.str(t);
        }
    }
    let params = model.params();
    let names = params.block_names();
    let shapes = block_shapes(params);
    p.u32(2 * names.len() as u32);
    for ((name, shape), data) in names.iter().zip(&shapes).zip(params.blocks()) {
        p.array(name, shape, data);
    }
    for ((name, shape), acc) in names.iter().zip(&shapes).zip(&model.optimizer().accumulators) {
        p.array(&format!("adagrad.{name}"), shape, acc);
    }

    let payload = p.0;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&crc32c::crc32c(&payload).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

fn block_shapes(params: &ModelParams) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for l in &params.layers {
        out.push(vec![l.weight.rows(), l.weight.cols()]);
        out.push(vec![l.bias.len()]);
    }
    for t in &params.embeddings {
        out.push(vec![t.table.rows(), t.table.cols()]);
    }
    out
}

/// Parses checkpoint bytes back into a model.
pub fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        }
        .into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let stored = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < len {
        return Err(CheckpointError::Truncated {
            expected: HEADER_LEN as u64 + len,
            found: bytes.len() as u64,
        }
        .into());
    }
    if found > len {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", found - len)).into());
    }
    let payload = &bytes[HEADER_LEN..];
    let computed = crc32c::crc32c(payload);
    if computed != stored {
        return Err(CheckpointError::Checksum { stored, computed }.into());
    }
    decode_payload(payload)
}

fn decode_payload(payload: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: payload, pos: 0 };
    let n = r.u64()? as usize;
    let config: RankingConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| CheckpointError::Malformed(format!("config: {e}")))?;
    let step = r.u64()?;
    let mut vocabs = BTreeMap::new();
    for _ in 0..r.u32()? {
        let id = r.str()?;
        let oov = r.u64()? as usize;
        let min_frequency = r.u64()? as usize;
        let count = r.u32()?;
        let tokens = (0..count).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
        let mut v = Vocabulary::from_tokens(&id, tokens, oov).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        v.min_frequency = min_frequency;
        vocabs.insert(id, v);
    }
    let mut arrays = BTreeMap::new();
    for _ in 0..r.u32()? {
        let (name, shape, data) = r.array()?;
        arrays.insert(name, (shape, data));
    }
    if r.pos != payload.len() {
        return Err(CheckpointError::Malformed("unread bytes after arrays".into()).into());
    }

    let transform = FeatureTransform::new(config.features.clone(), vocabs)?;
    let mut take = |name: &str, expected: &[usize]| -> Result<Vec<f64>, CheckpointError> {
        let (shape, data) = arrays
            .remove(name)
            .ok_or_else(|| CheckpointError::Missing(name.into()))?;
        let expected: Vec<u64> = expected.iter().map(|&d| d as u64).collect();
        if shape != expected {
            return Err(CheckpointError::Shape {
                name: name.into(),
                expected,
                found: shape,
            });
        }
        Ok(data)
    };

    // Expected shapes follow from the config and the vocabularies.
    let item_w = transform.width(ltr_core::FeatureScope::PerItem);
    let ctx_w = transform.width(ltr_core::FeatureScope::Context);
    let arch = config.architecture();
    let mut dims = vec![arch.input_width(item_w, ctx_w)];
    dims.extend(&arch.hidden_dims);
    dims.push(arch.group_size);
    let mut layers = Vec::new();
    for (k, d) in dims.windows(2).enumerate() {
        let w = take(&format!("layer{k}.weight"), &[d[0], d[1]])?;
        let b = take(&format!("layer{k}.bias"), &[d[1]])?;
        let weight = Matrix::from_vec(d[0], d[1], w).expect("shape checked");
        layers.push(DenseLayerParams::new(weight, b).expect("shape checked"));
    }
    let mut embeddings = Vec::new();
    for (id, rows, dim) in transform.table_shapes() {
        let t = take(&format!("embedding.{id}"), &[rows, dim])?;
        embeddings.push(EmbeddingTable {
            vocabulary_id: id,
            table: Matrix::from_vec(rows, dim, t).expect("shape checked"),
        });
    }
    let params = ModelParams { layers, embeddings };
    let mut accumulators = Vec::new();
    for (name, shape) in params.block_names().iter().zip(block_shapes(&params)) {
        accumulators.push(take(&format!("adagrad.{name}"), &shape)?);
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(CheckpointError::Malformed(format!("unexpected array `{extra}`")).into());
    }
    let optimizer = AdagradState {
        config: config.adagrad(),
        accumulators,
    };
    Ok(Model::restore(config, transform, params, optimizer, step)?)
}

/// Writes via a temporary file and rename, so readers never see a partial
/// checkpoint.
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let bytes = encode(model);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LtrError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| LtrError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| LtrError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| LtrError::io(path, e))?;
    decode(&bytes)
}
