//! Dataset readers and writers: LIBSVM ranking text, JSONL-listwise, and
//! plain vocabulary files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ltr_core::data::{group_by_qid, pad_to_list_size};
use ltr_core::features::build_vocab;
use ltr_core::rng::{stream_rng, Stream};
use ltr_core::{
    ExampleList, FeatureKind, FeatureMap, FeatureScope, FeatureSpec, Item, RawRecord, TruncatePolicy, Vocabulary,
};
use serde_json::{Map, Value};

use crate::error::{LtrError, Result};

/// Name of the dense per-item feature holding densified LIBSVM columns.
pub const LIBSVM_FEATURE: &str = "libsvm";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Libsvm,
    Jsonl,
}

impl DataFormat {
    /// `.jsonl` / `.json` files are JSONL-listwise; anything else is LIBSVM.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => DataFormat::Jsonl,
            _ => DataFormat::Libsvm,
        }
    }
}

fn parse_err(source_name: &str, line: usize, msg: impl Into<String>) -> LtrError {
    LtrError::Parse {
        source_name: source_name.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Parses one LIBSVM line: `<label> qid:<id> <idx>:<val> ... [# comment]`.
/// Returns `None` for blank and comment-only lines.
pub fn parse_libsvm_line(line: &str) -> std::result::Result<Option<RawRecord>, String> {
    let (body, comment) = match line.split_once('#') {
        Some((b, c)) => (b, Some(c.trim().to_string())),
        None => (line, None),
    };
    let mut fields = body.split_whitespace();
    let Some(label) = fields.next() else {
        return Ok(None);
    };
    let label: f64 = label.parse().map_err(|_| format!("label `{label}` is not a number"))?;
    if !label.is_finite() {
        return Err(format!("label `{label}` is not finite"));
    }
    let qid = fields
        .next()
        .and_then(|f| f.strip_prefix("qid:"))
        .filter(|q| !q.is_empty())
        .ok_or("expected `qid:<id>` after the label")?;
    let mut dense = BTreeMap::new();
    for f in fields {
        let (idx, val) = f
            .split_once(':')
            .ok_or_else(|| format!("feature `{f}` is not `index:value`"))?;
        let idx: u32 = idx
            .parse()
            .map_err(|_| format!("feature index `{idx}` is not a positive integer"))?;
        if idx == 0 {
            return Err("feature indices are 1-based".into());
        }
        let val: f64 = val
            .parse()
            .map_err(|_| format!("feature value `{val}` is not a number"))?;
        dense.insert(idx, val);
    }
    Ok(Some(RawRecord {
        label,
        query_id: qid.to_string(),
        dense_features: dense,
        categorical_features: BTreeMap::new(),
        comment,
    }))
}

/// Parses a LIBSVM ranking stream. Errors carry the 1-based line number.
pub fn parse_libsvm<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| parse_err(source_name, i + 1, e.to_string()))?;
        if let Some(rec) = parse_libsvm_line(&line).map_err(|m| parse_err(source_name, i + 1, m))? {
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn max_feature_index(records: &[RawRecord]) -> usize {
    records
        .iter()
        .filter_map(|r| r.dense_features.keys().next_back())
        .max()
        .map_or(0, |&i| i as usize)
}

/// Densifies into the `libsvm` feature of `width` columns; index `i` lands in
/// column `i - 1`, missing indices are 0.0 and indices beyond `width` are
/// dropped.
pub fn densify(record: &RawRecord, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    for (&i, &x) in &record.dense_features {
        if let Some(slot) = v.get_mut(i as usize - 1) {
            *slot = x;
        }
    }
    v
}

/// One unpadded list per query, in first-appearance order.
pub fn records_to_lists(records: Vec<RawRecord>, width: usize) -> Vec<ExampleList> {
    group_by_qid(records)
        .into_iter()
        .map(|(qid, recs)| {
            let items = recs
                .iter()
                .map(|r| {
                    let mut f = FeatureMap::default();
                    f.dense.insert(LIBSVM_FEATURE.to_string(), densify(r, width));
                    f.categorical.extend(r.categorical_features.clone());
                    Item::new(f, r.label)
                })
                .collect();
            ExampleList::new(qid, FeatureMap::default(), items)
        })
        .collect()
}

pub fn write_libsvm<W: Write>(mut w: W, lists: &[ExampleList]) -> std::io::Result<()> {
    for list in lists {
        for (item, _) in list.items.iter().zip(&list.mask).filter(|(_, &m)| m) {
            write!(w, "{} qid:{}", item.label, list.query_id)?;
            if let Some(values) = item.features.dense.get(LIBSVM_FEATURE) {
                for (i, v) in values.iter().enumerate() {
                    write!(w, " {}:{}", i + 1, v)?;
                }
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

fn feature_value(name: &str, v: &Value, out: &mut FeatureMap) -> std::result::Result<(), String> {
    match v {
        Value::Number(n) => {
            out.dense
                .insert(name.to_string(), vec![n.as_f64().ok_or("bad number")?]);
        }
        Value::String(s) => {
            out.categorical.insert(name.to_string(), vec![s.clone()]);
        }
        Value::Array(xs) if xs.iter().all(Value::is_number) => {
            out.dense
                .insert(name.to_string(), xs.iter().filter_map(Value::as_f64).collect());
        }
        Value::Array(xs) if xs.iter().all(Value::is_string) => {
            let tokens = xs.iter().filter_map(|x| x.as_str().map(str::to_string)).collect();
            out.categorical.insert(name.to_string(), tokens);
        }
        _ => {
            return Err(format!(
                "feature `{name}` must be a number, a string, or an array of either"
            ))
        }
    }
    Ok(())
}

fn feature_map(v: Option<&Value>) -> std::result::Result<FeatureMap, String> {
    let mut out = FeatureMap::default();
    match v {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                feature_value(k, v, &mut out)?;
            }
        }
        Some(_) => return Err("features must be a JSON object".into()),
    }
    Ok(out)
}

/// Parses one JSONL-listwise line. A missing label reads as 0 (prediction
/// input); a missing weight reads as 1.
pub fn parse_jsonl_line(line: &str) -> std::result::Result<ExampleList, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = v.as_object().ok_or("each line must be a JSON object")?;
    let qid = match obj.get("qid") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("`qid` must be a non-empty string".into()),
    };
    let context = feature_map(obj.get("context"))?;
    let items = obj
        .get("items")
        .and_then(Value::as_array)
        .ok_or("`items` must be an array")?;
    let mut out = Vec::with_capacity(items.len());
    for it in items {
        let it = it.as_object().ok_or("each item must be an object")?;
        let num = |key: &str, default: f64| -> std::result::Result<f64, String> {
            match it.get(key) {
                None | Some(Value::Null) => Ok(default),
                Some(x) => x.as_f64().ok_or_else(|| format!("item `{key}` must be a number")),
            }
        };
        let mut item = Item::new(feature_map(it.get("features"))?, num("label", 0.0)?);
        item.weight = num("weight", 1.0)?;
        if !(item.weight > 0.0 && item.weight.is_finite()) {
            return Err(format!("item weight must be positive, got {}", item.weight));
        }
        out.push(item);
    }
    if out.is_empty() {
        return Err(format!("query `{qid}` has no items"));
    }
    Ok(ExampleList::new(qid, context, out))
}

pub fn parse_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<ExampleList>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| parse_err(source_name, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_jsonl_line(&line).map_err(|m| parse_err(source_name, i + 1, m))?);
    }
    Ok(out)
}

fn features_json(f: &FeatureMap) -> Value {
    let mut m = Map::new();
    for (k, v) in &f.dense {
        m.insert(k.clone(), Value::from(v.clone()));
    }
    // `[]` would read back as an empty dense feature; an absent categorical
    // feature already means "no tokens".
    for (k, v) in f.categorical.iter().filter(|(_, v)| !v.is_empty()) {
        m.insert(k.clone(), Value::from(v.clone()));
    }
    Value::Object(m)
}

/// JSONL-listwise form of one list (valid slots only).
pub fn list_to_json(list: &ExampleList) -> Value {
    let items: Vec<Value> = list
        .items
        .iter()
        .zip(&list.mask)
        .filter(|(_, &m)| m)
        .map(|(item, _)| {
            serde_json::json!({
                "label": item.label,
                "weight": item.weight,
                "features": features_json(&item.features),
            })
        })
        .collect();
    serde_json::json!({
        "qid": list.query_id,
        "context": features_json(&list.context),
        "items": items,
    })
}

pub fn write_jsonl<W: Write>(mut w: W, lists: &[ExampleList]) -> std::io::Result<()> {
    for list in lists {
        serde_json::to_writer(&mut w, &list_to_json(list))?;
        writeln!(w)?;
    }
    Ok(())
}

/// A loaded dataset of unpadded lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub format: DataFormat,
    pub lists: Vec<ExampleList>,
    /// Highest LIBSVM feature index seen (0 for JSONL).
    pub libsvm_width: usize,
}

/// Reads a dataset file. LIBSVM columns are densified to `libsvm_width`
/// when given, else to the largest index in the file.
pub fn load_dataset(path: &Path, libsvm_width: Option<usize>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| LtrError::io(path, e))?;
    let reader = BufReader::new(file);
    let name = path.display().to_string();
    match DataFormat::from_path(path) {
        DataFormat::Jsonl => Ok(Dataset {
            format: DataFormat::Jsonl,
            lists: parse_jsonl(reader, &name)?,
            libsvm_width: 0,
        }),
        DataFormat::Libsvm => {
            let records = parse_libsvm(reader, &name)?;
            let width = libsvm_width.unwrap_or_else(|| max_feature_index(&records));
            Ok(Dataset {
                format: DataFormat::Libsvm,
                lists: records_to_lists(records, width),
                libsvm_width: width,
            })
        }
    }
}

/// Pads or down-samples every list to `list_size`; list `i` draws from
/// sampling stream `i`.
pub fn pad_lists(
    lists: Vec<ExampleList>,
    list_size: usize,
    seed: u64,
    policy: TruncatePolicy,
) -> Result<Vec<ExampleList>> {
    lists
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            let padded = pad_to_list_size(l, list_size, &mut stream_rng(seed, Stream::Sampling, i as u64), policy)?;
            padded.validate()?;
            Ok(padded)
        })
        .collect()
}

/// Feature specs covering every feature present in `lists`, sorted by scope
/// then name. Dense widths are the largest seen; categorical features get
/// their own vocabulary named after the feature.
pub fn infer_features(lists: &[ExampleList], embedding_dim: usize) -> Vec<FeatureSpec> {
    let mut dense: BTreeMap<(u8, String), usize> = BTreeMap::new();
    let mut cats: BTreeMap<(u8, String), ()> = BTreeMap::new();
    let mut visit = |scope: u8, f: &FeatureMap| {
        for (k, v) in &f.dense {
            let w = dense.entry((scope, k.clone())).or_default();
            *w = (*w).max(v.len());
        }
        for k in f.categorical.keys() {
            cats.insert((scope, k.clone()), ());
        }
    };
    for l in lists {
        visit(0, &l.context);
        for (item, _) in l.items.iter().zip(&l.mask).filter(|(_, &m)| m) {
            visit(1, &item.features);
        }
    }
    let scope = |s: u8| {
        if s == 0 {
            FeatureScope::Context
        } else {
            FeatureScope::PerItem
        }
    };
    let mut specs: Vec<FeatureSpec> = dense
        .into_iter()
        .filter(|(_, w)| *w > 0)
        .map(|((s, name), w)| FeatureSpec::dense(&name, scope(s), w))
        .collect();
    specs.extend(
        cats.into_keys()
            .map(|(s, name)| FeatureSpec::categorical(&name, scope(s), &name, embedding_dim)),
    );
    specs.sort_by(|a, b| (a.scope != FeatureScope::Context, &a.name).cmp(&(b.scope != FeatureScope::Context, &b.name)));
    specs
}

/// Tokens of every categorical feature that uses `vocabulary_id`.
pub fn collect_tokens<'a>(lists: &'a [ExampleList], specs: &[FeatureSpec], vocabulary_id: &str) -> Vec<&'a str> {
    let names: Vec<(FeatureScope, &str)> = specs
        .iter()
        .filter(|s| matches!(&s.kind, FeatureKind::Categorical { vocabulary_id: v, .. } if v == vocabulary_id))
        .map(|s| (s.scope, s.name.as_str()))
        .collect();
    let mut out = Vec::new();
    for l in lists {
        for &(scope, name) in &names {
            let maps: Vec<&FeatureMap> = match scope {
                FeatureScope::Context => vec![&l.context],
                FeatureScope::PerItem => l
                    .items
                    .iter()
                    .zip(&l.mask)
                    .filter(|(_, &m)| m)
                    .map(|(i, _)| &i.features)
                    .collect(),
            };
            for f in maps {
                if let Some(tokens) = f.categorical.get(name) {
                    out.extend(tokens.iter().map(String::as_str));
                }
            }
        }
    }
    out
}

/// Builds one vocabulary per referenced id from the training lists.
pub fn build_vocabularies(
    lists: &[ExampleList],
    specs: &[FeatureSpec],
    min_frequency: usize,
    oov_buckets: usize,
) -> Result<BTreeMap<String, Vocabulary>> {
    let mut out = BTreeMap::new();
    for s in specs {
        if let FeatureKind::Categorical { vocabulary_id, .. } = &s.kind {
            if !out.contains_key(vocabulary_id) {
                let tokens = collect_tokens(lists, specs, vocabulary_id);
                out.insert(
                    vocabulary_id.clone(),
                    build_vocab(vocabulary_id, tokens, min_frequency, oov_buckets)?,
                );
            }
        }
    }
    Ok(out)
}

/// Reads a vocabulary file: one token per line, index = line order.
pub fn read_vocab(path: &Path, id: &str, oov_buckets: usize) -> Result<Vocabulary> {
    let file = File::open(path).map_err(|e| LtrError::io(path, e))?;
    let mut tokens = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| LtrError::io(path, e))?;
        let t = line.trim_end_matches('\r');
        if !t.is_empty() {
            tokens.push(t.to_string());
        }
    }
    Ok(Vocabulary::from_tokens(id, tokens, oov_buckets)?)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let file = File::create(path).map_err(|e| LtrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in vocab.tokens() {
        writeln!(w, "{t}").map_err(|e| LtrError::io(path, e))?;
    }
    w.flush().map_err(|e| LtrError::io(path, e))
}
