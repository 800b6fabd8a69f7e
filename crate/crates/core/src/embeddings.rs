//! Event, entity and category embeddings from a trained encoder, plus
//! cosine nearest-neighbour queries and file export.
//!
//! Binary embedding files (little endian):
//!
//! ```text
//! magic   8 bytes  "NPPREMB1"
//! dim     u32
//! count   u64
//! record  id_len u32, id (UTF-8), support u64, dim × f32
//! ```

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{EncodedSequence, Vocabulary};
use crate::model::NpprModel;
use crate::{Error, Result};

pub const DEFAULT_MIN_SUPPORT: usize = 10;
/// Value reported for events whose category was out of vocabulary.
pub const OOV_LABEL: &str = "<oov>";
const BINARY_MAGIC: &[u8; 8] = b"NPPREMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingStrategy {
    LastEvent,
    Average,
}

impl FromStr for PoolingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_event" | "last" => Ok(Self::LastEvent),
            "average" | "avg" | "mean" => Ok(Self::Average),
            other => Err(Error::invalid(format!(
                "unknown pooling `{other}` (expected last_event or average)"
            ))),
        }
    }
}

/// Reduces per-event embeddings to one vector.
pub fn pool(embeddings: &[Vec<f64>], strategy: PoolingStrategy) -> Result<Vec<f64>> {
    let last = embeddings
        .last()
        .ok_or_else(|| Error::invalid("cannot pool an empty history"))?;
    Ok(match strategy {
        PoolingStrategy::LastEvent => last.clone(),
        PoolingStrategy::Average => {
            let mut sum = vec![0.0; last.len()];
            for e in embeddings {
                if e.len() != sum.len() {
                    return Err(Error::shape("embeddings differ in dimension"));
                }
                sum.iter_mut().zip(e).for_each(|(s, v)| *s += v);
            }
            let n = embeddings.len() as f64;
            sum.iter_mut().for_each(|s| *s /= n);
            sum
        }
    })
}

pub fn entity_embedding(
    model: &NpprModel,
    seq: &EncodedSequence,
    strategy: PoolingStrategy,
) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::invalid(format!(
            "history `{}` is empty",
            seq.entity_id
        )));
    }
    pool(&model.encode_sequence(seq)?, strategy)
}

pub fn entity_embeddings(
    model: &NpprModel,
    data: &[EncodedSequence],
    strategy: PoolingStrategy,
) -> Result<Vec<Vec<f64>>> {
    data.par_iter()
        .map(|s| entity_embedding(model, s, strategy))
        .collect()
}

/// Embeddings of every event of every sequence.
pub fn event_embeddings(model: &NpprModel, data: &[EncodedSequence]) -> Result<Vec<Vec<Vec<f64>>>> {
    data.par_iter().map(|s| model.encode_sequence(s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEmbedding {
    pub feature: String,
    pub value: String,
    pub vector: Vec<f64>,
    pub support: usize,
    /// Support is below the requested minimum; kept but flagged.
    pub below_min_support: bool,
}

/// Mean event embedding per observed value of categorical `feature`.
pub fn category_embeddings(
    model: &NpprModel,
    data: &[EncodedSequence],
    vocabularies: &[Vocabulary],
    feature: &str,
    min_support: usize,
) -> Result<Vec<CategoryEmbedding>> {
    let events = event_embeddings(model, data)?;
    category_embeddings_from(
        &events,
        data,
        &model.layout.categorical,
        vocabularies,
        feature,
        min_support,
    )
}

/// As [`category_embeddings`] with precomputed event embeddings
/// (`events[i][t]` belongs to `data[i].events[t]`).
pub fn category_embeddings_from(
    events: &[Vec<Vec<f64>>],
    data: &[EncodedSequence],
    categorical: &[String],
    vocabularies: &[Vocabulary],
    feature: &str,
    min_support: usize,
) -> Result<Vec<CategoryEmbedding>> {
    let k = categorical
        .iter()
        .position(|c| c == feature)
        .ok_or_else(|| Error::invalid(format!("`{feature}` is not a categorical feature")))?;
    let vocab = vocabularies
        .get(k)
        .ok_or_else(|| Error::invalid(format!("no vocabulary for `{feature}`")))?;
    let dim = events.iter().flatten().next().map_or(0, |e| e.len());
    let card = vocab.cardinality();
    let mut sums = vec![vec![0.0; dim]; card];
    let mut counts = vec![0usize; card];
    if events.len() != data.len() {
        return Err(Error::shape(
            "event embeddings and sequences differ in count",
        ));
    }
    for (embs, seq) in events.iter().zip(data) {
        if embs.len() != seq.len() {
            return Err(Error::shape(format!(
                "embeddings of `{}` do not match its events",
                seq.entity_id
            )));
        }
        for (e, ev) in embs.iter().zip(&seq.events) {
            let c = ev.categories[k];
            if c >= card {
                return Err(Error::shape(format!(
                    "category index {c} outside vocabulary of `{feature}`"
                )));
            }
            counts[c] += 1;
            sums[c].iter_mut().zip(e).for_each(|(s, v)| *s += v);
        }
    }
    Ok((0..card)
        .filter(|&c| counts[c] > 0)
        .map(|c| {
            let n = counts[c] as f64;
            CategoryEmbedding {
                feature: feature.to_string(),
                value: vocab.value(c).unwrap_or(OOV_LABEL).to_string(),
                vector: sums[c].iter().map(|s| s / n).collect(),
                support: counts[c],
                below_min_support: counts[c] < min_support,
            }
        })
        .collect())
}

/// `1 − u·v / (‖u‖‖v‖)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine distance of a zero vector"));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbour {
    pub value: String,
    pub distance: f64,
}

/// The `k` values nearest to `query` (itself excluded), ordered by
/// distance and then by value.
pub fn nearest_neighbours(
    embeddings: &[CategoryEmbedding],
    query: &str,
    k: usize,
) -> Result<Vec<Neighbour>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let q = embeddings
        .iter()
        .find(|c| c.value == query)
        .ok_or_else(|| Error::invalid(format!("query value `{query}` not among the embeddings")))?;
    let mut out = embeddings
        .iter()
        .filter(|c| c.value != query)
        .map(|c| {
            Ok(Neighbour {
                value: c.value.clone(),
                distance: cosine_distance(&q.vector, &c.vector)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| match a.distance.total_cmp(&b.distance) {
        Ordering::Equal => a.value.cmp(&b.value),
        o => o,
    });
    out.truncate(k);
    Ok(out)
}

/// One exported embedding: an entity, event or category value.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub support: u64,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, support: u64, vector: &[f64]) -> Self {
        Self {
            id: id.into(),
            support,
            vector: vector.iter().map(|&x| x as f32).collect(),
        }
    }
}

fn common_dim(records: &[EmbeddingRecord]) -> Result<usize> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    if records.iter().any(|r| r.vector.len() != dim) {
        return Err(Error::shape("embedding records differ in dimension"));
    }
    Ok(dim)
}

/// CSV with header `id,support,e0,…`; values are 32-bit floats.
pub fn write_embeddings_csv(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = common_dim(records)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "support".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.clone(), r.support.to_string()];
        row.extend(r.vector.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_embeddings_binary(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = common_dim(records)?;
    let mut buf = Vec::with_capacity(16 + records.len() * (16 + 4 * dim));
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
        buf.extend_from_slice(r.id.as_bytes());
        buf.extend_from_slice(&r.support.to_le_bytes());
        for v in &r.vector {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_binary(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = || {
        Error::invalid(format!(
            "{}: truncated or malformed embedding file",
            path.display()
        ))
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(bad)?;
        pos += n;
        Ok(s)
    };
    if take(8)? != BINARY_MAGIC {
        return Err(bad());
    }
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let id = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad())?;
        let support = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let vector = take(4 * dim)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(EmbeddingRecord {
            id,
            support,
            vector,
        });
    }
    if pos != bytes.len() {
        return Err(bad());
    }
    Ok(out)
}

/// Neighbour report with columns `query,rank,value,distance`.
pub fn write_neighbours_csv(path: &Path, reports: &[(String, Vec<Neighbour>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["query", "rank", "value", "distance"])?;
    for (query, list) in reports {
        for (rank, n) in list.iter().enumerate() {
            w.write_record([
                query.clone(),
                (rank + 1).to_string(),
                n.value.clone(),
                format!("{:.9}", n.distance),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
