//! Event schema, CSV ingestion, normalization and entity-level splits.
//!
//! A schema file is TOML with two top-level keys and one `[[features]]`
//! table per model feature, in decoder slice order:
//!
//! ```toml
//! entity_field = "entity_id"
//! timestamp_field = "timestamp"
//!
//! [[features]]
//! name = "amount"
//! kind = "numeric"
//!
//! [[features]]
//! name = "mcc"
//! kind = "categorical"
//! ```
//!
//! Categorical cardinalities are not declared in the file. They come from
//! the vocabulary fitted on training data, see [`NormStats`].

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Lower bound applied to every fitted standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Name given to the derived time-gap numeric feature.
pub const TIME_GAP_FEATURE: &str = "time_gap";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventSchema {
    pub entity_field: String,
    pub timestamp_field: String,
    pub features: Vec<FeatureSpec>,
}

impl EventSchema {
    pub fn new(
        entity_field: impl Into<String>,
        timestamp_field: impl Into<String>,
        features: Vec<FeatureSpec>,
    ) -> Result<Self> {
        let schema = Self {
            entity_field: entity_field.into(),
            timestamp_field: timestamp_field.into(),
            features,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entity_field == self.timestamp_field {
            return Err(Error::Schema(
                "entity and timestamp fields must differ".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.features {
            if f.name.is_empty() {
                return Err(Error::Schema("feature with empty name".into()));
            }
            if f.name == self.entity_field || f.name == self.timestamp_field {
                return Err(Error::Schema(format!(
                    "`{}` is the entity or timestamp field and cannot be a model feature",
                    f.name
                )));
            }
            if f.name == TIME_GAP_FEATURE {
                return Err(Error::Schema(format!(
                    "`{TIME_GAP_FEATURE}` is reserved for the derived time-gap feature"
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: EventSchema = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to TOML")
    }

    pub fn numeric_features(&self) -> impl Iterator<Item = (usize, &FeatureSpec)> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FeatureKind::Numeric)
    }

    pub fn categorical_features(&self) -> impl Iterator<Item = (usize, &FeatureSpec)> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.kind == FeatureKind::Categorical)
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Stable digest of the schema, used to detect checkpoint/data mismatches.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint::sha256_hex(
            serde_json::to_string(self)
                .expect("schema serializes")
                .as_bytes(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RawValue {
    Number(f64),
    Text(String),
    Missing,
}

impl RawValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            RawValue::Number(x) => Some(*x),
            _ => None,
        }
    }

    /// Categorical key of the value; numbers are keyed by their shortest
    /// round-trip decimal form.
    pub fn category_key(&self) -> Option<String> {
        match self {
            RawValue::Text(s) => Some(s.clone()),
            RawValue::Number(x) => Some(x.to_string()),
            RawValue::Missing => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawEvent {
    pub entity_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    /// One value per schema feature, in schema order.
    pub values: Vec<RawValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityHistory {
    pub entity_id: String,
    pub events: Vec<RawEvent>,
}

impl EntityHistory {
    /// Builds a history, sorting events by timestamp (stable for ties).
    pub fn new(entity_id: impl Into<String>, mut events: Vec<RawEvent>) -> Result<Self> {
        let entity_id = entity_id.into();
        if let Some(e) = events.iter().find(|e| e.entity_id != entity_id) {
            return Err(Error::invalid(format!(
                "event of entity `{}` in history of `{entity_id}`",
                e.entity_id
            )));
        }
        events.sort_by_key(|e| e.timestamp);
        Ok(Self { entity_id, events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Parses epoch seconds or an ISO-8601 / RFC 3339 timestamp (naive forms are UTC).
pub fn parse_timestamp(text: &str) -> Option<i64> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Reads an event CSV and groups rows into per-entity histories.
///
/// Histories come out in order of first appearance of their entity id, each
/// sorted by timestamp with file order breaking ties.
pub fn ingest_csv(path: &Path, schema: &EventSchema) -> Result<Vec<EntityHistory>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, path, schema)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    path: &Path,
    schema: &EventSchema,
) -> Result<Vec<EntityHistory>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if is_empty_input(&e) => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Ok(Vec::new());
    }
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let entity_col = column(&schema.entity_field)?;
    let ts_col = column(&schema.timestamp_field)?;
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column(&f.name))
        .collect::<Result<Vec<_>>>()?;

    let mut order: HashMap<String, usize> = HashMap::new();
    let mut grouped: Vec<(String, Vec<RawEvent>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| Error::Row {
            path: path.to_path_buf(),
            line,
            message,
        };
        let entity_id = record[entity_col].trim().to_string();
        if entity_id.is_empty() {
            return Err(row_err(format!("empty `{}`", schema.entity_field)));
        }
        let ts_text = &record[ts_col];
        let timestamp = parse_timestamp(ts_text).ok_or_else(|| {
            row_err(format!(
                "cannot parse timestamp `{ts_text}` in `{}`",
                schema.timestamp_field
            ))
        })?;
        let mut values = Vec::with_capacity(schema.features.len());
        for (spec, &col) in schema.features.iter().zip(&feature_cols) {
            let cell = record[col].trim();
            let value = if cell.is_empty() {
                RawValue::Missing
            } else {
                match spec.kind {
                    FeatureKind::Numeric => match cell.parse::<f64>() {
                        Ok(x) if x.is_finite() => RawValue::Number(x),
                        _ => {
                            return Err(row_err(format!(
                                "cannot parse numeric value `{cell}` in `{}`",
                                spec.name
                            )))
                        }
                    },
                    FeatureKind::Categorical => RawValue::Text(cell.to_string()),
                }
            };
            values.push(value);
        }
        let slot = *order.entry(entity_id.clone()).or_insert_with(|| {
            grouped.push((entity_id.clone(), Vec::new()));
            grouped.len() - 1
        });
        grouped[slot].1.push(RawEvent {
            entity_id,
            timestamp,
            values,
        });
    }
    grouped
        .into_iter()
        .map(|(id, events)| EntityHistory::new(id, events))
        .collect()
}

fn is_empty_input(e: &csv::Error) -> bool {
    matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof)
}

/// Writes histories in the ingest format (entity, timestamp, features).
pub fn write_events_csv(
    path: &Path,
    schema: &EventSchema,
    histories: &[EntityHistory],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![schema.entity_field.clone(), schema.timestamp_field.clone()];
    header.extend(schema.features.iter().map(|f| f.name.clone()));
    w.write_record(&header)?;
    for h in histories {
        for e in &h.events {
            let mut row = vec![e.entity_id.clone(), e.timestamp.to_string()];
            row.extend(e.values.iter().map(|v| match v {
                RawValue::Number(x) => x.to_string(),
                RawValue::Text(s) => s.clone(),
                RawValue::Missing => String::new(),
            }));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population mean and standard deviation (floored at [`STD_FLOOR`]).
    /// An empty sample gives mean 0 and std 1.
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: 0.0,
                std: 1.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        }
    }

    pub fn z(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

/// Category vocabulary; index 0 is reserved for out-of-vocabulary values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    values: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const OOV: usize = 0;

    fn insert(&mut self, value: &str) {
        if !self.index.contains_key(value) {
            self.values.push(value.to_string());
            self.index.insert(value.to_string(), self.values.len());
        }
    }

    pub fn index_of(&self, value: &str) -> usize {
        self.index.get(value).copied().unwrap_or(Self::OOV)
    }

    /// Number of indices including the OOV slot.
    pub fn cardinality(&self) -> usize {
        self.values.len() + 1
    }

    /// Raw value at `index`, `None` for OOV.
    pub fn value(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.values.get(i))
            .map(String::as_str)
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(values: Vec<String>) -> Self {
        let mut v = Vocabulary::default();
        for s in &values {
            v.insert(s);
        }
        v
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.values
    }
}

/// Training-set statistics needed to encode events.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub schema_fingerprint: String,
    /// One entry per numeric schema feature, in schema order.
    pub numeric: Vec<MeanStd>,
    /// One entry per categorical schema feature, in schema order.
    pub vocabularies: Vec<Vocabulary>,
    /// Statistics of `ln(1 + gap_days)` over within-entity consecutive gaps.
    pub time_gap: MeanStd,
}

/// Time-gap transform applied before z-scoring.
pub fn transform_gap(gap_seconds: f64) -> f64 {
    (gap_seconds / SECONDS_PER_DAY).ln_1p()
}

pub fn fit_normalization(train: &[EntityHistory], schema: &EventSchema) -> Result<NormStats> {
    let n_events: usize = train.iter().map(EntityHistory::len).sum();
    if n_events == 0 {
        return Err(Error::invalid("cannot fit normalization on zero events"));
    }
    let numeric = schema
        .numeric_features()
        .map(|(fi, _)| {
            let values: Vec<f64> = train
                .iter()
                .flat_map(|h| h.events.iter())
                .filter_map(|e| e.values[fi].as_number())
                .collect();
            MeanStd::fit(&values)
        })
        .collect();
    let vocabularies = schema
        .categorical_features()
        .map(|(fi, _)| {
            let mut vocab = Vocabulary::default();
            for e in train.iter().flat_map(|h| h.events.iter()) {
                if let Some(key) = e.values[fi].category_key() {
                    vocab.insert(&key);
                }
            }
            vocab
        })
        .collect();
    let gaps: Vec<f64> = train
        .iter()
        .flat_map(|h| {
            h.events
                .windows(2)
                .map(|w| transform_gap((w[1].timestamp - w[0].timestamp) as f64))
        })
        .collect();
    Ok(NormStats {
        schema_fingerprint: schema.fingerprint(),
        numeric,
        vocabularies,
        time_gap: MeanStd::fit(&gaps),
    })
}

/// Dimensions of an encoded event, shared by the encoder input and the
/// decoder output slices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    /// Numeric feature names in encoded order; the time-gap feature is last.
    pub numeric: Vec<String>,
    pub categorical: Vec<String>,
    pub cardinalities: Vec<usize>,
    /// Decoder output slices in schema order, time gap last.
    pub slices: Vec<OutputSlice>,
}

/// Where one feature's prediction lives in a decoder output vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSlice {
    pub offset: usize,
    pub target: SliceTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SliceTarget {
    /// Index into [`EncodedEvent::numeric`].
    Numeric(usize),
    /// Index into [`EncodedEvent::categories`], with the cardinality.
    Categorical(usize, usize),
}

impl OutputSlice {
    pub fn width(&self) -> usize {
        match self.target {
            SliceTarget::Numeric(_) => 1,
            SliceTarget::Categorical(_, c) => c,
        }
    }
}

impl FeatureLayout {
    pub fn new(schema: &EventSchema, stats: &NormStats) -> Self {
        let cardinalities: Vec<usize> = stats
            .vocabularies
            .iter()
            .map(Vocabulary::cardinality)
            .collect();
        Self::from_parts(schema, &cardinalities)
    }

    /// Layout for a schema with explicitly given categorical cardinalities.
    pub fn from_parts(schema: &EventSchema, cardinalities: &[usize]) -> Self {
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        let mut slices = Vec::new();
        let mut offset = 0;
        for f in &schema.features {
            let target = match f.kind {
                FeatureKind::Numeric => {
                    numeric.push(f.name.clone());
                    SliceTarget::Numeric(numeric.len() - 1)
                }
                FeatureKind::Categorical => {
                    categorical.push(f.name.clone());
                    let i = categorical.len() - 1;
                    SliceTarget::Categorical(i, cardinalities[i])
                }
            };
            let slice = OutputSlice { offset, target };
            offset += slice.width();
            slices.push(slice);
        }
        numeric.push(TIME_GAP_FEATURE.to_string());
        slices.push(OutputSlice {
            offset,
            target: SliceTarget::Numeric(numeric.len() - 1),
        });
        Self {
            numeric,
            categorical,
            cardinalities: cardinalities.to_vec(),
            slices,
        }
    }

    /// Feature names in slice order.
    pub fn slice_names(&self) -> Vec<&str> {
        self.slices
            .iter()
            .map(|s| match s.target {
                SliceTarget::Numeric(i) => self.numeric[i].as_str(),
                SliceTarget::Categorical(i, _) => self.categorical[i].as_str(),
            })
            .collect()
    }

    pub fn n_numeric(&self) -> usize {
        self.numeric.len()
    }

    pub fn n_categorical(&self) -> usize {
        self.cardinalities.len()
    }

    /// Width of a decoder output: one slot per numeric, `C` per categorical.
    pub fn output_dim(&self) -> usize {
        self.n_numeric() + self.cardinalities.iter().sum::<usize>()
    }

    pub fn check_event(&self, event: &EncodedEvent) -> Result<()> {
        if event.numeric.len() != self.n_numeric() || event.categories.len() != self.n_categorical()
        {
            return Err(Error::shape(format!(
                "encoded event has {} numeric / {} categorical values, layout expects {} / {}",
                event.numeric.len(),
                event.categories.len(),
                self.n_numeric(),
                self.n_categorical()
            )));
        }
        for (i, (&c, &card)) in event.categories.iter().zip(&self.cardinalities).enumerate() {
            if c >= card {
                return Err(Error::shape(format!(
                    "category index {c} out of range for `{}` (cardinality {card})",
                    self.categorical[i]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedEvent {
    /// z-scored numerics in schema order followed by the time-gap feature.
    pub numeric: Vec<f64>,
    pub categories: Vec<usize>,
}

/// An encoded history together with the raw timestamps needed for
/// past-reconstruction time differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub entity_id: String,
    pub events: Vec<EncodedEvent>,
    pub timestamps: Vec<i64>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Prefix of the first `n` events.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            entity_id: self.entity_id.clone(),
            events: self.events[..n].to_vec(),
            timestamps: self.timestamps[..n].to_vec(),
        }
    }
}

pub fn encode_history(
    history: &EntityHistory,
    stats: &NormStats,
    schema: &EventSchema,
) -> Result<EncodedSequence> {
    if stats.schema_fingerprint != schema.fingerprint() {
        return Err(Error::Schema(
            "normalization statistics were fitted with a different schema".into(),
        ));
    }
    let mut events = Vec::with_capacity(history.len());
    let mut prev_ts: Option<i64> = None;
    for e in &history.events {
        if e.values.len() != schema.features.len() {
            return Err(Error::Schema(format!(
                "event has {} values, schema has {} features",
                e.values.len(),
                schema.features.len()
            )));
        }
        let mut numeric: Vec<f64> = schema
            .numeric_features()
            .zip(&stats.numeric)
            .map(|((fi, _), ms)| e.values[fi].as_number().map_or(0.0, |x| ms.z(x)))
            .collect();
        let gap = prev_ts.map_or(0, |p| e.timestamp - p) as f64;
        numeric.push(stats.time_gap.z(transform_gap(gap)));
        let categories = schema
            .categorical_features()
            .zip(&stats.vocabularies)
            .map(|((fi, _), vocab)| {
                e.values[fi]
                    .category_key()
                    .map_or(Vocabulary::OOV, |k| vocab.index_of(&k))
            })
            .collect();
        events.push(EncodedEvent {
            numeric,
            categories,
        });
        prev_ts = Some(e.timestamp);
    }
    Ok(EncodedSequence {
        entity_id: history.entity_id.clone(),
        events,
        timestamps: history.events.iter().map(|e| e.timestamp).collect(),
    })
}

pub fn encode_all(
    histories: &[EntityHistory],
    stats: &NormStats,
    schema: &EventSchema,
) -> Result<Vec<EncodedSequence>> {
    histories
        .iter()
        .map(|h| encode_history(h, stats, schema))
        .collect()
}

fn check_fraction(f: f64, what: &str) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::invalid(format!("{what} must be in (0, 1), got {f}")));
    }
    Ok(())
}

/// Seeded entity-level train/test partition; both sides keep input order.
///
/// The test side holds `round(test_fraction * N)` items, clamped to
/// `[1, N - 1]` so that neither side is empty.
pub fn split_entities<T: Clone>(
    dataset: &[T],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    check_fraction(test_fraction, "test fraction")?;
    let n = dataset.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 entities to split, got {n}"
        )));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &idx[..n_test] {
        is_test[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (item, t) in dataset.iter().zip(is_test) {
        if t {
            test.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, test))
}

/// Assigns each entity to train/validation/test and truncates its events to
/// that split's time window: `[.., b0)`, `[b0, b1)`, `[b1, ..)`.
/// Histories left empty by truncation are dropped.
pub fn split_temporal_and_entity(
    dataset: &[EntityHistory],
    boundaries: [i64; 2],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<EntityHistory>, Vec<EntityHistory>, Vec<EntityHistory>)> {
    if boundaries[0] >= boundaries[1] {
        return Err(Error::invalid(format!(
            "time boundaries must be strictly increasing, got {} and {}",
            boundaries[0], boundaries[1]
        )));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split fractions must be in [0, 1] and sum to 1, got {fractions:?}"
        )));
    }
    let n = dataset.len();
    let n_val = (fractions[1] * n as f64).round() as usize;
    let n_test = ((fractions[2] * n as f64).round() as usize).min(n - n_val.min(n));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0usize; n];
    for &i in &idx[..n_val.min(n)] {
        assignment[i] = 1;
    }
    for &i in idx.iter().skip(n_val.min(n)).take(n_test) {
        assignment[i] = 2;
    }
    let windows = [
        (i64::MIN, boundaries[0]),
        (boundaries[0], boundaries[1]),
        (boundaries[1], i64::MAX),
    ];
    let mut out: [Vec<EntityHistory>; 3] = Default::default();
    for (h, &split) in dataset.iter().zip(&assignment) {
        let (lo, hi) = windows[split];
        let events: Vec<RawEvent> = h
            .events
            .iter()
            .filter(|e| e.timestamp >= lo && (e.timestamp < hi || hi == i64::MAX))
            .cloned()
            .collect();
        if !events.is_empty() {
            out[split].push(EntityHistory {
                entity_id: h.entity_id.clone(),
                events,
            });
        }
    }
    for (name, part) in ["train", "validation", "test"].iter().zip(&out) {
        if part.is_empty() {
            log::warn!("{name} split is empty after temporal truncation");
        }
    }
    let [train, val, test] = out;
    Ok((train, val, test))
}
