//! Hand-engineered aggregate features.
//!
//! For every numeric feature, six aggregates (sum, count, mean, min, max,
//! population variance) are taken over the whole history and over each
//! group of events sharing one of the `top_n` most frequent training-set
//! values of a categorical feature. Empty groups give all zeros. `count` is
//! the number of events in the group; the other aggregates skip missing
//! numeric values.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::data_model::{EntityHistory, EventSchema, SECONDS_PER_DAY};
use crate::table::FeatureTable;
use crate::{Error, Result};

pub const DEFAULT_TOP_N: usize = 32;
pub const DEFAULT_WINDOWS_DAYS: [f64; 2] = [7.0, 30.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Sum,
    Count,
    Mean,
    Min,
    Max,
    Variance,
}

impl Aggregate {
    pub const ALL: [Aggregate; 6] = [
        Aggregate::Sum,
        Aggregate::Count,
        Aggregate::Mean,
        Aggregate::Min,
        Aggregate::Max,
        Aggregate::Variance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aggregate::Sum => "sum",
            Aggregate::Count => "count",
            Aggregate::Mean => "mean",
            Aggregate::Min => "min",
            Aggregate::Max => "max",
            Aggregate::Variance => "var",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub numeric: String,
    pub aggregate: Aggregate,
    /// `(categorical feature, value)` for group aggregates.
    pub group: Option<(String, String)>,
}

impl FeatureDescriptor {
    pub fn name(&self) -> String {
        match &self.group {
            None => format!("{}_{}", self.numeric, self.aggregate.name()),
            Some((f, v)) => format!("{}_{}__{f}={v}", self.numeric, self.aggregate.name()),
        }
    }
}

/// Most frequent values per categorical feature, frequency measured on the
/// training histories; ties are broken by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopValues {
    pub top_n: usize,
    pub values: Vec<(String, Vec<String>)>,
}

impl TopValues {
    pub fn fit(train: &[EntityHistory], schema: &EventSchema, top_n: usize) -> Self {
        let values = schema
            .categorical_features()
            .map(|(fi, spec)| {
                let mut counts: HashMap<String, usize> = HashMap::new();
                for e in train.iter().flat_map(|h| &h.events) {
                    if let Some(k) = e.values[fi].category_key() {
                        *counts.entry(k).or_default() += 1;
                    }
                }
                let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
                ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                ranked.truncate(top_n);
                (
                    spec.name.clone(),
                    ranked.into_iter().map(|(v, _)| v).collect(),
                )
            })
            .collect();
        Self { top_n, values }
    }
}

/// Ordered layout of a hand-feature vector: groups (global first, then each
/// categorical value), within a group numerics in schema order, within a
/// numeric the six aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVectorSpec {
    pub descriptors: Vec<FeatureDescriptor>,
}

impl FeatureVectorSpec {
    pub fn new(schema: &EventSchema, top: &TopValues) -> Result<Self> {
        let numerics: Vec<String> = schema
            .numeric_features()
            .map(|(_, f)| f.name.clone())
            .collect();
        let mut groups: Vec<Option<(String, String)>> = vec![None];
        for (feature, values) in &top.values {
            match schema.feature_index(feature) {
                Some(i)
                    if schema.features[i].kind == crate::data_model::FeatureKind::Categorical => {}
                _ => {
                    return Err(Error::Schema(format!(
                        "`{feature}` is not a categorical feature of the schema"
                    )))
                }
            }
            groups.extend(values.iter().map(|v| Some((feature.clone(), v.clone()))));
        }
        let mut descriptors = Vec::new();
        for g in &groups {
            for n in &numerics {
                for a in Aggregate::ALL {
                    descriptors.push(FeatureDescriptor {
                        numeric: n.clone(),
                        aggregate: a,
                        group: g.clone(),
                    });
                }
            }
        }
        Ok(Self { descriptors })
    }

    pub fn dim(&self) -> usize {
        self.descriptors.len()
    }

    pub fn header(&self) -> Vec<String> {
        self.descriptors
            .iter()
            .map(FeatureDescriptor::name)
            .collect()
    }

    /// Same layout with every name prefixed, for windowed variants.
    pub fn header_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.descriptors
            .iter()
            .map(|d| format!("{prefix}{}", d.name()))
            .collect()
    }
}

/// Six aggregates of `values` with `count` events in the group.
pub fn aggregates(values: &[f64], count: usize) -> [f64; 6] {
    if count == 0 || values.is_empty() {
        return [0.0, count as f64, 0.0, 0.0, 0.0, 0.0];
    }
    let n = values.len() as f64;
    let sum: f64 = values.iter().sum();
    let mean = sum / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [sum, count as f64, mean, min, max, var]
}

/// Precomputed column positions for fast extraction.
#[derive(Debug, Clone)]
pub struct HandFeatureExtractor {
    pub spec: FeatureVectorSpec,
    numeric_idx: Vec<usize>,
    /// Per categorical feature: schema index and value → group slot (1-based).
    groups: Vec<(usize, BTreeMap<String, usize>)>,
    n_groups: usize,
}

impl HandFeatureExtractor {
    pub fn new(schema: &EventSchema, top: &TopValues) -> Result<Self> {
        let spec = FeatureVectorSpec::new(schema, top)?;
        let numeric_idx = schema.numeric_features().map(|(i, _)| i).collect();
        let mut groups = Vec::new();
        let mut slot = 1;
        for (feature, values) in &top.values {
            let fi = schema.feature_index(feature).expect("checked by spec");
            let mut map = BTreeMap::new();
            for v in values {
                map.insert(v.clone(), slot);
                slot += 1;
            }
            groups.push((fi, map));
        }
        Ok(Self {
            spec,
            numeric_idx,
            groups,
            n_groups: slot,
        })
    }

    /// Features of the events `events`, which may be any slice of a history.
    pub fn extract_events(&self, events: &[crate::data_model::RawEvent]) -> Vec<f64> {
        let nn = self.numeric_idx.len();
        let mut values: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); nn]; self.n_groups];
        let mut counts = vec![0usize; self.n_groups];
        let mut slots = Vec::with_capacity(1 + self.groups.len());
        for e in events {
            slots.clear();
            slots.push(0);
            for (fi, map) in &self.groups {
                if let Some(k) = e.values[*fi].category_key() {
                    if let Some(&s) = map.get(&k) {
                        slots.push(s);
                    }
                }
            }
            for &s in &slots {
                counts[s] += 1;
                for (j, &ni) in self.numeric_idx.iter().enumerate() {
                    if let Some(x) = e.values[ni].as_number() {
                        values[s][j].push(x);
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(self.spec.dim());
        for g in 0..self.n_groups {
            for vals in values[g].iter() {
                out.extend_from_slice(&aggregates(vals, counts[g]));
            }
        }
        out
    }

    pub fn extract(&self, history: &EntityHistory) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::invalid(format!(
                "history `{}` is empty",
                history.entity_id
            )));
        }
        Ok(self.extract_events(&history.events))
    }
}

/// Hand features of one history and the layout they follow.
pub fn hand_features(
    history: &EntityHistory,
    schema: &EventSchema,
    top: &TopValues,
) -> Result<(Vec<f64>, FeatureVectorSpec)> {
    let x = HandFeatureExtractor::new(schema, top)?;
    let v = x.extract(history)?;
    Ok((v, x.spec))
}

/// Entity-level hand features for many histories.
pub fn hand_feature_table(
    histories: &[EntityHistory],
    schema: &EventSchema,
    top: &TopValues,
) -> Result<FeatureTable> {
    let x = HandFeatureExtractor::new(schema, top)?;
    let rows = histories
        .iter()
        .map(|h| x.extract(h))
        .collect::<Result<Vec<_>>>()?;
    FeatureTable::new(
        histories.iter().map(|h| h.entity_id.clone()).collect(),
        x.spec.header(),
        rows,
    )
}

/// Event-level preset: for each event, hand features over the trailing
/// windows `(t − w, t]` (the event itself included) for each window length
/// in days. Rows are keyed `entity#index`.
pub fn windowed_feature_table(
    histories: &[EntityHistory],
    schema: &EventSchema,
    top: &TopValues,
    windows_days: &[f64],
) -> Result<FeatureTable> {
    if windows_days.is_empty() || windows_days.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("window lengths must be positive"));
    }
    let x = HandFeatureExtractor::new(schema, top)?;
    let mut columns = Vec::new();
    for w in windows_days {
        columns.extend(x.spec.header_with_prefix(&format!("w{w}d_")));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for h in histories {
        let mut starts = vec![0usize; windows_days.len()];
        for (t, e) in h.events.iter().enumerate() {
            let mut row = Vec::with_capacity(columns.len());
            for (wi, w) in windows_days.iter().enumerate() {
                let span = (w * SECONDS_PER_DAY).round() as i64;
                while e.timestamp - h.events[starts[wi]].timestamp >= span {
                    starts[wi] += 1;
                }
                row.extend(x.extract_events(&h.events[starts[wi]..=t]));
            }
            ids.push(crate::synth::event_id(&h.entity_id, t));
            rows.push(row);
        }
    }
    FeatureTable::new(ids, columns, rows)
}
