//! Versioned JSON checkpoint.
//!
//! Layout (format version 1):
//!
//! ```text
//! {
//!   "format": "nppr-checkpoint",
//!   "version": 1,
//!   "schema": { entity_field, timestamp_field, features: [{name, kind}] },
//!   "schema_fingerprint": "<sha256 of the schema>",
//!   "stats": { numeric, vocabularies, time_gap, schema_fingerprint },
//!   "layout": { numeric, categorical, cardinalities, slices },
//!   "encoder": EncoderConfig,
//!   "training": NpprConfig,
//!   "parameters": [{ "name": "gru.w_z", "shape": [32, 32], "values": [...] }, ...],
//!   "optimizer": null | { config, step, first_moment, second_moment }
//! }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{EncoderConfig, NpprConfig};
use super::network::NpprModel;
use crate::data_model::{EventSchema, FeatureLayout, NormStats};
use crate::nn::{AdamState, Parameterized};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "nppr-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    schema: EventSchema,
    schema_fingerprint: String,
    stats: NormStats,
    layout: FeatureLayout,
    encoder: EncoderConfig,
    training: NpprConfig,
    parameters: Vec<ParameterRecord>,
    optimizer: Option<AdamState>,
}

/// A trained model together with everything needed to embed new data.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub schema: EventSchema,
    pub stats: NormStats,
    pub training: NpprConfig,
    pub model: NpprModel,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let parameters = self
            .model
            .blocks()
            .into_iter()
            .map(|b| ParameterRecord {
                name: b.name,
                shape: b.shape,
                values: b.values.to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format: FORMAT_TAG.into(),
            version: CHECKPOINT_FORMAT_VERSION,
            schema: self.schema.clone(),
            schema_fingerprint: self.schema.fingerprint(),
            stats: self.stats.clone(),
            layout: self.model.layout.clone(),
            encoder: self.model.config.clone(),
            training: self.training.clone(),
            parameters,
            optimizer: self.optimizer.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!(
                "not a checkpoint (format tag `{}`)",
                file.format
            )));
        }
        if file.version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                file.version
            )));
        }
        if file.schema.fingerprint() != file.schema_fingerprint
            || file.stats.schema_fingerprint != file.schema_fingerprint
        {
            return Err(Error::Checkpoint(
                "schema fingerprint does not match the embedded schema".into(),
            ));
        }
        let mut model = NpprModel::new(file.layout, file.encoder, 0)?;
        {
            let expected: Vec<(String, Vec<usize>)> = model
                .blocks()
                .into_iter()
                .map(|b| (b.name, b.shape))
                .collect();
            if expected.len() != file.parameters.len() {
                return Err(Error::Checkpoint(format!(
                    "expected {} parameter blocks, found {}",
                    expected.len(),
                    file.parameters.len()
                )));
            }
            for ((name, shape), rec) in expected.iter().zip(&file.parameters) {
                if *name != rec.name
                    || *shape != rec.shape
                    || rec.values.len() != shape.iter().product::<usize>()
                {
                    return Err(Error::Checkpoint(format!(
                        "parameter block `{}` {:?} does not match expected `{name}` {shape:?}",
                        rec.name, rec.shape
                    )));
                }
            }
        }
        for (dst, rec) in model.blocks_mut().into_iter().zip(&file.parameters) {
            dst.copy_from_slice(&rec.values);
        }
        Ok(Self {
            schema: file.schema,
            stats: file.stats,
            training: file.training,
            model,
            optimizer: file.optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Errors unless `schema` is the schema the model was trained with.
    pub fn check_schema(&self, schema: &EventSchema) -> Result<()> {
        if schema.fingerprint() != self.schema.fingerprint() {
            return Err(Error::Schema(
                "schema differs from the one recorded in the checkpoint".into(),
            ));
        }
        Ok(())
    }
}
