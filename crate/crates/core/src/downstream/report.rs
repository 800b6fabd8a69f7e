use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::VdrPoint;
use crate::{Error, Result};

/// Named metric values tagged with the fingerprint of the producing config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_fingerprint: String,
    pub metrics: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn new(config_fingerprint: impl Into<String>) -> Self {
        Self {
            config_fingerprint: config_fingerprint.into(),
            metrics: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|m| m.1)
    }

    /// `metric,value,config_fingerprint` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,config_fingerprint\n");
        for (n, v) in &self.metrics {
            out.push_str(&format!("{n},{v:.9},{}\n", self.config_fingerprint));
        }
        out
    }

    /// `name = value` lines under a fingerprint comment.
    pub fn to_text(&self) -> String {
        let mut out = format!("# config_fingerprint = {}\n", self.config_fingerprint);
        for (n, v) in &self.metrics {
            out.push_str(&format!("{n} = {v:.9}\n"));
        }
        out
    }

    pub fn write(&self, csv_path: &Path, text_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(text_path, self.to_text()).map_err(|e| Error::io(text_path, e))
    }
}

/// `fp_ratio,vdr,threshold`; the threshold is empty when none qualifies.
pub fn write_vdr_csv(path: &Path, curve: &[VdrPoint]) -> Result<()> {
    let mut out = String::from("fp_ratio,vdr,threshold\n");
    for p in curve {
        let t = p.threshold.map(|t| format!("{t:.9}")).unwrap_or_default();
        out.push_str(&format!("{},{:.9},{t}\n", p.fp_ratio, p.vdr));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
