//! Id-keyed numeric feature tables, the interchange format between
//! feature producers and downstream heads.
//!
//! CSV layout: header `id,<column>,…`, one row per id. A `support` column
//! (present in embedding exports) is metadata and is dropped on read.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

const METADATA_COLUMNS: &[&str] = &["support"];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(ids: Vec<String>, columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::shape(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != columns.len()) {
            return Err(Error::shape(format!(
                "row of width {} under {} columns",
                r.len(),
                columns.len()
            )));
        }
        Ok(Self { ids, columns, rows })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::from(std::io::ErrorKind::NotFound),
            ));
        }
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("id") {
            return Err(Error::Schema(format!(
                "{}: first column must be `id`",
                path.display()
            )));
        }
        let keep: Vec<usize> = (1..header.len())
            .filter(|&i| !METADATA_COLUMNS.contains(&header[i].as_str()))
            .collect();
        let columns = keep.iter().map(|&i| header[i].clone()).collect();
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (n, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = n as u64 + 2;
            ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = keep
                .iter()
                .map(|&i| {
                    let cell = rec.get(i).unwrap_or_default();
                    cell.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Row {
                            path: path.to_path_buf(),
                            line,
                            message: format!(
                                "column `{}`: `{cell}` is not a finite number",
                                header[i]
                            ),
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(ids, columns, rows)
    }

    /// Inner join on id, keeping the order of `self`. Columns of `other`
    /// are prefixed with `prefix`.
    pub fn join(&self, other: &FeatureTable, prefix: &str) -> Result<FeatureTable> {
        let index: HashMap<&str, usize> = other
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut columns = self.columns.clone();
        columns.extend(other.columns.iter().map(|c| format!("{prefix}{c}")));
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (id, row) in self.ids.iter().zip(&self.rows) {
            if let Some(&j) = index.get(id.as_str()) {
                let mut r = row.clone();
                r.extend_from_slice(&other.rows[j]);
                ids.push(id.clone());
                rows.push(r);
            }
        }
        FeatureTable::new(ids, columns, rows)
    }

    /// Rows whose id is in `ids`, in the order of `ids`; missing ids are an error.
    pub fn select(&self, ids: &[String]) -> Result<FeatureTable> {
        let index: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let rows = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.rows[i].clone())
                    .ok_or_else(|| Error::invalid(format!("id `{id}` missing from feature table")))
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureTable::new(ids.to_vec(), self.columns.clone(), rows)
    }
}
