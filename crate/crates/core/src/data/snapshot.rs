//! `dataset.v1`: a self-describing JSON snapshot of a loaded (and usually
//! binned) table, so later commands do not re-parse the raw CSV.
//!
//! ```json
//! {
//!   "schema": "dataset.v1",
//!   "feature_names": ["cycle_index", ...],
//!   "rows": [[1.0, 2595.3, ...], ...],
//!   "rul": [1112.0, ...],
//!   "labels": [2, ...] | null,
//!   "thresholds": {"t1": 370.0, "t2": 741.0} | null,
//!   "dropped_rows": 0
//! }
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::labels::{RulClass, TercileThresholds};
use super::table::SampleTable;
use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "dataset.v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSnapshot {
    pub schema: String,
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub rul: Vec<f64>,
    pub labels: Option<Vec<RulClass>>,
    pub thresholds: Option<TercileThresholds>,
    pub dropped_rows: usize,
}

impl DatasetSnapshot {
    pub fn new(table: &SampleTable, thresholds: Option<TercileThresholds>) -> Self {
        DatasetSnapshot {
            schema: DATASET_SCHEMA.into(),
            feature_names: table.feature_names.clone(),
            rows: table.features.rows().into_iter().map(|r| r.to_vec()).collect(),
            rul: table.rul.clone(),
            labels: table.labels.clone(),
            thresholds,
            dropped_rows: table.dropped_rows,
        }
    }

    pub fn into_table(self) -> Result<SampleTable> {
        if self.schema != DATASET_SCHEMA {
            return Err(Error::ModelFile(format!(
                "expected schema {DATASET_SCHEMA}, found {}",
                self.schema
            )));
        }
        let d = self.feature_names.len();
        if let Some(bad) = self.rows.iter().find(|r| r.len() != d) {
            return Err(Error::Shape {
                expected: d,
                got: bad.len(),
            });
        }
        if self.rows.len() != self.rul.len() {
            return Err(Error::LengthMismatch(self.rul.len(), self.rows.len()));
        }
        if self.rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = self.rows.len();
        let features = Array2::from_shape_vec((n, d), self.rows.into_iter().flatten().collect())
            .expect("validated shape");
        Ok(SampleTable {
            feature_names: self.feature_names,
            features,
            rul: self.rul,
            labels: self.labels,
            dropped_rows: self.dropped_rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DatasetSnapshot> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
