//! Dataset ingestion, RUL binning, splits and feature scaling.

mod labels;
mod load;
mod scaler;
mod schema;
mod snapshot;
mod split;
mod summary;
mod synth;
mod table;

use std::path::Path;

pub use labels::{argmax, bin_rul_terciles, class_counts, RulClass, TercileThresholds};
pub use load::{default_data_path, load_dataset, read_dataset, write_dataset, DATA_ENV};
pub use scaler::ScalerParams;
pub use schema::{normalize_header, Feature};
pub use snapshot::{DatasetSnapshot, DATASET_SCHEMA};
pub use split::{kfold, train_test_split, SplitIndices};
pub use summary::{histogram, ColumnStats, DatasetSummary, HistogramBin};
pub use synth::{synth_generate, synth_samples};
pub use table::{Sample, SampleTable};

pub(crate) use split::rng;

use crate::error::Result;

/// Loads a CSV or a `dataset.v1` snapshot (by `.json` extension) and makes
/// sure the table carries tercile labels.
pub fn load_labeled(path: impl AsRef<Path>) -> Result<(SampleTable, TercileThresholds)> {
    let path = path.as_ref();
    let is_snapshot = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_snapshot {
        let snap = DatasetSnapshot::load(path)?;
        let stored = snap.thresholds;
        let mut table = snap.into_table()?;
        match (stored, &table.labels) {
            (Some(th), Some(_)) => Ok((table, th)),
            _ => {
                let th = label_table(&mut table)?;
                Ok((table, th))
            }
        }
    } else {
        let mut table = load_dataset(path)?;
        let th = label_table(&mut table)?;
        Ok((table, th))
    }
}

/// Bins the table's RUL column into terciles and stores the labels.
pub fn label_table(table: &mut SampleTable) -> Result<TercileThresholds> {
    let (labels, th) = bin_rul_terciles(&table.rul)?;
    table.labels = Some(labels);
    Ok(th)
}
