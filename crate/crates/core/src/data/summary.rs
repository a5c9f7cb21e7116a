use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{class_counts, RulClass, SampleTable, TercileThresholds};

const HISTOGRAM_BINS: usize = 10;
const BAR_WIDTH: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Row count, column ranges, RUL distribution and class balance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub dropped_rows: usize,
    pub columns: Vec<ColumnStats>,
    pub rul: ColumnStats,
    pub rul_histogram: Vec<HistogramBin>,
    pub thresholds: TercileThresholds,
    pub class_counts: [usize; 3],
}

fn stats<'a>(name: &str, values: impl Iterator<Item = &'a f64>) -> ColumnStats {
    let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        n += 1;
    }
    ColumnStats {
        name: name.to_string(),
        min,
        mean: if n == 0 { f64::NAN } else { sum / n as f64 },
        max,
    }
}

/// Equal-width bins over `[min, max]`; the top edge belongs to the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            lo: lo + k as f64 * width,
            hi: lo + (k + 1) as f64 * width,
            count,
        })
        .collect()
}

impl DatasetSummary {
    /// Summarizes a labelled table.
    pub fn new(table: &SampleTable, thresholds: TercileThresholds) -> Self {
        DatasetSummary {
            rows: table.n_rows(),
            dropped_rows: table.dropped_rows,
            columns: table
                .feature_names
                .iter()
                .enumerate()
                .map(|(j, name)| stats(name, table.features.column(j).iter()))
                .collect(),
            rul: stats("RUL", table.rul.iter()),
            rul_histogram: histogram(&table.rul, HISTOGRAM_BINS),
            thresholds,
            class_counts: class_counts(table.labels()),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rows: {} ({} dropped)", self.rows, self.dropped_rows);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<40}{:>14}{:>14}{:>14}", "column", "min", "mean", "max");
        for c in self.columns.iter().chain(std::iter::once(&self.rul)) {
            let _ = writeln!(s, "{:<40}{:>14.4}{:>14.4}{:>14.4}", c.name, c.min, c.mean, c.max);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "RUL histogram");
        let peak = self.rul_histogram.iter().map(|b| b.count).max().unwrap_or(0).max(1);
        for b in &self.rul_histogram {
            let bar = "#".repeat(b.count * BAR_WIDTH / peak);
            let _ = writeln!(s, "{:>9.1} - {:<9.1}{:>7}  {bar}", b.lo, b.hi, b.count);
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "tercile thresholds: t1 = {:.4}, t2 = {:.4}",
            self.thresholds.t1, self.thresholds.t2
        );
        for class in RulClass::ALL {
            let _ = writeln!(s, "class {} ({}): {}", class.index(), class.name(), self.class_counts[class.index()]);
        }
        s
    }
}
