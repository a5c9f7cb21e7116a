use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::schema::Feature;
use super::labels::RulClass;

/// One charge/discharge cycle of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub cycle_index: f64,
    pub discharge_time_s: f64,
    pub time_at_4p15v_s: f64,
    pub time_constant_current_s: f64,
    pub decrement_3p6_3p4v_s: f64,
    pub max_voltage_discharge_v: f64,
    pub min_voltage_charge_v: f64,
    pub charging_time_s: f64,
    pub total_time_s: Option<f64>,
    pub rul: f64,
}

impl Sample {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        Some(match feature {
            Feature::CycleIndex => self.cycle_index,
            Feature::DischargeTime => self.discharge_time_s,
            Feature::TimeAt4p15V => self.time_at_4p15v_s,
            Feature::TimeConstantCurrent => self.time_constant_current_s,
            Feature::Decrement3p6To3p4V => self.decrement_3p6_3p4v_s,
            Feature::MaxVoltageDischarge => self.max_voltage_discharge_v,
            Feature::MinVoltageCharge => self.min_voltage_charge_v,
            Feature::ChargingTime => self.charging_time_s,
            Feature::TotalTime => return self.total_time_s,
        })
    }

    pub fn is_valid(&self) -> bool {
        Feature::ALL
            .iter()
            .filter_map(|&f| self.get(f))
            .all(f64::is_finite)
            && self.rul.is_finite()
            && self.rul >= 0.0
            && self.cycle_index >= 1.0
    }
}

/// Feature matrix plus RUL target and (after binning) class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub feature_names: Vec<String>,
    pub features: Array2<f64>,
    pub rul: Vec<f64>,
    pub labels: Option<Vec<RulClass>>,
    /// Rows discarded at load time because of missing or non-numeric cells.
    pub dropped_rows: usize,
}

impl SampleTable {
    /// Builds a table in canonical column order. Total time is included only
    /// when every sample carries it.
    pub fn from_samples(samples: &[Sample]) -> Self {
        let with_total = !samples.is_empty() && samples.iter().all(|s| s.total_time_s.is_some());
        let columns: Vec<Feature> = Feature::ALL
            .into_iter()
            .filter(|&f| f != Feature::TotalTime || with_total)
            .collect();
        let mut features = Array2::zeros((samples.len(), columns.len()));
        for (mut row, s) in features.axis_iter_mut(Axis(0)).zip(samples) {
            for (cell, &f) in row.iter_mut().zip(&columns) {
                *cell = s.get(f).unwrap_or(f64::NAN);
            }
        }
        SampleTable {
            feature_names: columns.iter().map(|f| f.name().to_string()).collect(),
            features,
            rul: samples.iter().map(|s| s.rul).collect(),
            labels: None,
            dropped_rows: 0,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        let wanted = Feature::from_header(name);
        self.feature_names.iter().position(|n| match wanted {
            Some(f) => Feature::from_header(n) == Some(f),
            None => n == name,
        })
    }

    /// Labels, or an empty slice if the table has not been binned.
    pub fn labels(&self) -> &[RulClass] {
        self.labels.as_deref().unwrap_or(&[])
    }

    /// Copy of the table with one feature column removed. Unknown names leave
    /// the table unchanged.
    pub fn without_feature(&self, name: &str) -> SampleTable {
        let Some(drop) = self.feature_index(name) else {
            return self.clone();
        };
        let keep: Vec<usize> = (0..self.n_features()).filter(|&j| j != drop).collect();
        SampleTable {
            feature_names: keep.iter().map(|&j| self.feature_names[j].clone()).collect(),
            features: self.features.select(Axis(1), &keep),
            rul: self.rul.clone(),
            labels: self.labels.clone(),
            dropped_rows: self.dropped_rows,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> SampleTable {
        SampleTable {
            feature_names: self.feature_names.clone(),
            features: self.features.select(Axis(0), rows),
            rul: rows.iter().map(|&i| self.rul[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
            dropped_rows: 0,
        }
    }
}
