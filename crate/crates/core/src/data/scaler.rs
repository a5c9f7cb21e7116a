use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Per-feature z-score parameters fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    /// Population standard deviation (divisor n).
    pub std: Vec<f64>,
    /// Columns with (numerically) zero spread; these transform to 0.
    pub zero_std: Vec<bool>,
}

impl ScalerParams {
    /// Fits mean and standard deviation on `rows` of `features` (two-pass).
    ///
    /// Panics if `rows` is empty.
    pub fn fit(features: ArrayView2<f64>, rows: &[usize]) -> ScalerParams {
        assert!(!rows.is_empty(), "scaler needs at least one training row");
        let n = rows.len() as f64;
        let d = features.ncols();
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, x) in mean.iter_mut().zip(features.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut var = vec![0.0; d];
        for &i in rows {
            for ((v, x), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        let zero_std = std
            .iter()
            .zip(&mean)
            .map(|(s, m)| *s <= 1e-12 * m.abs().max(1.0))
            .collect();
        ScalerParams {
            mean,
            std,
            zero_std,
        }
    }

    pub fn identity(d: usize) -> ScalerParams {
        ScalerParams {
            mean: vec![0.0; d],
            std: vec![1.0; d],
            zero_std: vec![false; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_value(&self, j: usize, x: f64) -> f64 {
        if self.zero_std[j] {
            0.0
        } else {
            (x - self.mean[j]) / self.std[j]
        }
    }

    pub fn transform(&self, matrix: ArrayView2<f64>) -> Array2<f64> {
        let mut out = matrix.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = self.transform_value(j, *x);
            }
        }
        out
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &x)| self.transform_value(j, x))
            .collect()
    }
}
