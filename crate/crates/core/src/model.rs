//! One interface over the three classifiers: configuration, fitting with a
//! training-row scaler, and inference on raw feature rows.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{train_test_split, RulClass, SampleTable, ScalerParams};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::gbdt::{gbdt_train, Ensemble, GbdtConfig};
use crate::gru::{gru_train, GruConfig, GruParams};
use crate::mlp::{mlp_train, MlpConfig, MlpParams};
use crate::nn::{accuracy_of, argmax_rows, TrainHistory};

/// Declaration order is the reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Gru,
    Gbdt,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mlp, ModelKind::Gru, ModelKind::Gbdt];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gru => "gru",
            ModelKind::Gbdt => "gbdt",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "MLP",
            ModelKind::Gru => "GRU",
            ModelKind::Gbdt => "GBDT",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "gru" => Ok(ModelKind::Gru),
            "gbdt" => Ok(ModelKind::Gbdt),
            other => Err(format!("unknown model kind `{other}` (expected mlp, gru or gbdt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Full,
    /// Caps boosting at 50 iterations and neural training at 5 epochs.
    Smoke,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" => Ok(Profile::Full),
            "smoke" => Ok(Profile::Smoke),
            other => Err(format!("unknown profile `{other}` (expected full or smoke)")),
        }
    }
}

pub const SMOKE_MAX_ITERATIONS: usize = 50;
pub const SMOKE_MAX_EPOCHS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Mlp(MlpConfig),
    Gru(GruConfig),
    Gbdt(GbdtConfig),
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Mlp => ModelConfig::Mlp(MlpConfig::default()),
            ModelKind::Gru => ModelConfig::Gru(GruConfig::default()),
            ModelKind::Gbdt => ModelConfig::Gbdt(GbdtConfig::default()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Mlp(_) => ModelKind::Mlp,
            ModelConfig::Gru(_) => ModelKind::Gru,
            ModelConfig::Gbdt(_) => ModelKind::Gbdt,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelConfig::Mlp(c) => c.seed,
            ModelConfig::Gru(c) => c.seed,
            ModelConfig::Gbdt(c) => c.seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            ModelConfig::Mlp(c) => c.seed = seed,
            ModelConfig::Gru(c) => c.seed = seed,
            ModelConfig::Gbdt(c) => c.seed = seed,
        }
        self
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        if profile == Profile::Smoke {
            match &mut self {
                ModelConfig::Mlp(c) => c.epochs = c.epochs.min(SMOKE_MAX_EPOCHS),
                ModelConfig::Gru(c) => c.epochs = c.epochs.min(SMOKE_MAX_EPOCHS),
                ModelConfig::Gbdt(c) => c.iterations = c.iterations.min(SMOKE_MAX_ITERATIONS),
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Mlp(MlpParams),
    Gru(Box<GruParams>),
    Gbdt(Ensemble),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Mlp(_) => ModelKind::Mlp,
            ModelParams::Gru(_) => ModelKind::Gru,
            ModelParams::Gbdt(_) => ModelKind::Gbdt,
        }
    }

    /// Class probabilities for standardized rows, one row per input row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            ModelParams::Mlp(p) => p.forward_batch(x),
            ModelParams::Gru(p) => p.forward_batch(x),
            ModelParams::Gbdt(e) => {
                let rows = e.predict_proba(x)?;
                let mut out = Array2::zeros((rows.len(), 3));
                for (i, r) in rows.iter().enumerate() {
                    for k in 0..3 {
                        out[[i, k]] = r[k];
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<RulClass>> {
        match self {
            ModelParams::Gbdt(e) => e.predict(x),
            _ => Ok(argmax_rows(self.predict_proba(x)?.view())),
        }
    }
}

/// A fitted model together with the scaler that feeds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub params: ModelParams,
    pub scaler: ScalerParams,
    pub history: Option<TrainHistory>,
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    /// Probabilities for unscaled feature rows.
    pub fn predict_proba_raw(&self, raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() != self.scaler.dim() {
            return Err(Error::Shape {
                expected: self.scaler.dim(),
                got: raw.ncols(),
            });
        }
        self.params.predict_proba(self.scaler.transform(raw).view())
    }

    pub fn predict_raw(&self, raw: ArrayView2<f64>) -> Result<Vec<RulClass>> {
        if raw.ncols() != self.scaler.dim() {
            return Err(Error::Shape {
                expected: self.scaler.dim(),
                got: raw.ncols(),
            });
        }
        self.params.predict(self.scaler.transform(raw).view())
    }

    /// Probabilities for a single unscaled row.
    pub fn predict_row(&self, raw: &[f64]) -> Result<[f64; 3]> {
        let row = ArrayView2::from_shape((1, raw.len()), raw).expect("row vector");
        let p = self.predict_proba_raw(row)?;
        Ok([p[[0, 0]], p[[0, 1]], p[[0, 2]]])
    }

    pub fn predict_rows(&self, table: &SampleTable, rows: &[usize]) -> Result<Vec<RulClass>> {
        self.predict_raw(table.features.select(Axis(0), rows).view())
    }
}

/// Fits the scaler on `train_rows`, standardizes the whole table with it and
/// trains the configured model. `eval_rows` only feeds the per-epoch history
/// of the recurrent model.
pub fn fit(
    config: &ModelConfig,
    table: &SampleTable,
    train_rows: &[usize],
    eval_rows: Option<&[usize]>,
) -> Result<FittedModel> {
    if train_rows.is_empty() {
        return Err(Error::TooFewRows(0));
    }
    let labels = table.labels();
    if labels.len() != table.n_rows() {
        return Err(Error::LengthMismatch(labels.len(), table.n_rows()));
    }
    let scaler = ScalerParams::fit(table.features.view(), train_rows);
    let x = scaler.transform(table.features.view());
    let (params, history) = match config {
        ModelConfig::Mlp(c) => {
            let (p, h) = mlp_train(c, x.view(), labels, train_rows)?;
            (ModelParams::Mlp(p), Some(h))
        }
        ModelConfig::Gru(c) => {
            let (p, h) = gru_train(c, x.view(), labels, train_rows, eval_rows)?;
            (ModelParams::Gru(Box::new(p)), Some(h))
        }
        ModelConfig::Gbdt(c) => (ModelParams::Gbdt(gbdt_train(c, x.view(), labels, train_rows)?), None),
    };
    Ok(FittedModel {
        params,
        scaler,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    pub model: FittedModel,
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_report: EvalReport,
}

/// Trains on a seeded `1 - test_frac` share of the table and scores both parts.
pub fn train_holdout(
    config: &ModelConfig,
    table: &SampleTable,
    test_frac: f64,
    seed: u64,
) -> Result<HoldoutResult> {
    let split = train_test_split(table.n_rows(), test_frac, seed)?;
    let model = fit(config, table, &split.train, Some(&split.test))?;
    let labels = table.labels();
    let truth = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let train_pred = model.predict_rows(table, &split.train)?;
    let test_pred = model.predict_rows(table, &split.test)?;
    let test_truth = truth(&split.test);
    Ok(HoldoutResult {
        n_train: split.train.len(),
        n_test: split.test.len(),
        train_accuracy: accuracy_of(&train_pred, &truth(&split.train)),
        test_accuracy: accuracy_of(&test_pred, &test_truth),
        test_report: EvalReport::evaluate(&test_truth, &test_pred)?,
        model,
    })
}
