//! Versioned model and report files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Feature, TercileThresholds};
use crate::error::{Error, Result};
use crate::eval::{ComparisonRow, CvReport, EvalReport};
use crate::model::{FittedModel, HoldoutResult, ModelConfig, ModelKind};
use crate::nn::TrainHistory;

pub const MODEL_SCHEMA: &str = "model.v1";
pub const REPORT_SCHEMA: &str = "report.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub test_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema: String,
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub feature_names: Vec<String>,
    pub thresholds: Option<TercileThresholds>,
    pub model: FittedModel,
    pub training: Option<TrainingMeta>,
}

impl ModelArtifact {
    pub fn new(
        config: ModelConfig,
        feature_names: Vec<String>,
        thresholds: Option<TercileThresholds>,
        model: FittedModel,
        training: Option<TrainingMeta>,
    ) -> Self {
        ModelArtifact {
            schema: MODEL_SCHEMA.to_string(),
            kind: model.kind(),
            config,
            feature_names,
            thresholds,
            model,
            training,
        }
    }

    pub fn from_holdout(
        config: ModelConfig,
        feature_names: Vec<String>,
        thresholds: Option<TercileThresholds>,
        result: &HoldoutResult,
        seed: u64,
        test_fraction: f64,
    ) -> Self {
        let meta = TrainingMeta {
            seed,
            test_fraction,
            n_train: result.n_train,
            n_test: result.n_test,
            train_accuracy: result.train_accuracy,
            test_accuracy: result.test_accuracy,
        };
        ModelArtifact::new(config, feature_names, thresholds, result.model.clone(), Some(meta))
    }

    /// Checks the schema tag and internal consistency of a parsed artifact.
    pub fn validate(&self) -> Result<()> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::ModelFile(format!(
                "schema `{}`, expected `{MODEL_SCHEMA}`",
                self.schema
            )));
        }
        if self.kind != self.model.kind() || self.kind != self.config.kind() {
            return Err(Error::ModelFile("kind tag disagrees with parameters".into()));
        }
        if self.feature_names.len() != self.model.scaler.dim() {
            return Err(Error::ModelFile(format!(
                "{} feature names for a {}-wide scaler",
                self.feature_names.len(),
                self.model.scaler.dim()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let a: ModelArtifact = serde_json::from_str(s)?;
        a.validate()?;
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ModelArtifact::from_json(&text)
    }

    /// Orders named feature values into the model's column order. Names may
    /// be the stored column names or canonical feature names.
    pub fn feature_row<'a, I>(&self, values: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = (&'a str, f64)> + Clone,
    {
        self.feature_names
            .iter()
            .map(|col| {
                let canonical = Feature::from_header(col);
                values
                    .clone()
                    .into_iter()
                    .find(|(name, _)| {
                        *name == col.as_str() || canonical.is_some_and(|f| f.name() == *name)
                    })
                    .map(|(_, v)| v)
                    .ok_or_else(|| Error::MissingColumn(canonical.map_or(col.clone(), |f| f.name().to_string())))
            })
            .collect()
    }

    pub fn predict_row(&self, raw: &[f64]) -> Result<[f64; 3]> {
        self.model.predict_row(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSummary {
    pub model: ModelKind,
    pub n_train: usize,
    pub n_test: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_report: EvalReport,
}

impl From<&HoldoutResult> for HoldoutSummary {
    fn from(r: &HoldoutResult) -> Self {
        HoldoutSummary {
            model: r.model.kind(),
            n_train: r.n_train,
            n_test: r.n_test,
            train_accuracy: r.train_accuracy,
            test_accuracy: r.test_accuracy,
            test_report: r.test_report.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    #[serde(default)]
    pub holdout: Vec<HoldoutSummary>,
    #[serde(default)]
    pub cv: Vec<CvReport>,
    #[serde(default)]
    pub history: Vec<(ModelKind, TrainHistory)>,
    #[serde(default)]
    pub comparison: Vec<ComparisonRow>,
}

impl Default for Report {
    fn default() -> Self {
        Report {
            schema: REPORT_SCHEMA.to_string(),
            holdout: Vec::new(),
            cv: Vec::new(),
            history: Vec::new(),
            comparison: Vec::new(),
        }
    }
}

impl Report {
    pub fn add_holdout(&mut self, result: &HoldoutResult) {
        let summary = HoldoutSummary::from(result);
        self.comparison.push(ComparisonRow {
            model: summary.model,
            train_accuracy: summary.train_accuracy,
            test_accuracy: summary.test_accuracy,
        });
        if let Some(h) = &result.model.history {
            self.history.push((summary.model, h.clone()));
        }
        self.holdout.push(summary);
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Report = serde_json::from_str(&text)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::ModelFile(format!("schema `{}`, expected `{REPORT_SCHEMA}`", r.schema)));
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{label_table, synth_generate};
    use crate::gbdt::GbdtConfig;
    use crate::model::train_holdout;

    fn small() -> (crate::data::SampleTable, TercileThresholds, HoldoutResult, ModelConfig) {
        let mut table = synth_generate(2, 60, 5);
        let t = label_table(&mut table).unwrap();
        let cfg = ModelConfig::Gbdt(GbdtConfig {
            iterations: 5,
            ..GbdtConfig::default()
        });
        let r = train_holdout(&cfg, &table, 0.2, 42).unwrap();
        (table, t, r, cfg)
    }

    #[test]
    fn model_file_round_trip_predicts_identically() {
        let (table, t, r, cfg) = small();
        let a = ModelArtifact::from_holdout(cfg, table.feature_names.clone(), Some(t), &r, 42, 0.2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        a.save(&path).unwrap();
        let b = ModelArtifact::load(&path).unwrap();
        assert_eq!(a, b);
        let row = table.features.row(3).to_vec();
        assert_eq!(a.predict_row(&row).unwrap(), b.predict_row(&row).unwrap());
    }

    #[test]
    fn rejects_wrong_schema() {
        let (table, t, r, cfg) = small();
        let mut a = ModelArtifact::from_holdout(cfg, table.feature_names.clone(), Some(t), &r, 42, 0.2);
        a.schema = "model.v0".into();
        let json = serde_json::to_string(&a).unwrap();
        assert!(matches!(ModelArtifact::from_json(&json), Err(Error::ModelFile(_))));
    }

    #[test]
    fn feature_row_by_canonical_name() {
        let (table, t, r, cfg) = small();
        let a = ModelArtifact::from_holdout(cfg, table.feature_names.clone(), Some(t), &r, 42, 0.2);
        let named: Vec<(&str, f64)> = Feature::ALL.iter().map(|f| (f.name(), f.pin() as f64)).collect();
        let row = a.feature_row(named.iter().copied()).unwrap();
        assert_eq!(row.len(), table.n_features());
        let missing: Vec<(&str, f64)> = named[1..].to_vec();
        let err = a.feature_row(missing.iter().copied()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "cycle_index"), "{err}");
    }

    #[test]
    fn report_round_trip() {
        let (_, _, r, _) = small();
        let mut rep = Report::default();
        rep.add_holdout(&r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        rep.save(&path).unwrap();
        assert_eq!(Report::load(&path).unwrap(), rep);
    }
}
