//! Confusion matrices, per-class metrics, cross-validation and the model
//! comparison table.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold, RulClass, SampleTable};
use crate::error::{Error, Result};
use crate::model::{fit, ModelConfig, ModelKind};
use crate::nn::accuracy_of;

/// `counts[i][j]` = samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Support of class `i`.
    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_total(&self, j: usize) -> u64 {
        (0..3).map(|i| self.counts[i][j]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..3).all(|i| (0..3).all(|j| i == j || self.counts[i][j] == 0))
    }

    /// Multiclass accuracy, `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    /// One-vs-rest reduction for `class`.
    pub fn class_metrics(&self, class: RulClass) -> ClassMetrics {
        let k = class.index();
        let tp = self.counts[k][k];
        let fp = self.col_total(k) - tp;
        let fn_ = self.row_total(k) - tp;
        let tn = self.total() - tp - fp - fn_;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        ClassMetrics {
            class,
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }

    pub fn precision(&self, class: RulClass) -> f64 {
        self.class_metrics(class).precision
    }

    pub fn recall(&self, class: RulClass) -> f64 {
        self.class_metrics(class).recall
    }

    pub fn f1(&self, class: RulClass) -> f64 {
        self.class_metrics(class).f1
    }

    /// Unweighted means of precision, recall and F1 over the three classes.
    pub fn macro_metrics(&self) -> (f64, f64, f64) {
        let m: Vec<ClassMetrics> = RulClass::ALL.iter().map(|&c| self.class_metrics(c)).collect();
        let mean = |f: fn(&ClassMetrics) -> f64| m.iter().map(f).sum::<f64>() / 3.0;
        (mean(|c| c.precision), mean(|c| c.recall), mean(|c| c.f1))
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn confusion(truth: &[RulClass], predicted: &[RulClass]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in truth.iter().zip(predicted) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Like [`confusion`] for raw integer labels, rejecting values outside 0..=2.
pub fn confusion_from_indices(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    let t: Vec<RulClass> = truth.iter().map(|&i| RulClass::from_index(i)).collect::<Result<_>>()?;
    let p: Vec<RulClass> = predicted
        .iter()
        .map(|&i| RulClass::from_index(i))
        .collect::<Result<_>>()?;
    confusion(&t, &p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: RulClass,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl EvalReport {
    pub fn new(confusion: ConfusionMatrix) -> Self {
        let (macro_precision, macro_recall, macro_f1) = confusion.macro_metrics();
        EvalReport {
            accuracy: confusion.accuracy(),
            per_class: RulClass::ALL.iter().map(|&c| confusion.class_metrics(c)).collect(),
            confusion,
            macro_precision,
            macro_recall,
            macro_f1,
        }
    }

    pub fn evaluate(truth: &[RulClass], predicted: &[RulClass]) -> Result<Self> {
        Ok(EvalReport::new(confusion(truth, predicted)?))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("Confusion matrix (rows = true, columns = predicted)\n");
        s.push_str("        pred 0   pred 1   pred 2\n");
        for (i, row) in self.confusion.counts.iter().enumerate() {
            let _ = writeln!(s, "true {i} {:>8} {:>8} {:>8}", row[0], row[1], row[2]);
        }
        let _ = writeln!(s, "\nClass   Precision  Recall  F1");
        for m in &self.per_class {
            let _ = writeln!(s, "{:<7} {:.4}     {:.4}  {:.4}", m.class.index(), m.precision, m.recall, m.f1);
        }
        let _ = writeln!(
            s,
            "macro   {:.4}     {:.4}  {:.4}\naccuracy {:.4}",
            self.macro_precision, self.macro_recall, self.macro_f1, self.accuracy
        );
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    /// Divisor n.
    #[default]
    Population,
    /// Divisor n - 1.
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelKind,
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub std_kind: StdKind,
}

impl CvReport {
    pub fn from_folds(model: ModelKind, fold_accuracy: Vec<f64>, std_kind: StdKind) -> Self {
        let (mean, std) = mean_std(&fold_accuracy, std_kind);
        CvReport {
            model,
            fold_accuracy,
            mean,
            std,
            std_kind,
        }
    }

    /// Fold table in the layout `Fold | Accuracy`, closed by mean and
    /// standard-deviation rows. GRU tables label the column "Test Accuracy".
    pub fn to_text(&self) -> String {
        let (col, mean_label) = match self.model {
            ModelKind::Gru => ("Test Accuracy", "Mean Test Accuracy"),
            _ => ("Accuracy", "Mean Accuracy"),
        };
        let mut s = format!("{:<20}{col}\n", "Fold");
        for (i, a) in self.fold_accuracy.iter().enumerate() {
            let _ = writeln!(s, "{:<20}{a:.4}", format!("Fold {}", i + 1));
        }
        let _ = writeln!(s, "{mean_label:<20}{:.4}", self.mean);
        let _ = writeln!(s, "{:<20}{:.4}", "Standard Deviation", self.std);
        s
    }
}

pub fn mean_std(values: &[f64], kind: StdKind) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let div = match kind {
        StdKind::Population => n,
        StdKind::Sample => (n - 1.0).max(1.0),
    };
    (mean, (ss / div).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub stratified: bool,
    pub shuffle: bool,
    pub seed: u64,
    pub std_kind: StdKind,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            k: 10,
            stratified: true,
            shuffle: true,
            seed: 42,
            std_kind: StdKind::Population,
        }
    }
}

/// K-fold cross-validation: per fold, fit scaler and model on the training
/// part and score accuracy on the held-out part. Folds run in parallel; the
/// report is ordered by fold index.
pub fn cv_run(config: &ModelConfig, table: &SampleTable, options: &CvOptions) -> Result<CvReport> {
    let labels = table.labels();
    if labels.len() != table.n_rows() {
        return Err(Error::LengthMismatch(labels.len(), table.n_rows()));
    }
    let folds = kfold(
        table.n_rows(),
        options.k,
        options.shuffle,
        options.seed,
        options.stratified.then_some(labels),
    )?;
    let accuracies = folds
        .par_iter()
        .enumerate()
        .map(|(i, fold)| {
            let wrap = |e: Error| Error::Fold {
                fold: i + 1,
                source: Box::new(e),
            };
            let outcome = fit(config, table, &fold.train, Some(&fold.test)).map_err(wrap)?;
            let pred = outcome.predict_rows(table, &fold.test).map_err(wrap)?;
            let truth: Vec<RulClass> = fold.test.iter().map(|&j| labels[j]).collect();
            Ok(accuracy_of(&pred, &truth))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CvReport::from_folds(config.kind(), accuracies, options.std_kind))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: ModelKind,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Rows ordered MLP, GRU, GBDT regardless of input order.
pub fn compare_models(rows: &[ComparisonRow]) -> Vec<ComparisonRow> {
    let mut out = rows.to_vec();
    out.sort_by_key(|r| r.model);
    out
}

pub fn comparison_text(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{:<10}{:<20}{}\n", "Model", "Training Accuracy", "Testing Accuracy");
    for r in compare_models(rows) {
        let _ = writeln!(
            s,
            "{:<10}{:<20.4}{:.4}",
            r.model.display_name(),
            r.train_accuracy,
            r.test_accuracy
        );
    }
    s
}
