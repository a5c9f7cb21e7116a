//! Building blocks shared by the MLP and GRU classifiers.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::RulClass;

/// Anything that exposes its trainable tensors as flat slices, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Fully connected layer computing `x · w + b` for row-major batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FlatDense", try_from = "FlatDense")]
pub struct DenseLayer {
    /// Shape `(inputs, outputs)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`), zero bias.
    pub fn he_normal<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).unwrap();
        DenseLayer {
            w: Array2::from_shape_simple_fn((inputs, outputs), || normal.sample(rng)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns d/dx.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        d_out: ArrayView2<f64>,
        grad: &mut DenseLayer,
    ) -> Array2<f64> {
        grad.w += &x.t().dot(&d_out);
        grad.b += &d_out.sum_axis(Axis(0));
        d_out.dot(&self.w.t())
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

#[derive(Serialize, Deserialize)]
struct FlatDense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<DenseLayer> for FlatDense {
    fn from(l: DenseLayer) -> Self {
        FlatDense {
            inputs: l.inputs(),
            outputs: l.outputs(),
            weights: l.w.as_standard_layout().iter().copied().collect(),
            bias: l.b.to_vec(),
        }
    }
}

impl TryFrom<FlatDense> for DenseLayer {
    type Error = String;

    fn try_from(f: FlatDense) -> Result<Self, String> {
        if f.bias.len() != f.outputs {
            return Err(format!("bias length {} != outputs {}", f.bias.len(), f.outputs));
        }
        let w = Array2::from_shape_vec((f.inputs, f.outputs), f.weights)
            .map_err(|e| format!("weight shape: {e}"))?;
        Ok(DenseLayer {
            w,
            b: Array1::from(f.bias),
        })
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy of `labels` under softmax(`logits`), plus
/// d(loss)/d(logits) = (softmax - onehot) / batch.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[RulClass]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (row, &label) in logits.axis_iter(Axis(0)).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label.index()];
    }
    let mut grad = probs;
    for (mut row, &label) in grad.axis_iter_mut(Axis(0)).zip(labels) {
        row[label.index()] -= 1.0;
    }
    grad.mapv_inplace(|g| g / n);
    (loss / n, grad)
}

pub fn argmax_rows(probs: ArrayView2<f64>) -> Vec<RulClass> {
    probs
        .axis_iter(Axis(0))
        .map(|r| RulClass::ALL[crate::data::argmax(r.as_slice().unwrap_or(&r.to_vec()))])
        .collect()
}

pub fn accuracy_of(pred: &[RulClass], truth: &[RulClass]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Per-epoch learning curves.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn push(&mut self, train_acc: f64, val_acc: f64, train_loss: f64, val_loss: f64) {
        self.train_accuracy.push(train_acc);
        self.val_accuracy.push(val_acc);
        self.train_loss.push(train_loss);
        self.val_loss.push(val_loss);
    }

    /// CSV with header `epoch,train_accuracy,val_accuracy,train_loss,val_loss`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_accuracy,val_accuracy,train_loss,val_loss\n");
        for e in 0..self.epochs() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                e + 1,
                self.train_accuracy[e],
                self.val_accuracy[e],
                self.train_loss[e],
                self.val_loss[e]
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let a = array![[1.0, 2.0, 3.0], [-1000.0, 0.0, 1000.0]];
        let p = softmax_rows(a.view());
        let q = softmax_rows((&a + 17.5).view());
        for (x, y) in p.iter().zip(q.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_cost_ln3() {
        let (loss, _) = softmax_cross_entropy(Array2::zeros((4, 3)).view(), &[RulClass::Mid; 4]);
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn dense_layer_serde_is_flat() {
        let l = DenseLayer {
            w: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            b: array![0.5, -0.5],
        };
        let json = serde_json::to_value(&l).unwrap();
        assert_eq!(json["weights"], serde_json::json!([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let back: DenseLayer = serde_json::from_value(json).unwrap();
        assert_eq!(back, l);
    }
}
