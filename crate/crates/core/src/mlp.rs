//! Multilayer perceptron classifier: ReLU hidden layers, softmax output,
//! sparse categorical cross-entropy, minibatch Adam.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{rng, RulClass};
use crate::error::{Error, Result};
use crate::nn::{
    accuracy_of, argmax_rows, relu, softmax_cross_entropy, softmax_rows, DenseLayer, Parameters,
    TrainHistory,
};
use crate::optim::{Adam, AdamConfig};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Trailing fraction of the shuffled training rows held out for validation.
    pub validation_split: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![128, 64, 32],
            epochs: 50,
            batch_size: 32,
            validation_split: 0.2,
            seed: 42,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

struct Activations {
    /// Inputs to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    hidden_pre: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl MlpParams {
    /// He-initialized network `input_dim -> hidden... -> 3`.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Self {
        assert!(input_dim >= 1, "input_dim must be positive");
        let mut rng = rng(seed);
        let widths = Self::widths(input_dim, hidden);
        MlpParams {
            layers: widths
                .windows(2)
                .map(|w| DenseLayer::he_normal(w[0], w[1], &mut rng))
                .collect(),
        }
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Self {
        let widths = Self::widths(input_dim, hidden);
        MlpParams {
            layers: widths.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        }
    }

    fn widths(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(NUM_CLASSES))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    fn check_width(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    fn activations(&self, x: ArrayView2<f64>) -> Activations {
        let mut inputs = vec![x.to_owned()];
        let mut hidden_pre = Vec::with_capacity(self.layers.len() - 1);
        let (last, hidden) = self.layers.split_last().expect("at least one layer");
        for layer in hidden {
            let z = layer.forward(inputs.last().unwrap().view());
            inputs.push(relu(&z));
            hidden_pre.push(z);
        }
        let logits = last.forward(inputs.last().unwrap().view());
        Activations {
            inputs,
            hidden_pre,
            logits,
        }
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(x.ncols())?;
        Ok(self.activations(x).logits)
    }

    /// Class probabilities for each row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(softmax_rows(self.logits(x)?.view()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<[f64; 3]> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let p = self.forward_batch(row)?;
        Ok([p[[0, 0]], p[[0, 1]], p[[0, 2]]])
    }

    /// Mean cross-entropy over the batch and its gradient w.r.t. every parameter.
    pub fn loss_grad(&self, x: ArrayView2<f64>, labels: &[RulClass]) -> Result<(f64, MlpParams)> {
        let (loss, grads, _) = self.loss_grad_probs(x, labels)?;
        Ok((loss, grads))
    }

    fn loss_grad_probs(
        &self,
        x: ArrayView2<f64>,
        labels: &[RulClass],
    ) -> Result<(f64, MlpParams, Array2<f64>)> {
        self.check_width(x.ncols())?;
        if labels.len() != x.nrows() {
            return Err(Error::LengthMismatch(labels.len(), x.nrows()));
        }
        let acts = self.activations(x);
        let (loss, mut delta) = softmax_cross_entropy(acts.logits.view(), labels);
        let probs = softmax_rows(acts.logits.view());

        let mut grads = MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs(), l.outputs()))
                .collect(),
        };
        for l in (0..self.layers.len()).rev() {
            let d_in = self.layers[l].backward(acts.inputs[l].view(), delta.view(), &mut grads.layers[l]);
            if l > 0 {
                let mut d = d_in;
                d.zip_mut_with(&acts.hidden_pre[l - 1], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = d;
            }
        }
        Ok((loss, grads, probs))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<RulClass>> {
        Ok(argmax_rows(self.forward_batch(x)?.view()))
    }
}

impl Parameters for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Seed for the batch order of one epoch.
pub(crate) fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Splits training rows into (fit, validation) after one seeded shuffle.
pub(crate) fn holdout(rows: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rows = rows.to_vec();
    rows.shuffle(&mut rng(seed));
    let n_val = ((fraction * rows.len() as f64).round() as usize).min(rows.len().saturating_sub(1));
    let val = rows.split_off(rows.len() - n_val);
    (rows, val)
}

/// Trains on `train_rows` of an already standardized `features` matrix.
pub fn mlp_train(
    config: &MlpConfig,
    features: ArrayView2<f64>,
    labels: &[RulClass],
    train_rows: &[usize],
) -> Result<(MlpParams, TrainHistory)> {
    if train_rows.is_empty() {
        return Err(Error::TooFewRows(0));
    }
    let (fit_rows, val_rows) = holdout(train_rows, config.validation_split, config.seed);
    let mut params = MlpParams::init(features.ncols(), &config.hidden, config.seed);
    let mut adam = Adam::new(config.adam);
    let mut history = TrainHistory::default();

    let val_x = features.select(Axis(0), &val_rows);
    let val_y: Vec<RulClass> = val_rows.iter().map(|&i| labels[i]).collect();

    for epoch in 0..config.epochs {
        let mut order = fit_rows.clone();
        order.shuffle(&mut rng(epoch_seed(config.seed, epoch)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size.max(1)) {
            let x = features.select(Axis(0), batch);
            let y: Vec<RulClass> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, grads, probs) = params.loss_grad_probs(x.view(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "epoch",
                    index: epoch + 1,
                });
            }
            adam.step(&mut params, &grads);
            loss_sum += loss * batch.len() as f64;
            correct += argmax_rows(probs.view())
                .iter()
                .zip(&y)
                .filter(|(p, t)| p == t)
                .count();
        }
        let n = order.len() as f64;
        let (val_loss, val_acc) = if val_rows.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let logits = params.logits(val_x.view())?;
            let (loss, _) = softmax_cross_entropy(logits.view(), &val_y);
            (loss, accuracy_of(&argmax_rows(softmax_rows(logits.view()).view()), &val_y))
        };
        history.push(correct as f64 / n, val_acc, loss_sum / n, val_loss);
    }
    Ok((params, history))
}
