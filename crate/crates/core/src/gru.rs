//! Two-layer GRU classifier over feature vectors read as 1-d sequences.
//!
//! Each row of `d` features becomes a length-`d` sequence of scalar steps.
//! Layer 1 returns its full state sequence, layer 2 consumes it and emits
//! its final state, which feeds a ReLU dense layer and a softmax output.
//!
//! Gate convention (per step, `hp` the previous state):
//!
//! ```text
//! z  = sigmoid(x Wz + hp Uz + bz)
//! r  = sigmoid(x Wr + hp Ur + br)
//! c  = tanh(x Wh + (r * hp) Uh + bh)
//! h  = (1 - z) * hp + z * c
//! ```

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{rng, RulClass};
use crate::error::{Error, Result};
use crate::mlp::{epoch_seed, NUM_CLASSES};
use crate::nn::{
    accuracy_of, argmax_rows, relu, softmax_cross_entropy, softmax_rows, DenseLayer, Parameters,
    TrainHistory,
};
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruConfig {
    pub layer1_units: usize,
    pub layer2_units: usize,
    pub dropout1: f64,
    pub dropout2: f64,
    pub dense_units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub k_folds: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Global gradient-norm clip applied before every update.
    pub clip_norm: f64,
}

impl Default for GruConfig {
    fn default() -> Self {
        GruConfig {
            layer1_units: 64,
            layer2_units: 32,
            dropout1: 0.2,
            dropout2: 0.2,
            dense_units: 16,
            epochs: 50,
            batch_size: 32,
            k_folds: 10,
            seed: 42,
            adam: AdamConfig::default(),
            clip_norm: 5.0,
        }
    }
}

/// One GRU layer. Gate blocks are stored side by side in the order z, r, h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FlatGru", try_from = "FlatGru")]
pub struct GruLayer {
    /// Input weights, shape `(input_dim, 3 * units)`.
    pub w: Array2<f64>,
    /// Recurrent weights, shape `(units, 3 * units)`.
    pub u: Array2<f64>,
    /// Biases, length `3 * units`.
    pub b: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct FlatGru {
    input_dim: usize,
    units: usize,
    w: Vec<f64>,
    u: Vec<f64>,
    b: Vec<f64>,
}

impl From<GruLayer> for FlatGru {
    fn from(l: GruLayer) -> Self {
        FlatGru {
            input_dim: l.input_dim(),
            units: l.units(),
            w: l.w.as_standard_layout().iter().copied().collect(),
            u: l.u.as_standard_layout().iter().copied().collect(),
            b: l.b.to_vec(),
        }
    }
}

impl TryFrom<FlatGru> for GruLayer {
    type Error = String;

    fn try_from(f: FlatGru) -> Result<Self, String> {
        let h3 = 3 * f.units;
        let w = Array2::from_shape_vec((f.input_dim, h3), f.w).map_err(|e| e.to_string())?;
        let u = Array2::from_shape_vec((f.units, h3), f.u).map_err(|e| e.to_string())?;
        if f.b.len() != h3 {
            return Err(format!("bias length {} != {h3}", f.b.len()));
        }
        Ok(GruLayer {
            w,
            u,
            b: Array1::from(f.b),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    x: Array2<f64>,
    hp: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    c: Array2<f64>,
    rh: Array2<f64>,
}

impl GruLayer {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        GruLayer {
            w: Array2::zeros((input_dim, 3 * units)),
            u: Array2::zeros((units, 3 * units)),
            b: Array1::zeros(3 * units),
        }
    }

    /// Weights uniform in `±1/sqrt(units)`, zero biases.
    pub fn init<R: Rng>(input_dim: usize, units: usize, rng: &mut R) -> Self {
        let a = 1.0 / (units as f64).sqrt();
        let mut draw = || rng.random_range(-a..=a);
        GruLayer {
            w: Array2::from_shape_simple_fn((input_dim, 3 * units), &mut draw),
            u: Array2::from_shape_simple_fn((units, 3 * units), &mut draw),
            b: Array1::zeros(3 * units),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn units(&self) -> usize {
        self.u.nrows()
    }

    fn step(&self, x: Array2<f64>, hp: &Array2<f64>) -> (Array2<f64>, StepCache) {
        let h = self.units();
        let gx = x.dot(&self.w) + &self.b;
        let gh = hp.dot(&self.u.slice(s![.., ..2 * h]));
        let z = (&gx.slice(s![.., ..h]) + &gh.slice(s![.., ..h])).mapv(sigmoid);
        let r = (&gx.slice(s![.., h..2 * h]) + &gh.slice(s![.., h..])).mapv(sigmoid);
        let rh = &r * hp;
        let c = (&gx.slice(s![.., 2 * h..]) + &rh.dot(&self.u.slice(s![.., 2 * h..]))).mapv(f64::tanh);
        let mut out = hp.clone();
        ndarray::Zip::from(&mut out).and(&z).and(&c).for_each(|o, &z, &c| {
            *o = (1.0 - z) * *o + z * c;
        });
        let cache = StepCache {
            x,
            hp: hp.clone(),
            z,
            r,
            c,
            rh,
        };
        (out, cache)
    }

    /// Runs the layer over a sequence of `(batch, input_dim)` steps from a zero state.
    fn run(&self, steps: &[Array2<f64>]) -> (Vec<Array2<f64>>, Vec<StepCache>) {
        let batch = steps.first().map_or(0, |s| s.nrows());
        let mut hp = Array2::zeros((batch, self.units()));
        let mut states = Vec::with_capacity(steps.len());
        let mut caches = Vec::with_capacity(steps.len());
        for x in steps {
            let (h, cache) = self.step(x.clone(), &hp);
            states.push(h.clone());
            caches.push(cache);
            hp = h;
        }
        (states, caches)
    }

    /// Backpropagation through time. `d_states[t]` is the loss gradient
    /// arriving at the output state of step `t` from outside the recurrence.
    /// Accumulates into `grad` and returns the gradient w.r.t. each step input.
    fn backward(
        &self,
        caches: &[StepCache],
        d_states: &[Option<Array2<f64>>],
        grad: &mut GruLayer,
    ) -> Vec<Array2<f64>> {
        let h = self.units();
        let batch = caches.first().map_or(0, |c| c.hp.nrows());
        let mut carry: Array2<f64> = Array2::zeros((batch, h));
        let mut d_inputs = vec![Array2::zeros((0, 0)); caches.len()];
        let u_zr = self.u.slice(s![.., ..2 * h]);
        let u_c = self.u.slice(s![.., 2 * h..]);

        for t in (0..caches.len()).rev() {
            let StepCache { x, hp, z, r, c, rh } = &caches[t];
            let mut dh = carry;
            if let Some(ext) = &d_states[t] {
                dh += ext;
            }
            let dz = &dh * &(c - hp);
            let dc = &dh * z;
            let mut dhp = &dh * &z.mapv(|v| 1.0 - v);

            let dac = &dc * &c.mapv(|v| 1.0 - v * v);
            grad.u.slice_mut(s![.., 2 * h..]).scaled_add(1.0, &rh.t().dot(&dac));
            let drh = dac.dot(&u_c.t());
            let dr = &drh * hp;
            dhp += &(&drh * r);

            let daz = &dz * &z.mapv(|v| v * (1.0 - v));
            let dar = &dr * &r.mapv(|v| v * (1.0 - v));
            let mut da = Array2::zeros((batch, 3 * h));
            da.slice_mut(s![.., ..h]).assign(&daz);
            da.slice_mut(s![.., h..2 * h]).assign(&dar);
            da.slice_mut(s![.., 2 * h..]).assign(&dac);

            grad.w.scaled_add(1.0, &x.t().dot(&da));
            grad.b.scaled_add(1.0, &da.sum_axis(Axis(0)));
            let da_zr = da.slice(s![.., ..2 * h]);
            grad.u.slice_mut(s![.., ..2 * h]).scaled_add(1.0, &hp.t().dot(&da_zr));
            dhp += &da_zr.dot(&u_zr.t());

            d_inputs[t] = da.dot(&self.w.t());
            carry = dhp;
        }
        d_inputs
    }

    fn tensors(&self) -> [&[f64]; 3] {
        [
            self.w.as_slice().unwrap(),
            self.u.as_slice().unwrap(),
            self.b.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.w.as_slice_mut().unwrap(),
            self.u.as_slice_mut().unwrap(),
            self.b.as_slice_mut().unwrap(),
        ]
    }
}

/// Single GRU step for one sample.
pub fn gru_cell(layer: &GruLayer, x_t: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    if x_t.len() != layer.input_dim() {
        return Err(Error::Shape {
            expected: layer.input_dim(),
            got: x_t.len(),
        });
    }
    if h_prev.len() != layer.units() {
        return Err(Error::Shape {
            expected: layer.units(),
            got: h_prev.len(),
        });
    }
    let x = Array2::from_shape_vec((1, x_t.len()), x_t.to_vec()).unwrap();
    let hp = Array2::from_shape_vec((1, h_prev.len()), h_prev.to_vec()).unwrap();
    Ok(layer.step(x, &hp).0.into_raw_vec_and_offset().0)
}

/// `(n, d)` feature matrix to `(n, d, 1)` sequences.
pub fn reshape_to_sequence(matrix: ArrayView2<f64>) -> Array3<f64> {
    matrix.to_owned().insert_axis(Axis(2))
}

/// Inverse of [`reshape_to_sequence`].
pub fn flatten_sequence(seq: &Array3<f64>) -> Array2<f64> {
    seq.index_axis(Axis(2), 0).to_owned()
}

fn sequence_steps(x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    x.columns()
        .into_iter()
        .map(|col| col.to_owned().insert_axis(Axis(1)))
        .collect()
}

/// Inverted-dropout masks: entries are 0 or `1 / (1 - rate)`.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    /// One `(batch, layer1_units)` mask per sequence step.
    pub layer1: Vec<Array2<f64>>,
    pub layer2: Array2<f64>,
}

impl DropoutMasks {
    pub fn sample<R: Rng>(
        rng: &mut R,
        batch: usize,
        steps: usize,
        params: &GruParams,
        rate1: f64,
        rate2: f64,
    ) -> Self {
        let mut mask = |rows: usize, cols: usize, rate: f64| {
            let keep = 1.0 - rate;
            Array2::from_shape_simple_fn((rows, cols), || {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        };
        let u1 = params.layer1.units();
        let layer1 = (0..steps).map(|_| mask(batch, u1, rate1)).collect();
        let layer2 = mask(batch, params.layer2.units(), rate2);
        DropoutMasks { layer1, layer2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub layer1: GruLayer,
    pub layer2: GruLayer,
    pub dense: DenseLayer,
    pub output: DenseLayer,
}

struct GruForward {
    caches1: Vec<StepCache>,
    caches2: Vec<StepCache>,
    /// Layer-1 states after dropout (layer-2 inputs).
    h2_in: Array2<f64>,
    dense_pre: Array2<f64>,
    dense_out: Array2<f64>,
    logits: Array2<f64>,
}

impl GruParams {
    pub fn init(config: &GruConfig, seed: u64) -> Self {
        let mut rng = rng(seed);
        let layer1 = GruLayer::init(1, config.layer1_units, &mut rng);
        let layer2 = GruLayer::init(config.layer1_units, config.layer2_units, &mut rng);
        let dense = DenseLayer::he_normal(config.layer2_units, config.dense_units, &mut rng);
        let output = DenseLayer::he_normal(config.dense_units, NUM_CLASSES, &mut rng);
        GruParams {
            layer1,
            layer2,
            dense,
            output,
        }
    }

    pub fn zeros(config: &GruConfig) -> Self {
        GruParams {
            layer1: GruLayer::zeros(1, config.layer1_units),
            layer2: GruLayer::zeros(config.layer1_units, config.layer2_units),
            dense: DenseLayer::zeros(config.layer2_units, config.dense_units),
            output: DenseLayer::zeros(config.dense_units, NUM_CLASSES),
        }
    }

    fn zeros_like(&self) -> Self {
        GruParams {
            layer1: GruLayer::zeros(self.layer1.input_dim(), self.layer1.units()),
            layer2: GruLayer::zeros(self.layer2.input_dim(), self.layer2.units()),
            dense: DenseLayer::zeros(self.dense.inputs(), self.dense.outputs()),
            output: DenseLayer::zeros(self.output.inputs(), self.output.outputs()),
        }
    }

    fn run(&self, x: ArrayView2<f64>, masks: Option<&DropoutMasks>) -> Result<GruForward> {
        if x.ncols() == 0 {
            return Err(Error::Shape { expected: 1, got: 0 });
        }
        let steps = sequence_steps(x);
        let (mut states1, caches1) = self.layer1.run(&steps);
        if let Some(m) = masks {
            for (s, mask) in states1.iter_mut().zip(&m.layer1) {
                *s *= mask;
            }
        }
        let (states2, caches2) = self.layer2.run(&states1);
        let mut h2 = states2.last().unwrap().clone();
        if let Some(m) = masks {
            h2 *= &m.layer2;
        }
        let dense_pre = self.dense.forward(h2.view());
        let dense_out = relu(&dense_pre);
        let logits = self.output.forward(dense_out.view());
        Ok(GruForward {
            caches1,
            caches2,
            h2_in: h2,
            dense_pre,
            dense_out,
            logits,
        })
    }

    /// Class probabilities for every row (dropout off).
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((x.nrows(), NUM_CLASSES));
        for (chunk, mut dst) in x
            .axis_chunks_iter(Axis(0), 512)
            .zip(out.axis_chunks_iter_mut(Axis(0), 512))
        {
            dst.assign(&softmax_rows(self.run(chunk, None)?.logits.view()));
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64]) -> Result<[f64; 3]> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let p = self.forward_batch(row)?;
        Ok([p[[0, 0]], p[[0, 1]], p[[0, 2]]])
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<RulClass>> {
        Ok(argmax_rows(self.forward_batch(x)?.view()))
    }

    /// Mean cross-entropy and its gradient, optionally under fixed dropout masks.
    pub fn loss_grad(
        &self,
        x: ArrayView2<f64>,
        labels: &[RulClass],
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, GruParams)> {
        let (loss, grads, _) = self.loss_grad_probs(x, labels, masks)?;
        Ok((loss, grads))
    }

    fn loss_grad_probs(
        &self,
        x: ArrayView2<f64>,
        labels: &[RulClass],
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, GruParams, Array2<f64>)> {
        if labels.len() != x.nrows() {
            return Err(Error::LengthMismatch(labels.len(), x.nrows()));
        }
        let fwd = self.run(x, masks)?;
        let (loss, d_logits) = softmax_cross_entropy(fwd.logits.view(), labels);
        let mut g = self.zeros_like();

        let d_dense_out = self
            .output
            .backward(fwd.dense_out.view(), d_logits.view(), &mut g.output);
        let mut d_dense_pre = d_dense_out;
        d_dense_pre.zip_mut_with(&fwd.dense_pre, |d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let mut d_h2 = self
            .dense
            .backward(fwd.h2_in.view(), d_dense_pre.view(), &mut g.dense);
        if let Some(m) = masks {
            d_h2 *= &m.layer2;
        }

        let t = fwd.caches2.len();
        let mut d_states2 = vec![None; t];
        d_states2[t - 1] = Some(d_h2);
        let d_in2 = self.layer2.backward(&fwd.caches2, &d_states2, &mut g.layer2);

        let d_states1: Vec<Option<Array2<f64>>> = d_in2
            .into_iter()
            .enumerate()
            .map(|(step, mut d)| {
                if let Some(m) = masks {
                    d *= &m.layer1[step];
                }
                Some(d)
            })
            .collect();
        self.layer1.backward(&fwd.caches1, &d_states1, &mut g.layer1);

        Ok((loss, g, softmax_rows(fwd.logits.view())))
    }
}

impl Parameters for GruParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(10);
        v.extend(self.layer1.tensors());
        v.extend(self.layer2.tensors());
        v.extend(self.dense.tensors());
        v.extend(self.output.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(10);
        v.extend(self.layer1.tensors_mut());
        v.extend(self.layer2.tensors_mut());
        v.extend(self.dense.tensors_mut());
        v.extend(self.output.tensors_mut());
        v
    }
}

/// Trains on `train_rows` of a standardized feature matrix. When
/// `eval_rows` is given, the per-epoch validation curves are measured on it.
pub fn gru_train(
    config: &GruConfig,
    features: ArrayView2<f64>,
    labels: &[RulClass],
    train_rows: &[usize],
    eval_rows: Option<&[usize]>,
) -> Result<(GruParams, TrainHistory)> {
    if train_rows.is_empty() {
        return Err(Error::TooFewRows(0));
    }
    let mut params = GruParams::init(config, config.seed);
    let mut adam = Adam::new(config.adam);
    let mut history = TrainHistory::default();
    let mut dropout_rng = rng(config.seed.wrapping_add(0xD50F));
    let eval = eval_rows.map(|rows| {
        (
            features.select(Axis(0), rows),
            rows.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        )
    });

    for epoch in 0..config.epochs {
        let mut order = train_rows.to_vec();
        order.shuffle(&mut rng(epoch_seed(config.seed, epoch)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size.max(1)) {
            let x = features.select(Axis(0), batch);
            let y: Vec<RulClass> = batch.iter().map(|&i| labels[i]).collect();
            let masks = DropoutMasks::sample(
                &mut dropout_rng,
                batch.len(),
                x.ncols(),
                &params,
                config.dropout1,
                config.dropout2,
            );
            let (loss, mut grads, probs) = params.loss_grad_probs(x.view(), &y, Some(&masks))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "epoch",
                    index: epoch + 1,
                });
            }
            let norm = grads.global_norm();
            if norm > config.clip_norm {
                grads.scale(config.clip_norm / norm);
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
        let (val_loss, val_acc) = match &eval {
            Some((x, y)) if !y.is_empty() => {
                let probs = params.forward_batch(x.view())?;
                let logits = probs.mapv(|p| p.max(1e-300).ln());
                let (loss, _) = softmax_cross_entropy(logits.view(), y);
                (loss, accuracy_of(&argmax_rows(probs.view()), y))
            }
            _ => (f64::NAN, f64::NAN),
        };
        history.push(correct as f64 / n, val_acc, loss_sum / n, val_loss);
    }
    Ok((params, history))
}
