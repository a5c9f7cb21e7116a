//! Python module `rul`: datasets, models, cross-validation, the relay
//! controller, the link codec and the closed-loop simulation.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use rul_core::artifact::ModelArtifact;
use rul_core::controller::{ControlEvent, Controller as CoreController, ControllerConfig, Relay};
use rul_core::data::{argmax, label_table, load_labeled, synth_generate, RulClass, SampleTable, TercileThresholds};
use rul_core::eval::{cv_run, ConfusionMatrix, CvOptions, StdKind};
use rul_core::link::{self, DecodeEvent, Frame};
use rul_core::model::{train_holdout, ModelConfig, ModelKind, Profile};
use rul_core::sim::{parse_events, simulate as run_simulation, RowValues};

create_exception!(rul, RulError, PyException);

fn err(e: rul_core::Error) -> PyErr {
    RulError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> PyResult<T> {
    value
        .parse()
        .map_err(|_| PyValueError::new_err(format!("unknown {what} `{value}`")))
}

fn class_arg(class: usize) -> PyResult<RulClass> {
    RulClass::from_index(class).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A feature row given either in model column order or by name.
#[derive(FromPyObject)]
enum RowArg {
    Named(BTreeMap<String, f64>),
    Ordered(Vec<f64>),
}

impl From<RowArg> for RowValues {
    fn from(r: RowArg) -> Self {
        match r {
            RowArg::Named(m) => RowValues::Named(m),
            RowArg::Ordered(v) => RowValues::Ordered(v),
        }
    }
}

/// Labelled battery-cycle table.
#[pyclass(frozen)]
struct Dataset {
    table: SampleTable,
    thresholds: TercileThresholds,
}

#[pymethods]
impl Dataset {
    /// Loads a CSV or `dataset.v1` snapshot and bins RUL into terciles.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (table, thresholds) = load_labeled(path).map_err(err)?;
        Ok(Dataset { table, thresholds })
    }

    /// Synthetic cells with uniform RUL.
    #[staticmethod]
    #[pyo3(signature = (batteries=14, cycles=1100, seed=42))]
    fn synthetic(batteries: usize, cycles: usize, seed: u64) -> PyResult<Self> {
        if batteries == 0 || cycles < 10 {
            return Err(PyValueError::new_err("need at least 1 battery and 10 cycles"));
        }
        let mut table = synth_generate(batteries, cycles, seed);
        let thresholds = label_table(&mut table).map_err(err)?;
        Ok(Dataset { table, thresholds })
    }

    fn __len__(&self) -> usize {
        self.table.n_rows()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.table.feature_names.clone()
    }

    #[getter]
    fn thresholds(&self) -> (f64, f64) {
        (self.thresholds.t1, self.thresholds.t2)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.table.labels().iter().map(|c| c.index()).collect()
    }

    #[getter]
    fn rul(&self) -> Vec<f64> {
        self.table.rul.clone()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.table.n_rows() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.table.features.row(i).to_vec())
    }

    fn without_feature(&self, name: &str) -> Self {
        Dataset {
            table: self.table.without_feature(name),
            thresholds: self.thresholds,
        }
    }
}

fn config_for(kind: &str, seed: u64, profile: &str) -> PyResult<ModelConfig> {
    let kind: ModelKind = parse(kind, "model kind")?;
    let profile: Profile = parse(profile, "profile")?;
    Ok(ModelConfig::default_for(kind).with_seed(seed).with_profile(profile))
}

/// A trained classifier with its scaler.
#[pyclass(frozen)]
struct Model {
    artifact: ModelArtifact,
}

#[pymethods]
impl Model {
    /// Trains on a seeded split and keeps the held-out accuracy.
    #[staticmethod]
    #[pyo3(signature = (kind, dataset, seed=42, profile="full", test_fraction=0.2))]
    fn train(py: Python<'_>, kind: &str, dataset: &Dataset, seed: u64, profile: &str, test_fraction: f64) -> PyResult<Self> {
        let config = config_for(kind, seed, profile)?;
        let result = py
            .detach(|| train_holdout(&config, &dataset.table, test_fraction, seed))
            .map_err(err)?;
        let artifact = ModelArtifact::from_holdout(
            config,
            dataset.table.feature_names.clone(),
            Some(dataset.thresholds),
            &result,
            seed,
            test_fraction,
        );
        Ok(Model { artifact })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Model {
            artifact: ModelArtifact::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.artifact.save(path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.artifact.kind.as_str()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.artifact.feature_names.clone()
    }

    #[getter]
    fn train_accuracy(&self) -> Option<f64> {
        self.artifact.training.as_ref().map(|t| t.train_accuracy)
    }

    #[getter]
    fn test_accuracy(&self) -> Option<f64> {
        self.artifact.training.as_ref().map(|t| t.test_accuracy)
    }

    /// Class probabilities for one raw (unscaled) row.
    fn predict_proba(&self, row: RowArg) -> PyResult<[f64; 3]> {
        use rul_core::sim::Classifier;
        self.artifact.probabilities(&row.into()).map_err(err)
    }

    fn predict(&self, row: RowArg) -> PyResult<usize> {
        Ok(argmax(&self.predict_proba(row)?))
    }
}

/// K-fold cross-validation; returns fold accuracies, mean and std.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (kind, dataset, folds=10, seed=42, profile="full", stratified=true, sample_std=false))]
fn cross_validate<'py>(
    py: Python<'py>,
    kind: &str,
    dataset: &Dataset,
    folds: usize,
    seed: u64,
    profile: &str,
    stratified: bool,
    sample_std: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let config = config_for(kind, seed, profile)?;
    let options = CvOptions {
        k: folds,
        stratified,
        shuffle: true,
        seed,
        std_kind: if sample_std { StdKind::Sample } else { StdKind::Population },
    };
    let report = py.detach(|| cv_run(&config, &dataset.table, &options)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("fold_accuracy", report.fold_accuracy.clone())?;
    out.set_item("mean", report.mean)?;
    out.set_item("std", report.std)?;
    out.set_item("table", report.to_text())?;
    Ok(out)
}

/// Accuracy of a 3x3 confusion matrix (rows = true class).
#[pyfunction]
fn confusion_accuracy(counts: [[u64; 3]; 3]) -> f64 {
    ConfusionMatrix::from_counts(counts).accuracy()
}

/// Relay policy with debounce, manual override and heartbeat watchdog.
#[pyclass]
struct Controller {
    inner: CoreController,
}

impl Controller {
    fn handle(&mut self, event: ControlEvent, now: f64) -> Vec<&'static str> {
        self.inner.handle(event, now).iter().map(|c| c.as_str()).collect()
    }
}

#[pymethods]
impl Controller {
    #[new]
    #[pyo3(signature = (k_on=1, k_off=1, heartbeat_interval=1.0, missed_heartbeats=3, now=0.0))]
    fn new(k_on: u32, k_off: u32, heartbeat_interval: f64, missed_heartbeats: u32, now: f64) -> PyResult<Self> {
        let config = ControllerConfig {
            k_on,
            k_off,
            heartbeat_interval,
            missed_heartbeats_to_fault: missed_heartbeats,
        };
        if !config.is_valid() {
            return Err(PyValueError::new_err("invalid controller configuration"));
        }
        Ok(Controller {
            inner: CoreController::new(config, now),
        })
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.state().mode.as_str()
    }

    #[getter]
    fn relay_on(&self) -> bool {
        self.inner.state().relay.is_on()
    }

    #[getter]
    fn trace(&self) -> Vec<String> {
        self.inner.trace().to_vec()
    }

    fn prediction(&mut self, class: usize, now: f64) -> PyResult<Vec<&'static str>> {
        Ok(self.handle(ControlEvent::Prediction { class: class_arg(class)? }, now))
    }

    fn manual(&mut self, on: bool, now: f64) -> Vec<&'static str> {
        self.handle(ControlEvent::Manual { relay: Relay::from_on(on) }, now)
    }

    fn release(&mut self, now: f64) -> Vec<&'static str> {
        self.handle(ControlEvent::Release, now)
    }

    fn heartbeat(&mut self, now: f64) -> Vec<&'static str> {
        self.handle(ControlEvent::Heartbeat, now)
    }

    fn clock(&mut self, now: f64) -> Vec<&'static str> {
        self.handle(ControlEvent::Clock, now)
    }
}

#[pyfunction]
fn crc16(data: &[u8]) -> u16 {
    link::crc16(data)
}

/// Encodes one frame: start byte, stuffed header and payload, CRC.
#[pyfunction]
#[pyo3(signature = (msg_type, seq, payload, version=link::VERSION))]
fn encode_frame<'py>(py: Python<'py>, msg_type: u8, seq: u8, payload: Vec<u8>, version: u8) -> PyResult<Bound<'py, PyBytes>> {
    let frame = Frame {
        version,
        msg_type,
        seq,
        payload,
    };
    let bytes = link::encode_frame(&frame).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyBytes::new(py, &bytes))
}

/// Streaming frame decoder.
#[pyclass]
#[derive(Default)]
struct Decoder {
    inner: link::Decoder,
}

type DecodedItem = (&'static str, Option<u8>, Option<u8>, Option<Vec<u8>>, Option<&'static str>);

#[pymethods]
impl Decoder {
    #[new]
    fn new() -> Self {
        Decoder::default()
    }

    /// Each item is `(kind, msg_type, seq, payload, reason)`.
    fn feed(&mut self, data: &[u8]) -> Vec<DecodedItem> {
        self.inner
            .feed(data)
            .into_iter()
            .map(|e| match e {
                DecodeEvent::Frame(f) => ("frame", Some(f.msg_type), Some(f.seq), Some(f.payload), None),
                DecodeEvent::Error(err) => ("error", None, None, None, Some(err.reason())),
            })
            .collect()
    }
}

/// Replays a JSON-lines events script through model, controller and device
/// simulator.
#[pyfunction]
#[pyo3(signature = (model, events, k_on=1, k_off=1, heartbeat_interval=1.0))]
fn simulate<'py>(
    py: Python<'py>,
    model: &Model,
    events: &str,
    k_on: u32,
    k_off: u32,
    heartbeat_interval: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = ControllerConfig {
        k_on,
        k_off,
        heartbeat_interval,
        ..ControllerConfig::default()
    };
    if !config.is_valid() {
        return Err(PyValueError::new_err("invalid controller configuration"));
    }
    let events = parse_events(events).map_err(err)?;
    let outcome = run_simulation(&model.artifact, &events, &config).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("trace", outcome.trace.clone())?;
    out.set_item(
        "commands",
        outcome
            .commands
            .iter()
            .map(|(t, c)| (*t, c.as_str()))
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "predictions",
        outcome
            .predictions
            .iter()
            .map(|(t, c)| (*t, c.index()))
            .collect::<Vec<_>>(),
    )?;
    out.set_item("fault", outcome.fault)?;
    out.set_item("relay_on", outcome.device_relay_on)?;
    Ok(out)
}

#[pymodule]
fn rul(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RulError", m.py().get_type::<RulError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<Controller>()?;
    m.add_class::<Decoder>()?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(crc16, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
