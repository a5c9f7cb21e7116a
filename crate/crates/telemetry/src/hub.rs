//! Service state: model, controller, device link and event log behind one
//! lock, so every mutation is applied in a single order.

use std::collections::BTreeMap;
use std::io;

use rul_core::artifact::{ModelArtifact, TrainingMeta};
use rul_core::controller::{Command, ControlEvent, Controller, ControllerConfig, ControllerState, Mode, Relay};
use rul_core::data::{argmax, Feature, RulClass, TercileThresholds};
use rul_core::link::{DeviceSim, HostLink, LinkEvent, Message};
use rul_core::model::ModelKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::broadcast;

use crate::events::{Event, EventBody, EventLog, Notice, PinBoard, PinId, CLASS_PIN, RELAY_PIN};

const LIVE_BUFFER: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("missing or wrong API token")]
    Unauthorized,
    #[error("missing feature `{0}`")]
    MissingFeature(String),
    #[error("feature `{0}` is not a finite number")]
    InvalidFeature(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("no model loaded")]
    NoModel,
    #[error("device link is in FAULT")]
    Fault,
    #[error("device link: {0}")]
    Link(#[from] io::Error),
    #[error("inference failed: {0}")]
    Model(rul_core::Error),
}

impl ApiError {
    pub fn status(&self) -> u16 {
        match self {
            ApiError::Unauthorized => 401,
            ApiError::MissingFeature(_) | ApiError::InvalidFeature(_) | ApiError::BadRequest(_) => 400,
            ApiError::NoModel => 409,
            ApiError::Fault | ApiError::Link(_) => 503,
            ApiError::Model(_) => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    /// Feature values keyed by canonical name or dataset column name.
    pub features: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub class: u8,
    pub class_name: String,
    pub probabilities: [f64; 3],
    pub relay: Relay,
    pub mode: Mode,
    pub commands: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayMode {
    Manual,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayRequest {
    /// Required for `manual`, ignored for `release`.
    #[serde(default)]
    pub state: Option<Relay>,
    pub mode: RelayMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelayResponse {
    pub relay: Relay,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinView {
    pub pin: PinId,
    pub name: String,
    pub value: Option<f64>,
    pub at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinsResponse {
    pub pins: Vec<PinView>,
    pub relay: Relay,
    pub mode: Mode,
    pub last_seq: u64,
}

/// Column statistics from the model's scaler, for gauge ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub pin: Option<PinId>,
    pub name: String,
    pub column: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub schema: String,
    pub kind: ModelKind,
    pub features: Vec<FeatureInfo>,
    pub thresholds: Option<TercileThresholds>,
    pub training: Option<TrainingMeta>,
    pub link: String,
}

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub controller: ControllerConfig,
    pub token: Option<String>,
    /// Unix time corresponding to clock zero; event timestamps are offset by it.
    pub epoch_unix: f64,
}

impl Default for HubConfig {
    fn default() -> Self {
        HubConfig {
            controller: ControllerConfig::default(),
            token: None,
            epoch_unix: 0.0,
        }
    }
}

pub struct Hub {
    config: HubConfig,
    model: Option<ModelArtifact>,
    controller: Controller,
    link: HostLink,
    log: EventLog,
    board: PinBoard,
}

impl Hub {
    pub fn new(config: HubConfig, model: Option<ModelArtifact>, link: HostLink, now: f64) -> Self {
        Hub {
            controller: Controller::new(config.controller, now),
            config,
            model,
            link,
            log: EventLog::new(LIVE_BUFFER),
            board: PinBoard::default(),
        }
    }

    pub fn authorize(&self, presented: Option<&str>) -> Result<(), ApiError> {
        match &self.config.token {
            Some(expected) if presented != Some(expected.as_str()) => Err(ApiError::Unauthorized),
            _ => Ok(()),
        }
    }

    pub fn state(&self) -> &ControllerState {
        self.controller.state()
    }

    pub fn events(&self) -> &[Event] {
        self.log.events()
    }

    pub fn board(&self) -> &PinBoard {
        &self.board
    }

    pub fn subscribe(&self, since: u64) -> (Vec<Event>, broadcast::Receiver<Event>) {
        self.log.subscribe(since)
    }

    pub fn event_log_jsonl(&self) -> String {
        self.log.to_jsonl()
    }

    pub fn controller_trace(&self) -> &[String] {
        self.controller.trace()
    }

    /// The in-process device, when the link is simulated.
    pub fn simulator(&mut self) -> Option<&mut DeviceSim> {
        self.link.simulator()
    }

    pub fn pins(&self) -> PinsResponse {
        let state = self.controller.state();
        PinsResponse {
            pins: self
                .board
                .pins
                .iter()
                .map(|r| PinView {
                    pin: r.pin,
                    name: r.pin.label().to_string(),
                    value: r.value,
                    at: r.at,
                })
                .collect(),
            relay: state.relay,
            mode: state.mode,
            last_seq: self.log.last_seq(),
        }
    }

    pub fn model_info(&self) -> Result<ModelInfo, ApiError> {
        let m = self.model.as_ref().ok_or(ApiError::NoModel)?;
        let scaler = &m.model.scaler;
        Ok(ModelInfo {
            schema: m.schema.clone(),
            kind: m.kind,
            features: m
                .feature_names
                .iter()
                .enumerate()
                .map(|(j, col)| {
                    let f = Feature::from_header(col);
                    FeatureInfo {
                        pin: f.map(PinId::for_feature),
                        name: f.map_or(col.clone(), |f| f.name().to_string()),
                        column: col.clone(),
                        mean: scaler.mean[j],
                        std: scaler.std[j],
                    }
                })
                .collect(),
            thresholds: m.thresholds,
            training: m.training.clone(),
            link: self.link.describe(),
        })
    }

    fn wall(&self, now: f64) -> f64 {
        self.config.epoch_unix + now
    }

    fn emit(&mut self, now: f64, body: EventBody) {
        let at = self.wall(now);
        let event = self.log.push(at, body);
        self.board.apply(event);
    }

    fn set_pin(&mut self, pin: PinId, value: f64, now: f64) -> io::Result<()> {
        self.emit(now, EventBody::Pin { pin, value });
        self.link.send(&Message::Telemetry {
            pin: pin.0,
            value: value as f32,
        })?;
        Ok(())
    }

    /// Runs one controller event and records every visible change.
    fn apply(&mut self, event: ControlEvent, now: f64) -> io::Result<Vec<Command>> {
        let before = *self.controller.state();
        let commands = self.controller.handle(event, now);
        let after = *self.controller.state();
        for c in &commands {
            if let Some(relay) = c.relay() {
                self.link.send(&Message::SetRelay(relay.is_on()))?;
            }
        }
        if after.relay != before.relay {
            self.emit(now, EventBody::Pin { pin: RELAY_PIN, value: after.relay.is_on() as u8 as f64 });
        }
        if after.relay != before.relay || after.mode != before.mode {
            self.emit(now, EventBody::Relay { relay: after.relay, mode: after.mode });
        }
        if (after.mode == Mode::Fault) != (before.mode == Mode::Fault) {
            self.emit(now, EventBody::Fault { active: after.mode == Mode::Fault });
        }
        if commands.contains(&Command::NotifyChargeNeeded) {
            self.emit(now, EventBody::Notification { notice: Notice::ChargeNeeded });
        }
        Ok(commands)
    }

    /// Handles whatever the device sent by `now`.
    fn drain(&mut self, now: f64) -> io::Result<()> {
        for ev in self.link.poll(now)? {
            if let LinkEvent::Received {
                message: Message::Heartbeat,
                ..
            } = ev
            {
                self.apply(ControlEvent::Heartbeat, now)?;
            }
        }
        Ok(())
    }

    /// Periodic work: take in heartbeats, then check for a silent device.
    pub fn tick(&mut self, now: f64) -> io::Result<()> {
        self.drain(now)?;
        self.apply(ControlEvent::Clock, now)?;
        Ok(())
    }

    fn numeric_features(&self, model: &ModelArtifact, raw: &BTreeMap<String, Value>) -> Result<Vec<(String, f64)>, ApiError> {
        let known = |key: &str| Feature::from_header(key).is_some() || model.feature_names.iter().any(|c| c == key);
        let mut out = Vec::with_capacity(raw.len());
        for (key, value) in raw {
            match value.as_f64().filter(|v| v.is_finite()) {
                Some(v) => out.push((key.clone(), v)),
                None if known(key) => return Err(ApiError::InvalidFeature(key.clone())),
                None => {}
            }
        }
        Ok(out)
    }

    pub fn predict(&mut self, request: &PredictRequest, now: f64) -> Result<PredictResponse, ApiError> {
        let model = self.model.as_ref().ok_or(ApiError::NoModel)?;
        if self.controller.state().mode == Mode::Fault {
            return Err(ApiError::Fault);
        }
        let values = self.numeric_features(model, &request.features)?;
        let row = model
            .feature_row(values.iter().map(|(k, v)| (k.as_str(), *v)))
            .map_err(|e| match e {
                rul_core::Error::MissingColumn(name) => ApiError::MissingFeature(name),
                other => ApiError::Model(other),
            })?;
        let probabilities = model.predict_row(&row).map_err(ApiError::Model)?;
        let class = RulClass::from_index(argmax(&probabilities)).map_err(ApiError::Model)?;

        for feature in Feature::ALL {
            let value = values
                .iter()
                .find(|(k, _)| Feature::from_header(k) == Some(feature))
                .map(|(_, v)| *v);
            if let Some(v) = value {
                self.set_pin(PinId::for_feature(feature), v, now)?;
            }
        }
        self.set_pin(CLASS_PIN, class.index() as f64, now)?;
        let confidence_milli = (probabilities[class.index()].clamp(0.0, 1.0) * 1000.0).round() as u16;
        self.link.send(&Message::Prediction {
            class,
            confidence_milli,
        })?;
        let commands = self.apply(ControlEvent::Prediction { class }, now)?;
        self.drain(now)?;

        let state = self.controller.state();
        Ok(PredictResponse {
            class: class.index() as u8,
            class_name: class.name().to_string(),
            probabilities,
            relay: state.relay,
            mode: state.mode,
            commands: commands.iter().map(|c| c.as_str().to_string()).collect(),
        })
    }

    pub fn relay(&mut self, request: &RelayRequest, now: f64) -> Result<RelayResponse, ApiError> {
        if self.controller.state().mode == Mode::Fault {
            return Err(ApiError::Fault);
        }
        let event = match request.mode {
            RelayMode::Manual => ControlEvent::Manual {
                relay: request
                    .state
                    .ok_or_else(|| ApiError::BadRequest("manual mode needs `state`".into()))?,
            },
            RelayMode::Release => ControlEvent::Release,
        };
        self.apply(event, now)?;
        self.drain(now)?;
        let s = self.controller.state();
        Ok(RelayResponse {
            relay: s.relay,
            mode: s.mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use rul_core::link::SimTransport;

    use super::*;

    fn hub() -> Hub {
        let link = HostLink::new(Box::new(SimTransport::new(DeviceSim::new(1.0, 0.0))));
        Hub::new(HubConfig::default(), None, link, 0.0)
    }

    #[test]
    fn token_check() {
        let mut h = hub();
        assert!(h.authorize(None).is_ok());
        h.config.token = Some("s3cret".into());
        assert!(matches!(h.authorize(None), Err(ApiError::Unauthorized)));
        assert!(matches!(h.authorize(Some("nope")), Err(ApiError::Unauthorized)));
        assert!(h.authorize(Some("s3cret")).is_ok());
    }

    #[test]
    fn predict_without_model_is_conflict() {
        let mut h = hub();
        let req = PredictRequest {
            features: BTreeMap::new(),
        };
        let err = h.predict(&req, 0.0).unwrap_err();
        assert_eq!(err.status(), 409);
    }

    #[test]
    fn silent_device_faults_and_recovers() {
        let mut h = hub();
        h.simulator().unwrap().set_heartbeats_enabled(false);
        for t in 1..=4 {
            h.tick(t as f64).unwrap();
        }
        assert_eq!(h.state().mode, Mode::Fault);
        let kinds: Vec<&str> = h.events().iter().map(|e| e.body.kind()).collect();
        assert_eq!(kinds, vec!["relay", "fault"]);
        let err = h
            .relay(
                &RelayRequest {
                    state: Some(Relay::On),
                    mode: RelayMode::Manual,
                },
                4.0,
            )
            .unwrap_err();
        assert_eq!(err.status(), 503);

        h.simulator().unwrap().set_heartbeats_enabled(true);
        h.tick(5.0).unwrap();
        assert_eq!(h.state().mode, Mode::Auto);
        assert_eq!(h.events().last().unwrap().body, EventBody::Fault { active: false });
    }

    #[test]
    fn manual_needs_state() {
        let mut h = hub();
        let err = h
            .relay(
                &RelayRequest {
                    state: None,
                    mode: RelayMode::Manual,
                },
                0.0,
            )
            .unwrap_err();
        assert_eq!(err.status(), 400);
    }
}
