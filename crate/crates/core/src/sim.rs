//! Closed-loop replay: feature rows and operator commands are driven through
//! model, controller and the simulated device on a virtual clock.
//!
//! Events file: one JSON object per line, each with an `at` time in seconds
//! and a `kind`:
//!
//! ```text
//! {"at": 0.0, "kind": "row", "features": {"cycle_index": 12, ...}}
//! {"at": 1.0, "kind": "row", "features": [12.0, 2595.3, ...]}
//! {"at": 2.0, "kind": "prediction", "class": 0}
//! {"at": 3.0, "kind": "manual", "relay": "off"}
//! {"at": 4.0, "kind": "release"}
//! {"at": 5.0, "kind": "heartbeat_drop", "duration": 4.0}
//! ```
//!
//! Blank lines and lines starting with `#` are skipped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::artifact::ModelArtifact;
use crate::controller::{Command, ControlEvent, Controller, ControllerConfig, Mode, Relay};
use crate::data::{argmax, RulClass};
use crate::error::{Error, Result};
use crate::link::{DeviceSim, HostLink, LinkEvent, Message, SimTransport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RowValues {
    Named(BTreeMap<String, f64>),
    Ordered(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimAction {
    Row { features: RowValues },
    /// A class injected directly, bypassing the model.
    Prediction { class: RulClass },
    Manual { relay: Relay },
    Release,
    /// Device heartbeats are lost for `duration` seconds.
    HeartbeatDrop { duration: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub at: f64,
    #[serde(flatten)]
    pub action: SimAction,
}

pub fn parse_events(text: &str) -> Result<Vec<SimEvent>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ev: SimEvent = serde_json::from_str(line).map_err(|e| Error::Events {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !ev.at.is_finite() || ev.at < 0.0 {
            return Err(Error::Events {
                line: i + 1,
                message: format!("invalid time {}", ev.at),
            });
        }
        if let SimAction::HeartbeatDrop { duration } = ev.action {
            if !duration.is_finite() || duration < 0.0 {
                return Err(Error::Events {
                    line: i + 1,
                    message: format!("invalid duration {duration}"),
                });
            }
        }
        out.push(ev);
    }
    Ok(out)
}

/// Maps a feature row to class probabilities.
pub trait Classifier {
    fn probabilities(&self, row: &RowValues) -> Result<[f64; 3]>;
}

impl Classifier for ModelArtifact {
    fn probabilities(&self, row: &RowValues) -> Result<[f64; 3]> {
        let raw = match row {
            RowValues::Ordered(v) => v.clone(),
            RowValues::Named(m) => self.feature_row(m.iter().map(|(k, v)| (k.as_str(), *v)))?,
        };
        self.predict_row(&raw)
    }
}

impl<F> Classifier for F
where
    F: Fn(&RowValues) -> Result<[f64; 3]>,
{
    fn probabilities(&self, row: &RowValues) -> Result<[f64; 3]> {
        self(row)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    /// Controller trace, one tab-separated line per delivered event.
    pub trace: Vec<String>,
    /// Every controller command with its time.
    pub commands: Vec<(f64, Command)>,
    pub predictions: Vec<(f64, RulClass)>,
    pub fault: bool,
    pub device_relay_on: bool,
}

impl SimOutcome {
    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|l| format!("{l}\n")).collect()
    }
}

struct Loop<'a> {
    classifier: &'a dyn Classifier,
    controller: Controller,
    link: HostLink,
    interval: f64,
    next_tick: f64,
    drops: Vec<(f64, f64)>,
    out: SimOutcome,
}

impl Loop<'_> {
    fn dropped(&self, t: f64) -> bool {
        self.drops.iter().any(|&(a, b)| a <= t && t < b)
    }

    fn device(&mut self) -> &mut DeviceSim {
        self.link.simulator().expect("in-process device")
    }

    fn deliver(&mut self, event: ControlEvent, t: f64) -> Result<()> {
        let commands = self.controller.handle(event, t);
        if self.controller.state().mode == Mode::Fault {
            self.out.fault = true;
        }
        for c in commands {
            self.out.commands.push((t, c));
            if let Some(relay) = c.relay() {
                self.link.send(&Message::SetRelay(relay.is_on()))?;
                self.drain(t)?;
            }
        }
        Ok(())
    }

    /// Processes replies that arrived by `t`.
    fn drain(&mut self, t: f64) -> Result<()> {
        for ev in self.link.poll(t)? {
            if let LinkEvent::Received {
                message: Message::Heartbeat,
                ..
            } = ev
            {
                self.deliver(ControlEvent::Heartbeat, t)?;
            }
        }
        Ok(())
    }

    /// Runs every clock tick up to and including `t`.
    fn advance(&mut self, t: f64) -> Result<()> {
        while self.next_tick <= t {
            let tick = self.next_tick;
            self.deliver(ControlEvent::Clock, tick)?;
            let silent = self.dropped(tick);
            self.device().set_heartbeats_enabled(!silent);
            self.drain(tick)?;
            self.next_tick += self.interval;
        }
        Ok(())
    }

    fn apply(&mut self, ev: &SimEvent) -> Result<()> {
        let t = ev.at;
        match &ev.action {
            SimAction::Row { features } => {
                let p = self.classifier.probabilities(features)?;
                let class = RulClass::from_index(argmax(&p))?;
                self.predict(class, p[class.index()], t)?;
            }
            SimAction::Prediction { class } => self.predict(*class, 1.0, t)?,
            SimAction::Manual { relay } => self.deliver(ControlEvent::Manual { relay: *relay }, t)?,
            SimAction::Release => self.deliver(ControlEvent::Release, t)?,
            SimAction::HeartbeatDrop { .. } => {}
        }
        Ok(())
    }

    fn predict(&mut self, class: RulClass, confidence: f64, t: f64) -> Result<()> {
        self.out.predictions.push((t, class));
        let confidence_milli = (confidence.clamp(0.0, 1.0) * 1000.0).round() as u16;
        self.link.send(&Message::Prediction {
            class,
            confidence_milli,
        })?;
        self.drain(t)?;
        self.deliver(ControlEvent::Prediction { class }, t)
    }
}

/// Replays `events` (ordered by time, ties in file order) from t = 0. The
/// clock runs one heartbeat interval past the last event or drop window.
pub fn simulate(classifier: &dyn Classifier, events: &[SimEvent], config: &ControllerConfig) -> Result<SimOutcome> {
    let interval = config.heartbeat_interval;
    let mut events = events.to_vec();
    events.sort_by(|a, b| a.at.total_cmp(&b.at));
    let drops: Vec<(f64, f64)> = events
        .iter()
        .filter_map(|e| match e.action {
            SimAction::HeartbeatDrop { duration } => Some((e.at, e.at + duration)),
            _ => None,
        })
        .collect();
    let end = events
        .iter()
        .map(|e| e.at)
        .chain(drops.iter().map(|d| d.1))
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.max(t))));

    let transport = SimTransport::new(DeviceSim::new(interval, 0.0));
    let mut sim = Loop {
        classifier,
        controller: Controller::new(*config, 0.0),
        link: HostLink::new(Box::new(transport)),
        interval,
        next_tick: interval,
        drops,
        out: SimOutcome {
            trace: vec![],
            commands: vec![],
            predictions: vec![],
            fault: false,
            device_relay_on: false,
        },
    };
    for ev in &events {
        sim.advance(ev.at)?;
        sim.apply(ev)?;
    }
    if let Some(end) = end {
        sim.advance(end + interval)?;
    }
    sim.out.device_relay_on = sim.device().relay_on();
    sim.out.trace = sim.controller.take_trace();
    Ok(sim.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn by_class(row: &RowValues) -> Result<[f64; 3]> {
        // First value encodes the class directly.
        let c = match row {
            RowValues::Ordered(v) => v[0] as usize,
            RowValues::Named(m) => m["class"] as usize,
        };
        let mut p = [0.0; 3];
        p[c] = 1.0;
        Ok(p)
    }

    fn ev(at: f64, action: SimAction) -> SimEvent {
        SimEvent { at, action }
    }

    #[test]
    fn parses_event_lines() {
        let text = r#"
# comment
{"at": 0.5, "kind": "row", "features": [1.0, 2.0]}
{"at": 1, "kind": "row", "features": {"class": 0}}
{"at": 2, "kind": "manual", "relay": "off"}
{"at": 3, "kind": "release"}
{"at": 4, "kind": "heartbeat_drop", "duration": 4}
{"at": 5, "kind": "prediction", "class": 2}
"#;
        let evs = parse_events(text).unwrap();
        assert_eq!(evs.len(), 6);
        assert_eq!(evs[2].action, SimAction::Manual { relay: Relay::Off });
        assert!(matches!(parse_events("{\"at\": 1}"), Err(Error::Events { line: 1, .. })));
        assert!(matches!(
            parse_events("{\"at\": -1, \"kind\": \"release\"}"),
            Err(Error::Events { .. })
        ));
    }

    #[test]
    fn empty_script_empty_trace() {
        let out = simulate(&by_class, &[], &ControllerConfig::default()).unwrap();
        assert!(out.trace.is_empty() && !out.fault);
    }

    #[test]
    fn low_row_turns_relay_on() {
        let evs = [ev(0.5, SimAction::Row { features: RowValues::Ordered(vec![0.0]) })];
        let out = simulate(&by_class, &evs, &ControllerConfig::default()).unwrap();
        assert!(out.device_relay_on);
        assert_eq!(out.commands[0], (0.5, Command::SetRelayOn));
        assert!(out.trace[0].contains("SET_RELAY_ON"));
    }

    #[test]
    fn heartbeat_drop_faults_after_three_missed() {
        let cfg = ControllerConfig::default();
        // Heartbeats at 3, 4, 5 lost.
        let three = [ev(2.5, SimAction::HeartbeatDrop { duration: 3.0 })];
        let out = simulate(&by_class, &three, &cfg).unwrap();
        assert!(out.fault);
        assert!(out.trace.iter().any(|l| l.contains("FAULT")));
        // Heartbeats at 3, 4 lost.
        let two = [ev(2.5, SimAction::HeartbeatDrop { duration: 2.0 })];
        assert!(!simulate(&by_class, &two, &cfg).unwrap().fault);
    }

    #[test]
    fn replay_is_deterministic() {
        let evs: Vec<SimEvent> = (0..6)
            .map(|i| {
                ev(
                    i as f64 * 0.7,
                    SimAction::Prediction {
                        class: RulClass::from_index(i % 3).unwrap(),
                    },
                )
            })
            .collect();
        let a = simulate(&by_class, &evs, &ControllerConfig::default()).unwrap();
        let b = simulate(&by_class, &evs, &ControllerConfig::default()).unwrap();
        assert_eq!(a.trace_text(), b.trace_text());
    }
}
