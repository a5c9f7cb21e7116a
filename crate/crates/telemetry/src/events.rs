//! Virtual pins and the append-only event log.

use std::fmt;
use std::str::FromStr;

use rul_core::controller::{Mode, Relay};
use rul_core::data::Feature;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use tokio::sync::broadcast;

/// Pin holding the predicted class.
pub const CLASS_PIN: PinId = PinId(9);
/// Pin holding the relay state as 0/1.
pub const RELAY_PIN: PinId = PinId(10);
pub const PIN_COUNT: usize = 11;

/// Virtual pin `V0`..`V10`. V0..V8 carry the features in dataset order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PinId(pub u8);

impl PinId {
    pub fn all() -> impl Iterator<Item = PinId> {
        (0..PIN_COUNT as u8).map(PinId)
    }

    pub fn for_feature(feature: Feature) -> PinId {
        PinId(feature.pin())
    }

    pub fn label(self) -> &'static str {
        match self {
            CLASS_PIN => "predicted_class",
            RELAY_PIN => "relay",
            PinId(n) => Feature::from_pin(n).map_or("unknown", Feature::name),
        }
    }
}

impl fmt::Display for PinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "V{}", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid pin `{0}`")]
pub struct BadPin(String);

impl FromStr for PinId {
    type Err = BadPin;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('V')
            .and_then(|n| n.parse::<u8>().ok())
            .filter(|&n| (n as usize) < PIN_COUNT)
            .map(PinId)
            .ok_or_else(|| BadPin(s.to_string()))
    }
}

impl Serialize for PinId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PinId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Notice {
    ChargeNeeded,
}

/// What happened, keyed by the event kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Pin { pin: PinId, value: f64 },
    Relay { relay: Relay, mode: Mode },
    Notification { notice: Notice },
    Fault { active: bool },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Pin { .. } => "pin",
            EventBody::Relay { .. } => "relay",
            EventBody::Notification { .. } => "notification",
            EventBody::Fault { .. } => "fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    /// Unix time in seconds.
    pub at: f64,
    #[serde(flatten)]
    pub body: EventBody,
}

/// Latest value of one pin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinReading {
    pub pin: PinId,
    pub value: Option<f64>,
    pub at: Option<f64>,
}

/// Current value of every pin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinBoard {
    pub pins: Vec<PinReading>,
}

impl Default for PinBoard {
    fn default() -> Self {
        PinBoard {
            pins: PinId::all()
                .map(|pin| PinReading {
                    pin,
                    value: None,
                    at: None,
                })
                .collect(),
        }
    }
}

impl PinBoard {
    pub fn apply(&mut self, event: &Event) {
        if let EventBody::Pin { pin, value } = event.body {
            let slot = &mut self.pins[pin.0 as usize];
            slot.value = Some(value);
            slot.at = Some(event.at);
        }
    }

    /// Folds a log from the beginning.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> PinBoard {
        let mut board = PinBoard::default();
        for e in events {
            board.apply(e);
        }
        board
    }

    pub fn get(&self, pin: PinId) -> Option<f64> {
        self.pins[pin.0 as usize].value
    }
}

/// Append-only log with fan-out to live subscribers. Sequence numbers start
/// at 1, so `since = 0` means "everything".
#[derive(Debug)]
pub struct EventLog {
    events: Vec<Event>,
    live: broadcast::Sender<Event>,
}

impl EventLog {
    pub fn new(capacity: usize) -> Self {
        let (live, _) = broadcast::channel(capacity.max(1));
        EventLog { events: Vec::new(), live }
    }

    pub fn push(&mut self, at: f64, body: EventBody) -> &Event {
        let event = Event {
            seq: self.events.len() as u64 + 1,
            at,
            body,
        };
        // No subscribers is not an error.
        let _ = self.live.send(event.clone());
        self.events.push(event);
        self.events.last().expect("just pushed")
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.len() as u64
    }

    /// Events after `since` plus a receiver for everything later. Taken
    /// together under the same borrow, so nothing falls between them.
    pub fn subscribe(&self, since: u64) -> (Vec<Event>, broadcast::Receiver<Event>) {
        let start = (since as usize).min(self.events.len());
        (self.events[start..].to_vec(), self.live.subscribe())
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
            .collect()
    }
}
