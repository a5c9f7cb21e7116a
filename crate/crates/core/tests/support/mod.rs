//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rul_core::controller::{Command, ControlEvent, ControllerConfig, ControllerState, Mode, Relay};
use rul_core::data::RulClass;
use rul_core::link::{Frame, MessageType, VERSION};

/// Shift-register CRC-16/CCITT-FALSE.
pub fn bitwise_crc(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in bytes {
        for i in (0..8).rev() {
            let top = crc & 0x8000 != 0;
            crc <<= 1;
            if top != ((byte >> i) & 1 == 1) {
                crc ^= 0x1021;
            }
        }
    }
    crc
}

/// A valid frame of a random known type with a random payload of the right size.
pub fn random_frame<R: Rng>(rng: &mut R) -> Frame {
    let t = MessageType::ALL[rng.random_range(0..MessageType::ALL.len())];
    Frame {
        version: VERSION,
        msg_type: t as u8,
        seq: rng.random(),
        payload: (0..t.payload_len()).map(|_| rng.random()).collect(),
    }
}

/// Splits `bytes` into random chunks, including empty ones.
pub fn random_chunks<R: Rng>(rng: &mut R, bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let n = rng.random_range(0..=7).min(bytes.len() - i);
        out.push(bytes[i..i + n].to_vec());
        i += n;
    }
    out
}

/// Reference interpreter for the relay policy, written as explicit
/// case analysis over (mode, event).
pub fn reference_step(
    s: &ControllerState,
    cfg: &ControllerConfig,
    event: ControlEvent,
    now: f64,
) -> (ControllerState, Vec<Command>) {
    let mut n = *s;
    let mut cmds = Vec::new();
    match (s.mode, event) {
        (Mode::Auto, ControlEvent::Prediction { class: RulClass::Low }) => {
            n.consecutive_low += 1;
            n.consecutive_high = 0;
            if n.consecutive_low >= cfg.k_on && s.relay == Relay::Off {
                n.relay = Relay::On;
                cmds = vec![Command::SetRelayOn, Command::NotifyChargeNeeded];
            }
        }
        (Mode::Auto, ControlEvent::Prediction { class: RulClass::High }) => {
            n.consecutive_high += 1;
            n.consecutive_low = 0;
            if n.consecutive_high >= cfg.k_off && s.relay == Relay::On {
                n.relay = Relay::Off;
                cmds = vec![Command::SetRelayOff];
            }
        }
        (Mode::Auto, ControlEvent::Prediction { class: RulClass::Mid }) => {
            n.consecutive_low = 0;
            n.consecutive_high = 0;
        }
        (_, ControlEvent::Prediction { .. }) => {}
        (Mode::Fault, ControlEvent::Manual { .. } | ControlEvent::Release) => {}
        (_, ControlEvent::Manual { relay }) => {
            n.mode = Mode::ManualOverride;
            n.consecutive_low = 0;
            n.consecutive_high = 0;
            if relay != s.relay {
                n.relay = relay;
                cmds = vec![if relay == Relay::On {
                    Command::SetRelayOn
                } else {
                    Command::SetRelayOff
                }];
            }
        }
        (_, ControlEvent::Release) => {
            n.mode = Mode::Auto;
            n.consecutive_low = 0;
            n.consecutive_high = 0;
        }
        (Mode::Fault, ControlEvent::Heartbeat) => {
            n.mode = Mode::Auto;
            n.consecutive_low = 0;
            n.consecutive_high = 0;
            n.last_heartbeat = now;
        }
        (_, ControlEvent::Heartbeat) => n.last_heartbeat = now,
        (Mode::Fault, ControlEvent::Clock) => {}
        (_, ControlEvent::Clock) => {
            let limit = cfg.missed_heartbeats_to_fault as f64 * cfg.heartbeat_interval;
            if now - s.last_heartbeat > limit {
                n.mode = Mode::Fault;
                n.relay = Relay::Off;
                n.consecutive_low = 0;
                n.consecutive_high = 0;
                cmds = vec![Command::SetRelayOff];
            }
        }
    }
    (n, cmds)
}

/// Every event kind the controller accepts.
pub fn all_events() -> Vec<ControlEvent> {
    let mut v: Vec<ControlEvent> = RulClass::ALL
        .iter()
        .map(|&class| ControlEvent::Prediction { class })
        .collect();
    v.push(ControlEvent::Manual { relay: Relay::On });
    v.push(ControlEvent::Manual { relay: Relay::Off });
    v.push(ControlEvent::Release);
    v.push(ControlEvent::Heartbeat);
    v.push(ControlEvent::Clock);
    v
}

/// All states with counters up to `max_count`, respecting the
/// one-counter-at-a-time invariant.
pub fn all_states(max_count: u32, last_heartbeat: f64) -> Vec<ControllerState> {
    let mut out = Vec::new();
    for mode in Mode::ALL {
        for relay in [Relay::On, Relay::Off] {
            for low in 0..=max_count {
                for high in 0..=max_count {
                    if low > 0 && high > 0 {
                        continue;
                    }
                    out.push(ControllerState {
                        mode,
                        relay,
                        consecutive_low: low,
                        consecutive_high: high,
                        last_heartbeat,
                    });
                }
            }
        }
    }
    out
}

pub fn random_event<R: Rng>(rng: &mut R) -> ControlEvent {
    let events = all_events();
    events[rng.random_range(0..events.len())]
}
