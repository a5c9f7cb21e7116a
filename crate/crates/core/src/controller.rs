//! Charge-relay policy as a pure transition function over
//! (state, config, event), plus a small owner that records a trace.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::RulClass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Consecutive low-class predictions needed to switch the relay on.
    pub k_on: u32,
    /// Consecutive high-class predictions needed to switch it off.
    pub k_off: u32,
    /// Seconds between device heartbeats.
    pub heartbeat_interval: f64,
    pub missed_heartbeats_to_fault: u32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            k_on: 1,
            k_off: 1,
            heartbeat_interval: 1.0,
            missed_heartbeats_to_fault: 3,
        }
    }
}

impl ControllerConfig {
    pub fn is_valid(&self) -> bool {
        self.k_on >= 1
            && self.k_off >= 1
            && self.missed_heartbeats_to_fault >= 1
            && self.heartbeat_interval.is_finite()
            && self.heartbeat_interval > 0.0
    }

    pub fn fault_after(&self) -> f64 {
        self.missed_heartbeats_to_fault as f64 * self.heartbeat_interval
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Auto,
    ManualOverride,
    Fault,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Auto, Mode::ManualOverride, Mode::Fault];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Auto => "AUTO",
            Mode::ManualOverride => "MANUAL_OVERRIDE",
            Mode::Fault => "FAULT",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relay {
    On,
    Off,
}

impl Relay {
    pub fn is_on(self) -> bool {
        self == Relay::On
    }

    pub fn from_on(on: bool) -> Relay {
        if on {
            Relay::On
        } else {
            Relay::Off
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relay::On => "ON",
            Relay::Off => "OFF",
        }
    }

    fn command(self) -> Command {
        match self {
            Relay::On => Command::SetRelayOn,
            Relay::Off => Command::SetRelayOff,
        }
    }
}

impl fmt::Display for Relay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Command {
    SetRelayOn,
    SetRelayOff,
    NotifyChargeNeeded,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::SetRelayOn => "SET_RELAY_ON",
            Command::SetRelayOff => "SET_RELAY_OFF",
            Command::NotifyChargeNeeded => "NOTIFY_CHARGE_NEEDED",
        }
    }

    pub fn relay(self) -> Option<Relay> {
        match self {
            Command::SetRelayOn => Some(Relay::On),
            Command::SetRelayOff => Some(Relay::Off),
            Command::NotifyChargeNeeded => None,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: Mode,
    /// Last commanded relay position.
    pub relay: Relay,
    pub consecutive_low: u32,
    pub consecutive_high: u32,
    /// Time of the last heartbeat, seconds.
    pub last_heartbeat: f64,
}

impl ControllerState {
    /// AUTO, relay off, heartbeat clock starting at `now`.
    pub fn new(now: f64) -> Self {
        ControllerState {
            mode: Mode::Auto,
            relay: Relay::Off,
            consecutive_low: 0,
            consecutive_high: 0,
            last_heartbeat: now,
        }
    }

    fn reset_counters(mut self) -> Self {
        self.consecutive_low = 0;
        self.consecutive_high = 0;
        self
    }
}

pub type Transition = (ControllerState, Vec<Command>);

pub fn on_prediction(state: ControllerState, config: &ControllerConfig, predicted: RulClass) -> Transition {
    if state.mode != Mode::Auto {
        return (state, vec![]);
    }
    let mut s = state;
    let mut out = vec![];
    match predicted {
        RulClass::Low => {
            s.consecutive_high = 0;
            s.consecutive_low = s.consecutive_low.saturating_add(1);
            if s.consecutive_low >= config.k_on && s.relay == Relay::Off {
                s.relay = Relay::On;
                out.push(Command::SetRelayOn);
                out.push(Command::NotifyChargeNeeded);
            }
        }
        RulClass::High => {
            s.consecutive_low = 0;
            s.consecutive_high = s.consecutive_high.saturating_add(1);
            if s.consecutive_high >= config.k_off && s.relay == Relay::On {
                s.relay = Relay::Off;
                out.push(Command::SetRelayOff);
            }
        }
        RulClass::Mid => s = s.reset_counters(),
    }
    (s, out)
}

/// Operator command. Ignored in FAULT.
pub fn on_manual(state: ControllerState, desired: Relay) -> Transition {
    if state.mode == Mode::Fault {
        return (state, vec![]);
    }
    let mut s = state.reset_counters();
    s.mode = Mode::ManualOverride;
    let out = if s.relay != desired {
        s.relay = desired;
        vec![desired.command()]
    } else {
        vec![]
    };
    (s, out)
}

/// Back to AUTO from MANUAL_OVERRIDE; a no-op in FAULT.
pub fn release_override(state: ControllerState) -> ControllerState {
    if state.mode == Mode::Fault {
        return state;
    }
    let mut s = state.reset_counters();
    s.mode = Mode::Auto;
    s
}

pub fn on_clock(state: ControllerState, config: &ControllerConfig, now: f64) -> Transition {
    if state.mode == Mode::Fault || now - state.last_heartbeat <= config.fault_after() {
        return (state, vec![]);
    }
    let mut s = state.reset_counters();
    s.mode = Mode::Fault;
    s.relay = Relay::Off;
    (s, vec![Command::SetRelayOff])
}

/// Records the heartbeat time; leaves FAULT for AUTO.
pub fn on_heartbeat(state: ControllerState, now: f64) -> ControllerState {
    let mut s = state;
    s.last_heartbeat = now;
    if s.mode == Mode::Fault {
        s = s.reset_counters();
        s.mode = Mode::Auto;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlEvent {
    Prediction { class: RulClass },
    Manual { relay: Relay },
    Release,
    Heartbeat,
    Clock,
}

impl ControlEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            ControlEvent::Prediction { .. } => "prediction",
            ControlEvent::Manual { .. } => "manual",
            ControlEvent::Release => "release",
            ControlEvent::Heartbeat => "heartbeat",
            ControlEvent::Clock => "clock",
        }
    }

    fn input(&self) -> String {
        match self {
            ControlEvent::Prediction { class } => class.index().to_string(),
            ControlEvent::Manual { relay } => relay.to_string(),
            _ => "-".to_string(),
        }
    }
}

/// Dispatches one event at time `now`.
pub fn transition(
    state: ControllerState,
    config: &ControllerConfig,
    event: ControlEvent,
    now: f64,
) -> Transition {
    match event {
        ControlEvent::Prediction { class } => on_prediction(state, config, class),
        ControlEvent::Manual { relay } => on_manual(state, relay),
        ControlEvent::Release => (release_override(state), vec![]),
        ControlEvent::Heartbeat => (on_heartbeat(state, now), vec![]),
        ControlEvent::Clock => on_clock(state, config, now),
    }
}

/// One trace line: time, event kind, input, mode, relay, commands.
pub fn trace_line(now: f64, event: &ControlEvent, state: &ControllerState, commands: &[Command]) -> String {
    let cmds = if commands.is_empty() {
        "NONE".to_string()
    } else {
        commands.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(",")
    };
    format!(
        "{now:.3}\t{}\t{}\t{}\t{}\t{cmds}",
        event.kind(),
        event.input(),
        state.mode,
        state.relay
    )
}

/// Single owner of a controller state; every handled event is traced.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    state: ControllerState,
    trace: Vec<String>,
}

impl Controller {
    pub fn new(config: ControllerConfig, now: f64) -> Self {
        assert!(config.is_valid(), "invalid controller config");
        Controller {
            config,
            state: ControllerState::new(now),
            trace: Vec::new(),
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn handle(&mut self, event: ControlEvent, now: f64) -> Vec<Command> {
        let (next, commands) = transition(self.state, &self.config, event, now);
        self.state = next;
        self.trace.push(trace_line(now, &event, &next, &commands));
        commands
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        std::mem::take(&mut self.trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(k_on: u32, k_off: u32) -> ControllerConfig {
        ControllerConfig {
            k_on,
            k_off,
            ..ControllerConfig::default()
        }
    }

    #[test]
    fn low_prediction_switches_on_and_notifies() {
        let (s, c) = on_prediction(ControllerState::new(0.0), &cfg(1, 1), RulClass::Low);
        assert_eq!(c, vec![Command::SetRelayOn, Command::NotifyChargeNeeded]);
        assert_eq!(s.relay, Relay::On);
        let (_, c) = on_prediction(s, &cfg(1, 1), RulClass::Low);
        assert!(c.is_empty());
    }

    #[test]
    fn override_ignores_predictions() {
        let (s, _) = on_manual(ControllerState::new(0.0), Relay::Off);
        assert_eq!(s.mode, Mode::ManualOverride);
        let (s2, c) = on_prediction(s, &cfg(1, 1), RulClass::Low);
        assert_eq!((s2, c), (s, vec![]));
    }

    #[test]
    fn debounce_with_mid_interruption() {
        // k_on = 3: 0 1 0 0 0 switches on at the fifth event only.
        let c = cfg(3, 1);
        let mut s = ControllerState::new(0.0);
        let seq = [RulClass::Low, RulClass::Mid, RulClass::Low, RulClass::Low, RulClass::Low];
        let mut fired = vec![];
        for (i, class) in seq.into_iter().enumerate() {
            let (n, cmds) = on_prediction(s, &c, class);
            s = n;
            if cmds.contains(&Command::SetRelayOn) {
                fired.push(i + 1);
            }
        }
        assert_eq!(fired, vec![5]);
        assert_eq!(s.consecutive_low, 3);
    }

    #[test]
    fn manual_commands() {
        let on = ControllerState {
            relay: Relay::On,
            ..ControllerState::new(0.0)
        };
        let (s, c) = on_manual(on, Relay::Off);
        assert_eq!((s.mode, s.relay, c), (Mode::ManualOverride, Relay::Off, vec![Command::SetRelayOff]));
        let (s2, c2) = on_manual(s, Relay::Off);
        assert_eq!((s2, c2), (s, vec![]));
        let s3 = release_override(s2);
        assert_eq!(s3.mode, Mode::Auto);
        let (s4, c4) = on_prediction(s3, &cfg(1, 1), RulClass::Low);
        assert_eq!((s4.relay, c4[0]), (Relay::On, Command::SetRelayOn));
    }

    #[test]
    fn release_is_idempotent_and_fault_is_sticky() {
        let s = ControllerState::new(0.0);
        assert_eq!(release_override(s), s);
        let fault = ControllerState {
            mode: Mode::Fault,
            ..s
        };
        assert_eq!(release_override(fault), fault);
        assert_eq!(on_manual(fault, Relay::On), (fault, vec![]));
    }

    #[test]
    fn heartbeat_threshold() {
        let c = ControllerConfig::default();
        let s = ControllerState::new(10.0);
        assert_eq!(on_clock(s, &c, 12.9).1, vec![]);
        assert_eq!(on_clock(s, &c, 13.0).1, vec![]);
        let (f, cmds) = on_clock(s, &c, 13.1);
        assert_eq!((f.mode, f.relay, cmds), (Mode::Fault, Relay::Off, vec![Command::SetRelayOff]));
        assert_eq!(on_clock(f, &c, 20.0).1, vec![]);
        let back = on_heartbeat(f, 20.0);
        assert_eq!((back.mode, back.consecutive_low, back.last_heartbeat), (Mode::Auto, 0, 20.0));
    }

    #[test]
    fn trace_format() {
        let mut ctl = Controller::new(ControllerConfig::default(), 0.0);
        ctl.handle(ControlEvent::Prediction { class: RulClass::High }, 0.5);
        ctl.handle(ControlEvent::Prediction { class: RulClass::Low }, 1.0);
        ctl.handle(ControlEvent::Release, 1.25);
        assert_eq!(
            ctl.trace(),
            [
                "0.500\tprediction\t2\tAUTO\tOFF\tNONE",
                "1.000\tprediction\t0\tAUTO\tON\tSET_RELAY_ON,NOTIFY_CHARGE_NEEDED",
                "1.250\trelease\t-\tAUTO\tON\tNONE",
            ]
        );
    }

    fn arb_event() -> impl Strategy<Value = ControlEvent> {
        prop_oneof![
            (0usize..3).prop_map(|i| ControlEvent::Prediction {
                class: RulClass::from_index(i).unwrap()
            }),
            any::<bool>().prop_map(|on| ControlEvent::Manual { relay: Relay::from_on(on) }),
            Just(ControlEvent::Release),
            Just(ControlEvent::Heartbeat),
            Just(ControlEvent::Clock),
        ]
    }

    proptest! {
        #[test]
        fn invariants_hold(events in prop::collection::vec((arb_event(), 0.0f64..2.0), 0..60), k_on in 1u32..4, k_off in 1u32..4) {
            let c = cfg(k_on, k_off);
            let mut s = ControllerState::new(0.0);
            let mut now = 0.0;
            for (e, dt) in events {
                now += dt;
                let (n, cmds) = transition(s, &c, e, now);
                prop_assert!(n.consecutive_low == 0 || n.consecutive_high == 0);
                prop_assert!(cmds.iter().filter(|c| c.relay().is_some()).count() <= 1);
                if n.mode == Mode::Fault {
                    prop_assert_eq!(n.relay, Relay::Off);
                    prop_assert!(!cmds.contains(&Command::SetRelayOn));
                }
                if s.mode == Mode::ManualOverride && matches!(e, ControlEvent::Prediction { .. }) {
                    prop_assert_eq!(n, s);
                }
                s = n;
            }
        }
    }
}
