//! Software stand-in for the relay board: answers frames and emits
//! heartbeats on a fixed interval.

use super::codec::{
    encode_frame, DecodeEvent, Decoder, Frame, FrameError, LinkError, Message, NackReason,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSimState {
    pub relay_on: bool,
    pub last_seq_seen: Option<u8>,
    pub heartbeat_interval: f64,
}

#[derive(Debug, Clone)]
pub struct DeviceSim {
    state: DeviceSimState,
    next_heartbeat: f64,
    tx_seq: u8,
    heartbeats_enabled: bool,
    decoder: Decoder,
}

impl DeviceSim {
    /// Relay off; first heartbeat due one interval after `now`.
    pub fn new(heartbeat_interval: f64, now: f64) -> Self {
        assert!(heartbeat_interval > 0.0, "heartbeat interval must be positive");
        DeviceSim {
            state: DeviceSimState {
                relay_on: false,
                last_seq_seen: None,
                heartbeat_interval,
            },
            next_heartbeat: now + heartbeat_interval,
            tx_seq: 0,
            heartbeats_enabled: true,
            decoder: Decoder::new(),
        }
    }

    pub fn state(&self) -> &DeviceSimState {
        &self.state
    }

    pub fn relay_on(&self) -> bool {
        self.state.relay_on
    }

    /// Silences heartbeats, as when the board hangs or the cable drops.
    pub fn set_heartbeats_enabled(&mut self, enabled: bool) {
        self.heartbeats_enabled = enabled;
    }

    /// Replies to one decoded frame. Replies echo the request's seq.
    pub fn handle(&mut self, frame: &Frame) -> Vec<Frame> {
        let seq = frame.seq;
        self.state.last_seq_seen = Some(seq);
        let nack = |reason| vec![Message::Nack { seq, reason }.to_frame(seq)];
        match Message::from_frame(frame) {
            Ok(Message::Ping) => vec![Message::Pong.to_frame(seq)],
            Ok(Message::SetRelay(on)) => {
                self.state.relay_on = on;
                vec![Message::Ack(seq).to_frame(seq), Message::RelayState(on).to_frame(seq)]
            }
            Ok(Message::Prediction { .. }) | Ok(Message::Telemetry { .. }) => {
                vec![Message::Ack(seq).to_frame(seq)]
            }
            Ok(_) => nack(NackReason::Unexpected),
            Err(LinkError::UnknownType(_)) => nack(NackReason::UnknownType),
            Err(_) => nack(NackReason::BadPayload),
        }
    }

    /// Heartbeats due at or before `now`, one per elapsed interval.
    pub fn poll(&mut self, now: f64) -> Vec<Frame> {
        let mut out = Vec::new();
        while self.next_heartbeat <= now {
            if self.heartbeats_enabled {
                out.push(Message::Heartbeat.to_frame(self.tx_seq));
                self.tx_seq = self.tx_seq.wrapping_add(1);
            }
            self.next_heartbeat += self.state.heartbeat_interval;
        }
        out
    }

    /// Time of the next scheduled heartbeat.
    pub fn next_heartbeat(&self) -> f64 {
        self.next_heartbeat
    }

    /// Byte-level endpoint: decodes `bytes` and returns the encoded replies.
    /// A CRC-valid frame of unknown type is answered with a NACK.
    pub fn receive_bytes(&mut self, bytes: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for event in self.decoder.feed(bytes) {
            let replies = match event {
                DecodeEvent::Frame(f) => self.handle(&f),
                DecodeEvent::Error(FrameError::UnknownType { seq, .. }) => {
                    self.state.last_seq_seen = Some(seq);
                    vec![Message::Nack {
                        seq,
                        reason: NackReason::UnknownType,
                    }
                    .to_frame(seq)]
                }
                DecodeEvent::Error(_) => vec![],
            };
            for r in replies {
                out.extend(encode_frame(&r).expect("reply fits"));
            }
        }
        out
    }
}
