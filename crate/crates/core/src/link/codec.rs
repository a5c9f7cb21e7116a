//! Frame layout, CRC, byte stuffing and the streaming decoder.
//!
//! On the wire: `0x7E` then the stuffed content
//! `version | type | seq | len_hi | len_lo | payload | crc_hi | crc_lo`.
//! The CRC covers everything between the start byte and the CRC itself and
//! is computed before stuffing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::RulClass;

pub const START: u8 = 0x7E;
pub const ESCAPE: u8 = 0x7D;
const ESCAPE_XOR: u8 = 0x20;
pub const VERSION: u8 = 0x01;
pub const MAX_PAYLOAD: usize = 256;
const HEADER_LEN: usize = 5;

const CRC_TABLE: [u16; 256] = {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 { (crc << 1) ^ 0x1021 } else { crc << 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
};

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, unreflected, no final xor.
pub fn crc16(bytes: &[u8]) -> u16 {
    bytes.iter().fold(0xFFFF, |crc, &b| {
        (crc << 8) ^ CRC_TABLE[((crc >> 8) as u8 ^ b) as usize]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageType {
    Ping = 0x01,
    Pong = 0x02,
    SetRelay = 0x03,
    RelayState = 0x04,
    Prediction = 0x05,
    Telemetry = 0x06,
    Ack = 0x07,
    Nack = 0x08,
    Heartbeat = 0x09,
}

impl MessageType {
    pub const ALL: [MessageType; 9] = [
        MessageType::Ping,
        MessageType::Pong,
        MessageType::SetRelay,
        MessageType::RelayState,
        MessageType::Prediction,
        MessageType::Telemetry,
        MessageType::Ack,
        MessageType::Nack,
        MessageType::Heartbeat,
    ];

    pub fn from_byte(b: u8) -> Option<MessageType> {
        MessageType::ALL.into_iter().find(|t| *t as u8 == b)
    }

    /// Fixed payload size for this type.
    pub fn payload_len(self) -> usize {
        match self {
            MessageType::Ping | MessageType::Pong | MessageType::Heartbeat => 0,
            MessageType::SetRelay | MessageType::RelayState | MessageType::Ack => 1,
            MessageType::Nack => 2,
            MessageType::Prediction => 3,
            MessageType::Telemetry => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum NackReason {
    UnknownType = 0x01,
    Unexpected = 0x02,
    BadPayload = 0x03,
}

impl NackReason {
    pub fn from_byte(b: u8) -> Option<NackReason> {
        match b {
            0x01 => Some(NackReason::UnknownType),
            0x02 => Some(NackReason::Unexpected),
            0x03 => Some(NackReason::BadPayload),
            _ => None,
        }
    }
}

/// A frame as carried on the wire. `msg_type` is kept raw so that frames of
/// unknown type can be built and answered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub version: u8,
    pub msg_type: u8,
    pub seq: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    Oversize(usize),
    #[error("unknown message type 0x{0:02X}")]
    UnknownType(u8),
    #[error("payload of {got} bytes for {msg_type:?}, expected {expected}")]
    PayloadLength {
        msg_type: MessageType,
        expected: usize,
        got: usize,
    },
    #[error("invalid payload value 0x{0:02X}")]
    PayloadValue(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Ping,
    Pong,
    SetRelay(bool),
    RelayState(bool),
    Prediction { class: RulClass, confidence_milli: u16 },
    Telemetry { pin: u8, value: f32 },
    Ack(u8),
    Nack { seq: u8, reason: NackReason },
    Heartbeat,
}

impl Message {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Message::Ping => MessageType::Ping,
            Message::Pong => MessageType::Pong,
            Message::SetRelay(_) => MessageType::SetRelay,
            Message::RelayState(_) => MessageType::RelayState,
            Message::Prediction { .. } => MessageType::Prediction,
            Message::Telemetry { .. } => MessageType::Telemetry,
            Message::Ack(_) => MessageType::Ack,
            Message::Nack { .. } => MessageType::Nack,
            Message::Heartbeat => MessageType::Heartbeat,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        match *self {
            Message::Ping | Message::Pong | Message::Heartbeat => vec![],
            Message::SetRelay(on) | Message::RelayState(on) => vec![on as u8],
            Message::Prediction {
                class,
                confidence_milli,
            } => {
                let [hi, lo] = confidence_milli.to_be_bytes();
                vec![class.index() as u8, hi, lo]
            }
            Message::Telemetry { pin, value } => {
                let mut p = vec![pin];
                p.extend_from_slice(&value.to_be_bytes());
                p
            }
            Message::Ack(seq) => vec![seq],
            Message::Nack { seq, reason } => vec![seq, reason as u8],
        }
    }

    pub fn to_frame(&self, seq: u8) -> Frame {
        Frame {
            version: VERSION,
            msg_type: self.msg_type() as u8,
            seq,
            payload: self.payload(),
        }
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, LinkError> {
        let t = MessageType::from_byte(frame.msg_type).ok_or(LinkError::UnknownType(frame.msg_type))?;
        let p = &frame.payload[..];
        if p.len() != t.payload_len() {
            return Err(LinkError::PayloadLength {
                msg_type: t,
                expected: t.payload_len(),
                got: p.len(),
            });
        }
        let flag = |b: u8| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(LinkError::PayloadValue(other)),
        };
        Ok(match t {
            MessageType::Ping => Message::Ping,
            MessageType::Pong => Message::Pong,
            MessageType::Heartbeat => Message::Heartbeat,
            MessageType::SetRelay => Message::SetRelay(flag(p[0])?),
            MessageType::RelayState => Message::RelayState(flag(p[0])?),
            MessageType::Prediction => Message::Prediction {
                class: RulClass::from_index(p[0] as usize).map_err(|_| LinkError::PayloadValue(p[0]))?,
                confidence_milli: u16::from_be_bytes([p[1], p[2]]),
            },
            MessageType::Telemetry => Message::Telemetry {
                pin: p[0],
                value: f32::from_be_bytes([p[1], p[2], p[3], p[4]]),
            },
            MessageType::Ack => Message::Ack(p[0]),
            MessageType::Nack => Message::Nack {
                seq: p[0],
                reason: NackReason::from_byte(p[1]).ok_or(LinkError::PayloadValue(p[1]))?,
            },
        })
    }
}

impl Frame {
    /// Unstuffed content that the CRC covers.
    pub fn header_and_payload(&self) -> Result<Vec<u8>, LinkError> {
        if self.payload.len() > MAX_PAYLOAD {
            return Err(LinkError::Oversize(self.payload.len()));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&[self.version, self.msg_type, self.seq]);
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }
}

fn push_stuffed(out: &mut Vec<u8>, b: u8) {
    if b == START || b == ESCAPE {
        out.push(ESCAPE);
        out.push(b ^ ESCAPE_XOR);
    } else {
        out.push(b);
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, LinkError> {
    let mut content = frame.header_and_payload()?;
    let crc = crc16(&content);
    content.extend_from_slice(&crc.to_be_bytes());
    let mut out = Vec::with_capacity(content.len() + 8);
    out.push(START);
    for b in content {
        push_stuffed(&mut out, b);
    }
    Ok(out)
}

pub fn encode_message(msg: &Message, seq: u8) -> Vec<u8> {
    encode_frame(&msg.to_frame(seq)).expect("typed messages fit in a frame")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameError {
    BadCrc,
    BadLength,
    /// CRC-valid frame whose type byte is not in the message set.
    UnknownType { msg_type: u8, seq: u8 },
    Desync,
}

impl FrameError {
    pub fn reason(&self) -> &'static str {
        match self {
            FrameError::BadCrc => "bad_crc",
            FrameError::BadLength => "bad_length",
            FrameError::UnknownType { .. } => "unknown_type",
            FrameError::Desync => "desync",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeEvent {
    Frame(Frame),
    Error(FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    /// Between frames; a stray byte is a desync.
    Idle,
    /// Discarding bytes until the next start byte.
    Hunting,
    InFrame { escaped: bool },
}

/// Byte-at-a-time decoder. Events depend only on the byte sequence, never on
/// how it is chunked.
#[derive(Debug, Clone)]
pub struct Decoder {
    state: State,
    buf: Vec<u8>,
    /// Content length once the header is in, payload plus CRC.
    expected: Option<usize>,
}

impl Default for Decoder {
    fn default() -> Self {
        Decoder::new()
    }
}

impl Decoder {
    pub fn new() -> Self {
        Decoder {
            state: State::Idle,
            buf: Vec::with_capacity(HEADER_LEN + MAX_PAYLOAD + 2),
            expected: None,
        }
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<DecodeEvent> {
        let mut events = Vec::new();
        for &b in bytes {
            if let Some(e) = self.push(b) {
                events.push(e);
            }
        }
        events
    }

    fn start_frame(&mut self) {
        self.buf.clear();
        self.expected = None;
        self.state = State::InFrame { escaped: false };
    }

    fn fail(&mut self, error: FrameError) -> Option<DecodeEvent> {
        self.buf.clear();
        self.expected = None;
        self.state = State::Hunting;
        Some(DecodeEvent::Error(error))
    }

    fn push(&mut self, b: u8) -> Option<DecodeEvent> {
        match self.state {
            State::Idle => {
                if b == START {
                    self.start_frame();
                    None
                } else {
                    self.fail(FrameError::Desync)
                }
            }
            State::Hunting => {
                if b == START {
                    self.start_frame();
                }
                None
            }
            State::InFrame { escaped } => {
                if b == START {
                    // Truncated frame; the start byte opens the next one.
                    self.start_frame();
                    return Some(DecodeEvent::Error(FrameError::Desync));
                }
                if escaped {
                    if b != START ^ ESCAPE_XOR && b != ESCAPE ^ ESCAPE_XOR {
                        return self.fail(FrameError::Desync);
                    }
                    self.state = State::InFrame { escaped: false };
                    self.content_byte(b ^ ESCAPE_XOR)
                } else if b == ESCAPE {
                    self.state = State::InFrame { escaped: true };
                    None
                } else {
                    self.content_byte(b)
                }
            }
        }
    }

    fn content_byte(&mut self, b: u8) -> Option<DecodeEvent> {
        self.buf.push(b);
        if self.buf.len() == HEADER_LEN {
            if self.buf[0] != VERSION {
                return self.fail(FrameError::Desync);
            }
            let len = u16::from_be_bytes([self.buf[3], self.buf[4]]) as usize;
            if len > MAX_PAYLOAD {
                return self.fail(FrameError::BadLength);
            }
            if let Some(t) = MessageType::from_byte(self.buf[1]) {
                if t.payload_len() != len {
                    return self.fail(FrameError::BadLength);
                }
            }
            self.expected = Some(HEADER_LEN + len + 2);
        }
        if Some(self.buf.len()) != self.expected {
            return None;
        }
        let n = self.buf.len();
        let crc = u16::from_be_bytes([self.buf[n - 2], self.buf[n - 1]]);
        if crc16(&self.buf[..n - 2]) != crc {
            return self.fail(FrameError::BadCrc);
        }
        let (msg_type, seq) = (self.buf[1], self.buf[2]);
        if MessageType::from_byte(msg_type).is_none() {
            return self.fail(FrameError::UnknownType { msg_type, seq });
        }
        let frame = Frame {
            version: self.buf[0],
            msg_type,
            seq,
            payload: self.buf[HEADER_LEN..n - 2].to_vec(),
        };
        self.buf.clear();
        self.expected = None;
        self.state = State::Idle;
        Some(DecodeEvent::Frame(frame))
    }
}
