use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::thread;

use super::codec::{encode_message, DecodeEvent, Decoder, FrameError, Message};
use super::device::DeviceSim;

pub const SERIAL_ENV: &str = "RUL_SERIAL_PORT";

/// Byte pipe to the device. Both implementations carry identical protocol
/// bytes.
pub trait Transport: Send {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()>;
    /// Bytes that arrived since the last call. `now` drives simulated time.
    fn receive(&mut self, now: f64) -> io::Result<Vec<u8>>;
    fn describe(&self) -> String;
    /// The in-process device, when there is one.
    fn simulator(&mut self) -> Option<&mut DeviceSim> {
        None
    }
}

/// In-process pipe to a [`DeviceSim`].
#[derive(Debug)]
pub struct SimTransport {
    device: DeviceSim,
    inbox: Vec<u8>,
}

impl SimTransport {
    pub fn new(device: DeviceSim) -> Self {
        SimTransport {
            device,
            inbox: Vec::new(),
        }
    }

    pub fn device(&self) -> &DeviceSim {
        &self.device
    }
}

impl Transport for SimTransport {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        let replies = self.device.receive_bytes(bytes);
        self.inbox.extend(replies);
        Ok(())
    }

    fn receive(&mut self, now: f64) -> io::Result<Vec<u8>> {
        for f in self.device.poll(now) {
            self.inbox.extend(super::codec::encode_frame(&f).expect("heartbeat fits"));
        }
        Ok(std::mem::take(&mut self.inbox))
    }

    fn describe(&self) -> String {
        "simulator".to_string()
    }

    fn simulator(&mut self) -> Option<&mut DeviceSim> {
        Some(&mut self.device)
    }
}

/// A serial device node opened as a file. Line settings (baud rate, raw
/// mode) are expected to be configured beforehand, e.g. with `stty`.
pub struct SerialTransport {
    path: PathBuf,
    writer: File,
    rx: Receiver<Vec<u8>>,
}

impl SerialTransport {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let writer = OpenOptions::new().read(true).write(true).open(&path)?;
        let mut reader = writer.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::Builder::new()
            .name("serial-reader".into())
            .spawn(move || {
                let mut buf = [0u8; 512];
                loop {
                    match reader.read(&mut buf) {
                        Ok(0) => thread::sleep(std::time::Duration::from_millis(10)),
                        Ok(n) => {
                            if tx.send(buf[..n].to_vec()).is_err() {
                                break;
                            }
                        }
                        Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                        Err(_) => break,
                    }
                }
            })?;
        Ok(SerialTransport { path, writer, rx })
    }
}

impl Transport for SerialTransport {
    fn send(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.writer.write_all(bytes)?;
        self.writer.flush()
    }

    fn receive(&mut self, _now: f64) -> io::Result<Vec<u8>> {
        let mut out = Vec::new();
        loop {
            match self.rx.try_recv() {
                Ok(chunk) => out.extend(chunk),
                Err(TryRecvError::Empty) => return Ok(out),
                Err(TryRecvError::Disconnected) if out.is_empty() => {
                    return Err(io::Error::new(io::ErrorKind::BrokenPipe, "serial reader stopped"))
                }
                Err(TryRecvError::Disconnected) => return Ok(out),
            }
        }
    }

    fn describe(&self) -> String {
        format!("serial {}", self.path.display())
    }
}

/// Serial port from the environment when set, otherwise a fresh simulator.
pub fn transport_from_env(heartbeat_interval: f64, now: f64) -> io::Result<Box<dyn Transport>> {
    match std::env::var_os(SERIAL_ENV) {
        Some(path) if !path.is_empty() => Ok(Box::new(SerialTransport::open(path)?)),
        _ => Ok(Box::new(SimTransport::new(DeviceSim::new(heartbeat_interval, now)))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkEvent {
    Received { seq: u8, message: Message },
    /// A frame that decoded but did not parse as a known message.
    Malformed { seq: u8 },
    Error(FrameError),
}

/// Host end of the link: sequence numbering and decoding.
pub struct HostLink {
    transport: Box<dyn Transport>,
    decoder: Decoder,
    seq: u8,
}

impl HostLink {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        HostLink {
            transport,
            decoder: Decoder::new(),
            seq: 0,
        }
    }

    pub fn describe(&self) -> String {
        self.transport.describe()
    }

    pub fn simulator(&mut self) -> Option<&mut DeviceSim> {
        self.transport.simulator()
    }

    /// Sends `message` with the next sequence number and returns that number.
    pub fn send(&mut self, message: &Message) -> io::Result<u8> {
        let seq = self.seq;
        self.seq = self.seq.wrapping_add(1);
        self.transport.send(&encode_message(message, seq))?;
        Ok(seq)
    }

    pub fn poll(&mut self, now: f64) -> io::Result<Vec<LinkEvent>> {
        let bytes = self.transport.receive(now)?;
        Ok(self
            .decoder
            .feed(&bytes)
            .into_iter()
            .map(|e| match e {
                DecodeEvent::Frame(f) => match Message::from_frame(&f) {
                    Ok(message) => LinkEvent::Received { seq: f.seq, message },
                    Err(_) => LinkEvent::Malformed { seq: f.seq },
                },
                DecodeEvent::Error(err) => LinkEvent::Error(err),
            })
            .collect())
    }
}
