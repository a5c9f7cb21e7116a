//! Host/device wire protocol, the device simulator and transports.

mod codec;
mod device;
mod transport;

pub use codec::{
    crc16, encode_frame, encode_message, DecodeEvent, Decoder, Frame, FrameError, LinkError, Message,
    MessageType, NackReason, ESCAPE, MAX_PAYLOAD, START, VERSION,
};
pub use device::{DeviceSim, DeviceSimState};
pub use transport::{
    transport_from_env, HostLink, LinkEvent, SerialTransport, SimTransport, Transport, SERIAL_ENV,
};
