//! Binary framing for talking to an external frame predictor over a child
//! process's standard input and output.
//!
//! Every message starts with a 15 byte header, integers little-endian:
//!
//! | bytes | field                                          |
//! |-------|------------------------------------------------|
//! | 0..4  | magic `EIGP`                                   |
//! | 4     | version, `1`                                   |
//! | 5     | type: 1 request, 2 response, 3 error           |
//! | 6..8  | width (u16)                                    |
//! | 8..10 | height (u16)                                   |
//! | 10    | channels (u8, 1 or 3)                          |
//! | 11..13| frame count (u16)                              |
//! | 13..15| extension (u16, requests only, otherwise 0)    |
//!
//! Requests and responses carry `frames * height * width * channels` bytes,
//! row-major and channel-interleaved, intensity = byte / 255. Errors carry a
//! u16 length followed by that many bytes of UTF-8 text.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::imaging::Raster;

pub const MAGIC: [u8; 4] = *b"EIGP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 15;

pub const TYPE_REQUEST: u8 = 1;
pub const TYPE_RESPONSE: u8 = 2;
pub const TYPE_ERROR: u8 = 3;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    BadType(u8),
    #[error("unexpected message type {got}, wanted {wanted}")]
    UnexpectedType { got: u8, wanted: u8 },
    #[error("stream ended inside a message")]
    Truncated,
    #[error("invalid frame geometry {width}x{height}x{channels}")]
    InvalidGeometry {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("{0} does not fit the wire format")]
    TooLarge(&'static str),
    #[error("error text is not UTF-8")]
    InvalidText,
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request { frames: Vec<Raster>, extension: u16 },
    Response { frames: Vec<Raster> },
    Error(String),
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Message::Request { .. } => TYPE_REQUEST,
            Message::Response { .. } => TYPE_RESPONSE,
            Message::Error(_) => TYPE_ERROR,
        }
    }
}

fn u16_field(v: usize, what: &'static str) -> Result<u16, ProtocolError> {
    u16::try_from(v).map_err(|_| ProtocolError::TooLarge(what))
}

/// Serializes a message into a byte buffer.
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.type_code());
    match msg {
        Message::Request { frames, .. } | Message::Response { frames } => {
            let extension = match msg {
                Message::Request { extension, .. } => *extension,
                _ => 0,
            };
            let (w, h, c) = frames
                .first()
                .map_or((0, 0, 1), |f| (f.width(), f.height(), f.channels()));
            if frames
                .iter()
                .any(|f| (f.width(), f.height(), f.channels()) != (w, h, c))
            {
                return Err(ProtocolError::InvalidGeometry {
                    width: w,
                    height: h,
                    channels: c,
                });
            }
            out.extend_from_slice(&u16_field(w, "width")?.to_le_bytes());
            out.extend_from_slice(&u16_field(h, "height")?.to_le_bytes());
            out.push(c as u8);
            out.extend_from_slice(&u16_field(frames.len(), "frame count")?.to_le_bytes());
            out.extend_from_slice(&extension.to_le_bytes());
            for f in frames {
                out.extend(f.to_bytes());
            }
        }
        Message::Error(text) => {
            out.extend_from_slice(&[0; 9]);
            let bytes = text.as_bytes();
            out.extend_from_slice(&u16_field(bytes.len(), "error text")?.to_le_bytes());
            out.extend_from_slice(bytes);
        }
    }
    Ok(out)
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), ProtocolError> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<(), ProtocolError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Truncated,
        _ => ProtocolError::Io(e),
    })
}

/// Reads exactly one message. A stream that ends before the header starts
/// also reports [`ProtocolError::Truncated`].
pub fn read_message(r: &mut impl Read) -> Result<Message, ProtocolError> {
    let mut header = [0u8; HEADER_LEN];
    read_exact_or_truncated(r, &mut header)?;
    let magic: [u8; 4] = header[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if header[4] != VERSION {
        return Err(ProtocolError::BadVersion(header[4]));
    }
    let msg_type = header[5];
    let le = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
    let (width, height) = (le(6) as usize, le(8) as usize);
    let channels = header[10] as usize;
    let frame_count = le(11) as usize;
    let extension = le(13);
    match msg_type {
        TYPE_REQUEST | TYPE_RESPONSE => {
            if frame_count > 0 && (width == 0 || height == 0 || !(channels == 1 || channels == 3)) {
                return Err(ProtocolError::InvalidGeometry {
                    width,
                    height,
                    channels,
                });
            }
            let frame_len = width * height * channels;
            let mut frames = Vec::with_capacity(frame_count);
            let mut buf = vec![0u8; frame_len];
            for _ in 0..frame_count {
                read_exact_or_truncated(r, &mut buf)?;
                frames.push(
                    Raster::from_bytes(width, height, channels, &buf).map_err(|_| {
                        ProtocolError::InvalidGeometry {
                            width,
                            height,
                            channels,
                        }
                    })?,
                );
            }
            Ok(if msg_type == TYPE_REQUEST {
                Message::Request { frames, extension }
            } else {
                Message::Response { frames }
            })
        }
        TYPE_ERROR => {
            let mut len = [0u8; 2];
            read_exact_or_truncated(r, &mut len)?;
            let mut text = vec![0u8; u16::from_le_bytes(len) as usize];
            read_exact_or_truncated(r, &mut text)?;
            String::from_utf8(text)
                .map(Message::Error)
                .map_err(|_| ProtocolError::InvalidText)
        }
        other => Err(ProtocolError::BadType(other)),
    }
}
