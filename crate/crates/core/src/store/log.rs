//! Framed record files shared by the write-ahead log and segments.
//!
//! Frame: `[u32 len][u32 crc32(payload)][payload]`, little-endian, payload is a
//! bincode [`Entry`].

use std::fs::File;
use std::io::{self, Read, Write};
use std::os::unix::fs::FileExt;

use serde::{Deserialize, Serialize};

use super::{Record, StoreError};

pub(crate) const WAL_MAGIC: [u8; 8] = *b"TTWAL01\0";
pub(crate) const SEG_MAGIC: [u8; 8] = *b"TTSEG01\0";
pub(crate) const FRAME_HEADER: u64 = 8;
/// Sanity bound on a single frame; anything larger is treated as corruption.
const MAX_FRAME: u32 = 256 << 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) enum Entry {
    Begin { epoch: u64, records: u32 },
    Record(Record),
    Commit { epoch: u64 },
}

pub(crate) fn encode_entry(e: &Entry) -> Result<Vec<u8>, StoreError> {
    Ok(bincode::serialize(e)?)
}

pub(crate) fn decode_entry(payload: &[u8]) -> Result<Entry, StoreError> {
    Ok(bincode::deserialize(payload)?)
}

/// Writes one frame, returning its total length on disk.
pub(crate) fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<u64> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l <= MAX_FRAME)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&crc32fast::hash(payload).to_le_bytes())?;
    w.write_all(payload)?;
    Ok(FRAME_HEADER + payload.len() as u64)
}

pub(crate) enum FrameRead {
    Frame(Vec<u8>),
    /// Clean end of file.
    End,
    /// Short or checksum-failing frame.
    Torn,
}

pub(crate) fn read_frame(r: &mut impl Read) -> io::Result<FrameRead> {
    let mut header = [0u8; 8];
    match read_full(r, &mut header)? {
        0 => return Ok(FrameRead::End),
        8 => {}
        _ => return Ok(FrameRead::Torn),
    }
    let len = u32::from_le_bytes(header[..4].try_into().unwrap());
    let crc = u32::from_le_bytes(header[4..].try_into().unwrap());
    if len > MAX_FRAME {
        return Ok(FrameRead::Torn);
    }
    let mut payload = vec![0u8; len as usize];
    if read_full(r, &mut payload)? != payload.len() || crc32fast::hash(&payload) != crc {
        return Ok(FrameRead::Torn);
    }
    Ok(FrameRead::Frame(payload))
}

/// Like `read_exact` but reports how many bytes were available.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Positioned read of one frame whose total on-disk length is `len`.
pub(crate) fn read_frame_at(file: &File, offset: u64, len: u64) -> Result<Vec<u8>, StoreError> {
    let mut buf = vec![0u8; len as usize];
    file.read_exact_at(&mut buf, offset)?;
    let body_len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as u64;
    let crc = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if body_len + FRAME_HEADER != len || crc32fast::hash(&buf[8..]) != crc {
        return Err(StoreError::Corrupt(format!(
            "frame at offset {offset} fails its checksum"
        )));
    }
    buf.drain(..8);
    Ok(buf)
}
