//! Snapshot files.
//!
//! Layout: 8-byte magic, a kind byte, then one frame per record (the same
//! framing as the log, payload is a bincode [`Record`]), then a trailer
//! `[0xFFFFFFFF][since u64][until u64][count u64][crc32]` where the final CRC
//! covers every preceding byte of the file.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::log::{read_frame, write_frame, FrameRead};
use super::{Record, StoreError};

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"TTSNAP1\0";
const TRAILER_MARK: u32 = u32::MAX;
const TRAILER_LEN: usize = 4 + 8 + 8 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotKind {
    Full,
    Incremental,
}

/// Trailer contents: records with `since < insert_epoch <= until`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SnapshotSummary {
    pub kind: SnapshotKind,
    pub since: u64,
    pub until: u64,
    pub records: u64,
}

struct CrcWriter<W: Write> {
    inner: W,
    crc: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.crc.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Streams records to `path` atomically (temp file, fsync, rename).
pub(crate) struct SnapshotWriter {
    out: CrcWriter<BufWriter<File>>,
    tmp: std::path::PathBuf,
    kind: SnapshotKind,
    records: u64,
}

impl SnapshotWriter {
    pub(crate) fn create(path: &Path, kind: SnapshotKind) -> Result<Self, StoreError> {
        let tmp = path.with_extension("snap.tmp");
        let file = File::create(&tmp)?;
        let mut out = CrcWriter {
            inner: BufWriter::new(file),
            crc: crc32fast::Hasher::new(),
        };
        out.write_all(&SNAPSHOT_MAGIC)?;
        out.write_all(&[kind as u8])?;
        Ok(SnapshotWriter {
            out,
            tmp,
            kind,
            records: 0,
        })
    }

    pub(crate) fn push(&mut self, r: &Record) -> Result<(), StoreError> {
        write_frame(&mut self.out, &bincode::serialize(r)?)?;
        self.records += 1;
        Ok(())
    }

    pub(crate) fn finish(
        mut self,
        path: &Path,
        since: u64,
        until: u64,
    ) -> Result<SnapshotSummary, StoreError> {
        self.out.write_all(&TRAILER_MARK.to_le_bytes())?;
        self.out.write_all(&since.to_le_bytes())?;
        self.out.write_all(&until.to_le_bytes())?;
        self.out.write_all(&self.records.to_le_bytes())?;
        let crc = self.out.crc.clone().finalize();
        let mut inner = self.out.inner;
        inner.write_all(&crc.to_le_bytes())?;
        let file = inner.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        fs::rename(&self.tmp, path)?;
        Ok(SnapshotSummary {
            kind: self.kind,
            since,
            until,
            records: self.records,
        })
    }
}

/// Reads and fully verifies a snapshot.
pub fn read_snapshot(path: &Path) -> Result<(SnapshotSummary, Vec<Record>), StoreError> {
    let bytes = fs::read(path)?;
    let bad = |why: &str| StoreError::Corrupt(format!("{}: {why}", path.display()));
    if bytes.len() < SNAPSHOT_MAGIC.len() + 1 + TRAILER_LEN || bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad("not a snapshot file"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc_bytes.try_into().unwrap()) {
        return Err(bad("file checksum mismatch"));
    }
    let kind = match bytes[8] {
        0 => SnapshotKind::Full,
        1 => SnapshotKind::Incremental,
        _ => return Err(bad("unknown snapshot kind")),
    };
    let trailer = &body[body.len() - (TRAILER_LEN - 4)..];
    let word = |i: usize| u64::from_le_bytes(trailer[i..i + 8].try_into().unwrap());
    if u32::from_le_bytes(trailer[..4].try_into().unwrap()) != TRAILER_MARK {
        return Err(bad("missing trailer"));
    }
    let (since, until, count) = (word(4), word(12), word(20));

    let mut frames = &body[9..body.len() - (TRAILER_LEN - 4)];
    let mut records = Vec::new();
    loop {
        match read_frame(&mut frames)? {
            FrameRead::Frame(p) => records.push(bincode::deserialize::<Record>(&p)?),
            FrameRead::End => break,
            FrameRead::Torn => return Err(bad("record checksum mismatch")),
        }
    }
    if records.len() as u64 != count {
        return Err(bad("record count mismatch"));
    }
    if records
        .iter()
        .any(|r| r.insert_epoch() <= since || r.insert_epoch() > until)
    {
        return Err(bad("record epoch outside the trailer range"));
    }
    Ok((
        SnapshotSummary {
            kind,
            since,
            until,
            records: count,
        },
        records,
    ))
}
