//! Detection record stream and its file formats.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic   8 bytes  "AFCDLCZ1"
//! chunk*  u32 record count, then that many 17-byte records:
//!         u64 trial_id | u8 channel (0 stokes, 1 anti_stokes) | f64 timestamp_us
//! ```
//!
//! The text form is comma-delimited with a header line
//! `trial_id,channel,timestamp_us` and channel names `stokes` / `anti_stokes`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, ErrorKind, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"AFCDLCZ1";
pub const RECORD_BYTES: usize = 17;
/// Records per chunk written by [`BinaryWriter`].
pub const DEFAULT_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Stokes,
    AntiStokes,
}

impl Channel {
    pub fn code(self) -> u8 {
        match self {
            Channel::Stokes => 0,
            Channel::AntiStokes => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Channel::Stokes),
            1 => Some(Channel::AntiStokes),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Stokes => "stokes",
            Channel::AntiStokes => "anti_stokes",
        }
    }

    pub fn index(self) -> usize {
        self.code() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub trial_id: u64,
    pub channel: Channel,
    /// µs from the trial origin (end of the write pulse).
    pub timestamp_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Binary,
    Text,
}

/// Buffers records and writes them as length-prefixed chunks.
pub struct BinaryWriter<W: Write> {
    inner: W,
    pending: Vec<DetectionRecord>,
    chunk: usize,
    written: u64,
}

impl<W: Write> BinaryWriter<W> {
    pub fn new(inner: W) -> Result<Self> {
        Self::with_chunk(inner, DEFAULT_CHUNK)
    }

    pub fn with_chunk(mut inner: W, chunk: usize) -> Result<Self> {
        inner.write_all(MAGIC)?;
        Ok(Self {
            inner,
            pending: Vec::with_capacity(chunk),
            chunk: chunk.clamp(1, u32::MAX as usize),
            written: 0,
        })
    }

    pub fn push(&mut self, record: DetectionRecord) -> Result<()> {
        self.pending.push(record);
        if self.pending.len() == self.chunk {
            self.flush_chunk()?;
        }
        Ok(())
    }

    pub fn extend(&mut self, records: &[DetectionRecord]) -> Result<()> {
        for r in records {
            self.push(*r)?;
        }
        Ok(())
    }

    fn flush_chunk(&mut self) -> Result<()> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::with_capacity(4 + self.pending.len() * RECORD_BYTES);
        buf.extend_from_slice(&(self.pending.len() as u32).to_le_bytes());
        for r in &self.pending {
            buf.extend_from_slice(&r.trial_id.to_le_bytes());
            buf.push(r.channel.code());
            buf.extend_from_slice(&r.timestamp_us.to_le_bytes());
        }
        self.inner.write_all(&buf)?;
        self.written += self.pending.len() as u64;
        self.pending.clear();
        Ok(())
    }

    /// Flushes the final partial chunk and returns the number of records written.
    pub fn finish(mut self) -> Result<u64> {
        self.flush_chunk()?;
        self.inner.flush()?;
        Ok(self.written)
    }
}

/// Reads exactly `buf.len()` bytes; `Ok(false)` on clean end of input before
/// the first byte.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => {
                return Err(Error::data_at_offset(
                    offset + filled as u64,
                    format!("truncated {what}"),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Streaming reader for the binary format.
pub struct BinaryReader<R: Read> {
    inner: R,
    offset: u64,
    remaining_in_chunk: u32,
}

impl<R: Read> BinaryReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        if !read_full(&mut inner, &mut magic, 0, "header")? || &magic != MAGIC {
            return Err(Error::data_at_offset(0, "missing AFCDLCZ1 header"));
        }
        Ok(Self {
            inner,
            offset: 8,
            remaining_in_chunk: 0,
        })
    }

    pub fn next_record(&mut self) -> Result<Option<DetectionRecord>> {
        while self.remaining_in_chunk == 0 {
            let mut len = [0u8; 4];
            if !read_full(&mut self.inner, &mut len, self.offset, "chunk length")? {
                return Ok(None);
            }
            self.offset += 4;
            self.remaining_in_chunk = u32::from_le_bytes(len);
        }
        let mut buf = [0u8; RECORD_BYTES];
        if !read_full(&mut self.inner, &mut buf, self.offset, "record")? {
            return Err(Error::data_at_offset(self.offset, "chunk ends before its record count"));
        }
        let at = self.offset;
        self.offset += RECORD_BYTES as u64;
        self.remaining_in_chunk -= 1;
        let trial_id = u64::from_le_bytes(buf[0..8].try_into().expect("8 bytes"));
        let channel = Channel::from_code(buf[8])
            .ok_or_else(|| Error::data_at_offset(at + 8, format!("invalid channel code {}", buf[8])))?;
        let timestamp_us = f64::from_le_bytes(buf[9..17].try_into().expect("8 bytes"));
        if !timestamp_us.is_finite() {
            return Err(Error::data_at_offset(at + 9, "non-finite timestamp"));
        }
        Ok(Some(DetectionRecord {
            trial_id,
            channel,
            timestamp_us,
        }))
    }
}

impl<R: Read> Iterator for BinaryReader<R> {
    type Item = Result<DetectionRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_record().transpose()
    }
}

pub fn write_binary<W: Write>(out: W, records: &[DetectionRecord]) -> Result<u64> {
    let mut w = BinaryWriter::new(out)?;
    w.extend(records)?;
    w.finish()
}

pub fn read_binary<R: Read>(input: R) -> Result<Vec<DetectionRecord>> {
    BinaryReader::new(input)?.collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRow {
    trial_id: u64,
    channel: Channel,
    timestamp_us: f64,
}

pub fn write_text<W: Write>(out: W, records: &[DetectionRecord]) -> Result<u64> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(TextRow {
            trial_id: r.trial_id,
            channel: r.channel,
            timestamp_us: r.timestamp_us,
        })
        .map_err(csv_error)?;
    }
    // An empty stream still gets its header line.
    if records.is_empty() {
        w.write_record(["trial_id", "channel", "timestamp_us"])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(records.len() as u64)
}

pub fn read_text<R: Read>(input: R) -> Result<Vec<DetectionRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for row in reader.deserialize::<TextRow>() {
        let row = row.map_err(csv_error)?;
        if !row.timestamp_us.is_finite() {
            return Err(Error::data_in_trial(row.trial_id, "non-finite timestamp"));
        }
        out.push(DetectionRecord {
            trial_id: row.trial_id,
            channel: row.channel,
            timestamp_us: row.timestamp_us,
        });
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Data {
            message: format!("malformed text record: {kind:?}"),
            trial_id: None,
            offset,
        },
    }
}

/// Reads a record file, detecting the format from its first bytes.
pub fn read_records_file(path: &Path) -> Result<(Vec<DetectionRecord>, RecordFormat)> {
    let mut reader = BufReader::new(std::fs::File::open(path)?);
    let head = reader.fill_buf()?;
    if head.starts_with(MAGIC) {
        Ok((read_binary(reader)?, RecordFormat::Binary))
    } else {
        Ok((read_text(reader)?, RecordFormat::Text))
    }
}

pub fn write_records_file(
    path: &Path,
    records: &[DetectionRecord],
    format: RecordFormat,
) -> Result<u64> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        RecordFormat::Binary => write_binary(file, records),
        RecordFormat::Text => write_text(file, records),
    }
}
