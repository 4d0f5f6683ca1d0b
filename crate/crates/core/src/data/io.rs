//! Trace and label file formats.
//!
//! Binary trace (`.snt`), little-endian:
//!
//! ```text
//! magic "SNTR" | version u16 | reserved u16 | sample_rate f64 | start_time f64
//! | station_len u32 | station utf-8 | count u64 | samples f32 x count
//! ```
//!
//! CSV trace: header `timestamp_index,amplitude`, one row per sample.
//! Interval CSV (labels, confounders, picked negatives):
//! header `trace_id,start_index,end_index`, half-open indices.

use super::{Interval, Trace};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SNTR";
const VERSION: u16 = 1;

pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> Result<()> {
    sink.write_all(MAGIC)?;
    sink.write_u16::<LittleEndian>(VERSION)?;
    sink.write_u16::<LittleEndian>(0)?;
    sink.write_f64::<LittleEndian>(trace.sample_rate)?;
    sink.write_f64::<LittleEndian>(trace.start_time)?;
    let station = trace.station.as_bytes();
    sink.write_u32::<LittleEndian>(station.len() as u32)?;
    sink.write_all(station)?;
    sink.write_u64::<LittleEndian>(trace.len() as u64)?;
    for &s in &trace.samples {
        sink.write_f32::<LittleEndian>(s)?;
    }
    Ok(())
}

pub fn write_trace_file(trace: &Trace, path: &Path) -> Result<()> {
    write_trace(trace, BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_trace<R: Read>(source: R) -> Result<Trace> {
    let mut r = Offset { inner: source, pos: 0 };
    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "bad magic: not a binary trace file".into(),
        });
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported trace format version {version}"),
        });
    }
    r.u16("reserved")?;
    let sample_rate = r.f64("sample_rate")?;
    let start_time = r.f64("start_time")?;
    let station_len = r.u32("station length")? as usize;
    if station_len > 4096 {
        return Err(Error::Format {
            offset: r.pos,
            detail: format!("station name of {station_len} bytes is implausible"),
        });
    }
    let mut station = vec![0u8; station_len];
    r.read_exact_at(&mut station, "station")?;
    let station = String::from_utf8(station).map_err(|e| Error::Format {
        offset: r.pos,
        detail: format!("station is not utf-8: {e}"),
    })?;
    let count = r.u64("sample count")? as usize;
    let mut samples = vec![0f32; count];
    for (i, s) in samples.iter_mut().enumerate() {
        *s = r.f32(&format!("sample body: expected {count} samples, found {i}"))?;
    }
    // Trailing garbage would make round-trips lossy; reject it.
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra)? != 0 {
        return Err(Error::Format {
            offset: r.pos,
            detail: "trailing bytes after sample body".into(),
        });
    }
    Trace::new(samples, sample_rate, start_time, station)
}

/// Byte-offset-tracking reader so parse errors can name a position.
struct Offset<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> Offset<R> {
    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.pos += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::Format {
                offset: self.pos,
                detail: format!("truncated while reading {what}"),
            }),
            Err(e) => Err(e.into()),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact_at(&mut b, what)?;
        Ok((&b[..]).read_u16::<LittleEndian>().unwrap())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok((&b[..]).read_u32::<LittleEndian>().unwrap())
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok((&b[..]).read_u64::<LittleEndian>().unwrap())
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok((&b[..]).read_f32::<LittleEndian>().unwrap())
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok((&b[..]).read_f64::<LittleEndian>().unwrap())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvSample {
    timestamp_index: u64,
    amplitude: f32,
}

pub fn write_trace_csv<W: Write>(trace: &Trace, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for (i, &s) in trace.samples.iter().enumerate() {
        w.serialize(CsvSample {
            timestamp_index: i as u64,
            amplitude: s,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV trace form. The CSV carries no metadata, so the canonical
/// sample rate is assumed and the station comes from the caller.
pub fn read_trace_csv<R: Read>(source: R, station: &str) -> Result<Trace> {
    let mut r = csv::Reader::from_reader(source);
    let mut samples = Vec::new();
    for row in r.deserialize::<CsvSample>() {
        samples.push(row?.amplitude);
    }
    Trace::new(samples, super::DEFAULT_SAMPLE_RATE, 0.0, station.to_string())
}

/// Reads a trace by file extension: `.csv` as CSV (station = file stem),
/// anything else as the binary format.
pub fn read_trace_path(path: &Path) -> Result<Trace> {
    let file = std::fs::File::open(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("trace");
        read_trace_csv(BufReader::new(file), stem)
    } else {
        read_trace(BufReader::new(file))
    }
}

/// One labeled interval row in a label/confounder/picked-negative CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub trace_id: String,
    pub start_index: usize,
    pub end_index: usize,
}

impl IntervalRecord {
    pub fn interval(&self) -> Result<Interval> {
        Interval::new(self.start_index, self.end_index)
    }
}

pub fn write_intervals_csv<W: Write>(records: &[IntervalRecord], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for rec in records {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_intervals_csv<R: Read>(source: R) -> Result<Vec<IntervalRecord>> {
    let mut r = csv::Reader::from_reader(source);
    let mut out = Vec::new();
    for row in r.deserialize::<IntervalRecord>() {
        out.push(row?);
    }
    Ok(out)
}
