//! Append-only binary snapshot files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 8  | magic `ARWSNAP\0` |
//! | 4  | schema version (u32) |
//! | 4  | dimension n (u32) |
//! | 4  | points per axis (u32) |
//! | 4  | reserved, zero |
//! | 8  | values per frame (u64) |
//! | 8  | ω (f64) |
//! | 8  | m (f64) |
//!
//! followed by fixed-size frames: `t` (f64), `dt_next` (f64), record index (u64)
//! and the grid values of `u` in row-major order (f64 each).

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::flow::{FlowConfig, Frame};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ARWSNAP\0";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 48;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotHeader {
    pub n: usize,
    pub points: usize,
    pub omega: f64,
    pub m: f64,
}

impl SnapshotHeader {
    pub fn for_config(cfg: &FlowConfig) -> Self {
        let p = cfg.params();
        Self {
            n: cfg.domain.n(),
            points: cfg.domain.points(),
            omega: p.omega(),
            m: p.m(),
        }
    }

    pub fn values(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    fn frame_len(&self) -> u64 {
        24 + 8 * self.values() as u64
    }

    fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(HEADER_LEN as usize);
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.n as u32).to_le_bytes());
        b.extend_from_slice(&(self.points as u32).to_le_bytes());
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&(self.values() as u64).to_le_bytes());
        b.extend_from_slice(&self.omega.to_le_bytes());
        b.extend_from_slice(&self.m.to_le_bytes());
        b
    }

    fn decode(b: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if &b[0..8] != MAGIC {
            return Err(Error::Format("not a snapshot file (bad magic)".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(8);
        if version != VERSION {
            return Err(Error::Format(format!("snapshot version {version} is not supported")));
        }
        let header = Self {
            n: u32_at(12) as usize,
            points: u32_at(16) as usize,
            omega: f64::from_le_bytes(b[32..40].try_into().expect("8 bytes")),
            m: f64::from_le_bytes(b[40..48].try_into().expect("8 bytes")),
        };
        let values = u64::from_le_bytes(b[24..32].try_into().expect("8 bytes"));
        if !(1..=2).contains(&header.n) || values != header.values() as u64 {
            return Err(Error::Format("inconsistent snapshot header".into()));
        }
        Ok(header)
    }

    /// Errors unless the snapshot was written for a run with this grid and background.
    pub fn check(&self, cfg: &FlowConfig) -> Result<()> {
        let want = Self::for_config(cfg);
        if *self != want {
            return Err(Error::Config(format!(
                "snapshot was written for n = {}, points = {}, ω = {}, m = {}; the config has n = {}, points = {}, ω = {}, m = {}",
                self.n, self.points, self.omega, self.m, want.n, want.points, want.omega, want.m
            )));
        }
        Ok(())
    }
}

fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut b = Vec::with_capacity(24 + 8 * frame.u.len());
    b.extend_from_slice(&frame.t.to_le_bytes());
    b.extend_from_slice(&frame.dt_next.to_le_bytes());
    b.extend_from_slice(&(frame.record_index as u64).to_le_bytes());
    for v in &frame.u {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

fn decode_frame(b: &[u8]) -> Frame {
    let f = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().expect("8 bytes"));
    Frame {
        t: f(0),
        dt_next: f(8),
        record_index: u64::from_le_bytes(b[16..24].try_into().expect("8 bytes")) as usize,
        u: b[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect(),
    }
}

/// Writes frames one at a time, flushing after each so a killed run keeps every
/// completed record.
pub struct SnapshotWriter {
    out: BufWriter<File>,
    header: SnapshotHeader,
}

impl SnapshotWriter {
    /// Creates (or truncates) `path` and writes the header.
    pub fn create(path: &Path, header: SnapshotHeader) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&header.encode())?;
        out.flush()?;
        Ok(Self { out, header })
    }

    pub fn write_frame(&mut self, frame: &Frame) -> Result<()> {
        if frame.u.len() != self.header.values() {
            return Err(Error::Format(format!(
                "frame has {} values, snapshot expects {}",
                frame.u.len(),
                self.header.values()
            )));
        }
        self.out.write_all(&encode_frame(frame))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads the header and every complete frame. A trailing partial frame (from an
/// interrupted write) is dropped with a warning.
pub fn read_snapshots(path: &Path) -> Result<(SnapshotHeader, Vec<Frame>)> {
    let mut file = File::open(path)?;
    let size = file.seek(SeekFrom::End(0))?;
    file.seek(SeekFrom::Start(0))?;
    if size < HEADER_LEN {
        return Err(Error::Format(format!("{}: file too short for a snapshot header", path.display())));
    }
    let mut hb = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut hb)?;
    let header = SnapshotHeader::decode(&hb)?;
    let frame_len = header.frame_len();
    let body = size - HEADER_LEN;
    let count = body / frame_len;
    if !body.is_multiple_of(frame_len) {
        log::warn!(
            "{}: dropping {} trailing bytes of an incomplete frame",
            path.display(),
            body % frame_len
        );
    }
    let mut frames = Vec::with_capacity(count as usize);
    let mut buf = vec![0u8; frame_len as usize];
    for _ in 0..count {
        file.read_exact(&mut buf)?;
        frames.push(decode_frame(&buf));
    }
    Ok((header, frames))
}

/// Cuts a snapshot file back to its header plus the first `keep` frames.
pub fn truncate_snapshots(path: &Path, keep: usize) -> Result<()> {
    let (header, _) = read_snapshots(path)?;
    let file = OpenOptions::new().write(true).open(path)?;
    file.set_len(HEADER_LEN + keep as u64 * header.frame_len())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(k: usize, len: usize) -> Frame {
        Frame {
            t: 0.1 * k as f64,
            u: (0..len).map(|i| -0.5 - 1e-3 * (i * k) as f64).collect(),
            dt_next: 0.0123 + k as f64,
            record_index: k,
        }
    }

    #[test]
    fn round_trip_and_partial_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let header = SnapshotHeader {
            n: 2,
            points: 4,
            omega: 2.0,
            m: 1.5,
        };
        let mut w = SnapshotWriter::create(&path, header).unwrap();
        let frames: Vec<Frame> = (0..3).map(|k| frame(k, 16)).collect();
        for f in &frames {
            w.write_frame(f).unwrap();
        }
        drop(w);
        let (h, back) = read_snapshots(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, frames);

        // Simulate a write cut short mid-frame.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[1, 2, 3, 4, 5]).unwrap();
        let (_, back) = read_snapshots(&path).unwrap();
        assert_eq!(back.len(), 3);

        truncate_snapshots(&path, 1).unwrap();
        let (_, back) = read_snapshots(&path).unwrap();
        assert_eq!(back, frames[..1]);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        std::fs::write(&path, vec![0u8; 64]).unwrap();
        assert!(matches!(read_snapshots(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_frame_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let header = SnapshotHeader {
            n: 1,
            points: 8,
            omega: 2.0,
            m: 1.0,
        };
        let mut w = SnapshotWriter::create(&dir.path().join("s.bin"), header).unwrap();
        assert!(w.write_frame(&frame(0, 7)).is_err());
    }
}
