//! Dataset file format.
//!
//! Layout (little-endian): magic `EDS1`, u32 version, u32 pair count,
//! u32 segment length `T`, u8 artifact kind, then per pair: f32 snr_db,
//! f32 clean[T], f32 noisy[T]. All pairs in one file share an artifact
//! kind. Values are stored as f32, so a write/read round trip of data
//! that came from a file is bit-exact.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::fsio::atomic_write;

use super::{ArtifactKind, SignalPair};

pub const DATASET_MAGIC: &[u8; 4] = b"EDS1";
pub const DATASET_VERSION: u32 = 1;

/// Writes pairs atomically. All pairs must share a length and kind.
pub fn write_dataset(pairs: &[SignalPair], path: &Path) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Data("write_dataset: no pairs".into()));
    }
    let t_len = pairs[0].clean.len();
    let kind = pairs[0].kind;
    for (i, p) in pairs.iter().enumerate() {
        if p.clean.len() != t_len || p.noisy.len() != t_len {
            return Err(Error::Data(format!(
                "write_dataset: pair {i} has length {}/{}, expected {t_len}",
                p.clean.len(),
                p.noisy.len()
            )));
        }
        if p.kind != kind {
            return Err(Error::Data(format!(
                "write_dataset: pair {i} has kind {:?}, file kind is {:?}",
                p.kind, kind
            )));
        }
    }
    let mut buf = Vec::with_capacity(17 + pairs.len() * (4 + 8 * t_len));
    buf.extend_from_slice(DATASET_MAGIC);
    push_u32(&mut buf, DATASET_VERSION);
    push_u32(&mut buf, pairs.len() as u32);
    push_u32(&mut buf, t_len as u32);
    buf.push(kind.code());
    for p in pairs {
        push_f32(&mut buf, p.snr_db as f32);
        for &v in &p.clean {
            push_f32(&mut buf, v as f32);
        }
        for &v in &p.noisy {
            push_f32(&mut buf, v as f32);
        }
    }
    atomic_write(path, &buf)
}

/// Reads a dataset file, validating magic, version and total length.
pub fn read_dataset(path: &Path) -> Result<Vec<SignalPair>> {
    let buf = std::fs::read(path)?;
    if buf.len() < 17 {
        return Err(Error::Data(format!(
            "dataset {}: truncated header",
            path.display()
        )));
    }
    if &buf[0..4] != DATASET_MAGIC {
        return Err(Error::Data(format!(
            "dataset {}: bad magic {:?}",
            path.display(),
            &buf[0..4]
        )));
    }
    let version = LittleEndian::read_u32(&buf[4..8]);
    if version != DATASET_VERSION {
        return Err(Error::Data(format!(
            "dataset {}: unknown version {version}",
            path.display()
        )));
    }
    let n_pairs = LittleEndian::read_u32(&buf[8..12]) as usize;
    let t_len = LittleEndian::read_u32(&buf[12..16]) as usize;
    let kind = ArtifactKind::from_code(buf[16])?;
    let expected = 17 + n_pairs * (4 + 8 * t_len);
    if buf.len() != expected {
        return Err(Error::Data(format!(
            "dataset {}: {} bytes, header implies {expected} (record length mismatch)",
            path.display(),
            buf.len()
        )));
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut pos = 17;
    for _ in 0..n_pairs {
        let snr_db = LittleEndian::read_f32(&buf[pos..pos + 4]) as f64;
        pos += 4;
        let mut clean = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            clean.push(LittleEndian::read_f32(&buf[pos..pos + 4]) as f64);
            pos += 4;
        }
        let mut noisy = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            noisy.push(LittleEndian::read_f32(&buf[pos..pos + 4]) as f64);
            pos += 4;
        }
        pairs.push(SignalPair {
            clean,
            noisy,
            snr_db,
            kind,
        });
    }
    Ok(pairs)
}

/// Reads a flat little-endian f32 matrix with rows of length `t_len`
/// (the layout benchmark EEG arrays ship in).
pub fn read_flat_f32(path: &Path, t_len: usize) -> Result<Vec<Vec<f64>>> {
    if t_len == 0 {
        return Err(Error::Config("read_flat_f32: zero segment length".into()));
    }
    let buf = std::fs::read(path)?;
    let row_bytes = 4 * t_len;
    if buf.is_empty() || buf.len() % row_bytes != 0 {
        return Err(Error::Data(format!(
            "flat f32 {}: {} bytes is not a multiple of {} (T = {t_len})",
            path.display(),
            buf.len(),
            row_bytes
        )));
    }
    Ok(buf
        .chunks_exact(row_bytes)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| LittleEndian::read_f32(c) as f64)
                .collect()
        })
        .collect())
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    let mut b = [0u8; 4];
    LittleEndian::write_u32(&mut b, v);
    buf.extend_from_slice(&b);
}

fn push_f32(buf: &mut Vec<u8>, v: f32) {
    let mut b = [0u8; 4];
    LittleEndian::write_f32(&mut b, v);
    buf.extend_from_slice(&b);
}
