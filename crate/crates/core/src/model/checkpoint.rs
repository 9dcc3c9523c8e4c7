//! Checkpoint file format.
//!
//! Layout (little-endian): magic `BRN1`, u32 format version, u32 length
//! of a UTF-8 JSON model-config blob plus the blob, u32 tensor count,
//! then per tensor: u16 name length + name, u8 ndim, u32 dims, f32 data.
//! Tensor order is the parameter registration order; loading validates
//! names and shapes against a registry rebuilt from the stored config.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::layers::ParamSet;
use crate::tensor::Element;

use super::{BandRouteNet, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BRN1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes the parameter set and its config. The write is atomic:
/// a temporary file in the target directory is renamed into place.
pub fn save_checkpoint<E: Element>(
    ps: &ParamSet<E>,
    cfg: &ModelConfig,
    path: &Path,
) -> Result<()> {
    let cfg_blob = serde_json::to_vec(cfg)
        .map_err(|e| Error::Config(format!("checkpoint: cannot encode config: {e}")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    write_u32(&mut buf, CHECKPOINT_VERSION);
    write_u32(&mut buf, cfg_blob.len() as u32);
    buf.extend_from_slice(&cfg_blob);
    write_u32(&mut buf, ps.len() as u32);
    for (name, tensor) in ps.iter() {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Config(format!("checkpoint: name too long: {name}")));
        }
        let mut len16 = [0u8; 2];
        LittleEndian::write_u16(&mut len16, name_bytes.len() as u16);
        buf.extend_from_slice(&len16);
        buf.extend_from_slice(name_bytes);
        let shape = tensor.shape();
        buf.push(shape.len() as u8);
        for &d in shape {
            write_u32(&mut buf, d as u32);
        }
        for &v in tensor.data() {
            let mut b = [0u8; 4];
            LittleEndian::write_f32(&mut b, v.as_f64() as f32);
            buf.extend_from_slice(&b);
        }
    }
    atomic_write(path, &buf)
}

/// Reads a checkpoint, rebuilds the model from the stored config and
/// fills its parameters. Corrupt headers, truncation and any shape or
/// name disagreement with the config are load errors.
pub fn load_checkpoint<E: Element>(path: &Path) -> Result<(BandRouteNet, ParamSet<E>)> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic = r.bytes(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!(
            "checkpoint {}: bad magic {:?}",
            path.display(),
            &magic[..magic.len().min(4)]
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "checkpoint {}: unknown format version {version}",
            path.display()
        )));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_blob = r.bytes(cfg_len)?;
    let cfg: ModelConfig = serde_json::from_slice(cfg_blob)
        .map_err(|e| Error::Data(format!("checkpoint {}: bad config: {e}", path.display())))?;
    cfg.validate()?;
    let (model, mut ps) = BandRouteNet::new::<E>(cfg, 0)?;

    let count = r.u32()? as usize;
    if count != ps.len() {
        return Err(Error::Data(format!(
            "checkpoint {}: {count} tensors, config implies {}",
            path.display(),
            ps.len()
        )));
    }
    for id in ps.ids().collect::<Vec<_>>() {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.bytes(name_len)?)
            .map_err(|_| Error::Data("checkpoint: non-UTF-8 tensor name".into()))?
            .to_string();
        if name != ps.name(id) {
            return Err(Error::Data(format!(
                "checkpoint: tensor '{name}' out of order; expected '{}'",
                ps.name(id)
            )));
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let expected = ps.get(id).shape().to_vec();
        if shape != expected {
            return Err(Error::Data(format!(
                "checkpoint: parameter '{name}' has shape {shape:?}, config implies {expected:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        let raw = r.bytes(numel * 4)?;
        let data: Vec<E> = raw
            .chunks_exact(4)
            .map(|c| E::from_f64(LittleEndian::read_f32(c) as f64))
            .collect();
        ps.set_data(id, crate::tensor::Tensor::from_vec(&shape, data)?)?;
    }
    if r.pos != buf.len() {
        return Err(Error::Data(format!(
            "checkpoint {}: {} trailing bytes",
            path.display(),
            buf.len() - r.pos
        )));
    }
    Ok((model, ps))
}

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    let mut b = [0u8; 4];
    LittleEndian::write_u32(&mut b, v);
    buf.extend_from_slice(&b);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Data("checkpoint: truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(LittleEndian::read_u16(self.bytes(2)?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.bytes(4)?))
    }
}
