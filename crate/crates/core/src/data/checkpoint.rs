//! Model checkpoints.
//!
//! Layout, all integers little-endian u32:
//!
//! ```text
//! "SCAN" | version | config_len | config JSON | param_count
//! per parameter: name_len | name | rank | dims... | f32 values
//! crc32 of everything above
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Result, ScanError};
use crate::model::{ScanConfig, ScanModel};
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"SCAN";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| ScanError::format("checkpoint", format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode<T: Scalar>(model: &ScanModel<T>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config()).map_err(|e| ScanError::Internal(e.to_string()))?;
    put_u32(&mut out, config.len())?;
    out.extend_from_slice(&config);
    put_u32(&mut out, model.params().len())?;
    for p in model.params().iter() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.tensor.rank())?;
        for &d in p.tensor.shape() {
            put_u32(&mut out, d)?;
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ScanError::format("checkpoint", "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Validate the header and checksum and return the stored config.
fn open(bytes: &[u8]) -> Result<(ScanConfig, Reader<'_>)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(ScanError::format("checkpoint", "missing SCAN magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ScanError::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(ScanError::format("checkpoint", format!("version {version}")));
    }
    let len = r.u32()?;
    let config: ScanConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| ScanError::format("checkpoint", e.to_string()))?;
    Ok((config, r))
}

fn fill<T: Scalar>(model: &mut ScanModel<T>, mut r: Reader<'_>) -> Result<()> {
    let count = r.u32()?;
    if count != model.params().len() {
        return Err(ScanError::ConfigMismatch(format!(
            "{count} stored parameters, model has {}",
            model.params().len()
        )));
    }
    for p in model.params_mut().iter_mut() {
        let len = r.u32()?;
        let name = String::from_utf8_lossy(r.take(len)?).into_owned();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if name != p.name || shape != p.tensor.shape() {
            return Err(ScanError::ConfigMismatch(format!(
                "stored {name} {shape:?}, model has {} {:?}",
                p.name,
                p.tensor.shape()
            )));
        }
        let raw = r.take(4 * p.tensor.len())?;
        for (v, b) in p.tensor.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        }
    }
    if r.pos != r.bytes.len() {
        return Err(ScanError::format("checkpoint", "trailing bytes"));
    }
    Ok(())
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ScanModel<T>> {
    let (config, r) = open(bytes)?;
    let mut model = ScanModel::new(config, 0)?;
    fill(&mut model, r)?;
    Ok(model)
}

/// Overwrite `model`'s parameters; the stored layout must match.
pub fn decode_into<T: Scalar>(bytes: &[u8], model: &mut ScanModel<T>) -> Result<()> {
    let (config, r) = open(bytes)?;
    if !config.compatible_with(model.config()) {
        return Err(ScanError::ConfigMismatch(format!(
            "checkpoint {config:?} vs model {:?}",
            model.config()
        )));
    }
    fill(model, r)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, model: &ScanModel<T>) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ScanModel<T>> {
    decode(&fs::read(path)?)
}

pub fn load_checkpoint_into<T: Scalar>(path: &Path, model: &mut ScanModel<T>) -> Result<()> {
    decode_into(&fs::read(path)?, model)
}
