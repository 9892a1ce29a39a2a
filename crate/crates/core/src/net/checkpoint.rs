//! Binary checkpoint format: the magic `MESA1`, then for every tensor in
//! canonical name order a `u16` name length, the UTF-8 name, a `u8` rank,
//! `rank` `u32` dimensions and the little-endian `f64` values.

use std::path::Path;

use super::params::{NetConfig, NetworkParameters, ParamLayout};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MESA1";

pub fn write_checkpoint(params: &NetworkParameters) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        CHECKPOINT_MAGIC.len() + params.len() * 8 + 64 * params.layout().entries.len(),
    );
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for e in &params.layout().entries {
        let name = e.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(e.shape.len() as u8);
        for &d in &e.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &params.data()[e.range()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: impl FnOnce() -> String) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {}",
                what()
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
}

/// Parses a checkpoint for a network of shape `config`. Every tensor of the
/// layout must appear once, in canonical order, with the expected shape.
pub fn read_checkpoint(bytes: &[u8], config: &NetConfig) -> Result<NetworkParameters> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
    {
        return Err(Error::Checkpoint("unknown magic".into()));
    }
    let layout = std::sync::Arc::new(ParamLayout::new(config.clone()));
    let mut data = vec![0.0; layout.total];
    let mut cur = Cursor {
        bytes,
        at: CHECKPOINT_MAGIC.len(),
    };
    for e in &layout.entries {
        let ctx = || format!("parameter {}", e.name);
        let len = u16::from_le_bytes(cur.take(2, ctx)?.try_into().unwrap()) as usize;
        let raw = cur.take(len, ctx)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::Checkpoint(format!("invalid name where {} expected", e.name)))?;
        if name != e.name {
            return Err(Error::Checkpoint(format!(
                "expected parameter {}, found {name}",
                e.name
            )));
        }
        let rank = cur.take(1, ctx)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(cur.take(4, ctx)?.try_into().unwrap()) as usize);
        }
        if shape != e.shape {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for parameter {}: expected {:?}, found {:?}",
                e.name, e.shape, shape
            )));
        }
        let raw = cur.take(8 * e.len(), ctx)?;
        for (slot, chunk) in data[e.range()].iter_mut().zip(raw.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if !data[e.range()].iter().all(|v| v.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "non-finite value in parameter {}",
                e.name
            )));
        }
    }
    if cur.at != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.at
        )));
    }
    Ok(NetworkParameters::from_parts(layout, data))
}

pub fn save_checkpoint(params: &NetworkParameters, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, config: &NetConfig) -> Result<NetworkParameters> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = NetworkParameters::init(NetConfig::default(), 17);
        let bytes = write_checkpoint(&p);
        assert_eq!(&bytes[..5], b"MESA1");
        let q = read_checkpoint(&bytes, &NetConfig::default()).unwrap();
        assert_eq!(p, q);
        assert_eq!(write_checkpoint(&q), bytes);
    }

    #[test]
    fn header_of_first_tensor() {
        let p = NetworkParameters::init(NetConfig::default(), 1);
        let bytes = write_checkpoint(&p);
        let first = &p.layout().entries[0];
        let len = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        assert_eq!(&bytes[7..7 + len], first.name.as_bytes());
        assert_eq!(bytes[7 + len] as usize, first.shape.len());
    }

    #[test]
    fn rejects_bad_magic_and_shapes() {
        let p = NetworkParameters::init(NetConfig::default(), 1);
        let mut bytes = write_checkpoint(&p);
        bytes[0] = b'X';
        assert!(read_checkpoint(&bytes, &NetConfig::default())
            .unwrap_err()
            .to_string()
            .contains("magic"));

        let err = read_checkpoint(&write_checkpoint(&p), &NetConfig::tiny())
            .unwrap_err()
            .to_string();
        assert!(err.contains("shape mismatch for parameter"), "{err}");

        let bytes = write_checkpoint(&p);
        let err = read_checkpoint(&bytes[..bytes.len() - 3], &NetConfig::default())
            .unwrap_err()
            .to_string();
        let last = &p.layout().entries.last().unwrap().name;
        assert!(err.contains(last.as_str()), "{err}");
    }

    #[test]
    fn corrupted_value_names_parameter() {
        let p = NetworkParameters::init(NetConfig::tiny(), 1);
        let mut bytes = write_checkpoint(&p);
        let first = &p.layout().entries[0];
        let header = 5 + 2 + first.name.len() + 1 + 4 * first.shape.len();
        bytes[header..header + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        let err = read_checkpoint(&bytes, &NetConfig::tiny())
            .unwrap_err()
            .to_string();
        assert!(err.contains(&first.name), "{err}");
    }
}
