//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `DPCKPT01`, a little-endian `u64` header
//! length, a JSON header (architecture, tensor table, metadata), then every
//! tensor as little-endian `f64` in table order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ArchConfig, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DPCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub params: ModelParams,
    /// Free-form training metadata (config, loss summary).
    pub metadata: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let tensors = ckpt.params.tensors();
    let header = Header {
        arch: ckpt.arch.clone(),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
            })
            .collect(),
        metadata: ckpt.metadata.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, _, values) in tensors {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(Error::Checkpoint("implausible header length".into()));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    header.arch.validate()?;
    // a zero-seeded model supplies the expected tensor layout
    let mut params = ModelParams::init(&header.arch, 0)?;
    let expected: Vec<TensorEntry> = params
        .tensors()
        .into_iter()
        .map(|(name, shape, _)| TensorEntry { name, shape })
        .collect();
    if expected != header.tensors {
        return Err(Error::Checkpoint(
            "tensor table does not match the stored architecture".into(),
        ));
    }
    for (_, dst) in params.tensors_mut() {
        let mut buf = vec![0u8; dst.len() * 8];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated tensor data".into()))?;
        for (d, chunk) in dst.iter_mut().zip(buf.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter values".into()));
    }
    Ok(Checkpoint {
        arch: header.arch,
        params,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Arch;

    #[test]
    fn round_trip_is_bit_exact() {
        for arch in [Arch::PvJnf, Arch::FilmJnf] {
            let cfg = ArchConfig::new(arch, 4, 8, 5).with_hidden(3, 2);
            let params = ModelParams::init(&cfg, 7).unwrap();
            let ckpt = Checkpoint {
                arch: cfg,
                params,
                metadata: serde_json::json!({"steps": 3}),
            };
            let mut bytes = Vec::new();
            write_checkpoint(&mut bytes, &ckpt).unwrap();
            let back = read_checkpoint(bytes.as_slice()).unwrap();
            assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_checkpoint(&b"garbage!"[..]).is_err());
        let cfg = ArchConfig::new(Arch::FilmJnf, 2, 4, 3).with_hidden(2, 2);
        let ckpt = Checkpoint {
            arch: cfg.clone(),
            params: ModelParams::init(&cfg, 1).unwrap(),
            metadata: serde_json::Value::Null,
        };
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &ckpt).unwrap();
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(read_checkpoint(bytes.as_slice()), Err(Error::Checkpoint(_))));
    }
}
