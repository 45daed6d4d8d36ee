//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic  b"TCKP"
//! u32    format version (1)
//! u32    metadata length, then that many bytes of UTF-8 JSON
//! u32    tensor count
//! per tensor: u32 name length, name bytes, u32 rows, u32 cols, rows*cols f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::params::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}: not a checkpoint (bad magic)")]
    BadMagic(String),
    #[error("{path}: unsupported checkpoint version {version}")]
    Version { path: String, version: u32 },
    #[error("{path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("{path}: tensor {name:?} {reason}")]
    Mismatch { path: String, name: String, reason: String },
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub metadata: serde_json::Value,
    pub params: ParamSet,
}

pub fn write_checkpoint(path: &Path, params: &ParamSet, metadata: &serde_json::Value) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let meta = serde_json::to_vec(metadata).expect("json value serializes");
    (|| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(meta.len() as u32)?;
        w.write_all(&meta)?;
        w.write_u32::<LittleEndian>(params.len() as u32)?;
        for (name, value) in params.iter() {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(value.nrows() as u32)?;
            w.write_u32::<LittleEndian>(value.ncols() as u32)?;
            for &x in value.iter() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        w.flush()
    })()
    .map_err(io)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| CheckpointError::Io {
        path: p.clone(),
        source,
    })?;
    let mut r = BufReader::new(file);
    let corrupt = |e: std::io::Error| CheckpointError::Corrupt {
        path: p.clone(),
        reason: e.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic(p.clone()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(p));
    }
    let version = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { path: p, version });
    }
    let meta_len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta).map_err(corrupt)?;
    let metadata = serde_json::from_slice(&meta).map_err(|e| CheckpointError::Corrupt {
        path: p.clone(),
        reason: format!("metadata: {e}"),
    })?;
    let count = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(corrupt)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt {
            path: p.clone(),
            reason: e.to_string(),
        })?;
        let rows = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(corrupt)? as usize;
        let mut data = vec![0.0; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut data).map_err(corrupt)?;
        params.add(name, Array2::from_shape_vec((rows, cols), data).expect("shape matches"));
    }
    Ok(Checkpoint { metadata, params })
}

/// Copy checkpoint tensors into `target`, requiring identical names and shapes.
pub fn load_into(path: &Path, target: &mut ParamSet) -> Result<serde_json::Value, CheckpointError> {
    let ck = read_checkpoint(path)?;
    let p = path.display().to_string();
    if ck.params.len() != target.len() {
        return Err(CheckpointError::Corrupt {
            path: p,
            reason: format!("{} tensors, expected {}", ck.params.len(), target.len()),
        });
    }
    for (name, value) in ck.params.iter() {
        let id = target.id(name).ok_or_else(|| CheckpointError::Mismatch {
            path: p.clone(),
            name: name.to_string(),
            reason: "is not part of this network".into(),
        })?;
        let dst = target.get_mut(id);
        if dst.dim() != value.dim() {
            return Err(CheckpointError::Mismatch {
                path: p.clone(),
                name: name.to_string(),
                reason: format!("has shape {:?}, expected {:?}", value.dim(), dst.dim()),
            });
        }
        dst.assign(value);
    }
    Ok(ck.metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut p = ParamSet::new();
        p.add("w", array![[1.0, f64::MIN_POSITIVE], [-0.0, 1.0 / 3.0]]);
        p.add("b", array![[7.5]]);
        write_checkpoint(&path, &p, &serde_json::json!({"kind": "test"})).unwrap();
        let ck = read_checkpoint(&path).unwrap();
        assert_eq!(ck.params.hash_hex(), p.hash_hex());
        assert_eq!(ck.metadata["kind"], "test");
        let mut q = p.clone();
        q.get_mut(q.id("b").unwrap())[[0, 0]] = 0.0;
        load_into(&path, &mut q).unwrap();
        assert_eq!(q, p);
    }

    #[test]
    fn rejects_garbage_and_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(CheckpointError::BadMagic(_))));
        let mut p = ParamSet::new();
        p.add("w", array![[1.0, 2.0]]);
        write_checkpoint(&path, &p, &serde_json::Value::Null).unwrap();
        let mut other = ParamSet::new();
        other.add("w", array![[1.0], [2.0]]);
        assert!(matches!(load_into(&path, &mut other), Err(CheckpointError::Mismatch { .. })));
        let missing = dir.path().join("missing.ckpt");
        let err = read_checkpoint(&missing).unwrap_err().to_string();
        assert!(err.contains("missing.ckpt"));
    }
}
