//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SRCKPT\0\0"
//! version  u32
//! cfg_hash u64      hash of the canonical model-config string
//! epoch    u32      last completed training epoch (0 = untrained)
//! blocks   u32      number of parameter blocks
//! per block:
//!   name_len  u32
//!   name      name_len bytes (UTF-8)
//!   trainable u8 (0 or 1)
//!   rank      u32 (always 2)
//!   dims      rank x u32 (rows, cols)
//!   payload   rows*cols x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SRCKPT\0\0";
const VERSION: u32 = 1;

pub fn write_checkpoint(
    path: &Path,
    store: &ParamStore,
    config_hash: u64,
    epoch: u32,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&config_hash.to_le_bytes())?;
    w.write_all(&epoch.to_le_bytes())?;
    w.write_all(&(store.names().len() as u32).to_le_bytes())?;
    for name in store.names() {
        let t = store.get(name);
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[store.is_trainable(name) as u8])?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&(t.rows as u32).to_le_bytes())?;
        w.write_all(&(t.cols as u32).to_le_bytes())?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Load a checkpoint, verifying the stored config hash against the
/// caller's. Returns the parameters and the epoch they were saved at.
pub fn read_checkpoint(path: &Path, expected_hash: u64) -> Result<(ParamStore, u32)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let hash = read_u64(&mut r)?;
    if hash != expected_hash {
        return Err(Error::Checkpoint(format!(
            "{}: config hash mismatch (file {hash:#x}, expected {expected_hash:#x})",
            path.display()
        )));
    }
    let epoch = read_u32(&mut r)?;
    let blocks = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..blocks {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Checkpoint(format!("{}: bad block name", path.display())))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let rank = read_u32(&mut r)?;
        if rank != 2 {
            return Err(Error::Checkpoint(format!(
                "{}: block {name} has rank {rank}",
                path.display()
            )));
        }
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut data = vec![0.0; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        store.insert(&name, Tensor::from_vec(rows, cols, data), flag[0] != 0);
    }
    Ok((store, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn round_trip_preserves_everything() {
        let cfg = ModelConfig {
            point_widths: vec![4, 4, 4, 6, 8],
            decoder_widths: vec![8, 4],
            ..ModelConfig::default()
        };
        let store = init_params(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &store, cfg.hash(), 17).unwrap();
        let (loaded, epoch) = read_checkpoint(&path, cfg.hash()).unwrap();
        assert_eq!(epoch, 17);
        assert_eq!(store.names(), loaded.names());
        for n in store.names() {
            assert_eq!(store.get(n).data, loaded.get(n).data);
            assert_eq!(store.is_trainable(n), loaded.is_trainable(n));
        }
    }

    #[test]
    fn hash_mismatch_rejected() {
        let cfg = ModelConfig {
            point_widths: vec![4, 4, 4, 6, 8],
            decoder_widths: vec![8, 4],
            ..ModelConfig::default()
        };
        let store = init_params(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&path, &store, cfg.hash(), 1).unwrap();
        let err = read_checkpoint(&path, cfg.hash() ^ 1).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"SRCKPT\0\0\x01\x00").unwrap();
        assert!(read_checkpoint(&path, 0).is_err());
    }
}
