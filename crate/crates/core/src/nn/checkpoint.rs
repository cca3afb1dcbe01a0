//! Flat binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//! magic `SWCK` | version u32 | k u64 | segment count u64 |
//! per segment (offset u64, len u64, role u8, layer u32) | k f64 values |
//! batch-norm trailer: layer count u64, then per layer
//! (channels u64, mean f64 x channels, var f64 x channels).
//!
//! The trailer carries batch-norm running statistics so a reloaded model
//! evaluates identically; readers that only need parameters can stop after
//! the k values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::mlp::{BnRunning, MlpConfig, MlpModel};
use super::params::{ParamRole, ParamVector, Segment};

const MAGIC: &[u8; 4] = b"SWCK";
const VERSION: u32 = 1;

pub fn save(path: &Path, params: &ParamVector, bn: &[BnRunning]) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.k() as u64).to_le_bytes())?;
    w.write_all(&(params.segments().len() as u64).to_le_bytes())?;
    for seg in params.segments() {
        w.write_all(&(seg.offset as u64).to_le_bytes())?;
        w.write_all(&(seg.len as u64).to_le_bytes())?;
        w.write_all(&[seg.role.to_u8()])?;
        w.write_all(&(seg.layer_index as u32).to_le_bytes())?;
    }
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(bn.len() as u64).to_le_bytes())?;
    for layer in bn {
        w.write_all(&(layer.mean.len() as u64).to_le_bytes())?;
        for v in &layer.mean {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &layer.var {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamVector, Vec<BnRunning>)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let fmt = |detail: &str| Error::FileFormat {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
    if &magic != MAGIC {
        return Err(fmt("bad magic"));
    }
    let version = read_u32(&mut r).map_err(|_| fmt("truncated version"))?;
    if version != VERSION {
        return Err(fmt(&format!("unsupported version {version}")));
    }
    let k = read_u64(&mut r).map_err(|_| fmt("truncated k"))? as usize;
    let n_segments = read_u64(&mut r).map_err(|_| fmt("truncated segment count"))? as usize;
    let mut segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let offset = read_u64(&mut r).map_err(|_| fmt("truncated segment"))? as usize;
        let len = read_u64(&mut r).map_err(|_| fmt("truncated segment"))? as usize;
        let mut role = [0u8; 1];
        r.read_exact(&mut role).map_err(|_| fmt("truncated segment"))?;
        let layer_index = read_u32(&mut r).map_err(|_| fmt("truncated segment"))? as usize;
        segments.push(Segment {
            offset,
            len,
            role: ParamRole::from_u8(role[0])?,
            layer_index,
        });
    }
    let mut values = Vec::with_capacity(k);
    for _ in 0..k {
        values.push(read_f64(&mut r).map_err(|_| fmt("truncated values"))?);
    }
    let params = ParamVector::new(values, segments)?;

    let n_bn = read_u64(&mut r).map_err(|_| fmt("truncated batch-norm trailer"))? as usize;
    let mut bn = Vec::with_capacity(n_bn);
    for _ in 0..n_bn {
        let channels = read_u64(&mut r).map_err(|_| fmt("truncated batch-norm trailer"))? as usize;
        let mut mean = Vec::with_capacity(channels);
        for _ in 0..channels {
            mean.push(read_f64(&mut r).map_err(|_| fmt("truncated batch-norm trailer"))?);
        }
        let mut var = Vec::with_capacity(channels);
        for _ in 0..channels {
            var.push(read_f64(&mut r).map_err(|_| fmt("truncated batch-norm trailer"))?);
        }
        bn.push(BnRunning { mean, var });
    }
    Ok((params, bn))
}

/// Rebuild a model of the given architecture from a checkpoint file.
pub fn load_model(path: &Path, config: &MlpConfig) -> Result<MlpModel> {
    let (params, bn) = load(path)?;
    MlpModel::from_parts(config.clone(), params, bn)
}

pub fn save_model(path: &Path, model: &MlpModel) -> Result<()> {
    save(path, model.param_view(), model.bn_running())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::{MlpConfig, MlpModel};

    #[test]
    fn round_trip_is_bit_exact() {
        let config = MlpConfig {
            widths: vec![3, 6, 2],
            use_batchnorm: true,
            dropout_rate: 0.0,
        };
        let model = MlpModel::new(config.clone(), 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &model).unwrap();
        let restored = load_model(&path, &config).unwrap();
        assert_eq!(
            restored.param_view().values(),
            model.param_view().values()
        );
        assert_eq!(restored.bn_running(), model.bn_running());

        // saving the restored model reproduces the file byte for byte
        let path2 = dir.path().join("model2.ckpt");
        save_model(&path2, &restored).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let config = MlpConfig {
            widths: vec![2, 3, 2],
            use_batchnorm: false,
            dropout_rate: 0.0,
        };
        let model = MlpModel::new(config, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_model(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(matches!(load(&path), Err(Error::FileFormat { .. })));
    }
}
