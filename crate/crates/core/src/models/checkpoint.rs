use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Architecture, ForecastModel, Forecaster, ModelKind};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ADVTSCKP";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub architecture: Architecture,
    pub seed: u64,
    pub n_params: u32,
}

/// Serializes `model` in the versioned little-endian layout.
pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    model: &ForecastModel<T>,
    lookback: usize,
    seed: u64,
) -> Result<(), CheckpointError> {
    let arch = model.architecture(lookback);
    let params = model.params();
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[match arch.kind {
        ModelKind::Vanilla => 0u8,
        ModelKind::EncoderDecoder => 1u8,
    }])?;
    for d in [arch.input_features, arch.hidden, arch.relu_units, arch.lookback] {
        w.write_all(&dim(d)?.to_le_bytes())?;
    }
    w.write_all(&arch.dropout.to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    w.write_all(&dim(params.len())?.to_le_bytes())?;
    for p in params {
        w.write_all(&dim(p.shape().len())?.to_le_bytes())?;
        for &d in p.shape() {
            w.write_all(&dim(d)?.to_le_bytes())?;
        }
        for v in p.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn dim(d: usize) -> Result<u32, CheckpointError> {
    u32::try_from(d).map_err(|_| CheckpointError::Corrupt(format!("dimension {d} exceeds u32")))
}

/// Writes a checkpoint file and returns its SHA-256 id.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &ForecastModel<T>,
    lookback: usize,
    seed: u64,
) -> Result<String, CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, lookback, seed)?;
    fs::write(path, &buf)?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint, rebuilding the model it describes.
pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<(CheckpointHeader, ForecastModel<T>), CheckpointError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let kind = match c.take(1)?[0] {
        0 => ModelKind::Vanilla,
        1 => ModelKind::EncoderDecoder,
        k => return Err(CheckpointError::Corrupt(format!("unknown model kind {k}"))),
    };
    let input_features = c.u32()? as usize;
    let hidden = c.u32()? as usize;
    let relu_units = c.u32()? as usize;
    let lookback = c.u32()? as usize;
    let dropout = c.f64()?;
    let seed = c.u64()?;
    let n_params = c.u32()?;
    let architecture = Architecture {
        kind,
        input_features,
        hidden,
        relu_units,
        lookback,
        dropout,
    };
    let mut model = ForecastModel::zeros(&architecture).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut params = model.params_mut();
    if params.len() != n_params as usize {
        return Err(CheckpointError::Corrupt(format!(
            "architecture has {} parameter arrays, file declares {n_params}",
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let ndim = c.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(c.u32()? as usize);
        }
        if shape != p.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {i} has shape {shape:?}, architecture expects {:?}",
                p.shape()
            )));
        }
        for v in p.data_mut() {
            *v = T::of(c.f64()?);
        }
    }
    if c.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    let header = CheckpointHeader {
        version,
        architecture,
        seed,
        n_params,
    };
    Ok((header, model))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(CheckpointHeader, ForecastModel<T>), CheckpointError> {
    read_checkpoint(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::rng::Streams;

    fn model(kind: ModelKind) -> ForecastModel<f64> {
        let arch = Architecture {
            kind,
            input_features: 3,
            hidden: 5,
            relu_units: 4,
            lookback: 6,
            dropout: 0.1,
        };
        ForecastModel::new(&arch, &Streams::new(17)).unwrap()
    }

    fn bytes(m: &ForecastModel<f64>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, m, 6, 17).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bitwise() {
        let x = Tensor::new(vec![2, 6, 3], (0..36).map(|i| i as f64 / 36.0).collect()).unwrap();
        for kind in [ModelKind::Vanilla, ModelKind::EncoderDecoder] {
            let m = model(kind);
            let (h, back) = read_checkpoint::<f64, _>(bytes(&m).as_slice()).unwrap();
            assert_eq!(back, m);
            assert_eq!(h.seed, 17);
            assert_eq!(h.architecture, m.architecture(6));
            assert_eq!(back.predict_batch(&x).unwrap(), m.predict_batch(&x).unwrap());
        }
    }

    #[test]
    fn corrupt_version_is_reported() {
        let mut b = bytes(&model(ModelKind::Vanilla));
        b[8] = 7;
        assert!(matches!(
            read_checkpoint::<f64, _>(b.as_slice()),
            Err(CheckpointError::Version { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let b = bytes(&model(ModelKind::EncoderDecoder));
        let mut m = b.clone();
        m[0] = b'X';
        assert!(matches!(read_checkpoint::<f64, _>(m.as_slice()), Err(CheckpointError::BadMagic)));
        assert!(matches!(read_checkpoint::<f64, _>(&b[..3]), Err(CheckpointError::BadMagic)));
        assert!(matches!(
            read_checkpoint::<f64, _>(&b[..b.len() - 5]),
            Err(CheckpointError::Truncated)
        ));
        let mut extra = b.clone();
        extra.push(0);
        assert!(matches!(read_checkpoint::<f64, _>(extra.as_slice()), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn file_round_trip_returns_stable_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model(ModelKind::Vanilla);
        let id1 = save_checkpoint(&path, &m, 6, 17).unwrap();
        let (_, back) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(save_checkpoint(&path, &back, 6, 17).unwrap(), id1);
    }
}
