//! Versioned binary checkpoints holding the generator config, every named
//! parameter tensor, the latent table, and the loss history.
//!
//! Values are stored as little-endian f64 bit patterns, so a save/load cycle
//! reproduces every structure bitwise.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::generator::{ConditionLabel, GeneratorConfig, GeneratorParams, LatentCode};
use crate::numerics::Tensor;
use crate::trainer::{LatentEntry, LatentTable, LossHistory};

const MAGIC: &[u8; 4] = b"CGLO";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(
    params: &GeneratorParams,
    table: &LatentTable,
    history: &LossHistory,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
        path: path.to_path_buf(),
    };
    w.bytes(MAGIC)?;
    w.u32(FORMAT_VERSION)?;

    let config = params.config();
    w.u64(config.latent_dim as u64)?;
    w.u64(config.output_size as u64)?;
    w.u64(config.channels as u64)?;
    w.u64(config.base_feat as u64)?;
    w.u64(config.seed)?;

    w.u64(params.tensors().len() as u64)?;
    for (name, tensor) in params.tensors() {
        w.string(name)?;
        w.u64(tensor.shape().len() as u64)?;
        for &d in tensor.shape() {
            w.u64(d as u64)?;
        }
        w.f64_slice(tensor.data())?;
    }

    w.u64(table.len() as u64)?;
    for entry in table.entries() {
        w.u64(entry.sample_id as u64)?;
        w.bytes(&[entry.condition.bit()])?;
        w.f64_slice(entry.code.values())?;
    }

    w.f64_slice(history.per_epoch())?;
    w.inner.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(GeneratorParams, LatentTable, LossHistory)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: path.to_path_buf(),
    };
    let mut magic = [0u8; 4];
    r.bytes(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let config = GeneratorConfig {
        latent_dim: r.usize()?,
        output_size: r.usize()?,
        channels: r.usize()?,
        base_feat: r.usize()?,
        seed: r.u64()?,
    };

    let n_tensors = r.usize()?;
    let mut tensors = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let ndim = r.usize()?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.usize()?);
        }
        let data = r.f64_vec()?;
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| r.corrupt(format!("tensor {name}: {e}")))?;
        tensors.push((name, tensor));
    }
    let params = GeneratorParams::from_parts(config.clone(), tensors)
        .map_err(|e| r.corrupt(e.to_string()))?;

    let n_entries = r.usize()?;
    let mut entries = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let sample_id = r.usize()?;
        let mut bit = [0u8; 1];
        r.bytes(&mut bit)?;
        let condition = ConditionLabel::from_value(bit[0] as f64)
            .map_err(|_| r.corrupt(format!("bad condition byte {}", bit[0])))?;
        let code = LatentCode::new(r.f64_vec()?);
        if code.len() != config.latent_dim {
            return Err(r.corrupt(format!(
                "latent code length {} != latent_dim {}",
                code.len(),
                config.latent_dim
            )));
        }
        entries.push(LatentEntry {
            sample_id,
            code,
            condition,
        });
    }
    let table = LatentTable::from_entries(entries).map_err(|e| r.corrupt(e.to_string()))?;

    let history = LossHistory::from_values(r.f64_vec()?);
    Ok((params, table, history))
}

struct Writer {
    inner: BufWriter<File>,
    path: PathBuf,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(|e| Error::io(&self.path, e))
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    fn string(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.bytes(s.as_bytes())
    }

    fn f64_slice(&mut self, values: &[f64]) -> Result<()> {
        self.u64(values.len() as u64)?;
        for &v in values {
            self.bytes(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Reader {
    inner: BufReader<File>,
    path: PathBuf,
}

impl Reader {
    fn corrupt(&self, detail: String) -> Error {
        Error::CorruptCheckpoint {
            path: self.path.clone(),
            detail,
        }
    }

    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.corrupt("unexpected end of file".into())
            } else {
                Error::io(&self.path, e)
            }
        })
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.corrupt(format!("length {v} out of range")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.usize()?;
        if len > 1 << 20 {
            return Err(self.corrupt(format!("unreasonable string length {len}")));
        }
        let mut buf = vec![0u8; len];
        self.bytes(&mut buf)?;
        String::from_utf8(buf).map_err(|_| self.corrupt("invalid utf-8 in name".into()))
    }

    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let len = self.usize()?;
        if len > 1 << 32 {
            return Err(self.corrupt(format!("unreasonable value count {len}")));
        }
        let mut out = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            self.bytes(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::init_params;
    use crate::trainer::init_latents;

    fn sample_state() -> (GeneratorParams, LatentTable, LossHistory) {
        let config = GeneratorConfig {
            latent_dim: 4,
            output_size: 8,
            channels: 1,
            base_feat: 4,
            seed: 3,
        };
        let params = init_params(&config).unwrap();
        let conditions = vec![
            ConditionLabel::Background,
            ConditionLabel::Foreground,
            ConditionLabel::Background,
        ];
        let table = LatentTable::new(init_latents(3, 4, 8), &conditions).unwrap();
        let history = LossHistory::from_values(vec![0.8, 0.31, 0.2500001]);
        (params, table, history)
    }

    #[test]
    fn round_trip_is_bitwise_equal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt-3");
        let (params, table, history) = sample_state();
        save_checkpoint(&params, &table, &history, &path).unwrap();
        let (p2, t2, h2) = load_checkpoint(&path).unwrap();
        assert_eq!(params, p2);
        assert_eq!(table, t2);
        assert_eq!(history, h2);
    }

    #[test]
    fn truncated_file_is_a_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt-trunc");
        let (params, table, history) = sample_state();
        save_checkpoint(&params, &table, &history, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for keep in [10, bytes.len() / 2, bytes.len() - 3] {
            std::fs::write(&path, &bytes[..keep]).unwrap();
            match load_checkpoint(&path) {
                Err(Error::CorruptCheckpoint { .. }) => {}
                other => panic!("expected corrupt error, got {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt-version");
        let (params, table, history) = sample_state();
        save_checkpoint(&params, &table, &history, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99; // version field follows the magic
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::VersionMismatch { found: 99, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn non_checkpoint_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not-a-ckpt");
        std::fs::write(&path, b"PNG\x0dsomething").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::BadMagic { .. })
        ));
    }
}
