//! Little-endian binary container for named f64 tensors, shared by the
//! autoencoder and the recurrent models for parameter checkpoints.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub magic: [u8; 4],
    pub version: u32,
    /// Free-form header words (layer specs, sizes).
    pub meta: Vec<u32>,
    pub tensors: Vec<(String, Vec<f64>)>,
}

impl TensorFile {
    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_slice())
            .ok_or_else(|| Error::Config(format!("checkpoint missing tensor {name}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.magic)?;
        f.write_all(&self.version.to_le_bytes())?;
        f.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for m in &self.meta {
            f.write_all(&m.to_le_bytes())?;
        }
        f.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, data) in &self.tensors {
            let bytes = name.as_bytes();
            f.write_all(&(bytes.len() as u32).to_le_bytes())?;
            f.write_all(bytes)?;
            f.write_all(&(data.len() as u64).to_le_bytes())?;
            for v in data {
                f.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path, expect_magic: [u8; 4]) -> Result<TensorFile> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let bad = |msg: &str| Error::Config(format!("bad checkpoint {}: {msg}", path.display()));
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)?;
        if magic != expect_magic {
            return Err(bad("wrong magic"));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        let mut read_u32 = |f: &mut dyn Read| -> Result<u32> {
            f.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut f)?;
        let n_meta = read_u32(&mut f)? as usize;
        let mut meta = Vec::with_capacity(n_meta);
        for _ in 0..n_meta {
            meta.push(read_u32(&mut f)?);
        }
        let n_tensors = read_u32(&mut f)? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = read_u32(&mut f)? as usize;
            let mut name = vec![0u8; name_len];
            f.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name not UTF-8"))?;
            f.read_exact(&mut u64buf)?;
            let len = u64::from_le_bytes(u64buf) as usize;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                f.read_exact(&mut u64buf)?;
                data.push(f64::from_le_bytes(u64buf));
            }
            tensors.push((name, data));
        }
        Ok(TensorFile {
            magic,
            version,
            meta,
            tensors,
        })
    }
}
