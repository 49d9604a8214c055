//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LAKD" | version: u16 | entries: u32
//! per entry: name_len: u16 | name: UTF-8 | ndim: u8 | dims: ndim x u32 | data: numel x f32
//! ```
//!
//! The network configuration travels next to the checkpoint as a JSON file
//! at `<checkpoint path>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::NetworkConfig;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LAKD";
pub const VERSION: u16 = 1;

/// Ordered named tensors: model parameters plus optional optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                format: "checkpoint",
                offset: self.pos,
                reason: format!("truncated {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn from_params(params: &ParamStore) -> Self {
        Checkpoint {
            entries: params.iter().map(|(n, t)| (n.to_string(), without_grad(t))).collect(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: &Tensor) {
        self.entries.push((name.into(), without_grad(tensor)));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.entries
            .iter()
            .filter_map(move |(n, t)| n.strip_prefix(prefix).map(|rest| (rest, t)))
    }

    /// Parameters of `config`'s network, ignoring any other entries.
    pub fn to_params(&self, config: &NetworkConfig) -> Result<ParamStore> {
        let reference = super::network::init_params(config, 0)?;
        let mut params = ParamStore::new();
        for (name, _) in reference.iter() {
            let t = self.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
            params.insert(name, t.clone());
        }
        Ok(params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::InvalidArgument(format!("entry name too long: {name}")))?;
            let ndim = u8::try_from(t.ndim())
                .map_err(|_| Error::InvalidArgument(format!("too many dims in {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(ndim);
            for &d in t.shape() {
                let d = u32::try_from(d)
                    .map_err(|_| Error::InvalidArgument(format!("dimension too large in {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format { format: "checkpoint", offset: 0, reason: "bad magic".into() });
        }
        let version = r.u16("version")?;
        if version != VERSION {
            return Err(Error::Format {
                format: "checkpoint",
                offset: 4,
                reason: format!("unsupported version {version}"),
            });
        }
        let count = r.u32("entry count")?;
        let mut entries = Vec::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|e| Error::Format {
                    format: "checkpoint",
                    offset: at,
                    reason: format!("entry name is not UTF-8: {e}"),
                })?
                .to_string();
            let ndim = r.u8("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32("dims")? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = r.take(numel * 4, "payload")?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                format: "checkpoint",
                offset: r.pos,
                reason: "trailing bytes".into(),
            });
        }
        Ok(Checkpoint { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn without_grad(t: &Tensor) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("same shape")
}

/// Location of the JSON config that accompanies a checkpoint.
pub fn config_path(checkpoint: impl AsRef<Path>) -> PathBuf {
    let mut p = checkpoint.as_ref().as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn write_config(checkpoint: impl AsRef<Path>, config: &NetworkConfig) -> Result<()> {
    fs::write(config_path(checkpoint), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

pub fn read_config(checkpoint: impl AsRef<Path>) -> Result<NetworkConfig> {
    let text = fs::read_to_string(config_path(checkpoint))?;
    let config: NetworkConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::default();
        c.push("a.weight", &Tensor::from_fn([2, 1, 3, 3], |i| i as f32 * 0.25 - 1.0));
        c.push("step", &Tensor::scalar(7.0));
        c
    }

    #[test]
    fn byte_layout() {
        let mut c = Checkpoint::default();
        c.push("x", &Tensor::new([2], vec![1.0, -2.0]).unwrap());
        let bytes = c.to_bytes().unwrap();
        let mut expected = b"LAKD".to_vec();
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.push(b'x');
        expected.push(1);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn roundtrip_is_lossless() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().to_bytes().unwrap();
        match Checkpoint::from_bytes(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 10),
            other => panic!("{other:?}"),
        }
        assert!(Checkpoint::from_bytes(b"LAKX\x01\x00").is_err());
    }

    #[test]
    fn config_sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = NetworkConfig::tiny(8, 5);
        write_config(&path, &config).unwrap();
        assert_eq!(config_path(&path), dir.path().join("model.ckpt.json"));
        assert_eq!(read_config(&path).unwrap(), config);
    }
}
