//! Self-describing binary container for named arrays.
//!
//! Layout (all integers little-endian `u32`):
//! `MAGIC | version | n_meta | (key, value)* | n_arrays | (name, rank, dims*, f32 data)*`
//! where strings are a length followed by UTF-8 bytes.

use std::path::Path;

use super::network::Sequential;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RMPRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push_array(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Checkpoint(format!("array {name} shape {shape:?} does not match its data")));
        }
        if self.get(name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate array name {name}")));
        }
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape,
            data,
        });
        Ok(())
    }

    pub fn push_tensor(&mut self, name: &str, tensor: &Tensor) -> Result<()> {
        self.push_array(
            name,
            tensor.shape().to_vec(),
            tensor.data().iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let a = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
        Tensor::new(a.shape.clone(), a.data.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn push_network(&mut self, prefix: &str, net: &Sequential) -> Result<()> {
        for (name, t) in net.state() {
            self.push_tensor(&format!("{prefix}.{name}"), &t)?;
        }
        Ok(())
    }

    pub fn load_network(&self, prefix: &str, net: &mut Sequential) -> Result<()> {
        let lead = format!("{prefix}.");
        let state: Vec<(String, Tensor)> = self
            .arrays
            .iter()
            .filter_map(|a| a.name.strip_prefix(&lead).map(|rest| (rest.to_string(), a)))
            .map(|(rest, a)| self.tensor(&a.name).map(|t| (rest, t)))
            .collect::<Result<_>>()?;
        net.load_state(&state)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.arrays.len() as u32);
        for a in &self.arrays {
            put_str(&mut out, &a.name);
            put_u32(&mut out, a.shape.len() as u32);
            for &d in &a.shape {
                put_u32(&mut out, d as u32);
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            ck.metadata.push((k, v));
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("array {name} is too large")))?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ck.push_array(&name, shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 in checkpoint".into()))
    }
}
