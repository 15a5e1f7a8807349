//! Parameter checkpoint file: a flat container of named tensors.
//!
//! Layout: header line `JS3C-CKPT v1\n`, then per tensor
//!
//! ```text
//! name_len: u32 LE | name: UTF-8 bytes | rank: u32 LE | dims: rank x u32 LE |
//! values: prod(dims) x f64 LE
//! ```
//!
//! Round-trips are bit-exact; entry order is preserved.

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::tensor::Tensor;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const HEADER: &[u8] = b"JS3C-CKPT v1\n";

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) {
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Scalar convenience entry (shape `[1]`).
    pub fn push_scalar(&mut self, name: &str, value: f64) {
        self.push(name, Tensor::new(vec![1], vec![value]).unwrap());
    }

    pub fn get_scalar(&self, name: &str) -> Option<f64> {
        self.get(name).map(|t| t.data()[0])
    }

    /// Append every parameter of `net` under its own name prefix.
    pub fn push_mlp(&mut self, net: &Mlp) {
        for (name, param) in net.param_names().into_iter().zip(net.params()) {
            self.push(&name, param.clone());
        }
    }

    /// Load parameters into an already-shaped network, verifying shapes.
    pub fn load_mlp(&self, net: &mut Mlp) -> Result<()> {
        let names = net.param_names();
        for (name, param) in names.iter().zip(net.params_mut()) {
            let stored = self.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor '{name}' in checkpoint"))
            })?;
            if stored.shape() != param.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' shape mismatch: checkpoint has {:?}, configuration expects {:?}",
                    name,
                    stored.shape(),
                    param.shape()
                )));
            }
            param.data_mut().copy_from_slice(stored.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER.len() + 64 * self.entries.len());
        out.extend_from_slice(HEADER);
        for (name, tensor) in &self.entries {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER.len() || &bytes[..HEADER.len()] != HEADER {
            return Err(Error::Checkpoint("bad checkpoint header".into()));
        }
        let mut pos = HEADER.len();
        let mut entries = Vec::new();
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint truncated at byte {} (wanted {} more)",
                    *pos, n
                )));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        while pos < bytes.len() {
            let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let count: usize = shape.iter().product();
            let raw = take(&mut pos, count * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(Checkpoint { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// FNV-1a hash of the serialized bytes; used for freeze contracts.
    pub fn checksum(&self) -> u64 {
        fnv1a(&self.to_bytes())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Checksum of a single network's parameters, for per-component freeze checks.
pub fn mlp_checksum(net: &Mlp) -> u64 {
    let mut ck = Checkpoint::new();
    ck.push_mlp(net);
    ck.checksum()
}
