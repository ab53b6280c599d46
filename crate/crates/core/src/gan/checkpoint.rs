//! Binary checkpoint format.
//!
//! ```text
//! "SCLD"            magic
//! u32               format version (1)
//! u8                role       0 = generator, 1 = discriminator, 2 = cnn
//! u8                phase      1 = phase1, 2 = phase2
//! u32               record count
//! per record:
//!   u32 + bytes     UTF-8 name
//!   u32             rank
//!   u64 × rank      dims
//!   f64 × product   payload
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::tensor::Tensor;

use super::{ModelError, ParamSet};

const MAGIC: &[u8; 4] = b"SCLD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
    Cnn,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Generator => 0,
            Role::Discriminator => 1,
            Role::Cnn => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Role::Generator),
            1 => Some(Role::Discriminator),
            2 => Some(Role::Cnn),
            _ => None,
        }
    }
}

/// Training phase a set of weights came out of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Unsupervised adversarial training; the head reads p(real).
    Phase1,
    /// Supervised training; the head reads p(COVID).
    Phase2,
}

impl Phase {
    fn tag(self) -> u8 {
        match self {
            Phase::Phase1 => 1,
            Phase::Phase2 => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Phase::Phase1),
            2 => Some(Phase::Phase2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub role: Role,
    pub phase: Phase,
    pub params: ParamSet,
}

fn corrupt(detail: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(detail.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl ModelCheckpoint {
    pub fn new(role: Role, phase: Phase, params: ParamSet) -> Self {
        Self { role, phase, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.params.count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.role.tag());
        out.push(self.phase.tag());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, tensor) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.dims().len() as u32).to_le_bytes());
            for &d in tensor.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic, not a checkpoint"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let role = Role::from_tag(r.u8()?).ok_or_else(|| corrupt("unknown role tag"))?;
        let phase = Phase::from_tag(r.u8()?).ok_or_else(|| corrupt("unknown phase tag"))?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::default();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_owned();
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt("tensor extent overflow"))?;
            let payload = r.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor extent overflow"))?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(dims, data).map_err(|e| corrupt(format!("{name}: {e}")))?;
            params.push(name, tensor);
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after last record"));
        }
        Ok(Self { role, phase, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
