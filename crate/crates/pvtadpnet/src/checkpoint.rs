//! Binary model checkpoints.
//!
//! Format: magic `PVTA`, u32 little-endian version (1), u32 JSON metadata
//! length + UTF-8 blob, u32 tensor count, then per tensor: u16 name length +
//! UTF-8 name, u8 dtype tag (0 = f32, 1 = f64), u8 rank, rank x u32 dims,
//! and row-major little-endian values. The byte stream is a pure function of
//! the checkpoint contents, so load-then-save round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::model::SegModel;
use crate::scalar::Elem;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PVTA";
pub const VERSION: u32 = 1;

/// JSON metadata stored alongside the tensors: the model config echo plus
/// training progress counters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    /// Best monitored validation mDice so far.
    pub best_metric: f64,
    /// Adam step counter (t in the bias-correction terms).
    pub adam_step: u64,
}

/// A checkpoint: metadata plus ordered named tensors (parameters, running
/// statistics, and Adam moments).
#[derive(Clone, Debug)]
pub struct Checkpoint<E: Elem> {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<E>)>,
}

impl<E: Elem> Checkpoint<E> {
    /// Snapshots a model's parameter store: values, then `adam.m.<name>` /
    /// `adam.v.<name>` moments for each trainable parameter.
    pub fn from_model(model: &SegModel<E>, epoch: usize, best_metric: f64, adam_step: u64) -> Self {
        let mut tensors = Vec::new();
        for (_, e) in model.ps.iter() {
            tensors.push((e.name.clone(), e.value.clone()));
        }
        for (_, e) in model.ps.iter() {
            if let Some((m, v)) = &e.moment {
                tensors.push((format!("adam.m.{}", e.name), m.clone()));
                tensors.push((format!("adam.v.{}", e.name), v.clone()));
            }
        }
        Checkpoint {
            meta: CheckpointMeta {
                model: model.config.clone(),
                seed: model.seed,
                epoch,
                best_metric,
                adam_step,
            },
            tensors,
        }
    }

    /// Writes parameter values and Adam moments back into a model built from
    /// the same config. Every model parameter must be present with a
    /// matching shape.
    pub fn apply_to(&self, model: &mut SegModel<E>) -> Result<()> {
        if self.meta.model != model.config {
            return Err(Error::Format(
                "checkpoint config does not match model config".into(),
            ));
        }
        let lookup: std::collections::HashMap<&str, &Tensor<E>> = self
            .tensors
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        for e in model.ps.iter_mut() {
            let t = lookup
                .get(e.name.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {:?}", e.name)))?;
            if t.shape != e.value.shape {
                return Err(Error::Format(format!(
                    "tensor {:?} shape mismatch: checkpoint {:?} vs model {:?}",
                    e.name, t.shape, e.value.shape
                )));
            }
            e.value = (*t).clone();
            if let Some((m, v)) = &mut e.moment {
                if let (Some(cm), Some(cv)) = (
                    lookup.get(format!("adam.m.{}", e.name).as_str()),
                    lookup.get(format!("adam.v.{}", e.name).as_str()),
                ) {
                    *m = (*cm).clone();
                    *v = (*cv).clone();
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(meta.len()).unwrap().to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&u32::try_from(self.tensors.len()).unwrap().to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            out.extend_from_slice(&u16::try_from(nb.len()).unwrap().to_le_bytes());
            out.extend_from_slice(nb);
            out.push(E::DTYPE_TAG);
            out.push(u8::try_from(t.rank()).unwrap());
            for &d in &t.shape {
                out.extend_from_slice(&u32::try_from(d).unwrap().to_le_bytes());
            }
            for &v in &t.data {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("non-UTF-8 tensor name".into()))?;
            let tag = r.u8()?;
            if tag != E::DTYPE_TAG {
                return Err(Error::Format(format!(
                    "tensor {name:?} dtype tag {tag} does not match expected {}",
                    E::DTYPE_TAG
                )));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let width = std::mem::size_of::<E>();
            let raw = r.take(n * width)?;
            let data: Vec<E> = raw.chunks_exact(width).map(E::read_le).collect();
            tensors.push((name, Tensor::new(shape, data)));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
