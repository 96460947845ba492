//! FCKPT checkpoints: named `f32` tensors with their dims.
//!
//! Layout: `FCKP`, u32 version, u32 count, then per tensor a u16 name length,
//! the UTF-8 name, a u8 rank, `rank` u32 dims and the little-endian payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

pub const MAGIC: &[u8; 4] = b"FCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }

    fn from_real<T: Real>(name: String, dims: Vec<usize>, data: &[T]) -> Self {
        Self::new(name, dims, data.iter().map(|v| v.to_f32().unwrap()).collect())
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::InvalidArgument(format!("rank of `{}` too large", t.name)))?;
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor `{}` dims {:?} do not match {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("not an FCKPT checkpoint".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.take(1)?[0] as usize;
        let dims = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = c
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    if c.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(out)
}

pub fn write_checkpoint(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode(tensors)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

fn dims_of(s: Shape) -> Vec<usize> {
    vec![s.n, s.c, s.h, s.w]
}

/// Parameters, Adam moments, batch-norm statistics and the step counter,
/// each name prefixed with `prefix`.
pub fn store_tensors<T: Real>(store: &ParamStore<T>, prefix: &str) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for p in store.params() {
        let dims = dims_of(p.value.shape());
        let base = format!("{prefix}{}", p.name);
        out.push(NamedTensor::from_real(base.clone(), dims.clone(), p.value.data()));
        out.push(NamedTensor::from_real(format!("{base}.adam_m"), dims.clone(), &p.moment1));
        out.push(NamedTensor::from_real(format!("{base}.adam_v"), dims, &p.moment2));
    }
    for bn in store.bn_stats() {
        let base = format!("{prefix}{}", bn.name);
        let c = bn.mean.len();
        out.push(NamedTensor::from_real(format!("{base}.running_mean"), vec![c], &bn.mean));
        out.push(NamedTensor::from_real(format!("{base}.running_var"), vec![c], &bn.var));
        out.push(NamedTensor::new(format!("{base}.updates"), vec![1], vec![bn.updates as f32]));
    }
    out.push(NamedTensor::new(format!("{prefix}step"), vec![1], vec![store.step() as f32]));
    out
}

/// Restores everything written by [`store_tensors`] into a store of the same
/// architecture. Missing or mis-shaped entries are errors.
pub fn load_store<T: Real>(store: &mut ParamStore<T>, prefix: &str, tensors: &[NamedTensor]) -> Result<()> {
    let map: BTreeMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let fetch = |name: String, len: usize| -> Result<Vec<T>> {
        let t = map
            .get(name.as_str())
            .ok_or_else(|| Error::Format(format!("checkpoint lacks `{name}`")))?;
        if t.data.len() != len {
            return Err(Error::Format(format!(
                "checkpoint tensor `{name}` has {} values, expected {len}",
                t.data.len()
            )));
        }
        Ok(t.data.iter().map(|&v| T::lit(v as f64)).collect())
    };
    for p in store.params_mut() {
        let base = format!("{prefix}{}", p.name);
        let shape = p.value.shape();
        p.value = Tensor::from_vec(shape, fetch(base.clone(), shape.len())?)?;
        p.moment1 = fetch(format!("{base}.adam_m"), shape.len())?;
        p.moment2 = fetch(format!("{base}.adam_v"), shape.len())?;
    }
    for bn in store.bn_stats_mut() {
        let base = format!("{prefix}{}", bn.name);
        let c = bn.mean.len();
        bn.mean = fetch(format!("{base}.running_mean"), c)?;
        bn.var = fetch(format!("{base}.running_var"), c)?;
        bn.updates = fetch(format!("{base}.updates"), 1)?[0].to_u64().unwrap_or(0);
    }
    let step = fetch(format!("{prefix}step"), 1)?[0];
    store.set_step(step.to_u64().unwrap_or(0));
    Ok(())
}
