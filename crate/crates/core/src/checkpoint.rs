//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MEFE" | version: u32 | config_len: u32 | config (UTF-8 key = value text)
//! seed: u64 | step: u64 | tensor_count: u32
//! per tensor: name_len: u16 | name | dtype: u8 | ndim: u8 | dims: u32 * ndim | data
//! ```
//!
//! `dtype` is 0 for f32 and 1 for f64; data is row-major.

use crate::error::{Error, Result};
use crate::export::atomic_write;
use crate::nn::{DType, ParamStore, Scalar};
use ndarray::{ArrayD, IxDyn};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"MEFE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl Tensor {
    pub fn from_array<F: Scalar>(name: impl Into<String>, a: &ArrayD<F>) -> Self {
        let mut data = Vec::new();
        let values: Vec<F> = a.iter().copied().collect();
        F::write_le(&values, &mut data);
        Tensor {
            name: name.into(),
            dtype: F::DTYPE,
            shape: a.shape().to_vec(),
            data,
        }
    }

    pub fn to_array<F: Scalar>(&self) -> Result<ArrayD<F>> {
        if self.dtype != F::DTYPE {
            return Err(Error::Checkpoint(format!(
                "tensor {} holds {:?}, requested {:?}",
                self.name,
                self.dtype,
                F::DTYPE
            )));
        }
        ArrayD::from_shape_vec(IxDyn(&self.shape), F::read_le(&self.data))
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config: String,
    pub seed: u64,
    pub step: u64,
    pub tensors: Vec<Tensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
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

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Adds every parameter of `store` as `prefix/name`.
    pub fn push_store<F: Scalar>(&mut self, prefix: &str, store: &ParamStore<F>) {
        for p in store.params() {
            self.tensors
                .push(Tensor::from_array(format!("{prefix}/{}", p.name), &p.value));
        }
    }

    /// Adds arrays aligned with `store`'s parameters as `prefix/name`.
    pub fn push_aligned<F: Scalar>(&mut self, prefix: &str, store: &ParamStore<F>, arrays: &[ArrayD<F>]) {
        for (p, a) in store.params().iter().zip(arrays) {
            self.tensors.push(Tensor::from_array(format!("{prefix}/{}", p.name), a));
        }
    }

    /// Reads `prefix/name` for every parameter of `layout`, checking shapes.
    pub fn read_aligned<F: Scalar>(&self, prefix: &str, layout: &ParamStore<F>) -> Result<Vec<ArrayD<F>>> {
        layout
            .params()
            .iter()
            .map(|p| {
                let name = format!("{prefix}/{}", p.name);
                let t = self
                    .tensor(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if t.shape != p.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.shape,
                        p.value.shape()
                    )));
                }
                t.to_array()
            })
            .collect()
    }

    /// Overwrites the values of `store` from `prefix/*`.
    pub fn read_store<F: Scalar>(&self, prefix: &str, store: &mut ParamStore<F>) -> Result<()> {
        let arrays = self.read_aligned(prefix, store)?;
        for (p, a) in store.params_mut().iter_mut().zip(arrays) {
            p.value = a;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dtype.code());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u32()? as usize;
        let config = r.string(n)?;
        let seed = r.u64()?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = r.string(n)?;
            let code = r.u8()?;
            let dtype = DType::from_code(code)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name}: unknown dtype {code}")))?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().product::<usize>() * dtype.size();
            let data = r.take(len)?.to_vec();
            tensors.push(Tensor {
                name,
                dtype,
                shape,
                data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint {
            config,
            seed,
            step,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut s = ParamStore::<f32>::new();
        s.push("w", ArrayD::from_shape_fn(IxDyn(&[2, 3]), |i| (i[0] * 3 + i[1]) as f32), true, true);
        s.push("b", ArrayD::from_elem(IxDyn(&[3]), -0.5), true, false);
        let mut c = Checkpoint {
            config: "seed = 3\n".into(),
            seed: 3,
            step: 17,
            tensors: vec![],
        };
        c.push_store("student", &s);
        c.tensors.push(Tensor::from_array("extra", &ArrayD::<f64>::zeros(IxDyn(&[0]))));
        c
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"MEFE");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn store_restore_checks_dtype_and_shape() {
        let c = sample();
        let mut s = ParamStore::<f32>::new();
        s.push("w", ArrayD::zeros(IxDyn(&[2, 3])), true, true);
        s.push("b", ArrayD::zeros(IxDyn(&[3])), true, false);
        c.read_store("student", &mut s).unwrap();
        assert_eq!(s.params()[0].value[[1, 2]], 5.0);
        let mut wrong = ParamStore::<f64>::new();
        wrong.push("w", ArrayD::zeros(IxDyn(&[2, 3])), true, true);
        assert!(c.read_store("student", &mut wrong).is_err());
        let mut shape = ParamStore::<f32>::new();
        shape.push("w", ArrayD::zeros(IxDyn(&[3, 2])), true, true);
        assert!(c.read_store("student", &mut shape).is_err());
    }
}
