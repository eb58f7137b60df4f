//! Binary checkpoint: `"CKPT"`, a version byte, the named parameter list
//! with `f32` little-endian values, then optional Adam state.
//!
//! ```text
//! "CKPT" | u8 version | u32 count
//! count x ( u32 name_len | name | u32 ndim | ndim x u32 | f32 values )
//! u8 has_optimizer
//! [ u64 step | f64 lr, beta1, beta2, eps | per param: f64 m[], f64 v[] ]
//! ```

use std::io::Read;
use std::path::Path;

use super::{Adam, ParamStore, Real, Tensor, TensorError};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore<f32>,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn new<T: Real>(params: &ParamStore<T>, optimizer: Option<&Adam>) -> Self {
        Self { params: params.cast(), optimizer: optimizer.cloned() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.push(CKPT_VERSION);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        match &self.optimizer {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                out.extend_from_slice(&adam.step_count().to_le_bytes());
                for v in [adam.lr, adam.beta1, adam.beta2, adam.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                let (m, v) = adam.moments();
                for (mi, vi) in m.iter().zip(v) {
                    mi.iter().chain(vi).for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        let mut r = Reader { bytes };
        if r.take(4)? != CKPT_MAGIC {
            return Err(TensorError::Checkpoint("bad magic".into()));
        }
        let version = r.u8()?;
        if version != CKPT_VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| TensorError::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
            params.add(name, Tensor::from_vec(&shape, data)?);
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let mut first = Vec::with_capacity(count);
                let mut second = Vec::with_capacity(count);
                for id in params.ids() {
                    let n = params.get(id).len();
                    first.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?);
                    second.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?);
                }
                Some(Adam::from_parts(lr, beta1, beta2, eps, step, first, second))
            }
            other => return Err(TensorError::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if !r.bytes.is_empty() {
            return Err(TensorError::Checkpoint(format!("{} trailing bytes", r.bytes.len())));
        }
        Ok(Self { params, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        std::fs::write(path, self.encode()).map_err(|e| TensorError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| TensorError::Io(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }

    /// Copies the stored values into `store`, which must have the same layout.
    pub fn restore_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        let cast: ParamStore<T> = self.params.cast();
        store.assert_same_layout(&cast)?;
        *store = cast;
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.bytes.len() < n {
            return Err(TensorError::Checkpoint("truncated".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, TensorError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, TensorError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TensorError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
