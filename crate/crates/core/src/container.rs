//! Little-endian binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   b"CRTNSR\0\0"
//! version   u32       currently 1
//! count     u32       number of tensors
//! per tensor, in declared order:
//!   name_len u32, name (utf-8)
//!   dtype    u8       0 = f64, 1 = f32, 2 = u32, 3 = u8
//!   ndim     u32, dims u64 x ndim
//!   data     dense row-major payload
//! ```
//!
//! Free-form metadata goes into a JSON sidecar next to the binary file
//! (`<file>.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CRTNSR\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U32(Vec<u32>),
    U8(Vec<u8>),
}

impl TensorData {
    fn dtype(&self) -> u8 {
        match self {
            TensorData::F64(_) => 0,
            TensorData::F32(_) => 1,
            TensorData::U32(_) => 2,
            TensorData::U8(_) => 3,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// An ordered collection of named tensors plus JSON metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub tensors: Vec<Tensor>,
    pub meta: Value,
}

impl TensorFile {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            meta: Value::Null,
        }
    }

    pub fn with_meta(meta: Value) -> Self {
        Self {
            tensors: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: TensorData) -> Result<()> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Parameter(format!(
                "tensor {name}: shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Parameter(format!("duplicate tensor name {name}")));
        }
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.push(name, shape, TensorData::F64(data))
    }

    pub fn push_u32(&mut self, name: &str, shape: &[usize], data: Vec<u32>) -> Result<()> {
        self.push(name, shape, TensorData::U32(data))
    }

    pub fn push_u8(&mut self, name: &str, shape: &[usize], data: Vec<u8>) -> Result<()> {
        self.push(name, shape, TensorData::U8(data))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Parameter(format!("missing tensor {name}")))
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let t = self.get(name)?;
        match &t.data {
            TensorData::F64(v) => Ok((&t.shape, v)),
            _ => Err(Error::Parameter(format!("tensor {name} is not f64"))),
        }
    }

    pub fn u32(&self, name: &str) -> Result<(&[usize], &[u32])> {
        let t = self.get(name)?;
        match &t.data {
            TensorData::U32(v) => Ok((&t.shape, v)),
            _ => Err(Error::Parameter(format!("tensor {name} is not u32"))),
        }
    }

    pub fn u8(&self, name: &str) -> Result<(&[usize], &[u8])> {
        let t = self.get(name)?;
        match &t.data {
            TensorData::U8(v) => Ok((&t.shape, v)),
            _ => Err(Error::Parameter(format!("tensor {name} is not u8"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.data.dtype());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::U8(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut file = TensorFile::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(path, "tensor name is not utf-8"))?
                .to_string();
            let dtype = r.take(1)?[0];
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let data = match dtype {
                0 => TensorData::F64(
                    r.take(n * 8)?
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                1 => TensorData::F32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                2 => TensorData::U32(
                    r.take(n * 4)?
                        .chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                ),
                3 => TensorData::U8(r.take(n)?.to_vec()),
                other => return Err(Error::format(path, format!("unknown dtype {other}"))),
            };
            file.push(&name, &shape, data)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes"));
        }
        Ok(file)
    }

    /// Writes the binary file and, when metadata is present, its JSON sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        if !self.meta.is_null() {
            let side = sidecar_path(path);
            let text = serde_json::to_string_pretty(&self.meta)?;
            fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut file = Self::from_bytes(&bytes, path)?;
        let side = sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            file.meta = serde_json::from_str(&text)?;
        }
        Ok(file)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut f = TensorFile::new();
        f.push_f64("a", &[2], vec![1.0, -2.5]).unwrap();
        let b = f.to_bytes();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        // name_len, name, dtype, ndim, dim0, 2 x f64
        assert_eq!(b.len(), 16 + 4 + 1 + 1 + 4 + 8 + 16);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut f = TensorFile::new();
        assert!(f.push_f64("a", &[3], vec![1.0]).is_err());
    }

    #[test]
    fn truncated_input_rejected() {
        let mut f = TensorFile::new();
        f.push_u32("idx", &[3], vec![1, 2, 3]).unwrap();
        let b = f.to_bytes();
        assert!(TensorFile::from_bytes(&b[..b.len() - 1], Path::new("x")).is_err());
    }

    #[test]
    fn sidecar_written() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        let mut f = TensorFile::with_meta(serde_json::json!({"widths": [7, 1]}));
        f.push_u8("m", &[1], vec![9]).unwrap();
        f.write(&p).unwrap();
        let g = TensorFile::read(&p).unwrap();
        assert_eq!(f, g);
    }

    proptest! {
        #[test]
        fn roundtrip(a in proptest::collection::vec(-1e6f64..1e6, 0..40),
                     b in proptest::collection::vec(any::<u32>(), 0..40)) {
            let mut f = TensorFile::new();
            f.push_f64("a", &[a.len()], a.clone()).unwrap();
            f.push_u32("b", &[1, b.len()], b.clone()).unwrap();
            let g = TensorFile::from_bytes(&f.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(f, g);
        }
    }
}
