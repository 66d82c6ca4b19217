//! Little-endian tensor container used for datasets, bases, checkpoints and inverse results.
//!
//! Layout: magic `DIFN`, version `u32`, record count `u32`, then per record a `u16` name
//! length, the UTF-8 name, a dtype byte (0 = f64, 1 = complex128 interleaved), a rank byte,
//! `rank` dimensions as `u64`, and the row-major payload.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"DIFN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn code(&self) -> u8 {
        match self {
            TensorData::F64(_) => 0,
            TensorData::Complex(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    records: Vec<Record>,
}

fn format_err<T>(field: impl Into<String>, detail: impl Into<String>) -> Result<T> {
    Err(Error::Format { field: field.into(), detail: detail.into() })
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: &[usize], data: TensorData) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return format_err("name", "record name longer than 65535 bytes");
        }
        if dims.len() > u8::MAX as usize {
            return format_err(&name, "rank above 255");
        }
        if dims.iter().product::<usize>() != data.len() {
            return format_err(&name, format!("dims {dims:?} do not match {} values", data.len()));
        }
        if self.get(&name).is_some() {
            return format_err(&name, "duplicate record name");
        }
        self.records.push(Record { name, dims: dims.to_vec(), data });
        Ok(())
    }

    pub fn push_f64(&mut self, name: impl Into<String>, dims: &[usize], data: Vec<f64>) -> Result<()> {
        self.push(name, dims, TensorData::F64(data))
    }

    pub fn push_complex(&mut self, name: impl Into<String>, dims: &[usize], data: Vec<Complex64>) -> Result<()> {
        self.push(name, dims, TensorData::Complex(data))
    }

    /// Scalar stored as a rank-0 f64 record.
    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        self.push_f64(name, &[], vec![value])
    }

    pub fn get(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    fn require(&self, name: &str) -> Result<&Record> {
        self.get(name).ok_or_else(|| Error::Format { field: name.into(), detail: "missing record".into() })
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        let r = self.require(name)?;
        match &r.data {
            TensorData::F64(v) => Ok((&r.dims, v)),
            TensorData::Complex(_) => format_err(name, "expected f64 data, found complex128"),
        }
    }

    pub fn complex(&self, name: &str) -> Result<(&[usize], &[Complex64])> {
        let r = self.require(name)?;
        match &r.data {
            TensorData::Complex(v) => Ok((&r.dims, v)),
            TensorData::F64(_) => format_err(name, "expected complex128 data, found f64"),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let (dims, v) = self.f64(name)?;
        if !dims.is_empty() || v.len() != 1 {
            return format_err(name, "expected a scalar");
        }
        Ok(v[0])
    }

    /// f64 record with exactly `len` values.
    pub fn f64_len(&self, name: &str, len: usize) -> Result<&[f64]> {
        let (_, v) = self.f64(name)?;
        if v.len() != len {
            return format_err(name, format!("expected {len} values, found {}", v.len()));
        }
        Ok(v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.code());
            out.push(r.dims.len() as u8);
            for &d in &r.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &r.data {
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::Complex(v) => v.iter().for_each(|z| {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4, "magic")? != MAGIC {
            return format_err("magic", "not a DIFN container");
        }
        let version = rd.u32("version")?;
        if version != VERSION {
            return format_err("version", format!("unsupported version {version}, expected {VERSION}"));
        }
        let count = rd.u32("record count")? as usize;
        let mut c = TensorContainer::new();
        for i in 0..count {
            let field = format!("record {i}");
            let name_len = u16::from_le_bytes(rd.take(2, &field)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(rd.take(name_len, &field)?)
                .map_err(|_| Error::Format { field: field.clone(), detail: "name is not UTF-8".into() })?
                .to_string();
            let code = rd.take(1, &name)?[0];
            let size = match code {
                0 => 8,
                1 => 16,
                _ => return format_err(&name, format!("unknown dtype code {code}")),
            };
            let rank = rd.take(1, &name)?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            let mut total: u64 = 1;
            for _ in 0..rank {
                let d = u64::from_le_bytes(rd.take(8, &name)?.try_into().unwrap());
                total = total.checked_mul(d).ok_or_else(|| Error::Format { field: name.clone(), detail: "dimension overflow".into() })?;
                dims.push(d as usize);
            }
            let bytes_needed = total.checked_mul(size).filter(|&b| b <= rd.remaining() as u64);
            let Some(bytes_needed) = bytes_needed else {
                return format_err(&name, format!("payload of {total} values exceeds the {} remaining bytes", rd.remaining()));
            };
            let payload = rd.take(bytes_needed as usize, &name)?;
            let f = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
            let data = if code == 0 {
                TensorData::F64(payload.chunks_exact(8).map(f).collect())
            } else {
                TensorData::Complex(payload.chunks_exact(16).map(|c| Complex64::new(f(&c[..8]), f(&c[8..]))).collect())
            };
            c.push(name, &dims, data)?;
        }
        if rd.remaining() != 0 {
            return format_err("trailer", format!("{} unexpected bytes after the last record", rd.remaining()));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return format_err(field, "truncated file");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}
