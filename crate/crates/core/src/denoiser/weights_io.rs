//! Binary container for named real arrays.
//!
//! ```text
//! magic    b"DDAW"
//! version  u32 (= 1)
//! count    u32
//! entries  count × { name_len u32, name utf-8, dtype u8 (0 f64, 1 u32),
//!                    ndim u32, dims ndim × u64, offset u64 }
//! payload  arrays at their offsets, little-endian, row-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DDAW";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U32(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Self {
        NamedArray { dims, data: ArrayData::F64(data) }
    }

    pub fn u32(dims: Vec<usize>, data: Vec<u32>) -> Self {
        NamedArray { dims, data: ArrayData::U32(data) }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ArrayData::F64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type ArrayMap = BTreeMap<String, NamedArray>;

pub fn encode(arrays: &ArrayMap) -> Vec<u8> {
    let mut header = Vec::new();
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    let header_len: usize = 12
        + arrays
            .iter()
            .map(|(name, a)| 4 + name.len() + 1 + 4 + 8 * a.dims.len() + 8)
            .sum::<usize>();
    let mut payload = Vec::new();
    for (name, a) in arrays {
        header.extend_from_slice(&(name.len() as u32).to_le_bytes());
        header.extend_from_slice(name.as_bytes());
        header.push(match a.data {
            ArrayData::F64(_) => 0,
            ArrayData::U32(_) => 1,
        });
        header.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
        for &d in &a.dims {
            header.extend_from_slice(&(d as u64).to_le_bytes());
        }
        header.extend_from_slice(&((header_len + payload.len()) as u64).to_le_bytes());
        match &a.data {
            ArrayData::F64(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U32(v) => v.iter().for_each(|x| payload.extend_from_slice(&x.to_le_bytes())),
        }
    }
    debug_assert_eq!(header.len(), header_len);
    header.extend_from_slice(&payload);
    header
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated header"))?;
        let s = &self.buf[self.pos..end];
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

pub fn decode(buf: &[u8], path: &Path) -> Result<ArrayMap> {
    let mut c = Cursor { buf, pos: 0, path };
    if c.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, not a weights file"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = ArrayMap::new();
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::format(path, "array name is not utf-8"))?
            .to_string();
        let dtype = c.take(1)?[0];
        let ndim = c.u32()? as usize;
        let dims = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let offset = c.u64()? as usize;
        let n: usize = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| {
            Error::format(path, format!("array {name}: dims overflow"))
        })?;
        let size = match dtype {
            0 => 8,
            1 => 4,
            other => return Err(Error::format(path, format!("array {name}: unknown dtype {other}"))),
        };
        let end = n.checked_mul(size).and_then(|b| b.checked_add(offset));
        let bytes = match end {
            Some(end) if end <= buf.len() => &buf[offset..end],
            _ => return Err(Error::format(path, format!("truncated: array {name} extends past end of file"))),
        };
        let data = if dtype == 0 {
            let v: Vec<f64> = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::format(path, format!("array {name} contains NaN or Inf")));
            }
            ArrayData::F64(v)
        } else {
            ArrayData::U32(bytes.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect())
        };
        if out.insert(name.clone(), NamedArray { dims, data }).is_some() {
            return Err(Error::format(path, format!("duplicate array {name}")));
        }
    }
    Ok(out)
}

pub fn write_arrays(arrays: &ArrayMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode(arrays)).map_err(|e| Error::io(path, e))
}

pub fn read_arrays(path: &Path) -> Result<ArrayMap> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ArrayMap {
        let mut m = ArrayMap::new();
        m.insert("a/w".into(), NamedArray::f64(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, -0.0, 1e-300]));
        m.insert("a/meta".into(), NamedArray::u32(vec![3], vec![7, 8, 9]));
        m.insert("empty".into(), NamedArray::f64(vec![0], vec![]));
        m
    }

    #[test]
    fn round_trip_bit_exact() {
        let m = sample();
        let bytes = encode(&m);
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), bytes);
        if let ArrayData::F64(v) = &back["a/w"].data {
            assert_eq!(v[4].to_bits(), (-0.0f64).to_bits());
        }
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = encode(&sample());
        for cut in [0, 3, 11, 20, bytes.len() - 1] {
            assert!(decode(&bytes[..cut], Path::new("mem")).is_err(), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, Path::new("mem")).is_err());
        let mut m = sample();
        m.insert("z/nan".into(), NamedArray::f64(vec![1], vec![f64::NAN]));
        let err = decode(&encode(&m), Path::new("mem")).unwrap_err().to_string();
        assert!(err.contains("z/nan"), "{err}");
    }
}
