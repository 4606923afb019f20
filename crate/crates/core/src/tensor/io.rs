//! `MSCT` tensor files.
//!
//! Layout: the magic bytes `MSCT`, a little-endian `u32` rank, `rank`
//! little-endian `u32` dimensions, then the values as little-endian IEEE-754
//! `f32` in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;

use super::{Dims4, Tensor4};

pub const MAGIC: &[u8; 4] = b"MSCT";

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl RawTensor {
    pub fn from_real<T: Real>(dims: Vec<usize>, values: &[T]) -> Self {
        RawTensor {
            dims,
            values: values.iter().map(|v| v.as_f64() as f32).collect(),
        }
    }

    pub fn to_real<T: Real>(&self) -> Vec<T> {
        self.values.iter().map(|&v| T::lit(v as f64)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err("bad magic".into());
        }
        let word = |i: usize| -> std::result::Result<u32, String> {
            bytes
                .get(i..i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| "truncated header".to_string())
        };
        let rank = word(4)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            dims.push(word(8 + 4 * i)? as usize);
        }
        let header = 8 + 4 * rank;
        let count: usize = dims.iter().product();
        if bytes.len() != header + 4 * count {
            return Err(format!(
                "expected {count} values, found {} payload bytes",
                bytes.len() - header
            ));
        }
        let values = bytes[header..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(RawTensor { dims, values })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        RawTensor::decode(&bytes).map_err(|detail| Error::Format {
            path: path.to_path_buf(),
            detail,
        })
    }
}

pub fn write_tensor4<T: Real>(path: &Path, t: &Tensor4<T>) -> Result<()> {
    let d = t.dims();
    RawTensor::from_real(vec![d.n, d.h, d.w, d.c], t.data()).write(path)
}

pub fn read_tensor4<T: Real>(path: &Path) -> Result<Tensor4<T>> {
    let raw = RawTensor::read(path)?;
    if raw.dims.len() != 4 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("expected rank 4, found rank {}", raw.dims.len()),
        });
    }
    let d = &raw.dims;
    Tensor4::new(Dims4::new(d[0], d[1], d[2], d[3]), raw.to_real())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let raw = RawTensor {
            dims: vec![2, 1],
            values: vec![1.0, -2.5],
        };
        let b = raw.encode();
        assert_eq!(&b[..4], b"MSCT");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn rejects_bad_magic_and_length() {
        let mut b = RawTensor {
            dims: vec![3],
            values: vec![0.0; 3],
        }
        .encode();
        assert!(RawTensor::decode(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(RawTensor::decode(&b).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.msct");
        let t = Tensor4::from_fn(Dims4::new(2, 3, 2, 2), |n, y, x, c| {
            (n * 100 + y * 10 + x) as f64 + c as f64 * 0.5
        });
        write_tensor4(&p, &t).unwrap();
        assert_eq!(read_tensor4::<f64>(&p).unwrap(), t);
    }

    proptest! {
        #[test]
        fn encode_decode(dims in prop::collection::vec(1usize..4, 0..4), seed in any::<u32>()) {
            let count: usize = dims.iter().product();
            let values: Vec<f32> = (0..count).map(|i| (i as f32 + seed as f32) * 0.37).collect();
            let raw = RawTensor { dims, values };
            prop_assert_eq!(RawTensor::decode(&raw.encode()).unwrap(), raw);
        }
    }
}
