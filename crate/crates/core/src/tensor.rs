//! FTNS: the little-endian f32 tensor file format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "FTNS" (0x46 0x54 0x4E 0x53)
//! 4       4           u32 version = 1
//! 8       4           u32 rank
//! 12      4*rank      u32 dims
//! ...     4*prod(dims) f32 values, row-major (last dim fastest)
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FTNS";
pub const VERSION: u32 = 1;

/// Dense f32 tensor with explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn encode(&self, out: &mut impl Write) -> std::io::Result<()> {
        write_raw(out, &self.dims, &self.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        self.encode(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Parse one tensor from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Tensor, usize)> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::BadMagic(format!("found bytes {magic:02x?}")));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::BadVersion {
                format: "FTNS",
                version,
            });
        }
        let rank = r.u32("rank")? as usize;
        let mut raw_dims = Vec::with_capacity(rank.min(64));
        for _ in 0..rank {
            raw_dims.push(r.u32("dims")? as u64);
        }
        let count = raw_dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= usize::MAX as u64))
            .ok_or_else(|| Error::DimOverflow(raw_dims.clone()))?;
        let payload = r.take(count as usize * 4, "values")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let dims = raw_dims.into_iter().map(|d| d as usize).collect();
        Ok((Tensor { dims, data }, r.pos))
    }

    pub fn read(path: &Path) -> Result<Tensor> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (t, used) = Tensor::decode(&bytes).map_err(|e| match e {
            Error::BadMagic(m) => Error::BadMagic(format!("{}: {m}", path.display())),
            Error::Truncated(m) => Error::Truncated(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if used != bytes.len() {
            return Err(Error::Shape(format!(
                "{}: {} trailing bytes after tensor payload",
                path.display(),
                bytes.len() - used
            )));
        }
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn write_raw(out: &mut impl Write, dims: &[usize], data: &[f32]) -> std::io::Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| std::io::Error::other("dimension exceeds u32"))?;
        out.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Truncated(format!(
                    "need {n} bytes for {what} at offset {}, {} available",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..4], &[0x46, 0x54, 0x4E, 0x53]);
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[16..20], &1u32.to_le_bytes());
        assert_eq!(&b[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&b[24..28], &(-2.5f32).to_le_bytes());
        assert_eq!(b.len(), 28);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut b = Tensor::new(vec![1], vec![0.0]).unwrap().to_bytes();
        b[0] = b'X';
        let err = Tensor::decode(&b).unwrap_err();
        assert!(err.to_string().contains("not an FTNS tensor"));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let b = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().to_bytes();
        assert!(matches!(Tensor::decode(&b[..b.len() - 1]), Err(Error::Truncated(_))));
        assert!(matches!(Tensor::decode(&b[..6]), Err(Error::Truncated(_))));
    }

    #[test]
    fn huge_dims_overflow_cleanly() {
        let mut b = Vec::new();
        b.extend_from_slice(b"FTNS");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&3u32.to_le_bytes());
        for _ in 0..3 {
            b.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(Tensor::decode(&b), Err(Error::DimOverflow(_))));
    }

    #[test]
    fn bad_version_is_rejected() {
        let mut b = Tensor::new(vec![1], vec![0.0]).unwrap().to_bytes();
        b[4] = 2;
        assert!(matches!(Tensor::decode(&b), Err(Error::BadVersion { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity_on_bytes(
            dims in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let mut rng = crate::rng::SplitMix64::new(seed);
            let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let bytes = t.to_bytes();
            let (back, used) = Tensor::decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
