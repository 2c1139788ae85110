//! Flat named-tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"NTAR"
//! u32    format version (1)
//! u32    tensor count
//! repeat count times, in ascending name order:
//!   u32        name length in bytes
//!   [u8]       UTF-8 name
//!   u32        rank
//!   [u64]      dims, outermost first
//!   [f32]      row-major values
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NTAR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Archive(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f32) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    pub tensors: BTreeMap<String, NamedTensor>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: NamedTensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&NamedTensor> {
        self.get(name)
            .ok_or_else(|| Error::Archive(format!("missing tensor {name}")))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        Self::read_from(&mut r)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Archive(format!("truncated archive: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(Error::Archive("bad magic".into()));
        }
        let version = read_u32(r).map_err(bad)?;
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported version {version}")));
        }
        let count = read_u32(r).map_err(bad)? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u32(r).map_err(bad)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(bad)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Archive("tensor name is not utf-8".into()))?;
            let rank = read_u32(r).map_err(bad)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(bad)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(bad)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, NamedTensor { shape, data });
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut a = TensorArchive::new();
        a.insert("w", NamedTensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap());
        let b = a.to_bytes();
        assert_eq!(&b[0..4], b"NTAR");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        // name
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(b[16], b'w');
        assert_eq!(u32::from_le_bytes(b[17..21].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[21..29].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(b[29..37].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[37..41].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(b[41..45].try_into().unwrap()), -2.0);
        assert_eq!(b.len(), 45);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let mut a = TensorArchive::new();
        a.insert("x", NamedTensor::scalar(3.0));
        let b = a.to_bytes();
        assert!(TensorArchive::from_bytes(&b[..b.len() - 1]).is_err());
        let mut c = b.clone();
        c[0] = b'X';
        assert!(TensorArchive::from_bytes(&c).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(NamedTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            entries in proptest::collection::btree_map(
                "[a-z.]{1,12}",
                (1usize..4, 1usize..4).prop_flat_map(|(r, c)| {
                    (Just(vec![r, c]), proptest::collection::vec(any::<f32>(), r * c))
                }),
                0..6,
            )
        ) {
            let mut a = TensorArchive::new();
            for (k, (shape, data)) in entries {
                a.insert(k, NamedTensor::new(shape, data).unwrap());
            }
            let back = TensorArchive::from_bytes(&a.to_bytes()).unwrap();
            prop_assert_eq!(a.len(), back.len());
            for (k, t) in &a.tensors {
                let u = back.get(k).unwrap();
                prop_assert_eq!(&t.shape, &u.shape);
                let lhs: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
                let rhs: Vec<u32> = u.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(lhs, rhs);
            }
        }
    }
}
