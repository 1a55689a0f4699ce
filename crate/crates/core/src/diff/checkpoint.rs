//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CFNF"            4 bytes magic
//! version           u32
//! repeated until EOF:
//!   name_len        u64
//!   name            UTF-8 bytes
//!   rank            u64
//!   dims            rank x u64
//!   payload         prod(dims) x f64
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamStore;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CFNF";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::corrupt(
                self.path,
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Decode parameters as `(name, tensor)` in file order.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::corrupt(path, "bad magic, not a CFNF checkpoint"));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            what: path.display().to_string(),
            found: version,
            supported: VERSION,
        });
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u64("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::corrupt(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u64("rank")? as usize;
        if rank > 8 {
            return Err(Error::corrupt(
                path,
                format!("implausible rank {rank} for `{name}`"),
            ));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dims")? as usize);
        }
        let count: usize = dims.iter().product();
        let payload = r.take(count * 8, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    Ok(out)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

/// Load values into an existing store with the same architecture.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = decode(&bytes, path)?;
    if records.len() != store.len() {
        return Err(Error::corrupt(
            path,
            format!(
                "{} parameters in file, model has {}",
                records.len(),
                store.len()
            ),
        ));
    }
    for (name, t) in records {
        store
            .set(&name, t)
            .map_err(|e| Error::corrupt(path, e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "layer.w",
            Tensor::matrix(2, 2, vec![1.0, -0.0, 1e-300, f64::MAX]).unwrap(),
            true,
        );
        s.add("prior.mu", Tensor::row(&[0.1, 0.2, 0.3, 0.4]), false);
        s
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"CFNF");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 7);
        assert_eq!(&bytes[16..23], b"layer.w");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let store = sample();
        let back = decode(&encode(&store), Path::new("mem")).unwrap();
        for ((name, t), (_, n2, t2)) in back.iter().zip(store.iter()) {
            assert_eq!(name, n2);
            assert_eq!(t.shape(), t2.shape());
            for (a, b) in t.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn truncation_and_version_are_detected() {
        let bytes = encode(&sample());
        let err = decode(&bytes[..bytes.len() - 3], Path::new("x.ckpt")).unwrap_err();
        assert!(err.to_string().contains("x.ckpt"), "{err}");
        let mut bumped = bytes.clone();
        bumped[4] = 9;
        assert!(matches!(
            decode(&bumped, Path::new("x")),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
    }
}
