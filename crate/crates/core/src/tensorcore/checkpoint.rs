//! Binary parameter container.
//!
//! Layout (little-endian): magic `MKCKPT01`, version `u32`, float width `u32`
//! (32 or 64), parameter count `u64`, then per parameter: name length `u32`,
//! UTF-8 name, rank `u32`, dims as `u64`, row-major data.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensorcore::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"MKCKPT01";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FloatWidth {
    F32,
    #[default]
    F64,
}

impl FloatWidth {
    fn bits(self) -> u32 {
        match self {
            FloatWidth::F32 => 32,
            FloatWidth::F64 => 64,
        }
    }
}

pub fn write_params<W: Write>(mut w: W, store: &ParamStore, width: FloatWidth) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&width.bits().to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match width {
            FloatWidth::F64 => t.data().iter().try_for_each(|v| w.write_all(&v.to_le_bytes()))?,
            FloatWidth::F32 => t
                .data()
                .iter()
                .try_for_each(|&v| w.write_all(&(v as f32).to_le_bytes()))?,
        }
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore> {
    if &take::<8, _>(&mut r)? != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let width = match u32::from_le_bytes(take(&mut r)?) {
        32 => FloatWidth::F32,
        64 => FloatWidth::F64,
        other => return Err(Error::format("checkpoint", format!("float width {other}"))),
    };
    let count = u64::from_le_bytes(take(&mut r)?);
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::format("checkpoint", format!("parameter name: {e}")))?;
        let rank = u32::from_le_bytes(take(&mut r)?) as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(take(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                Ok(match width {
                    FloatWidth::F64 => f64::from_le_bytes(take(&mut r)?),
                    FloatWidth::F32 => f64::from(f32::from_le_bytes(take(&mut r)?)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ParamStore::new();
        s.add("emb", Tensor::uniform(&[5, 3], 0.08, &mut rng)).unwrap();
        s.add("bias", Tensor::uniform(&[5], 0.08, &mut rng)).unwrap();
        s
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let s = sample_store();
        let mut buf = Vec::new();
        write_params(&mut buf, &s, FloatWidth::F64).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(read_params(&buf[..]).unwrap(), s);
    }

    #[test]
    fn f32_storage_is_close() {
        let s = sample_store();
        let mut buf = Vec::new();
        write_params(&mut buf, &s, FloatWidth::F32).unwrap();
        let back = read_params(&buf[..]).unwrap();
        for ((_, _, a), (_, _, b)) in s.iter().zip(back.iter()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn truncated_file_is_an_error() {
        let s = sample_store();
        let mut buf = Vec::new();
        write_params(&mut buf, &s, FloatWidth::F64).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_params(&buf[..]).is_err());
        assert!(read_params(&b"NOTACKPT"[..]).is_err());
    }
}
