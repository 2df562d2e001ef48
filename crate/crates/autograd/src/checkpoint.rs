//! Flat binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"TGMR"  u32 version
//! repeated until EOF:
//!   u32 name_len, name bytes (UTF-8)
//!   u32 rank, rank x u64 dims
//!   prod(dims) x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AutogradError, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TGMR";
pub const VERSION: u32 = 1;

pub fn write_params<W: Write>(mut w: W, params: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| AutogradError::Checkpoint(format!("truncated while reading {what}: {e}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads every `(name, tensor)` record of a checkpoint stream.
pub fn read_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(AutogradError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(AutogradError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        match r.read(&mut len[..1])? {
            0 => break,
            _ => read_exact_or(&mut r, &mut len[1..], "name length")?,
        }
        let name_len = u32::from_le_bytes(len) as usize;
        let mut name = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|e| AutogradError::Checkpoint(e.to_string()))?;
        let rank = read_u32(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact_or(&mut r, &mut b, "dims")?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            read_exact_or(&mut r, &mut b, &name)?;
            data.push(f64::from_le_bytes(b));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Overwrites the values of `params` from a checkpoint. Every parameter must
/// be present with a matching shape; extra records are an error.
pub fn load_into<R: Read>(r: R, params: &mut ParamStore) -> Result<()> {
    let records = read_records(r)?;
    if records.len() != params.len() {
        return Err(AutogradError::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            records.len(),
            params.len()
        )));
    }
    for (name, tensor) in records {
        let id = params
            .id(&name)
            .ok_or_else(|| AutogradError::UnknownParameter(name.clone()))?;
        if params.tensor(id).shape() != tensor.shape() {
            return Err(AutogradError::ShapeMismatch {
                op: "checkpoint",
                lhs: params.tensor(id).shape().to_vec(),
                rhs: tensor.shape().to_vec(),
            });
        }
        *params.tensor_mut(id) = tensor;
    }
    Ok(())
}

pub fn save(path: &Path, params: &ParamStore) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_params(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path, params: &mut ParamStore) -> Result<()> {
    let f = std::fs::File::open(path)?;
    load_into(std::io::BufReader::new(f), params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore {
        let mut s = ParamStore::new();
        s.register("a", Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.25]).unwrap()).unwrap();
        s.register("b.bias", Tensor::scalar(7.0).unwrap()).unwrap();
        s
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_params(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..4], b"TGMR");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        // first record: name length 1, "a", rank 2, dims 2,2
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(buf[12], b'a');
        assert_eq!(u32::from_le_bytes(buf[13..17].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[17..25].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[33..41].try_into().unwrap()), 1.0);
    }

    #[test]
    fn load_restores_values() {
        let src = sample();
        let mut buf = Vec::new();
        write_params(&mut buf, &src).unwrap();
        let mut dst = sample();
        *dst.tensor_mut(dst.id("a").unwrap()) = Tensor::zeros(&[2, 2]);
        load_into(&buf[..], &mut dst).unwrap();
        assert_eq!(dst.tensor(dst.id("a").unwrap()).data(), &[1.0, -2.0, 3.5, 0.25]);
    }

    #[test]
    fn truncated_stream_is_error() {
        let mut buf = Vec::new();
        write_params(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_records(&buf[..]), Err(AutogradError::Checkpoint(_))));
    }

    #[test]
    fn bad_magic_is_error() {
        assert!(read_records(&b"NOPE\x01\0\0\0"[..]).is_err());
    }
}
