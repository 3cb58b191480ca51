//! PGCK1 parameter checkpoints.
//!
//! ```text
//! magic  "PGCK1\0"
//! count  u32
//! count × { name_len u32, name utf-8, rank u32, rank × u64 dims, f32 values }
//! ```
//! Everything little-endian, row-major, unpadded.

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const PGCK_MAGIC: &[u8; 6] = b"PGCK1\0";

pub fn write_params<W: Write>(params: &ParamStore<f32>, mut w: W) -> std::io::Result<()> {
    w.write_all(PGCK_MAGIC)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.value.len() * 4);
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated { offset: *offset },
        _ => Error::io("<pgck stream>", e),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, offset: &mut u64) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, offset)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads every parameter, in file order.
pub fn read_params<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let mut offset = 0u64;
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic, &mut offset)?;
    if &magic != PGCK_MAGIC {
        return Err(Error::BadMagic {
            expected: PGCK_MAGIC.to_vec(),
            found: magic.to_vec(),
        });
    }
    let count = read_u32(&mut r, &mut offset)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, &mut offset)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name, &mut offset)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format(format!("parameter name at offset {offset} is not UTF-8")))?;
        let rank = read_u32(&mut r, &mut offset)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b, &mut offset)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        read_exact(&mut r, &mut raw, &mut offset)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.add(name, Tensor::new(shape, data)?)?;
    }
    Ok(store)
}

pub fn save_params(params: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_params(params, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(std::io::BufReader::new(file))
}
