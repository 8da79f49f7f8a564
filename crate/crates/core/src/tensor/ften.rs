//! `.ften` tensor files: `FTEN1\n`, rank (u32 LE), dims (u32 LE each),
//! then the values as f32 LE.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"FTEN1\n";

pub fn write_to<T: Real>(t: &Tensor<T>, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    out.write_all(&payload(t))?;
    Ok(())
}

/// The raw f32 LE bytes of a tensor.
pub fn payload<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    buf
}

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    write_to(t, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

pub fn read_from<T: Real>(input: &mut impl Read) -> Result<Tensor<T>> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(".ften", "bad magic"));
    }
    let rank = read_u32(input)? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::format(".ften", format!("unsupported rank {rank}")));
    }
    let shape = (0..rank)
        .map(|_| read_u32(input).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|b| T::c(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect();
    Tensor::new(&shape, data).map_err(|e| Error::format(".ften", e.to_string()))
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    read_from(&mut &bytes[..])
}

pub fn save<T: Real>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&fs::read(path)?)
}

pub(crate) fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
