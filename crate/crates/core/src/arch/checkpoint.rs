//! `.fckpt` files.
//!
//! Layout: `FRENETCK1\n`; a parameter section; a moment section whose names
//! carry `adam.m.` / `adam.v.` prefixes; a trailer. A section is a u32 count
//! followed by records of name length (u32), UTF-8 name, rank (u32), dims
//! (u32 each) and f32 values. The trailer holds the step (u64), the SHA-256
//! config digest (32 bytes) and the canonical config text (u32 length, UTF-8).
//! Integers and floats are little-endian.

use std::collections::HashSet;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{build_frenet, Frenet, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{ften, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 10] = b"FRENETCK1\n";

/// Serialized network state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: Vec<(String, Tensor)>,
    pub moments: Vec<(String, Tensor)>,
    pub step: u64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::format(".fckpt", msg)
}

fn write_section(out: &mut impl Write, records: &[(String, Tensor)]) -> Result<()> {
    out.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        out.write_all(&ften::payload(t))?;
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string(input: &mut impl Read, max: usize) -> Result<String> {
    let n = read_u32(input)? as usize;
    if n > max {
        return Err(bad(format!("string length {n} exceeds {max}")));
    }
    let mut buf = vec![0u8; n];
    input.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| bad("name is not UTF-8"))
}

fn read_section(input: &mut impl Read) -> Result<Vec<(String, Tensor)>> {
    let count = read_u32(input)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = read_string(input, 4096)?;
        let rank = read_u32(input)? as usize;
        if rank == 0 || rank > 8 {
            return Err(bad(format!("{name}: unsupported rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u32(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| bad(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

impl Checkpoint {
    pub fn from_network(net: &Frenet, moments: Vec<(String, Tensor)>, step: u64) -> Self {
        Self {
            config: net.cfg.clone(),
            params: net.params.iter().map(|p| (p.name.clone(), (*p.value).clone())).collect(),
            moments,
            step,
        }
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        write_section(out, &self.params)?;
        write_section(out, &self.moments)?;
        out.write_all(&self.step.to_le_bytes())?;
        out.write_all(&self.config.digest())?;
        let text = self.config.to_text();
        out.write_all(&(text.len() as u32).to_le_bytes())?;
        out.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 10];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let params = read_section(input)?;
        let moments = read_section(input)?;
        if let Some((n, _)) = moments
            .iter()
            .find(|(n, _)| !(n.starts_with("adam.m.") || n.starts_with("adam.v.")))
        {
            return Err(bad(format!("moment record {n} lacks an adam.m./adam.v. prefix")));
        }
        let mut step = [0u8; 8];
        input.read_exact(&mut step)?;
        let mut digest = [0u8; 32];
        input.read_exact(&mut digest)?;
        let text = read_string(input, 1 << 20)?;
        let config = NetworkConfig::from_text(&text)?;
        if config.digest() != digest {
            return Err(bad("config digest does not match the stored config"));
        }
        Ok(Self {
            config,
            params,
            moments,
            step: u64::from_le_bytes(step),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(fs::File::open(path)?))
    }

    /// Rebuilds the network and installs the stored parameters.
    pub fn to_network(&self) -> Result<Frenet> {
        let mut net = build_frenet::<f32>(&self.config, 0)?;
        let stored: HashSet<&str> = self.params.iter().map(|(n, _)| n.as_str()).collect();
        if let Some(p) = net.params.iter().find(|p| !stored.contains(p.name.as_str())) {
            return Err(bad(format!("missing parameter {}", p.name)));
        }
        if stored.len() != self.params.len() {
            return Err(bad("duplicate parameter names"));
        }
        for (name, t) in &self.params {
            net.params.set(name, t.clone()).map_err(|e| bad(e.to_string()))?;
        }
        Ok(net)
    }
}
