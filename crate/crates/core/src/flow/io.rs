//! Flow weight files.
//!
//! Layout, all integers and reals little-endian:
//! magic (8 bytes), version u32, dim u32, n_stacks u32, n_hidden u32,
//! hidden block dims u32 × n_hidden, n_params u64, parameters f64 × n_params.

use super::{BnafFlow, FlowConfig};
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const FLOW_MAGIC: [u8; 8] = *b"BNAFLOW\0";
pub const FLOW_VERSION: u32 = 1;

pub fn write_weights<W: Write>(flow: &BnafFlow, mut out: W) -> std::io::Result<()> {
    let cfg = flow.config();
    out.write_all(&FLOW_MAGIC)?;
    out.write_all(&FLOW_VERSION.to_le_bytes())?;
    out.write_all(&(flow.dim() as u32).to_le_bytes())?;
    out.write_all(&(cfg.n_stacks as u32).to_le_bytes())?;
    out.write_all(&(cfg.hidden_block_dims.len() as u32).to_le_bytes())?;
    for &h in &cfg.hidden_block_dims {
        out.write_all(&(h as u32).to_le_bytes())?;
    }
    out.write_all(&(flow.n_params() as u64).to_le_bytes())?;
    for p in flow.flow_params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_weights<R: Read>(mut input: R) -> Result<BnafFlow> {
    let mut magic = [0u8; 8];
    read_exact(&mut input, &mut magic)?;
    if magic != FLOW_MAGIC {
        return Err(Error::FlowFormat("bad magic bytes".into()));
    }
    let version = read_u32(&mut input)?;
    if version != FLOW_VERSION {
        return Err(Error::FlowFormat(format!("unsupported version {version}")));
    }
    let dim = read_u32(&mut input)? as usize;
    let n_stacks = read_u32(&mut input)? as usize;
    let n_hidden = read_u32(&mut input)? as usize;
    if n_hidden > 64 {
        return Err(Error::FlowFormat(format!("{n_hidden} hidden layers")));
    }
    let hidden = (0..n_hidden)
        .map(|_| read_u32(&mut input).map(|h| h as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut buf = [0u8; 8];
    read_exact(&mut input, &mut buf)?;
    let n_params = u64::from_le_bytes(buf) as usize;
    let config = FlowConfig::new(n_stacks, hidden);
    let expected = BnafFlow::zeros(dim, config.clone())
        .map_err(|e| Error::FlowFormat(e.to_string()))?
        .n_params();
    if n_params != expected {
        return Err(Error::FlowFormat(format!(
            "header declares {n_params} parameters, architecture needs {expected}"
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        read_exact(&mut input, &mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    if input.read(&mut buf).map_err(io_err)? != 0 {
        return Err(Error::FlowFormat("trailing bytes".into()));
    }
    BnafFlow::from_params(dim, config, params).map_err(|e| Error::FlowFormat(e.to_string()))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(io_err)
}

fn io_err(e: std::io::Error) -> Error {
    Error::FlowFormat(e.to_string())
}
