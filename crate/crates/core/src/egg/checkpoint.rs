//! `EGG1` checkpoints: header (magic, l, d, master seed, step) followed by the
//! raw parameter blocks in declaration order. Little endian.

use std::io::{Read, Write};

use super::{EggDims, EggParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EGG1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EggCheckpoint {
    pub params: EggParams,
    pub master_seed: u64,
    pub step: u64,
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_egg_checkpoint<W: Write>(w: &mut W, params: &EggParams, master_seed: u64, step: u64) -> Result<()> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&(params.dims.layers as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&params.dims.log4_dim.to_le_bytes()).map_err(io_err)?;
    w.write_all(&master_seed.to_le_bytes()).map_err(io_err)?;
    w.write_all(&step.to_le_bytes()).map_err(io_err)?;
    for block in params.blocks() {
        let bytes: Vec<u8> = block.iter().map(|&v| v as u8).collect();
        w.write_all(&bytes).map_err(io_err)?;
    }
    Ok(())
}

pub fn read_egg_checkpoint<R: Read>(r: &mut R) -> Result<EggCheckpoint> {
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4).map_err(io_err)?;
    if &b4 != MAGIC {
        return Err(Error::Checkpoint("not an EGG1 checkpoint".into()));
    }
    r.read_exact(&mut b4).map_err(io_err)?;
    let layers = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4).map_err(io_err)?;
    let d = u32::from_le_bytes(b4);
    let dims = EggDims::new(layers, d).map_err(|e| Error::Checkpoint(e.to_string()))?;
    r.read_exact(&mut b8).map_err(io_err)?;
    let master_seed = u64::from_le_bytes(b8);
    r.read_exact(&mut b8).map_err(io_err)?;
    let step = u64::from_le_bytes(b8);
    let mut params = EggParams::zeros(dims)?;
    for block in params.blocks_mut() {
        let mut bytes = vec![0u8; block.len()];
        r.read_exact(&mut bytes).map_err(io_err)?;
        for (dst, b) in block.iter_mut().zip(bytes) {
            *dst = b as i8;
        }
    }
    if !params.in_range() {
        return Err(Error::Checkpoint("checkpoint contains -128".into()));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(io_err)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(EggCheckpoint { params, master_seed, step })
}
