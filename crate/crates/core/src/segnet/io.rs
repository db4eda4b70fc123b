//! Binary parameter files.
//!
//! Layout, all integers `u32` little-endian and values `f64` little-endian:
//! magic `SEGN`, version, then the architecture (in channels, classes,
//! kernel size, stage count, channels per stage, skip flag as one byte,
//! upsample mode as one byte), then the block count followed by each
//! block as `ndim, dims..., values...`. Blocks alternate kernel and bias.

use std::io::{Read, Write};
use std::path::Path;

use super::network::{ArchitectureConfig, ConvParams, NetworkParams, UpsampleMode};
use super::{SegnetError, Tensor4};

const MAGIC: &[u8; 4] = b"SEGN";
pub const PARAMS_FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_params(params: &NetworkParams, out: &mut impl Write) -> Result<(), SegnetError> {
    let a = &params.arch;
    let mut buf = Vec::with_capacity(64 + 8 * params.parameter_count());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, PARAMS_FORMAT_VERSION as usize);
    put_u32(&mut buf, a.in_channels);
    put_u32(&mut buf, a.num_classes);
    put_u32(&mut buf, a.kernel_size);
    put_u32(&mut buf, a.stages());
    for &c in &a.channels {
        put_u32(&mut buf, c);
    }
    buf.push(a.skip_connections as u8);
    buf.push(match a.upsample {
        UpsampleMode::NearestConv => 0,
    });
    put_u32(&mut buf, 2 * params.layers.len());
    for l in &params.layers {
        put_u32(&mut buf, 4);
        for d in l.kernel.shape() {
            put_u32(&mut buf, d);
        }
        buf.extend(l.kernel.data().iter().flat_map(|v| v.to_le_bytes()));
        put_u32(&mut buf, 1);
        put_u32(&mut buf, l.bias.len());
        buf.extend(l.bias.iter().flat_map(|v| v.to_le_bytes()));
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SegnetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| SegnetError::InvalidParamsFile("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, SegnetError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn u8(&mut self) -> Result<u8, SegnetError> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, SegnetError> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| SegnetError::InvalidParamsFile("block too large".into()))?)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn block(&mut self, ndim: usize) -> Result<(Vec<usize>, Vec<f64>), SegnetError> {
        let got = self.u32()?;
        if got != ndim {
            return Err(SegnetError::InvalidParamsFile(format!("expected {ndim}-d block, found {got}-d")));
        }
        let dims = (0..ndim).map(|_| self.u32()).collect::<Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| SegnetError::InvalidParamsFile("block too large".into()))?;
        Ok((dims, self.f64s(n)?))
    }
}

pub fn read_params(input: &mut impl Read) -> Result<NetworkParams, SegnetError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let bad = |m: String| SegnetError::InvalidParamsFile(m);
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(bad("missing SEGN magic".into()));
    }
    let version = c.u32()?;
    if version != PARAMS_FORMAT_VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let in_channels = c.u32()?;
    let num_classes = c.u32()?;
    let kernel_size = c.u32()?;
    let stages = c.u32()?;
    if stages > 16 {
        return Err(bad(format!("{stages} stages")));
    }
    let channels = (0..stages).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
    let skip_connections = match c.u8()? {
        0 => false,
        1 => true,
        v => return Err(bad(format!("skip flag {v}"))),
    };
    let upsample = match c.u8()? {
        0 => UpsampleMode::NearestConv,
        v => return Err(bad(format!("upsample mode {v}"))),
    };
    let arch = ArchitectureConfig { in_channels, channels, kernel_size, upsample, skip_connections, num_classes };
    arch.validate().map_err(|e| bad(e.to_string()))?;
    let shapes = arch.layer_shapes();
    let blocks = c.u32()?;
    if blocks != 2 * shapes.len() {
        return Err(bad(format!("expected {} blocks, found {blocks}", 2 * shapes.len())));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for (o, i, k) in shapes {
        let (dims, data) = c.block(4)?;
        if dims != [o, i, k, k] {
            return Err(bad(format!("kernel block {dims:?} does not match {:?}", [o, i, k, k])));
        }
        let (bdims, bias) = c.block(1)?;
        if bdims != [o] {
            return Err(bad(format!("bias block {bdims:?} does not match [{o}]")));
        }
        if !data.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(SegnetError::NonFinite("parameter file".into()));
        }
        layers.push(ConvParams { kernel: Tensor4::from_vec([o, i, k, k], data)?, bias });
    }
    if c.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    NetworkParams::from_layers(arch, layers)
}

pub fn save_params(params: &NetworkParams, path: &Path) -> Result<(), SegnetError> {
    let mut buf = Vec::new();
    write_params(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<NetworkParams, SegnetError> {
    let mut f = std::fs::File::open(path)?;
    read_params(&mut f)
}
