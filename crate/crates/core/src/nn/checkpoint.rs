//! Binary parameter checkpoints.
//!
//! Layout (all little-endian): the 5-byte magic `FROM1`, the layer count as `u32`,
//! then `input_width`, `output_width` and activation code as `u32` for each layer,
//! followed by the flat parameter vector as `f64` values in layout order.
//!
//! Multi-network files start with a `u32` network count and then hold that many
//! single-network records back to back.

use std::io::{Read, Write};

use super::{unflatten, Activation, LayerSpec, Network, ParamVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"FROM1";

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        reason: reason.into(),
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_width<R: Read>(r: &mut R) -> Result<usize> {
    let w = read_u32(r)? as usize;
    if w == 0 {
        return Err(format_err("zero layer width"));
    }
    Ok(w)
}

pub fn write_checkpoint<W: Write>(mut w: W, net: &Network) -> Result<()> {
    w.write_all(MAGIC)?;
    let specs = net.specs();
    let count = u32::try_from(specs.len()).map_err(|_| format_err("too many layers"))?;
    w.write_all(&count.to_le_bytes())?;
    for s in &specs {
        for v in [s.input_width, s.output_width] {
            let v = u32::try_from(v).map_err(|_| format_err("layer width exceeds u32"))?;
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&s.activation.code().to_le_bytes())?;
    }
    for v in net.flatten().as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(format_err("bad magic"));
    }
    let count = read_u32(&mut r)? as usize;
    let mut specs = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let input = read_width(&mut r)?;
        let output = read_width(&mut r)?;
        let code = read_u32(&mut r)?;
        let activation =
            Activation::from_code(code).ok_or_else(|| format_err(format!("activation code {code}")))?;
        specs.push(LayerSpec::new(input, output, activation));
    }
    let n = crate::nn::param_count(&specs);
    let mut values = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(format_err("non-finite parameter"));
    }
    unflatten(&ParamVector::new(values), &specs).map_err(|e| format_err(e.to_string()))
}

pub fn write_checkpoints<W: Write>(mut w: W, nets: &[&Network]) -> Result<()> {
    let count = u32::try_from(nets.len()).map_err(|_| format_err("too many networks"))?;
    w.write_all(&count.to_le_bytes())?;
    for net in nets {
        write_checkpoint(&mut w, net)?;
    }
    Ok(())
}

pub fn read_checkpoints<R: Read>(mut r: R) -> Result<Vec<Network>> {
    let count = read_u32(&mut r)?;
    (0..count).map(|_| read_checkpoint(&mut r)).collect()
}
