//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"VFCK" u16 version u16 tag_len tag[utf8] u16 n_networks
//! per network:
//!   u8 input_rank, u32 dims[input_rank], u16 n_layers,
//!   per layer: u8 kind, u32 fields[5]
//!   u64 n_params, f32 params[n_params]
//! ```

use std::io::{Read, Write};

use super::{LayerSpec, Network, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VFCK";
const VERSION: u16 = 1;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn encode_layer(l: &LayerSpec) -> (u8, [u32; 5]) {
    match *l {
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        } => (0, [in_ch as u32, out_ch as u32, kernel as u32, stride as u32, padding as u32]),
        LayerSpec::MaxPool { size } => (1, [size as u32, 0, 0, 0, 0]),
        LayerSpec::Relu => (2, [0; 5]),
        LayerSpec::Flatten => (3, [0; 5]),
        LayerSpec::Dense { inputs, outputs } => (4, [inputs as u32, outputs as u32, 0, 0, 0]),
        LayerSpec::SoftmaxCrossEntropy { classes } => (5, [classes as u32, 0, 0, 0, 0]),
    }
}

fn decode_layer(kind: u8, f: [u32; 5]) -> Result<LayerSpec> {
    let f = f.map(|v| v as usize);
    Ok(match kind {
        0 => LayerSpec::Conv2d {
            in_ch: f[0],
            out_ch: f[1],
            kernel: f[2],
            stride: f[3],
            padding: f[4],
        },
        1 => LayerSpec::MaxPool { size: f[0] },
        2 => LayerSpec::Relu,
        3 => LayerSpec::Flatten,
        4 => LayerSpec::Dense {
            inputs: f[0],
            outputs: f[1],
        },
        5 => LayerSpec::SoftmaxCrossEntropy { classes: f[0] },
        k => return Err(fmt_err(format!("unknown layer kind {k}"))),
    })
}

/// Serializes a tagged group of networks.
pub fn write_checkpoint<W: Write>(mut w: W, tag: &str, nets: &[&Network<f32>]) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tag.len() as u16).to_le_bytes())?;
    w.write_all(tag.as_bytes())?;
    w.write_all(&(nets.len() as u16).to_le_bytes())?;
    for net in nets {
        w.write_all(&[net.input_shape().len() as u8])?;
        for &d in net.input_shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&(net.layers().len() as u16).to_le_bytes())?;
        for l in net.layers() {
            let (kind, fields) = encode_layer(l);
            w.write_all(&[kind])?;
            for v in fields {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(net.param_count() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(4 * net.param_count());
        for v in net.params().as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| fmt_err(format!("truncated checkpoint: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
}

/// Parses a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint<R: Read>(r: R) -> Result<(String, Vec<Network<f32>>)> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(fmt_err("not a checkpoint (bad magic)"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported checkpoint version {version}")));
    }
    let tag_len = r.u16()? as usize;
    let mut tag = vec![0u8; tag_len];
    r.inner
        .read_exact(&mut tag)
        .map_err(|e| fmt_err(format!("truncated checkpoint: {e}")))?;
    let tag = String::from_utf8(tag).map_err(|_| fmt_err("checkpoint tag is not UTF-8"))?;
    let n = r.u16()?;
    let mut nets = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let rank = r.u8()? as usize;
        let input = (0..rank).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n_layers = r.u16()?;
        let mut layers = Vec::with_capacity(n_layers as usize);
        for _ in 0..n_layers {
            let kind = r.u8()?;
            let mut f = [0u32; 5];
            for v in &mut f {
                *v = r.u32()?;
            }
            layers.push(decode_layer(kind, f)?);
        }
        let mut net = Network::<f32>::new(input, layers).map_err(|e| fmt_err(e.to_string()))?;
        let count = r.u64()? as usize;
        if count != net.param_count() {
            return Err(fmt_err(format!(
                "checkpoint stores {count} parameters, architecture needs {}",
                net.param_count()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f32::from_le_bytes(r.bytes()?));
        }
        net.set_params(ParamVector(params))?;
        nets.push(net);
    }
    Ok((tag, nets))
}
