//! MLP1 checkpoints.
//!
//! Layout (little-endian): `"MLP1"`, u32 input width, u32 layer count, then
//! per layer u32 output width, u8 activation, u8 batch-norm flag, f32
//! dropout (plus f32 momentum and f32 epsilon when batch-norm is present).
//! Parameters follow in layer order as f32: weights row-major, bias, and for
//! batch-norm layers gamma, beta, running mean, running variance.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Activation, BatchNorm, Dense, Mlp};
use crate::binio::{dim_u32, put_f32s, put_u32, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MLP1";

pub fn write_mlp(net: &Mlp) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + 4 * net.n_params());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, dim_u32(net.input_dim(), "input width")?);
    put_u32(&mut out, dim_u32(net.layers().len(), "layer count")?);
    for l in net.layers() {
        put_u32(&mut out, dim_u32(l.output_dim(), "layer width")?);
        out.push(l.activation.code());
        out.push(l.batch_norm.is_some() as u8);
        put_f32s(&mut out, &[l.dropout]);
        if let Some(bn) = &l.batch_norm {
            put_f32s(&mut out, &[bn.momentum, bn.eps]);
        }
    }
    for l in net.layers() {
        put_f32s(&mut out, l.weights.transpose().as_slice());
        put_f32s(&mut out, l.bias.as_slice());
        if let Some(bn) = &l.batch_norm {
            for v in [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var] {
                put_f32s(&mut out, v.as_slice());
            }
        }
    }
    Ok(out)
}

struct Header {
    width: usize,
    activation: Activation,
    bn: Option<(f64, f64)>,
    dropout: f64,
}

pub fn read_mlp(bytes: &[u8]) -> Result<Mlp> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let input = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    if input == 0 || n_layers == 0 {
        return Err(Error::Format("checkpoint has no layers".into()));
    }
    // every header needs at least 10 bytes
    if n_layers > bytes.len() / 10 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let mut headers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let width = r.u32()? as usize;
        let activation = Activation::from_code(r.u8()?)
            .ok_or_else(|| Error::Format(format!("layer {i} has an unknown activation")))?;
        let has_bn = match r.u8()? {
            0 => false,
            1 => true,
            f => return Err(Error::Format(format!("layer {i} batch-norm flag {f}"))),
        };
        let dropout = r.f32()? as f64;
        let bn = if has_bn { Some((r.f32()? as f64, r.f32()? as f64)) } else { None };
        if width == 0 {
            return Err(Error::Format(format!("layer {i} has zero width")));
        }
        headers.push(Header { width, activation, bn, dropout });
    }
    let mut fan_in = input;
    let mut layers = Vec::with_capacity(n_layers);
    for h in headers {
        let n_w = h
            .width
            .checked_mul(fan_in)
            .ok_or_else(|| Error::Format("layer size overflow".into()))?;
        let weights = DMatrix::from_row_slice(h.width, fan_in, &r.f32_vec(n_w)?);
        let bias = DVector::from_vec(r.f32_vec(h.width)?);
        let batch_norm = match h.bn {
            Some((momentum, eps)) => Some(BatchNorm {
                gamma: DVector::from_vec(r.f32_vec(h.width)?),
                beta: DVector::from_vec(r.f32_vec(h.width)?),
                running_mean: DVector::from_vec(r.f32_vec(h.width)?),
                running_var: DVector::from_vec(r.f32_vec(h.width)?),
                momentum,
                eps,
            }),
            None => None,
        };
        layers.push(Dense {
            weights,
            bias,
            activation: h.activation,
            batch_norm,
            dropout: h.dropout,
        });
        fan_in = h.width;
    }
    r.finish()?;
    Mlp::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_mlp(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_mlp(net)?)?;
    Ok(())
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<Mlp> {
    read_mlp(&std::fs::read(path)?)
}
