//! Weight quantization/packing and the binary weight image.
//!
//! Image layout, little-endian: `UCDW`, u32 version, u32 layer count, then
//! per conv/deconv layer: u32 kind, u32 Cin, u32 Cout, i32 weight scale
//! exponent, Cout*Cin*9 i8 weights (deconvolution kernels already rotated),
//! Cout i32 biases, Cout i16 multipliers, Cout u8 shifts.

use std::path::Path;

use crate::controller::netfile::{LayerKind, NetDescription};
use crate::error::{Error, Result};
use crate::kernels::{ComputeKind, KernelSet, KERNEL_TAPS};
use crate::pearray::{fuse_bn, BnParams};
use crate::qtensor::{quantize, Requant};

pub const MAGIC: &[u8; 4] = b"UCDW";
pub const VERSION: u32 = 1;

pub fn encode_weights(sets: &[KernelSet]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(sets.len() as u32).to_le_bytes());
    for ks in sets {
        let stored = match ks.kind {
            ComputeKind::Deconv2x => ks.rotated_for_deconv(),
            ComputeKind::Conv3x3 => std::borrow::Cow::Borrowed(ks),
        };
        b.extend_from_slice(&ks.kind.code().to_le_bytes());
        b.extend_from_slice(&(ks.in_channels as u32).to_le_bytes());
        b.extend_from_slice(&(ks.out_channels as u32).to_le_bytes());
        b.extend_from_slice(&ks.weight_scale_exp.to_le_bytes());
        b.extend(stored.weights.iter().map(|&w| w as u8));
        for v in &ks.bias {
            b.extend_from_slice(&v.to_le_bytes());
        }
        for r in &ks.requant {
            b.extend_from_slice(&r.multiplier().to_le_bytes());
        }
        b.extend(ks.requant.iter().map(|r| r.shift()));
    }
    b
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::WeightFormat(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }
}

/// Parses a weight image. Deconvolution sets come back flagged as rotated.
pub fn decode_weights(bytes: &[u8]) -> Result<Vec<KernelSet>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::WeightFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut sets = Vec::with_capacity(count.min(1024));
    for layer in 0..count {
        let code = r.u32()?;
        let kind = ComputeKind::from_code(code)
            .ok_or_else(|| Error::WeightFormat(format!("layer {layer}: unknown kind {code}")))?;
        let cin = r.u32()? as usize;
        let cout = r.u32()? as usize;
        let scale = r.i32()?;
        let n = cin
            .checked_mul(cout)
            .and_then(|v| v.checked_mul(KERNEL_TAPS))
            .ok_or_else(|| Error::WeightFormat(format!("layer {layer}: {cin}x{cout} overflows")))?;
        let weights = r.take(n)?.iter().map(|&b| b as i8).collect();
        let bias = (0..cout).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let mults = (0..cout)
            .map(|_| Ok(i16::from_le_bytes(r.array()?)))
            .collect::<Result<Vec<_>>>()?;
        let shifts = r.take(cout)?;
        let requant = mults
            .iter()
            .zip(shifts)
            .map(|(&m, &s)| Requant::new(m, s))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::WeightFormat(format!("layer {layer}: {e}")))?;
        let mut ks = KernelSet::new(kind, cin, cout, scale, weights, bias, requant)
            .map_err(|e| Error::WeightFormat(format!("layer {layer}: {e}")))?;
        ks.rotated = kind == ComputeKind::Deconv2x;
        sets.push(ks);
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(sets)
}

pub fn write_weights(path: &Path, sets: &[KernelSet]) -> Result<()> {
    std::fs::write(path, encode_weights(sets))?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<Vec<KernelSet>> {
    decode_weights(&std::fs::read(path)?)
}

/// Training-side weights of one conv/deconv layer in (Cout, Cin, row,
/// column) order, deconvolution kernels unrotated.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    /// Real weights, quantized at pack time, with an optional conv bias.
    Float { weights: Vec<f64>, bias: Option<Vec<f64>> },
    /// Already-quantized weights, stored as given.
    Int8 { weights: Vec<i8>, scale_exp: i32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: LayerWeights,
    /// One entry per output channel; `None` means no batch norm.
    pub bn: Option<Vec<BnParams>>,
}

/// The smallest exponent in [-16, 0] with `max|w| / 2^s <= 127`.
pub fn weight_scale_exp(weights: &[f64]) -> i32 {
    let max = weights.iter().fold(0f64, |m, w| m.max(w.abs()));
    (-16..=0).find(|&s| max / 2f64.powi(s) <= 127.0).unwrap_or(0)
}

/// Quantizes weights, folds batch norm and the layer rescale, rotates
/// deconvolution kernels and produces the weight image.
pub fn pack_weights(net: &NetDescription, params: &[LayerParams]) -> Result<(Vec<u8>, Vec<KernelSet>)> {
    let shapes = net.layer_shapes()?;
    if params.len() != net.compute_layers() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter sets for {} conv/deconv layers",
            params.len(),
            net.compute_layers()
        )));
    }
    let mut sets = Vec::with_capacity(params.len());
    let compute = net.layers.iter().zip(&shapes).enumerate().filter(|(_, (l, _))| l.kind.is_compute());
    for ((layer, (spec, shape)), p) in compute.zip(params) {
        let err = |m: String| Error::Layer { layer, message: m };
        let (cin, cout) = (shape.input.channels, shape.output.channels);
        let n = cin * cout * KERNEL_TAPS;
        let (q, w_exp, conv_bias) = match &p.weights {
            LayerWeights::Float { weights, bias } => {
                if weights.len() != n {
                    return Err(err(format!("{} weights, expected {n}", weights.len())));
                }
                let s = weight_scale_exp(weights);
                (weights.iter().map(|&w| quantize(w, s)).collect(), s, bias.clone())
            }
            LayerWeights::Int8 { weights, scale_exp } => {
                if weights.len() != n {
                    return Err(err(format!("{} weights, expected {n}", weights.len())));
                }
                (weights.clone(), *scale_exp, None)
            }
        };
        if conv_bias.as_ref().is_some_and(|b| b.len() != cout) {
            return Err(err(format!("conv bias length, expected {cout}")));
        }
        let bn = match &p.bn {
            Some(bn) if bn.len() != cout => return Err(err(format!("{} BN entries, expected {cout}", bn.len()))),
            Some(bn) => bn.clone(),
            None => vec![BnParams::IDENTITY; cout],
        };
        let mut bias = Vec::with_capacity(cout);
        let mut requant = Vec::with_capacity(cout);
        for (co, bn) in bn.iter().enumerate() {
            let mut bn = *bn;
            if let Some(b) = &conv_bias {
                bn.mean -= b[co];
            }
            let (r, b) = fuse_bn(&bn, shape.in_scale_exp, w_exp, shape.out_scale_exp)
                .map_err(|e| err(format!("channel {co}: {e}")))?;
            requant.push(r);
            bias.push(b);
        }
        let kind = if spec.kind == LayerKind::Deconv2x { ComputeKind::Deconv2x } else { ComputeKind::Conv3x3 };
        let ks = KernelSet::new(kind, cin, cout, w_exp, q, bias, requant)?;
        sets.push(match kind {
            ComputeKind::Deconv2x => ks.rotate_all(),
            ComputeKind::Conv3x3 => ks,
        });
    }
    Ok((encode_weights(&sets), sets))
}
