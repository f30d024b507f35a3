//! Per-layer packed weights: int8 3x3 kernels, accumulator-scale biases and
//! the folded batch-norm requantization per output channel.

use std::fmt;

use crate::error::{Error, Result};
use crate::qtensor::Requant;

pub const KERNEL_TAPS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComputeKind {
    Conv3x3,
    Deconv2x,
}

impl ComputeKind {
    pub fn code(self) -> u32 {
        match self {
            ComputeKind::Conv3x3 => 0,
            ComputeKind::Deconv2x => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ComputeKind::Conv3x3),
            1 => Some(ComputeKind::Deconv2x),
            _ => None,
        }
    }
}

impl fmt::Display for ComputeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComputeKind::Conv3x3 => "conv3x3",
            ComputeKind::Deconv2x => "deconv2x",
        })
    }
}

/// Weights in (out channel, in channel, row, column) order.
///
/// `rotated` records whether the kernels were already turned 180 degrees
/// (deconvolution weights are rotated once, when packed).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KernelSet {
    pub kind: ComputeKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight_scale_exp: i32,
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
    pub requant: Vec<Requant>,
    pub rotated: bool,
}

impl KernelSet {
    pub fn new(
        kind: ComputeKind,
        in_channels: usize,
        out_channels: usize,
        weight_scale_exp: i32,
        weights: Vec<i8>,
        bias: Vec<i32>,
        requant: Vec<Requant>,
    ) -> Result<Self> {
        let ks = KernelSet {
            kind,
            in_channels,
            out_channels,
            weight_scale_exp,
            weights,
            bias,
            requant,
            rotated: false,
        };
        ks.validate()?;
        Ok(ks)
    }

    /// A set with zero bias and the given requantization on every channel.
    pub fn with_uniform_requant(
        kind: ComputeKind,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<i8>,
        requant: Requant,
    ) -> Result<Self> {
        Self::new(
            kind,
            in_channels,
            out_channels,
            0,
            weights,
            vec![0; out_channels],
            vec![requant; out_channels],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::shape("kernel set with zero channels"));
        }
        let expect = self.out_channels * self.in_channels * KERNEL_TAPS;
        if self.weights.len() != expect {
            return Err(Error::shape(format!(
                "{} weights for {}x{} 3x3 kernels",
                self.weights.len(),
                self.out_channels,
                self.in_channels
            )));
        }
        if self.bias.len() != self.out_channels || self.requant.len() != self.out_channels {
            return Err(Error::shape(format!(
                "{} biases / {} requant entries for {} output channels",
                self.bias.len(),
                self.requant.len(),
                self.out_channels
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn kernel_offset(&self, co: usize, ci: usize) -> usize {
        (co * self.in_channels + ci) * KERNEL_TAPS
    }

    /// The stored 3x3 kernel, row-major.
    #[inline]
    pub fn kernel(&self, co: usize, ci: usize) -> &[i8; KERNEL_TAPS] {
        let o = self.kernel_offset(co, ci);
        self.weights[o..o + KERNEL_TAPS].try_into().expect("9 taps")
    }

    #[inline]
    pub fn weight(&self, co: usize, ci: usize, u: usize, v: usize) -> i8 {
        self.weights[self.kernel_offset(co, ci) + u * 3 + v]
    }

    /// Returns a copy with every kernel turned 180 degrees and the flag
    /// toggled.
    pub fn rotate_all(&self) -> KernelSet {
        let mut out = self.clone();
        for k in out.weights.chunks_exact_mut(KERNEL_TAPS) {
            k.reverse();
        }
        out.rotated = !self.rotated;
        out
    }

    /// Weights in the orientation the deconvolution datapath consumes.
    pub fn rotated_for_deconv(&self) -> std::borrow::Cow<'_, KernelSet> {
        if self.rotated {
            std::borrow::Cow::Borrowed(self)
        } else {
            std::borrow::Cow::Owned(self.rotate_all())
        }
    }

    /// Bits occupied in the weight buffer: weights, biases, multipliers and
    /// shifts.
    pub fn storage_bits(&self) -> u64 {
        weight_storage_bits(self.in_channels, self.out_channels)
    }
}

pub fn weight_storage_bits(in_channels: usize, out_channels: usize) -> u64 {
    let (ci, co) = (in_channels as u64, out_channels as u64);
    co * ci * KERNEL_TAPS as u64 * 8 + co * (32 + 16 + 8)
}
