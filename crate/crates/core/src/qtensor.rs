//! Quantized tensor value types and the fixed-point arithmetic every unit
//! shares.
//!
//! Feature maps are symmetric signed 8-bit tensors with a per-tensor
//! power-of-two scale: the real value of a stored element `q` is
//! `q * 2^scale_exp`. Multiply-accumulate paths run in 32-bit accumulators
//! and are narrowed back to 8 bits with a 16-bit fixed-point multiplier and
//! a right shift. Every rounding step rounds half away from zero.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const Q8_MIN: i32 = -128;
pub const Q8_MAX: i32 = 127;

/// Fractional bits of the requantization multiplier.
pub const REQUANT_FRAC_BITS: u32 = 15;

#[inline]
pub fn saturate_q8(v: i64) -> i8 {
    v.clamp(Q8_MIN as i64, Q8_MAX as i64) as i8
}

/// Arithmetic right shift by `shift` bits, rounding half away from zero.
#[inline]
pub fn round_shift(v: i64, shift: u32) -> i64 {
    if shift == 0 {
        return v;
    }
    let half = 1i64 << (shift - 1);
    if v >= 0 {
        (v + half) >> shift
    } else {
        -((-v + half) >> shift)
    }
}

/// Quantizes a real value at scale `2^scale_exp`, saturating to int8.
///
/// `scale_exp` is expected in `[-16, 0]`.
pub fn quantize(x: f64, scale_exp: i32) -> i8 {
    debug_assert!((-16..=0).contains(&scale_exp), "scale_exp {scale_exp}");
    // f64::round is half-away-from-zero.
    let v = (x / 2f64.powi(scale_exp)).round();
    v.clamp(Q8_MIN as f64, Q8_MAX as f64) as i8
}

#[inline]
pub fn dequantize_value(q: i8, scale_exp: i32) -> f64 {
    q as f64 * 2f64.powi(scale_exp)
}

/// A signed 32-bit accumulator. Overflow is reported, never wrapped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Accum(pub i32);

impl Accum {
    pub const ZERO: Accum = Accum(0);

    pub fn checked_add(self, rhs: i32) -> Result<Accum> {
        self.0
            .checked_add(rhs)
            .map(Accum)
            .ok_or(Error::AccumulatorOverflow)
    }

    /// `self + a * b`, checked.
    pub fn mac(self, a: i8, b: i8) -> Result<Accum> {
        self.checked_add(a as i32 * b as i32)
    }

    pub fn value(self) -> i32 {
        self.0
    }
}

impl From<i32> for Accum {
    fn from(v: i32) -> Self {
        Accum(v)
    }
}

/// Fixed-point rescale: `multiplier * 2^-(15 + shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Requant {
    multiplier: i16,
    shift: u8,
}

impl Requant {
    /// Closest representable approximation of 1.0.
    pub const UNIT: Requant = Requant {
        multiplier: i16::MAX,
        shift: 0,
    };

    pub fn new(multiplier: i16, shift: u8) -> Result<Self> {
        if shift > 31 {
            return Err(Error::InvalidArgument(format!(
                "requant shift {shift} outside [0, 31]"
            )));
        }
        Ok(Requant { multiplier, shift })
    }

    /// Encodes a real scale with the most precision the 16-bit multiplier
    /// allows. Scales whose magnitude rounds to 2^15 or more at shift 0 do
    /// not fit.
    pub fn from_scale(scale: f64) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::MultiplierOverflow { scale });
        }
        if scale == 0.0 {
            return Ok(Requant {
                multiplier: 0,
                shift: 0,
            });
        }
        for shift in (0..=31u8).rev() {
            let m = (scale * 2f64.powi((REQUANT_FRAC_BITS + shift as u32) as i32)).round();
            if m.abs() <= i16::MAX as f64 {
                return Ok(Requant {
                    multiplier: m as i16,
                    shift,
                });
            }
        }
        Err(Error::MultiplierOverflow { scale })
    }

    pub fn multiplier(&self) -> i16 {
        self.multiplier
    }

    pub fn shift(&self) -> u8 {
        self.shift
    }

    /// The real scale this pair encodes.
    pub fn scale(&self) -> f64 {
        self.multiplier as f64 * 2f64.powi(-((REQUANT_FRAC_BITS + self.shift as u32) as i32))
    }
}

/// Narrows an accumulator to int8: `clamp(round(acc * m / 2^(15 + shift)))`.
#[inline]
pub fn requantize(acc: Accum, r: Requant) -> i8 {
    let prod = acc.0 as i64 * r.multiplier as i64;
    saturate_q8(round_shift(prod, REQUANT_FRAC_BITS + r.shift as u32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    #[default]
    None,
    Relu,
    /// Negative inputs are scaled by `2^-shift`.
    LeakyRelu { shift: u8 },
}

impl Activation {
    pub const LEAKY_DEFAULT: Activation = Activation::LeakyRelu { shift: 3 };

    #[inline]
    pub fn apply(self, v: i8) -> i8 {
        match self {
            Activation::None => v,
            Activation::Relu => v.max(0),
            Activation::LeakyRelu { shift } => {
                if v >= 0 {
                    v
                } else {
                    round_shift(v as i64, shift as u32) as i8
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::None => "none",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu { shift } if *shift != 3 => write!(f, "leaky_relu{shift}"),
            a => f.write_str(a.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PoolKind {
    #[default]
    None,
    Max,
    Avg,
}

impl PoolKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolKind::None => "none",
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
        }
    }

    /// Reduces one 2x2 block. Average truncates toward zero.
    #[inline]
    pub fn reduce(self, block: [i8; 4]) -> i8 {
        match self {
            PoolKind::None => block[0],
            PoolKind::Max => block.into_iter().max().unwrap_or(0),
            PoolKind::Avg => (block.iter().map(|&v| v as i32).sum::<i32>() / 4) as i8,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Activation::None),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LEAKY_DEFAULT),
            _ => s
                .strip_prefix("leaky_relu")
                .and_then(|n| n.parse::<u8>().ok())
                .filter(|&shift| shift < 8)
                .map(|shift| Activation::LeakyRelu { shift })
                .ok_or_else(|| Error::Parse(format!("unknown activation {s:?}"))),
        }
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PoolKind::None),
            "max" => Ok(PoolKind::Max),
            "avg" => Ok(PoolKind::Avg),
            _ => Err(Error::Parse(format!("unknown pooling {s:?}"))),
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Height x width x channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Shape3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape3 {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape3 {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// A feature map: int8 elements in (row, column, channel) order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QTensor {
    shape: Shape3,
    scale_exp: i32,
    data: Vec<i8>,
}

impl QTensor {
    pub fn new(shape: Shape3, scale_exp: i32, data: Vec<i8>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} elements for a {shape} tensor",
                data.len()
            )));
        }
        Ok(QTensor {
            shape,
            scale_exp,
            data,
        })
    }

    pub fn zeros(shape: Shape3, scale_exp: i32) -> Self {
        QTensor {
            shape,
            scale_exp,
            data: vec![0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape3, scale_exp: i32, mut f: impl FnMut(usize, usize, usize) -> i8) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        QTensor {
            shape,
            scale_exp,
            data,
        }
    }

    /// Quantizes a real tensor at the given scale.
    pub fn quantize_from(real: &RealTensor, scale_exp: i32) -> Self {
        QTensor {
            shape: real.shape,
            scale_exp,
            data: real.data.iter().map(|&x| quantize(x, scale_exp)).collect(),
        }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn scale_exp(&self) -> i32 {
        self.scale_exp
    }

    pub fn data(&self) -> &[i8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<i8> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> i8 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: i8) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// All channels of one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> &[i8] {
        let start = self.index(y, x, 0);
        &self.data[start..start + self.shape.channels]
    }

    pub fn with_scale_exp(mut self, scale_exp: i32) -> Self {
        self.scale_exp = scale_exp;
        self
    }

    /// Copies the sub-rectangle `[y0, y1) x [x0, x1)`, all channels.
    pub fn crop(&self, y0: usize, y1: usize, x0: usize, x1: usize) -> Result<QTensor> {
        if y0 > y1 || x0 > x1 || y1 > self.height() || x1 > self.width() {
            return Err(Error::shape(format!(
                "crop [{y0},{y1})x[{x0},{x1}) of {}",
                self.shape
            )));
        }
        let shape = Shape3::new(y1 - y0, x1 - x0, self.channels());
        let mut data = Vec::with_capacity(shape.len());
        for y in y0..y1 {
            let start = self.index(y, x0, 0);
            let end = start + (x1 - x0) * self.channels();
            data.extend_from_slice(&self.data[start..end]);
        }
        Ok(QTensor {
            shape,
            scale_exp: self.scale_exp,
            data,
        })
    }

    pub fn dequantize(&self) -> RealTensor {
        dequantize(self)
    }
}

/// Real-valued tensor in the same layout as [`QTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    pub shape: Shape3,
    pub data: Vec<f64>,
}

/// Element-wise `stored * 2^scale_exp`.
pub fn dequantize(t: &QTensor) -> RealTensor {
    RealTensor {
        shape: t.shape,
        data: t
            .data
            .iter()
            .map(|&q| dequantize_value(q, t.scale_exp))
            .collect(),
    }
}

/// Accumulator-precision tensor, same layout as [`QTensor`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AccTensor {
    shape: Shape3,
    data: Vec<i32>,
}

impl AccTensor {
    pub fn zeros(shape: Shape3) -> Self {
        AccTensor {
            shape,
            data: vec![0; shape.len()],
        }
    }

    pub fn new(shape: Shape3, data: Vec<i32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "{} accumulators for a {shape} tensor",
                data.len()
            )));
        }
        Ok(AccTensor { shape, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [i32] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> i32 {
        self.data[self.index(y, x, c)]
    }

    /// Drops the first `rows` rows and `cols` columns.
    pub fn crop_leading(&self, rows: usize, cols: usize) -> AccTensor {
        let shape = Shape3::new(
            self.shape.height.saturating_sub(rows),
            self.shape.width.saturating_sub(cols),
            self.shape.channels,
        );
        let mut data = Vec::with_capacity(shape.len());
        for y in rows..self.shape.height {
            for x in cols..self.shape.width {
                let i = self.index(y, x, 0);
                data.extend_from_slice(&self.data[i..i + self.shape.channels]);
            }
        }
        AccTensor { shape, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.0, -7), 0);
        assert_eq!(quantize(0.5, -7), 64);
        assert_eq!(quantize(2.0, -7), 127);
        assert_eq!(quantize(-2.0, -7), -128);
    }

    #[test]
    fn quantize_ties_round_away_from_zero() {
        assert_eq!(quantize(1.5, 0), 2);
        assert_eq!(quantize(-1.5, 0), -2);
        assert_eq!(quantize(2.5, 0), 3);
    }

    #[test]
    fn requantize_unit_scale() {
        assert_eq!(requantize(Accum(256), Requant::new(32767, 8).unwrap()), 1);
        assert_eq!(requantize(Accum(100_000), Requant::new(32767, 8).unwrap()), 127);
        assert_eq!(requantize(Accum(-100_000), Requant::new(32767, 8).unwrap()), -128);
    }

    #[test]
    fn requantize_384_at_near_unit_scale() {
        // 384 * 32767 / 2^23 = 1.49995..., which rounds to 1 under the
        // multiply-shift rule; an exact 0.5 ulp tie needs an exact scale.
        assert_eq!(requantize(Accum(384), Requant::new(32767, 8).unwrap()), 1);
    }

    #[test]
    fn requantize_exact_tie_rounds_away() {
        // multiplier 0.5, shift 7: 384 * 2^-8 = 1.5
        let r = Requant::new(16384, 7).unwrap();
        assert_eq!(requantize(Accum(384), r), 2);
        assert_eq!(requantize(Accum(-384), r), -2);
    }

    #[test]
    fn requant_rejects_large_shift() {
        assert!(Requant::new(1, 32).is_err());
    }

    #[test]
    fn requant_from_scale_normalizes() {
        let r = Requant::from_scale(2f64.powi(-7)).unwrap();
        assert_eq!(r.multiplier(), 16384);
        assert_eq!(r.shift(), 6);
        assert_eq!(r.scale(), 2f64.powi(-7));
        assert!(Requant::from_scale(1.0).is_err());
        assert!(Requant::from_scale(f64::NAN).is_err());
        let neg = Requant::from_scale(-0.75).unwrap();
        assert_eq!(neg.scale(), -0.75);
    }

    #[test]
    fn dequantize_examples() {
        let t = QTensor::zeros(Shape3::new(2, 3, 2), -4);
        assert!(t.dequantize().data.iter().all(|&v| v == 0.0));
        let t = QTensor::new(Shape3::new(1, 1, 1), -7, vec![64]).unwrap();
        assert_eq!(t.dequantize().data, vec![0.5]);
    }

    #[test]
    fn qtensor_rejects_wrong_length() {
        assert!(QTensor::new(Shape3::new(2, 2, 1), 0, vec![0; 3]).is_err());
    }

    #[test]
    fn activation_rules() {
        assert_eq!(Activation::Relu.apply(-5), 0);
        assert_eq!(Activation::Relu.apply(5), 5);
        assert_eq!(Activation::LEAKY_DEFAULT.apply(-8), -1);
        assert_eq!(Activation::LEAKY_DEFAULT.apply(-4), -1);
        assert_eq!(Activation::LEAKY_DEFAULT.apply(-3), 0);
        assert_eq!(Activation::LEAKY_DEFAULT.apply(-128), -16);
        assert_eq!(Activation::None.apply(-7), -7);
    }

    #[test]
    fn pool_reduce() {
        assert_eq!(PoolKind::Max.reduce([1, 2, 3, 4]), 4);
        assert_eq!(PoolKind::Avg.reduce([1, 2, 3, 4]), 2);
        assert_eq!(PoolKind::Avg.reduce([-1, -2, -3, -4]), -2);
    }

    #[test]
    fn accumulator_overflow_is_an_error() {
        assert_eq!(Accum(i32::MAX).checked_add(1), Err(Error::AccumulatorOverflow));
        assert_eq!(Accum(0).mac(-128, -128), Ok(Accum(16384)));
    }

    #[test]
    fn worst_case_pe_sum_fits_accumulator() {
        // 3x3 taps x Tn = 8 lanes of the largest product magnitude.
        let worst: i64 = 9 * 8 * 16384;
        assert!(worst < (1i64 << 31));
        let mut acc = Accum::ZERO;
        for _ in 0..9 * 8 {
            acc = acc.mac(-128, -128).unwrap();
        }
        assert_eq!(acc.value() as i64, worst);
    }

    proptest! {
        #[test]
        fn roundtrip(v in any::<i8>(), s in -16i32..=0) {
            prop_assert_eq!(quantize(dequantize_value(v, s), s), v);
        }

        #[test]
        fn monotone(a in -1e4f64..1e4, b in -1e4f64..1e4, s in -16i32..=0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo, s) <= quantize(hi, s));
        }

        #[test]
        fn requantize_saturates_and_matches_real(acc in any::<i32>(), m in any::<i16>(), shift in 0u8..=31) {
            let r = Requant::new(m, shift).unwrap();
            let q = requantize(Accum(acc), r) as i64;
            prop_assert!((Q8_MIN as i64..=Q8_MAX as i64).contains(&q));
            let real = acc as f64 * r.scale();
            let expect = real.round().clamp(-128.0, 127.0) as i64;
            prop_assert_eq!(q, expect);
        }

        #[test]
        fn worst_case_products_fit(tn in 1usize..=8) {
            let mut acc = Accum::ZERO;
            for _ in 0..9 * tn {
                acc = acc.mac(127, -128).unwrap();
            }
            prop_assert!((acc.value() as i64).abs() < (1i64 << 31));
        }
    }
}
