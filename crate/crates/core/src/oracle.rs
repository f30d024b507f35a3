//! Straightforward reference implementations of every layer operation.
//!
//! Nothing here shares code with the streaming datapath: padding is
//! materialized explicitly, deconvolution is done the wasteful way (zero
//! insertion followed by a valid convolution) and every tap is counted,
//! zero operands included.

use std::ops::AddAssign;

use crate::error::{Error, Result};
use crate::kernels::{ComputeKind, KernelSet};
use crate::linebuffer::PaddingMode;
use crate::qtensor::{requantize, AccTensor, Accum, Activation, QTensor, Requant, Shape3};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct OpCounters {
    pub multiplications: u64,
    pub additions: u64,
    pub loads: u64,
    pub stores: u64,
}

impl OpCounters {
    pub fn reset(&mut self) {
        *self = OpCounters::default();
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.multiplications += rhs.multiplications;
        self.additions += rhs.additions;
        self.loads += rhs.loads;
        self.stores += rhs.stores;
    }
}

fn check_channels(input: &QTensor, weights: &KernelSet) -> Result<()> {
    weights.validate()?;
    if input.channels() != weights.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, kernels expect {}",
            input.channels(),
            weights.in_channels
        )));
    }
    Ok(())
}

/// Explicitly zero-padded copy as i32 planes, (row, column, channel) order.
struct Padded {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<i32>,
}

impl Padded {
    #[inline]
    fn at(&self, y: usize, x: usize, c: usize) -> i32 {
        self.data[(y * self.w + x) * self.c + c]
    }
}

fn pad_edges(input: &QTensor, pad: PaddingMode) -> Padded {
    let top = pad.top() as usize;
    let left = pad.left() as usize;
    let h = input.height() + pad.extra_rows();
    let w = input.width() + pad.extra_cols();
    let c = input.channels();
    let mut data = vec![0i32; h * w * c];
    for y in 0..input.height() {
        for x in 0..input.width() {
            for ch in 0..c {
                data[((y + top) * w + x + left) * c + ch] = input.get(y, x, ch) as i32;
            }
        }
    }
    Padded { h, w, c, data }
}

/// Valid 3x3 convolution over an already padded map. `kernels` holds
/// `(co, ci, u, v)` taps; bias first, then every tap.
fn valid_conv3x3(src: &Padded, cout: usize, bias: &[i32], kernels: &[i32], counters: &mut OpCounters) -> Result<AccTensor> {
    if src.h < 3 || src.w < 3 {
        return Err(Error::shape(format!(
            "{}x{} padded map is smaller than a 3x3 kernel",
            src.h, src.w
        )));
    }
    let shape = Shape3::new(src.h - 2, src.w - 2, cout);
    let mut out = AccTensor::zeros(shape);
    for y in 0..shape.height {
        for x in 0..shape.width {
            for co in 0..cout {
                let mut acc = Accum(bias[co]);
                for ci in 0..src.c {
                    let k = &kernels[(co * src.c + ci) * 9..][..9];
                    for u in 0..3 {
                        for v in 0..3 {
                            let prod = src.at(y + u, x + v, ci) * k[u * 3 + v];
                            acc = acc.checked_add(prod)?;
                        }
                    }
                }
                let i = out.index(y, x, co);
                out.data_mut()[i] = acc.value();
            }
        }
    }
    let taps = (shape.pixels() * cout * src.c * 9) as u64;
    counters.multiplications += taps;
    counters.additions += taps;
    counters.loads += taps * 2;
    counters.stores += shape.len() as u64;
    Ok(out)
}

/// 3x3 stride-1 convolution with one zero row/column per edge in `pad`.
/// Output is the padded size minus two in each dimension.
pub fn conv2d_ref(input: &QTensor, weights: &KernelSet, pad: PaddingMode) -> Result<(AccTensor, OpCounters)> {
    check_channels(input, weights)?;
    let src = pad_edges(input, pad);
    let mut counters = OpCounters::default();
    let taps: Vec<i32> = weights.weights.iter().map(|&w| w as i32).collect();
    let out = valid_conv3x3(&src, weights.out_channels, &weights.bias, &taps, &mut counters)?;
    Ok((out, counters))
}

/// Stride-2 transposed convolution by zero insertion.
///
/// Pixels are spread onto a `(2h+1) x (2w+1)` grid with zeros between and
/// around them; `exact_double` adds one more zero row on top and column on
/// the left. A valid convolution with the 180-degree-rotated kernel then
/// gives `(2h-1) x (2w-1)`, or `2h x 2w` with `exact_double`.
pub fn deconv_naive(input: &QTensor, weights: &KernelSet, exact_double: bool) -> Result<(AccTensor, OpCounters)> {
    check_channels(input, weights)?;
    let off = if exact_double { 2 } else { 1 };
    let h = 2 * input.height() + 1 + exact_double as usize;
    let w = 2 * input.width() + 1 + exact_double as usize;
    let c = input.channels();
    let mut data = vec![0i32; h * w * c];
    for y in 0..input.height() {
        for x in 0..input.width() {
            for ch in 0..c {
                data[((2 * y + off) * w + 2 * x + off) * c + ch] = input.get(y, x, ch) as i32;
            }
        }
    }
    let expanded = Padded { h, w, c, data };
    let mut taps = Vec::with_capacity(weights.weights.len());
    for co in 0..weights.out_channels {
        for ci in 0..c {
            for u in 0..3 {
                for v in 0..3 {
                    let (ku, kv) = if weights.rotated { (u, v) } else { (2 - u, 2 - v) };
                    taps.push(weights.weight(co, ci, ku, kv) as i32);
                }
            }
        }
    }
    let mut counters = OpCounters::default();
    let out = valid_conv3x3(&expanded, weights.out_channels, &weights.bias, &taps, &mut counters)?;
    Ok((out, counters))
}

fn pool_ref(input: &QTensor, reduce: impl Fn([i8; 4]) -> i8) -> Result<QTensor> {
    if input.height() % 2 != 0 || input.width() % 2 != 0 {
        return Err(Error::OddDimension {
            height: input.height(),
            width: input.width(),
        });
    }
    let shape = Shape3::new(input.height() / 2, input.width() / 2, input.channels());
    Ok(QTensor::from_fn(shape, input.scale_exp(), |y, x, c| {
        reduce([
            input.get(2 * y, 2 * x, c),
            input.get(2 * y, 2 * x + 1, c),
            input.get(2 * y + 1, 2 * x, c),
            input.get(2 * y + 1, 2 * x + 1, c),
        ])
    }))
}

/// 2x2 stride-2 max pooling.
pub fn maxpool_ref(input: &QTensor) -> Result<QTensor> {
    pool_ref(input, |b| b.into_iter().max().unwrap_or(0))
}

/// 2x2 stride-2 average pooling, truncating toward zero.
pub fn avgpool_ref(input: &QTensor) -> Result<QTensor> {
    pool_ref(input, |b| (b.iter().map(|&v| v as i32).sum::<i32>() / 4) as i8)
}

/// Requantizes `acc + bias` per channel, then applies the activation.
pub fn bn_act_ref(
    acc: &AccTensor,
    requant: &[Requant],
    bias: Option<&[i32]>,
    act: Activation,
    out_scale_exp: i32,
) -> Result<QTensor> {
    let shape = acc.shape();
    if requant.len() != shape.channels || bias.is_some_and(|b| b.len() != shape.channels) {
        return Err(Error::shape(format!(
            "per-channel parameters do not match {} channels",
            shape.channels
        )));
    }
    let mut data = Vec::with_capacity(shape.len());
    for (i, &a) in acc.data().iter().enumerate() {
        let c = i % shape.channels;
        let b = bias.map_or(0, |b| b[c]);
        let v = Accum(a).checked_add(b)?;
        data.push(act.apply(requantize(v, requant[c])));
    }
    QTensor::new(shape, out_scale_exp, data)
}

/// The accumulator-precision result of one conv or deconv layer.
pub fn layer_acc_ref(input: &QTensor, weights: &KernelSet, pad: PaddingMode) -> Result<(AccTensor, OpCounters)> {
    match weights.kind {
        ComputeKind::Conv3x3 => conv2d_ref(input, weights, pad),
        ComputeKind::Deconv2x => {
            if pad != PaddingMode::TOP_LEFT {
                return Err(Error::Unsupported(format!(
                    "reference deconvolution with padding {pad}"
                )));
            }
            deconv_naive(input, weights, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qtensor::Requant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kset(kind: ComputeKind, cin: usize, cout: usize, w: Vec<i8>, bias: Vec<i32>) -> KernelSet {
        KernelSet::new(kind, cin, cout, 0, w, bias, vec![Requant::UNIT; cout]).unwrap()
    }

    #[test]
    fn conv_window_overlap_counts() {
        let input = QTensor::from_fn(Shape3::new(4, 4, 1), 0, |_, _, _| 1);
        let ks = kset(ComputeKind::Conv3x3, 1, 1, vec![1; 9], vec![0]);
        let (out, c) = conv2d_ref(&input, &ks, PaddingMode::ALL).unwrap();
        assert_eq!(out.shape(), Shape3::new(4, 4, 1));
        assert_eq!(out.get(1, 1, 0), 9);
        assert_eq!(out.get(0, 0, 0), 4);
        assert_eq!(out.get(3, 3, 0), 4);
        assert_eq!(out.get(0, 1, 0), 6);
        assert_eq!(c.multiplications, 16 * 9);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = QTensor::from_fn(Shape3::new(5, 4, 2), 0, |_, _, _| rng.gen());
        let ks = kset(ComputeKind::Conv3x3, 2, 3, vec![0; 54], vec![7, -3, 100]);
        let (out, _) = conv2d_ref(&input, &ks, PaddingMode::ALL).unwrap();
        for (i, &v) in out.data().iter().enumerate() {
            assert_eq!(v, [7, -3, 100][i % 3]);
        }
    }

    /// Written independently of `valid_conv3x3`: signed offsets with bounds
    /// checks instead of a padded copy.
    fn quadruple_loop(input: &QTensor, ks: &KernelSet) -> Vec<i64> {
        let (h, w) = (input.height() as i64, input.width() as i64);
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for co in 0..ks.out_channels {
                    let mut s = ks.bias[co] as i64;
                    for ci in 0..ks.in_channels {
                        for u in 0..3i64 {
                            for v in 0..3i64 {
                                let (yy, xx) = (y + u - 1, x + v - 1);
                                if yy < 0 || xx < 0 || yy >= h || xx >= w {
                                    continue;
                                }
                                s += input.get(yy as usize, xx as usize, ci) as i64
                                    * ks.weight(co, ci, u as usize, v as usize) as i64;
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_independent_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = QTensor::from_fn(Shape3::new(5, 5, 2), 0, |_, _, _| rng.gen());
        let w: Vec<i8> = (0..54).map(|_| rng.gen()).collect();
        let b: Vec<i32> = (0..3).map(|_| rng.gen_range(-1000..1000)).collect();
        let ks = kset(ComputeKind::Conv3x3, 2, 3, w, b);
        let (out, _) = conv2d_ref(&input, &ks, PaddingMode::ALL).unwrap();
        let got: Vec<i64> = out.data().iter().map(|&v| v as i64).collect();
        assert_eq!(got, quadruple_loop(&input, &ks));
    }

    #[test]
    fn conv_channel_mismatch() {
        let input = QTensor::zeros(Shape3::new(3, 3, 2), 0);
        let ks = kset(ComputeKind::Conv3x3, 1, 1, vec![0; 9], vec![0]);
        assert!(matches!(conv2d_ref(&input, &ks, PaddingMode::ALL), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn conv_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = QTensor::from_fn(Shape3::new(4, 6, 3), 0, |_, _, _| rng.gen_range(-40..40));
        let scaled = QTensor::from_fn(input.shape(), 0, |y, x, c| 3 * input.get(y, x, c));
        let w: Vec<i8> = (0..3 * 2 * 9).map(|_| rng.gen()).collect();
        let ks = kset(ComputeKind::Conv3x3, 3, 2, w, vec![0, 0]);
        let (a, _) = conv2d_ref(&input, &ks, PaddingMode::ALL).unwrap();
        let (b, _) = conv2d_ref(&scaled, &ks, PaddingMode::ALL).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(3 * x, *y);
        }
    }

    #[test]
    fn deconv_output_sizes() {
        let input = QTensor::zeros(Shape3::new(2, 2, 1), 0);
        let ks = kset(ComputeKind::Deconv2x, 1, 1, vec![1; 9], vec![0]);
        let (a, _) = deconv_naive(&input, &ks, false).unwrap();
        assert_eq!((a.shape().height, a.shape().width), (3, 3));
        let (b, _) = deconv_naive(&input, &ks, true).unwrap();
        assert_eq!((b.shape().height, b.shape().width), (4, 4));
    }

    #[test]
    fn deconv_single_pixel_hits_k33() {
        // Weights given already rotated: K = rows [1..3],[4..6],[7..9].
        let input = QTensor::new(Shape3::new(2, 2, 1), 0, vec![1, 0, 0, 0]).unwrap();
        let mut ks = kset(ComputeKind::Deconv2x, 1, 1, (1..=9).collect(), vec![0]);
        ks.rotated = true;
        let (out, _) = deconv_naive(&input, &ks, true).unwrap();
        // Expanded map has the pixel at (2, 2); each output (y, x) with
        // y, x <= 2 sees it at tap (2 - y, 2 - x).
        assert_eq!(out.get(0, 0, 0), 9);
        assert_eq!(out.get(0, 1, 0), 8);
        assert_eq!(out.get(1, 0, 0), 6);
        assert_eq!(out.get(1, 1, 0), 5);
        assert_eq!(out.get(2, 2, 0), 1);
        assert_eq!(out.get(0, 3, 0), 0);
        assert_eq!(out.get(3, 3, 0), 0);
    }

    #[test]
    fn deconv_crop_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = QTensor::from_fn(Shape3::new(3, 4, 2), 0, |_, _, _| rng.gen());
        let w: Vec<i8> = (0..2 * 2 * 9).map(|_| rng.gen()).collect();
        let ks = kset(ComputeKind::Deconv2x, 2, 2, w, vec![1, 2]);
        let (small, _) = deconv_naive(&input, &ks, false).unwrap();
        let (full, _) = deconv_naive(&input, &ks, true).unwrap();
        assert_eq!(full.crop_leading(1, 1), small);
    }

    #[test]
    fn deconv_counts_every_tap() {
        let input = QTensor::zeros(Shape3::new(3, 5, 2), 0);
        let ks = kset(ComputeKind::Deconv2x, 2, 4, vec![0; 72], vec![0; 4]);
        let (_, c) = deconv_naive(&input, &ks, true).unwrap();
        assert_eq!(c.multiplications, 9 * 6 * 10 * 2 * 4);
    }

    #[test]
    fn pooling_examples() {
        let t = QTensor::new(Shape3::new(2, 2, 1), 0, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(maxpool_ref(&t).unwrap().data(), &[4]);
        assert_eq!(avgpool_ref(&t).unwrap().data(), &[2]);
        let c = QTensor::from_fn(Shape3::new(4, 6, 3), -2, |_, _, _| -9);
        for p in [maxpool_ref(&c).unwrap(), avgpool_ref(&c).unwrap()] {
            assert_eq!(p.shape(), Shape3::new(2, 3, 3));
            assert!(p.data().iter().all(|&v| v == -9));
            assert_eq!(p.scale_exp(), -2);
        }
        let odd = QTensor::zeros(Shape3::new(3, 2, 1), 0);
        assert!(matches!(maxpool_ref(&odd), Err(Error::OddDimension { .. })));
    }

    #[test]
    fn bn_act_examples() {
        let r = Requant::new(32767, 8).unwrap();
        let acc = AccTensor::new(Shape3::new(1, 3, 1), vec![-256, 256, -2048]).unwrap();
        let relu = bn_act_ref(&acc, &[r], None, Activation::Relu, 0).unwrap();
        assert_eq!(relu.data(), &[0, 1, 0]);
        let leaky = bn_act_ref(&acc, &[r], None, Activation::LEAKY_DEFAULT, 0).unwrap();
        assert_eq!(leaky.data(), &[0, 1, -1]);
        let none = bn_act_ref(&acc, &[r], Some(&[256]), Activation::None, 0).unwrap();
        assert_eq!(none.data(), &[0, 2, -7]);
    }

    #[test]
    fn determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = QTensor::from_fn(Shape3::new(4, 3, 2), 0, |_, _, _| rng.gen());
        let w: Vec<i8> = (0..36).map(|_| rng.gen()).collect();
        let ks = kset(ComputeKind::Deconv2x, 2, 2, w, vec![0, 0]);
        assert_eq!(deconv_naive(&input, &ks, true).unwrap(), deconv_naive(&input, &ks, true).unwrap());
    }
}
