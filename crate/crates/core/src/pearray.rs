//! The unified process element and the Tn x Tm array built from it.
//!
//! A process element is nine multipliers feeding an adder tree with four
//! group nodes: products {0..3}, {4, 5}, {6, 7} and {8}. Convolution reads
//! the root of the tree; deconvolution routes the 2x2 window and the rotated
//! kernel so that the four group nodes are exactly OF11, OF12, OF21 and
//! OF22. Both modes use all nine multipliers.

use std::fmt;

use crate::error::{Error, Result};
use crate::kernels::KERNEL_TAPS;
use crate::patchdeconv::{Patch2x2, Window2x2};
use crate::qtensor::{Accum, Requant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PeMode {
    Convolution,
    Deconvolution,
}

impl fmt::Display for PeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeMode::Convolution => "conv",
            PeMode::Deconvolution => "deconv",
        })
    }
}

/// Plain parameters for [`HwConfig::new`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HwParams {
    /// Input-channel unroll factor.
    pub tn: usize,
    /// Output-channel unroll factor per array.
    pub tm: usize,
    pub arrays: usize,
    pub stream_bits: u64,
    pub clock_hz: u64,
    /// Capacity of each of the two IF banks.
    pub if_bank_bits: u64,
    pub of_bits: u64,
    pub weight_bits: u64,
}

impl Default for HwParams {
    fn default() -> Self {
        HwParams {
            tn: 8,
            tm: 8,
            arrays: 1,
            stream_bits: 64,
            clock_hz: 220_000_000,
            if_bank_bits: 1 << 23,
            of_bits: 1 << 27,
            weight_bits: 1 << 20,
        }
    }
}

/// Validated accelerator geometry. Extra arrays widen output-channel
/// parallelism: each cycle covers `tm * arrays` output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HwConfig {
    p: HwParams,
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig { p: HwParams::default() }
    }
}

impl HwConfig {
    pub fn new(p: HwParams) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if p.tn == 0 || !p.tn.is_power_of_two() {
            return bad(format!("Tn = {} is not a power of two", p.tn));
        }
        if p.tm == 0 || !p.tm.is_power_of_two() {
            return bad(format!("Tm = {} is not a power of two", p.tm));
        }
        if p.arrays == 0 {
            return bad("zero PE arrays".into());
        }
        if p.clock_hz == 0 {
            return bad("zero clock frequency".into());
        }
        if p.stream_bits == 0 || p.stream_bits % 8 != 0 {
            return bad(format!("stream width {} bits", p.stream_bits));
        }
        if p.if_bank_bits == 0 || p.of_bits == 0 || p.weight_bits == 0 {
            return bad("zero buffer capacity".into());
        }
        Ok(HwConfig { p })
    }

    pub fn params(&self) -> HwParams {
        self.p
    }

    pub fn tn(&self) -> usize {
        self.p.tn
    }
    pub fn tm(&self) -> usize {
        self.p.tm
    }
    pub fn arrays(&self) -> usize {
        self.p.arrays
    }
    pub fn stream_bits(&self) -> u64 {
        self.p.stream_bits
    }
    pub fn clock_hz(&self) -> u64 {
        self.p.clock_hz
    }
    pub fn if_bank_bits(&self) -> u64 {
        self.p.if_bank_bits
    }
    pub fn of_bits(&self) -> u64 {
        self.p.of_bits
    }
    pub fn weight_bits(&self) -> u64 {
        self.p.weight_bits
    }

    /// Output channels produced per cycle.
    pub fn out_lanes(&self) -> usize {
        self.p.tm * self.p.arrays
    }

    /// Hardware multipliers: nine per process element.
    pub fn multipliers(&self) -> u64 {
        (KERNEL_TAPS * self.p.tn * self.p.tm * self.p.arrays) as u64
    }

    /// Applies one `key=value` override (`tn`, `tm`, `arrays`,
    /// `stream_bits`, `clock_hz`/`clock_mhz`, `if_bits`, `of_bits`,
    /// `weight_bits`).
    pub fn with_override(&self, key: &str, value: &str) -> Result<HwConfig> {
        let num = |v: &str| -> Result<u64> {
            v.trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidConfig(format!("{key}={v} is not a number")))
        };
        let mut p = self.p;
        match key.trim() {
            "tn" => p.tn = num(value)? as usize,
            "tm" => p.tm = num(value)? as usize,
            "arrays" => p.arrays = num(value)? as usize,
            "stream_bits" => p.stream_bits = num(value)?,
            "clock_hz" => p.clock_hz = num(value)?,
            "clock_mhz" => p.clock_hz = num(value)? * 1_000_000,
            "if_bits" => p.if_bank_bits = num(value)?,
            "of_bits" => p.of_bits = num(value)?,
            "weight_bits" => p.weight_bits = num(value)?,
            other => return Err(Error::InvalidConfig(format!("unknown hardware key {other:?}"))),
        }
        HwConfig::new(p)
    }

    /// Applies comma-separated `key=value` overrides.
    pub fn with_overrides(&self, spec: &str) -> Result<HwConfig> {
        let mut cfg = *self;
        for item in spec.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {item:?}")))?;
            cfg = cfg.with_override(k, v)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeOutput {
    Conv(i32),
    /// Drains to the OF buffer over four beats.
    Deconv(Patch2x2),
}

/// Weight slot order for deconvolution, as row-major kernel indices:
/// K11, K13, K31, K33, K12, K32, K21, K23, K22.
pub const DECONV_WEIGHT_ROUTE: [usize; 9] = [0, 2, 6, 8, 1, 7, 3, 5, 4];

/// Pixel slots for deconvolution: IF11, IF12, IF21, IF22, IF12, IF22, IF21,
/// IF22, IF22.
pub fn deconv_operands(win: Window2x2, rotated_kernel: &[i8; 9]) -> ([i8; 9], [i8; 9]) {
    let px = [
        win.if11, win.if12, win.if21, win.if22, win.if12, win.if22, win.if21, win.if22, win.if22,
    ];
    let wt = DECONV_WEIGHT_ROUTE.map(|i| rotated_kernel[i]);
    (px, wt)
}

#[inline]
fn adder_tree(pixels: &[i8; 9], weights: &[i8; 9]) -> [i32; 4] {
    let p: [i32; 9] = std::array::from_fn(|i| pixels[i] as i32 * weights[i] as i32);
    [p[0] + p[1] + p[2] + p[3], p[4] + p[5], p[6] + p[7], p[8]]
}

/// One process-element evaluation over nine (pixel, weight) pairs.
#[inline]
pub fn pe_eval(mode: PeMode, pixels: &[i8; 9], weights: &[i8; 9]) -> PeOutput {
    let g = adder_tree(pixels, weights);
    match mode {
        PeMode::Convolution => PeOutput::Conv(g[0] + g[1] + g[2] + g[3]),
        PeMode::Deconvolution => PeOutput::Deconv(Patch2x2 {
            of11: g[0],
            of12: g[1],
            of21: g[2],
            of22: g[3],
        }),
    }
}

/// One input channel's operand window for a single PE lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneWindow {
    Conv([i8; 9]),
    Deconv(Window2x2),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeStats {
    pub cycles: u64,
    pub evaluations: u64,
    pub multiplications: u64,
    pub additions: u64,
}

/// A Tn x (Tm * arrays) grid of process elements.
#[derive(Debug, Clone)]
pub struct PeArray {
    tn: usize,
    out_lanes: usize,
    mode: PeMode,
    stats: PeStats,
}

impl PeArray {
    pub fn new(cfg: &HwConfig, mode: PeMode) -> Self {
        PeArray {
            tn: cfg.tn(),
            out_lanes: cfg.out_lanes(),
            mode,
            stats: PeStats::default(),
        }
    }

    pub fn mode(&self) -> PeMode {
        self.mode
    }

    pub fn stats(&self) -> PeStats {
        self.stats
    }

    /// Evaluates every active PE once at one spatial position.
    ///
    /// `windows` holds up to Tn input-channel lanes; `kernel(o, i)` yields
    /// the stored 3x3 taps (rotated, for deconvolution) for output lane `o`
    /// and input lane `i`. The Tn lane results for each of the first
    /// `out.len()` output lanes are reduced by an adder tree, per patch
    /// element in deconvolution mode.
    pub fn array_cycle<'k>(
        &mut self,
        windows: &[LaneWindow],
        kernel: impl Fn(usize, usize) -> &'k [i8; 9],
        out: &mut [PeOutput],
    ) -> Result<()> {
        let n = windows.len();
        if n == 0 || n > self.tn || out.is_empty() || out.len() > self.out_lanes {
            return Err(Error::shape(format!(
                "{n} input lanes x {} output lanes on a {}x{} array",
                out.len(),
                self.tn,
                self.out_lanes
            )));
        }
        for (o, slot) in out.iter_mut().enumerate() {
            match self.mode {
                PeMode::Convolution => {
                    let mut sum = 0i32;
                    for (i, w) in windows.iter().enumerate() {
                        let LaneWindow::Conv(px) = w else {
                            return Err(Error::shape("deconvolution window on a convolution array"));
                        };
                        if let PeOutput::Conv(v) = pe_eval(PeMode::Convolution, px, kernel(o, i)) {
                            sum += v;
                        }
                    }
                    *slot = PeOutput::Conv(sum);
                }
                PeMode::Deconvolution => {
                    let mut sum = [0i32; 4];
                    for (i, w) in windows.iter().enumerate() {
                        let LaneWindow::Deconv(win) = w else {
                            return Err(Error::shape("convolution window on a deconvolution array"));
                        };
                        let (px, wt) = deconv_operands(*win, kernel(o, i));
                        if let PeOutput::Deconv(p) = pe_eval(PeMode::Deconvolution, &px, &wt) {
                            for (s, v) in sum.iter_mut().zip(p.as_array()) {
                                *s += v;
                            }
                        }
                    }
                    *slot = PeOutput::Deconv(Patch2x2 {
                        of11: sum[0],
                        of12: sum[1],
                        of21: sum[2],
                        of22: sum[3],
                    });
                }
            }
        }
        let evals = (n * out.len()) as u64;
        let (pe_adds, tree_adds) = match self.mode {
            PeMode::Convolution => (8, (n as u64 - 1) * out.len() as u64),
            PeMode::Deconvolution => (5, 4 * (n as u64 - 1) * out.len() as u64),
        };
        self.stats.cycles += 1;
        self.stats.evaluations += evals;
        self.stats.multiplications += 9 * evals;
        self.stats.additions += pe_adds * evals + tree_adds;
        debug_assert_eq!(self.stats.multiplications, 9 * self.stats.evaluations);
        Ok(())
    }
}

/// Accumulator-precision partial sums kept across input-depth passes.
#[derive(Debug, Clone)]
pub struct PartialSumStore {
    data: Vec<i32>,
    accumulations: u64,
}

impl PartialSumStore {
    pub fn new(len: usize) -> Self {
        PartialSumStore {
            data: vec![0; len],
            accumulations: 0,
        }
    }

    #[inline]
    pub fn accumulate(&mut self, index: usize, v: i32) -> Result<()> {
        let s = &mut self.data[index];
        *s = Accum(*s).checked_add(v)?.value();
        self.accumulations += 1;
        Ok(())
    }

    pub fn accumulations(&self) -> u64 {
        self.accumulations
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<i32> {
        self.data
    }
}

/// Inference-time batch-norm statistics for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnParams {
    pub gamma: f64,
    pub beta: f64,
    pub mean: f64,
    pub var: f64,
    pub eps: f64,
}

impl BnParams {
    pub const IDENTITY: BnParams = BnParams {
        gamma: 1.0,
        beta: 0.0,
        mean: 0.0,
        var: 1.0,
        eps: 0.0,
    };

    /// `(a, b)` with `bn(z) = a * z + b`.
    pub fn affine(&self) -> (f64, f64) {
        let a = self.gamma / (self.var + self.eps).sqrt();
        (a, self.beta - a * self.mean)
    }
}

/// Folds batch norm and the layer rescale into one requantization step.
///
/// The returned bias is expressed at accumulator scale so that
/// `requantize(acc + bias, r)` approximates `bn(acc * 2^(in + w))` at the
/// output scale.
pub fn fuse_bn(bn: &BnParams, in_scale_exp: i32, w_scale_exp: i32, out_scale_exp: i32) -> Result<(Requant, i32)> {
    if !(bn.var + bn.eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "batch-norm variance {} + eps {} is not positive",
            bn.var, bn.eps
        )));
    }
    let (a, b) = bn.affine();
    if a == 0.0 || !a.is_finite() {
        return Err(Error::InvalidArgument(format!("degenerate batch-norm scale {a}")));
    }
    let acc_scale = 2f64.powi(in_scale_exp + w_scale_exp);
    let requant = Requant::from_scale(a * acc_scale / 2f64.powi(out_scale_exp))?;
    let bias = (b / (a * acc_scale)).round();
    if bias < i32::MIN as f64 || bias > i32::MAX as f64 {
        return Err(Error::AccumulatorOverflow);
    }
    Ok((requant, bias as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patchdeconv::{deconv_patch, Kernel3x3};
    use crate::qtensor::{quantize, requantize};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_all_ones() {
        assert_eq!(pe_eval(PeMode::Convolution, &[1; 9], &[1; 9]), PeOutput::Conv(9));
    }

    #[test]
    fn deconv_routing_example() {
        let win = Window2x2::new([[1, 2], [3, 4]]);
        let k = [1, 2, 3, 4, 5, 6, 7, 8, 9];
        let (px, wt) = deconv_operands(win, &k);
        let PeOutput::Deconv(p) = pe_eval(PeMode::Deconvolution, &px, &wt) else { panic!() };
        assert_eq!(p.as_array(), [64, 36, 36, 20]);
        let (px, wt) = deconv_operands(Window2x2::default(), &k);
        assert_eq!(pe_eval(PeMode::Deconvolution, &px, &wt), PeOutput::Deconv(Patch2x2::default()));
    }

    #[test]
    fn array_reduces_input_lanes() {
        let cfg = HwConfig::new(HwParams { tn: 2, ..HwParams::default() }).unwrap();
        let mut arr = PeArray::new(&cfg, PeMode::Convolution);
        let ones = [1i8; 9];
        let mut out = [PeOutput::Conv(0); 8];
        arr.array_cycle(&[LaneWindow::Conv(ones), LaneWindow::Conv(ones)], |_, _| &ones, &mut out)
            .unwrap();
        assert!(out.iter().all(|o| *o == PeOutput::Conv(18)));
        let s = arr.stats();
        assert_eq!(s.evaluations, 16);
        assert_eq!(s.multiplications, 9 * s.evaluations);
        assert_eq!(s.additions, 16 * 8 + 8);
    }

    #[test]
    fn array_rejects_bad_tiles() {
        let cfg = HwConfig::default();
        let mut arr = PeArray::new(&cfg, PeMode::Convolution);
        let k = [0i8; 9];
        let mut out = [PeOutput::Conv(0); 9];
        let lanes = [LaneWindow::Conv([0; 9])];
        assert!(arr.array_cycle(&lanes, |_, _| &k, &mut out).is_err());
        let mut out = [PeOutput::Conv(0); 1];
        let many = [LaneWindow::Conv([0; 9]); 9];
        assert!(arr.array_cycle(&many, |_, _| &k, &mut out).is_err());
        let wrong = [LaneWindow::Deconv(Window2x2::default())];
        assert!(arr.array_cycle(&wrong, |_, _| &k, &mut out).is_err());
    }

    #[test]
    fn nine_multiplications_per_evaluation_in_both_modes() {
        let cfg = HwConfig::default();
        for mode in [PeMode::Convolution, PeMode::Deconvolution] {
            let mut arr = PeArray::new(&cfg, mode);
            let lane = match mode {
                PeMode::Convolution => LaneWindow::Conv([3; 9]),
                PeMode::Deconvolution => LaneWindow::Deconv(Window2x2::new([[1, 2], [3, 4]])),
            };
            let k = [2i8; 9];
            let mut out = vec![PeOutput::Conv(0); 5];
            arr.array_cycle(&[lane; 3], |_, _| &k, &mut out).unwrap();
            assert_eq!(arr.stats().multiplications, 9 * 15);
        }
    }

    #[test]
    fn hw_config_validation() {
        let d = HwConfig::default();
        assert_eq!(d.multipliers(), 576);
        assert!(HwConfig::new(HwParams { clock_hz: 0, ..HwParams::default() }).is_err());
        assert!(HwConfig::new(HwParams { tn: 6, ..HwParams::default() }).is_err());
        assert!(HwConfig::new(HwParams { arrays: 0, ..HwParams::default() }).is_err());
        let two = d.with_overrides("arrays=2, tn=4").unwrap();
        assert_eq!((two.arrays(), two.tn()), (2, 4));
        assert!(d.with_overrides("bogus=1").is_err());
        assert!(d.with_overrides("tn").is_err());
        assert_eq!(d.with_override("clock_mhz", "100").unwrap().clock_hz(), 100_000_000);
    }

    #[test]
    fn identity_bn_is_pure_rescale() {
        let (r, b) = fuse_bn(&BnParams::IDENTITY, -4, -6, -3).unwrap();
        assert_eq!(r.scale(), 2f64.powi(-7));
        assert_eq!(b, 0);
        let doubled = BnParams { gamma: 2.0, ..BnParams::IDENTITY };
        let (r2, b2) = fuse_bn(&doubled, -4, -6, -3).unwrap();
        assert_eq!(r2.scale(), 2.0 * r.scale());
        assert_eq!(b2, 0);
    }

    #[test]
    fn fuse_bn_errors() {
        let bad = BnParams { var: 0.0, ..BnParams::IDENTITY };
        assert!(fuse_bn(&bad, 0, 0, 0).is_err());
        let neg = BnParams { var: -1.0, eps: 0.5, ..BnParams::IDENTITY };
        assert!(fuse_bn(&neg, 0, 0, 0).is_err());
        // Scale 2^4 does not fit the 16-bit multiplier.
        assert!(matches!(
            fuse_bn(&BnParams::IDENTITY, 0, 0, -4),
            Err(Error::MultiplierOverflow { .. })
        ));
    }

    #[test]
    fn fused_path_within_one_lsb() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let bn = BnParams {
                gamma: rng.gen_range(0.25..2.0) * if rng.gen_bool(0.2) { -1.0 } else { 1.0 },
                beta: rng.gen_range(-2.0..2.0),
                mean: rng.gen_range(-1.0..1.0),
                var: rng.gen_range(0.1..4.0),
                eps: 1e-5,
            };
            let (in_e, w_e, out_e) = (-6, -7, -4);
            let (r, bias) = fuse_bn(&bn, in_e, w_e, out_e).unwrap();
            let acc: i32 = rng.gen_range(-20_000..20_000);
            let fixed = requantize(Accum(acc + bias), r) as i32;
            let (a, b) = bn.affine();
            let real = a * acc as f64 * 2f64.powi(in_e + w_e) + b;
            let expect = quantize(real, out_e) as i32;
            assert!((fixed - expect).abs() <= 1, "{bn:?} acc={acc}: {fixed} vs {expect}");
        }
    }

    proptest! {
        #[test]
        fn deconv_pe_matches_patch_equations(
            w in prop::array::uniform4(any::<i8>()),
            k in prop::array::uniform9(any::<i8>()),
        ) {
            let win = Window2x2 { if11: w[0], if12: w[1], if21: w[2], if22: w[3] };
            let (px, wt) = deconv_operands(win, &k);
            let PeOutput::Deconv(p) = pe_eval(PeMode::Deconvolution, &px, &wt) else { unreachable!() };
            prop_assert_eq!(p, deconv_patch(win, &Kernel3x3::from_rotated(&k)));
        }
    }
}
