//! Stride-2, 3x3 deconvolution as independent 2x2 patches.
//!
//! After one zero row is prepended on top and one zero column on the left,
//! every stride-1 2x2 window `[[IF11, IF12], [IF21, IF22]]` of the input
//! determines a disjoint 2x2 block of the doubled output through
//!
//! ```text
//! OF11 = IF11*K11 + IF12*K13 + IF21*K31 + IF22*K33
//! OF12 = IF12*K12 + IF22*K32
//! OF21 = IF21*K21 + IF22*K23
//! OF22 = IF22*K22
//! ```
//!
//! with `K` the 180-degree-rotated kernel: nine multiplications per patch
//! instead of the 36 a zero-inserted convolution spends on the same four
//! outputs.

use crate::error::{Error, Result};
use crate::kernels::KernelSet;
use crate::oracle::OpCounters;
use crate::qtensor::{AccTensor, Accum, QTensor, Shape3};

/// One input channel's 2x2 neighborhood from the padded input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Window2x2 {
    pub if11: i8,
    pub if12: i8,
    pub if21: i8,
    pub if22: i8,
}

impl Window2x2 {
    pub fn new(rows: [[i8; 2]; 2]) -> Self {
        Window2x2 {
            if11: rows[0][0],
            if12: rows[0][1],
            if21: rows[1][0],
            if22: rows[1][1],
        }
    }
}

/// A 3x3 kernel already rotated by 180 degrees. `k(1, 1)` is K11.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Kernel3x3(pub [[i8; 3]; 3]);

impl Kernel3x3 {
    /// Wraps taps that are already in rotated orientation.
    pub fn from_rotated(taps: &[i8; 9]) -> Self {
        let mut k = [[0i8; 3]; 3];
        for (i, &t) in taps.iter().enumerate() {
            k[i / 3][i % 3] = t;
        }
        Kernel3x3(k)
    }

    /// One-based tap accessor matching the K11..K33 naming.
    #[inline]
    pub fn k(&self, row: usize, col: usize) -> i8 {
        self.0[row - 1][col - 1]
    }

    pub fn taps(&self) -> [i8; 9] {
        let mut t = [0; 9];
        for (i, v) in t.iter_mut().enumerate() {
            *v = self.0[i / 3][i % 3];
        }
        t
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Patch2x2 {
    pub of11: i32,
    pub of12: i32,
    pub of21: i32,
    pub of22: i32,
}

impl Patch2x2 {
    pub fn as_array(&self) -> [i32; 4] {
        [self.of11, self.of12, self.of21, self.of22]
    }
}

/// `output(u, v) = input(2 - u, 2 - v)`.
pub fn rotate180(weights: [[i8; 3]; 3]) -> Kernel3x3 {
    let mut k = [[0i8; 3]; 3];
    for (u, row) in k.iter_mut().enumerate() {
        for (v, tap) in row.iter_mut().enumerate() {
            *tap = weights[2 - u][2 - v];
        }
    }
    Kernel3x3(k)
}

/// Prepends one zero row and one zero column: `h x w` becomes
/// `(h + 1) x (w + 1)`.
pub fn pad_for_patches(input: &QTensor) -> QTensor {
    let shape = Shape3::new(input.height() + 1, input.width() + 1, input.channels());
    QTensor::from_fn(shape, input.scale_exp(), |y, x, c| {
        if y == 0 || x == 0 {
            0
        } else {
            input.get(y - 1, x - 1, c)
        }
    })
}

/// Evaluates the four patch equations. Always 9 multiplications and 5
/// additions.
#[inline]
pub fn deconv_patch(win: Window2x2, k: &Kernel3x3) -> Patch2x2 {
    let m = |a: i8, b: i8| a as i32 * b as i32;
    Patch2x2 {
        of11: m(win.if11, k.k(1, 1)) + m(win.if12, k.k(1, 3)) + m(win.if21, k.k(3, 1)) + m(win.if22, k.k(3, 3)),
        of12: m(win.if12, k.k(1, 2)) + m(win.if22, k.k(3, 2)),
        of21: m(win.if21, k.k(2, 1)) + m(win.if22, k.k(2, 3)),
        of22: m(win.if22, k.k(2, 2)),
    }
}

pub const PATCH_MULTIPLICATIONS: u64 = 9;
pub const PATCH_ADDITIONS: u64 = 5;

/// Size-doubling deconvolution: `h x w x Cin` to `2h x 2w x Cout`.
///
/// Patches from all input channels are summed at accumulator precision and
/// the bias is added once per output pixel when the sum closes.
pub fn deconv_full(input: &QTensor, weights: &KernelSet) -> Result<(AccTensor, OpCounters)> {
    weights.validate()?;
    if input.channels() != weights.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, kernels expect {}",
            input.channels(),
            weights.in_channels
        )));
    }
    let rotated = weights.rotated_for_deconv();
    let kernels: Vec<Kernel3x3> = (0..weights.out_channels)
        .flat_map(|co| (0..weights.in_channels).map(move |ci| (co, ci)))
        .map(|(co, ci)| Kernel3x3::from_rotated(rotated.kernel(co, ci)))
        .collect();

    let padded = pad_for_patches(input);
    let (h, w, cin, cout) = (input.height(), input.width(), weights.in_channels, weights.out_channels);
    let shape = Shape3::new(2 * h, 2 * w, cout);
    let mut sums = vec![Accum::ZERO; shape.len()];
    let mut counters = OpCounters::default();

    for r in 0..h {
        for c in 0..w {
            for ci in 0..cin {
                let win = Window2x2 {
                    if11: padded.get(r, c, ci),
                    if12: padded.get(r, c + 1, ci),
                    if21: padded.get(r + 1, c, ci),
                    if22: padded.get(r + 1, c + 1, ci),
                };
                counters.loads += 4;
                for co in 0..cout {
                    let p = deconv_patch(win, &kernels[co * cin + ci]);
                    counters.multiplications += PATCH_MULTIPLICATIONS;
                    counters.additions += PATCH_ADDITIONS + 4;
                    for (i, v) in p.as_array().into_iter().enumerate() {
                        let (y, x) = (2 * r + i / 2, 2 * c + i % 2);
                        let idx = (y * shape.width + x) * cout + co;
                        sums[idx] = sums[idx].checked_add(v)?;
                    }
                }
            }
        }
    }

    let mut data = Vec::with_capacity(shape.len());
    for (i, s) in sums.into_iter().enumerate() {
        data.push(s.checked_add(weights.bias[i % cout])?.value());
    }
    counters.additions += shape.len() as u64;
    counters.stores += shape.len() as u64;
    Ok((AccTensor::new(shape, data)?, counters))
}

/// The `(2h - 1) x (2w - 1)` variant, cropped from the doubled output.
pub fn deconv_full_odd(input: &QTensor, weights: &KernelSet) -> Result<AccTensor> {
    let (full, _) = deconv_full(input, weights)?;
    Ok(full.crop_leading(1, 1))
}
