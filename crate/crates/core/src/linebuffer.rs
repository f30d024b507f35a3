//! Stream-to-window conversion.
//!
//! Pixels arrive in raster order. A padding controller walks the padded
//! raster one element slot per cycle and either feeds the next real pixel or
//! injects a zero, according to the pre-loaded [`PaddingMode`]. Each element
//! enters K-1 cascaded row FIFOs; the popped column vector shifts into a KxK
//! register grid, which is emitted as a window once it holds a complete
//! region.
//!
//! The buffer is geometry-only: payloads are opaque and injected zeros are
//! represented as `None`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::qtensor::QTensor;

/// Zero-padding edges for one feature-map tile. One zero row or column per
/// selected edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PaddingMode {
    top: bool,
    bottom: bool,
    left: bool,
    right: bool,
}

impl PaddingMode {
    pub const NONE: PaddingMode = PaddingMode::raw(false, false, false, false);
    pub const ALL: PaddingMode = PaddingMode::raw(true, true, true, true);
    /// Top row and left column: the pre-pad for size-doubling deconvolution.
    pub const TOP_LEFT: PaddingMode = PaddingMode::raw(true, false, true, false);

    const fn raw(top: bool, bottom: bool, left: bool, right: bool) -> Self {
        PaddingMode {
            top,
            bottom,
            left,
            right,
        }
    }

    /// The 13 supported modes: interior, four edges and four corners of a
    /// 2-D tiling, plus the full-width row bands (middle, top, bottom) and
    /// the whole map.
    pub const SUPPORTED: [PaddingMode; 13] = [
        PaddingMode::raw(false, false, false, false),
        PaddingMode::raw(true, false, false, false),
        PaddingMode::raw(false, true, false, false),
        PaddingMode::raw(false, false, true, false),
        PaddingMode::raw(false, false, false, true),
        PaddingMode::raw(true, false, true, false),
        PaddingMode::raw(true, false, false, true),
        PaddingMode::raw(false, true, true, false),
        PaddingMode::raw(false, true, false, true),
        PaddingMode::raw(false, false, true, true),
        PaddingMode::raw(true, false, true, true),
        PaddingMode::raw(false, true, true, true),
        PaddingMode::raw(true, true, true, true),
    ];

    pub fn new(top: bool, bottom: bool, left: bool, right: bool) -> Result<Self> {
        let m = PaddingMode::raw(top, bottom, left, right);
        if PaddingMode::SUPPORTED.contains(&m) {
            Ok(m)
        } else {
            Err(Error::InvalidPaddingMode(m.to_string()))
        }
    }

    pub fn top(&self) -> bool {
        self.top
    }
    pub fn bottom(&self) -> bool {
        self.bottom
    }
    pub fn left(&self) -> bool {
        self.left
    }
    pub fn right(&self) -> bool {
        self.right
    }

    pub fn extra_rows(&self) -> usize {
        self.top as usize + self.bottom as usize
    }

    pub fn extra_cols(&self) -> usize {
        self.left as usize + self.right as usize
    }

    pub fn padded_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height + self.extra_rows(), width + self.extra_cols())
    }

    /// Index into [`PaddingMode::SUPPORTED`].
    pub fn code(&self) -> usize {
        PaddingMode::SUPPORTED
            .iter()
            .position(|m| m == self)
            .expect("constructed modes are supported")
    }
}

impl fmt::Display for PaddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == PaddingMode::NONE {
            return f.write_str("none");
        }
        for (set, c) in [(self.top, 'T'), (self.bottom, 'B'), (self.left, 'L'), (self.right, 'R')] {
            if set {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" || s.is_empty() {
            return Ok(PaddingMode::NONE);
        }
        let (mut t, mut b, mut l, mut r) = (false, false, false, false);
        for c in s.chars() {
            let slot = match c.to_ascii_uppercase() {
                'T' => &mut t,
                'B' => &mut b,
                'L' => &mut l,
                'R' => &mut r,
                _ => return Err(Error::InvalidPaddingMode(s.to_string())),
            };
            if *slot {
                return Err(Error::InvalidPaddingMode(s.to_string()));
            }
            *slot = true;
        }
        PaddingMode::new(t, b, l, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowSize {
    Two = 2,
    Three = 3,
}

impl WindowSize {
    pub fn k(self) -> usize {
        self as usize
    }
}

/// A KxK region of the padded raster. `row`/`col` locate its top-left
/// corner; cells are row-major, `None` for injected zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window<T> {
    pub row: usize,
    pub col: usize,
    pub k: usize,
    pub cells: Vec<Option<T>>,
}

impl<T> Window<T> {
    pub fn cell(&self, u: usize, v: usize) -> Option<&T> {
        self.cells[u * self.k + v].as_ref()
    }
}

/// Occupancy view of one row FIFO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FifoStatus {
    pub len: usize,
    pub capacity: usize,
    pub empty: bool,
    pub full: bool,
}

#[derive(Debug, Clone)]
pub struct LineBuffer<T> {
    width: usize,
    height: usize,
    mode: PaddingMode,
    k: usize,
    stride: usize,
    padded_w: usize,
    padded_h: usize,
    fifos: Vec<VecDeque<Option<T>>>,
    // k x k shift registers, row-major; column k-1 is the newest.
    grid: Vec<Option<T>>,
    pending: VecDeque<T>,
    slot: usize,
    pixels_in: usize,
    pushed: usize,
    first_window_slot: Option<u64>,
    windows_emitted: usize,
}

impl<T: Clone> LineBuffer<T> {
    /// An empty buffer sized for one `width` x `height` frame.
    pub fn configure(width: usize, height: usize, mode: PaddingMode, window: WindowSize) -> Result<Self> {
        Self::configure_strided(width, height, mode, window, 1)
    }

    /// As [`LineBuffer::configure`], keeping only every `stride`-th window in
    /// each dimension.
    pub fn configure_strided(
        width: usize,
        height: usize,
        mode: PaddingMode,
        window: WindowSize,
        stride: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "line buffer geometry {height}x{width}"
            )));
        }
        if !(1..=2).contains(&stride) {
            return Err(Error::InvalidArgument(format!("window stride {stride}")));
        }
        let k = window.k();
        let (padded_h, padded_w) = mode.padded_dims(height, width);
        Ok(LineBuffer {
            width,
            height,
            mode,
            k,
            stride,
            padded_w,
            padded_h,
            fifos: (0..k - 1).map(|_| VecDeque::with_capacity(padded_w)).collect(),
            grid: vec![None; k * k],
            pending: VecDeque::new(),
            slot: 0,
            pixels_in: 0,
            pushed: 0,
            first_window_slot: None,
            windows_emitted: 0,
        })
    }

    pub fn padded_width(&self) -> usize {
        self.padded_w
    }

    pub fn padded_height(&self) -> usize {
        self.padded_h
    }

    pub fn mode(&self) -> PaddingMode {
        self.mode
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Element slots of the padded raster processed so far.
    pub fn cycles(&self) -> u64 {
        self.slot as u64
    }

    /// Slots that had entered when the first window came out.
    pub fn priming_cycles(&self) -> Option<u64> {
        self.first_window_slot
    }

    pub fn windows_emitted(&self) -> usize {
        self.windows_emitted
    }

    /// Real pixels that have entered the FIFOs.
    pub fn pixels_consumed(&self) -> usize {
        self.pixels_in
    }

    pub fn is_complete(&self) -> bool {
        self.slot == self.padded_w * self.padded_h
    }

    pub fn fifo_status(&self, i: usize) -> FifoStatus {
        let len = self.fifos[i].len();
        FifoStatus {
            len,
            capacity: self.padded_w,
            empty: len == 0,
            full: len == self.padded_w,
        }
    }

    pub fn fifo_count(&self) -> usize {
        self.fifos.len()
    }

    /// Window positions per dimension for this geometry and stride.
    pub fn window_grid(&self) -> (usize, usize) {
        let span = |n: usize| {
            if n < self.k {
                0
            } else {
                (n - self.k) / self.stride + 1
            }
        };
        (span(self.padded_h), span(self.padded_w))
    }

    fn is_pad(&self, r: usize, c: usize) -> bool {
        (self.mode.top && r == 0)
            || (self.mode.bottom && r == self.padded_h - 1)
            || (self.mode.left && c == 0)
            || (self.mode.right && c == self.padded_w - 1)
    }

    /// Advances one slot if possible. Returns `None` when stalled on input
    /// or when the frame is complete.
    fn step(&mut self) -> Option<Option<Window<T>>> {
        if self.is_complete() {
            return None;
        }
        let (r, c) = (self.slot / self.padded_w, self.slot % self.padded_w);
        let element = if self.is_pad(r, c) {
            None
        } else {
            let px = self.pending.pop_front()?;
            self.pixels_in += 1;
            Some(px)
        };
        self.slot += 1;

        // Column vector, oldest row first.
        let k = self.k;
        let mut column: Vec<Option<T>> = vec![None; k];
        let mut carry = element;
        for (i, fifo) in self.fifos.iter_mut().enumerate() {
            let popped = if fifo.len() == self.padded_w {
                fifo.pop_front().expect("full fifo")
            } else {
                None
            };
            column[k - 1 - i] = carry.clone();
            fifo.push_back(carry);
            carry = popped;
        }
        column[0] = carry;

        for u in 0..k {
            let row = &mut self.grid[u * k..(u + 1) * k];
            row.rotate_left(1);
            row[k - 1] = column[u].take();
        }

        let complete = r + 1 >= k && c + 1 >= k;
        if !complete {
            return Some(None);
        }
        let (top, left) = (r + 1 - k, c + 1 - k);
        if top % self.stride != 0 || left % self.stride != 0 {
            return Some(None);
        }
        if self.first_window_slot.is_none() {
            self.first_window_slot = Some(self.slot as u64);
        }
        self.windows_emitted += 1;
        Some(Some(Window {
            row: top / self.stride,
            col: left / self.stride,
            k,
            cells: self.grid.clone(),
        }))
    }

    fn drain(&mut self, out: &mut Vec<Window<T>>) {
        while let Some(emitted) = self.step() {
            if let Some(w) = emitted {
                out.push(w);
            }
        }
    }

    /// Feeds one real pixel and runs the padding controller until it needs
    /// the next one, appending every window completed on the way (at most
    /// one per slot). Trailing padding is flushed after the final pixel.
    pub fn push_into(&mut self, pixel: T, out: &mut Vec<Window<T>>) -> Result<()> {
        if self.pushed >= self.width * self.height || self.is_complete() {
            return Err(Error::FrameComplete);
        }
        self.pushed += 1;
        self.pending.push_back(pixel);
        self.drain(out);
        Ok(())
    }

    pub fn push(&mut self, pixel: T) -> Result<Vec<Window<T>>> {
        let mut out = Vec::new();
        self.push_into(pixel, &mut out)?;
        Ok(out)
    }
}

/// A materialized KxK window over all channels, `(u, v, channel)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QWindow {
    pub row: usize,
    pub col: usize,
    pub k: usize,
    pub channels: usize,
    pub data: Vec<i8>,
}

impl QWindow {
    pub fn get(&self, u: usize, v: usize, c: usize) -> i8 {
        self.data[(u * self.k + v) * self.channels + c]
    }
}

/// Every stride-1 window of `input` under `mode`, in raster order, obtained
/// by streaming the tensor through a [`LineBuffer`].
pub fn window_stream(input: &QTensor, mode: PaddingMode, window: WindowSize) -> Result<Vec<QWindow>> {
    let mut lb = LineBuffer::<usize>::configure(input.width(), input.height(), mode, window)?;
    let mut raw = Vec::new();
    for p in 0..input.height() * input.width() {
        lb.push_into(p, &mut raw)?;
    }
    let ch = input.channels();
    Ok(raw
        .into_iter()
        .map(|w| {
            let mut data = Vec::with_capacity(w.k * w.k * ch);
            for cell in &w.cells {
                match cell {
                    Some(p) => data.extend_from_slice(&input.data()[p * ch..(p + 1) * ch]),
                    None => data.extend(std::iter::repeat(0).take(ch)),
                }
            }
            QWindow {
                row: w.row,
                col: w.col,
                k: w.k,
                channels: ch,
                data,
            }
        })
        .collect())
}
