//! One layer on the accelerator: IF bank -> line buffer -> PE array ->
//! partial sums -> bias/requantize -> activation -> pooling -> OF buffer,
//! with every unit's cycles and operations counted.

use std::borrow::Cow;
use std::ops::AddAssign;

use serde::Serialize;

use crate::controller::isa::{LayerCommand, OpKind};
use crate::error::{Error, Result};
use crate::kernels::{weight_storage_bits, KernelSet};
use crate::linebuffer::{LineBuffer, PaddingMode, Window, WindowSize};
use crate::patchdeconv::Window2x2;
use crate::pearray::{HwConfig, LaneWindow, PartialSumStore, PeArray, PeMode, PeOutput};
use crate::qtensor::{requantize, Accum, Activation, PoolKind, QTensor, Shape3};

/// Per-layer counters. Reports from consecutive layers add up.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct CycleReport {
    /// Weight image load, never overlapped with compute.
    pub weight_cycles: u64,
    pub priming_cycles: u64,
    pub compute_cycles: u64,
    pub drain_cycles: u64,
    /// Feature-map DMA, overlapped with compute by the IF double buffer.
    pub transfer_cycles: u64,
    pub total_cycles: u64,
    pub multiplications: u64,
    pub additions: u64,
    pub buffer_reads: u64,
    pub buffer_writes: u64,
}

impl CycleReport {
    /// Fills `total_cycles` from the other cycle fields.
    pub fn close(&mut self) {
        self.total_cycles = self.weight_cycles
            + self.priming_cycles
            + self.compute_cycles
            + self.drain_cycles
            + self.transfer_cycles.saturating_sub(self.compute_cycles);
    }

    pub fn seconds(&self, cfg: &HwConfig) -> f64 {
        self.total_cycles as f64 / cfg.clock_hz() as f64
    }
}

impl AddAssign for CycleReport {
    fn add_assign(&mut self, r: CycleReport) {
        self.weight_cycles += r.weight_cycles;
        self.priming_cycles += r.priming_cycles;
        self.compute_cycles += r.compute_cycles;
        self.drain_cycles += r.drain_cycles;
        self.transfer_cycles += r.transfer_cycles;
        self.total_cycles += r.total_cycles;
        self.multiplications += r.multiplications;
        self.additions += r.additions;
        self.buffer_reads += r.buffer_reads;
        self.buffer_writes += r.buffer_writes;
    }
}

/// Bits a command needs resident in each on-chip buffer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferRequirements {
    /// One IF bank: the padded frame at tile depth.
    pub if_bits: u64,
    /// 32-bit partial sums when accumulating over several passes, final
    /// 8-bit outputs otherwise.
    pub of_bits: u64,
    pub weight_bits: u64,
}

pub fn requirements(cmd: &LayerCommand) -> BufferRequirements {
    let s = cmd.in_shape;
    let (hp, wp) = match cmd.op {
        OpKind::Conv3x3 | OpKind::Deconv2x => cmd.padding.padded_dims(s.height, s.width),
        _ => (s.height, s.width),
    };
    let if_bits = (hp * wp * cmd.tile_depth) as u64 * 8;
    let (of_bits, weight_bits) = match cmd.op {
        OpKind::Conv3x3 | OpKind::Deconv2x => {
            let of = if cmd.passes() > 1 {
                cmd.pre_pool_shape().len() as u64 * 32
            } else {
                cmd.out_shape.len() as u64 * 8
            };
            (of, weight_storage_bits(s.channels, cmd.out_shape.channels))
        }
        _ => (cmd.out_shape.len() as u64 * 8, 0),
    };
    BufferRequirements {
        if_bits,
        of_bits,
        weight_bits,
    }
}

/// Occupancy of the two IF banks, the OF bank and the weight buffer.
#[derive(Debug, Clone)]
pub struct BufferModel {
    if_capacity: u64,
    of_capacity: u64,
    weight_capacity: u64,
    if_used: [u64; 2],
    of_used: u64,
    weight_used: u64,
    filling: Option<usize>,
}

impl BufferModel {
    pub fn new(cfg: &HwConfig) -> Self {
        BufferModel {
            if_capacity: cfg.if_bank_bits(),
            of_capacity: cfg.of_bits(),
            weight_capacity: cfg.weight_bits(),
            if_used: [0; 2],
            of_used: 0,
            weight_used: 0,
            filling: None,
        }
    }

    fn fits(buffer: &'static str, required: u64, capacity: u64) -> Result<()> {
        if required > capacity {
            return Err(Error::CapacityExceeded {
                buffer,
                required_bits: required,
                capacity_bits: capacity,
            });
        }
        Ok(())
    }

    fn bank(bank: usize) -> Result<usize> {
        if bank > 1 {
            return Err(Error::BankConflict(format!("IF bank {bank} does not exist")));
        }
        Ok(bank)
    }

    /// Starts a DMA fill of `bank`.
    pub fn begin_fill(&mut self, bank: usize, bits: u64) -> Result<()> {
        let bank = Self::bank(bank)?;
        Self::fits("IF", bits, self.if_capacity)?;
        if let Some(b) = self.filling {
            return Err(Error::BankConflict(format!("IF bank {b} is still filling")));
        }
        self.if_used[bank] = bits;
        self.filling = Some(bank);
        Ok(())
    }

    pub fn end_fill(&mut self) {
        self.filling = None;
    }

    /// The compute side may only read a bank that is not being written.
    pub fn read_if(&self, bank: usize) -> Result<u64> {
        let bank = Self::bank(bank)?;
        if self.filling == Some(bank) {
            return Err(Error::BankConflict(format!("IF bank {bank} read while filling")));
        }
        Ok(self.if_used[bank])
    }

    pub fn load_weights(&mut self, bits: u64) -> Result<()> {
        Self::fits("weight", bits, self.weight_capacity)?;
        self.weight_used = bits;
        Ok(())
    }

    pub fn reserve_of(&mut self, bits: u64) -> Result<()> {
        Self::fits("OF", bits, self.of_capacity)?;
        self.of_used = bits;
        Ok(())
    }

    pub fn if_used(&self, bank: usize) -> u64 {
        self.if_used[bank.min(1)]
    }

    pub fn of_used(&self) -> u64 {
        self.of_used
    }

    pub fn weight_used(&self) -> u64 {
        self.weight_used
    }
}

/// What the pooling/activation unit did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub priming_cycles: u64,
    pub additions: u64,
}

/// Activation followed by optional 2x2 stride-2 pooling, streamed through
/// a two-row line buffer.
pub fn pool_act(input: &QTensor, pool: PoolKind, act: Activation) -> Result<(QTensor, PoolStats)> {
    if pool == PoolKind::None {
        let mut out = input.clone();
        for v in out.data_mut() {
            *v = act.apply(*v);
        }
        return Ok((out, PoolStats::default()));
    }
    let (h, w, c) = (input.height(), input.width(), input.channels());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimension { height: h, width: w });
    }
    let mut lb = LineBuffer::<u32>::configure_strided(w, h, PaddingMode::NONE, WindowSize::Two, 2)?;
    let mut out = QTensor::zeros(Shape3::new(h / 2, w / 2, c), input.scale_exp());
    let mut wins = Vec::new();
    let src = input.data();
    for p in 0..h * w {
        wins.clear();
        lb.push_into(p as u32, &mut wins)?;
        for win in &wins {
            for ch in 0..c {
                let block: [i8; 4] = std::array::from_fn(|i| {
                    let px = win.cells[i].expect("no padding") as usize;
                    act.apply(src[px * c + ch])
                });
                out.set(win.row, win.col, ch, pool.reduce(block));
            }
        }
    }
    let additions = if pool == PoolKind::Avg { 3 * out.data().len() as u64 } else { 0 };
    Ok((
        out,
        PoolStats {
            priming_cycles: lb.priming_cycles().unwrap_or(0),
            additions,
        },
    ))
}

fn conv_lane(win: &Window<u32>, src: &[i8], channels: usize, ci: usize) -> LaneWindow {
    LaneWindow::Conv(std::array::from_fn(|i| {
        win.cells[i].map_or(0, |p| src[p as usize * channels + ci])
    }))
}

fn deconv_lane(win: &Window<u32>, src: &[i8], channels: usize, ci: usize) -> LaneWindow {
    let at = |i: usize| win.cells[i].map_or(0, |p| src[p as usize * channels + ci]);
    LaneWindow::Deconv(Window2x2 {
        if11: at(0),
        if12: at(1),
        if21: at(2),
        if22: at(3),
    })
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// Executes one command. `weights` is required for conv and deconv and
/// ignored otherwise.
pub fn run_layer(
    cmd: &LayerCommand,
    input: &QTensor,
    weights: Option<&KernelSet>,
    cfg: &HwConfig,
) -> Result<(QTensor, CycleReport)> {
    cmd.validate()?;
    if input.shape() != cmd.in_shape {
        return Err(Error::shape(format!(
            "input {} does not match command input {}",
            input.shape(),
            cmd.in_shape
        )));
    }
    if cmd.unroll != (cfg.tn(), cfg.tm()) {
        return Err(Error::InvalidConfig(format!(
            "command compiled for {}x{} unroll, hardware is {}x{}",
            cmd.unroll.0,
            cmd.unroll.1,
            cfg.tn(),
            cfg.tm()
        )));
    }
    let req = requirements(cmd);
    let mut buffers = BufferModel::new(cfg);
    buffers.load_weights(req.weight_bits)?;
    buffers.begin_fill(cmd.if_bank, req.if_bits)?;
    buffers.end_fill();
    buffers.reserve_of(req.of_bits)?;
    // The next layer's input streams into the other bank meanwhile.
    buffers.begin_fill(1 - cmd.if_bank, 0)?;
    buffers.read_if(cmd.if_bank)?;

    let (out, mut report) = match cmd.op {
        OpKind::Conv3x3 | OpKind::Deconv2x => {
            let ks = weights.ok_or_else(|| Error::InvalidArgument(format!("{} without weights", cmd.op)))?;
            run_compute(cmd, input, ks, cfg)?
        }
        OpKind::MaxPool | OpKind::AvgPool => run_pool(cmd, input, cfg)?,
        OpKind::Identity => {
            let out = input.clone().with_scale_exp(cmd.post.out_scale_exp);
            let n = input.data().len() as u64;
            let r = CycleReport {
                buffer_reads: n,
                buffer_writes: n,
                ..CycleReport::default()
            };
            (out, r)
        }
    };
    let stream = cfg.stream_bits();
    report.transfer_cycles = div_ceil(input.data().len() as u64 * 8, stream).max(div_ceil(out.data().len() as u64 * 8, stream));
    report.close();
    Ok((out, report))
}

fn run_pool(cmd: &LayerCommand, input: &QTensor, cfg: &HwConfig) -> Result<(QTensor, CycleReport)> {
    let pool = if cmd.op == OpKind::MaxPool { PoolKind::Max } else { PoolKind::Avg };
    let (out, stats) = pool_act(input, pool, cmd.post.activation)?;
    let s = cmd.in_shape;
    let r = CycleReport {
        priming_cycles: stats.priming_cycles,
        compute_cycles: (s.height * s.width) as u64 * div_ceil(s.channels as u64, cfg.tm() as u64),
        additions: stats.additions,
        buffer_reads: input.data().len() as u64,
        buffer_writes: out.data().len() as u64,
        ..CycleReport::default()
    };
    Ok((out.with_scale_exp(cmd.post.out_scale_exp), r))
}

fn run_compute(cmd: &LayerCommand, input: &QTensor, ks: &KernelSet, cfg: &HwConfig) -> Result<(QTensor, CycleReport)> {
    ks.validate()?;
    let kind = cmd.op.compute_kind().expect("compute op");
    if ks.kind != kind || ks.in_channels != cmd.in_shape.channels || ks.out_channels != cmd.out_shape.channels {
        return Err(Error::shape(format!(
            "{} {}x{} weights for {} {} -> {}",
            ks.kind, ks.in_channels, ks.out_channels, cmd.op, cmd.in_shape, cmd.out_shape
        )));
    }
    let (mode, window, beats) = match cmd.op {
        OpKind::Conv3x3 => (PeMode::Convolution, WindowSize::Three, 1u64),
        _ => (PeMode::Deconvolution, WindowSize::Two, 4u64),
    };
    let kernels: Cow<'_, KernelSet> = match mode {
        PeMode::Convolution => Cow::Borrowed(ks),
        PeMode::Deconvolution => ks.rotated_for_deconv(),
    };
    let lane: fn(&Window<u32>, &[i8], usize, usize) -> LaneWindow = match mode {
        PeMode::Convolution => conv_lane,
        PeMode::Deconvolution => deconv_lane,
    };
    let (h, w, cin) = (input.height(), input.width(), input.channels());
    let cout = ks.out_channels;
    let pre = cmd.pre_pool_shape();
    let k = window.k();
    let (tn, out_lanes) = (cfg.tn(), cfg.out_lanes());
    let src = input.data();

    let mut pe = PeArray::new(cfg, mode);
    let mut psum = PartialSumStore::new(pre.len());
    let mut report = CycleReport::default();
    let mut wins = Vec::new();
    let mut lanes = Vec::with_capacity(tn);
    let mut outs = vec![PeOutput::Conv(0); out_lanes];
    let mut priming = None;

    for pass in 0..cmd.passes() {
        let chans = cmd.pass_channels(pass);
        let mut lb = LineBuffer::<u32>::configure(w, h, cmd.padding, window)?;
        for p in 0..h * w {
            wins.clear();
            lb.push_into(p as u32, &mut wins)?;
            for win in &wins {
                let vectors = if win.col == 0 { k } else { 1 };
                report.buffer_reads += (vectors * chans.len()) as u64;
                for g0 in chans.clone().step_by(tn) {
                    let g1 = (g0 + tn).min(chans.end);
                    lanes.clear();
                    lanes.extend((g0..g1).map(|ci| lane(win, src, cin, ci)));
                    for o0 in (0..cout).step_by(out_lanes) {
                        let n_o = out_lanes.min(cout - o0);
                        pe.array_cycle(&lanes, |o, i| kernels.kernel(o0 + o, g0 + i), &mut outs[..n_o])?;
                        report.compute_cycles += beats;
                        for (o, r) in outs[..n_o].iter().enumerate() {
                            let co = o0 + o;
                            match r {
                                PeOutput::Conv(v) => {
                                    psum.accumulate((win.row * pre.width + win.col) * cout + co, *v)?;
                                }
                                PeOutput::Deconv(patch) => {
                                    for (i, v) in patch.as_array().into_iter().enumerate() {
                                        let (y, x) = (2 * win.row + i / 2, 2 * win.col + i % 2);
                                        psum.accumulate((y * pre.width + x) * cout + co, v)?;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let per_window = if mode == PeMode::Deconvolution { 4 } else { 1 };
        if !lb.is_complete() || lb.windows_emitted() * per_window != pre.pixels() {
            return Err(Error::shape(format!("line buffer left {} incomplete", cmd.in_shape)));
        }
        priming.get_or_insert(lb.priming_cycles().unwrap_or(0));
    }
    report.priming_cycles = priming.unwrap_or(0);
    report.buffer_writes = (cmd.passes() * pre.len()) as u64;

    let accumulations = psum.accumulations();
    let sums = psum.into_data();
    let mut pre_q = Vec::with_capacity(sums.len());
    for (i, s) in sums.into_iter().enumerate() {
        let co = i % cout;
        pre_q.push(requantize(Accum(s).checked_add(ks.bias[co])?, ks.requant[co]));
    }
    let pre_q = QTensor::new(pre, cmd.post.out_scale_exp, pre_q)?;
    let (out, stats) = pool_act(&pre_q, cmd.post.pool, cmd.post.activation)?;

    let pe_stats = pe.stats();
    report.multiplications = pe_stats.multiplications;
    report.additions = pe_stats.additions + accumulations + pre.len() as u64 + stats.additions;
    report.drain_cycles = stats.priming_cycles;
    report.weight_cycles = div_ceil(ks.storage_bits(), cfg.stream_bits());
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::isa::PostOps;
    use crate::kernels::ComputeKind;
    use crate::oracle::{bn_act_ref, layer_acc_ref, maxpool_ref};
    use crate::pearray::HwParams;
    use crate::qtensor::Requant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn command(op: OpKind, pad: PaddingMode, input: Shape3, cout: usize, tile_depth: usize, post: PostOps) -> LayerCommand {
        let mut cmd = LayerCommand {
            op,
            padding: pad,
            in_shape: input,
            out_shape: input,
            tile_depth,
            unroll: (8, 8),
            weight_slot: op.compute_kind().map(|_| 0),
            if_bank: 0,
            of_bank: 0,
            post,
        };
        cmd.out_shape.channels = cout;
        let pre = cmd.pre_pool_shape();
        cmd.out_shape = if post.pool == PoolKind::None && !matches!(op, OpKind::MaxPool | OpKind::AvgPool) {
            pre
        } else {
            Shape3::new(pre.height / 2, pre.width / 2, pre.channels)
        };
        cmd
    }

    fn random_ks(rng: &mut ChaCha8Rng, kind: ComputeKind, cin: usize, cout: usize) -> KernelSet {
        let w = (0..cin * cout * 9).map(|_| rng.gen()).collect();
        let bias = (0..cout).map(|_| rng.gen_range(-500..500)).collect();
        let rq = (0..cout)
            .map(|_| Requant::new(rng.gen_range(1000..32767), rng.gen_range(4..10)).unwrap())
            .collect();
        KernelSet::new(kind, cin, cout, -7, w, bias, rq).unwrap()
    }

    fn random_input(rng: &mut ChaCha8Rng, s: Shape3) -> QTensor {
        QTensor::from_fn(s, -7, |_, _, _| rng.gen())
    }

    fn reference(cmd: &LayerCommand, input: &QTensor, ks: &KernelSet) -> QTensor {
        let (acc, _) = layer_acc_ref(input, ks, cmd.padding).unwrap();
        let q = bn_act_ref(&acc, &ks.requant, None, cmd.post.activation, cmd.post.out_scale_exp).unwrap();
        match cmd.post.pool {
            PoolKind::None => q,
            PoolKind::Max => maxpool_ref(&q).unwrap(),
            PoolKind::Avg => crate::oracle::avgpool_ref(&q).unwrap(),
        }
    }

    #[test]
    fn degenerate_single_pixel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = Shape3::new(1, 1, 3);
        let cmd = command(OpKind::Conv3x3, PaddingMode::ALL, s, 2, 3, PostOps::default());
        let ks = random_ks(&mut rng, ComputeKind::Conv3x3, 3, 2);
        let input = random_input(&mut rng, s);
        let (out, r) = run_layer(&cmd, &input, Some(&ks), &HwConfig::default()).unwrap();
        assert_eq!(out.shape(), Shape3::new(1, 1, 2));
        assert_eq!(r.compute_cycles, 1);
        assert_eq!(out, reference(&cmd, &input, &ks));
    }

    #[test]
    fn parity_example_cycles() {
        let cfg = HwConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = command(OpKind::Conv3x3, PaddingMode::ALL, Shape3::new(90, 120, 8), 8, 8, PostOps::default());
        let ks = random_ks(&mut rng, ComputeKind::Conv3x3, 8, 8);
        let (_, rc) = run_layer(&conv, &random_input(&mut rng, conv.in_shape), Some(&ks), &cfg).unwrap();
        let de = command(OpKind::Deconv2x, PaddingMode::TOP_LEFT, Shape3::new(45, 60, 8), 8, 8, PostOps::default());
        let kd = random_ks(&mut rng, ComputeKind::Deconv2x, 8, 8);
        let (out, rd) = run_layer(&de, &random_input(&mut rng, de.in_shape), Some(&kd), &cfg).unwrap();
        assert_eq!(out.shape(), Shape3::new(90, 120, 8));
        assert_eq!(rc.compute_cycles, 10800);
        assert_eq!(rd.compute_cycles, 10800);
        assert_eq!(rc.priming_cycles, 2 * 122 + 3);
        assert_eq!(rd.priming_cycles, 61 + 2);
        assert_eq!(rc.multiplications, 9 * 90 * 120 * 64);
        assert_eq!(rd.multiplications, 9 * 45 * 60 * 64);
    }

    #[test]
    fn conv_and_deconv_match_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = HwConfig::default();
        for i in 0..12 {
            let s = Shape3::new(2 * rng.gen_range(1..5), 2 * rng.gen_range(1..5), rng.gen_range(1..20));
            let cout = rng.gen_range(1..12);
            let td = rng.gen_range(1..=s.channels.min(8));
            let post = PostOps {
                activation: [Activation::None, Activation::Relu, Activation::LEAKY_DEFAULT][i % 3],
                pool: [PoolKind::None, PoolKind::Max, PoolKind::Avg][(i / 3) % 3],
                out_scale_exp: -5,
            };
            let (op, pad, kind) = if i % 2 == 0 {
                (OpKind::Conv3x3, PaddingMode::ALL, ComputeKind::Conv3x3)
            } else {
                (OpKind::Deconv2x, PaddingMode::TOP_LEFT, ComputeKind::Deconv2x)
            };
            let cmd = command(op, pad, s, cout, td, post);
            let ks = random_ks(&mut rng, kind, s.channels, cout);
            let input = random_input(&mut rng, s);
            let (out, _) = run_layer(&cmd, &input, Some(&ks), &cfg).unwrap();
            assert_eq!(out, reference(&cmd, &input, &ks), "case {i}: {cmd}");
        }
    }

    #[test]
    fn pool_act_examples() {
        let t = QTensor::new(Shape3::new(2, 2, 1), 0, vec![-1, 2, 3, -4]).unwrap();
        let (o, s) = pool_act(&t, PoolKind::Max, Activation::Relu).unwrap();
        assert_eq!(o.data(), &[3]);
        assert_eq!(s.priming_cycles, 4);
        let (o, _) = pool_act(&t, PoolKind::None, Activation::None).unwrap();
        assert_eq!(o, t);
        let odd = QTensor::zeros(Shape3::new(3, 2, 1), 0);
        assert!(matches!(pool_act(&odd, PoolKind::Max, Activation::None), Err(Error::OddDimension { .. })));
    }

    #[test]
    fn relu_commutes_with_max_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = QTensor::from_fn(Shape3::new(6, 8, 3), 0, |_, _, _| rng.gen());
        let (a, _) = pool_act(&t, PoolKind::Max, Activation::Relu).unwrap();
        let (pooled, _) = pool_act(&t, PoolKind::Max, Activation::None).unwrap();
        let (b, _) = pool_act(&pooled, PoolKind::None, Activation::Relu).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn capacity_and_bank_errors() {
        let cfg = HwConfig::new(HwParams {
            if_bank_bits: 100,
            ..HwParams::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = Shape3::new(4, 4, 2);
        let cmd = command(OpKind::Conv3x3, PaddingMode::ALL, s, 2, 2, PostOps::default());
        let ks = random_ks(&mut rng, ComputeKind::Conv3x3, 2, 2);
        let r = run_layer(&cmd, &random_input(&mut rng, s), Some(&ks), &cfg);
        assert!(matches!(r, Err(Error::CapacityExceeded { buffer: "IF", .. })));

        let mut m = BufferModel::new(&HwConfig::default());
        m.begin_fill(1, 8).unwrap();
        assert!(m.read_if(0).is_ok());
        assert!(matches!(m.read_if(1), Err(Error::BankConflict(_))));
        assert!(m.begin_fill(0, 8).is_err());
        m.end_fill();
        assert_eq!(m.read_if(1).unwrap(), 8);
    }

    #[test]
    fn double_buffering_hides_small_transfers() {
        let mut r = CycleReport {
            priming_cycles: 10,
            compute_cycles: 100,
            ..CycleReport::default()
        };
        for t in [0, 50, 100] {
            r.transfer_cycles = t;
            r.close();
            assert_eq!(r.total_cycles, 110);
        }
        r.transfer_cycles = 130;
        r.close();
        assert_eq!(r.total_cycles, 140);
    }

    #[test]
    fn identity_and_pool_commands() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = Shape3::new(4, 6, 3);
        let input = random_input(&mut rng, s);
        let post = PostOps {
            out_scale_exp: -7,
            ..PostOps::default()
        };
        let id = command(OpKind::Identity, PaddingMode::NONE, s, 3, 3, post);
        let (o, r) = run_layer(&id, &input, None, &HwConfig::default()).unwrap();
        assert_eq!(o, input);
        assert_eq!(r.compute_cycles, 0);
        assert_eq!(r.total_cycles, r.transfer_cycles);
        let mp = command(OpKind::MaxPool, PaddingMode::NONE, s, 3, 3, post);
        let (o, r) = run_layer(&mp, &input, None, &HwConfig::default()).unwrap();
        assert_eq!(o, maxpool_ref(&input).unwrap());
        assert_eq!(r.compute_cycles, 24);
        assert_eq!(r.priming_cycles, 8);
    }

    #[test]
    fn determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = Shape3::new(6, 6, 9);
        let cmd = command(OpKind::Conv3x3, PaddingMode::ALL, s, 5, 4, PostOps::default());
        let ks = random_ks(&mut rng, ComputeKind::Conv3x3, 9, 5);
        let input = random_input(&mut rng, s);
        let a = run_layer(&cmd, &input, Some(&ks), &HwConfig::default()).unwrap();
        let b = run_layer(&cmd, &input, Some(&ks), &HwConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
