//! Closed-form cycle, throughput and resource model.

use std::fmt::Write as _;

use serde::Serialize;

use crate::controller::isa::{LayerCommand, OpKind, PostOps, Program};
use crate::datapath::CycleReport;
use crate::error::{Error, Result};
use crate::kernels::weight_storage_bits;
use crate::linebuffer::PaddingMode;
use crate::pearray::HwConfig;
use crate::qtensor::{Activation, PoolKind, Shape3};

/// Multiply and add per multiplier per cycle.
pub fn peak_gops(cfg: &HwConfig) -> f64 {
    2.0 * cfg.multipliers() as f64 * cfg.clock_hz() as f64 / 1e9
}

pub fn dsp_equiv(cfg: &HwConfig) -> u64 {
    cfg.multipliers()
}

/// Counted operations (two per useful multiplication) over wall time.
pub fn effective_gops(report: &CycleReport, cfg: &HwConfig) -> Result<f64> {
    if report.total_cycles == 0 {
        return Err(Error::InvalidArgument("zero-cycle report".into()));
    }
    Ok(2.0 * report.multiplications as f64 * cfg.clock_hz() as f64 / report.total_cycles as f64 / 1e9)
}

/// Fraction of multiplier-cycles doing useful work.
pub fn utilization(report: &CycleReport, cfg: &HwConfig) -> f64 {
    if report.total_cycles == 0 {
        return 0.0;
    }
    report.multiplications as f64 / (cfg.multipliers() as f64 * report.total_cycles as f64)
}

fn ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// The analytic counterpart of running `cmd` on the datapath.
pub fn layer_cycles(cmd: &LayerCommand, cfg: &HwConfig) -> CycleReport {
    let s = cmd.in_shape;
    let stream = cfg.stream_bits();
    let mut r = CycleReport::default();
    match cmd.op {
        OpKind::Conv3x3 | OpKind::Deconv2x => {
            let k = cmd.window() as u64;
            let (hp, wp) = cmd.padding.padded_dims(s.height, s.width);
            let rows = (hp as u64 + 1).saturating_sub(k);
            let cols = (wp as u64 + 1).saturating_sub(k);
            let windows = rows * cols;
            let (cin, cout) = (s.channels as u64, cmd.out_shape.channels as u64);
            let beats = if cmd.op == OpKind::Deconv2x { 4 } else { 1 };
            let out_groups = ceil(cout, cfg.out_lanes() as u64);
            let lane_groups: u64 = (0..cmd.passes())
                .map(|p| ceil(cmd.pass_channels(p).len() as u64, cfg.tn() as u64))
                .sum();
            let pre = cmd.pre_pool_shape();
            r.priming_cycles = (k - 1) * wp as u64 + k;
            r.compute_cycles = lane_groups * out_groups * windows * beats;
            r.multiplications = 9 * windows * cin * cout;
            r.additions = 9 * windows * cin * cout + pre.len() as u64;
            if cmd.post.pool != PoolKind::None {
                r.drain_cycles = pre.width as u64 + 2;
                if cmd.post.pool == PoolKind::Avg {
                    r.additions += 3 * cmd.out_shape.len() as u64;
                }
            }
            r.buffer_reads = cin * rows * (k + cols - 1);
            r.buffer_writes = cmd.passes() as u64 * pre.len() as u64;
            r.weight_cycles = ceil(weight_storage_bits(s.channels, cmd.out_shape.channels), stream);
        }
        OpKind::MaxPool | OpKind::AvgPool => {
            r.priming_cycles = s.width as u64 + 2;
            r.compute_cycles = (s.height * s.width) as u64 * ceil(s.channels as u64, cfg.tm() as u64);
            if cmd.op == OpKind::AvgPool {
                r.additions = 3 * cmd.out_shape.len() as u64;
            }
            r.buffer_reads = s.len() as u64;
            r.buffer_writes = cmd.out_shape.len() as u64;
        }
        OpKind::Identity => {
            r.buffer_reads = s.len() as u64;
            r.buffer_writes = s.len() as u64;
        }
    }
    r.transfer_cycles = ceil(s.len() as u64 * 8, stream).max(ceil(cmd.out_shape.len() as u64 * 8, stream));
    r.close();
    r
}

pub fn program_cycles(program: &Program, cfg: &HwConfig) -> Vec<CycleReport> {
    program.commands.iter().map(|c| layer_cycles(c, cfg)).collect()
}

fn scenario_command(op: OpKind, input: Shape3, cout: usize, pool: PoolKind, cfg: &HwConfig) -> LayerCommand {
    let (padding, pre) = match op {
        OpKind::Deconv2x => (
            PaddingMode::TOP_LEFT,
            Shape3::new(2 * input.height, 2 * input.width, cout),
        ),
        _ => (PaddingMode::ALL, Shape3::new(input.height, input.width, cout)),
    };
    let out_shape = if pool == PoolKind::None {
        pre
    } else {
        Shape3::new(pre.height / 2, pre.width / 2, cout)
    };
    LayerCommand {
        op,
        padding,
        in_shape: input,
        out_shape,
        tile_depth: input.channels.min(cfg.tn()),
        unroll: (cfg.tn(), cfg.tm()),
        weight_slot: Some(0),
        if_bank: 0,
        of_bank: 0,
        post: PostOps {
            activation: Activation::Relu,
            pool,
            out_scale_exp: -4,
        },
    }
}

/// Path A: conv on 90x120 followed by ReLU and max pooling.
/// Path B: deconvolution of 45x60 up to 90x120.
pub fn latency_commands(cfg: &HwConfig) -> (LayerCommand, LayerCommand) {
    let c = 8;
    (
        scenario_command(OpKind::Conv3x3, Shape3::new(90, 120, c), c, PoolKind::Max, cfg),
        scenario_command(OpKind::Deconv2x, Shape3::new(45, 60, c), c, PoolKind::None, cfg),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyScenario {
    pub clock_hz: u64,
    pub conv_compute_cycles: u64,
    pub deconv_compute_cycles: u64,
    pub compute_parity_delta: i64,
    pub conv_priming_cycles: u64,
    pub deconv_priming_cycles: u64,
    pub priming_delta_cycles: u64,
    pub priming_delta_us: f64,
    pub pool_act_overhead_cycles: u64,
    pub path_a_total_cycles: u64,
    pub path_b_total_cycles: u64,
    pub path_a_us: f64,
    pub path_b_us: f64,
    pub savings_cycles: i64,
    pub savings_fraction: f64,
}

pub fn latency_scenario(cfg: &HwConfig) -> LatencyScenario {
    let (a, b) = latency_commands(cfg);
    let (ra, rb) = (layer_cycles(&a, cfg), layer_cycles(&b, cfg));
    let us = |cycles: u64| cycles as f64 / cfg.clock_hz() as f64 * 1e6;
    let priming_delta = ra.priming_cycles.abs_diff(rb.priming_cycles);
    let savings = ra.total_cycles as i64 - rb.total_cycles as i64;
    LatencyScenario {
        clock_hz: cfg.clock_hz(),
        conv_compute_cycles: ra.compute_cycles,
        deconv_compute_cycles: rb.compute_cycles,
        compute_parity_delta: ra.compute_cycles as i64 - rb.compute_cycles as i64,
        conv_priming_cycles: ra.priming_cycles,
        deconv_priming_cycles: rb.priming_cycles,
        priming_delta_cycles: priming_delta,
        priming_delta_us: us(priming_delta),
        pool_act_overhead_cycles: ra.drain_cycles,
        path_a_total_cycles: ra.total_cycles,
        path_b_total_cycles: rb.total_cycles,
        path_a_us: us(ra.total_cycles),
        path_b_us: us(rb.total_cycles),
        savings_cycles: savings,
        savings_fraction: savings as f64 / ra.total_cycles as f64,
    }
}

impl LatencyScenario {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "conv = deconv compute cycles: {} = {}",
            self.conv_compute_cycles, self.deconv_compute_cycles
        );
        let _ = writeln!(
            s,
            "priming: conv {} / deconv {} cycles, difference {} cycles = {:.3} us",
            self.conv_priming_cycles, self.deconv_priming_cycles, self.priming_delta_cycles, self.priming_delta_us
        );
        let _ = writeln!(s, "pool/activation overhead: {} cycles", self.pool_act_overhead_cycles);
        let _ = writeln!(
            s,
            "path A (conv+relu+maxpool): {} cycles = {:.3} us",
            self.path_a_total_cycles, self.path_a_us
        );
        let _ = writeln!(
            s,
            "path B (deconv):            {} cycles = {:.3} us",
            self.path_b_total_cycles, self.path_b_us
        );
        let _ = writeln!(
            s,
            "path B saves {} cycles ({:.2}%)",
            self.savings_cycles,
            100.0 * self.savings_fraction
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPerf {
    pub index: usize,
    pub op: String,
    pub total_cycles: u64,
    pub multiplications: u64,
    pub effective_gops: f64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerfReport {
    pub peak_gops: f64,
    pub dsp_equiv: u64,
    pub clock_hz: u64,
    pub bandwidth_bits_per_cycle: u64,
    pub total_cycles: u64,
    pub wall_time_s: f64,
    pub effective_gops_conv: Option<f64>,
    pub effective_gops_deconv: Option<f64>,
    pub layers: Vec<LayerPerf>,
}

impl PerfReport {
    /// Builds a report from per-command cycle reports.
    pub fn new(program: &Program, reports: &[CycleReport], cfg: &HwConfig) -> PerfReport {
        let mut layers = Vec::with_capacity(reports.len());
        let (mut conv, mut deconv) = (CycleReport::default(), CycleReport::default());
        let mut total = 0;
        for (i, (cmd, r)) in program.commands.iter().zip(reports).enumerate() {
            total += r.total_cycles;
            match cmd.op {
                OpKind::Conv3x3 => conv += *r,
                OpKind::Deconv2x => deconv += *r,
                _ => {}
            }
            layers.push(LayerPerf {
                index: i,
                op: cmd.op.to_string(),
                total_cycles: r.total_cycles,
                multiplications: r.multiplications,
                effective_gops: effective_gops(r, cfg).unwrap_or(0.0),
                utilization: utilization(r, cfg),
            });
        }
        PerfReport {
            peak_gops: peak_gops(cfg),
            dsp_equiv: dsp_equiv(cfg),
            clock_hz: cfg.clock_hz(),
            bandwidth_bits_per_cycle: cfg.stream_bits(),
            total_cycles: total,
            wall_time_s: total as f64 / cfg.clock_hz() as f64,
            effective_gops_conv: effective_gops(&conv, cfg).ok(),
            effective_gops_deconv: effective_gops(&deconv, cfg).ok(),
            layers,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "peak {:.2} GOPS, DSP-equiv {}", self.peak_gops, self.dsp_equiv);
        let _ = writeln!(s, "{:>5}  {:<9} {:>12} {:>14} {:>8} {:>6}", "layer", "op", "cycles", "mults", "GOPS", "util");
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:>5}  {:<9} {:>12} {:>14} {:>8.2} {:>5.1}%",
                l.index,
                l.op,
                l.total_cycles,
                l.multiplications,
                l.effective_gops,
                100.0 * l.utilization
            );
        }
        let _ = writeln!(
            s,
            "total {} cycles = {:.3} ms at {} MHz",
            self.total_cycles,
            self.wall_time_s * 1e3,
            self.clock_hz as f64 / 1e6
        );
        s
    }
}
