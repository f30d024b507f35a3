//! Layer-by-layer oracle composition and the datapath-vs-oracle comparator.

use crate::controller::execute::execute_traced;
use crate::controller::isa::{LayerCommand, OpKind, Program};
use crate::error::{Error, Result};
use crate::kernels::{ComputeKind, KernelSet};
use crate::oracle::{avgpool_ref, bn_act_ref, layer_acc_ref, maxpool_ref, OpCounters};
use crate::pearray::HwConfig;
use crate::qtensor::{PoolKind, QTensor};

fn reference_layer(cmd: &LayerCommand, input: &QTensor, weights: &[KernelSet]) -> Result<(QTensor, OpCounters)> {
    let pool = |t: QTensor, p: PoolKind| match p {
        PoolKind::None => Ok(t),
        PoolKind::Max => maxpool_ref(&t),
        PoolKind::Avg => avgpool_ref(&t),
    };
    let act = |t: &QTensor| {
        let mut t = t.clone();
        for v in t.data_mut() {
            *v = cmd.post.activation.apply(*v);
        }
        t
    };
    match cmd.op {
        OpKind::Conv3x3 | OpKind::Deconv2x => {
            let slot = cmd.weight_slot.unwrap_or(usize::MAX);
            let ks = weights
                .get(slot)
                .ok_or_else(|| Error::InvalidArgument(format!("weight slot {slot} not loaded")))?;
            let (acc, counters) = layer_acc_ref(input, ks, cmd.padding)?;
            let q = bn_act_ref(&acc, &ks.requant, None, cmd.post.activation, cmd.post.out_scale_exp)?;
            Ok((pool(q, cmd.post.pool)?, counters))
        }
        OpKind::MaxPool => Ok((pool(act(input), PoolKind::Max)?, OpCounters::default())),
        OpKind::AvgPool => Ok((pool(act(input), PoolKind::Avg)?, OpCounters::default())),
        OpKind::Identity => Ok((input.clone().with_scale_exp(cmd.post.out_scale_exp), OpCounters::default())),
    }
}

/// The untiled oracle result of every command, in order.
pub fn reference_forward(program: &Program, weights: &[KernelSet], input: &QTensor) -> Result<Vec<QTensor>> {
    Ok(reference_forward_counted(program, weights, input)?.0)
}

fn reference_forward_counted(
    program: &Program,
    weights: &[KernelSet],
    input: &QTensor,
) -> Result<(Vec<QTensor>, Vec<OpCounters>)> {
    let mut outs: Vec<QTensor> = Vec::with_capacity(program.commands.len());
    let mut counters = Vec::with_capacity(program.commands.len());
    for (i, cmd) in program.commands.iter().enumerate() {
        let prev = outs.last().unwrap_or(input);
        let (o, c) = reference_layer(cmd, prev, weights).map_err(|e| e.at_command(i))?;
        outs.push(o);
        counters.push(c);
    }
    Ok((outs, counters))
}

/// Corruption injected into the datapath result to exercise the comparator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flips the low bit of the middle element of the first command's output.
    FlipBit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDiff {
    pub index: usize,
    pub op: OpKind,
    pub max_abs_diff: u32,
    /// First differing (row, column, channel), if any.
    pub first_mismatch: Option<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub layers: Vec<LayerDiff>,
    /// Naive zero-insertion multiplications over patch multiplications,
    /// summed over the deconvolution layers.
    pub deconv_mult_ratio: Option<f64>,
    pub final_output: QTensor,
}

impl CompareReport {
    pub fn first_divergence(&self) -> Option<&LayerDiff> {
        self.layers.iter().find(|l| l.first_mismatch.is_some())
    }

    pub fn bit_exact(&self) -> bool {
        self.first_divergence().is_none()
    }
}

fn diff(a: &QTensor, b: &QTensor) -> (u32, Option<(usize, usize, usize)>) {
    if a.shape() != b.shape() {
        return (u32::MAX, Some((0, 0, 0)));
    }
    let c = a.channels();
    let w = a.width();
    let mut max = 0;
    let mut first = None;
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        let d = (x as i32 - y as i32).unsigned_abs();
        if d > 0 && first.is_none() {
            first = Some((i / c / w, (i / c) % w, i % c));
        }
        max = max.max(d);
    }
    (max, first)
}

/// Runs the program on the datapath and through the oracle composition
/// and reports the per-layer difference.
pub fn compare(
    program: &Program,
    weights: &[KernelSet],
    input: &QTensor,
    cfg: &HwConfig,
    fault: Option<Fault>,
) -> Result<CompareReport> {
    let (mut sim, trace) = execute_traced(program, weights, input, cfg)?;
    if let (Some(Fault::FlipBit), Some(first)) = (fault, sim.first_mut()) {
        let mid = first.data().len() / 2;
        first.data_mut()[mid] ^= 1;
    }
    let (oracle, counters) = reference_forward_counted(program, weights, input)?;
    let mut layers = Vec::with_capacity(sim.len());
    let (mut naive, mut patch) = (0u64, 0u64);
    for (i, cmd) in program.commands.iter().enumerate() {
        let (max_abs_diff, first_mismatch) = diff(&sim[i], &oracle[i]);
        layers.push(LayerDiff {
            index: i,
            op: cmd.op,
            max_abs_diff,
            first_mismatch,
        });
        if cmd.op.compute_kind() == Some(ComputeKind::Deconv2x) {
            naive += counters[i].multiplications;
            patch += trace[i].report.multiplications;
        }
    }
    Ok(CompareReport {
        layers,
        deconv_mult_ratio: (patch > 0).then(|| naive as f64 / patch as f64),
        final_output: sim.pop().unwrap_or_else(|| input.clone()),
    })
}
