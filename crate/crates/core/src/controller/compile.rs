//! Network description -> register-file program.

use crate::controller::isa::{Budget, LayerCommand, OpKind, PostOps, Program};
use crate::controller::netfile::NetDescription;
use crate::datapath::requirements;
use crate::error::{Error, Result};
use crate::linebuffer::PaddingMode;
use crate::pearray::HwConfig;
use crate::qtensor::PoolKind;

fn infeasible(layer: usize, buffer: &'static str, required_bits: u64, capacity_bits: u64) -> Error {
    Error::Infeasible {
        layer,
        buffer,
        required_bits,
        capacity_bits,
    }
}

/// Emits one command per layer. Input depth is tiled (at most Tn channels
/// per pass, halved until the padded frame fits one IF bank); pooling is
/// attached to the producing conv/deconv command.
pub fn compile(net: &NetDescription, cfg: &HwConfig) -> Result<Program> {
    let shapes = net.layer_shapes()?;
    let mut commands = Vec::with_capacity(shapes.len());
    let mut budget = Budget::default();
    let mut slot = 0;
    for (i, (layer, s)) in net.layers.iter().zip(&shapes).enumerate() {
        let op = layer.kind.op();
        let padding = match op {
            OpKind::Conv3x3 => PaddingMode::ALL,
            OpKind::Deconv2x => PaddingMode::TOP_LEFT,
            _ => PaddingMode::NONE,
        };
        let channels = s.input.channels;
        let mut cmd = LayerCommand {
            op,
            padding,
            in_shape: s.input,
            out_shape: s.output,
            tile_depth: if layer.kind.is_compute() { channels.min(cfg.tn()) } else { channels },
            unroll: (cfg.tn(), cfg.tm()),
            weight_slot: layer.kind.is_compute().then_some(slot),
            if_bank: i % 2,
            of_bank: 0,
            post: PostOps {
                activation: layer.activation.into(),
                pool: if layer.kind.is_compute() { layer.pool.into() } else { PoolKind::None },
                out_scale_exp: s.out_scale_exp,
            },
        };
        let mut req = requirements(&cmd);
        while req.if_bits > cfg.if_bank_bits() && cmd.tile_depth > 1 {
            cmd.tile_depth = cmd.tile_depth.div_ceil(2);
            req = requirements(&cmd);
        }
        if req.if_bits > cfg.if_bank_bits() {
            return Err(infeasible(i, "IF", req.if_bits, cfg.if_bank_bits()));
        }
        if req.of_bits > cfg.of_bits() {
            return Err(infeasible(i, "OF", req.of_bits, cfg.of_bits()));
        }
        if req.weight_bits > cfg.weight_bits() {
            return Err(infeasible(i, "weight", req.weight_bits, cfg.weight_bits()));
        }
        cmd.validate().map_err(|e| Error::Layer {
            layer: i,
            message: e.to_string(),
        })?;
        budget.if_bits = budget.if_bits.max(req.if_bits);
        budget.of_bits = budget.of_bits.max(req.of_bits);
        budget.weight_bits += req.weight_bits;
        budget.transfer_bits += (s.input.len() + s.output.len()) as u64 * 8;
        slot += layer.kind.is_compute() as usize;
        commands.push(cmd);
    }
    Ok(Program { commands, budget })
}

/// One spatial tile of a 3x3 same-size convolution: the input rows/columns
/// it reads (halo included), the output region it produces and the edges
/// that still need zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpec {
    pub in_rows: (usize, usize),
    pub in_cols: (usize, usize),
    pub out_rows: (usize, usize),
    pub out_cols: (usize, usize),
    pub padding: PaddingMode,
}

fn split(n: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts).map(|i| (i * n / parts, (i + 1) * n / parts)).collect()
}

/// Splits an `h x w` frame into a `rows x cols` grid of tiles. A single
/// row of several tiles would need top+bottom padding without both side
/// edges, which is not a supported mode, so `rows == 1` requires
/// `cols == 1`.
pub fn tile_plan(h: usize, w: usize, rows: usize, cols: usize) -> Result<Vec<TileSpec>> {
    if rows == 0 || cols == 0 || rows > h || cols > w {
        return Err(Error::InvalidArgument(format!("{rows}x{cols} tiles over {h}x{w}")));
    }
    let mut tiles = Vec::with_capacity(rows * cols);
    for (ri, &(r0, r1)) in split(h, rows).iter().enumerate() {
        for (ci, &(c0, c1)) in split(w, cols).iter().enumerate() {
            let (top, bottom) = (ri == 0, ri == rows - 1);
            let (left, right) = (ci == 0, ci == cols - 1);
            tiles.push(TileSpec {
                in_rows: (r0.saturating_sub(1), (r1 + 1).min(h)),
                in_cols: (c0.saturating_sub(1), (c1 + 1).min(w)),
                out_rows: (r0, r1),
                out_cols: (c0, c1),
                padding: PaddingMode::new(top, bottom, left, right)?,
            });
        }
    }
    Ok(tiles)
}
