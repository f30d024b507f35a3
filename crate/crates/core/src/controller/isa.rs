//! Register-file commands and the program container, with a line-oriented
//! text form that parses back to the same program.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::ComputeKind;
use crate::linebuffer::PaddingMode;
use crate::qtensor::{Activation, PoolKind, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv3x3,
    Deconv2x,
    MaxPool,
    AvgPool,
    Identity,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv3x3 => "conv3x3",
            OpKind::Deconv2x => "deconv2x",
            OpKind::MaxPool => "maxpool",
            OpKind::AvgPool => "avgpool",
            OpKind::Identity => "identity",
        }
    }

    pub fn compute_kind(self) -> Option<ComputeKind> {
        match self {
            OpKind::Conv3x3 => Some(ComputeKind::Conv3x3),
            OpKind::Deconv2x => Some(ComputeKind::Deconv2x),
            _ => None,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            OpKind::Conv3x3,
            OpKind::Deconv2x,
            OpKind::MaxPool,
            OpKind::AvgPool,
            OpKind::Identity,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Parse(format!("unknown op {s:?}")))
    }
}

/// Work done on the way out of the PE array. Per-channel requantization
/// parameters live with the layer's weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PostOps {
    pub activation: Activation,
    pub pool: PoolKind,
    pub out_scale_exp: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerCommand {
    pub op: OpKind,
    pub padding: PaddingMode,
    pub in_shape: Shape3,
    /// Final shape, after any pooling.
    pub out_shape: Shape3,
    /// Input channels per accumulation pass.
    pub tile_depth: usize,
    /// (Tn, Tm)
    pub unroll: (usize, usize),
    pub weight_slot: Option<usize>,
    pub if_bank: usize,
    pub of_bank: usize,
    pub post: PostOps,
}

impl LayerCommand {
    pub fn passes(&self) -> usize {
        self.in_shape.channels.div_ceil(self.tile_depth.max(1))
    }

    /// Input channels handled in pass `p`.
    pub fn pass_channels(&self, p: usize) -> std::ops::Range<usize> {
        let c0 = p * self.tile_depth;
        c0..(c0 + self.tile_depth).min(self.in_shape.channels)
    }

    /// Window edge length fed by the line buffer.
    pub fn window(&self) -> usize {
        match self.op {
            OpKind::Conv3x3 => 3,
            _ => 2,
        }
    }

    /// Shape leaving the PE array, before the pooling unit.
    pub fn pre_pool_shape(&self) -> Shape3 {
        let s = self.in_shape;
        match self.op {
            OpKind::Conv3x3 => {
                let (h, w) = self.padding.padded_dims(s.height, s.width);
                Shape3::new(
                    h.saturating_sub(2),
                    w.saturating_sub(2),
                    self.out_shape.channels,
                )
            }
            OpKind::Deconv2x => Shape3::new(2 * s.height, 2 * s.width, self.out_shape.channels),
            _ => s,
        }
    }

    /// Checks internal consistency of shapes, tiling and bindings.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::shape(m));
        let s = self.in_shape;
        if s.is_empty() || self.out_shape.is_empty() {
            return bad(format!("empty shape {s} -> {}", self.out_shape));
        }
        if self.tile_depth == 0 || self.tile_depth > s.channels {
            return bad(format!("tile depth {} for {} channels", self.tile_depth, s.channels));
        }
        if self.if_bank > 1 {
            return Err(Error::BankConflict(format!("IF bank {} does not exist", self.if_bank)));
        }
        if self.of_bank != 0 {
            return Err(Error::BankConflict(format!("OF bank {} does not exist", self.of_bank)));
        }
        if self.op.compute_kind().is_some() != self.weight_slot.is_some() {
            return bad(format!("{} with weight slot {:?}", self.op, self.weight_slot));
        }
        if self.op == OpKind::Deconv2x && self.padding != PaddingMode::TOP_LEFT {
            return Err(Error::Unsupported(format!("deconvolution with padding {}", self.padding)));
        }
        if self.op.compute_kind().is_none() && self.post.pool != PoolKind::None {
            return bad(format!("{} with a pooling attachment", self.op));
        }
        let pre = self.pre_pool_shape();
        if pre.height == 0 || pre.width == 0 {
            return bad(format!("{s} under padding {} leaves no windows", self.padding));
        }
        let pooled = matches!(self.op, OpKind::MaxPool | OpKind::AvgPool) || self.post.pool != PoolKind::None;
        let expect = if pooled {
            if pre.height % 2 != 0 || pre.width % 2 != 0 {
                return Err(Error::OddDimension {
                    height: pre.height,
                    width: pre.width,
                });
            }
            Shape3::new(pre.height / 2, pre.width / 2, pre.channels)
        } else {
            pre
        };
        if expect != self.out_shape {
            return bad(format!(
                "{} {s} gives {expect}, command says {}",
                self.op, self.out_shape
            ));
        }
        Ok(())
    }
}

impl fmt::Display for LayerCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let slot = self.weight_slot.map_or("-".to_string(), |s| s.to_string());
        write!(
            f,
            "op={} pad={} in={} out={} tile_depth={} passes={} unroll={}x{} wslot={} if={} of={} act={} pool={} out_exp={}",
            self.op,
            self.padding,
            self.in_shape,
            self.out_shape,
            self.tile_depth,
            self.passes(),
            self.unroll.0,
            self.unroll.1,
            slot,
            self.if_bank,
            self.of_bank,
            self.post.activation,
            self.post.pool,
            self.post.out_scale_exp
        )
    }
}

fn parse_shape(s: &str) -> Result<Shape3> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|_| Error::Parse(format!("bad shape {s:?}"))))
        .collect::<Result<_>>()?;
    match dims[..] {
        [h, w, c] => Ok(Shape3::new(h, w, c)),
        _ => Err(Error::Parse(format!("bad shape {s:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse(format!("bad value {v:?} for {key}")))
}

impl FromStr for LayerCommand {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got {tok:?}")))?;
            if fields.insert(k, v).is_some() {
                return Err(Error::Parse(format!("duplicate field {k}")));
            }
        }
        let mut get = |k: &str| fields.remove(k).ok_or_else(|| Error::Parse(format!("missing field {k}")));
        let op: OpKind = get("op")?.parse()?;
        let padding: PaddingMode = get("pad")?.parse()?;
        let in_shape = parse_shape(get("in")?)?;
        let out_shape = parse_shape(get("out")?)?;
        let tile_depth = parse_num("tile_depth", get("tile_depth")?)?;
        let passes: usize = parse_num("passes", get("passes")?)?;
        let unroll = get("unroll")?;
        let (tn, tm) = unroll
            .split_once('x')
            .ok_or_else(|| Error::Parse(format!("bad unroll {unroll:?}")))?;
        let unroll = (parse_num("unroll", tn)?, parse_num("unroll", tm)?);
        let weight_slot = match get("wslot")? {
            "-" => None,
            v => Some(parse_num("wslot", v)?),
        };
        let if_bank = parse_num("if", get("if")?)?;
        let of_bank = parse_num("of", get("of")?)?;
        let post = PostOps {
            activation: get("act")?.parse()?,
            pool: get("pool")?.parse()?,
            out_scale_exp: parse_num("out_exp", get("out_exp")?)?,
        };
        if let Some(k) = fields.keys().next() {
            return Err(Error::Parse(format!("unknown field {k}")));
        }
        let cmd = LayerCommand {
            op,
            padding,
            in_shape,
            out_shape,
            tile_depth,
            unroll,
            weight_slot,
            if_bank,
            of_bank,
            post,
        };
        if cmd.passes() != passes {
            return Err(Error::Parse(format!("passes={passes} disagrees with tile depth")));
        }
        Ok(cmd)
    }
}

/// Whole-program resource totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Budget {
    /// Largest IF bank working set of any command.
    pub if_bits: u64,
    /// Largest OF working set.
    pub of_bits: u64,
    /// Sum of all weight images.
    pub weight_bits: u64,
    /// Feature-map traffic in and out of the chip.
    pub transfer_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Program {
    pub commands: Vec<LayerCommand>,
    pub budget: Budget,
}

const HEADER: &str = "# ucda program v1";

impl Program {
    /// Stable text form: a header, a budget line, then one numbered
    /// command per line.
    pub fn dump(&self) -> String {
        let b = self.budget;
        let mut s = format!(
            "{HEADER}\nbudget if_bits={} of_bits={} weight_bits={} transfer_bits={}\n",
            b.if_bits, b.of_bits, b.weight_bits, b.transfer_bits
        );
        for (i, c) in self.commands.iter().enumerate() {
            s.push_str(&format!("{i} {c}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Program> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let at = |n: usize, e: Error| Error::Parse(format!("line {}: {e}", n + 1));
        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            _ => return Err(Error::Parse(format!("missing header {HEADER:?}"))),
        }
        let (n, budget_line) = lines
            .next()
            .ok_or_else(|| Error::Parse("missing budget line".into()))?;
        let budget_line = budget_line
            .trim()
            .strip_prefix("budget ")
            .ok_or_else(|| at(n, Error::Parse("expected budget".into())))?;
        let mut budget = Budget::default();
        for tok in budget_line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| at(n, Error::Parse(format!("bad token {tok:?}"))))?;
            let v: u64 = parse_num(k, v).map_err(|e| at(n, e))?;
            match k {
                "if_bits" => budget.if_bits = v,
                "of_bits" => budget.of_bits = v,
                "weight_bits" => budget.weight_bits = v,
                "transfer_bits" => budget.transfer_bits = v,
                _ => return Err(at(n, Error::Parse(format!("unknown budget field {k}")))),
            }
        }
        let mut commands = Vec::new();
        for (n, line) in lines {
            let (idx, rest) = line
                .trim()
                .split_once(' ')
                .ok_or_else(|| at(n, Error::Parse("empty command".into())))?;
            if parse_num::<usize>("index", idx).map_err(|e| at(n, e))? != commands.len() {
                return Err(at(n, Error::Parse(format!("command {idx} out of order"))));
            }
            commands.push(rest.parse::<LayerCommand>().map_err(|e| at(n, e))?);
        }
        Ok(Program { commands, budget })
    }
}
