//! Network descriptions and their JSON form.

use serde::{Deserialize, Serialize};

use crate::controller::isa::OpKind;
use crate::error::{Error, Result};
use crate::qtensor::{Activation, PoolKind, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub scale_exp: i32,
}

impl InputSpec {
    pub fn shape(&self) -> Shape3 {
        Shape3::new(self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv3x3,
    Deconv2x,
    Maxpool,
    Avgpool,
    Identity,
}

impl LayerKind {
    pub fn op(self) -> OpKind {
        match self {
            LayerKind::Conv3x3 => OpKind::Conv3x3,
            LayerKind::Deconv2x => OpKind::Deconv2x,
            LayerKind::Maxpool => OpKind::MaxPool,
            LayerKind::Avgpool => OpKind::AvgPool,
            LayerKind::Identity => OpKind::Identity,
        }
    }

    pub fn is_compute(self) -> bool {
        matches!(self, LayerKind::Conv3x3 | LayerKind::Deconv2x)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationSpec {
    #[default]
    None,
    Relu,
    LeakyRelu,
}

impl From<ActivationSpec> for Activation {
    fn from(a: ActivationSpec) -> Self {
        match a {
            ActivationSpec::None => Activation::None,
            ActivationSpec::Relu => Activation::Relu,
            ActivationSpec::LeakyRelu => Activation::LEAKY_DEFAULT,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSpec {
    #[default]
    None,
    Max,
    Avg,
}

impl From<PoolSpec> for PoolKind {
    fn from(p: PoolSpec) -> Self {
        match p {
            PoolSpec::None => PoolKind::None,
            PoolSpec::Max => PoolKind::Max,
            PoolSpec::Avg => PoolKind::Avg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Required for conv/deconv; pooling and identity keep the channel count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default)]
    pub activation: ActivationSpec,
    #[serde(default)]
    pub pool: PoolSpec,
    /// Output scale exponent; pooling and identity inherit their input's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_exp: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetDescription {
    pub version: u32,
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

/// Resolved per-layer geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: Shape3,
    pub output: Shape3,
    pub in_scale_exp: i32,
    pub out_scale_exp: i32,
}

impl NetDescription {
    pub fn from_json(text: &str) -> Result<NetDescription> {
        let net: NetDescription = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("line {} column {}: {e}", e.line(), e.column())))?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    /// Checks that consecutive layers chain and returns each layer's shapes.
    pub fn layer_shapes(&self) -> Result<Vec<LayerShape>> {
        if self.version != 1 {
            return Err(Error::Parse(format!("unsupported net version {}", self.version)));
        }
        let mut shape = self.input.shape();
        let mut scale = self.input.scale_exp;
        if shape.is_empty() {
            return Err(Error::Parse(format!("empty input {shape}")));
        }
        check_scale(scale, None)?;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let err = |m: String| Error::Layer { layer: i, message: m };
            let (h, w, c) = (shape.height, shape.width, shape.channels);
            let next = match l.kind {
                LayerKind::Conv3x3 | LayerKind::Deconv2x => {
                    let co = l
                        .out_channels
                        .filter(|&n| n > 0)
                        .ok_or_else(|| err(format!("{} needs out_channels > 0", l.kind.op())))?;
                    let (h, w) = if l.kind == LayerKind::Deconv2x { (2 * h, 2 * w) } else { (h, w) };
                    if l.pool != PoolSpec::None && (h % 2 != 0 || w % 2 != 0) {
                        return Err(err(format!("pooling a {h}x{w} map")));
                    }
                    let d = if l.pool == PoolSpec::None { 1 } else { 2 };
                    Shape3::new(h / d, w / d, co)
                }
                LayerKind::Maxpool | LayerKind::Avgpool | LayerKind::Identity => {
                    if l.out_channels.is_some_and(|n| n != c) {
                        return Err(err(format!("{} cannot change channels {c}", l.kind.op())));
                    }
                    if l.pool != PoolSpec::None {
                        return Err(err(format!("{} with a pool attachment", l.kind.op())));
                    }
                    if l.scale_exp.is_some_and(|s| s != scale) {
                        return Err(err(format!("{} cannot rescale", l.kind.op())));
                    }
                    if l.kind == LayerKind::Identity {
                        shape
                    } else {
                        if h % 2 != 0 || w % 2 != 0 {
                            return Err(err(format!("pooling a {h}x{w} map")));
                        }
                        Shape3::new(h / 2, w / 2, c)
                    }
                }
            };
            let out_scale = l.scale_exp.unwrap_or(scale);
            check_scale(out_scale, Some(i))?;
            out.push(LayerShape {
                input: shape,
                output: next,
                in_scale_exp: scale,
                out_scale_exp: out_scale,
            });
            shape = next;
            scale = out_scale;
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape3> {
        Ok(self.layer_shapes()?.last().map_or(self.input.shape(), |l| l.output))
    }

    pub fn compute_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.kind.is_compute()).count()
    }
}

fn check_scale(s: i32, layer: Option<usize>) -> Result<()> {
    if (-16..=0).contains(&s) {
        return Ok(());
    }
    let message = format!("scale exponent {s} outside [-16, 0]");
    Err(match layer {
        Some(layer) => Error::Layer { layer, message },
        None => Error::Parse(message),
    })
}
