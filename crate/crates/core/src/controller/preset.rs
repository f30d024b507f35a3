//! SegNet-Basic and seeded random parameters for it (or any net).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::netfile::{ActivationSpec, InputSpec, LayerKind, LayerSpec, NetDescription, PoolSpec};
use crate::controller::weights::{pack_weights, LayerParams, LayerWeights};
use crate::error::Result;
use crate::kernels::{KernelSet, KERNEL_TAPS};
use crate::pearray::BnParams;
use crate::qtensor::{QTensor, Shape3};

pub const SEGNET_WIDTH: usize = 64;
pub const SEGNET_CLASSES: usize = 12;
pub const SEGNET_INPUT: InputSpec = InputSpec {
    h: 360,
    w: 480,
    c: 3,
    scale_exp: -7,
};
const HIDDEN_SCALE_EXP: i32 = -4;

fn layer(kind: LayerKind, out: usize, activation: ActivationSpec, pool: PoolSpec) -> LayerSpec {
    LayerSpec {
        kind,
        out_channels: Some(out),
        activation,
        pool,
        scale_exp: Some(HIDDEN_SCALE_EXP),
    }
}

/// Encoder: four conv+BN+ReLU, max pooling after the first three.
/// Decoder: deconv, conv, deconv, conv, deconv; the last deconv produces
/// the class scores.
pub fn segnet_basic_preset() -> NetDescription {
    use ActivationSpec::Relu;
    use LayerKind::{Conv3x3, Deconv2x};
    let w = SEGNET_WIDTH;
    let mut layers = Vec::new();
    for _ in 0..3 {
        layers.push(layer(Conv3x3, w, Relu, PoolSpec::Max));
    }
    layers.push(layer(Conv3x3, w, Relu, PoolSpec::None));
    layers.push(layer(Deconv2x, w, Relu, PoolSpec::None));
    layers.push(layer(Conv3x3, w, Relu, PoolSpec::None));
    layers.push(layer(Deconv2x, w, Relu, PoolSpec::None));
    layers.push(layer(Conv3x3, w, Relu, PoolSpec::None));
    layers.push(layer(Deconv2x, SEGNET_CLASSES, ActivationSpec::None, PoolSpec::None));
    NetDescription {
        version: 1,
        input: SEGNET_INPUT,
        layers,
    }
}

/// He-style uniform weights and mild batch-norm statistics for every
/// conv/deconv layer of `net`, drawn from a seeded generator.
pub fn random_layer_params(net: &NetDescription, seed: u64) -> Result<Vec<LayerParams>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = net.layer_shapes()?;
    let mut out = Vec::new();
    for (l, s) in net.layers.iter().zip(&shapes) {
        if !l.kind.is_compute() {
            continue;
        }
        let (cin, cout) = (s.input.channels, s.output.channels);
        let limit = (6.0 / (cin * KERNEL_TAPS) as f64).sqrt();
        let weights = (0..cin * cout * KERNEL_TAPS).map(|_| rng.gen_range(-limit..limit)).collect();
        let bn = (0..cout)
            .map(|_| BnParams {
                gamma: rng.gen_range(0.5..1.5),
                beta: rng.gen_range(-0.2..0.2),
                mean: rng.gen_range(-0.1..0.1),
                var: rng.gen_range(0.5..2.0),
                eps: 1e-5,
            })
            .collect();
        out.push(LayerParams {
            weights: LayerWeights::Float { weights, bias: None },
            bn: Some(bn),
        });
    }
    Ok(out)
}

/// Packed random weights for `net`.
pub fn random_weights(net: &NetDescription, seed: u64) -> Result<Vec<KernelSet>> {
    Ok(pack_weights(net, &random_layer_params(net, seed)?)?.1)
}

/// A uniformly random int8 tensor.
pub fn random_input(shape: Shape3, scale_exp: i32, seed: u64) -> QTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    QTensor::from_fn(shape, scale_exp, |_, _, _| rng.gen())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segnet_stage_counts_and_shapes() {
        let net = segnet_basic_preset();
        let convs = net.layers.iter().filter(|l| l.kind == LayerKind::Conv3x3).count();
        let deconvs = net.layers.iter().filter(|l| l.kind == LayerKind::Deconv2x).count();
        let pools = net.layers.iter().filter(|l| l.pool != PoolSpec::None).count();
        assert_eq!((convs, pools, deconvs), (6, 3, 3));
        assert_eq!(convs + pools + deconvs, 12);
        let shapes = net.layer_shapes().unwrap();
        assert_eq!(shapes[3].output, Shape3::new(45, 60, 64));
        assert_eq!(net.output_shape().unwrap(), Shape3::new(360, 480, 12));
        let enc: Vec<_> = net.layers[..4].iter().map(|l| l.kind).collect();
        assert_eq!(enc, vec![LayerKind::Conv3x3; 4]);
    }

    #[test]
    fn random_weights_pack_and_are_seeded() {
        let net = segnet_basic_preset();
        let a = random_weights(&net, 5).unwrap();
        assert_eq!(a.len(), 9);
        assert!(a.iter().all(|k| k.kind != crate::kernels::ComputeKind::Deconv2x || k.rotated));
        assert_eq!(a, random_weights(&net, 5).unwrap());
        assert_ne!(a, random_weights(&net, 6).unwrap());
    }
}
