#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ucda_core::controller::{reference_forward, LayerCommand, OpKind, PostOps, Program};
use ucda_core::kernels::{ComputeKind, KernelSet};
use ucda_core::linebuffer::PaddingMode;
use ucda_core::qtensor::{Activation, PoolKind, QTensor, Requant, Shape3};
use ucda_core::HwConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: Shape3, scale_exp: i32) -> QTensor {
    let data = (0..shape.len()).map(|_| r.gen::<i8>()).collect();
    QTensor::new(shape, scale_exp, data).unwrap()
}

/// Full-range weights, per-channel bias and requantization.
pub fn random_kernels(r: &mut ChaCha8Rng, kind: ComputeKind, cin: usize, cout: usize) -> KernelSet {
    let weights = (0..cin * cout * 9).map(|_| r.gen::<i8>()).collect();
    let bias = (0..cout).map(|_| r.gen_range(-20_000..20_000)).collect();
    let requant = (0..cout)
        .map(|_| Requant::new(r.gen_range(8192..i16::MAX), r.gen_range(2..10)).unwrap())
        .collect();
    let ks = KernelSet::new(kind, cin, cout, -7, weights, bias, requant).unwrap();
    if kind == ComputeKind::Deconv2x && r.gen_bool(0.5) {
        ks.rotate_all()
    } else {
        ks
    }
}

pub fn command(
    op: OpKind,
    in_shape: Shape3,
    cout: usize,
    padding: PaddingMode,
    tile_depth: usize,
    act: Activation,
    pool: PoolKind,
    cfg: &HwConfig,
) -> LayerCommand {
    let mut cmd = LayerCommand {
        op,
        padding,
        in_shape,
        out_shape: in_shape,
        tile_depth,
        unroll: (cfg.tn(), cfg.tm()),
        weight_slot: op.compute_kind().map(|_| 0),
        if_bank: 0,
        of_bank: 0,
        post: PostOps {
            activation: act,
            pool,
            out_scale_exp: -4,
        },
    };
    if op.compute_kind().is_some() {
        cmd.out_shape.channels = cout;
    }
    let pre = cmd.pre_pool_shape();
    let pooled = pool != PoolKind::None || matches!(op, OpKind::MaxPool | OpKind::AvgPool);
    cmd.out_shape = if pooled { Shape3::new(pre.height / 2, pre.width / 2, pre.channels) } else { pre };
    cmd.validate().unwrap();
    cmd
}

/// The oracle result for one command.
pub fn oracle(cmd: &LayerCommand, input: &QTensor, ks: Option<&KernelSet>) -> QTensor {
    let program = Program {
        commands: vec![cmd.clone()],
        budget: Default::default(),
    };
    let weights: Vec<KernelSet> = ks.into_iter().cloned().collect();
    reference_forward(&program, &weights, input).unwrap().pop().unwrap()
}

pub const ACTIVATIONS: [Activation; 3] = [Activation::None, Activation::Relu, Activation::LeakyRelu { shift: 3 }];
