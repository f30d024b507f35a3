//! System controller: command ISA, compiler, FSM executor, file formats and
//! the SegNet-Basic preset.

pub mod compile;
pub mod execute;
pub mod isa;
pub mod netfile;
pub mod preset;
pub mod reference;
pub mod weights;

pub use compile::{compile, tile_plan, TileSpec};
pub use execute::{execute, execute_traced, CommandTrace};
pub use isa::{Budget, LayerCommand, OpKind, PostOps, Program};
pub use netfile::{LayerKind, LayerSpec, NetDescription};
pub use preset::{random_input, random_weights, segnet_basic_preset};
pub use reference::{compare, reference_forward, CompareReport, Fault};
pub use weights::{decode_weights, encode_weights, pack_weights, LayerParams, LayerWeights};
