//! Bit-exact software model of a CNN accelerator whose process elements
//! compute both 3x3 convolution and stride-2 deconvolution, with a
//! reference oracle, cycle accounting and a command-driven controller.

pub mod cli;
pub mod controller;
pub mod datapath;
pub mod error;
pub mod kernels;
pub mod linebuffer;
pub mod oracle;
pub mod patchdeconv;
pub mod pearray;
pub mod perf;
pub mod qtensor;
pub mod tensorio;

pub use error::{Error, Result};
pub use pearray::{HwConfig, HwParams};
pub use qtensor::{QTensor, Shape3};
