use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("accumulator overflow outside the signed 32-bit range")]
    AccumulatorOverflow,

    #[error("unsupported padding mode {0}")]
    InvalidPaddingMode(String),

    #[error("pooling needs even spatial dimensions, got {height}x{width}")]
    OddDimension { height: usize, width: usize },

    #[error("invalid hardware configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line buffer frame already complete")]
    FrameComplete,

    #[error("{buffer} buffer needs {required_bits} bits but holds {capacity_bits}")]
    CapacityExceeded {
        buffer: &'static str,
        required_bits: u64,
        capacity_bits: u64,
    },

    #[error("layer {layer}: {buffer} buffer needs {required_bits} bits but holds {capacity_bits}")]
    Infeasible {
        layer: usize,
        buffer: &'static str,
        required_bits: u64,
        capacity_bits: u64,
    },

    #[error("double buffering violated: {0}")]
    BankConflict(String),

    #[error("requantization multiplier for scale {scale} does not fit 16 bits")]
    MultiplierOverflow { scale: f64 },

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("command {index}: {source}")]
    Command { index: usize, source: Box<Error> },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn at_command(self, index: usize) -> Self {
        Error::Command {
            index,
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
