use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-finite element at index {index} of tensor {tensor}")]
    NonFinite { tensor: String, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("mode {mode} needs attention gradients but the bundle has none")]
    MissingGradients { mode: &'static str },

    #[error("disconnected layer {layer}: every capacity in the slice is zero")]
    DisconnectedLayer { layer: usize },

    #[error("graph with {tokens} tokens and {layers} layers overflows the node id width")]
    GraphTooLarge { tokens: usize, layers: usize },

    #[error("starting flow is not strictly interior at edge {edge}")]
    NotInterior { edge: usize },

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("KKT system is numerically singular (pivot {pivot})")]
    IllConditioned { pivot: usize },

    #[error("cannot normalize attributions: total flow is zero")]
    DegenerateNormalization,

    #[error("empty record set")]
    EmptyRecords,

    #[error("domain error: {0}")]
    Domain(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
