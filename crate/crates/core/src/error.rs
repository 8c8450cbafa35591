use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Incompatible shapes or hyperparameters handed to an op or builder.
    #[error("configuration error in {op}: {detail}")]
    Config { op: &'static str, detail: String },

    /// Malformed data: out-of-range labels, bad sample files, etc.
    #[error("data error: {0}")]
    Data(String),

    /// Symbolic shape propagation failed at a layer.
    #[error("audit error at layer {layer} ({name}): {detail}")]
    Audit {
        layer: usize,
        name: String,
        detail: String,
    },

    #[error("non-finite gradient for parameter {param} (max |grad| = {max_abs})")]
    NonFiniteGradient { param: String, max_abs: f64 },

    #[error(
        "{phase} diverged at iteration {iteration}: generator loss {loss} stayed above {ceiling} for {patience} iterations"
    )]
    Divergence {
        phase: String,
        iteration: u64,
        loss: f64,
        ceiling: f64,
        patience: usize,
    },

    /// A training phase was started before the phases it builds on.
    #[error("phase {phase} requires a finished {required} phase; train {required} first")]
    Prerequisite {
        phase: &'static str,
        required: &'static str,
    },

    /// A snapshot is missing a field or carries one with the wrong shape.
    #[error("snapshot error at field {field}: {detail}")]
    Snapshot { field: String, detail: String },
}

impl Error {
    pub(crate) fn config(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Config {
            op,
            detail: detail.into(),
        }
    }
}
