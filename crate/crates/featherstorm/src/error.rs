//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for the named operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A parameter outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Gradient requested for a node the backward pass never reached.
    #[error("no gradient at node {0}: node is not on a path to the loss")]
    MissingGradient(usize),

    /// backward() called on a non-scalar node.
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    /// All probe gradients vanished; the weight matrix cannot be normalized.
    #[error("degenerate aggregated gradient: all probe gradients are zero")]
    DegenerateGradient,

    /// Non-finite value produced where the contract requires finite math.
    #[error("numerical error in {0}: non-finite value")]
    NonFinite(&'static str),

    /// An adversarial example violated the perturbation budget or value
    /// range when re-checked at scoring time.
    #[error("infeasible adversarial example: {0}")]
    Feasibility(String),

    /// Model spec whose layer chain does not validate.
    #[error("invalid model spec '{name}': {detail}")]
    InvalidModelSpec { name: String, detail: String },

    /// Unknown feature tap name.
    #[error("model '{model}' has no feature tap named '{tap}'")]
    UnknownTap { model: String, tap: String },

    /// Dataset-level contract violations (labels, class structure).
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Malformed input file (IDX, PPM, checkpoint).
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("unknown variant '{0}'")]
    UnknownVariant(String),

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode failed for {path}: {detail}")]
    ImageDecode { path: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for usage/config problems, 3 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::UnknownVariant(_)
            | Error::UnknownModel(_)
            | Error::UnknownTap { .. } => 2,
            _ => 3,
        }
    }
}
