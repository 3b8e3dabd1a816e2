use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum FsiError {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid parameter `{key}`: {message}")]
    Parameter { key: String, message: String },

    #[error("ambient field is not tangent: |U.n| = {value:e} at node {node} ({position:?})")]
    NotTangent {
        node: usize,
        position: [f64; 3],
        value: f64,
    },

    #[error("ambient field carries no derivative information")]
    NoDerivativeInfo,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("boundary data must vanish on the plate boundary (node {node}, value {value:e})")]
    BoundaryData { node: usize, value: f64 },

    #[error("singular system in {context}: {message}")]
    Singular { context: String, message: String },

    #[error("{context}: iterative solver stalled after {iterations} iterations, relative residual {residual:e}")]
    NotConverged {
        context: String,
        iterations: usize,
        residual: f64,
    },

    #[error("xi = {xi} is below xi_min = {xi_min} for the structured resolvent path")]
    XiTooSmall { xi: f64, xi_min: f64 },

    #[error("blow-up at t = {t}: energy {energy:e} exceeds {limit:e}; the solution left every bounded set in finite time")]
    BlowUp { t: f64, energy: f64, limit: f64 },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, FsiError>;

impl FsiError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FsiError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn param(key: &str, message: impl Into<String>) -> Self {
        FsiError::Parameter {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
