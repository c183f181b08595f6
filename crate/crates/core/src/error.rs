use thiserror::Error;

/// Errors raised by the geometry, calculus, solver and estimator layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown geometry `{0}`")]
    UnknownGeometry(String),

    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The horizontal gradient vanishes (up to tolerance) at the queried point.
    #[error("characteristic point: |horizontal gradient| = {horizontal_gradient_norm:e}")]
    Characteristic { horizontal_gradient_norm: f64 },

    #[error("point is off the surface: residual {residual:e}")]
    OffSurface { residual: f64 },

    #[error("blow-up at {location} (t = {time})")]
    BlowUp { location: String, time: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures of the numerics (as opposed to bad configuration or input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite(_)
            | Error::Characteristic { .. }
            | Error::BlowUp { .. }
            | Error::Domain(_) => true,
            Error::Context { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
