use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} exceeds the dimension cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("support error: {0}")]
    Support(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("exponential overflow: exponent {exponent:.3e} exceeds 700; rescale the generator (smaller beta, time or kappa)")]
    Overflow { exponent: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("terms {i} and {j} do not commute (norm of commutator {norm:.3e})")]
    NonCommuting { i: usize, j: usize, norm: f64 },

    #[error("no common product basis: {0}")]
    NoProductBasis(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("real-time cutoff too small: tail estimate {tail:.3e} exceeds {limit:.3e}")]
    CutoffTooSmall { tail: f64, limit: f64 },

    #[error("Dyson integration unstable (norm {norm:.3e} > {limit:.3e}); increase n_tau")]
    Unstable { norm: f64, limit: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed binary chain file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Strips `Step` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
