use thiserror::Error;

/// Errors raised by the simulator. Each variant names the violated invariant.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("site {site} out of range for a system with {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("environment size {n_env} exceeds the dense-oracle cap of {cap}")]
    CapExceeded { n_env: usize, cap: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("coupling length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("homonuclear coupling matrix is not symmetric with zero diagonal (max defect {defect:e})")]
    AsymmetricCouplings { defect: f64 },

    #[error("non-finite coupling constant")]
    NonFiniteCoupling,

    #[error("matrix is not hermitian (max |A - A^dagger| = {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("matrix is not unitary (max |U^dagger U - 1| = {defect:e})")]
    NotUnitary { defect: f64 },

    #[error("invalid toggling parameters: {0}")]
    InvalidToggling(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("geometry parse error on line {line}: {msg}")]
    GeometryParse { line: usize, msg: String },

    #[error("invalid distance {0}: must be > 0")]
    InvalidDistance(f64),

    #[error("phase grid with {m} points aliases correlation orders up to {n} (need M >= {need})")]
    AliasingGrid { m: usize, n: usize, need: usize },

    #[error("spectrum is not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("numeric assertion failed: {0}")]
    Numeric(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("reparameterization requires an injective spread: {0}")]
    NonInjective(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("sector too small: {levels} levels (need at least {need})")]
    SectorTooSmall { levels: usize, need: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
