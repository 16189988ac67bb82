use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("root finder did not converge: {0}")]
    NonConvergence(String),
    #[error("degree mismatch: {0}")]
    DegreeMismatch(String),
    #[error("inconsistent configuration: {0}")]
    InconsistentConfiguration(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("R is negative inside a gap: {0}")]
    NegativeRUnderRoot(String),
    #[error("negative density on a cut: {0}")]
    NegativeDensity(String),
    #[error("Newton iteration diverged: {0}")]
    NewtonDiverged(String),
    #[error("topology broken: {0}")]
    TopologyBroken(String),
    #[error("near-singular configuration: {0}")]
    NearSingular(String),
    #[error("seed failed: {0}")]
    SeedFailed(String),
    #[error("event resolution failed: {0}")]
    EventResolutionFailed(String),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("insufficient probe window: {0}")]
    InsufficientWindow(String),
    #[error("degenerate field: {0}")]
    DegenerateField(String),
    #[error("no real configuration: {0}")]
    NoRealConfiguration(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonConvergence(_) => "NonConvergence",
            Error::DegreeMismatch(_) => "DegreeMismatch",
            Error::InconsistentConfiguration(_) => "InconsistentConfiguration",
            Error::SingularSystem(_) => "SingularSystem",
            Error::NegativeRUnderRoot(_) => "NegativeRUnderRoot",
            Error::NegativeDensity(_) => "NegativeDensity",
            Error::NewtonDiverged(_) => "NewtonDiverged",
            Error::TopologyBroken(_) => "TopologyBroken",
            Error::NearSingular(_) => "NearSingular",
            Error::SeedFailed(_) => "SeedFailed",
            Error::EventResolutionFailed(_) => "EventResolutionFailed",
            Error::StepUnderflow(_) => "StepUnderflow",
            Error::InsufficientWindow(_) => "InsufficientWindow",
            Error::DegenerateField(_) => "DegenerateField",
            Error::NoRealConfiguration(_) => "NoRealConfiguration",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
