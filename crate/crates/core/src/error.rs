use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("SegmentThroughBranchPoint: segment passes through a branch point")]
    SegmentThroughBranchPoint,
    #[error("EndpointOnCut: endpoint ({0}, {1}) lies on the open cut")]
    EndpointOnCut(f64, f64),
    #[error("InvalidPoint: {0}")]
    InvalidPoint(String),
    #[error("BranchPointOnGrid: node column (i+1/2)h hits x = +-1 for h = {0}")]
    BranchPointOnGrid(f64),
    #[error("ExtentTooSmall: half extent {0} must exceed 4")]
    ExtentTooSmall(f64),
    #[error("InvalidParameter: {0}")]
    InvalidParameter(String),
    #[error("EmptySupport: lo = {0} must be below hi = {1}")]
    EmptySupport(f64, f64),
    #[error("QuadratureNotConverged: {0}")]
    QuadratureNotConverged(String),
    #[error("GridMismatch: {0}")]
    GridMismatch(String),
    #[error("DegenerateMetric: det g = {0} at ({1}, {2})")]
    DegenerateMetric(f64, f64, f64),
    #[error("SolverDiverged: residual {residual:.3e} after {iterations} iterations")]
    SolverDiverged { residual: f64, iterations: usize },
    #[error("BoundaryContamination: boundary margin mass {0:.3e} exceeds threshold {1:.1e}")]
    BoundaryContamination(f64, f64),
    #[error("ResolutionViolation: {0}")]
    ResolutionViolation(String),
    #[error("TailNotBounded: {0}")]
    TailNotBounded(String),
    #[error("ZeroGamma: gamma must be positive")]
    ZeroGamma,
    #[error("AtPuncture: p0 is the origin")]
    AtPuncture,
    #[error("CutOverlap: shifted support reaches the cut (|k| = {0}, need >= {1})")]
    CutOverlap(f64, f64),
    #[error("NotConverged: {0}")]
    NotConverged(String),
    #[error("EigensolverNotConverged: {0}")]
    EigensolverNotConverged(String),
    #[error("Config: {0}")]
    Config(String),
    #[error("Io: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the runner: 2 for rejected input, 3 for a broken numerical contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SolverDiverged { .. }
            | Error::BoundaryContamination(..)
            | Error::QuadratureNotConverged(_)
            | Error::NotConverged(_)
            | Error::EigensolverNotConverged(_)
            | Error::TailNotBounded(_) => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
