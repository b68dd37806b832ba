use thiserror::Error;

/// Errors raised by model construction, kernel evaluation and the experiments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("input contains non-finite entries")]
    NonFinite,
    #[error("Q is not symmetric (relative asymmetry {0:.3e})")]
    NonSymmetric(f64),
    #[error("Q is not positive definite")]
    NonPositiveDefinite,
    #[error("B is not Hurwitz: eigenvalue with real part {0:.3e}")]
    NonHurwitz(f64),
    #[error("Lyapunov solve failed: relative residual {0:.3e}")]
    LyapunovResidual(f64),
    #[error("matrix exponential overflowed")]
    Overflow,
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("covariance Q_t is numerically singular at t = {0:e}")]
    SingularCovariance(f64),
    #[error("quadrature did not converge: estimated error {estimate:.3e} exceeds tolerance {tolerance:.3e}")]
    QuadratureNotConverged { estimate: f64, tolerance: f64 },
    #[error("integrand is not integrable on the truncation box")]
    NonIntegrable,
    #[error("truncation tail mass {tail:.3e} exceeds tolerance {tolerance:.3e}")]
    TruncationDominates { tail: f64, tolerance: f64 },
    #[error("s-truncation tail {tail:.3e} is not negligible")]
    TailNotNegligible { tail: f64 },
    #[error("polar coordinates require a nonzero vector")]
    ZeroVector,
    #[error("root bracket for the polar radius not found within |s| <= {0}")]
    RootFindFailed(f64),
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("t-grid too coarse: supremum changed by {:.2}% on refinement", .change * 100.0)]
    GridTooCoarse { change: f64 },
    #[error("level-set resolution too coarse: measure changed by {:.2}% on refinement", .change * 100.0)]
    ResolutionTooCoarse { change: f64 },
    #[error("ball escapes the truncation box: {0}")]
    BallEscapesBox(String),
    #[error("{} pairs of forbidden-zone balls intersect, first {:?}", .pairs.len(), .pairs.first())]
    DisjointnessViolated { pairs: Vec<(usize, usize)> },
    #[error("{} cloud points not covered by any zone, first {:?}", .points.len(), .points.first())]
    CoverageViolated { points: Vec<usize> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Variant name, for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "Dimension",
            Error::NonFinite => "NonFinite",
            Error::NonSymmetric(_) => "NonSymmetric",
            Error::NonPositiveDefinite => "NonPositiveDefinite",
            Error::NonHurwitz(_) => "NonHurwitz",
            Error::LyapunovResidual(_) => "LyapunovResidual",
            Error::Overflow => "Overflow",
            Error::NonPositiveTime(_) => "NonPositiveTime",
            Error::SingularCovariance(_) => "SingularCovariance",
            Error::QuadratureNotConverged { .. } => "QuadratureNotConverged",
            Error::NonIntegrable => "NonIntegrable",
            Error::TruncationDominates { .. } => "TruncationDominates",
            Error::TailNotNegligible { .. } => "TailNotNegligible",
            Error::ZeroVector => "ZeroVector",
            Error::RootFindFailed(_) => "RootFindFailed",
            Error::DegenerateSample(_) => "DegenerateSample",
            Error::GridTooCoarse { .. } => "GridTooCoarse",
            Error::ResolutionTooCoarse { .. } => "ResolutionTooCoarse",
            Error::BallEscapesBox(_) => "BallEscapesBox",
            Error::DisjointnessViolated { .. } => "DisjointnessViolated",
            Error::CoverageViolated { .. } => "CoverageViolated",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}
