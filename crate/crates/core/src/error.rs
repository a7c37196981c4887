use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("size {n} outside supported range 1..={max}")]
    SizeLimit { n: usize, max: usize },
    #[error("sequence too short: need {needed} terms, got {got}")]
    Arity { needed: usize, got: usize },
    #[error("division by a series with zero constant term")]
    ZeroConstantTerm,
    #[error("inner series of a composition must have zero constant term")]
    NonzeroInnerConstant,
    #[error("series is not invertible: {0}")]
    NonInvertible(&'static str),
    #[error("degenerate inversion: first moment is zero")]
    DegenerateInversion,
    #[error("evaluation point {re}+{im}i lies on the support")]
    SingularEvaluation { re: f64, im: f64 },
    #[error("argument {z} outside the inversion domain")]
    InversionDomain { z: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("parameters give a negative density (alpha={alpha}, beta={beta}, gamma={gamma})")]
    NegativeDensity { alpha: f64, beta: f64, gamma: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("argument {y} too close to the pole at {pole}")]
    PoleProximity { y: f64, pole: f64 },
    #[error("MCMC acceptance rate {rate:.3} outside [0.05, 0.7] after adaptation")]
    MixingFailure { rate: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("matrix is singular or ill-conditioned (condition number {0:e})")]
    SingularMatrix(f64),
    #[error("eigen-decomposition did not converge")]
    EigenFailure,
    #[error("need at least {min} replicas, got {got}")]
    TooFewReplicas { got: usize, min: usize },
    #[error("quadratic for A(z) has no power-series root with A(0)=1")]
    BranchAmbiguity,
    #[error("recovered Cauchy transform has the wrong branch: {0}")]
    BranchInconsistency(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("inconsistent regression data: {0}")]
    InconsistentRegressionData(String),
}

impl Error {
    /// Failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence(_)
                | Error::MixingFailure { .. }
                | Error::EigenFailure
                | Error::BranchAmbiguity
                | Error::BranchInconsistency(_)
                | Error::InconsistentRegressionData(_)
                | Error::NegativeDensity { .. }
                | Error::SingularMatrix(_)
                | Error::NotPositiveDefinite(_)
        )
    }
}
