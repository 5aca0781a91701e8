use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("composition needs at least 2 components, got {0}")]
    TooFewComponents(usize),
    #[error("negative entry {value} at component {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, outside tolerance {tol} of 1")]
    SumOutOfTolerance { sum: f64, tol: f64 },
    #[error("component {index} is zero but the model takes logarithms (a = 0 or b = 0)")]
    ZeroEntryWithLogModel { index: usize },
    #[error("all counts are zero and no pseudocount was given")]
    AllZeroNoPseudocount,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for {len} components")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("gamma must be symmetric with zero diagonal")]
    AsymmetricGamma,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("the set of removed coordinates is empty")]
    EmptyJ,
    #[error("diagonal multiplier {0} is below 1")]
    DeltaBelowOne(f64),
    #[error("sample size must be positive")]
    NonpositiveN,
    #[error("operation requires mode {expected}, loss is in mode {got}")]
    WrongMode { expected: String, got: String },
    #[error("zero curvature on active coordinate {0}")]
    ZeroDiagonal(usize),
    #[error("unpenalized block of the quadratic loss is singular")]
    SingularUnpenalizedBlock,
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("truth has no edges or no non-edges")]
    DegenerateTruth,
    #[error("need at least {folds} samples for {folds}-fold cross validation, got {n}")]
    TooFewSamples { n: usize, folds: usize },
    #[error("p-value {0} outside [0, 1]")]
    POutOfRange(f64),
    #[error("dirichlet concentration must be positive, got {0}")]
    NonpositiveAlpha(f64),
    #[error("parameter constraint violated: {0}")]
    ConstraintViolated(String),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("model is not provably normalizable: {0}")]
    NotNormalizable(String),
    #[error("MCMC acceptance rate {0:.4} below 1% after adaptation")]
    ZeroAcceptance(f64),
    #[error("bandwidth {s} too large for {m} components")]
    BandwidthTooLarge { s: usize, m: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
