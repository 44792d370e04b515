use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature evaluation is not finite at {x:?}")]
    Domain { x: Vec<f64> },

    #[error("point {x:?} lies outside the domain box")]
    OutsideDomain { x: Vec<f64> },

    #[error("invalid feature: {0}")]
    InvalidFeature(String),

    #[error("features are linearly dependent (feature index {index}, sigma ratio {ratio:.3e})")]
    DependentFeatures { index: usize, ratio: f64 },

    #[error("{what} is numerically singular (condition {cond:.3e})")]
    Singular { what: String, cond: f64 },

    #[error("basis selection failed after {attempts} attempts; best condition {best_cond:.3e}")]
    SelectionFailed { attempts: usize, best_cond: f64 },

    #[error("basis points: {0}")]
    BasisPoints(String),

    #[error("space mismatch: expected {expected}, got {got}")]
    SpaceMismatch { expected: String, got: String },

    #[error("coefficient length {got} does not match basis count {expected}")]
    Length { expected: usize, got: usize },

    #[error("non-finite coefficient")]
    NonFinite,

    #[error("component for agent {agent} not representable (residual {residual:.3e})")]
    NotRepresentable { agent: usize, residual: f64 },

    #[error("negative eigenvalue {value:.3e} for a positive operator")]
    NegativeEigenvalue { value: f64 },

    #[error("psi element carries no (x, y) provenance")]
    MissingProvenance,

    #[error("feasible sampling set is empty: {0}")]
    EmptyFeasibleSet(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("denominator vanishes")]
    DenominatorVanishes,

    #[error("horizon too short: {0} (need at least 10)")]
    HorizonTooShort(usize),

    #[error("window {window} longer than subsequence {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("missing norm estimates; rerun with per-iteration estimation enabled")]
    MissingEstimates,

    #[error("refused: {0}")]
    Refused(String),

    #[error("iteration {n}: {source}")]
    Iteration {
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
