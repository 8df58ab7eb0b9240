use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: need at least 3 nodes, got {0}")]
    InvalidGrid(usize),

    #[error("grid has {n} nodes; all-pairs scans are limited to {cap}")]
    GridTooLarge { n: usize, cap: usize },

    #[error("grid mismatch: {left} nodes vs {right} nodes")]
    GridMismatch { left: usize, right: usize },

    #[error("sampled values must be finite and match the grid ({0})")]
    InvalidSamples(String),

    #[error("Hölder exponent {0} outside [0, 2]")]
    InvalidExponent(f64),

    #[error("invalid Hölder class: {0}")]
    InvalidClass(String),

    #[error("unknown noise model `{0}`")]
    InvalidModel(String),

    #[error("noise radius must be non-negative and finite, got {0}")]
    InvalidDelta(f64),

    #[error("the difference regularizer needs a > 1, got a = {0}; use a witness pair for a <= 1")]
    UnsupportedExponent(f64),

    #[error("snapped step h = {h} is not below 1/2 on this grid")]
    StepTooLarge { h: f64 },

    #[error("no candidate was admissible for the given data and class")]
    EmptyAdmissibleSet,

    #[error("bump width {width} is under four grid spacings ({dx})")]
    Resolution { width: f64, dx: f64 },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid source set: p = {p}, k = {k}")]
    InvalidSource { p: f64, k: f64 },

    #[error("regularization parameter must be positive, got {0}")]
    InvalidParameter(f64),

    #[error("every singular value is zero")]
    DegenerateProblem,

    #[error("admissible set is empty: {0}")]
    Infeasible(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
