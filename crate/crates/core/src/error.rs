use thiserror::Error;

/// Crate-wide error type. Variants carry the numbers a caller needs to act on
/// the failure (defects, cutoffs, offending keys) rather than prose alone.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix entries must be finite")]
    NonFiniteEntries,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("matrix is not symmetric positive definite: min eigenvalue {min_eig:.3e}")]
    NotSpd { min_eig: f64 },
    #[error("singular system: smallest singular value {sigma_min:.3e} below cutoff {cutoff:.3e}")]
    SingularSystem { sigma_min: f64, cutoff: f64 },
    #[error("linear solve residual {residual:.3e} exceeds {bound:.3e}")]
    SolveResidual { residual: f64, bound: f64 },
    #[error("eigendecomposition did not converge")]
    EigFailed,
    #[error("singular value decomposition did not converge")]
    SvdFailed,
    #[error("empty input: {what}")]
    EmptyInput { what: &'static str },
    #[error("grid nodes must increase strictly (violated at index {index})")]
    NonIncreasingGrid { index: usize },
    #[error("horizon must be positive, got {value}")]
    BadHorizon { value: f64 },
    #[error("exponent out of range: {what} = {value}")]
    BadExponent { what: &'static str, value: f64 },
    #[error("step {step:.3e} times operator norm {sup_norm:.3e} exceeds 0.5; refine the time grid")]
    StepSizeViolation { step: f64, sup_norm: f64 },
    #[error("fixed point sweep stalled at defect {defect:.3e} after {iters} sweeps; subdivide the interval and compose the pieces by the two-parameter law")]
    PicardDiverged { defect: f64, iters: usize },
    #[error("family evaluation produced a non-finite or mis-sized operator at t = {t}")]
    BadFamilyEval { t: f64 },
    #[error("snapshot data: {msg}")]
    Snapshot { msg: String },
    #[error("ellipticity violated at t = {t}: min coefficient eigenvalue {min_eig:.3e}")]
    EllipticityViolation { min_eig: f64, t: f64 },
    #[error("domain spec: {msg}")]
    Domain { msg: String },
    #[error("no boundary cells are marked observed")]
    NoObservedBoundary,
    #[error("fractional exponent {alpha} outside (0, 0.5); pass force=true to build anyway")]
    FractionalExponentRange { alpha: f64 },
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("hypothesis violated: {msg}")]
    Hypothesis { msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
