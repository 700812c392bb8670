use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: expected 1, 2 or 3")]
    InvalidDimension(usize),
    #[error("grid size {0} is not a power of two >= 8")]
    NonPowerOfTwo(usize),
    #[error("box length must be positive, got {0}")]
    NonpositiveLength(f64),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("field is identically zero")]
    ZeroField,
    #[error("field has zero mass")]
    ZeroMass,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("potential `{0}` is not differentiable (W unavailable)")]
    NonDifferentiablePotential(String),
    #[error("potential `{0}` is not symmetric")]
    AsymmetricPotential(String),
    #[error("no sign change of V + W/2 on (0, {r_max}]")]
    NoSignChange { r_max: f64 },
    #[error("operation requires d = {expected}, got d = {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("split is too coarse: g*C*m*||V_R,2|| = {value} >= 1/4")]
    SplitTooCoarse { value: f64 },
    #[error("no admissible split radius on this box")]
    NoAdmissibleRadius,
    #[error("non-finite value encountered during the flow after {halvings} step halvings")]
    NanEncountered { halvings: usize },
    #[error("insufficient tail: only {shells} usable shells")]
    InsufficientTail { shells: usize },
    #[error("could not bracket the critical coupling within {expansions} expansions")]
    BracketNotFound { expansions: usize },
    #[error("transition classification inconclusive: {0}")]
    Inconclusive(String),
    #[error("eigensolver did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("theta = {theta} is outside the admissible range |theta| <= {max}")]
    ThetaOutOfRange { theta: f64, max: f64 },
    #[error("infinite or non-finite ||W||_3/2 on this box")]
    InfiniteWNorm,
    #[error("flow crossed the constraint guard ||grad u||^2 <= {guard}")]
    ConstraintHit { guard: f64 },
    #[error("mountain-pass geometry violated: {0}")]
    GeometryViolated(String),
    #[error("saddle search did not converge: {0}")]
    SaddleNoConvergence(String),
    #[error("malformed field dump: {0}")]
    BadDump(String),
    #[error("malformed potential table: {0}")]
    BadTable(String),
    #[error("config invalid: {0}")]
    ConfigInvalid(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
