use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("fractional order s = {0} outside (0, 1)")]
    InvalidOrder(f64),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid too small: n_interior = {n_interior}, n_exterior = {n_exterior}")]
    GridTooSmall { n_interior: usize, n_exterior: usize },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("region does not contain any interior node")]
    EmptyRegion,

    #[error("exterior data violates the solvability condition (kernel residual {residual:e})")]
    ResonanceViolation { residual: f64 },

    #[error("potential is resonant (kernel dimension {dim_kernel})")]
    ResonantPotential { dim_kernel: usize },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    Asymmetric { asymmetry: f64 },

    #[error("basis is not orthonormal (Gram residual {residual:e})")]
    NonOrthonormal { residual: f64 },

    #[error("degenerate pencil: both quadratic forms vanish on the feasible set")]
    DegeneratePencil,

    #[error("no feasible exterior data: constraints leave an empty complement")]
    EmptyFeasibleSet,

    #[error("support of q1 - q2 is not contained in the target region")]
    SupportNotContained,

    #[error("detection dictionary is empty")]
    EmptyDictionary,

    #[error("partition has no cells")]
    EmptyPartition,

    #[error("witness construction failed for set {set}: optimal weighted energy {energy:e} is not positive")]
    WitnessFailure { set: usize, energy: f64 },

    #[error("potentials live on different grids")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
