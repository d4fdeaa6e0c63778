use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("dimension {dim}: {points} points is not a power of two >= 8")]
    BadPointCount { dim: usize, points: usize },

    #[error("dimension {dim}: interval [{lo}, {hi}) has non-positive length")]
    EmptyInterval { dim: usize, lo: f64, hi: f64 },

    #[error("grid of {cells} cells exceeds the memory budget of {budget} cells")]
    MemoryBudget { cells: usize, budget: usize },

    #[error("coordinate {dim} is NaN")]
    NanCoordinate { dim: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("component mismatch: expected {expected}, got {got}")]
    ComponentMismatch { expected: usize, got: usize },

    #[error("non-positive mass {mass} for coordinate {dim}")]
    NonPositiveMass { dim: usize, mass: f64 },

    #[error("total world volume is zero")]
    ZeroVolume,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("edge mass {edge_mass:.3e} at t = {time} exceeds threshold {threshold:.3e}")]
    EdgeMass {
        time: f64,
        edge_mass: f64,
        threshold: f64,
    },

    #[error("snapshot cadence mismatch: {0}")]
    CadenceMismatch(String),

    #[error("no alive worlds")]
    NoAliveWorlds,

    #[error("invalid measurement setup: {0}")]
    InvalidSetup(String),

    #[error("state is not of the form sum_i c_i chi_i (x) phi_0: relative residual {residual:.3e}")]
    ModelViolation { residual: f64 },

    #[error("branch {branch} has zero norm")]
    ZeroBranch { branch: usize },

    #[error("world is outside the support of branch {branch}")]
    WorldOutsideBranch { branch: usize },

    #[error("branches re-interfered: overlap mass {overlap:.3e} at t = {time}")]
    BranchesReinterfered { time: f64, overlap: f64 },

    #[error("expectation routes disagree: {born} vs {operator}")]
    ExpectationMismatch { born: f64, operator: f64 },

    #[error("invalid particle layout: {0}")]
    InvalidLayout(String),

    #[error("malformed container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
