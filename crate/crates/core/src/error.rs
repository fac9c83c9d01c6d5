use thiserror::Error;

/// Errors raised by model construction, solvers and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("state {state:?} has no feasible action")]
    EmptyActionSet { state: Vec<i64> },
    #[error("row for state {state:?}, action {action:?} has no mass inside the lattice")]
    ZeroInteriorMass { state: Vec<i64>, action: Vec<i64> },
    #[error("action {action:?} is infeasible at state {state:?}")]
    InfeasibleAction { state: Vec<i64>, action: Vec<i64> },
    #[error("linear system is singular or could not be solved: {0}")]
    SingularSystem(String),
    #[error("no convergence after {iterations} iterations")]
    MaxIterationsExceeded { iterations: usize },
    #[error("small-drift condition violated: mu = {mu}, sigma2 = {sigma2}, h = {h}")]
    SmallDriftViolated { mu: f64, sigma2: f64, h: f64 },
    #[error("diffusion matrix not diagonally dominant at state {state:?}, action {action:?}: {entries:?}")]
    NotDiagonallyDominant {
        state: Vec<i64>,
        action: Vec<i64>,
        /// (row, diagonal entry, sum of off-diagonal magnitudes)
        entries: Vec<(usize, f64, f64)>,
    },
    #[error("reflection direction is not inward at state {state:?}")]
    NonInwardEta { state: Vec<i64> },
    #[error("boundary data missing: {0}")]
    MissingBoundaryData(String),
    #[error("closed-form moments not available for this model")]
    NotAvailable,
    #[error("stencil needs {needed} points, state {state} is too close to the edge")]
    OutOfStencilRange { state: usize, needed: usize },
    #[error("neighbourhood radius {radius} is smaller than the grid spacing {spacing}")]
    InsufficientNeighborhood { radius: f64, spacing: f64 },
    #[error("lattices do not match: {0}")]
    LatticeMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl Error {
    /// Stable machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidLattice(_) => "invalid_lattice",
            Error::EmptyActionSet { .. } => "empty_action_set",
            Error::ZeroInteriorMass { .. } => "zero_interior_mass",
            Error::InfeasibleAction { .. } => "infeasible_action",
            Error::SingularSystem(_) => "singular_system",
            Error::MaxIterationsExceeded { .. } => "max_iterations_exceeded",
            Error::SmallDriftViolated { .. } => "small_drift_violated",
            Error::NotDiagonallyDominant { .. } => "not_diagonally_dominant",
            Error::NonInwardEta { .. } => "non_inward_eta",
            Error::MissingBoundaryData(_) => "missing_boundary_data",
            Error::NotAvailable => "not_available",
            Error::OutOfStencilRange { .. } => "out_of_stencil_range",
            Error::InsufficientNeighborhood { .. } => "insufficient_neighborhood",
            Error::LatticeMismatch(_) => "lattice_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
