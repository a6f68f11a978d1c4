use thiserror::Error;

pub type Result<T> = std::result::Result<T, HydroError>;

#[derive(Debug, Error)]
pub enum HydroError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Nonpositive Jacobian determinant of the current mapping.
    #[error("mesh tangled in element {elem} (det J = {det:e})")]
    Tangled { elem: usize, det: f64 },

    #[error("degenerate boundary face {face} of element {elem}")]
    DegenerateFace { elem: usize, face: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("time step rejected {0} consecutive times")]
    TooManyRejections(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HydroError {
    /// Errors that a time-step controller may recover from by shrinking the step.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, HydroError::Tangled { .. })
    }
}
