use thiserror::Error;

/// Errors surfaced by the solvers, the simulator, and the analysis routines.
#[derive(Debug, Error)]
pub enum MfgError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("closed form out of regime: |u_2 - u_1| = {gap} exceeds 2b = {bound}")]
    OutOfRegime { gap: f64, bound: f64 },

    #[error("iteration limit reached after {iterations} steps (residual {residual:.3e})")]
    IterationLimit { iterations: usize, residual: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("simplex step out of domain: point {point:?} perturbed by h = {h} in direction ({y}, {z})")]
    StepOutOfDomain { point: Vec<f64>, h: f64, y: usize, z: usize },

    #[error("integration step produced mass defect {defect:.3e}; reduce dt = {dt}")]
    StepSize { defect: f64, dt: f64 },

    #[error("training diverged at iteration {iteration}: loss is not finite")]
    Divergence { iteration: usize },

    #[error("infeasible controlled path: {0}")]
    InfeasiblePath(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MfgError>;
