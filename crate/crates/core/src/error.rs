use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} does not fit in {precision} digits")]
    IndexOverflow { index: u64, precision: u32 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("mixture has no positive weight")]
    DegenerateMixture,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("argument outside domain: {0}")]
    Domain(String),

    #[error("density returned {value} at {point:?}")]
    InvalidDensity { point: Vec<f64>, value: f64 },

    #[error("mixture fit failed: {0}")]
    Fit(String),

    #[error("ODE integration blew up at t = {time}")]
    Blowup { time: f64 },

    #[error("quadrature needs {requested} nodes, limit is {limit}")]
    NodeBudget { requested: u128, limit: u128 },

    #[error("density integrates to {0:e}, cannot normalize")]
    DegenerateDensity(f64),

    #[error("slope fit needs at least 3 usable points, got {usable}")]
    InsufficientData { usable: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
