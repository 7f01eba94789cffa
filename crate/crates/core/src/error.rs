use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{what} is numerically singular (condition number {cond:.3e}); state: {state}")]
    Singular { what: &'static str, cond: f64, state: String },

    #[error("desired thrust vector is degenerate (|f_d| = {norm:.3e} N)")]
    DegenerateThrust { norm: f64 },

    #[error("desired thrust is parallel to the heading direction")]
    DegenerateHeading,

    #[error("task Jacobian block is singular at q = {q:?} (condition number {cond:.3e})")]
    ArmSingularity { q: Vec<f64>, cond: f64 },

    #[error("simulation diverged at t = {t:.4} s: {reason}")]
    Diverged { t: f64, reason: String },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
