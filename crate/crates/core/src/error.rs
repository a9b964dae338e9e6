use thiserror::Error;

/// Errors produced by the simulator and analysis layer.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument lies outside its valid range.
    #[error("invalid parameter `{name}` = {value}: {constraint}")]
    Parameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// C(alpha) is infinite for alpha <= 2 because the radial interference integral diverges.
    #[error("path-loss exponent alpha = {0} must exceed 2 (interference integral diverges)")]
    DivergentInterference(f64),

    /// The deployment has no neighbor pairs, so no link statistic exists.
    #[error("deployment has no links within range")]
    NoLinks,

    /// The initial state is already at consensus, so the contraction ratio is undefined.
    #[error("initial disagreement energy is zero")]
    DegenerateStart,

    /// A caller-supplied structure broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A simulation invariant failed at runtime.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(name: &'static str, value: f64, constraint: &'static str) -> Error {
    Error::Parameter {
        name,
        value,
        constraint,
    }
}

/// Returns `Ok(value)` if `ok` holds, otherwise a parameter error.
pub(crate) fn ensure(ok: bool, name: &'static str, value: f64, constraint: &'static str) -> Result<f64> {
    if ok {
        Ok(value)
    } else {
        Err(param(name, value, constraint))
    }
}
