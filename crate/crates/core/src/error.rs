use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("probability mass {mass:.3e} reached the grid boundary at t = {t:.6}")]
    BoundaryBreach { t: f64, mass: f64 },

    #[error("step too large: probability loss {loss:.4} in one step (dt = {dt:.3e})")]
    StepTooLarge { loss: f64, dt: f64 },

    #[error("all lattice overlaps vanish; the state is outside the lattice reach")]
    DegenerateState,

    #[error("intensity does not decay: lambda(t_max)/lambda(0) = {ratio:.3e}")]
    NotEscaping { ratio: f64 },

    #[error("fit rejected: {0}")]
    BadFit(String),

    #[error("filter output norm {norm:.3e} is zero")]
    ZeroOverlap { norm: f64 },

    #[error("event interval {dt:.3e} between clicks is degenerate")]
    DegenerateInterval { dt: f64 },

    #[error("density matrix invariant violated: {0}")]
    InvariantViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
