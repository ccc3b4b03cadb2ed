use thiserror::Error;

/// Errors raised by the simulators and estimators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("rate `{field}` is not finite")]
    NonFiniteRate { field: &'static str },
    #[error("rate `{field}` is negative ({value})")]
    NegativeRate { field: &'static str, value: f64 },
    #[error("time step {dt} exceeds the explicit stability limit dx^2/2 = {limit}")]
    UnstableTimeStep { dt: f64, limit: f64 },
    #[error("lattice noise strength nu dt / dx = {kappa} exceeds 1")]
    NoiseTooStrong { kappa: f64 },
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("table sample {value} at x = {x} lies outside [0, 1]")]
    TableOutOfRange { x: f64, value: f64 },
    #[error("the mild solver is deterministic but nu = {nu}")]
    RequiresDeterministic { nu: f64 },
    #[error("no level crossing at threshold {theta}")]
    NoCrossing { theta: f64 },
    #[error("{found} samples in the fitting window, need at least {needed}")]
    InsufficientSamples { found: usize, needed: usize },
    #[error("front at {front} came within {margin} of the boundary at t = {t}")]
    BoundaryContact { t: f64, front: f64, margin: f64 },
    #[error("the dual process needs at least one initial particle")]
    EmptyInitial,
    #[error("no particle alive")]
    Extinct,
    #[error("particle count {count} exceeded the cap {cap} at t = {t}")]
    ExplosionGuard { count: usize, cap: usize, t: f64 },
    #[error("argument must be positive, got {0}")]
    NonPositiveArgument(f64),
    #[error("formula only holds for unit branching rate, got s = {s}")]
    UnsupportedSelection { s: f64 },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
