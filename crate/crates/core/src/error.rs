//! Crate-wide error type.
//!
//! Failures carry enough context to be actionable from a driver: which
//! formula rejected its inputs, where a film collapsed, which stage hit its
//! iteration limit.

/// Everything the library can fail with.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A derived-parameter formula produced a non-finite or out-of-domain
    /// value. `formula` names the offending expression.
    #[error("parameter out of domain in `{formula}`: {detail}")]
    ParamDomain {
        formula: &'static str,
        detail: String,
    },

    /// A constitutive law could not be evaluated at the given pressure.
    #[error("{law} undefined at u = {u:e}: {detail}")]
    Evaluation {
        law: &'static str,
        u: f64,
        detail: String,
    },

    /// Film thickness dropped to zero or below at a quadrature point.
    #[error("film collapse: h = {min_h:e} at x = ({x:e}, {y:e})")]
    FilmCollapse { min_h: f64, x: f64, y: f64 },

    /// A field, kernel, or layout was used with a mesh it was not built on.
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    /// Invalid mesh construction request.
    #[error("mesh construction: {0}")]
    MeshBuild(String),

    /// Out-of-range element access.
    #[error("element index {index} out of range (mesh has {len} elements)")]
    ElementIndex { index: usize, len: usize },

    /// The factorization or triangular solve failed.
    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    /// An iteration budget was exhausted before the tolerance was met.
    #[error("{stage}: iteration limit {limit} exceeded (residual {residual:e})")]
    IterationLimit {
        stage: &'static str,
        limit: usize,
        residual: f64,
    },

    /// The residual grew persistently instead of contracting.
    #[error("{stage}: divergence, residual grew from {from:e} to {to:e}")]
    Divergence {
        stage: &'static str,
        from: f64,
        to: f64,
    },

    /// The force-balance loop could not close the load constraint.
    #[error("force balance: {0}")]
    ForceBalance(String),

    /// A solver or study configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Rate estimation rejected its inputs (non-positive errors, too few points).
    #[error("rate estimate: {0}")]
    RateEstimate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
