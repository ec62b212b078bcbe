//! Numerical toolkit for the Dirichlet Monge-Ampère equation `det D²u = f`
//! on rectangles and parallelograms, focused on the behaviour of solutions
//! near a corner of opening `μπ`.
//!
//! The crate is organised around a log-polar change of variables: writing the
//! convex solution as `u = |x|²/2 + v`, the perturbation `v` is transported to
//! the strip `(t, θ) = (−ln|x|, θ)` where it admits an asymptotic expansion in
//! terms `c(θ) tʲ e^{−γt}`. The modules cover the full workflow:
//!
//! * [`cone`] — cone geometry, strip transport, strip-coordinate Hessian
//!   determinant, harmonic corner modes, and the affine normalisation that
//!   reduces a constant right-hand side to 1.
//! * [`exponents`] — the ledger of admissible decay exponents, resonance and
//!   collision bookkeeping, and Hölder regularity labels.
//! * [`modes`] — per-mode ODE machinery on the cone cross-section: Chebyshev
//!   collocation two-point solves, decaying particular solutions on the
//!   half-line, and the triangular lift that absorbs resonant sources into
//!   logarithmic terms.
//! * [`expansion`] — symbolic expansion terms, the quadratic source produced
//!   by the Hessian determinant, and the order-by-order extension engine.
//! * [`solver`] — damped-Newton finite-difference solver for
//!   `det D²u = f` with geometric multigrid linear solves, graded grids, and
//!   affine pullback of solutions.
//! * [`analysis`] — mode projections, exponent/amplitude fitting, residual
//!   cascades, and barrier checks applied to computed fields.
//! * [`dim3`] — closed-form checks for three-dimensional edge and vertex
//!   model problems.
//! * [`scenario`] — reproducible end-to-end scenario runs with JSON configs,
//!   CSV/JSON artifacts, and a SHA-256 manifest.
//!
//! The `corner-ma` binary is a thin wrapper over [`scenario::run`]; the
//! `examples/` directory demonstrates each capability as a small program.

pub mod analysis;
pub mod cone;
pub mod dim3;
pub mod expansion;
pub mod exponents;
pub mod grid;
pub mod modes;
pub mod numeric;
pub mod scenario;
pub mod solver;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed geometric input (opening angle, window, resolution, ...).
    #[error("invalid geometry: {0}")]
    Geometry(String),
    /// An argument is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Requested samples are not covered by the supplied data.
    #[error("insufficient coverage: {0}")]
    InsufficientCoverage(String),
    /// A cross-section operator is singular (or nearly so) for this rate.
    #[error("resonant mode operator: {0}")]
    Resonant(String),
    /// A triangular resonant solve left an unresolvable component.
    #[error("unresolved resonant component: {0}")]
    Unresolved(String),
    /// Adaptive quadrature failed to reach the requested tolerance.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    /// Damped Newton could not make progress.
    #[error("Newton iteration stagnated: {0}")]
    NewtonStagnation(String),
    /// An inner linear solve failed to converge.
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    /// The requested signal is indistinguishable from numerical noise.
    #[error("signal below noise floor: {0}")]
    NoiseFloor(String),
    /// A fitted signal changes sign inside the fit window.
    #[error("no stable sign over the fit window: {0}")]
    UnstableSign(String),
    /// The expansion state is internally inconsistent.
    #[error("inconsistent expansion: {0}")]
    Expansion(String),
    /// A resonant exponent needs a caller-supplied free coefficient.
    #[error("missing free coefficient for resonant exponent {0}")]
    MissingFreeCoefficient(String),
    /// Scenario configuration is malformed.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
