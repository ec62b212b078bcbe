//! Closed-form checks for the three-dimensional nonexistence constructions:
//! the mixed second derivative forced along a boundary edge, and the sector
//! barrier built from the 3/2-power harmonic.
//!
//! Nothing here solves a 3D equation. The point is that every checkable
//! formula — the edge-compatibility root, the barrier's Laplacian, the
//! gradient identity behind it — is verified numerically against independent
//! finite differences.

use serde::Serialize;

use crate::numeric::fd::hessian_2d;
use crate::{Error, Result};

/// Opening of the planar sector carrying the barrier (2π/3).
pub const SECTOR_OPENING: f64 = 2.0 * std::f64::consts::PI / 3.0;
/// Central-difference step for the built-in verification sweeps.
pub const FD_STEP: f64 = 1e-3;

/// Mixed second derivative forced along a boundary edge.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EdgeComputation {
    /// Determinant value prescribed at the edge point, in (0, 1].
    pub f_value: f64,
    /// The forced off-diagonal entry `u₁₂ = −√(1 − f)`.
    pub mixed_derivative: f64,
}

/// Along the edge the boundary data pins `u₁₁ = u₂₂ = u₃₃ = 1` and
/// `u₁₃ = u₂₃ = 0`, so `det D²u = f` leaves a quadratic for `u₁₂` alone;
/// the negative root is selected by continuity from the vertex, where the
/// model data `(x₁² + x₂² + x₃²)/2 − x₁x₂/2` gives exactly −1/2.
pub fn edge_mixed_derivative(f_value: f64) -> Result<EdgeComputation> {
    if !(f_value > 0.0) {
        return Err(Error::invalid(format!(
            "edge determinant {f_value} must be positive"
        )));
    }
    if f_value > 1.0 {
        return Err(Error::invalid(format!(
            "no real root: edge determinant {f_value} exceeds 1"
        )));
    }
    Ok(EdgeComputation {
        f_value,
        mixed_derivative: -(1.0 - f_value).sqrt(),
    })
}

impl EdgeComputation {
    /// `det [[1, m, 0], [m, 1, 0], [0, 0, 1]] = 1 − m²`; equals `f_value`
    /// by construction and is cross-checked by an explicit 3×3 determinant
    /// in the tests.
    pub fn hessian_det(&self) -> f64 {
        1.0 - self.mixed_derivative * self.mixed_derivative
    }
}

/// Barrier ingredients at a sector point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BarrierValues {
    /// The sector harmonic `h = r^{3/2} sin(3θ/2)`.
    pub h: f64,
    /// The barrier `v = h^{5/4}`.
    pub v: f64,
    /// `Δv = (45/64) r^{−1/8} (sin 3θ/2)^{−3/4}`.
    pub laplacian_v: f64,
}

/// Closed-form barrier values. The identity behind the Laplacian is
/// `Δ(h^p) = p(p−1) h^{p−2} |∇h|²` for harmonic `h`, with `|∇h|² = (9/4) r`
/// here; both facts are validated by finite differences in the tests.
pub fn barrier_values(r: f64, theta: f64) -> Result<BarrierValues> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("radius {r} must be positive")));
    }
    if !(theta > 0.0 && theta < SECTOR_OPENING) {
        return Err(Error::invalid(format!(
            "edge singularity: θ = {theta} is not interior to (0, {SECTOR_OPENING})"
        )));
    }
    let s = (1.5 * theta).sin();
    let h = r.powf(1.5) * s;
    Ok(BarrierValues {
        h,
        v: h.powf(1.25),
        laplacian_v: (45.0 / 64.0) * r.powf(-0.125) * s.powf(-0.75),
    })
}

/// The barrier as a plane function, extended by zero across the edges (only
/// relevant when a finite-difference stencil grazes an edge).
pub fn barrier_cartesian(x1: f64, x2: f64) -> f64 {
    let r = x1.hypot(x2);
    if r == 0.0 {
        return 0.0;
    }
    let theta = x2.atan2(x1);
    if !(theta > 0.0 && theta < SECTOR_OPENING) {
        return 0.0;
    }
    (r.powf(1.5) * (1.5 * theta).sin()).powf(1.25)
}

/// Finite-difference Hessian-to-Laplacian ratio of the barrier at one point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HessianRatio {
    pub r: f64,
    pub theta: f64,
    /// Largest second-derivative entry `max |v_ij|` (the barrier does not
    /// depend on x₃, so its third Hessian row and column vanish exactly and
    /// the max runs over the plane block).
    pub max_abs_vij: f64,
    /// Spectral norm of the Hessian over `Δv` — the frame-independent form
    /// of the bound, exactly symmetric under the sector's θ-reflection.
    pub ratio: f64,
}

/// Check the Hessian bound `|v_ij| ≤ C·Δv` at one interior point by central
/// differences. Only finiteness of the ratio is claimed (no explicit
/// constant), so the report carries the observed value.
pub fn hessian_bound_check(r: f64, theta: f64) -> Result<HessianRatio> {
    let vals = barrier_values(r, theta)?;
    if theta < 1e-6 || SECTOR_OPENING - theta < 1e-6 {
        return Err(Error::invalid(format!(
            "θ = {theta} is within 1e-6 of a sector edge"
        )));
    }
    let (x1, x2) = (r * theta.cos(), r * theta.sin());
    let hess = hessian_2d(&barrier_cartesian, x1, x2, FD_STEP);
    let max_abs = hess.iter().flatten().fold(0.0_f64, |m, e| m.max(e.abs()));
    let half_tr = 0.5 * (hess[0][0] + hess[1][1]);
    let disc = (0.5 * (hess[0][0] - hess[1][1])).hypot(hess[0][1]);
    let spectral = (half_tr + disc).abs().max((half_tr - disc).abs());
    Ok(HessianRatio {
        r,
        theta,
        max_abs_vij: max_abs,
        ratio: spectral / vals.laplacian_v,
    })
}
