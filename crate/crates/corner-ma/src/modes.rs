//! Per-mode ODE machinery on the cone cross-section `[0, μπ]`.
//!
//! Separating a strip field into terms `c(θ) tʲ e^{−γt}` reduces the Laplace
//! operator to families of two-point problems in θ. Three solvers live here:
//!
//! * [`theta_bvp`] — `w″ + γ²w = h`, zero Dirichlet, by Chebyshev–Lobatto
//!   collocation. Singular exactly at the harmonic-mode rates `γ = i/μ`.
//! * [`resonant_lift`] — when γ is a mode rate the source is absorbed by
//!   raising the power of t: a triangular solve determines profiles
//!   `w_0 … w_{m+1}` with one extra power and minimal-norm components.
//! * [`solve_decaying_mode`] — the scalar half-line problem `ψ″ − ν²ψ = f`
//!   for a single angular mode, solved by decaying Green's-function
//!   quadrature with explicit truncation control.

use crate::cone::ConeGeometry;
use crate::numeric::chebyshev::Lobatto;
use crate::numeric::quad::adaptive_simpson;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::rc::Rc;

/// Margin below which the cross-section operator is treated as singular.
const SINGULAR_MARGIN: f64 = 1e-12;
/// Relative cut for discarding singular values in the resonant pseudo-inverse.

/// Shared Chebyshev–Lobatto discretisation of the cross-section `[0, μπ]`.
#[derive(Debug)]
pub struct ThetaBasis {
    cone: ConeGeometry,
    lobatto: Lobatto,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    weights: Vec<f64>,
}

impl ThetaBasis {
    /// `degree + 1` collocation nodes on `[0, μπ]`. Degree 64 resolves every
    /// profile this crate produces to near machine precision.
    pub fn new(cone: &ConeGeometry, degree: usize) -> Result<Rc<Self>> {
        if degree < 4 {
            return Err(Error::invalid("cross-section basis needs degree ≥ 4"));
        }
        let lobatto = Lobatto::new(degree, cone.opening());
        let d1 = lobatto.diff_matrix();
        let d2 = &d1 * &d1;
        let weights = lobatto.quad_weights();
        Ok(Rc::new(ThetaBasis {
            cone: *cone,
            lobatto,
            d1,
            d2,
            weights,
        }))
    }

    pub fn cone(&self) -> &ConeGeometry {
        &self.cone
    }

    pub fn len(&self) -> usize {
        self.lobatto.degree() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        self.lobatto.nodes()
    }

    /// Clenshaw–Curtis integral over the cross-section.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// L² inner product on `[0, μπ]`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// Kernel profile `sin(γθ)` of the operator `w″ + γ²w` at the nodes.
    pub fn kernel_values(&self, gamma: f64) -> Vec<f64> {
        self.nodes().iter().map(|&th| (gamma * th).sin()).collect()
    }
}

/// Scalar profile over the cross-section, stored at the collocation nodes.
#[derive(Debug, Clone)]
pub struct ThetaProfile {
    basis: Rc<ThetaBasis>,
    values: Vec<f64>,
}

impl ThetaProfile {
    pub fn from_values(basis: &Rc<ThetaBasis>, values: Vec<f64>) -> Result<Self> {
        if values.len() != basis.len() {
            return Err(Error::invalid("profile length does not match basis"));
        }
        Ok(ThetaProfile {
            basis: Rc::clone(basis),
            values,
        })
    }

    pub fn from_fn(basis: &Rc<ThetaBasis>, f: impl Fn(f64) -> f64) -> Self {
        let values = basis.nodes().iter().map(|&th| f(th)).collect();
        ThetaProfile {
            basis: Rc::clone(basis),
            values,
        }
    }

    pub fn zeros(basis: &Rc<ThetaBasis>) -> Self {
        ThetaProfile {
            basis: Rc::clone(basis),
            values: vec![0.0; basis.len()],
        }
    }

    pub fn basis(&self) -> &Rc<ThetaBasis> {
        &self.basis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Barycentric evaluation anywhere on `[0, μπ]`.
    pub fn eval(&self, theta: f64) -> f64 {
        self.basis.lobatto.interpolate(&self.values, theta)
    }

    pub fn derivative(&self) -> ThetaProfile {
        self.apply_matrix(&self.basis.d1)
    }

    pub fn second_derivative(&self) -> ThetaProfile {
        self.apply_matrix(&self.basis.d2)
    }

    fn apply_matrix(&self, m: &DMatrix<f64>) -> ThetaProfile {
        let v = DVector::from_column_slice(&self.values);
        ThetaProfile {
            basis: Rc::clone(&self.basis),
            values: (m * v).iter().copied().collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pointwise combination at the shared nodes.
    pub fn zip_with(&self, other: &ThetaProfile, f: impl Fn(f64, f64) -> f64) -> ThetaProfile {
        ThetaProfile {
            basis: Rc::clone(&self.basis),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ThetaProfile {
        ThetaProfile {
            basis: Rc::clone(&self.basis),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn inner(&self, other: &ThetaProfile) -> f64 {
        self.basis.inner(&self.values, &other.values)
    }
}

/// `|sin(γμπ)|`: the distance of the rate γ from the singular set of the
/// cross-section operator, as seen by the boundary-value problem.
pub fn resonance_margin(cone: &ConeGeometry, gamma: f64) -> f64 {
    (gamma * cone.opening()).sin().abs()
}

/// Operator matrix `D² + γ²I` with the two boundary rows replaced by the
/// Dirichlet conditions.
fn operator_with_bc(basis: &ThetaBasis, gamma: f64) -> DMatrix<f64> {
    let n = basis.len();
    let mut a = basis.d2.clone();
    for i in 0..n {
        a[(i, i)] += gamma * gamma;
    }
    for j in 0..n {
        a[(0, j)] = if j == 0 { 1.0 } else { 0.0 };
        a[(n - 1, j)] = if j == n - 1 { 1.0 } else { 0.0 };
    }
    a
}

/// Solve `w″ + γ²w = h` on `(0, μπ)` with `w(0) = w(μπ) = 0`.
///
/// Errors with [`Error::Resonant`] when γ sits on the singular set
/// (`sin(γμπ) = 0` to machine precision); conditioning degrades like the
/// reciprocal of [`resonance_margin`], so callers should route rates that are
/// resonant *by construction* to [`resonant_lift`] instead.
pub fn theta_bvp(basis: &Rc<ThetaBasis>, gamma: f64, rhs: &ThetaProfile) -> Result<ThetaProfile> {
    let margin = resonance_margin(basis.cone(), gamma);
    if margin < SINGULAR_MARGIN {
        return Err(Error::Resonant(format!(
            "rate {gamma} is a harmonic-mode rate (margin {margin:.2e})"
        )));
    }
    let n = basis.len();
    let a = operator_with_bc(basis, gamma);
    let mut b = DVector::from_column_slice(rhs.values());
    b[0] = 0.0;
    b[n - 1] = 0.0;
    let lu = a.lu();
    let w = lu
        .solve(&b)
        .ok_or_else(|| Error::LinearSolve("cross-section collocation matrix".into()))?;
    let mut values: Vec<f64> = w.iter().copied().collect();
    // Pivoting leaves O(ε) dust on the boundary rows; the conditions are exact.
    values[0] = 0.0;
    values[n - 1] = 0.0;
    ThetaProfile::from_values(basis, values)
}

/// Result of absorbing a resonant source: profiles for each power of t and
/// the kernel components that were fixed by the solvability conditions.
#[derive(Debug)]
pub struct ResonantLift {
    /// `profiles[j]` multiplies `tʲ e^{−γt}`; the list has one more power
    /// than the source.
    pub profiles: Vec<ThetaProfile>,
    /// Kernel coefficients β_j (β₀ = 0 by convention; the homogeneous mode
    /// is a separate degree of freedom).
    pub kernel_coefficients: Vec<f64>,
}

/// Absorb a source `Σ_{j≤m} h_j(θ) tʲ e^{−γt}` at a resonant rate `γ = i/μ`
/// into `Σ_{j≤m+1} w_j(θ) tʲ e^{−γt}` with `(∂_t² + ∂_θ²) w = h`.
///
/// Matching powers of t gives the triangular system
/// `w_j″ + γ²w_j = h_j + 2γ(j+1) w_{j+1} − (j+1)(j+2) w_{j+2}`,
/// solved top-down. At each level the kernel component of `w_{j+1}` is fixed
/// by the solvability condition of level j; each `w_j` itself is the
/// minimal-norm solution, orthogonal to the kernel `sin(γθ)`.
pub fn resonant_lift(
    basis: &Rc<ThetaBasis>,
    gamma: f64,
    source: &[ThetaProfile],
) -> Result<ResonantLift> {
    if source.is_empty() {
        return Err(Error::invalid(
            "resonant lift needs at least one source power",
        ));
    }
    if resonance_margin(basis.cone(), gamma) > 1e-8 {
        return Err(Error::invalid(format!(
            "rate {gamma} is not resonant; use the regular cross-section solve"
        )));
    }
    let n = basis.len();
    let m = source.len() - 1;
    let phi = ThetaProfile::from_values(basis, basis.kernel_values(gamma))?;
    let phi_norm2 = phi.inner(&phi);

    let a = operator_with_bc(basis, gamma);
    let svd = a.clone().svd(true, true);
    // The operator has a one-dimensional kernel (the resonant mode), so the
    // smallest singular value is pure noise; zero exactly that direction.
    // A cutoff relative to the largest singular value would not work here:
    // the collocation operator norm grows like degree^4 while the smallest
    // legitimate singular values stay O(1).
    let sigma_min = svd.singular_values.iter().copied().fold(f64::MAX, f64::min);
    let sigma_max = svd.singular_values.max();
    let cut = (1.5 * sigma_min).max(1e-14 * sigma_max);

    let mut profiles = vec![ThetaProfile::zeros(basis); m + 2];
    let mut betas = vec![0.0; m + 2];

    // Top power m+1 carries no source: pure kernel, coefficient fixed below.
    for j in (0..=m).rev() {
        // Partial right-hand side with the already-known parts of w_{j+1}, w_{j+2}.
        let jf = j as f64;
        let mut g = source[j].clone();
        g = g.zip_with(&profiles[j + 1], |s, w1| s + 2.0 * gamma * (jf + 1.0) * w1);
        if j + 2 <= m + 1 {
            g = g.zip_with(&profiles[j + 2], |gv, w2| gv - (jf + 1.0) * (jf + 2.0) * w2);
        }
        // Solvability: the kernel component of g must vanish once β_{j+1}·φ
        // is added to w_{j+1} (contributing 2γ(j+1)β_{j+1}φ to g).
        let beta = -g.inner(&phi) / (2.0 * gamma * (jf + 1.0) * phi_norm2);
        betas[j + 1] = beta;
        profiles[j + 1] = profiles[j + 1].zip_with(&phi, |w, p| w + beta * p);
        g = g.zip_with(&phi, |gv, p| gv + 2.0 * gamma * (jf + 1.0) * beta * p);

        // Minimal-norm solve of the (singular) collocation system.
        let mut b = DVector::from_column_slice(g.values());
        b[0] = 0.0;
        b[n - 1] = 0.0;
        let w = svd
            .solve(&b, cut)
            .map_err(|e| Error::LinearSolve(format!("singular cross-section solve: {e}")))?;
        let mut values: Vec<f64> = w.iter().copied().collect();
        values[0] = 0.0;
        values[n - 1] = 0.0;
        let mut w = ThetaProfile::from_values(basis, values)?;
        // Project out the kernel so each profile is the canonical representative.
        let c = w.inner(&phi) / phi_norm2;
        w = w.zip_with(&phi, |wv, p| wv - c * p);
        profiles[j] = w;
    }

    // Verify the triangular equations power by power as a row-wise backward
    // error: the raw residual of a collocation row grows with the operator
    // norm (~ degree^4), so each row is measured against its own magnitude
    // times the data scale. This keeps the check uniform in the degree.
    let scale = source.iter().map(|s| s.max_abs()).fold(1e-30, f64::max);
    let w_scale = profiles.iter().map(|p| p.max_abs()).fold(1e-30, f64::max);
    let row_scale: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|l| a[(k, l)].abs()).fold(0.0, f64::max))
        .collect();
    for j in 0..=m {
        let lhs = profiles[j]
            .second_derivative()
            .zip_with(&profiles[j], |d2, w| d2 + gamma * gamma * w);
        let jf = j as f64;
        let mut rhs = source[j].clone();
        rhs = rhs.zip_with(&profiles[j + 1], |s, w1| s + 2.0 * gamma * (jf + 1.0) * w1);
        if j + 2 <= m + 1 {
            rhs = rhs.zip_with(&profiles[j + 2], |r, w2| r - (jf + 1.0) * (jf + 2.0) * w2);
        }
        let err = (1..n - 1)
            .map(|k| {
                (lhs.values()[k] - rhs.values()[k]).abs()
                    / (row_scale[k] * w_scale + scale + 1e-300)
            })
            .fold(0.0, f64::max);
        if err > 1e-8 {
            return Err(Error::Unresolved(format!(
                "lift backward error {err:.3e} at power {j} (source scale {scale:.3e})"
            )));
        }
    }
    Ok(ResonantLift {
        profiles,
        kernel_coefficients: betas,
    })
}

/// Decay bound `C tᵖ e^{−rate·t}` describing a half-line source.
#[derive(Debug, Clone, Copy)]
pub struct RhsDecay {
    pub rate: f64,
    pub power: u32,
}

/// Decaying solution of the single-mode half-line problem `ψ″ − ν²ψ = f` on
/// `[t_start, ∞)`, represented by Green's-function quadrature.
pub struct DecayingModeSolution<'a> {
    nu: f64,
    source: Box<dyn Fn(f64) -> f64 + 'a>,
    decay: RhsDecay,
    t_start: f64,
}

/// Build the decaying solution for mode frequency `ν > 0` and a source with
/// the given decay bound.
///
/// For source rates γ > ν the solution decays like the source; for γ ≤ ν it
/// decays at the mode rate ν (γ = ν picks up one power of t). Evaluation
/// integrates `e^{−ν|t−s|} f(s) / (2ν)` with kernels kept in bounded form and
/// truncation chosen from the decay bound.
pub fn solve_decaying_mode<'a>(
    nu: f64,
    source: impl Fn(f64) -> f64 + 'a,
    decay: RhsDecay,
    t_start: f64,
) -> Result<DecayingModeSolution<'a>> {
    if !(nu > 0.0) || !(decay.rate > 0.0) {
        return Err(Error::invalid(
            "mode frequency and decay rate must be positive",
        ));
    }
    Ok(DecayingModeSolution {
        nu,
        source: Box::new(source),
        decay,
        t_start,
    })
}

impl DecayingModeSolution<'_> {
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Evaluate ψ(t). Requires `t ≥ t_start`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < self.t_start {
            return Err(Error::invalid(format!(
                "evaluation point {t} precedes the source window start {}",
                self.t_start
            )));
        }
        let nu = self.nu;
        let gamma = self.decay.rate;
        let m = self.decay.power as f64;
        // Truncation horizon: enough e-foldings that the discarded tail is
        // below 1e-19 relative, with headroom for the polynomial factor.
        let horizon = |rho: f64| (45.0 + 10.0 * m) / rho;
        let f = &self.source;

        // Integral tolerances scale with the source size near t.
        let scale = f(t).abs().max(f(t + 1.0 / gamma).abs()).max(1e-60);
        let tol = 1e-13 * scale;

        if gamma > nu {
            // Both legs integrate from t to ∞ with bounded kernels.
            let u1 = t + horizon(gamma - nu);
            let i1 = adaptive_simpson(&|s| ((s - t) * nu).exp() * f(s), t, u1, tol)?;
            let u2 = t + horizon(gamma + nu);
            let i2 = adaptive_simpson(&|s| (-(s - t) * nu).exp() * f(s), t, u2, tol)?;
            Ok((i1 - i2) / (2.0 * nu))
        } else {
            // Decay at the mode rate: integrate the history from t_start.
            let i1 = if t > self.t_start {
                adaptive_simpson(&|s| (-(t - s) * nu).exp() * f(s), self.t_start, t, tol)?
            } else {
                0.0
            };
            let u2 = t + horizon(gamma + nu);
            let i2 = adaptive_simpson(&|s| (-(s - t) * nu).exp() * f(s), t, u2, tol)?;
            Ok(-(i1 + i2) / (2.0 * nu))
        }
    }
}
