//! Order-by-order corner expansion of the perturbation on the strip.
//!
//! The perturbation `v = u − |x|²/2` satisfies, in strip coordinates,
//! `(∂_t² + ∂_θ²) ṽ = −e^{2t} B(ṽ, ṽ)` where `B` is the symmetric bilinear
//! form with `det D²v = e^{4t} B(ṽ, ṽ)`:
//!
//! `B(a, b) = ½[(a_tt + a_t)(b_θθ − b_t) + (b_tt + b_t)(a_θθ − a_t)]
//!            − (a_tθ + a_θ)(b_tθ + b_θ)`.
//!
//! Seeding with harmonic modes `cᵢ e^{−(i/μ)t} sin(iθ/μ)` and walking the
//! exponent ledger in order, each admissible rate receives the quadratic
//! source generated by all earlier terms. Non-resonant rates are absorbed by
//! a cross-section solve; rates that collide with a harmonic-mode rate are
//! absorbed by the logarithmic lift, which may raise the power of t by one.

use crate::cone::StripField;
use crate::exponents::ExponentLedger;
use crate::modes::{resonant_lift, theta_bvp, ThetaBasis, ThetaProfile};
use crate::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::rc::Rc;

/// Rates are matched up to this tolerance when exact arithmetic is not
/// available.
const RATE_TOL: f64 = 1e-9;
/// Trailing t-powers whose profiles are this small relative to the term are
/// numerical zeros and get trimmed.
const TRIM_REL: f64 = 1e-11;

/// Free coefficients of the harmonic modes, keyed by mode index `i`
/// (the coefficient of `|x|^{i/μ} sin(iθ/μ)`). Every resonant ledger entry
/// processed by [`Expansion::extend`] must have its coefficient pinned here,
/// even when it is zero.
#[derive(Debug, Clone, Default)]
pub struct FreeCoefficients(BTreeMap<u32, f64>);

impl FreeCoefficients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Only the leading mode coefficient c₁.
    pub fn with_leading(c1: f64) -> Self {
        let mut f = Self::default();
        f.set(1, c1);
        f
    }

    pub fn set(&mut self, index: u32, value: f64) {
        self.0.insert(index, value);
    }

    pub fn get(&self, index: u32) -> Option<f64> {
        self.0.get(&index).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.0.iter().map(|(&i, &c)| (i, c))
    }
}

/// Polynomial-exponential block `Σ_j coeffs[j](θ) tʲ e^{−γt}`: the closed
/// algebra the quadratic form acts on.
#[derive(Debug, Clone)]
struct PolyExp {
    gamma: f64,
    numerator: Option<i64>,
    coeffs: Vec<ThetaProfile>,
}

impl PolyExp {
    fn dt(&self) -> PolyExp {
        let m = self.coeffs.len();
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let mut c = self.coeffs[k].map(|v| -self.gamma * v);
            if k + 1 < m {
                c = c.zip_with(&self.coeffs[k + 1], |a, b| a + (k as f64 + 1.0) * b);
            }
            out.push(c);
        }
        PolyExp {
            gamma: self.gamma,
            numerator: self.numerator,
            coeffs: out,
        }
    }

    fn dtheta(&self) -> PolyExp {
        PolyExp {
            gamma: self.gamma,
            numerator: self.numerator,
            coeffs: self.coeffs.iter().map(|c| c.derivative()).collect(),
        }
    }

    fn add(&self, other: &PolyExp) -> PolyExp {
        debug_assert!((self.gamma - other.gamma).abs() < 1e-12);
        let m = self.coeffs.len().max(other.coeffs.len());
        let basis = self.coeffs[0].basis();
        let mut out = Vec::with_capacity(m);
        for k in 0..m {
            let a = self.coeffs.get(k);
            let b = other.coeffs.get(k);
            out.push(match (a, b) {
                (Some(a), Some(b)) => a.zip_with(b, |x, y| x + y),
                (Some(a), None) => a.clone(),
                (None, Some(b)) => b.clone(),
                (None, None) => ThetaProfile::zeros(basis),
            });
        }
        PolyExp {
            gamma: self.gamma,
            numerator: match (self.numerator, other.numerator) {
                (Some(a), Some(b)) if a == b => Some(a),
                _ => None,
            },
            coeffs: out,
        }
    }

    fn sub(&self, other: &PolyExp) -> PolyExp {
        self.add(&other.scale(-1.0))
    }

    fn scale(&self, s: f64) -> PolyExp {
        PolyExp {
            gamma: self.gamma,
            numerator: self.numerator,
            coeffs: self.coeffs.iter().map(|c| c.map(|v| s * v)).collect(),
        }
    }

    fn mul(&self, other: &PolyExp) -> PolyExp {
        let basis = self.coeffs[0].basis();
        let m = self.coeffs.len() + other.coeffs.len() - 1;
        let mut out = vec![ThetaProfile::zeros(basis); m];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                let prod = a.zip_with(b, |x, y| x * y);
                out[i + j] = out[i + j].zip_with(&prod, |x, y| x + y);
            }
        }
        PolyExp {
            gamma: self.gamma + other.gamma,
            numerator: match (self.numerator, other.numerator) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            },
            coeffs: out,
        }
    }

    fn eval(&self, t: f64, theta: f64) -> f64 {
        let decay = (-self.gamma * t).exp();
        let mut poly = 0.0;
        let mut tp = 1.0;
        for c in &self.coeffs {
            poly += c.eval(theta) * tp;
            tp *= t;
        }
        decay * poly
    }
}

/// The symmetric bilinear strip form with `det D²v = e^{4t} B(ṽ, ṽ)`.
fn bilinear_det(a: &PolyExp, b: &PolyExp) -> PolyExp {
    let at = a.dt();
    let att = at.dt();
    let ath = a.dtheta();
    let atth = at.dtheta();
    let athth = ath.dtheta();
    let bt = b.dt();
    let btt = bt.dt();
    let bth = b.dtheta();
    let btth = bt.dtheta();
    let bthth = bth.dtheta();

    let first = att.add(&at).mul(&bthth.sub(&bt));
    let second = btt.add(&bt).mul(&athth.sub(&at));
    let cross = atth.add(&ath).mul(&btth.add(&bth));
    first.add(&second).scale(0.5).sub(&cross)
}

/// One block of the expansion at a single decay rate.
#[derive(Debug, Clone)]
pub struct ExpansionTerm {
    gamma: f64,
    numerator: Option<i64>,
    profiles: Vec<ThetaProfile>,
    resonant: bool,
}

impl ExpansionTerm {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Profiles by power of t.
    pub fn profiles(&self) -> &[ThetaProfile] {
        &self.profiles
    }

    /// Highest power of t carried by this rate (0 when no logarithm arose).
    pub fn log_power(&self) -> usize {
        self.profiles.len() - 1
    }

    pub fn resonant(&self) -> bool {
        self.resonant
    }

    fn as_polyexp(&self) -> PolyExp {
        PolyExp {
            gamma: self.gamma,
            numerator: self.numerator,
            coeffs: self.profiles.clone(),
        }
    }
}

/// Quadratic source block at a single rate, as produced by
/// [`quadratic_source`].
#[derive(Debug, Clone)]
pub struct SourceTerm {
    pub gamma: f64,
    pub numerator: Option<i64>,
    pub profiles: Vec<ThetaProfile>,
}

/// The full right-hand side `−e^{2t} B(v, v)` generated by a set of terms,
/// grouped by rate and restricted to rates ≤ `cutoff`.
pub fn quadratic_source(
    terms: &[ExpansionTerm],
    denominator: Option<i64>,
    cutoff: f64,
) -> Vec<SourceTerm> {
    let mut by_rate: Vec<PolyExp> = Vec::new();
    for (i, a) in terms.iter().enumerate() {
        for (j, b) in terms.iter().enumerate().skip(i) {
            let rate = a.gamma + b.gamma - 2.0;
            if rate > cutoff + RATE_TOL {
                continue;
            }
            let factor = if i == j { -1.0 } else { -2.0 };
            // −e^{2t} shifts the rate down by 2 (numerator down by 2p).
            let mut block = bilinear_det(&a.as_polyexp(), &b.as_polyexp()).scale(factor);
            block.gamma -= 2.0;
            block.numerator = match (block.numerator, denominator) {
                (Some(n), Some(p)) => Some(n - 2 * p),
                _ => None,
            };
            match by_rate
                .iter_mut()
                .find(|s| match (s.numerator, block.numerator) {
                    (Some(a), Some(b)) => a == b,
                    _ => (s.gamma - block.gamma).abs() <= RATE_TOL,
                }) {
                Some(s) => *s = s.add(&block),
                None => by_rate.push(block),
            }
        }
    }
    by_rate.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
    by_rate
        .into_iter()
        .map(|p| SourceTerm {
            gamma: p.gamma,
            numerator: p.numerator,
            profiles: p.coeffs,
        })
        .collect()
}

/// Asymptotic expansion of the perturbation, built rate by rate.
#[derive(Debug)]
pub struct Expansion {
    basis: Rc<ThetaBasis>,
    ledger: ExponentLedger,
    free: FreeCoefficients,
    terms: Vec<ExpansionTerm>,
    next_position: usize,
    truncation: f64,
}

impl Expansion {
    /// Empty expansion over a ledger. The ledger's cone must match the basis.
    pub fn new(
        basis: Rc<ThetaBasis>,
        ledger: ExponentLedger,
        free: FreeCoefficients,
    ) -> Result<Self> {
        if (basis.cone().mu() - ledger.cone().mu()).abs() > 1e-14 {
            return Err(Error::invalid("basis and ledger use different cones"));
        }
        if ledger.cone().regime() == crate::cone::Regime::Wide {
            if let Some(c1) = free.get(1) {
                if c1 != 0.0 {
                    return Err(Error::invalid(
                        "the leading mode coefficient is forced to zero in the wide regime",
                    ));
                }
            }
        }
        Ok(Expansion {
            basis,
            ledger,
            free,
            terms: Vec::new(),
            next_position: 1,
            truncation: 0.0,
        })
    }

    pub fn basis(&self) -> &Rc<ThetaBasis> {
        &self.basis
    }

    pub fn ledger(&self) -> &ExponentLedger {
        &self.ledger
    }

    pub fn terms(&self) -> &[ExpansionTerm] {
        &self.terms
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn term_at(&self, gamma: f64) -> Option<&ExpansionTerm> {
        self.terms
            .iter()
            .find(|t| (t.gamma - gamma).abs() <= RATE_TOL)
    }

    /// Process every ledger entry with rate ≤ `truncation` that has not been
    /// processed yet, in increasing order.
    pub fn extend(&mut self, truncation: f64) -> Result<()> {
        if truncation > self.ledger.cutoff() + RATE_TOL {
            return Err(Error::invalid(format!(
                "truncation {truncation} exceeds the ledger cutoff {}",
                self.ledger.cutoff()
            )));
        }
        let denominator = self.basis.cone().mu_rational().map(|(p, _)| p);
        while let Some(entry) = self.ledger.at_position(self.next_position) {
            if entry.value > truncation + RATE_TOL {
                break;
            }
            let entry = entry.clone();
            self.next_position += 1;

            if entry.forced_zero {
                continue;
            }

            // Quadratic source generated at exactly this rate by earlier terms.
            let sources = quadratic_source(&self.terms, denominator, entry.value + RATE_TOL);
            let source = sources
                .into_iter()
                .find(|s| match (s.numerator, entry.numerator) {
                    (Some(a), Some(b)) => a == b,
                    _ => (s.gamma - entry.value).abs() <= RATE_TOL,
                });

            let mut profiles: Vec<ThetaProfile> = match (source.as_ref(), entry.resonant()) {
                (None, false) => continue, // nothing lands here and no free mode
                (Some(s), false) => {
                    // Triangular non-resonant solve, top power first.
                    let m = s.profiles.len() - 1;
                    let mut w: Vec<ThetaProfile> = vec![ThetaProfile::zeros(&self.basis); m + 1];
                    for j in (0..=m).rev() {
                        let jf = j as f64;
                        let mut g = s.profiles[j].clone();
                        if j + 1 <= m {
                            g = g.zip_with(&w[j + 1], |gv, w1| {
                                gv + 2.0 * entry.value * (jf + 1.0) * w1
                            });
                        }
                        if j + 2 <= m {
                            g = g.zip_with(&w[j + 2], |gv, w2| gv - (jf + 1.0) * (jf + 2.0) * w2);
                        }
                        w[j] = theta_bvp(&self.basis, entry.value, &g)?;
                    }
                    w
                }
                (src, true) => {
                    let i = entry
                        .i1_index
                        .expect("resonant entries carry their mode index");
                    let c = self.free.get(i).ok_or_else(|| {
                        Error::MissingFreeCoefficient(format!(
                            "rate {} (mode index {i})",
                            entry.value
                        ))
                    })?;
                    let mut w = match src {
                        Some(s) => resonant_lift(&self.basis, entry.value, &s.profiles)?.profiles,
                        None => vec![ThetaProfile::zeros(&self.basis)],
                    };
                    // The homogeneous mode adds at power zero.
                    if c != 0.0 {
                        let phi = ThetaProfile::from_values(
                            &self.basis,
                            self.basis.kernel_values(entry.value),
                        )?;
                        w[0] = w[0].zip_with(&phi, |wv, p| wv + c * p);
                    }
                    w
                }
            };

            // Trim trailing numerically-zero powers.
            let max_sup = profiles.iter().map(|p| p.max_abs()).fold(0.0, f64::max);
            while profiles.len() > 1 && profiles.last().unwrap().max_abs() < TRIM_REL * max_sup {
                profiles.pop();
            }
            if max_sup == 0.0 {
                continue; // zero free coefficient and no source
            }
            if profiles.len() - 1 > entry.max_log_power as usize {
                return Err(Error::Expansion(format!(
                    "rate {} produced t-power {} beyond the admissible bound {}",
                    entry.value,
                    profiles.len() - 1,
                    entry.max_log_power
                )));
            }

            self.terms.push(ExpansionTerm {
                gamma: entry.value,
                numerator: entry.numerator,
                profiles,
                resonant: entry.resonant(),
            });
        }
        self.truncation = truncation;
        Ok(())
    }

    /// Point evaluation of the expansion on the strip.
    pub fn evaluate_point(&self, t: f64, theta: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| term.as_polyexp().eval(t, theta))
            .sum()
    }

    /// Sample the expansion on a uniform strip grid.
    pub fn evaluate(&self, window: (f64, f64), nt: usize, ntheta: usize) -> Result<StripField> {
        // Precompute per-term profile values on the θ grid; barycentric
        // evaluation per node is the only cost that scales with the grid.
        let polys: Vec<PolyExp> = self.terms.iter().map(|t| t.as_polyexp()).collect();
        StripField::from_fn(self.basis.cone(), window, nt, ntheta, |t, theta| {
            polys.iter().map(|p| p.eval(t, theta)).sum()
        })
    }

    /// JSON snapshot of the expansion (schema_version 1): rates, resonance
    /// flags, and profile values at the collocation nodes.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct TermJson {
            gamma: f64,
            numerator: Option<i64>,
            resonant: bool,
            log_power: usize,
            profiles: Vec<Vec<f64>>,
        }
        #[derive(Serialize)]
        struct ExpansionJson<'a> {
            schema_version: u32,
            mu: f64,
            mu_rational: Option<(i64, i64)>,
            truncation: f64,
            theta_nodes: &'a [f64],
            terms: Vec<TermJson>,
        }
        let doc = ExpansionJson {
            schema_version: 1,
            mu: self.basis.cone().mu(),
            mu_rational: self.basis.cone().mu_rational(),
            truncation: self.truncation,
            theta_nodes: self.basis.nodes(),
            terms: self
                .terms
                .iter()
                .map(|t| TermJson {
                    gamma: t.gamma,
                    numerator: t.numerator,
                    resonant: t.resonant,
                    log_power: t.log_power(),
                    profiles: t.profiles.iter().map(|p| p.values().to_vec()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Residual `(∂_t² + ∂_θ²)ṽ + e^{2t} B(ṽ, ṽ)` of the expansion, with the
/// quadratic source truncated at `source_cutoff`. The t-derivatives are
/// applied analytically and θ-derivatives spectrally, so the residual
/// measures only what the expansion genuinely fails to cancel.
pub fn equation_residual(
    e: &Expansion,
    source_cutoff: f64,
    window: (f64, f64),
    nt: usize,
    ntheta: usize,
) -> Result<StripField> {
    let denominator = e.basis.cone().mu_rational().map(|(p, _)| p);
    // Δ̃ of each term, exactly in t and spectrally in θ.
    let mut blocks: Vec<PolyExp> = Vec::new();
    for term in &e.terms {
        let p = term.as_polyexp();
        let m = p.coeffs.len() - 1;
        let g = p.gamma;
        let term_sup = p.coeffs.iter().map(|c| c.max_abs()).fold(0.0, f64::max);
        // Spectral differentiation amplifies roundoff by the operator norm;
        // coefficients below that floor are exact zeros (kernel components
        // such as the seed are analytically annihilated) and would otherwise
        // pollute the residual tail with a fake e^{−γt} component.
        let floor = 1e-8 * (1.0 + g * g) * term_sup;
        let mut coeffs = Vec::with_capacity(m + 1);
        for j in 0..=m {
            let mut c = p.coeffs[j]
                .second_derivative()
                .zip_with(&p.coeffs[j], |d2, w| d2 + g * g * w);
            if j + 1 <= m {
                let jf = j as f64;
                c = c.zip_with(&p.coeffs[j + 1], |cv, w1| cv - 2.0 * g * (jf + 1.0) * w1);
            }
            if j + 2 <= m {
                let jf = j as f64;
                c = c.zip_with(&p.coeffs[j + 2], |cv, w2| cv + (jf + 1.0) * (jf + 2.0) * w2);
            }
            if c.max_abs() < floor {
                c = c.map(|_| 0.0);
            }
            coeffs.push(c);
        }
        blocks.push(PolyExp {
            gamma: g,
            numerator: term.numerator,
            coeffs,
        });
    }
    // Minus the source: the residual is Δ̃ṽ − S with S = −e^{2t}B(ṽ,ṽ).
    for s in quadratic_source(&e.terms, denominator, source_cutoff) {
        blocks.push(PolyExp {
            gamma: s.gamma,
            numerator: s.numerator,
            coeffs: s.profiles.iter().map(|p| p.map(|v| -v)).collect(),
        });
    }
    StripField::from_fn(e.basis.cone(), window, nt, ntheta, |t, theta| {
        blocks.iter().map(|b| b.eval(t, theta)).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::strip_det_hessian;
    use crate::cone::ConeGeometry;
    use crate::exponents::build_ledger;
    use crate::numeric::fit::fit_line;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use std::f64::consts::PI;

    fn setup(p: i64, q: i64, cutoff: f64) -> (Rc<ThetaBasis>, ExponentLedger) {
        let cone = ConeGeometry::from_rational(p, q).unwrap();
        let basis = ThetaBasis::new(&cone, 64).unwrap();
        let ledger = build_ledger(&cone, cutoff).unwrap();
        (basis, ledger)
    }

    fn leading_term(basis: &Rc<ThetaBasis>, c1: f64) -> ExpansionTerm {
        let gamma = 1.0 / basis.cone().mu();
        ExpansionTerm {
            gamma,
            numerator: basis.cone().mu_rational().map(|(_, q)| q),
            profiles: vec![ThetaProfile::from_fn(basis, |th| c1 * (gamma * th).sin())],
            resonant: true,
        }
    }

    #[test]
    fn single_mode_source_is_the_constant_k0() {
        // c₁ r^a sin(aθ) with a = 1/μ generates −e^{2t}B = c₁²a²(a−1)²
        // e^{−(2a−2)t}, independent of θ.
        let (basis, _) = setup(2, 5, 5.1);
        let a = 2.5;
        let c1 = -0.3;
        let term = leading_term(&basis, c1);
        let sources = quadratic_source(&[term], Some(2), 10.0);
        assert_eq!(sources.len(), 1);
        let s = &sources[0];
        assert_relative_eq!(s.gamma, 3.0, epsilon = 1e-12);
        assert_eq!(s.numerator, Some(6));
        assert_eq!(s.profiles.len(), 1);
        let k0 = c1 * c1 * a * a * (a - 1.0) * (a - 1.0);
        assert_relative_eq!(k0, 1.265625);
        for &v in s.profiles[0].values() {
            assert_abs_diff_eq!(v, k0, epsilon = 1e-10);
        }
    }

    #[test]
    fn second_order_profile_matches_the_closed_form() {
        // μ = 2/5: the rate-3 term solves w″ + 9w = K₀ with zero Dirichlet.
        let (basis, ledger) = setup(2, 5, 3.1);
        let mut e = Expansion::new(
            Rc::clone(&basis),
            ledger,
            FreeCoefficients::with_leading(-0.3),
        )
        .unwrap();
        e.extend(3.05).unwrap();
        assert_eq!(e.terms().len(), 2);
        let term = e.term_at(3.0).unwrap();
        assert_eq!(term.log_power(), 0);
        let k0 = 1.265625;
        let opening = basis.cone().opening();
        let coef = (1.0 - (3.0 * opening).cos()) / (3.0 * opening).sin();
        for &th in basis.nodes() {
            let exact = k0 / 9.0 * (1.0 - (3.0 * th).cos() - coef * (3.0 * th).sin());
            assert_abs_diff_eq!(term.profiles()[0].eval(th), exact, epsilon = 1e-9);
        }
    }

    #[test]
    fn quadratic_scaling_in_the_seed_coefficient() {
        let (basis, ledger) = setup(2, 5, 4.6);
        let build = |c1: f64| {
            let mut e = Expansion::new(
                Rc::clone(&basis),
                ledger.clone(),
                FreeCoefficients::with_leading(c1),
            )
            .unwrap();
            e.extend(4.6).unwrap();
            e
        };
        let e1 = build(-0.3);
        let e2 = build(-0.6);
        // Rates 3.0, 3.5, 4.0, 4.5 are generated at second order from pairs
        // (1/μ, ·): doubling c₁... rate 3.0 scales by 4; higher rates mix
        // orders, so compare the pure second-order one exactly.
        let t1 = e1.term_at(3.0).unwrap();
        let t2 = e2.term_at(3.0).unwrap();
        for (a, b) in t1.profiles()[0]
            .values()
            .iter()
            .zip(t2.profiles()[0].values())
        {
            assert_abs_diff_eq!(4.0 * a, *b, epsilon = 1e-12 * t2.profiles()[0].max_abs());
        }
    }

    #[test]
    fn wide_regime_forces_the_leading_mode_to_zero() {
        let (basis, ledger) = setup(2, 3, 4.1);
        // Supplying a nonzero c₁ is rejected outright.
        assert!(Expansion::new(
            Rc::clone(&basis),
            ledger.clone(),
            FreeCoefficients::with_leading(0.5)
        )
        .is_err());

        // With c₂ pinned, the first active rate is 2/μ = 3 and the generated
        // rate 4 = 2·3 − 2 appears at third position.
        let mut free = FreeCoefficients::new();
        free.set(2, 0.7);
        let mut e = Expansion::new(Rc::clone(&basis), ledger, free).unwrap();
        e.extend(4.05).unwrap();
        let rates: Vec<f64> = e.terms().iter().map(|t| t.gamma()).collect();
        assert_eq!(rates, vec![3.0, 4.0]);
        // Rate 4: w″ + 16w = K with K = c₂²·3²·2² = 17.64.
        let term = e.term_at(4.0).unwrap();
        let k = 0.7f64.powi(2) * 9.0 * 4.0;
        let opening = basis.cone().opening();
        let coef = (1.0 - (4.0 * opening).cos()) / (4.0 * opening).sin();
        for &th in basis.nodes() {
            let exact = k / 16.0 * (1.0 - (4.0 * th).cos() - coef * (4.0 * th).sin());
            assert_abs_diff_eq!(term.profiles()[0].eval(th), exact, epsilon = 1e-8);
        }
    }

    #[test]
    fn resonant_rates_demand_pinned_coefficients() {
        let (basis, ledger) = setup(2, 5, 5.1);
        let mut e = Expansion::new(
            Rc::clone(&basis),
            ledger,
            FreeCoefficients::with_leading(-0.3),
        )
        .unwrap();
        // 5.0 = 2/μ is resonant and needs c₂.
        let err = e.extend(5.05).unwrap_err();
        assert!(matches!(err, Error::MissingFreeCoefficient(_)), "{err}");
    }

    #[test]
    fn single_mode_cascade_is_log_free_at_its_collisions() {
        // At the first collision (rate 5.0 for μ = 2/5) parity forbids a
        // t-power outright: every profile generated from the symmetric seed
        // sin(θ/μ) is symmetric about the bisector while the kernel sin(5θ)
        // is antisymmetric. At the second collision (7.5) the kernel is
        // symmetric and meets the symmetric source head-on, yet the
        // solvability integral still cancels to roundoff: the single-mode
        // cascade never excites a kernel, and both collisions resolve with
        // no t-power. The lift machinery itself is exercised with genuinely
        // resonant synthetic sources in the mode tests.
        let (basis, ledger) = setup(2, 5, 7.6);
        let mut free = FreeCoefficients::with_leading(-0.3);
        free.set(2, 0.0);
        free.set(3, 0.0);
        let mut e = Expansion::new(Rc::clone(&basis), ledger, free).unwrap();
        e.extend(7.55).unwrap();
        for term in e.terms() {
            assert_eq!(term.log_power(), 0, "rate {} grew a t-power", term.gamma());
        }
        let t5 = e.term_at(5.0).unwrap();
        assert!(t5.resonant());
        assert!(
            t5.profiles()[0].max_abs() > 1e-6,
            "the rate-5 profile itself is nonzero"
        );

        // The profile at 5.0 carries no kernel component: it stays symmetric.
        let opening = basis.cone().opening();
        let p = &t5.profiles()[0];
        for &th in basis.nodes() {
            let mirrored = p.eval(opening - th);
            assert_abs_diff_eq!(p.eval(th), mirrored, epsilon = 1e-8 * p.max_abs());
        }

        // Both solvability integrals sit at the roundoff floor of the
        // source magnitude.
        let sources = quadratic_source(e.terms(), Some(2), 7.6);
        for rate in [5.0, 7.5] {
            let s = sources
                .iter()
                .find(|s| (s.gamma - rate).abs() < 1e-9)
                .unwrap();
            let phi = ThetaProfile::from_values(&basis, basis.kernel_values(rate)).unwrap();
            let overlap = s.profiles[0].inner(&phi).abs();
            assert!(
                overlap < 1e-11 * s.profiles[0].max_abs(),
                "kernel overlap {overlap:.3e} at rate {rate} is not roundoff"
            );
        }

        // Same picture at a different angle: for μ = 3/10 the single-mode
        // cascade runs on rates 10/3 + 4k/3 and first collides at 10.0,
        // whose kernel is symmetric — and the overlap still cancels.
        let cone = ConeGeometry::from_rational(3, 10).unwrap();
        let basis = ThetaBasis::new(&cone, 64).unwrap();
        let ledger = build_ledger(&cone, 10.1).unwrap();
        let mut free = FreeCoefficients::with_leading(-0.3);
        free.set(2, 0.0);
        free.set(3, 0.0);
        let mut e = Expansion::new(Rc::clone(&basis), ledger, free).unwrap();
        e.extend(10.05).unwrap();
        let rates: Vec<f64> = e.terms().iter().map(|t| t.gamma()).collect();
        let expected = [10.0 / 3.0, 14.0 / 3.0, 6.0, 22.0 / 3.0, 26.0 / 3.0, 10.0];
        assert_eq!(rates.len(), expected.len());
        for (got, want) in rates.iter().zip(expected) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-9);
        }
        for term in e.terms() {
            assert_eq!(term.log_power(), 0, "rate {} grew a t-power", term.gamma());
        }
        let sources = quadratic_source(e.terms(), Some(3), 10.1);
        let s = sources
            .iter()
            .find(|s| (s.gamma - 10.0).abs() < 1e-9)
            .unwrap();
        let phi = ThetaProfile::from_values(&basis, basis.kernel_values(10.0)).unwrap();
        let overlap = s.profiles[0].inner(&phi).abs();
        assert!(
            overlap < 1e-11 * s.profiles[0].max_abs(),
            "kernel overlap {overlap:.3e} at rate 10 is not roundoff"
        );
    }

    #[test]
    fn two_mode_cascade_mixes_parity_but_stays_log_free() {
        // Seeding the antisymmetric second mode alongside the first
        // populates antisymmetric components at every later rate, so parity
        // alone no longer protects the collisions: at 10.0 an antisymmetric
        // kernel meets a genuinely antisymmetric source channel. The
        // solvability integral still cancels structurally — the measured
        // overlap sits at the accumulated-roundoff floor (and flips sign
        // under basis refinement instead of converging).
        let (basis, ledger) = setup(2, 5, 10.1);
        let mut free = FreeCoefficients::with_leading(-0.3);
        free.set(2, 0.1);
        free.set(3, 0.0);
        free.set(4, 0.0);
        let mut e = Expansion::new(Rc::clone(&basis), ledger, free).unwrap();
        e.extend(10.05).unwrap();
        for term in e.terms() {
            assert_eq!(term.log_power(), 0, "rate {} grew a t-power", term.gamma());
        }
        let opening = basis.cone().opening();
        let anti = |p: &ThetaProfile| {
            ThetaProfile::from_fn(&basis, |th| 0.5 * (p.eval(th) - p.eval(opening - th)))
        };
        // Parity mixing is real: the rate-5.5 term inherits an antisymmetric
        // part of order c₂ from the pair (2.5, 5.0).
        let t55 = e.term_at(5.5).unwrap();
        assert!(anti(&t55.profiles()[0]).max_abs() > 1e-3);
        let sources = quadratic_source(e.terms(), Some(2), 10.1);
        let s = sources
            .iter()
            .find(|s| (s.gamma - 10.0).abs() < 1e-9)
            .unwrap();
        let g_anti = anti(&s.profiles[0]);
        assert!(
            g_anti.max_abs() > 1e6,
            "antisymmetric source channel should be active, sup {:.3e}",
            g_anti.max_abs()
        );
        let phi = ThetaProfile::from_values(&basis, basis.kernel_values(10.0)).unwrap();
        let overlap = g_anti.inner(&phi).abs();
        assert!(
            overlap < 1e-10 * g_anti.max_abs(),
            "kernel overlap {overlap:.3e} at rate 10 is not roundoff"
        );
    }

    #[test]
    fn log_bound_from_the_ledger_is_respected() {
        let (basis, ledger) = setup(2, 5, 7.6);
        let mut free = FreeCoefficients::with_leading(-0.3);
        free.set(2, 0.0);
        free.set(3, 0.0);
        let mut e = Expansion::new(Rc::clone(&basis), ledger, free).unwrap();
        e.extend(7.55).unwrap();
        for term in e.terms() {
            let entry = e.ledger().find(term.gamma()).unwrap();
            assert!(
                term.log_power() <= entry.max_log_power as usize,
                "rate {} exceeded its log bound",
                term.gamma()
            );
        }
    }

    #[test]
    fn truncation_residual_is_exactly_the_omitted_quadratic_blocks() {
        // Every term balances its own source block, so subtracting all
        // blocks at or below the truncation leaves pure roundoff …
        let (basis, ledger) = setup(2, 5, 9.7);
        let mut e = Expansion::new(
            Rc::clone(&basis),
            ledger,
            FreeCoefficients::with_leading(-0.3),
        )
        .unwrap();
        e.extend(4.55).unwrap();
        let window = (2.0, 4.0);
        let sources = quadratic_source(e.terms(), Some(2), 7.1);
        let scale: f64 = sources
            .iter()
            .filter(|s| s.gamma < 4.55)
            .map(|s| s.profiles[0].max_abs() * (-s.gamma * window.0).exp())
            .sum();
        let served = equation_residual(&e, 4.55, window, 41, 33).unwrap();
        assert!(
            served.max_abs() < 1e-7 * scale,
            "served residual {:.3e} vs source scale {:.3e}",
            served.max_abs(),
            scale
        );

        // … and the full nonlinear equation, evaluated independently by
        // finite differences on the evaluated field, is violated by exactly
        // the omitted blocks: Δ̃ṽ + e^{−2t}·det D²ṽ = −Σ_{γ>4.5} S_γ, where
        // the right side is the complete quadratic content above the
        // truncation (pairs of kept terms reach no further than rate 7.0).
        let field = e.evaluate((1.5, 3.5), 801, 513).unwrap();
        let lap = field.discrete_laplacian().unwrap();
        let det = strip_det_hessian(&field).unwrap();
        let mut err_max = 0.0f64;
        let mut rhs_max = 0.0f64;
        for it in 0..lap.nt() {
            let t = lap.t_coord(it);
            for ith in 0..lap.ntheta() {
                let th = lap.theta_coord(ith);
                let lhs = lap.value(it, ith) + (-2.0 * t).exp() * det.value(it, ith);
                let rhs: f64 = sources
                    .iter()
                    .filter(|s| s.gamma > 4.55)
                    .map(|s| -(-s.gamma * t).exp() * s.profiles[0].eval(th))
                    .sum();
                err_max = err_max.max((lhs - rhs).abs());
                rhs_max = rhs_max.max(rhs.abs());
            }
        }
        assert!(
            err_max < 5e-3 * rhs_max,
            "independent residual check: err {err_max:.3e} vs omitted blocks {rhs_max:.3e}"
        );

        // The leading omitted block decays at the first unserved rate, 5.0.
        // The window is bounded on both sides: early on the 5.5-block still
        // contaminates, late the e^{−3t} backward-error floor of the served
        // solves (≈2e−8 relative) takes over.
        let res = equation_residual(&e, 20.0, (7.0, 9.0), 41, 33).unwrap();
        let rows = res.sup_over_theta();
        let ts: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let ln_ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
        let fit = fit_line(&ts, &ln_ys).unwrap();
        assert!(
            (fit.slope + 5.0).abs() < 0.1,
            "residual slope {:.4} should be −5",
            fit.slope
        );

        // Extending through 5.0 pushes the leading omitted block to 5.5.
        let mut free = FreeCoefficients::with_leading(-0.3);
        free.set(2, 0.0);
        let mut e = Expansion::new(
            Rc::clone(&basis),
            build_ledger(basis.cone(), 9.7).unwrap(),
            free,
        )
        .unwrap();
        e.extend(5.05).unwrap();
        let res = equation_residual(&e, 20.0, (6.5, 8.0), 31, 33).unwrap();
        let rows = res.sup_over_theta();
        let ts: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let ln_ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
        let fit = fit_line(&ts, &ln_ys).unwrap();
        assert!(
            (fit.slope + 5.5).abs() < 0.1,
            "residual slope {:.4} should be −5.5",
            fit.slope
        );
    }

    #[test]
    fn evaluation_matches_the_seed_on_the_leading_term_alone() {
        let (basis, ledger) = setup(2, 5, 2.6);
        let mut e = Expansion::new(
            Rc::clone(&basis),
            ledger,
            FreeCoefficients::with_leading(-0.3),
        )
        .unwrap();
        e.extend(2.55).unwrap();
        let field = e.evaluate((1.0, 3.0), 21, 17).unwrap();
        for it in 0..field.nt() {
            let t = field.t_coord(it);
            for ith in 0..field.ntheta() {
                let th = field.theta_coord(ith);
                let exact = -0.3 * (-2.5 * t).exp() * (2.5 * th).sin();
                assert_abs_diff_eq!(field.value(it, ith), exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn json_snapshot_carries_schema_and_sorted_rates() {
        let (basis, ledger) = setup(2, 5, 3.1);
        let mut e = Expansion::new(
            Rc::clone(&basis),
            ledger,
            FreeCoefficients::with_leading(-0.3),
        )
        .unwrap();
        e.extend(3.05).unwrap();
        let json = e.to_json().unwrap();
        let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(doc["schema_version"], 1);
        assert_eq!(doc["terms"].as_array().unwrap().len(), 2);
        assert!((doc["terms"][0]["gamma"].as_f64().unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(doc["mu_rational"][0], 2);
    }

    #[test]
    fn truncation_cannot_exceed_the_ledger() {
        let (basis, ledger) = setup(2, 5, 3.1);
        let mut e = Expansion::new(
            Rc::clone(&basis),
            ledger,
            FreeCoefficients::with_leading(-0.3),
        )
        .unwrap();
        assert!(e.extend(4.0).is_err());
    }

    #[test]
    fn float_cone_reproduces_rational_second_order() {
        // The float path (μ = 0.4 as a bare f64) must agree with exact
        // arithmetic on the overlapping construction.
        let cone = ConeGeometry::new(0.4).unwrap();
        let basis = ThetaBasis::new(&cone, 64).unwrap();
        let ledger = build_ledger(&cone, 3.1).unwrap();
        let mut e = Expansion::new(
            Rc::clone(&basis),
            ledger,
            FreeCoefficients::with_leading(-0.3),
        )
        .unwrap();
        e.extend(3.05).unwrap();
        let term = e.term_at(3.0).unwrap();
        let k0 = 1.265625;
        let opening = 0.4 * PI;
        let coef = (1.0 - (3.0 * opening).cos()) / (3.0 * opening).sin();
        for &th in basis.nodes() {
            let exact = k0 / 9.0 * (1.0 - (3.0 * th).cos() - coef * (3.0 * th).sin());
            assert_abs_diff_eq!(term.profiles()[0].eval(th), exact, epsilon = 1e-9);
        }
    }
}
