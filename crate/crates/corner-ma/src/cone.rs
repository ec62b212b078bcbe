//! Planar cone geometry and log-polar strip transport.
//!
//! A cone of opening `μπ` (0 < μ < 1) with vertex at the origin is mapped to
//! the half-strip `{(t, θ) : t ≥ T₀, 0 ≤ θ ≤ μπ}` by `t = −ln|x|`. Under this
//! change of variables the Laplacian becomes `e^{2t}(∂_t² + ∂_θ²)` and the
//! Hessian determinant has the closed strip form implemented by
//! [`strip_det_hessian`].

use crate::grid::CartesianField;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::BufRead;

/// Opening-angle regime: `Sharp` for μ < 1/2, `Wide` for μ ≥ 1/2. The two
/// regimes have different admissible-exponent lattices and the wide regime
/// forces the leading mode coefficient to vanish.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Sharp,
    Wide,
}

/// Cone of opening `μπ` with vertex at the origin and one edge on the
/// positive x-axis. When μ is known exactly as a fraction `p/q` the geometry
/// keeps it, enabling exact resonance arithmetic downstream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeGeometry {
    mu: f64,
    rational: Option<(i64, i64)>,
}

impl ConeGeometry {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 1.0) || !mu.is_finite() {
            return Err(Error::geometry(format!(
                "opening fraction {mu} not in (0, 1)"
            )));
        }
        Ok(ConeGeometry { mu, rational: None })
    }

    /// Cone with `μ = p/q` held exactly.
    pub fn from_rational(p: i64, q: i64) -> Result<Self> {
        if p <= 0 || q <= 0 || p >= q {
            return Err(Error::geometry(format!("fraction {p}/{q} not in (0, 1)")));
        }
        let g = gcd(p, q);
        let (p, q) = (p / g, q / g);
        Ok(ConeGeometry {
            mu: p as f64 / q as f64,
            rational: Some((p, q)),
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Exact `μ = p/q` when available.
    pub fn mu_rational(&self) -> Option<(i64, i64)> {
        self.rational
    }

    /// Opening angle `μπ`.
    pub fn opening(&self) -> f64 {
        self.mu * PI
    }

    pub fn regime(&self) -> Regime {
        match self.rational {
            Some((p, q)) => {
                if 2 * p < q {
                    Regime::Sharp
                } else {
                    Regime::Wide
                }
            }
            None => {
                if self.mu < 0.5 {
                    Regime::Sharp
                } else {
                    Regime::Wide
                }
            }
        }
    }

    /// Decay rate `i/μ` of the i-th harmonic corner mode.
    pub fn mode_rate(&self, i: u32) -> f64 {
        i as f64 / self.mu
    }

    /// Whether a Cartesian point lies inside the (closed) cone.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        if x == 0.0 && y == 0.0 {
            return true;
        }
        let theta = y.atan2(x);
        (0.0..=self.opening()).contains(&theta)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Linear change of variables on the plane (2×2, corner fixed at the origin).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap2 {
    rows: [[f64; 2]; 2],
}

impl AffineMap2 {
    pub fn new(rows: [[f64; 2]; 2]) -> Result<Self> {
        let m = AffineMap2 { rows };
        if m.det().abs() < 1e-300 || !m.det().is_finite() {
            return Err(Error::geometry("map must be invertible"));
        }
        Ok(m)
    }

    pub fn identity() -> Self {
        AffineMap2 {
            rows: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        self.rows
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.rows[0][0] * x + self.rows[0][1] * y,
            self.rows[1][0] * x + self.rows[1][1] * y,
        )
    }

    pub fn det(&self) -> f64 {
        self.rows[0][0] * self.rows[1][1] - self.rows[0][1] * self.rows[1][0]
    }

    pub fn inverse(&self) -> AffineMap2 {
        let d = self.det();
        AffineMap2 {
            rows: [
                [self.rows[1][1] / d, -self.rows[0][1] / d],
                [-self.rows[1][0] / d, self.rows[0][0] / d],
            ],
        }
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &AffineMap2) -> AffineMap2 {
        let a = self.rows;
        let b = other.rows;
        AffineMap2 {
            rows: [
                [
                    a[0][0] * b[0][0] + a[0][1] * b[1][0],
                    a[0][0] * b[0][1] + a[0][1] * b[1][1],
                ],
                [
                    a[1][0] * b[0][0] + a[1][1] * b[1][0],
                    a[1][0] * b[0][1] + a[1][1] * b[1][1],
                ],
            ],
        }
    }
}

/// Normalising map for the quadratic model `|x|²/2 + √(1−c)·x₁x₂`, whose
/// Hessian determinant is the constant `c`.
///
/// Returns the map `A` with `model ∘ A = |x|²/2` together with the cone that
/// `A` sends onto the right-angle cone: opening fraction
/// `μ = arccos(√(1−c))/π ∈ (0, 1/2)`. `A` preserves arc length along both
/// cone edges and has determinant `1/√c`.
pub fn affine_normalizer(c: f64) -> Result<(AffineMap2, ConeGeometry)> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::invalid(format!(
            "determinant constant {c} not in (0, 1)"
        )));
    }
    let b = (1.0 - c).sqrt();
    let s = c.sqrt();
    let map = AffineMap2::new([[1.0, -b / s], [0.0, 1.0 / s]])?;
    let mu = b.acos() / PI;
    Ok((map, ConeGeometry::new(mu)?))
}

/// The i-th harmonic corner mode `hᵢ = |x|^{i/μ} sin(iθ/μ)`: positive inside
/// the cone for i = 1, exactly zero on both edges, harmonic away from the
/// vertex.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicMode {
    cone: ConeGeometry,
    index: u32,
}

pub fn harmonic_mode(cone: &ConeGeometry, index: u32) -> Result<HarmonicMode> {
    if index == 0 {
        return Err(Error::invalid("mode index must be ≥ 1"));
    }
    Ok(HarmonicMode { cone: *cone, index })
}

impl HarmonicMode {
    pub fn rate(&self) -> f64 {
        self.cone.mode_rate(self.index)
    }

    /// Angular factor `sin(iθ/μ)`, with exact zeros pinned on both edges.
    pub fn angular(&self, theta: f64) -> f64 {
        if theta == 0.0 || theta == self.cone.opening() {
            return 0.0;
        }
        (self.rate() * theta).sin()
    }

    pub fn eval_strip(&self, t: f64, theta: f64) -> f64 {
        (-self.rate() * t).exp() * self.angular(theta)
    }

    pub fn eval_cartesian(&self, x: f64, y: f64) -> f64 {
        let r = x.hypot(y);
        if r == 0.0 {
            return 0.0;
        }
        r.powf(self.rate()) * self.angular(y.atan2(x))
    }
}

/// Field sampled on a uniform grid of the strip `[t0, t1] × [0, μπ]`,
/// row-major with `t` as the slow index.
#[derive(Debug, Clone)]
pub struct StripField {
    cone: ConeGeometry,
    t0: f64,
    t1: f64,
    nt: usize,
    ntheta: usize,
    values: Vec<f64>,
}

impl StripField {
    pub fn from_fn(
        cone: &ConeGeometry,
        window: (f64, f64),
        nt: usize,
        ntheta: usize,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut field = StripField::zeros(cone, window, nt, ntheta)?;
        for it in 0..nt {
            let t = field.t_coord(it);
            for ith in 0..ntheta {
                let theta = field.theta_coord(ith);
                field.values[it * ntheta + ith] = f(t, theta);
            }
        }
        Ok(field)
    }

    pub fn zeros(
        cone: &ConeGeometry,
        window: (f64, f64),
        nt: usize,
        ntheta: usize,
    ) -> Result<Self> {
        let (t0, t1) = window;
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::geometry(format!("bad strip window [{t0}, {t1}]")));
        }
        if nt < 3 || ntheta < 3 {
            return Err(Error::geometry("strip resolution must be at least 3×3"));
        }
        Ok(StripField {
            cone: *cone,
            t0,
            t1,
            nt,
            ntheta,
            values: vec![0.0; nt * ntheta],
        })
    }

    pub fn cone(&self) -> &ConeGeometry {
        &self.cone
    }

    pub fn window(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn ntheta(&self) -> usize {
        self.ntheta
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / (self.nt - 1) as f64
    }

    pub fn dtheta(&self) -> f64 {
        self.cone.opening() / (self.ntheta - 1) as f64
    }

    pub fn t_coord(&self, it: usize) -> f64 {
        self.t0 + self.dt() * it as f64
    }

    pub fn theta_coord(&self, ith: usize) -> f64 {
        if ith == self.ntheta - 1 {
            self.cone.opening()
        } else {
            self.dtheta() * ith as f64
        }
    }

    pub fn value(&self, it: usize, ith: usize) -> f64 {
        self.values[it * self.ntheta + ith]
    }

    pub fn set_value(&mut self, it: usize, ith: usize, v: f64) {
        self.values[it * self.ntheta + ith] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, it: usize) -> &[f64] {
        &self.values[it * self.ntheta..(it + 1) * self.ntheta]
    }

    /// Overwrite the lateral rows θ = 0 and θ = μπ with the exact boundary
    /// value of the model perturbation (zero).
    pub fn impose_zero_lateral_boundary(&mut self) {
        for it in 0..self.nt {
            self.values[it * self.ntheta] = 0.0;
            self.values[it * self.ntheta + self.ntheta - 1] = 0.0;
        }
    }

    /// Pointwise combination with another field on the identical grid.
    pub fn zip_with(&self, other: &StripField, f: impl Fn(f64, f64) -> f64) -> Result<StripField> {
        if self.nt != other.nt
            || self.ntheta != other.ntheta
            || (self.t0 - other.t0).abs() > 1e-12
            || (self.t1 - other.t1).abs() > 1e-12
        {
            return Err(Error::invalid("strip fields live on different grids"));
        }
        let mut out = self.clone();
        for (o, (&a, &b)) in out
            .values
            .iter_mut()
            .zip(self.values.iter().zip(&other.values))
        {
            *o = f(a, b);
        }
        Ok(out)
    }

    /// Sup of |value| over θ for each t row.
    pub fn sup_over_theta(&self) -> Vec<(f64, f64)> {
        (0..self.nt)
            .map(|it| {
                let sup = self.row(it).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                (self.t_coord(it), sup)
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `∂_t² + ∂_θ²` on interior nodes; the result lives on the
    /// interior sub-grid.
    pub fn discrete_laplacian(&self) -> Result<StripField> {
        self.interior_map(|f, it, ith| {
            let ht2 = f.dt() * f.dt();
            let hth2 = f.dtheta() * f.dtheta();
            (f.value(it + 1, ith) - 2.0 * f.value(it, ith) + f.value(it - 1, ith)) / ht2
                + (f.value(it, ith + 1) - 2.0 * f.value(it, ith) + f.value(it, ith - 1)) / hth2
        })
    }

    fn interior_map(&self, op: impl Fn(&StripField, usize, usize) -> f64) -> Result<StripField> {
        if self.nt < 3 || self.ntheta < 3 {
            return Err(Error::geometry("field too small for interior stencil"));
        }
        let window = (self.t_coord(1), self.t_coord(self.nt - 2));
        let shrunk_cone = self.cone;
        let mut out = StripField {
            cone: shrunk_cone,
            t0: window.0,
            t1: window.1,
            nt: self.nt - 2,
            ntheta: self.ntheta - 2,
            values: vec![0.0; (self.nt - 2) * (self.ntheta - 2)],
        };
        for it in 1..self.nt - 1 {
            for ith in 1..self.ntheta - 1 {
                out.values[(it - 1) * out.ntheta + (ith - 1)] = op(self, it, ith);
            }
        }
        Ok(out)
    }

    /// Interior θ coordinates are offset by one spacing relative to the parent
    /// grid; expose them for interior fields produced by stencil maps.
    pub fn theta_offset_coord(&self, parent: &StripField, ith: usize) -> f64 {
        parent.theta_coord(ith + 1)
    }

    /// CSV serialisation: header `t,theta,value`, row-major with t slow,
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 48);
        out.push_str("t,theta,value\n");
        for it in 0..self.nt {
            let t = self.t_coord(it);
            for ith in 0..self.ntheta {
                let _ = writeln!(
                    out,
                    "{:.16e},{:.16e},{:.16e}",
                    t,
                    self.theta_coord(ith),
                    self.value(it, ith)
                );
            }
        }
        out
    }

    /// Parse a field previously written by [`StripField::to_csv`]. The cone
    /// is supplied by the caller and validated against the θ range.
    pub fn read_csv(cone: &ConeGeometry, reader: impl BufRead) -> Result<StripField> {
        let mut triples: Vec<(f64, f64, f64)> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with('t')) {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("bad csv line {}", lineno + 1)))
            };
            triples.push((
                parse(parts.next())?,
                parse(parts.next())?,
                parse(parts.next())?,
            ));
        }
        if triples.len() < 9 {
            return Err(Error::invalid("strip csv has too few rows"));
        }
        let t0 = triples[0].0;
        let ntheta = triples.iter().take_while(|r| r.0 == t0).count();
        if ntheta < 3 || triples.len() % ntheta != 0 {
            return Err(Error::invalid("strip csv rows do not form a grid"));
        }
        let nt = triples.len() / ntheta;
        let t1 = triples[triples.len() - 1].0;
        let opening = triples[ntheta - 1].1;
        if (opening - cone.opening()).abs() > 1e-9 * cone.opening() {
            return Err(Error::geometry(format!(
                "csv θ range {opening:.12} does not match cone opening {:.12}",
                cone.opening()
            )));
        }
        let mut field = StripField::zeros(cone, (t0, t1), nt, ntheta)?;
        for (idx, &(t, theta, v)) in triples.iter().enumerate() {
            let it = idx / ntheta;
            let ith = idx % ntheta;
            if (t - field.t_coord(it)).abs() > 1e-9 || (theta - field.theta_coord(ith)).abs() > 1e-9
            {
                return Err(Error::invalid("strip csv grid is not uniform"));
            }
            field.values[idx] = v;
        }
        Ok(field)
    }
}

/// Transport Cartesian samples to the strip window by bicubic interpolation.
///
/// Every strip node must be covered by the sampled hull; points the source
/// cannot provide surface as an `InsufficientCoverage` error.
pub fn to_strip(
    field: &CartesianField,
    cone: &ConeGeometry,
    window: (f64, f64),
    nt: usize,
    ntheta: usize,
) -> Result<StripField> {
    to_strip_with(cone, window, nt, ntheta, |x, y| field.interp_bicubic(x, y))
}

/// Strip transport driven by an arbitrary point sampler in Cartesian
/// coordinates (e.g. the pullback of a solved field through an affine map).
pub fn to_strip_with(
    cone: &ConeGeometry,
    window: (f64, f64),
    nt: usize,
    ntheta: usize,
    sampler: impl Fn(f64, f64) -> Result<f64>,
) -> Result<StripField> {
    let mut field = StripField::zeros(cone, window, nt, ntheta)?;
    for it in 0..nt {
        let t = field.t_coord(it);
        let r = (-t).exp();
        for ith in 0..ntheta {
            let theta = field.theta_coord(ith);
            let v = sampler(r * theta.cos(), r * theta.sin())?;
            field.set_value(it, ith, v);
        }
    }
    Ok(field)
}

/// Hessian determinant evaluated from strip samples:
/// `det D²v = e^{4t} [(ṽ_tt + ṽ_t)(ṽ_θθ − ṽ_t) − (ṽ_tθ + ṽ_θ)²]`,
/// with the strip derivatives discretised by central differences. The result
/// lives on the interior sub-grid.
pub fn strip_det_hessian(field: &StripField) -> Result<StripField> {
    field.interior_map(|f, it, ith| {
        let ht = f.dt();
        let hth = f.dtheta();
        let v = f.value(it, ith);
        let vt = (f.value(it + 1, ith) - f.value(it - 1, ith)) / (2.0 * ht);
        let vtt = (f.value(it + 1, ith) - 2.0 * v + f.value(it - 1, ith)) / (ht * ht);
        let vth = (f.value(it, ith + 1) - f.value(it, ith - 1)) / (2.0 * hth);
        let vthth = (f.value(it, ith + 1) - 2.0 * v + f.value(it, ith - 1)) / (hth * hth);
        let vtth = (f.value(it + 1, ith + 1) - f.value(it + 1, ith - 1) - f.value(it - 1, ith + 1)
            + f.value(it - 1, ith - 1))
            / (4.0 * ht * hth);
        let t = f.t_coord(it);
        (4.0 * t).exp() * ((vtt + vt) * (vthth - vt) - (vtth + vth) * (vtth + vth))
    })
}
