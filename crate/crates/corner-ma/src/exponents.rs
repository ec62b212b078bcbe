//! Ledger of admissible decay exponents for the corner expansion.
//!
//! Writing the perturbation on the strip as a sum of terms `c(θ) tʲ e^{−γt}`,
//! the admissible rates γ form the union of the harmonic-mode rates
//! `I₁ = {i/μ : i ≥ 1}` and the rates generated from them by the quadratic
//! nonlinearity. In the sharp regime (μ < 1/2) the generated set is
//! `I₂ = {(1/μ − 2)j + i/μ : i ≥ 1, j ≥ 1}`; in the wide regime (μ ≥ 1/2)
//! the leading mode drops out and `I₂ = {2(1/μ − 1)j + i/μ : i ≥ 2, j ≥ 1}`.
//! Every admissible rate can be written `k/μ − 2m`; nonlinear products
//! compose on this lattice as `(k₁+k₂, m₁+m₂+1)`.
//!
//! When μ = p/q is known exactly all rates are integer multiples of `1/p`,
//! so membership, collisions between `I₁` and `I₂`, and resonance tests are
//! exact integer arithmetic rather than floating-point comparisons.

use crate::cone::{ConeGeometry, Regime};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Hard cap on ledger size; guards against absurd cutoffs.
const MAX_ENTRIES: usize = 100_000;
/// Grouping / membership tolerance for cones without exact rational μ.
const FLOAT_TOL: f64 = 1e-9;

/// One admissible decay rate, with every way the lattice produces it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentEntry {
    /// The rate γ.
    pub value: f64,
    /// Exact numerator when μ = p/q: γ = numerator / p.
    pub numerator: Option<i64>,
    /// Lattice coordinates (k, m) with γ = k/μ − 2m, minimal m.
    pub lattice: (i64, i64),
    /// Some(i) when γ = i/μ is a harmonic-mode rate.
    pub i1_index: Option<u32>,
    /// All (i, j) pairs of the generated set that hit this rate.
    pub i2_witnesses: Vec<(i64, i64)>,
    /// 1-based rank in the sorted ledger.
    pub position: usize,
    /// Upper bound on the power of t that can appear at this rate.
    pub max_log_power: u32,
    /// Wide regime only: the leading mode coefficient must vanish.
    pub forced_zero: bool,
}

impl ExponentEntry {
    /// The cross-section operator `w″ + γ²w` (zero Dirichlet on the opening)
    /// is singular exactly at the harmonic-mode rates.
    pub fn resonant(&self) -> bool {
        self.i1_index.is_some()
    }

    /// A resonant rate that the nonlinearity also produces: source terms land
    /// on a singular operator and a logarithmic lift may be required.
    pub fn collision(&self) -> bool {
        self.i1_index.is_some() && !self.i2_witnesses.is_empty()
    }
}

/// Sorted ledger of all admissible rates up to a cutoff.
#[derive(Debug, Clone)]
pub struct ExponentLedger {
    cone: ConeGeometry,
    cutoff: f64,
    entries: Vec<ExponentEntry>,
}

impl ExponentLedger {
    pub fn cone(&self) -> &ConeGeometry {
        &self.cone
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn entries(&self) -> &[ExponentEntry] {
        &self.entries
    }

    /// Entry at 1-based ledger position.
    pub fn at_position(&self, position: usize) -> Option<&ExponentEntry> {
        self.entries.get(position.checked_sub(1)?)
    }

    /// Entry matching a rate up to the grouping tolerance.
    pub fn find(&self, gamma: f64) -> Option<&ExponentEntry> {
        self.entries
            .iter()
            .find(|e| (e.value - gamma).abs() <= FLOAT_TOL)
    }

    /// Leading rate μ₁ = 1/μ.
    pub fn mu1(&self) -> f64 {
        self.entries[0].value
    }

    /// Second admissible rate.
    pub fn mu2(&self) -> Result<f64> {
        self.at_position(2)
            .map(|e| e.value)
            .ok_or_else(|| Error::invalid("ledger cutoff below the second rate"))
    }

    /// Third admissible rate.
    pub fn mu3(&self) -> Result<f64> {
        self.at_position(3)
            .map(|e| e.value)
            .ok_or_else(|| Error::invalid("ledger cutoff below the third rate"))
    }

    /// CSV table, one row per rate.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "position,value,numerator,denominator,lattice_k,lattice_m,i1_index,i2_witnesses,resonant,collision,max_log_power,forced_zero\n",
        );
        for e in &self.entries {
            let witnesses = e
                .i2_witnesses
                .iter()
                .map(|(i, j)| format!("{i}:{j}"))
                .collect::<Vec<_>>()
                .join(";");
            let _ = writeln!(
                out,
                "{},{:.16e},{},{},{},{},{},{},{},{},{},{}",
                e.position,
                e.value,
                e.numerator.map(|n| n.to_string()).unwrap_or_default(),
                e.numerator
                    .and(self.cone.mu_rational().map(|(p, _)| p.to_string()))
                    .unwrap_or_default(),
                e.lattice.0,
                e.lattice.1,
                e.i1_index.map(|i| i.to_string()).unwrap_or_default(),
                witnesses,
                e.resonant(),
                e.collision(),
                e.max_log_power,
                e.forced_zero,
            );
        }
        out
    }

    /// Human-readable aligned table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "admissible rates for μ = {:.12} (cutoff {}, {:?} regime)",
            self.cone.mu(),
            self.cutoff,
            self.cone.regime()
        );
        let _ = writeln!(
            out,
            "{:>4} {:>12} {:>9} {:>9} {:>6} {:>9} {:>8} {:>7}  {}",
            "pos", "value", "lattice", "mode", "res", "collide", "max-log", "forced", "witnesses"
        );
        for e in &self.entries {
            let witnesses = e
                .i2_witnesses
                .iter()
                .map(|(i, j)| format!("({i},{j})"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                out,
                "{:>4} {:>12.6} {:>9} {:>9} {:>6} {:>9} {:>8} {:>7}  {}",
                e.position,
                e.value,
                format!("{},{}", e.lattice.0, e.lattice.1),
                e.i1_index
                    .map(|i| i.to_string())
                    .unwrap_or_else(|| "-".into()),
                e.resonant(),
                e.collision(),
                e.max_log_power,
                e.forced_zero,
                witnesses,
            );
        }
        out
    }
}

/// Whether a rate coincides with a harmonic-mode rate `i/μ` (i ≥ 1), which
/// makes the cross-section operator singular.
pub fn is_resonant(cone: &ConeGeometry, gamma: f64) -> bool {
    if gamma <= 0.0 {
        return false;
    }
    let scaled = gamma * cone.mu();
    let nearest = scaled.round();
    nearest >= 1.0 && (scaled - nearest).abs() <= FLOAT_TOL
}

/// Hölder regularity label `C^{k,α}` for the solution at the corner:
/// `k + α = 1/μ` (the leading perturbation decays like `r^{1/μ}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderLabel {
    pub k: u32,
    pub alpha: f64,
    /// α as an exact fraction when μ is rational.
    pub alpha_exact: Option<(i64, i64)>,
    /// Set when 1/μ is an integer, where the classical label degenerates
    /// (C^{k,0} is better read as C^{k−1,1}).
    pub integer_order: bool,
}

impl HolderLabel {
    pub fn describe(&self) -> String {
        let base = match self.alpha_exact {
            Some((num, den)) if num != 0 => format!("C^({},{}/{})", self.k, num, den),
            _ => format!("C^({},{:.6})", self.k, self.alpha),
        };
        if self.integer_order {
            format!("{base} [integer order: read as C^({},1)]", self.k - 1)
        } else {
            base
        }
    }
}

/// Regularity label from the leading rate 1/μ.
pub fn holder_label(cone: &ConeGeometry) -> HolderLabel {
    if let Some((p, q)) = cone.mu_rational() {
        // 1/μ = q/p = k + α with α = (q mod p)/p.
        let k = q / p;
        let rem = q % p;
        return HolderLabel {
            k: k as u32,
            alpha: rem as f64 / p as f64,
            alpha_exact: Some((rem, p)),
            integer_order: rem == 0,
        };
    }
    let rate = 1.0 / cone.mu();
    // Snap to an integer order when the float is within rounding distance.
    let nearest = rate.round();
    if (rate - nearest).abs() < 1e-12 {
        return HolderLabel {
            k: nearest as u32,
            alpha: 0.0,
            alpha_exact: None,
            integer_order: true,
        };
    }
    HolderLabel {
        k: rate.floor() as u32,
        alpha: rate - rate.floor(),
        alpha_exact: None,
        integer_order: false,
    }
}

/// Build the sorted ledger of admissible rates with `value ≤ cutoff`.
pub fn build_ledger(cone: &ConeGeometry, cutoff: f64) -> Result<ExponentLedger> {
    if !(cutoff.is_finite() && cutoff >= 1.0 / cone.mu()) {
        return Err(Error::invalid(format!(
            "cutoff {cutoff} must reach the leading rate {}",
            1.0 / cone.mu()
        )));
    }
    let entries = match cone.mu_rational() {
        Some((p, q)) => build_rational(cone, cutoff, p, q)?,
        None => build_float(cone, cutoff)?,
    };
    Ok(ExponentLedger {
        cone: *cone,
        cutoff,
        entries,
    })
}

/// Candidate generator shared by both arithmetic paths. `i2_bounds` yields
/// the (i, j) ranges of the generated set for the cone's regime.
fn i2_ranges(cone: &ConeGeometry) -> (i64, f64, f64) {
    match cone.regime() {
        // rate = (1/μ − 2) j + i/μ, i ≥ 1
        Regime::Sharp => (1, 1.0 / cone.mu() - 2.0, 1.0 / cone.mu()),
        // rate = 2(1/μ − 1) j + i/μ, i ≥ 2
        Regime::Wide => (2, 2.0 * (1.0 / cone.mu() - 1.0), 1.0 / cone.mu()),
    }
}

fn build_rational(cone: &ConeGeometry, cutoff: f64, p: i64, q: i64) -> Result<Vec<ExponentEntry>> {
    // All rates are numerator/p; the cutoff in numerator units.
    let max_num = (cutoff * p as f64 + FLOAT_TOL).floor() as i64;
    let (i_min, j_step_num) = match cone.regime() {
        Regime::Sharp => (1_i64, q - 2 * p),
        Regime::Wide => (2_i64, 2 * (q - p)),
    };
    // i1: numerator = i·q; i2: numerator = i·q + j·step.
    let mut found: std::collections::BTreeMap<i64, (Option<u32>, Vec<(i64, i64)>)> =
        std::collections::BTreeMap::new();
    let mut count = 0usize;
    let mut i = 1;
    while i * q <= max_num {
        found.entry(i * q).or_default().0 = Some(i as u32);
        count += 1;
        if count > MAX_ENTRIES {
            return Err(Error::invalid("ledger cutoff produces too many rates"));
        }
        i += 1;
    }
    // Sharp: step = q − 2p > 0; wide: step = 2(q − p) > 0 since p < q.
    let mut i = i_min;
    while i * q + j_step_num <= max_num {
        let mut j = 1;
        while i * q + j * j_step_num <= max_num {
            found
                .entry(i * q + j * j_step_num)
                .or_default()
                .1
                .push((i, j));
            count += 1;
            if count > MAX_ENTRIES {
                return Err(Error::invalid("ledger cutoff produces too many rates"));
            }
            j += 1;
        }
        i += 1;
    }
    let wide = cone.regime() == Regime::Wide;
    let entries = found
        .into_iter()
        .enumerate()
        .map(|(idx, (num, (i1, witnesses)))| {
            let position = idx + 1;
            // Lattice (k, m) with numerator = kq − 2mp, minimal m.
            let lattice = match i1 {
                Some(i) => (i as i64, 0),
                None => witnesses
                    .iter()
                    .map(|&(i, j)| lattice_of(cone, i, j))
                    .min_by_key(|&(_, m)| m)
                    .expect("entry without any witness"),
            };
            ExponentEntry {
                value: num as f64 / p as f64,
                numerator: Some(num),
                lattice,
                i1_index: i1,
                i2_witnesses: witnesses,
                position,
                max_log_power: max_log_power(wide, position),
                forced_zero: wide && i1 == Some(1),
            }
        })
        .collect();
    Ok(entries)
}

fn lattice_of(cone: &ConeGeometry, i: i64, j: i64) -> (i64, i64) {
    match cone.regime() {
        Regime::Sharp => (i + j, j),
        Regime::Wide => (i + 2 * j, j),
    }
}

fn max_log_power(wide: bool, position: usize) -> u32 {
    if wide {
        (position.saturating_sub(2)) as u32
    } else {
        (position - 1) as u32
    }
}

fn build_float(cone: &ConeGeometry, cutoff: f64) -> Result<Vec<ExponentEntry>> {
    let (i_min, j_step, i_step) = i2_ranges(cone);
    let mut candidates: Vec<(f64, Option<u32>, Option<(i64, i64)>)> = Vec::new();
    let mut i = 1;
    while i as f64 * i_step <= cutoff + FLOAT_TOL {
        candidates.push((i as f64 * i_step, Some(i as u32), None));
        i += 1;
        if candidates.len() > MAX_ENTRIES {
            return Err(Error::invalid("ledger cutoff produces too many rates"));
        }
    }
    if j_step > FLOAT_TOL {
        let mut i = i_min;
        while i as f64 * i_step + j_step <= cutoff + FLOAT_TOL {
            let mut j = 1;
            while i as f64 * i_step + j as f64 * j_step <= cutoff + FLOAT_TOL {
                candidates.push((i as f64 * i_step + j as f64 * j_step, None, Some((i, j))));
                j += 1;
                if candidates.len() > MAX_ENTRIES {
                    return Err(Error::invalid("ledger cutoff produces too many rates"));
                }
            }
            i += 1;
        }
    } else {
        return Err(Error::geometry(
            "opening fraction too close to 1: lattice step degenerates",
        ));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let wide = cone.regime() == Regime::Wide;
    let mut entries: Vec<ExponentEntry> = Vec::new();
    for (value, i1, witness) in candidates {
        if let Some(last) = entries.last_mut() {
            if (value - last.value).abs() <= FLOAT_TOL {
                if i1.is_some() {
                    last.i1_index = i1;
                }
                if let Some(w) = witness {
                    last.i2_witnesses.push(w);
                }
                continue;
            }
        }
        entries.push(ExponentEntry {
            value,
            numerator: None,
            lattice: (0, 0),
            i1_index: i1,
            i2_witnesses: witness.into_iter().collect(),
            position: entries.len() + 1,
            max_log_power: 0,
            forced_zero: false,
        });
    }
    for e in &mut entries {
        e.lattice = match e.i1_index {
            Some(i) => (i as i64, 0),
            None => e
                .i2_witnesses
                .iter()
                .map(|&(i, j)| lattice_of(cone, i, j))
                .min_by_key(|&(_, m)| m)
                .expect("entry without any witness"),
        };
        e.max_log_power = max_log_power(wide, e.position);
        e.forced_zero = wide && e.i1_index == Some(1);
    }
    Ok(entries)
}
