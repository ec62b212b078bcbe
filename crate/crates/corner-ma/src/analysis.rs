//! Corner-asymptotics extraction from strip fields: mode projections,
//! decay-rate and amplitude fits, the leading-coefficient sign test,
//! residual cascades, and maximum-principle barrier checks.
//!
//! All fits operate on a `t`-window of the strip. The default window trades
//! two error sources: below `t ≈ 1.5` the far field still distorts the
//! asymptotics, while above `t ≈ 3.5` the interpolation noise of a 513²
//! Cartesian source grid overtakes the shrinking signal. Leading-rate fits
//! are plain log-linear regressions — logarithmic prefactors can first
//! appear at collision rates, never at the leading rate itself.

use serde::{Deserialize, Serialize};

use crate::cone::{harmonic_mode, ConeGeometry, HarmonicMode, StripField};
use crate::expansion::Expansion;
use crate::exponents::{holder_label, ExponentLedger, HolderLabel};
use crate::numeric::fit::{fit_fixed_rate_amplitudes_relative, fit_line, fit_single_amplitude};
use crate::numeric::quad::trapezoid_uniform;
use crate::{Error, Result};

/// Default fit window in `t`.
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (1.5, 3.5);
/// Absolute floor below which a projected signal counts as numerical noise.
pub const NOISE_FLOOR: f64 = 1e-12;
/// Slack for window-containment comparisons.
const WINDOW_TOL: f64 = 1e-9;

/// Orthonormal angular mode `φᵢ(θ) = √(2/Θ) sin(iθ/μ)` over the opening Θ.
#[derive(Debug, Clone, Copy)]
pub struct AngularMode {
    mode: HarmonicMode,
    scale: f64,
}

/// The i-th orthonormal angular mode of the cone.
pub fn angular_mode(cone: &ConeGeometry, i: u32) -> Result<AngularMode> {
    Ok(AngularMode {
        mode: harmonic_mode(cone, i)?,
        scale: (2.0 / cone.opening()).sqrt(),
    })
}

impl AngularMode {
    /// Decay rate `i/μ` of the harmonic term carrying this angular factor.
    pub fn rate(&self) -> f64 {
        self.mode.rate()
    }

    /// Normalized angular value at `θ`.
    pub fn eval(&self, theta: f64) -> f64 {
        self.scale * self.mode.angular(theta)
    }
}

/// Project every `t`-row of the field onto `φᵢ`, returning `(t, w̃ᵢ(t))`
/// samples. The uniform-grid trapezoid rule is exact here (discrete sine
/// orthogonality) whenever `i` stays below the grid's Nyquist index.
pub fn mode_projection(field: &StripField, i: u32) -> Result<Vec<(f64, f64)>> {
    let phi = angular_mode(field.cone(), i)?;
    let weights: Vec<f64> = (0..field.ntheta())
        .map(|k| phi.eval(field.theta_coord(k)))
        .collect();
    let dtheta = field.dtheta();
    let mut scratch = vec![0.0; field.ntheta()];
    Ok((0..field.nt())
        .map(|it| {
            for ((s, v), w) in scratch.iter_mut().zip(field.row(it)).zip(&weights) {
                *s = v * w;
            }
            (field.t_coord(it), trapezoid_uniform(&scratch, dtheta))
        })
        .collect())
}

/// Sign classification of a fitted coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientSign {
    Negative,
    /// Statistically indistinguishable from zero (|amplitude| < 3·stderr).
    Zero,
    Positive,
}

/// Windowed least-squares summary of one projected corner mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    /// Mode index that was projected (1 = leading).
    pub mode: u32,
    /// Fit window `[T₀, T₁]` in `t`.
    pub window: (f64, f64),
    /// Fitted decay exponent (positive means decay).
    pub exponent_hat: f64,
    /// Standard error of the exponent.
    pub exponent_se: f64,
    /// Fitted coefficient of `sin(iθ/μ)` (the `t = 0` amplitude).
    pub amplitude_hat: f64,
    /// Standard error of the amplitude.
    pub amplitude_se: f64,
    /// Number of `t`-rows inside the window.
    pub npoints: usize,
    /// Rate predicted for this mode, `i/μ`.
    pub predicted_exponent: f64,
    /// `|exponent_hat − predicted| / predicted`.
    pub relative_gap: f64,
    /// Sign of the projected mode over the window.
    pub c10_sign: CoefficientSign,
    /// Corner regularity label implied by the cone.
    pub holder: HolderLabel,
    /// Free-form diagnostics.
    pub notes: Vec<String>,
}

fn window_rows(
    samples: Vec<(f64, f64)>,
    field_window: (f64, f64),
    window: (f64, f64),
) -> Result<Vec<(f64, f64)>> {
    let (t0, t1) = window;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::invalid(format!(
            "degenerate fit window [{t0}, {t1}]"
        )));
    }
    if t0 < field_window.0 - WINDOW_TOL || t1 > field_window.1 + WINDOW_TOL {
        return Err(Error::InsufficientCoverage(format!(
            "fit window [{t0}, {t1}] leaves the sampled range [{}, {}]",
            field_window.0, field_window.1
        )));
    }
    let rows: Vec<(f64, f64)> = samples
        .into_iter()
        .filter(|(t, _)| *t >= t0 - WINDOW_TOL && *t <= t1 + WINDOW_TOL)
        .collect();
    if rows.len() < 3 {
        return Err(Error::invalid("fit window holds fewer than 3 rows"));
    }
    Ok(rows)
}

/// Fit decay exponent and amplitude of mode `i` over a `t`-window by
/// regressing `ln|w̃ᵢ(t)|` on `t`.
pub fn fit_mode(
    field: &StripField,
    ledger: &ExponentLedger,
    i: u32,
    window: (f64, f64),
) -> Result<FitReport> {
    let cone = field.cone();
    if (cone.mu() - ledger.cone().mu()).abs() > 1e-14 {
        return Err(Error::invalid("field and ledger use different cones"));
    }
    if window.1 - window.0 < 1.0 - WINDOW_TOL {
        return Err(Error::invalid("fit window must span at least 1 in t"));
    }
    let rows = window_rows(mode_projection(field, i)?, field.window(), window)?;
    for (t, w) in &rows {
        if w.abs() < NOISE_FLOOR {
            return Err(Error::NoiseFloor(format!(
                "window below noise floor: |w̃{i}({t:.3})| = {:.3e}",
                w.abs()
            )));
        }
    }
    let sign = rows[0].1.signum();
    if rows.iter().any(|(_, w)| w.signum() != sign) {
        return Err(Error::UnstableSign(format!(
            "mode-{i} projection changes sign inside [{}, {}]",
            window.0, window.1
        )));
    }
    let ts: Vec<f64> = rows.iter().map(|(t, _)| *t).collect();
    let lns: Vec<f64> = rows.iter().map(|(_, w)| w.abs().ln()).collect();
    let fit = fit_line(&ts, &lns)?;
    // The projection of c·sin(iθ/μ)·e^{−γt} onto φᵢ is c·√(Θ/2)·e^{−γt}.
    let norm = (cone.opening() / 2.0).sqrt();
    let amplitude_hat = sign * fit.intercept.exp() / norm;
    let amplitude_se = amplitude_hat.abs() * fit.intercept_se;
    let predicted = cone.mode_rate(i);
    let exponent_hat = -fit.slope;
    let c10_sign = if amplitude_hat.abs() < 3.0 * amplitude_se {
        CoefficientSign::Zero
    } else if sign < 0.0 {
        CoefficientSign::Negative
    } else {
        CoefficientSign::Positive
    };
    Ok(FitReport {
        mode: i,
        window,
        exponent_hat,
        exponent_se: fit.slope_se,
        amplitude_hat,
        amplitude_se,
        npoints: rows.len(),
        predicted_exponent: predicted,
        relative_gap: (exponent_hat - predicted).abs() / predicted,
        c10_sign,
        holder: holder_label(cone),
        notes: Vec::new(),
    })
}

/// [`fit_mode`] for the leading mode `i = 1`.
pub fn fit_leading(
    field: &StripField,
    ledger: &ExponentLedger,
    window: (f64, f64),
) -> Result<FitReport> {
    fit_mode(field, ledger, 1, window)
}

/// Least-squares amplitude of mode `i` at a fixed decay rate, with its
/// standard error. Unlike [`fit_mode`] this works in the untransformed
/// signal, so a projection consistent with zero keeps an honest error bar —
/// the wide-regime check that the leading mode is absent asserts
/// `|amplitude| < 3·stderr` on exactly this fit.
pub fn mode_amplitude(
    field: &StripField,
    i: u32,
    rate: f64,
    window: (f64, f64),
) -> Result<(f64, f64)> {
    let rows = window_rows(mode_projection(field, i)?, field.window(), window)?;
    let ts: Vec<f64> = rows.iter().map(|(t, _)| *t).collect();
    let ws: Vec<f64> = rows.iter().map(|(_, w)| *w).collect();
    let (amp, se) = fit_single_amplitude(&ts, &ws, rate)?;
    let norm = (field.cone().opening() / 2.0).sqrt();
    Ok((amp / norm, se / norm))
}

/// Least-squares amplitudes of one angular mode at several fixed decay
/// rates simultaneously, in the same convention as [`mode_amplitude`].
/// Fitting all ledger rates jointly removes the bias a single-rate fit
/// picks up while the window still carries sizable higher-rate transients.
pub fn mode_amplitudes_at_rates(
    field: &StripField,
    i: u32,
    rates: &[f64],
    window: (f64, f64),
) -> Result<Vec<(f64, f64)>> {
    let rows = window_rows(mode_projection(field, i)?, field.window(), window)?;
    let ts: Vec<f64> = rows.iter().map(|(t, _)| *t).collect();
    let ws: Vec<f64> = rows.iter().map(|(_, w)| *w).collect();
    let fitted = fit_fixed_rate_amplitudes_relative(&ts, &ws, rates, NOISE_FLOOR)?;
    let norm = (field.cone().opening() / 2.0).sqrt();
    Ok(fitted
        .into_iter()
        .map(|(a, s)| (a / norm, s / norm))
        .collect())
}

/// One truncation stage of the residual cascade.
#[derive(Debug, Clone, Serialize)]
pub struct CascadeStage {
    /// Number of leading rate blocks subtracted from the field.
    pub stage: usize,
    /// Rate of the last subtracted block (`None` at stage 0).
    pub subtracted_rate: Option<f64>,
    /// Fitted decay rate of the sup-over-θ remainder; `None` when the
    /// remainder sits at the numerical floor.
    pub slope: Option<f64>,
}

fn sup_decay(residual: &StripField, window: (f64, f64)) -> Result<Option<f64>> {
    let rows = window_rows(residual.sup_over_theta(), residual.window(), window)?;
    let peak = rows.iter().fold(0.0_f64, |m, (_, s)| m.max(*s));
    if peak < NOISE_FLOOR || rows.iter().any(|(_, s)| *s < 1e-300) {
        return Ok(None);
    }
    let ts: Vec<f64> = rows.iter().map(|(t, _)| *t).collect();
    let lns: Vec<f64> = rows.iter().map(|(_, s)| s.ln()).collect();
    Ok(Some(-fit_line(&ts, &lns)?.slope))
}

/// Subtract the expansion's rate blocks from the field one at a time and fit
/// the decay of what remains. For a field that genuinely follows the
/// expansion the slopes are nondecreasing in the stage and reach the floor
/// once every present rate has been removed.
pub fn residual_cascade(
    field: &StripField,
    expansion: &Expansion,
    window: (f64, f64),
) -> Result<Vec<CascadeStage>> {
    if (field.cone().mu() - expansion.basis().cone().mu()).abs() > 1e-14 {
        return Err(Error::invalid("field and expansion use different cones"));
    }
    let mut residual = field.clone();
    let mut stages = vec![CascadeStage {
        stage: 0,
        subtracted_rate: None,
        slope: sup_decay(&residual, window)?,
    }];
    for (m, term) in expansion.terms().iter().enumerate() {
        let gamma = term.gamma();
        let profiles = term.profiles();
        let block = StripField::from_fn(
            field.cone(),
            field.window(),
            field.nt(),
            field.ntheta(),
            |t, theta| {
                let mut poly = 0.0;
                let mut tp = 1.0;
                for p in profiles {
                    poly += p.eval(theta) * tp;
                    tp *= t;
                }
                (-gamma * t).exp() * poly
            },
        )?;
        residual = residual.zip_with(&block, |r, b| r - b)?;
        stages.push(CascadeStage {
            stage: m + 1,
            subtracted_rate: Some(gamma),
            slope: sup_decay(&residual, window)?,
        });
    }
    Ok(stages)
}

/// Result of a barrier comparison `v ≤ −εh` over a strip region.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierReport {
    /// ε that was tested.
    pub epsilon: f64,
    /// Whether `v + εh ≤ slack` held at every node of the region.
    pub pass: bool,
    /// Largest value of `v + εh` over the region (positive = violation).
    pub max_violation: f64,
    /// Largest ε that passes, located by bisection (0 when none does).
    pub epsilon_max: f64,
    /// Comparison slack used.
    pub slack: f64,
}

/// Verify the maximum-principle barrier `v ≤ −εh`, with `h` the leading
/// harmonic mode, at every node whose `t` lies in `region`; then locate the
/// maximal workable ε by bisection. Requires `v ≤ 0` on the region's
/// boundary nodes (the comparison-principle hypothesis).
pub fn barrier_check(v: &StripField, epsilon: f64, region: (f64, f64)) -> Result<BarrierReport> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("barrier ε must be nonnegative"));
    }
    let (r0, r1) = region;
    let fw = v.window();
    if !(r1 > r0) || r0 < fw.0 - WINDOW_TOL || r1 > fw.1 + WINDOW_TOL {
        return Err(Error::InsufficientCoverage(format!(
            "region [{r0}, {r1}] leaves the sampled range [{}, {}]",
            fw.0, fw.1
        )));
    }
    let h = harmonic_mode(v.cone(), 1)?;
    let rows: Vec<usize> = (0..v.nt())
        .filter(|&it| {
            let t = v.t_coord(it);
            t >= r0 - WINDOW_TOL && t <= r1 + WINDOW_TOL
        })
        .collect();
    if rows.len() < 2 {
        return Err(Error::invalid("region holds fewer than 2 rows"));
    }
    let mut vs = Vec::new();
    let mut hs = Vec::new();
    let mut vscale = 0.0_f64;
    let mut hscale = 0.0_f64;
    for &it in &rows {
        let t = v.t_coord(it);
        for ith in 0..v.ntheta() {
            let vv = v.value(it, ith);
            let hv = h.eval_strip(t, v.theta_coord(ith));
            vs.push(vv);
            hs.push(hv);
            vscale = vscale.max(vv.abs());
            hscale = hscale.max(hv.abs());
        }
    }
    let slack = 1e-12 * (vscale + hscale).max(1e-300);
    // Comparison-principle hypothesis: v ≤ 0 on the region's boundary nodes
    // (lateral edges plus the first and last row).
    let ntheta = v.ntheta();
    for (k, &vv) in vs.iter().enumerate() {
        let row = k / ntheta;
        let col = k % ntheta;
        let boundary = row == 0 || row + 1 == rows.len() || col == 0 || col + 1 == ntheta;
        if boundary && vv > slack {
            return Err(Error::invalid(format!(
                "barrier hypothesis fails: v = {vv:.3e} > 0 on the region boundary"
            )));
        }
    }
    let violation = |eps: f64| {
        vs.iter()
            .zip(&hs)
            .fold(f64::NEG_INFINITY, |m, (&vv, &hv)| m.max(vv + eps * hv))
    };
    let max_violation = violation(epsilon);
    let pass = max_violation <= slack;
    // Bisection for the largest passing ε: grow an upper bracket, then halve.
    let mut epsilon_max = 0.0;
    if violation(0.0) <= slack {
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut grow = 0;
        while violation(hi) <= slack && grow < 80 {
            lo = hi;
            hi *= 2.0;
            grow += 1;
        }
        if grow == 80 {
            epsilon_max = lo;
        } else {
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if violation(mid) <= slack {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            epsilon_max = lo;
        }
    }
    Ok(BarrierReport {
        epsilon,
        pass,
        max_violation,
        epsilon_max,
        slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::affine_normalizer;
    use crate::expansion::{Expansion, FreeCoefficients};
    use crate::exponents::build_ledger;
    use crate::modes::ThetaBasis;
    use crate::numeric::fd::det_hessian_2d;

    fn cone(mu: f64) -> ConeGeometry {
        ConeGeometry::new(mu).unwrap()
    }

    #[test]
    fn projections_are_exact_for_pure_modes() {
        let cone = cone(0.4);
        let phi2 = angular_mode(&cone, 2).unwrap();
        let field = StripField::from_fn(&cone, (0.0, 4.0), 41, 65, |t, theta| {
            (-2.5 * t).exp() * phi2.eval(theta)
        })
        .unwrap();
        let onto2 = mode_projection(&field, 2).unwrap();
        let onto1 = mode_projection(&field, 1).unwrap();
        for ((t, w2), (_, w1)) in onto2.iter().zip(&onto1) {
            assert!((w2 - (-2.5 * t).exp()).abs() < 1e-10);
            assert!(w1.abs() < 1e-10);
        }
    }

    #[test]
    fn projections_are_linear_over_mode_sums() {
        let cone = cone(0.35);
        let phi1 = angular_mode(&cone, 1).unwrap();
        let phi3 = angular_mode(&cone, 3).unwrap();
        let field = StripField::from_fn(&cone, (0.5, 3.5), 31, 97, |t, theta| {
            -0.3 * (-2.0 * t).exp() * phi1.eval(theta) + 0.7 * (-3.0 * t).exp() * phi3.eval(theta)
        })
        .unwrap();
        for (t, w) in mode_projection(&field, 1).unwrap() {
            assert!((w - -0.3 * (-2.0 * t).exp()).abs() < 1e-10);
        }
        for (t, w) in mode_projection(&field, 3).unwrap() {
            assert!((w - 0.7 * (-3.0 * t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn leading_fit_recovers_a_synthetic_term() {
        // −0.3 e^{−2.5t} sin(2.5θ) is the leading term shape for μ = 0.4.
        let cone = cone(0.4);
        let ledger = build_ledger(&cone, 5.1).unwrap();
        let field = StripField::from_fn(&cone, (0.0, 4.0), 81, 65, |t, theta| {
            -0.3 * (-2.5 * t).exp() * (2.5 * theta).sin()
        })
        .unwrap();
        let report = fit_leading(&field, &ledger, (1.0, 3.0)).unwrap();
        assert!((report.exponent_hat - 2.5).abs() < 1e-3);
        assert!((report.amplitude_hat - -0.3).abs() < 1e-3);
        assert_eq!(report.c10_sign, CoefficientSign::Negative);
        assert!(report.relative_gap < 1e-6);
        assert!(report.exponent_se >= 0.0 && report.amplitude_se >= 0.0);
        assert_eq!(report.holder, holder_label(&cone));
        assert_eq!(report.predicted_exponent, 2.5);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"c10_sign\":\"negative\""));
    }

    #[test]
    fn fit_errors_are_tagged_by_cause() {
        let cone = cone(0.4);
        let ledger = build_ledger(&cone, 5.1).unwrap();
        let noise = StripField::from_fn(&cone, (0.0, 4.0), 41, 33, |_, theta| {
            1e-15 * (theta * 2.5).sin()
        })
        .unwrap();
        match fit_leading(&noise, &ledger, (1.0, 3.0)) {
            Err(Error::NoiseFloor(msg)) => assert!(msg.contains("noise floor")),
            other => panic!("expected noise-floor error, got {other:?}"),
        }
        let flip = StripField::from_fn(&cone, (0.0, 4.0), 41, 33, |t, theta| {
            (t - 2.03) * (-t).exp() * (theta * 2.5).sin()
        })
        .unwrap();
        match fit_leading(&flip, &ledger, (1.0, 3.0)) {
            Err(Error::UnstableSign(_)) => {}
            other => panic!("expected unstable-sign error, got {other:?}"),
        }
        let field = StripField::from_fn(&cone, (0.0, 4.0), 41, 33, |t, theta| {
            (-2.5 * t).exp() * (theta * 2.5).sin()
        })
        .unwrap();
        assert!(matches!(
            fit_leading(&field, &ledger, (1.0, 1.5)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            fit_leading(&field, &ledger, (3.0, 5.0)),
            Err(Error::InsufficientCoverage(_))
        ));
    }

    #[test]
    fn fits_are_stable_across_windows_and_resolutions() {
        let cone = cone(0.3);
        let ledger = build_ledger(&cone, 7.0).unwrap();
        for &(nt, ntheta) in &[(61, 49), (121, 97)] {
            let field = StripField::from_fn(&cone, (0.0, 5.0), nt, ntheta, |t, theta| {
                0.8 * (-(1.0 / 0.3) * t).exp() * (theta / 0.3).sin()
            })
            .unwrap();
            for &window in &[(0.5, 2.0), (1.5, 3.5), (2.0, 4.5)] {
                let report = fit_leading(&field, &ledger, window).unwrap();
                assert!((report.exponent_hat - 1.0 / 0.3).abs() < 1e-3 * (1.0 / 0.3));
                assert!((report.amplitude_hat - 0.8).abs() < 1e-3);
                assert_eq!(report.c10_sign, CoefficientSign::Positive);
            }
        }
    }

    #[test]
    fn cascade_stage_one_recovers_the_second_exponent() {
        // Two synthetic rates; the expansion carries only the first, so the
        // stage-1 remainder is the pure second exponential.
        let cone = ConeGeometry::from_rational(2, 5).unwrap();
        let basis = ThetaBasis::new(&cone, 48).unwrap();
        let ledger = build_ledger(&cone, 2.6).unwrap();
        let mut e = Expansion::new(basis, ledger, FreeCoefficients::with_leading(-0.3)).unwrap();
        e.extend(2.6).unwrap();
        assert_eq!(e.terms().len(), 1);
        let field = StripField::from_fn(&cone, (0.0, 6.0), 121, 65, |t, theta| {
            -0.3 * (-2.5 * t).exp() * (theta / 0.4).sin()
                + 0.05 * (-4.0 * t).exp() * (2.0 * theta / 0.4).sin()
        })
        .unwrap();
        let stages = residual_cascade(&field, &e, (2.0, 4.5)).unwrap();
        assert_eq!(stages.len(), 2);
        let s0 = stages[0].slope.unwrap();
        assert!((s0 - 2.5).abs() < 0.2, "stage-0 slope {s0}");
        let s1 = stages[1].slope.unwrap();
        assert!((s1 - 4.0).abs() < 1e-3, "stage-1 slope {s1}");
        assert_eq!(stages[1].subtracted_rate, Some(2.5));
        assert!(s1 > s0);
    }

    #[test]
    fn cascade_reaches_the_floor_on_an_exact_expansion_field() {
        // A small seed keeps the quadratic-generated blocks ordered inside
        // the window (their profiles grow with the rate, so a large seed
        // would not separate until much deeper t).
        let cone = ConeGeometry::from_rational(2, 5).unwrap();
        let basis = ThetaBasis::new(&cone, 64).unwrap();
        let ledger = build_ledger(&cone, 5.1).unwrap();
        let mut e = Expansion::new(basis, ledger, FreeCoefficients::with_leading(-0.05)).unwrap();
        e.extend(4.5).unwrap();
        let field = e.evaluate((0.0, 6.0), 121, 65).unwrap();
        let stages = residual_cascade(&field, &e, (1.5, 4.0)).unwrap();
        assert_eq!(stages.len(), 6);
        assert!((stages[0].slope.unwrap() - 2.5).abs() < 0.2);
        assert!(stages.last().unwrap().slope.is_none(), "floor not reached");
        let fitted: Vec<f64> = stages.iter().filter_map(|s| s.slope).collect();
        for pair in fitted.windows(2) {
            assert!(pair[1] > pair[0] - 0.05, "slopes decreased: {fitted:?}");
        }
    }

    #[test]
    fn barrier_check_brackets_the_exact_threshold() {
        // v = −h passes ε = 0.5, fails ε = 2 by the interior max of h, and
        // has ε_max = 1.
        let cone = cone(0.3);
        let h = harmonic_mode(&cone, 1).unwrap();
        let v = StripField::from_fn(&cone, (1.0, 4.0), 61, 49, |t, theta| {
            -h.eval_strip(t, theta)
        })
        .unwrap();
        let pass = barrier_check(&v, 0.5, (1.5, 3.5)).unwrap();
        assert!(pass.pass);
        assert!(pass.max_violation <= pass.slack);
        let fail = barrier_check(&v, 2.0, (1.5, 3.5)).unwrap();
        assert!(!fail.pass);
        let hmax = (0..v.nt())
            .filter(|&it| v.t_coord(it) >= 1.5 - 1e-9 && v.t_coord(it) <= 3.5 + 1e-9)
            .flat_map(|it| (0..v.ntheta()).map(move |ith| (it, ith)))
            .fold(0.0_f64, |m, (it, ith)| {
                m.max(h.eval_strip(v.t_coord(it), v.theta_coord(ith)))
            });
        assert!((fail.max_violation - hmax).abs() < 1e-12);
        assert!((fail.epsilon_max - 1.0).abs() < 1e-6);
    }

    #[test]
    fn barrier_check_rejects_positive_boundary_data() {
        let cone = cone(0.3);
        let v = StripField::from_fn(&cone, (1.0, 4.0), 31, 25, |_, _| 0.1).unwrap();
        assert!(matches!(
            barrier_check(&v, 0.5, (1.5, 3.5)),
            Err(Error::InvalidArgument(_))
        ));
        let ok = StripField::from_fn(&cone, (1.0, 4.0), 31, 25, |_, _| -0.1).unwrap();
        assert!(matches!(
            barrier_check(&ok, 0.5, (0.5, 3.5)),
            Err(Error::InsufficientCoverage(_))
        ));
    }

    #[test]
    fn perturbing_a_quadratic_by_the_mode_lowers_the_determinant() {
        // The mechanism behind the sign theorem: det D²(|x|²/2 + εh) =
        // 1 + ε²·det D²h < 1 because the harmonic mode has negative
        // Hessian determinant.
        let (_, cone) = affine_normalizer(0.64).unwrap();
        let h = harmonic_mode(&cone, 1).unwrap();
        for &(r, frac) in &[(0.3, 0.3), (0.5, 0.5), (0.8, 0.7)] {
            let theta = frac * cone.opening();
            let (x, y) = (r * theta.cos(), r * theta.sin());
            let det = det_hessian_2d(
                &|px, py| 0.5 * (px * px + py * py) + 0.05 * h.eval_cartesian(px, py),
                x,
                y,
                1e-4,
            );
            assert!(det < 1.0, "determinant {det} not lowered at ({x}, {y})");
        }
    }

    #[test]
    fn wide_regime_mode_one_amplitude_is_consistent_with_zero() {
        // μ ≥ 1/2 fields carry no i = 1 term; with a roundoff-scale
        // perturbation the fitted fixed-rate amplitude must stay within
        // three standard errors of zero.
        let cone = cone(0.6);
        let phi2 = angular_mode(&cone, 2).unwrap();
        let phi1 = angular_mode(&cone, 1).unwrap();
        let field = StripField::from_fn(&cone, (0.0, 5.0), 101, 65, |t, theta| {
            0.2 * (-phi2.rate() * t).exp() * phi2.eval(theta)
                + 1e-13 * (7.3 * t).sin() * phi1.eval(theta)
        })
        .unwrap();
        let (amp, se) = mode_amplitude(&field, 1, phi1.rate(), (1.5, 3.5)).unwrap();
        assert!(amp.abs() < 3.0 * se, "amp {amp:.3e} vs se {se:.3e}");
        assert!(amp.abs() < 1e-12);
    }

    #[test]
    fn joint_rate_amplitudes_match_the_single_rate_convention() {
        // sin-coefficients −0.69 and +2.3 at the first two ladder rates of
        // μ = 0.3; the second is a 45% transient at the window start.
        let cone = cone(0.3);
        let field = StripField::from_fn(&cone, (1.0, 4.0), 121, 65, |t, theta| {
            (-0.69 * (-10.0 / 3.0 * t).exp() + 2.3 * (-14.0 / 3.0 * t).exp())
                * (theta / 0.3).sin()
        })
        .unwrap();
        let rates = [10.0 / 3.0, 14.0 / 3.0];
        let out = mode_amplitudes_at_rates(&field, 1, &rates, (1.5, 3.8)).unwrap();
        assert!((out[0].0 - -0.69).abs() < 1e-8, "c1 {:.6e}", out[0].0);
        assert!((out[1].0 - 2.3).abs() < 1e-6, "c2 {:.6e}", out[1].0);
        // A single-rate fit over the same window is dragged far off by the
        // transient — which is why subtraction seeds use the joint fit.
        let (single, _) = mode_amplitude(&field, 1, 10.0 / 3.0, (1.5, 3.8)).unwrap();
        assert!((single - -0.69).abs() > 0.05, "single {single:.4}");
    }
}
