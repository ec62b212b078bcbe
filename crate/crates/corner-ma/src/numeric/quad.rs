//! Adaptive Simpson quadrature and simple composite rules.

use crate::{Error, Result};

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid_uniform(values: &[f64], h: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * values[0] + interior + 0.5 * values[values.len() - 1])
}

/// Adaptive Simpson integration of `f` over `[a, b]`.
///
/// `tol` is treated as an absolute tolerance on the result; recursion depth is
/// capped at 48 levels, past which the routine reports non-convergence with
/// the worst local error estimate.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid("quadrature endpoints must be finite"));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut worst: f64 = 0.0;
    let v = recurse(f, a, b, fa, fm, fb, whole, tol.max(1e-300), 48, &mut worst);
    match v {
        Some(val) => Ok(val),
        None => Err(Error::Quadrature(format!(
            "max subdivision depth reached; local error estimate {worst:.3e}"
        ))),
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Some(left + right + err / 15.0);
    }
    if depth == 0 {
        *worst = worst.max(err.abs() / 15.0);
        return None;
    }
    let lv = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, worst)?;
    let rv = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, worst)?;
    Some(lv + rv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_exponential_decay() {
        let v = adaptive_simpson(&|t: f64| (-2.0 * t).exp(), 0.0, 40.0, 1e-13).unwrap();
        assert_relative_eq!(v, 0.5, epsilon = 1e-11);
    }

    #[test]
    fn integrates_peaked_function() {
        let v = adaptive_simpson(&|t: f64| 1.0 / (1e-3 + t * t), -1.0, 1.0, 1e-12).unwrap();
        let exact = 2.0 / 1e-3_f64.sqrt() * (1.0 / 1e-3_f64.sqrt()).atan();
        assert_relative_eq!(v, exact, epsilon = 1e-9 * exact);
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let h = 0.1;
        let values: Vec<f64> = (0..11).map(|i| 3.0 * (i as f64) * h + 1.0).collect();
        assert_relative_eq!(trapezoid_uniform(&values, h), 2.5, epsilon = 1e-14);
    }
}
