//! Least-squares fits used for decay-rate and amplitude estimation.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Ordinary least squares for `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub n: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::invalid("line fit needs at least 3 points"));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|&x| (x - mean_x).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("line fit abscissae are degenerate"));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (x - mean_x) * (y - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - intercept - slope * x).powi(2))
        .sum();
    let sigma2 = ssr / (n - 2.0);
    Ok(LineFit {
        slope,
        intercept,
        slope_se: (sigma2 / sxx).sqrt(),
        intercept_se: (sigma2 * (1.0 / n + mean_x * mean_x / sxx)).sqrt(),
        n: xs.len(),
    })
}

/// Fit `ln|y| ≈ ln_scale + power·ln t − rate·t` (decaying tail with an
/// algebraic prefactor). Requires positive abscissae and nonzero samples.
#[derive(Debug, Clone, Copy)]
pub struct RatePowerFit {
    pub rate: f64,
    pub power: f64,
    pub ln_scale: f64,
}

pub fn fit_rate_and_power(ts: &[f64], ys: &[f64]) -> Result<RatePowerFit> {
    if ts.len() != ys.len() || ts.len() < 4 {
        return Err(Error::invalid("rate/power fit needs at least 4 points"));
    }
    let mut ata = DMatrix::zeros(3, 3);
    let mut atb = DVector::zeros(3);
    for (&t, &y) in ts.iter().zip(ys) {
        if t <= 0.0 || y == 0.0 {
            return Err(Error::invalid("rate/power fit needs t > 0 and y != 0"));
        }
        let row = [1.0, t.ln(), -t];
        let b = y.abs().ln();
        for i in 0..3 {
            for j in 0..3 {
                ata[(i, j)] += row[i] * row[j];
            }
            atb[i] += row[i] * b;
        }
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::invalid("rate/power normal equations are singular"))?;
    Ok(RatePowerFit {
        ln_scale: sol[0],
        power: sol[1],
        rate: sol[2],
    })
}

/// Least-squares amplitudes for `y ≈ Σ_k amp_k · e^{−rate_k·t}` with the
/// rates held fixed.
pub fn fit_fixed_rate_amplitudes(ts: &[f64], ys: &[f64], rates: &[f64]) -> Result<Vec<f64>> {
    if ts.len() != ys.len() || ts.len() < rates.len() + 1 || rates.is_empty() {
        return Err(Error::invalid("amplitude fit is underdetermined"));
    }
    let m = rates.len();
    let mut ata = DMatrix::zeros(m, m);
    let mut atb = DVector::zeros(m);
    for (&t, &y) in ts.iter().zip(ys) {
        let row: Vec<f64> = rates.iter().map(|&r| (-r * t).exp()).collect();
        for i in 0..m {
            for j in 0..m {
                ata[(i, j)] += row[i] * row[j];
            }
            atb[i] += row[i] * y;
        }
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::invalid("amplitude normal equations are singular"))?;
    Ok(sol.iter().copied().collect())
}

/// Relative-weighted least-squares amplitudes for `y ≈ Σ_k amp_k ·
/// e^{−rate_k·t}` with the rates held fixed. Each sample is weighted by
/// `1/max(|y|, floor)`, so exponentially small deep samples constrain the
/// fit as strongly as the shallow ones. Returns `(amp_k, se_k)` pairs.
pub fn fit_fixed_rate_amplitudes_relative(
    ts: &[f64],
    ys: &[f64],
    rates: &[f64],
    floor: f64,
) -> Result<Vec<(f64, f64)>> {
    if ts.len() != ys.len() || ts.len() < rates.len() + 2 || rates.is_empty() {
        return Err(Error::invalid("amplitude fit is underdetermined"));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid("weight floor must be positive"));
    }
    let (n, m) = (ts.len(), rates.len());
    let mut a = DMatrix::zeros(n, m);
    let mut b = DVector::zeros(n);
    for (r, (&t, &y)) in ts.iter().zip(ys).enumerate() {
        let w = 1.0 / y.abs().max(floor);
        for (c, &g) in rates.iter().enumerate() {
            a[(r, c)] = w * (-g * t).exp();
        }
        b[r] = w * y;
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let sol = svd
        .solve(&b, 1e-13 * smax)
        .map_err(Error::invalid)?
        .column(0)
        .into_owned();
    let sigma2 = (&a * &sol - &b).norm_squared() / (n - m) as f64;
    // cov = σ² (AᵀA)⁻¹ = σ² V Σ⁻² Vᵀ; tiny singular values were already
    // truncated by the solve, so clamp them out of the error bars too.
    let vt = svd.v_t.as_ref().expect("svd computed with vectors");
    let out = (0..m)
        .map(|j| {
            let var: f64 = (0..m)
                .filter(|&k| svd.singular_values[k] > 1e-13 * smax)
                .map(|k| (vt[(k, j)] / svd.singular_values[k]).powi(2))
                .sum();
            (sol[j], (sigma2 * var).sqrt())
        })
        .collect();
    Ok(out)
}

/// Single fixed-rate amplitude with its standard error.
pub fn fit_single_amplitude(ts: &[f64], ys: &[f64], rate: f64) -> Result<(f64, f64)> {
    if ts.len() != ys.len() || ts.len() < 3 {
        return Err(Error::invalid("amplitude fit needs at least 3 points"));
    }
    let sxx: f64 = ts.iter().map(|&t| (-2.0 * rate * t).exp()).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("amplitude design column vanished"));
    }
    let sxy: f64 = ts
        .iter()
        .zip(ys)
        .map(|(&t, &y)| (-rate * t).exp() * y)
        .sum();
    let amp = sxy / sxx;
    let ssr: f64 = ts
        .iter()
        .zip(ys)
        .map(|(&t, &y)| (y - amp * (-rate * t).exp()).powi(2))
        .sum();
    let sigma2 = ssr / (ts.len() as f64 - 1.0);
    Ok((amp, (sigma2 / sxx).sqrt()))
}
