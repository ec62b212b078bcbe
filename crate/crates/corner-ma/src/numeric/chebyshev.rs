//! Chebyshev–Lobatto collocation on an interval `[0, L]`.
//!
//! Nodes are stored in ascending order. Differentiation matrices use the
//! barycentric form with the negative-row-sum diagonal, which keeps them
//! exact on polynomials up to the grid degree; integration weights are the
//! classical Clenshaw–Curtis weights.

use nalgebra::DMatrix;
use std::f64::consts::PI;

/// Chebyshev–Lobatto grid of degree `n` (so `n + 1` nodes) on `[0, len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lobatto {
    len: f64,
    nodes: Vec<f64>,
}

impl Lobatto {
    pub fn new(degree: usize, len: f64) -> Self {
        assert!(degree >= 2, "need at least 3 collocation nodes");
        assert!(len > 0.0 && len.is_finite());
        let n = degree;
        let nodes = (0..=n)
            .map(|j| 0.5 * len * (1.0 - (PI * j as f64 / n as f64).cos()))
            .collect();
        Lobatto { len, nodes }
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn bary_weight(&self, j: usize) -> f64 {
        let n = self.degree();
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        if j == 0 || j == n {
            0.5 * sign
        } else {
            sign
        }
    }

    /// First-derivative collocation matrix.
    pub fn diff_matrix(&self) -> DMatrix<f64> {
        let n = self.degree() + 1;
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                if i != j {
                    let v = (self.bary_weight(j) / self.bary_weight(i))
                        / (self.nodes[i] - self.nodes[j]);
                    d[(i, j)] = v;
                    row_sum += v;
                }
            }
            d[(i, i)] = -row_sum;
        }
        d
    }

    /// Clenshaw–Curtis integration weights for `∫_0^len`.
    pub fn quad_weights(&self) -> Vec<f64> {
        let n = self.degree();
        let mut w = vec![0.0; n + 1];
        let endpoint = if n % 2 == 0 {
            1.0 / ((n * n - 1) as f64)
        } else {
            1.0 / ((n * n) as f64)
        };
        w[0] = endpoint;
        w[n] = endpoint;
        for i in 1..n {
            let theta = PI * i as f64 / n as f64;
            let mut v = 1.0;
            let half = n / 2;
            for k in 1..=half {
                let b = if 2 * k == n { 1.0 } else { 2.0 };
                v -= b * (2.0 * k as f64 * theta).cos() / ((4 * k * k - 1) as f64);
            }
            w[i] = 2.0 * v / n as f64;
        }
        // Scale from [-1, 1] to [0, len].
        for wi in &mut w {
            *wi *= 0.5 * self.len;
        }
        w
    }

    /// Barycentric interpolation of nodal `values` at `x`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        debug_assert_eq!(values.len(), self.nodes.len());
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (&xj, &fj)) in self.nodes.iter().zip(values).enumerate() {
            let dx = x - xj;
            if dx.abs() < 1e-300 {
                return fj;
            }
            let c = self.bary_weight(j) / dx;
            num += c * fj;
            den += c;
        }
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn differentiates_polynomials_exactly() {
        let grid = Lobatto::new(8, 2.0);
        let d = grid.diff_matrix();
        let f: Vec<f64> = grid.nodes().iter().map(|&x| x.powi(3) - 2.0 * x).collect();
        for (i, &x) in grid.nodes().iter().enumerate() {
            let df: f64 = (0..f.len()).map(|j| d[(i, j)] * f[j]).sum();
            assert_relative_eq!(df, 3.0 * x * x - 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn second_derivative_of_sine() {
        let grid = Lobatto::new(48, 1.0);
        let d = grid.diff_matrix();
        let d2 = &d * &d;
        let f: Vec<f64> = grid.nodes().iter().map(|&x| (3.0 * x).sin()).collect();
        for (i, &x) in grid.nodes().iter().enumerate() {
            let val: f64 = (0..f.len()).map(|j| d2[(i, j)] * f[j]).sum();
            assert_relative_eq!(val, -9.0 * (3.0 * x).sin(), epsilon = 1e-8);
        }
    }

    #[test]
    fn quadrature_integrates_trig() {
        for degree in [16usize, 17, 40] {
            let grid = Lobatto::new(degree, PI);
            let w = grid.quad_weights();
            let total: f64 = grid
                .nodes()
                .iter()
                .zip(&w)
                .map(|(&x, &wi)| wi * x.sin())
                .sum();
            assert_relative_eq!(total, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolation_reproduces_smooth_values() {
        let grid = Lobatto::new(32, 1.5);
        let f: Vec<f64> = grid.nodes().iter().map(|&x| (2.0 * x).cos()).collect();
        for k in 0..50 {
            let x = 1.5 * k as f64 / 49.0;
            assert_relative_eq!(grid.interpolate(&f, x), (2.0 * x).cos(), epsilon = 1e-11);
        }
    }
}
