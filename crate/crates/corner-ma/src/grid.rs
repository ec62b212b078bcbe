//! One-dimensional graded grids, tensor-product scalar fields, and bicubic
//! interpolation.

use crate::{Error, Result};

/// Strictly increasing 1-D grid on `[0, len]`.
///
/// `graded` grids use geometrically growing cell sizes away from the origin,
/// which concentrates resolution at the corner under study.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d {
    coords: Vec<f64>,
}

impl Grid1d {
    pub fn uniform(len: f64, n: usize) -> Result<Self> {
        Self::graded(len, n, 1.0)
    }

    /// Geometric grading: consecutive cell sizes grow by `ratio ≥ 1`, smallest
    /// cell at the origin. `ratio = 1` gives a uniform grid.
    pub fn graded(len: f64, n: usize, ratio: f64) -> Result<Self> {
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::geometry("grid length must be positive"));
        }
        if n < 2 {
            return Err(Error::geometry("grid needs at least 2 nodes"));
        }
        if !(1.0..=1.05).contains(&ratio) {
            return Err(Error::geometry(format!(
                "grading ratio {ratio} outside [1, 1.05]"
            )));
        }
        let cells = n - 1;
        let mut coords = Vec::with_capacity(n);
        if ratio == 1.0 {
            let h = len / cells as f64;
            coords.extend((0..n).map(|i| i as f64 * h));
        } else {
            // First cell h0 with h0 * (ratio^cells - 1)/(ratio - 1) = len.
            let h0 = len * (ratio - 1.0) / (ratio.powi(cells as i32) - 1.0);
            let mut x = 0.0;
            let mut h = h0;
            coords.push(0.0);
            for _ in 0..cells {
                x += h;
                coords.push(x);
                h *= ratio;
            }
        }
        *coords.last_mut().unwrap() = len;
        Ok(Grid1d { coords })
    }

    pub fn from_coords(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 || coords.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::geometry("grid coordinates must strictly increase"));
        }
        Ok(Grid1d { coords })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn len(&self) -> f64 {
        *self.coords.last().unwrap()
    }

    pub fn min_spacing(&self) -> f64 {
        self.coords
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Every other node, for multigrid coarsening. Requires an even cell count.
    pub fn coarsen(&self) -> Option<Grid1d> {
        let cells = self.coords.len() - 1;
        if cells % 2 != 0 || cells < 4 {
            return None;
        }
        Some(Grid1d {
            coords: self.coords.iter().step_by(2).copied().collect(),
        })
    }

    /// Index of the cell containing `x` (clamped to valid cells).
    fn cell_of(&self, x: f64) -> usize {
        match self.coords.binary_search_by(|c| c.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.coords.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.coords.len() - 2),
        }
    }
}

/// Scalar samples on a tensor-product grid, row-major with `x` fastest.
#[derive(Debug, Clone)]
pub struct CartesianField {
    xs: Grid1d,
    ys: Grid1d,
    values: Vec<f64>,
}

/// Slack (relative to the grid extent) allowed when a query point falls
/// marginally outside the hull due to roundoff in coordinate transforms.
const HULL_SLACK: f64 = 1e-10;

impl CartesianField {
    pub fn new(xs: Grid1d, ys: Grid1d, values: Vec<f64>) -> Result<Self> {
        if values.len() != xs.n() * ys.n() {
            return Err(Error::invalid("field values do not match grid size"));
        }
        Ok(CartesianField { xs, ys, values })
    }

    pub fn from_fn(xs: Grid1d, ys: Grid1d, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(xs.n() * ys.n());
        for &y in ys.coords() {
            for &x in xs.coords() {
                values.push(f(x, y));
            }
        }
        CartesianField { xs, ys, values }
    }

    pub fn xs(&self) -> &Grid1d {
        &self.xs
    }

    pub fn ys(&self) -> &Grid1d {
        &self.ys
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.xs.n() + ix]
    }

    /// Bicubic (tensor 4-point Lagrange) interpolation. Points may lie up to a
    /// tiny slack outside the hull; anything further is a coverage error.
    pub fn interp_bicubic(&self, x: f64, y: f64) -> Result<f64> {
        let sx = HULL_SLACK * self.xs.len();
        let sy = HULL_SLACK * self.ys.len();
        if x < self.xs.coords()[0] - sx
            || x > self.xs.len() + sx
            || y < self.ys.coords()[0] - sy
            || y > self.ys.len() + sy
        {
            return Err(Error::InsufficientCoverage(format!(
                "point ({x:.6}, {y:.6}) outside sampled hull"
            )));
        }
        let x = x.clamp(self.xs.coords()[0], self.xs.len());
        let y = y.clamp(self.ys.coords()[0], self.ys.len());
        let ix0 = self.xs.cell_of(x).saturating_sub(1).min(self.xs.n() - 4);
        let iy0 = self.ys.cell_of(y).saturating_sub(1).min(self.ys.n() - 4);
        let xn = &self.xs.coords()[ix0..ix0 + 4];
        let yn = &self.ys.coords()[iy0..iy0 + 4];
        let wx = lagrange4_weights(xn, x);
        let wy = lagrange4_weights(yn, y);
        let mut total = 0.0;
        for (jy, &wyj) in wy.iter().enumerate() {
            let row = (iy0 + jy) * self.xs.n() + ix0;
            let vals = &self.values[row..row + 4];
            let mut s = 0.0;
            for (jx, &wxj) in wx.iter().enumerate() {
                s += wxj * vals[jx];
            }
            total += wyj * s;
        }
        Ok(total)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn lagrange4_weights(nodes: &[f64], x: f64) -> [f64; 4] {
    let mut w = [0.0; 4];
    for i in 0..4 {
        let mut p = 1.0;
        for j in 0..4 {
            if i != j {
                p *= (x - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
        w[i] = p;
    }
    w
}
