//! Nonuniform three-point difference stencils on tensor-product grids.
//!
//! Each axis precomputes per-node first- and second-difference weights that
//! are exact on quadratics regardless of the local mesh ratio; the cross
//! derivative is the tensor product of the two first-difference stencils, so
//! it is likewise exact on quadratics. These are the building blocks for the
//! nine-point Hessian-determinant discretisation.

use crate::grid::Grid1d;

/// One grid axis with difference weights at every interior node.
#[derive(Debug, Clone)]
pub struct Axis {
    coords: Vec<f64>,
    d1: Vec<[f64; 3]>,
    d2: Vec<[f64; 3]>,
}

impl Axis {
    /// Precompute weights for all interior nodes of `grid`.
    pub fn new(grid: &Grid1d) -> Self {
        let coords = grid.coords().to_vec();
        let n = coords.len();
        let mut d1 = Vec::with_capacity(n.saturating_sub(2));
        let mut d2 = Vec::with_capacity(n.saturating_sub(2));
        for i in 1..n.saturating_sub(1) {
            let hm = coords[i] - coords[i - 1];
            let hp = coords[i + 1] - coords[i];
            d1.push([
                -hp / (hm * (hm + hp)),
                (hp - hm) / (hm * hp),
                hm / (hp * (hm + hp)),
            ]);
            d2.push([
                2.0 / (hm * (hm + hp)),
                -2.0 / (hm * hp),
                2.0 / (hp * (hm + hp)),
            ]);
        }
        Axis { coords, d1, d2 }
    }

    /// Number of nodes on the axis.
    pub fn n(&self) -> usize {
        self.coords.len()
    }

    /// Node coordinates.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// First-difference weights `[w₋, w₀, w₊]` at interior node `i`.
    #[inline]
    pub fn d1(&self, i: usize) -> [f64; 3] {
        self.d1[i - 1]
    }

    /// Second-difference weights `[w₋, w₀, w₊]` at interior node `i`.
    #[inline]
    pub fn d2(&self, i: usize) -> [f64; 3] {
        self.d2[i - 1]
    }
}

/// Paired axes with the derived two-dimensional difference operators.
///
/// Grid functions are stored row-major with `x` fastest, matching
/// [`crate::grid::CartesianField`]: the value at `(i, j)` lives at index
/// `j * nx + i`.
#[derive(Debug, Clone)]
pub struct TensorOps {
    /// The x axis.
    pub ax: Axis,
    /// The y axis.
    pub ay: Axis,
}

impl TensorOps {
    /// Build the operator pair for a tensor-product grid.
    pub fn new(xs: &Grid1d, ys: &Grid1d) -> Self {
        TensorOps {
            ax: Axis::new(xs),
            ay: Axis::new(ys),
        }
    }

    /// Nodes along x.
    pub fn nx(&self) -> usize {
        self.ax.n()
    }

    /// Nodes along y.
    pub fn ny(&self) -> usize {
        self.ay.n()
    }

    /// `∂²u/∂x²` at interior node `(i, j)`.
    #[inline]
    pub fn dxx(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let nx = self.nx();
        let w = self.ax.d2(i);
        let k = j * nx + i;
        w[0] * u[k - 1] + w[1] * u[k] + w[2] * u[k + 1]
    }

    /// `∂²u/∂y²` at interior node `(i, j)`.
    #[inline]
    pub fn dyy(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let nx = self.nx();
        let w = self.ay.d2(j);
        let k = j * nx + i;
        w[0] * u[k - nx] + w[1] * u[k] + w[2] * u[k + nx]
    }

    /// `∂²u/∂x∂y` at interior node `(i, j)` (nine-point tensor stencil).
    #[inline]
    pub fn dxy(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let nx = self.nx();
        let wx = self.ax.d1(i);
        let wy = self.ay.d1(j);
        let mut acc = 0.0;
        for (dj, &vy) in wy.iter().enumerate() {
            let row = (j + dj - 1) * nx + i;
            acc += vy * (wx[0] * u[row - 1] + wx[1] * u[row] + wx[2] * u[row + 1]);
        }
        acc
    }

    /// All three second derivatives `(u_xx, u_yy, u_xy)` at `(i, j)`.
    #[inline]
    pub fn hessian(&self, u: &[f64], i: usize, j: usize) -> (f64, f64, f64) {
        (self.dxx(u, i, j), self.dyy(u, i, j), self.dxy(u, i, j))
    }
}
