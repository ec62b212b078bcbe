//! Variable-coefficient nine-point elliptic solves.
//!
//! Linearising the Hessian determinant around an iterate gives an
//! anisotropic operator `L v = a_xx v_xx + a_yy v_yy + a_xy v_xy` with
//! homogeneous Dirichlet data. On tensor grids whose cell counts allow
//! repeated halving it is solved by a geometric V(1,1) multigrid with an
//! alternating zebra line-Gauss-Seidel smoother, coefficients rediscretised
//! on every level, and a dense direct bottom solve; other grids fall back to
//! a line-smoother preconditioned BiCGSTAB. Line (rather than point)
//! relaxation matters here: a grid graded along both axes has strongly
//! anisotropic cells in its far corners — aspect ratios grow like
//! `ratio^n` — and point smoothing stalls on modes that oscillate along the
//! weak axis while standard coarsening cannot represent them. All reductions
//! are sequential so repeated runs are bit-identical; only pointwise passes
//! are parallel.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;

use crate::solver::stencil::TensorOps;
use crate::{Error, Result};

/// Largest interior system the dense bottom solve accepts.
const MAX_DENSE: usize = 1100;

/// `L v = a_xx v_xx + a_yy v_yy + a_xy v_xy` with per-interior-node
/// coefficients, acting on full-size grid vectors (boundary rows are carried
/// along untouched and read as given data by the stencils).
#[derive(Debug, Clone)]
pub struct EllipticOp {
    ops: TensorOps,
    axx: Vec<f64>,
    ayy: Vec<f64>,
    axy: Vec<f64>,
}

impl EllipticOp {
    /// Wrap explicit coefficient arrays (interior nodes, row-major, x fastest).
    pub fn new(ops: TensorOps, axx: Vec<f64>, ayy: Vec<f64>, axy: Vec<f64>) -> Result<Self> {
        let n_int = (ops.nx() - 2) * (ops.ny() - 2);
        if axx.len() != n_int || ayy.len() != n_int || axy.len() != n_int {
            return Err(Error::invalid("coefficient arrays must cover the interior"));
        }
        Ok(EllipticOp { ops, axx, ayy, axy })
    }

    /// The linearisation of `det D²u` around the state `u`:
    /// `a_xx = u_yy`, `a_yy = u_xx`, `a_xy = −2 u_xy`.
    pub fn from_state(ops: TensorOps, u: &[f64]) -> Self {
        let (nx, ny) = (ops.nx(), ops.ny());
        let n_int = (nx - 2) * (ny - 2);
        let mut axx = vec![0.0; n_int];
        let mut ayy = vec![0.0; n_int];
        let mut axy = vec![0.0; n_int];
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let m = (j - 1) * (nx - 2) + (i - 1);
                let (uxx, uyy, uxy) = ops.hessian(u, i, j);
                axx[m] = uyy;
                ayy[m] = uxx;
                axy[m] = -2.0 * uxy;
            }
        }
        EllipticOp { ops, axx, ayy, axy }
    }

    /// The constant-coefficient Laplacian (used by the initial Poisson solve).
    pub fn laplacian(ops: TensorOps) -> Self {
        let n_int = (ops.nx() - 2) * (ops.ny() - 2);
        EllipticOp {
            ops,
            axx: vec![1.0; n_int],
            ayy: vec![1.0; n_int],
            axy: vec![0.0; n_int],
        }
    }

    /// Grid dimensions `(nx, ny)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.ops.nx(), self.ops.ny())
    }

    /// The underlying difference operators.
    pub fn ops(&self) -> &TensorOps {
        &self.ops
    }

    /// Interior node count.
    pub fn interior(&self) -> usize {
        (self.ops.nx() - 2) * (self.ops.ny() - 2)
    }

    #[inline]
    fn row_apply(&self, v: &[f64], j: usize, out_row: &mut [f64]) {
        let nx = self.ops.nx();
        for i in 1..nx - 1 {
            let m = (j - 1) * (nx - 2) + (i - 1);
            out_row[i] = self.axx[m] * self.ops.dxx(v, i, j)
                + self.ayy[m] * self.ops.dyy(v, i, j)
                + self.axy[m] * self.ops.dxy(v, i, j);
        }
        out_row[0] = 0.0;
        out_row[nx - 1] = 0.0;
    }

    /// `out = L v` (interior rows; boundary rows of `out` are zeroed).
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let (nx, ny) = self.shape();
        out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
            if j == 0 || j == ny - 1 {
                row.fill(0.0);
            } else {
                self.row_apply(v, j, row);
            }
        });
    }

    /// `out = b − L x` (interior rows; boundary rows zeroed).
    pub fn residual(&self, x: &[f64], b: &[f64], out: &mut [f64]) {
        let (nx, ny) = self.shape();
        out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
            if j == 0 || j == ny - 1 {
                row.fill(0.0);
            } else {
                self.row_apply(x, j, row);
                for i in 0..nx {
                    row[i] = b[j * nx + i] - row[i];
                }
            }
        });
    }

    /// Sup norm of `b − L x` over interior nodes.
    pub fn residual_sup(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut r = vec![0.0; x.len()];
        self.residual(x, b, &mut r);
        r.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    /// Solve one x-line (row `j`) exactly, all same-row couplings implicit.
    fn x_line(&self, x: &mut [f64], b: &[f64], j: usize) {
        let nx = self.ops.nx();
        let n = nx - 2;
        let wy2 = self.ops.ay.d2(j);
        let wy1 = self.ops.ay.d1(j);
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..nx - 1 {
            let m = (j - 1) * (nx - 2) + (i - 1);
            let wx2 = self.ops.ax.d2(i);
            let wx1 = self.ops.ax.d1(i);
            let k = j * nx + i;
            sub[i - 1] = self.axx[m] * wx2[0] + self.axy[m] * wx1[0] * wy1[1];
            diag[i - 1] =
                self.axx[m] * wx2[1] + self.ayy[m] * wy2[1] + self.axy[m] * wx1[1] * wy1[1];
            sup[i - 1] = self.axx[m] * wx2[2] + self.axy[m] * wx1[2] * wy1[1];
            let off_row = self.ayy[m] * (wy2[0] * x[k - nx] + wy2[2] * x[k + nx])
                + self.axy[m]
                    * (wy1[0]
                        * (wx1[0] * x[k - nx - 1] + wx1[1] * x[k - nx] + wx1[2] * x[k - nx + 1])
                        + wy1[2]
                            * (wx1[0] * x[k + nx - 1]
                                + wx1[1] * x[k + nx]
                                + wx1[2] * x[k + nx + 1]));
            rhs[i - 1] = b[k] - off_row;
        }
        rhs[0] -= sub[0] * x[j * nx];
        rhs[n - 1] -= sup[n - 1] * x[j * nx + nx - 1];
        if thomas(&mut sub, &mut diag, &mut sup, &mut rhs) {
            for i in 1..nx - 1 {
                x[j * nx + i] = rhs[i - 1];
            }
        }
    }

    /// Solve one y-line (column `i`) exactly, all same-column couplings
    /// implicit.
    fn y_line(&self, x: &mut [f64], b: &[f64], i: usize) {
        let (nx, ny) = self.shape();
        let n = ny - 2;
        let wx2 = self.ops.ax.d2(i);
        let wx1 = self.ops.ax.d1(i);
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for j in 1..ny - 1 {
            let m = (j - 1) * (nx - 2) + (i - 1);
            let wy2 = self.ops.ay.d2(j);
            let wy1 = self.ops.ay.d1(j);
            let k = j * nx + i;
            sub[j - 1] = self.ayy[m] * wy2[0] + self.axy[m] * wx1[1] * wy1[0];
            diag[j - 1] =
                self.axx[m] * wx2[1] + self.ayy[m] * wy2[1] + self.axy[m] * wx1[1] * wy1[1];
            sup[j - 1] = self.ayy[m] * wy2[2] + self.axy[m] * wx1[1] * wy1[2];
            let off_col = self.axx[m] * (wx2[0] * x[k - 1] + wx2[2] * x[k + 1])
                + self.axy[m]
                    * (wx1[0]
                        * (wy1[0] * x[k - nx - 1] + wy1[1] * x[k - 1] + wy1[2] * x[k + nx - 1])
                        + wx1[2]
                            * (wy1[0] * x[k - nx + 1]
                                + wy1[1] * x[k + 1]
                                + wy1[2] * x[k + nx + 1]));
            rhs[j - 1] = b[k] - off_col;
        }
        rhs[0] -= sub[0] * x[i];
        rhs[n - 1] -= sup[n - 1] * x[(ny - 1) * nx + i];
        if thomas(&mut sub, &mut diag, &mut sup, &mut rhs) {
            for j in 1..ny - 1 {
                x[j * nx + i] = rhs[j - 1];
            }
        }
    }

    /// One alternating zebra line-Gauss-Seidel sweep: even x-lines, odd
    /// x-lines, even y-lines, odd y-lines, each line solved exactly by the
    /// Thomas algorithm. A line whose tridiagonal factorisation breaks down
    /// is left unchanged (the Krylov wrapper still makes progress).
    pub fn line_sweep(&self, x: &mut [f64], b: &[f64]) {
        let (nx, ny) = self.shape();
        for parity in [0usize, 1] {
            let mut j = 2 - parity;
            while j < ny - 1 {
                self.x_line(x, b, j);
                j += 2;
            }
        }
        for parity in [0usize, 1] {
            let mut i = 2 - parity;
            while i < nx - 1 {
                self.y_line(x, b, i);
                i += 2;
            }
        }
    }

    /// Assemble the homogeneous-Dirichlet interior matrix (dense).
    fn assemble_dense(&self) -> DMatrix<f64> {
        let (nx, ny) = self.shape();
        let n = self.interior();
        let mut a = DMatrix::zeros(n, n);
        for j in 1..ny - 1 {
            let wy2 = self.ops.ay.d2(j);
            let wy1 = self.ops.ay.d1(j);
            for i in 1..nx - 1 {
                let wx2 = self.ops.ax.d2(i);
                let wx1 = self.ops.ax.d1(i);
                let m = (j - 1) * (nx - 2) + (i - 1);
                for dj in 0..3usize {
                    for di in 0..3usize {
                        let coeff = self.axx[m] * wx2[di] * ((dj == 1) as i32 as f64)
                            + self.ayy[m] * wy2[dj] * ((di == 1) as i32 as f64)
                            + self.axy[m] * wx1[di] * wy1[dj];
                        let (pi, pj) = (i + di - 1, j + dj - 1);
                        if pi == 0 || pi == nx - 1 || pj == 0 || pj == ny - 1 {
                            continue;
                        }
                        a[(m, (pj - 1) * (nx - 2) + (pi - 1))] += coeff;
                    }
                }
            }
        }
        a
    }
}

/// Geometric multigrid over a chain of rediscretised operators.
///
/// `levels[0]` is the finest operator; each subsequent level must live on the
/// grid obtained by dropping every other node along both axes. A chain of
/// length one degenerates into a plain dense direct solve.
pub struct Multigrid {
    levels: Vec<EllipticOp>,
    coarse_lu: LU<f64, Dyn, Dyn>,
}

impl Multigrid {
    /// Build the hierarchy and factor the coarsest level.
    pub fn new(levels: Vec<EllipticOp>) -> Result<Self> {
        let last = levels
            .last()
            .ok_or_else(|| Error::invalid("empty multigrid chain"))?;
        for w in levels.windows(2) {
            let (fine, coarse) = (w[0].shape(), w[1].shape());
            if coarse.0 != fine.0 / 2 + 1 || coarse.1 != fine.1 / 2 + 1 {
                return Err(Error::invalid("multigrid levels are not nested by halving"));
            }
        }
        if last.interior() > MAX_DENSE {
            return Err(Error::invalid(format!(
                "coarsest level has {} interior nodes (max {MAX_DENSE})",
                last.interior()
            )));
        }
        let dense = last.assemble_dense();
        let coarse_lu = dense.lu();
        if !coarse_lu.is_invertible() {
            return Err(Error::LinearSolve("coarse operator is singular".into()));
        }
        Ok(Multigrid { levels, coarse_lu })
    }

    /// Finest-level operator.
    pub fn fine(&self) -> &EllipticOp {
        &self.levels[0]
    }

    fn coarse_solve(&self, x: &mut [f64], b: &[f64]) -> Result<()> {
        let op = self.levels.last().unwrap();
        let (nx, ny) = op.shape();
        let mut rhs = DVector::zeros(op.interior());
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                rhs[(j - 1) * (nx - 2) + (i - 1)] = b[j * nx + i];
            }
        }
        let sol = self
            .coarse_lu
            .solve(&rhs)
            .ok_or_else(|| Error::LinearSolve("coarse solve failed".into()))?;
        x.fill(0.0);
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                x[j * nx + i] = sol[(j - 1) * (nx - 2) + (i - 1)];
            }
        }
        Ok(())
    }

    /// Restrict a fine residual to the next level by the adjoint of linear
    /// interpolation, normalised so constants map to constants.
    fn restrict(&self, level: usize, r: &[f64]) -> Vec<f64> {
        let fine = self.levels[level].ops();
        let coarse = self.levels[level + 1].ops();
        let (nxf, _) = self.levels[level].shape();
        let (nxc, nyc) = self.levels[level + 1].shape();
        let xf = fine.ax.coords();
        let yf = fine.ay.coords();
        // Axis weights toward coarse node I from fine nodes 2I−1, 2I, 2I+1.
        let axis_w = |cf: &[f64], i_c: usize| -> [f64; 3] {
            let i = 2 * i_c;
            [
                (cf[i - 1] - cf[i - 2]) / (cf[i] - cf[i - 2]),
                1.0,
                (cf[i + 2] - cf[i + 1]) / (cf[i + 2] - cf[i]),
            ]
        };
        let _ = coarse;
        let mut out = vec![0.0; nxc * nyc];
        for jc in 1..nyc - 1 {
            let wy = axis_w(yf, jc);
            for ic in 1..nxc - 1 {
                let wx = axis_w(xf, ic);
                let mut acc = 0.0;
                let mut tot = 0.0;
                for (dj, &vy) in wy.iter().enumerate() {
                    for (di, &vx) in wx.iter().enumerate() {
                        let (fi, fj) = (2 * ic + di - 1, 2 * jc + dj - 1);
                        acc += vx * vy * r[fj * nxf + fi];
                        tot += vx * vy;
                    }
                }
                out[jc * nxc + ic] = acc / tot;
            }
        }
        out
    }

    /// Interpolate a coarse correction to the fine grid (coordinate-weighted
    /// bilinear; fine boundary values stay zero).
    fn prolong(&self, level: usize, e: &[f64]) -> Vec<f64> {
        let fine = self.levels[level].ops();
        let (nxf, nyf) = self.levels[level].shape();
        let (nxc, _) = self.levels[level + 1].shape();
        let xf = fine.ax.coords();
        let yf = fine.ay.coords();
        let mut out = vec![0.0; nxf * nyf];
        for j in 1..nyf - 1 {
            let (jc, lj) = if j % 2 == 0 {
                (j / 2, 1.0)
            } else {
                (j / 2, (yf[j + 1] - yf[j]) / (yf[j + 1] - yf[j - 1]))
            };
            for i in 1..nxf - 1 {
                let (ic, li) = if i % 2 == 0 {
                    (i / 2, 1.0)
                } else {
                    (i / 2, (xf[i + 1] - xf[i]) / (xf[i + 1] - xf[i - 1]))
                };
                let c = |a: usize, b: usize| e[b * nxc + a];
                let v = if i % 2 == 0 && j % 2 == 0 {
                    c(ic, jc)
                } else if j % 2 == 0 {
                    li * c(ic, jc) + (1.0 - li) * c(ic + 1, jc)
                } else if i % 2 == 0 {
                    lj * c(ic, jc) + (1.0 - lj) * c(ic, jc + 1)
                } else {
                    lj * (li * c(ic, jc) + (1.0 - li) * c(ic + 1, jc))
                        + (1.0 - lj) * (li * c(ic, jc + 1) + (1.0 - li) * c(ic + 1, jc + 1))
                };
                out[j * nxf + i] = v;
            }
        }
        out
    }

    pub(crate) fn v_cycle(&self, level: usize, x: &mut [f64], b: &[f64]) -> Result<()> {
        if level + 1 == self.levels.len() {
            return self.coarse_solve(x, b);
        }
        let op = &self.levels[level];
        op.line_sweep(x, b);
        let mut r = vec![0.0; x.len()];
        op.residual(x, b, &mut r);
        let rc = self.restrict(level, &r);
        let mut ec = vec![0.0; rc.len()];
        self.v_cycle(level + 1, &mut ec, &rc)?;
        let ef = self.prolong(level, &ec);
        for (xv, ev) in x.iter_mut().zip(ef.iter()) {
            *xv += ev;
        }
        op.line_sweep(x, b);
        Ok(())
    }

    /// Solve `L x = b` from a zero guess to a relative sup-norm residual of
    /// `tol_rel`, returning `(x, achieved, cycles)`.
    pub fn solve(
        &self,
        b: &[f64],
        tol_rel: f64,
        max_cycles: usize,
    ) -> Result<(Vec<f64>, f64, usize)> {
        let op = self.fine();
        let bsup = b.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let mut x = vec![0.0; b.len()];
        if bsup == 0.0 {
            return Ok((x, 0.0, 0));
        }
        let mut rel = 1.0;
        for cycle in 1..=max_cycles {
            self.v_cycle(0, &mut x, b)?;
            rel = op.residual_sup(&x, b) / bsup;
            if rel <= tol_rel {
                return Ok((x, rel, cycle));
            }
        }
        Err(Error::LinearSolve(format!(
            "multigrid stalled at relative residual {rel:.3e} after {max_cycles} cycles"
        )))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Sequential on purpose: bit-identical runs matter more than speed here.
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place Thomas solve of a tridiagonal system; `rhs` becomes the solution.
/// Returns `false` (leaving `rhs` unspecified) if a pivot underflows.
fn thomas(sub: &mut [f64], diag: &mut [f64], sup: &mut [f64], rhs: &mut [f64]) -> bool {
    let n = diag.len();
    for i in 1..n {
        if diag[i - 1].abs() < 1e-300 {
            return false;
        }
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    if diag[n - 1].abs() < 1e-300 {
        return false;
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
    }
    true
}

/// Preconditioned BiCGSTAB for grids the multigrid chain cannot reach.
///
/// `m_inv` applies an approximate inverse (e.g. a couple of symmetric
/// Gauss-Seidel sweeps). Returns `(x, achieved relative sup residual,
/// iterations)`.
pub fn bicgstab(
    op: &EllipticOp,
    b: &[f64],
    x0: &[f64],
    m_inv: impl Fn(&[f64]) -> Vec<f64>,
    tol_rel: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let n = b.len();
    let bsup = b.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let mut x = x0.to_vec();
    if bsup == 0.0 {
        return Ok((vec![0.0; n], 0.0, 0));
    }
    let mut r = vec![0.0; n];
    op.residual(&x, b, &mut r);
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut t = vec![0.0; n];
    let sup = |z: &[f64]| z.iter().fold(0.0f64, |a, &w| a.max(w.abs()));
    for it in 1..=max_iters {
        let rho_new = dot(&r_hat, &r);
        if rho_new.abs() < 1e-300 {
            return Err(Error::LinearSolve("BiCGSTAB breakdown (rho)".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for k in 0..n {
            p[k] = r[k] + beta * (p[k] - omega * v[k]);
        }
        let p_hat = m_inv(&p);
        op.apply(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom.abs() < 1e-300 {
            return Err(Error::LinearSolve("BiCGSTAB breakdown (r̂·v)".into()));
        }
        alpha = rho_new / denom;
        let s: Vec<f64> = (0..n).map(|k| r[k] - alpha * v[k]).collect();
        if sup(&s) <= tol_rel * bsup {
            for k in 0..n {
                x[k] += alpha * p_hat[k];
            }
            let rel = op.residual_sup(&x, b) / bsup;
            if rel <= tol_rel {
                return Ok((x, rel, it));
            }
            op.residual(&x, b, &mut r);
            rho = rho_new;
            continue;
        }
        let s_hat = m_inv(&s);
        op.apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        if tt.abs() < 1e-300 {
            return Err(Error::LinearSolve("BiCGSTAB breakdown (t·t)".into()));
        }
        omega = dot(&t, &s) / tt;
        for k in 0..n {
            x[k] += alpha * p_hat[k] + omega * s_hat[k];
        }
        for k in 0..n {
            r[k] = s[k] - omega * t[k];
        }
        if sup(&r) <= tol_rel * bsup {
            let rel = op.residual_sup(&x, b) / bsup;
            if rel <= tol_rel {
                return Ok((x, rel, it));
            }
            op.residual(&x, b, &mut r);
        }
        rho = rho_new;
    }
    let rel = op.residual_sup(&x, b) / bsup;
    Err(Error::LinearSolve(format!(
        "BiCGSTAB stalled at relative residual {rel:.3e} after {max_iters} iterations"
    )))
}
