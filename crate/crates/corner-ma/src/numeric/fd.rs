//! Pointwise finite-difference stencils for closures. Used as independent
//! verification oracles against the spectral and symbolic code paths.

/// Central second derivative, `O(h²)`.
pub fn d2_central(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// Central second derivative, `O(h⁴)` five-point stencil.
pub fn d2_central4(f: &dyn Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h))
        / (12.0 * h * h)
}

/// Five-point Laplacian of a plane function, `O(h²)`.
pub fn laplacian_2d(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, h: f64) -> f64 {
    (f(x + h, y) + f(x - h, y) + f(x, y + h) + f(x, y - h) - 4.0 * f(x, y)) / (h * h)
}

/// Full 2×2 Hessian of a plane function by central differences, `O(h²)`.
pub fn hessian_2d(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, h: f64) -> [[f64; 2]; 2] {
    let fxx = (f(x + h, y) - 2.0 * f(x, y) + f(x - h, y)) / (h * h);
    let fyy = (f(x, y + h) - 2.0 * f(x, y) + f(x, y - h)) / (h * h);
    let fxy =
        (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h);
    [[fxx, fxy], [fxy, fyy]]
}

/// Hessian determinant of a plane function by central differences.
pub fn det_hessian_2d(f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, h: f64) -> f64 {
    let hess = hessian_2d(f, x, y, h);
    hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0]
}
