//! Small numerical building blocks shared across the crate: Chebyshev
//! collocation, quadrature rules, least-squares fits, and finite-difference
//! stencils for verification.

pub mod chebyshev;
pub mod fd;
pub mod fit;
pub mod quad;
