//! Hopf bifurcation toolkit for damped, delayed semilinear wave equations
//!
//! ```text
//! u_tt(t,x) - a(x,λ)² u_xx(t,x) = b(x, λ, u(t,x), u(t-τ,x), u_t(t,x), u_x(t,x))
//! u(t,0) = u_x(t,1) = 0
//! ```
//!
//! The pipeline is [`model`] (coefficients and characteristic kernels),
//! [`eigen`] (critical delay, eigenfunctions, transversality), [`direction`]
//! (curvature of the delay along the branch), [`periodic`] (harmonic-balance
//! continuation of the periodic branch) and [`timedomain`] (direct simulation).

pub mod direction;
pub mod eigen;
pub mod exprlang;
pub mod model;
pub mod periodic;
pub mod quad;
pub mod timedomain;

pub use num_complex::Complex64 as C64;
