//! Two-scale expansion engine for singularly perturbed convection equations
//!
//! Equations of the form
//!
//! ∂_t u + A(t,x)·∇u + (1/ε) L(t, t/ε, x)·∇u = 0
//!
//! develop O(1/ε) oscillations that force a direct solver onto an
//! ε-proportional time step. This crate reconstructs the profile expansion
//! u_ε ≈ Σ_k ε^k U_k(t, t/ε, x) instead: each U_k splits into a slow part
//! V_k transported by an averaged field and an explicit oscillating
//! corrector W_k, and the whole expansion is built once, independently of ε.
//!
//! Layout:
//! * [`numerics`] — tensor grids, fields, cubic-spline interpolation,
//!   finite-difference gradients, periodic quadrature, norms
//! * [`flow`] — the characteristic flow of the fast field, its Jacobian
//!   and time derivative
//! * [`engine`] — averaged fields, the W/R corrector recursion, the
//!   homogenized transport solves and expansion assembly
//! * [`reference`] — the ε-resolving semi-Lagrangian solver used as ground
//!   truth
//! * [`models`] — the beam, guiding-center and finite-Larmor-radius
//!   presets with closed-form flows and averaged operators
//! * [`harness`] — ε-sweeps, slope fits, invariant suites and CSV reports

pub mod engine;
pub mod error;
pub mod flow;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod reference;

pub use error::{CoreError, Result};
pub use numerics::{
    cumquad_tau, gradient, interpolate, norm, quad_tau, AxisSpec, Coord, Matrix, NormKind,
    ScalarField, SplineInterp, TensorGrid, VectorField, MAX_DIM,
};
