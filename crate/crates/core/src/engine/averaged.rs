//! The averaged convection fields of the two-scale machinery.
//!
//! With X the characteristic flow of L and 𝒜_i the two-scale coefficients
//! of the slow convection field,
//!
//! α_0(t,τ,x) = (∇_x X(τ))⁻¹ (𝒜_0(t,τ,X(τ)) − ∂_t X(τ)),
//! α_i(t,τ,x) = (∇_x X(τ))⁻¹ 𝒜_i(t,τ,X(τ)) for i ≥ 1,
//! ã_i(t,x)   = (1/θ) ∫₀^θ α_i(t,τ,x) dτ,
//! a_i(t,τ,x) = (∇_x X(−τ))⁻¹ (ã_i(t,X(−τ)) − [i=0] ∂_t X(−τ)),
//!
//! all flows anchored at σ = 0. ã_0 drives the homogenized transport of
//! every V_k; the a_i enter the profile equations.

use std::sync::Arc;

use crate::flow::{solve_linear, FastField, FlowMap};
use crate::numerics::{Coord, TensorGrid, MAX_DIM};
use crate::Result;

/// The list of two-scale coefficients 𝒜_i(t, τ, x) of the convection
/// field, each θ-periodic in τ and divergence-free in x.
#[derive(Clone)]
pub struct OscillatingExpansion {
    coeffs: Vec<Arc<dyn FastField>>,
}

impl OscillatingExpansion {
    pub fn new(coeffs: Vec<Arc<dyn FastField>>) -> Self {
        Self { coeffs }
    }

    pub fn orders(&self) -> usize {
        self.coeffs.len()
    }

    /// 𝒜_i(t, τ, x); identically zero beyond the supplied orders.
    pub fn eval(&self, i: usize, t: f64, tau: f64, x: &Coord) -> Coord {
        match self.coeffs.get(i) {
            Some(f) => f.eval(t, tau, x),
            None => [0.0; MAX_DIM],
        }
    }

    pub fn coeff(&self, i: usize) -> Option<&Arc<dyn FastField>> {
        self.coeffs.get(i)
    }

    /// The ε-assembled field Σ ε^i 𝒜_i(t, τ, x).
    pub fn assemble(&self, eps: f64, t: f64, tau: f64, x: &Coord, dims: usize) -> Coord {
        let mut acc = [0.0; MAX_DIM];
        let mut scale = 1.0;
        for f in &self.coeffs {
            let v = f.eval(t, tau, x);
            for d in 0..dims {
                acc[d] += scale * v[d];
            }
            scale *= eps;
        }
        acc
    }
}

/// Everything the averaged-field formulas need: the grid (for τ nodes),
/// the flow of L, and the coefficient expansion.
#[derive(Clone)]
pub struct EngineContext {
    pub grid: Arc<TensorGrid>,
    pub flow: Arc<FlowMap>,
    pub expansion: OscillatingExpansion,
}

impl EngineContext {
    /// α_i(t, τ, x): exact formula evaluation; the Jacobian is applied
    /// through a linear solve with a determinant guard, never inverted.
    pub fn alpha(&self, i: usize, t: f64, tau: f64, x: &Coord) -> Result<Coord> {
        let dims = self.flow.dims();
        let (y, jac) = self.flow.advance_with_jacobian(tau, x, t, 0.0)?;
        let mut rhs = self.expansion.eval(i, t, tau, &y);
        if i == 0 {
            let dtx = self.flow.dt(tau, x, t, 0.0)?;
            for d in 0..dims {
                rhs[d] -= dtx[d];
            }
        }
        solve_linear(&jac, &rhs, dims)
    }

    /// α_0..α_{orders−1} at every τ node of the grid, sharing one flow
    /// advance per node. `out` is indexed [τ][order].
    pub fn alpha_table(&self, orders: usize, t: f64, x: &Coord, out: &mut Vec<Vec<Coord>>) -> Result<()> {
        let dims = self.flow.dims();
        let nt = self.grid.tau_points();
        out.clear();
        out.reserve(nt);
        for j in 0..nt {
            let tau = self.grid.tau_node(j);
            let (y, jac) = self.flow.advance_with_jacobian(tau, x, t, 0.0)?;
            let dtx = self.flow.dt(tau, x, t, 0.0)?;
            let mut row = Vec::with_capacity(orders);
            for i in 0..orders {
                let mut rhs = self.expansion.eval(i, t, tau, &y);
                if i == 0 {
                    for d in 0..dims {
                        rhs[d] -= dtx[d];
                    }
                }
                row.push(solve_linear(&jac, &rhs, dims)?);
            }
            out.push(row);
        }
        Ok(())
    }

    /// ã_i(t, x) = (1/θ) ∫₀^θ α_i dτ by the periodic rule on the grid's
    /// τ nodes.
    pub fn a_tilde(&self, i: usize, t: f64, x: &Coord) -> Result<Coord> {
        let dims = self.flow.dims();
        let nt = self.grid.tau_points();
        let mut acc = [0.0; MAX_DIM];
        for j in 0..nt {
            let a = self.alpha(i, t, self.grid.tau_node(j), x)?;
            for d in 0..dims {
                acc[d] += a[d];
            }
        }
        for v in acc.iter_mut().take(dims) {
            *v /= nt as f64;
        }
        Ok(acc)
    }

    /// a_i(t, τ, x): the σ-average of (∇X(−τ))⁻¹ α_i(t, σ, X(−τ)) — the
    /// σ-dependence sits entirely in α_i, so the average collapses onto
    /// ã_i at the pulled-back point, with the ∂_t X correction at i = 0.
    pub fn a_field(&self, i: usize, t: f64, tau: f64, x: &Coord) -> Result<Coord> {
        let dims = self.flow.dims();
        let (y, jac) = self.flow.advance_with_jacobian(-tau, x, t, 0.0)?;
        let mut rhs = self.a_tilde(i, t, &y)?;
        if i == 0 {
            let dtx = self.flow.dt(-tau, x, t, 0.0)?;
            for d in 0..dims {
                rhs[d] -= dtx[d];
            }
        }
        solve_linear(&jac, &rhs, dims)
    }
}

/// Max sampled divergence of an evaluator field, with the offending sample
/// index; central differences with a small step. Used to enforce the
/// divergence-free requirement on supplied coefficients.
pub fn divergence_residual(
    field: &dyn FastField,
    t: f64,
    tau: f64,
    samples: &[Coord],
    h: f64,
) -> (f64, usize) {
    let dims = field.dims();
    let mut worst = 0.0f64;
    let mut at = 0usize;
    for (s, x) in samples.iter().enumerate() {
        let mut div = 0.0;
        for d in 0..dims {
            let mut xp = *x;
            let mut xm = *x;
            xp[d] += h;
            xm[d] -= h;
            div += (field.eval(t, tau, &xp)[d] - field.eval(t, tau, &xm)[d]) / (2.0 * h);
        }
        if div.abs() > worst {
            worst = div.abs();
            at = s;
        }
    }
    (worst, at)
}
