//! The remainder fields R_k, the raw composition form of the corrector
//! integral, and the profile-equation residual diagnostic.
//!
//! The production W_k builder (in `state`) evaluates the algebraically
//! reduced integrand in which every flow composition has been cancelled;
//! the evaluators here keep the compositions explicit — fields are
//! materialized on the grid, gradients taken there, and the pullbacks
//! X(±τ; x, t; 0) applied by interpolation. They serve as the independent
//! second route in the dual-formula tests and as diagnostics.

use std::sync::Arc;

use rayon::prelude::*;

use super::state::ExpansionState;
use super::taufield::TauFamily;
use crate::numerics::quad::cumquad_tau_unchecked;
use crate::numerics::{gradient, ScalarField, SplineInterp};
use crate::{CoreError, Result};

/// Slow-time derivative of the W_k slices at checkpoint m by checkpoint
/// differences (2nd order; one-sided at t = 0 and t = T).
fn dt_w_slices(state: &ExpansionState, k: usize, m: usize) -> Result<Vec<ScalarField>> {
    let times = state.times();
    let last = times.len() - 1;
    if times.len() < 3 {
        return Err(CoreError::config("time derivative needs at least 3 checkpoints".into()));
    }
    let dt = times[1] - times[0];
    let (idx, wgt) = if m == 0 {
        ([0, 1, 2], [-3.0, 4.0, -1.0])
    } else if m == last {
        ([last - 2, last - 1, last], [1.0, -4.0, 3.0])
    } else {
        ([m - 1, m, m + 1], [-1.0, 0.0, 1.0])
    };
    let grid = state.context().grid.clone();
    let nt = grid.tau_points();
    let fams = [state.w_family(k, idx[0])?, state.w_family(k, idx[1])?, state.w_family(k, idx[2])?];
    let mut out = Vec::with_capacity(nt);
    for j in 0..nt {
        let mut vals = vec![0.0f64; grid.len()];
        for (f, w) in fams.iter().zip(wgt) {
            if w == 0.0 {
                continue;
            }
            for (o, v) in vals.iter_mut().zip(f.slice(j).values()) {
                *o += w * v;
            }
        }
        let inv = 1.0 / (2.0 * dt);
        vals.iter_mut().for_each(|v| *v *= inv);
        out.push(ScalarField::new(Arc::clone(&grid), vals)?);
    }
    Ok(out)
}

/// R_k(t_m, τ, x): the τ-average defect
///
/// R_k = [∂_tW_k + Σ_i ã_i·∇W_{k−i}](t, τ, X(−τ;x,t;0))
///       − (1/θ)∫ [∂_tW_k + Σ_i α_i·∇W_{k−i}](t, σ, X(−τ;x,t;0)) dσ,
///
/// with the convention R_0 = 0. The bracketed quantities are materialized
/// as grid fields in the pulled-back variable and composed with the flow
/// by interpolation.
pub fn compute_r(state: &ExpansionState, k: usize, m: usize) -> Result<TauFamily> {
    let ctx = state.context();
    let grid = ctx.grid.clone();
    if k == 0 {
        return Ok(TauFamily::zeros(grid));
    }
    if k > state.order() {
        return Err(CoreError::Sequencing(format!(
            "R_{k} needs the state built through order {k}"
        )));
    }
    let nt = grid.tau_points();
    let dims = grid.dims();
    let t = state.times()[m];

    let dtwk = dt_w_slices(state, k, m)?;
    // Slice gradients of W_{k−i} for i = 0..k−1 (W_0 drops out).
    let mut grads: Vec<(usize, Vec<crate::numerics::VectorField>)> = Vec::new();
    for i in 0..k {
        let fam = state.w_family(k - i, m)?;
        grads.push((i, (0..nt).map(|j| gradient(fam.slice(j))).collect()));
    }

    // P_j(z) = ∂_tW_k(τ_j, z) + Σ_i ã_i(z)·∇W_{k−i}(τ_j, z)
    let mut p_fields = Vec::with_capacity(nt);
    for j in 0..nt {
        let vals: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|flat| {
                let mut s = dtwk[j].at(flat);
                for (i, g) in &grads {
                    let a = state.a_tilde_field(*i, m).at(flat);
                    let gv = g[j].at(flat);
                    for d in 0..dims {
                        s += a[d] * gv[d];
                    }
                }
                s
            })
            .collect();
        p_fields.push(ScalarField::new(Arc::clone(&grid), vals)?);
    }

    // Mn(z) = (1/θ)∫ [∂_tW_k + Σ_i α_i·∇W_{k−i}](σ, z) dσ
    let mn_vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(Vec::new, |table, flat| -> Result<f64> {
            let x = grid.node(flat);
            ctx.alpha_table(k + 1, t, &x, table)?;
            let mut acc = 0.0;
            for j in 0..nt {
                let mut s = dtwk[j].at(flat);
                for (i, g) in &grads {
                    let a = &table[j][*i];
                    let gv = g[j].at(flat);
                    for d in 0..dims {
                        s += a[d] * gv[d];
                    }
                }
                acc += s;
            }
            Ok(acc / nt as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let mn = ScalarField::new(Arc::clone(&grid), mn_vals)?;
    let mn_spl = SplineInterp::new(&mn);
    let p_spl: Vec<SplineInterp> = p_fields.iter().map(SplineInterp::new).collect();

    let mut slices = Vec::with_capacity(nt);
    for j in 0..nt {
        let tau = grid.tau_node(j);
        let vals: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|flat| -> Result<f64> {
                let x = grid.node(flat);
                let y = ctx.flow.advance(-tau, &x, t, 0.0)?;
                Ok(p_spl[j].eval(&y) - mn_spl.eval(&y))
            })
            .collect::<Result<Vec<_>>>()?;
        slices.push(ScalarField::new(Arc::clone(&grid), vals)?);
    }
    Ok(TauFamily::new(grid, slices))
}

/// W_k at checkpoint m through the raw composition route:
///
/// W_k(τ, x) = ∫₀^τ ( Σ_i (a_i − 𝒜_i)·∇U_{k−1−i} − R_{k−1} )(t, σ, X(σ;x,t;0)) dσ,
///
/// with ∇U taken on the grid first and interpolated at the composed point.
/// This is the independent cross-check for the production builder.
pub fn compute_w_composed(state: &ExpansionState, k: usize, m: usize) -> Result<TauFamily> {
    if k == 0 {
        return Ok(TauFamily::zeros(state.context().grid.clone()));
    }
    let ctx = state.context();
    let grid = ctx.grid.clone();
    let nt = grid.tau_points();
    let dims = grid.dims();
    let t = state.times()[m];
    let h_tau = grid.tau_spacing();

    // Per τ node σ_j and per lower order: splined gradient components of
    // the reconstructed U slices.
    let mut grad_u: Vec<Vec<Vec<SplineInterp>>> = Vec::with_capacity(k);
    for i in 0..k {
        let ord = k - 1 - i;
        let mut per_tau = Vec::with_capacity(nt);
        for j in 0..nt {
            let u = state.reconstruct_slice(ord, m, grid.tau_node(j))?;
            let g = gradient(&u);
            per_tau.push((0..dims).map(|d| SplineInterp::new(g.component(d))).collect::<Vec<_>>());
        }
        grad_u.push(per_tau);
    }
    let r_prev = compute_r(state, k - 1, m)?;
    let r_spl: Vec<SplineInterp> = r_prev.slices().iter().map(SplineInterp::new).collect();

    let results: Vec<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || vec![0.0f64; nt],
            |integrand, flat| -> Result<Vec<f64>> {
                let x = grid.node(flat);
                for j in 0..nt {
                    let sigma = grid.tau_node(j);
                    let z = ctx.flow.advance(sigma, &x, t, 0.0)?;
                    let mut s = 0.0;
                    for (i, per_tau) in grad_u.iter().enumerate() {
                        let a = ctx.a_field(i, t, sigma, &z)?;
                        let cal_a = ctx.expansion.eval(i, t, sigma, &z);
                        for d in 0..dims {
                            s += (a[d] - cal_a[d]) * per_tau[j][d].eval(&z);
                        }
                    }
                    s -= r_spl[j].eval(&z);
                    integrand[j] = s;
                }
                Ok(cumquad_tau_unchecked(integrand, h_tau))
            },
        )
        .collect::<Result<Vec<_>>>()?;

    let mut slices = Vec::with_capacity(nt);
    for j in 0..nt {
        let vals: Vec<f64> = results.iter().map(|col| col[j]).collect();
        slices.push(ScalarField::new(Arc::clone(&grid), vals)?);
    }
    Ok(TauFamily::new(grid, slices))
}

/// Max-norm residual of the profile equation
///
/// ∂_t U_k + a_0·∇U_k = R_k − Σ_{i=1}^k a_i·∇U_{k−i}
///
/// over a sample of interior checkpoints, τ nodes and grid nodes.
/// Diagnostic only; everything is reconstructed by composition, so the
/// residual carries the full discretization error of every stage.
pub fn residual_uk(
    state: &ExpansionState,
    k: usize,
    checkpoints: &[usize],
    tau_stride: usize,
    node_stride: usize,
) -> Result<f64> {
    let ctx = state.context();
    let grid = ctx.grid.clone();
    let nt = grid.tau_points();
    let dims = grid.dims();
    let times = state.times();
    if times.len() < 3 {
        return Err(CoreError::config("residual needs at least 3 checkpoints".into()));
    }
    let dt = times[1] - times[0];
    let mut worst = 0.0f64;

    for &m in checkpoints {
        if m == 0 || m == times.len() - 1 {
            return Err(CoreError::invalid(
                "residual checkpoints must be interior (centered time difference)".to_string(),
            ));
        }
        let t = times[m];
        let r_fam = compute_r(state, k, m)?;
        for j in (0..nt).step_by(tau_stride.max(1)) {
            let tau = grid.tau_node(j);
            let u_prev = state.reconstruct_slice(k, m - 1, tau)?;
            let u_here = state.reconstruct_slice(k, m, tau)?;
            let u_next = state.reconstruct_slice(k, m + 1, tau)?;
            let du = gradient(&u_here);
            let lower: Vec<crate::numerics::VectorField> = (1..=k)
                .map(|i| Ok(gradient(&state.reconstruct_slice(k - i, m, tau)?)))
                .collect::<Result<Vec<_>>>()?;

            let local: Vec<f64> = (0..grid.len())
                .into_par_iter()
                .step_by(node_stride.max(1))
                .map(|flat| -> Result<f64> {
                    let x = grid.node(flat);
                    let mut res = (u_next.at(flat) - u_prev.at(flat)) / (2.0 * dt);
                    let a0 = ctx.a_field(0, t, tau, &x)?;
                    let g = du.at(flat);
                    for d in 0..dims {
                        res += a0[d] * g[d];
                    }
                    res -= r_fam.slice(j).at(flat);
                    for (i, gl) in lower.iter().enumerate() {
                        let ai = ctx.a_field(i + 1, t, tau, &x)?;
                        let gv = gl.at(flat);
                        for d in 0..dims {
                            res += ai[d] * gv[d];
                        }
                    }
                    Ok(res.abs())
                })
                .collect::<Result<Vec<_>>>()?;
            worst = local.iter().fold(worst, |a, &b| a.max(b));
        }
    }
    Ok(worst)
}
