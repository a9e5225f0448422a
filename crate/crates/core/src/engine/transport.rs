//! Backward semi-Lagrangian solver for the non-stiff transport equations
//! ∂_t V + b(t,x)·∇V = S(t,x). CFL-free: each node traces the
//! characteristic of b back one step with a 2-stage Runge–Kutta, cubic-
//! spline-interpolates the previous slice at the foot, and accumulates the
//! source along the characteristic with the midpoint rule.

use rayon::prelude::*;

use crate::numerics::{ScalarField, SplineInterp, VectorField, MAX_DIM};
use crate::{CoreError, Result};

/// Sampled divergence of a vector field on its grid (4th-order stencils),
/// as (max |∇·b|, flat node index where it is attained).
pub fn sampled_divergence(b: &VectorField) -> (f64, usize) {
    let dims = b.grid().dims();
    let mut div = vec![0.0f64; b.grid().len()];
    for d in 0..dims {
        let g = crate::numerics::gradient(b.component(d));
        for (i, v) in g.component(d).values().iter().enumerate() {
            div[i] += v;
        }
    }
    let mut worst = 0.0;
    let mut at = 0;
    for (i, v) in div.iter().enumerate() {
        if v.abs() > worst {
            worst = v.abs();
            at = i;
        }
    }
    (worst, at)
}

/// March init forward through `times` (uniform checkpoints), advected by
/// the per-checkpoint fields `b`, with optional per-checkpoint source
/// fields. Returns the solution at every checkpoint.
pub fn solve_transport(
    b: &[VectorField],
    source: Option<&[ScalarField]>,
    init: &ScalarField,
    times: &[f64],
) -> Result<Vec<ScalarField>> {
    if times.len() < 2 {
        return Err(CoreError::config(format!(
            "transport needs at least 2 checkpoints, got {}",
            times.len()
        )));
    }
    if b.len() != times.len() {
        return Err(CoreError::invalid(format!(
            "{} advection fields for {} checkpoints",
            b.len(),
            times.len()
        )));
    }
    if let Some(s) = source {
        if s.len() != times.len() {
            return Err(CoreError::invalid(format!(
                "{} source fields for {} checkpoints",
                s.len(),
                times.len()
            )));
        }
    }
    let grid = init.grid_arc();
    let dims = grid.dims();

    // Divergence gate: the theory requires ∇·b = 0 (transport then
    // conserves norms); only gross violations abort, the stencilled
    // residual of a legitimate field is already O(h⁴).
    let (div, at) = sampled_divergence(&b[0]);
    let bscale = (0..dims).map(|d| b[0].component(d).max_abs()).fold(0.0f64, f64::max);
    if div > 1e-2 * (1.0 + bscale) {
        return Err(CoreError::invalid(format!(
            "advection field is not divergence-free: |div| = {div:.3e} at node {at}"
        )));
    }

    let mut out = Vec::with_capacity(times.len());
    out.push(init.clone());

    let mut b_cur: Vec<SplineInterp> =
        (0..dims).map(|d| SplineInterp::new(b[0].component(d))).collect();
    let mut s_cur: Option<SplineInterp> = source.map(|s| SplineInterp::new(&s[0]));

    for m in 0..times.len() - 1 {
        let dt = times[m + 1] - times[m];
        let b_next: Vec<SplineInterp> =
            (0..dims).map(|d| SplineInterp::new(b[m + 1].component(d))).collect();
        let s_next: Option<SplineInterp> = source.map(|s| SplineInterp::new(&s[m + 1]));
        let prev = SplineInterp::new(&out[m]);

        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|flat| {
                let x = grid.node(flat);
                // Stage 1: velocity at the arrival node and time.
                let k1 = b[m + 1].at(flat);
                let mut xh = x;
                for d in 0..dims {
                    xh[d] -= 0.5 * dt * k1[d];
                }
                // Stage 2: time-centered velocity at the midpoint.
                let mut foot = x;
                for d in 0..dims {
                    let bd = 0.5 * (b_cur[d].eval(&xh) + b_next[d].eval(&xh));
                    foot[d] -= dt * bd;
                }
                let mut v = prev.eval(&foot);
                if let (Some(sc), Some(sn)) = (&s_cur, &s_next) {
                    v += dt * 0.5 * (sc.eval(&xh) + sn.eval(&xh));
                }
                v
            })
            .collect();

        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Diverged {
                step: m,
                what: format!("transport solve (node {bad})"),
            });
        }
        out.push(ScalarField::from_values_unchecked(grid.clone(), values));
        b_cur = b_next;
        s_cur = s_next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{norm, NormKind, TensorGrid};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn times(t_final: f64, steps: usize) -> Vec<f64> {
        (0..=steps).map(|m| t_final * m as f64 / steps as f64).collect()
    }

    #[test]
    fn zero_field_zero_source_is_identity() {
        let g = Arc::new(TensorGrid::cube(2, -3.0, 3.0, 32, 16, 2.0 * PI).unwrap());
        let init = ScalarField::from_fn(g.clone(), |x| (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap();
        let ts = times(1.0, 20);
        let b: Vec<VectorField> = ts
            .iter()
            .map(|_| VectorField::from_fn(g.clone(), |_| [0.0; MAX_DIM]).unwrap())
            .collect();
        let sol = solve_transport(&b, None, &init, &ts).unwrap();
        for s in &sol {
            for flat in 0..g.len() {
                assert!((s.at(flat) - init.at(flat)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_advection_translates_the_profile() {
        // b = (0, 1/2): the beam ã_0 for a cos τ field; V(t,r,v) = g(r, v − t/2).
        let g = Arc::new(TensorGrid::cube(2, -6.0, 6.0, 128, 16, 2.0 * PI).unwrap());
        let gauss = |r: f64, v: f64| (-(r * r + v * v) / 2.0).exp();
        let init = ScalarField::from_fn(g.clone(), |x| gauss(x[0], x[1])).unwrap();
        let ts = times(1.0, 100);
        let b: Vec<VectorField> = ts
            .iter()
            .map(|_| VectorField::from_fn(g.clone(), |_| [0.0, 0.5, 0.0, 0.0]).unwrap())
            .collect();
        let sol = solve_transport(&b, None, &init, &ts).unwrap();
        let want = ScalarField::from_fn(g.clone(), |x| gauss(x[0], x[1] - 0.5)).unwrap();
        let err = norm(&sol.last().unwrap().lin_comb(1.0, &want, -1.0), NormKind::Two);
        assert!(err <= 1e-3, "L2 error {err}");
    }

    #[test]
    fn linear_source_accumulates_exactly() {
        let g = Arc::new(TensorGrid::cube(2, -2.0, 2.0, 16, 16, 2.0 * PI).unwrap());
        let init = ScalarField::zeros(g.clone());
        let ts = times(0.75, 30);
        let b: Vec<VectorField> = ts
            .iter()
            .map(|_| VectorField::from_fn(g.clone(), |_| [0.0; MAX_DIM]).unwrap())
            .collect();
        let src: Vec<ScalarField> = ts
            .iter()
            .map(|_| ScalarField::from_fn(g.clone(), |x| x[0]).unwrap())
            .collect();
        let sol = solve_transport(&b, Some(&src), &init, &ts).unwrap();
        for flat in 0..g.len() {
            let x = g.node(flat);
            let want = 0.75 * x[0];
            assert!(
                (sol.last().unwrap().at(flat) - want).abs() < 1e-10,
                "node {flat}"
            );
        }
    }

    #[test]
    fn rejects_grossly_compressible_fields() {
        let g = Arc::new(TensorGrid::cube(2, -1.0, 1.0, 16, 16, 2.0 * PI).unwrap());
        let init = ScalarField::zeros(g.clone());
        let ts = times(0.1, 4);
        let b: Vec<VectorField> = ts
            .iter()
            .map(|_| VectorField::from_fn(g.clone(), |x| [x[0], x[1], 0.0, 0.0]).unwrap())
            .collect();
        assert!(solve_transport(&b, None, &init, &ts).is_err());
    }

    #[test]
    fn rotation_conserves_l2_norm() {
        let g = Arc::new(TensorGrid::cube(2, -6.0, 6.0, 96, 16, 2.0 * PI).unwrap());
        let init =
            ScalarField::from_fn(g.clone(), |x| (-((x[0] - 1.0).powi(2) + x[1] * x[1])).exp())
                .unwrap();
        let ts = times(2.0, 64);
        let b: Vec<VectorField> = ts
            .iter()
            .map(|_| VectorField::from_fn(g.clone(), |x| [x[1], -x[0], 0.0, 0.0]).unwrap())
            .collect();
        let sol = solve_transport(&b, None, &init, &ts).unwrap();
        let n0 = norm(&init, NormKind::Two);
        let nt = norm(sol.last().unwrap(), NormKind::Two);
        assert!((nt - n0).abs() <= 0.01 * n0, "drift {}", (nt - n0).abs() / n0);
    }
}
