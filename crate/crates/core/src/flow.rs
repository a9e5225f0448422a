//! The characteristic flow X(τ; x, t; σ) of the fast field L: the solution
//! of ∂_τ X = L(t, τ, X) with X(σ) = x, at frozen slow time t. Presets
//! provide it in closed form; anything else is integrated with fixed-step
//! RK4, with the space Jacobian carried along through the variational
//! equation ∂_τ J = ∇_x L · J.

use std::sync::Arc;

use crate::numerics::{identity, Coord, Matrix, MAX_DIM};
use crate::{CoreError, Result};

/// Fast convection field L(t, τ, x) (and the oscillating coefficients
/// 𝒜_i share this shape). Must be divergence-free in x and θ-periodic
/// in τ for the surrounding theory to apply.
pub trait FastField: Send + Sync {
    fn dims(&self) -> usize;

    fn eval(&self, t: f64, tau: f64, x: &Coord) -> Coord;

    /// Space Jacobian ∇_x L, used by the variational equation. The default
    /// is a central finite difference; presets override with closed forms.
    fn grad(&self, t: f64, tau: f64, x: &Coord) -> Matrix {
        let h = 1e-5;
        let mut j = [[0.0; MAX_DIM]; MAX_DIM];
        for d in 0..self.dims() {
            let mut xp = *x;
            let mut xm = *x;
            xp[d] += h;
            xm[d] -= h;
            let fp = self.eval(t, tau, &xp);
            let fm = self.eval(t, tau, &xm);
            for (r, row) in j.iter_mut().enumerate().take(self.dims()) {
                row[d] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    }
}

/// Closed-form flow supplied by a preset.
pub trait AnalyticFlow: Send + Sync {
    fn dims(&self) -> usize;

    /// X(τ; x, t; σ).
    fn advance(&self, tau: f64, x: &Coord, t: f64, sigma: f64) -> Coord;

    /// ∇_x X(τ; x, t; σ).
    fn jacobian(&self, tau: f64, x: &Coord, t: f64, sigma: f64) -> Matrix;

    /// ∂_t X(τ; x, t; σ); zero for autonomous fast fields.
    fn dt(&self, _tau: f64, _x: &Coord, _t: f64, _sigma: f64) -> Coord {
        [0.0; MAX_DIM]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowKind {
    Analytic,
    Numeric,
}

enum FlowSpec {
    Analytic(Arc<dyn AnalyticFlow>),
    Numeric { field: Arc<dyn FastField>, substeps_per_unit: usize },
}

/// The characteristic map of a fast field, with its space Jacobian and
/// slow-time derivative. Immutable and reentrant; the engine evaluates it
/// from many worker threads.
pub struct FlowMap {
    theta: f64,
    dims: usize,
    h_t: f64,
    spec: FlowSpec,
}

/// Fixed-step RK4 for the frozen-t characteristic ODE from σ to τ.
///
/// The step count is chosen so the step never exceeds 1/substeps_per_unit;
/// integration runs backwards when τ < σ. A non-finite state aborts with
/// the offending step index.
pub fn integrate_flow(
    field: &dyn FastField,
    t: f64,
    sigma: f64,
    tau: f64,
    x: &Coord,
    substeps_per_unit: usize,
) -> Result<Coord> {
    if substeps_per_unit < 8 {
        return Err(CoreError::invalid(format!(
            "need at least 8 substeps per unit, got {substeps_per_unit}"
        )));
    }
    let (y, _) = rk4_with_jacobian(field, t, sigma, tau, x, substeps_per_unit, false)?;
    Ok(y)
}

/// RK4 on the state, optionally carrying the variational equation
/// ∂_τ J = ∇_x L(t, τ, X) · J with J(σ) = I alongside it.
fn rk4_with_jacobian(
    field: &dyn FastField,
    t: f64,
    sigma: f64,
    tau: f64,
    x: &Coord,
    substeps_per_unit: usize,
    with_jacobian: bool,
) -> Result<(Coord, Matrix)> {
    let dims = field.dims();
    let span = tau - sigma;
    let mut y = *x;
    let mut jac = identity();
    if span == 0.0 {
        return Ok((y, jac));
    }
    let nsteps = (span.abs() * substeps_per_unit as f64).ceil() as usize;
    let nsteps = nsteps.max(1);
    let h = span / nsteps as f64;

    let axpy = |y: &Coord, a: f64, k: &Coord| {
        let mut out = *y;
        for d in 0..dims {
            out[d] += a * k[d];
        }
        out
    };
    let mat_axpy = |m: &Matrix, a: f64, k: &Matrix| {
        let mut out = *m;
        for r in 0..dims {
            for c in 0..dims {
                out[r][c] += a * k[r][c];
            }
        }
        out
    };
    let mat_mul = |a: &Matrix, b: &Matrix| {
        let mut out = [[0.0; MAX_DIM]; MAX_DIM];
        for r in 0..dims {
            for c in 0..dims {
                let mut s = 0.0;
                for k in 0..dims {
                    s += a[r][k] * b[k][c];
                }
                out[r][c] = s;
            }
        }
        out
    };

    for step in 0..nsteps {
        let s0 = sigma + h * step as f64;
        let k1 = field.eval(t, s0, &y);
        let k2 = field.eval(t, s0 + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = field.eval(t, s0 + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = field.eval(t, s0 + h, &axpy(&y, h, &k3));
        if with_jacobian {
            let g1 = mat_mul(&field.grad(t, s0, &y), &jac);
            let g2 = mat_mul(
                &field.grad(t, s0 + 0.5 * h, &axpy(&y, 0.5 * h, &k1)),
                &mat_axpy(&jac, 0.5 * h, &g1),
            );
            let g3 = mat_mul(
                &field.grad(t, s0 + 0.5 * h, &axpy(&y, 0.5 * h, &k2)),
                &mat_axpy(&jac, 0.5 * h, &g2),
            );
            let g4 = mat_mul(
                &field.grad(t, s0 + h, &axpy(&y, h, &k3)),
                &mat_axpy(&jac, h, &g3),
            );
            for r in 0..dims {
                for c in 0..dims {
                    jac[r][c] += h / 6.0 * (g1[r][c] + 2.0 * g2[r][c] + 2.0 * g3[r][c] + g4[r][c]);
                }
            }
        }
        for d in 0..dims {
            y[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        if y[..dims].iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Diverged { step, what: "characteristic flow".to_string() });
        }
    }
    Ok((y, jac))
}

impl FlowMap {
    pub fn analytic(theta: f64, flow: Arc<dyn AnalyticFlow>) -> Self {
        let dims = flow.dims();
        Self { theta, dims, h_t: 1e-4, spec: FlowSpec::Analytic(flow) }
    }

    pub fn numeric(theta: f64, field: Arc<dyn FastField>, substeps_per_unit: usize) -> Self {
        let dims = field.dims();
        Self { theta, dims, h_t: 1e-4, spec: FlowSpec::Numeric { field, substeps_per_unit } }
    }

    /// Step used by the finite-difference ∂_t X of numeric flows.
    pub fn with_dt_step(mut self, h_t: f64) -> Self {
        self.h_t = h_t;
        self
    }

    pub fn kind(&self) -> FlowKind {
        match self.spec {
            FlowSpec::Analytic(_) => FlowKind::Analytic,
            FlowSpec::Numeric { .. } => FlowKind::Numeric,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// X(τ; x, t; σ).
    pub fn advance(&self, tau: f64, x: &Coord, t: f64, sigma: f64) -> Result<Coord> {
        match &self.spec {
            FlowSpec::Analytic(f) => Ok(f.advance(tau, x, t, sigma)),
            FlowSpec::Numeric { field, substeps_per_unit } => {
                integrate_flow(field.as_ref(), t, sigma, tau, x, *substeps_per_unit)
            }
        }
    }

    /// ∇_x X(τ; x, t; σ), from the closed form or the variational equation.
    pub fn jacobian(&self, tau: f64, x: &Coord, t: f64, sigma: f64) -> Result<Matrix> {
        match &self.spec {
            FlowSpec::Analytic(f) => Ok(f.jacobian(tau, x, t, sigma)),
            FlowSpec::Numeric { field, substeps_per_unit } => {
                let (_, j) =
                    rk4_with_jacobian(field.as_ref(), t, sigma, tau, x, *substeps_per_unit, true)?;
                Ok(j)
            }
        }
    }

    /// State and Jacobian in one pass.
    pub fn advance_with_jacobian(
        &self,
        tau: f64,
        x: &Coord,
        t: f64,
        sigma: f64,
    ) -> Result<(Coord, Matrix)> {
        match &self.spec {
            FlowSpec::Analytic(f) => Ok((f.advance(tau, x, t, sigma), f.jacobian(tau, x, t, sigma))),
            FlowSpec::Numeric { field, substeps_per_unit } => {
                rk4_with_jacobian(field.as_ref(), t, sigma, tau, x, *substeps_per_unit, true)
            }
        }
    }

    /// ∂_t X(τ; x, t; σ): closed form for analytic flows, a centered
    /// difference in the frozen slow time for numeric ones.
    pub fn dt(&self, tau: f64, x: &Coord, t: f64, sigma: f64) -> Result<Coord> {
        match &self.spec {
            FlowSpec::Analytic(f) => Ok(f.dt(tau, x, t, sigma)),
            FlowSpec::Numeric { field, substeps_per_unit } => {
                let h = self.h_t;
                let p = integrate_flow(field.as_ref(), t + h, sigma, tau, x, *substeps_per_unit)?;
                let m = integrate_flow(field.as_ref(), t - h, sigma, tau, x, *substeps_per_unit)?;
                let mut out = [0.0; MAX_DIM];
                for d in 0..self.dims {
                    out[d] = (p[d] - m[d]) / (2.0 * h);
                }
                Ok(out)
            }
        }
    }
}

/// Max over the samples of ‖X(θ; x, t; 0) − x‖₂: the defect of the
/// θ-periodicity assumption. Large residuals mean the supplied fast field
/// violates the standing hypothesis of the whole construction.
pub fn check_periodicity(flow: &FlowMap, samples: &[(Coord, f64)]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (x, t) in samples {
        let y = flow.advance(flow.theta, x, *t, 0.0)?;
        let mut d2 = 0.0;
        for d in 0..flow.dims() {
            d2 += (y[d] - x[d]) * (y[d] - x[d]);
        }
        worst = worst.max(d2.sqrt());
    }
    Ok(worst)
}

/// det of the leading dims×dims block, by Gaussian elimination with
/// partial pivoting.
pub fn det(m: &Matrix, dims: usize) -> f64 {
    let mut a = *m;
    let mut d = 1.0;
    for col in 0..dims {
        let mut piv = col;
        for r in col + 1..dims {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if piv != col {
            a.swap(piv, col);
            d = -d;
        }
        if a[col][col] == 0.0 {
            return 0.0;
        }
        d *= a[col][col];
        for r in col + 1..dims {
            let f = a[r][col] / a[col][col];
            for c in col..dims {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    d
}

/// Solve M·out = rhs on the leading dims×dims block. Used for applying
/// inverse flow Jacobians; explicit inversion is never formed. Fails when
/// |det − 1| exceeds the volume-preservation guard of 0.5.
pub fn solve_linear(m: &Matrix, rhs: &Coord, dims: usize) -> Result<Coord> {
    let mut a = *m;
    let mut b = *rhs;
    let mut dt = 1.0;
    for col in 0..dims {
        let mut piv = col;
        for r in col + 1..dims {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if piv != col {
            a.swap(piv, col);
            b.swap(piv, col);
            dt = -dt;
        }
        let p = a[col][col];
        if p == 0.0 {
            return Err(CoreError::DegenerateFlow { det: 0.0 });
        }
        dt *= p;
        for r in col + 1..dims {
            let f = a[r][col] / p;
            for c in col..dims {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    if (dt - 1.0).abs() > 0.5 {
        return Err(CoreError::DegenerateFlow { det: dt });
    }
    let mut out = [0.0; MAX_DIM];
    for r in (0..dims).rev() {
        let mut s = b[r];
        for c in r + 1..dims {
            s -= a[r][c] * out[c];
        }
        out[r] = s / a[r][r];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Beam fast field L = (v, −r).
    struct BeamField;

    impl FastField for BeamField {
        fn dims(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, _tau: f64, x: &Coord) -> Coord {
            [x[1], -x[0], 0.0, 0.0]
        }
        fn grad(&self, _t: f64, _tau: f64, _x: &Coord) -> Matrix {
            let mut j = [[0.0; MAX_DIM]; MAX_DIM];
            j[0][1] = 1.0;
            j[1][0] = -1.0;
            j
        }
    }

    /// Time-scaled rotation L = (1+t)·(v, −r); closed-form flow is a
    /// rotation by (1+t)(τ−σ).
    struct ScaledBeamField;

    impl FastField for ScaledBeamField {
        fn dims(&self) -> usize {
            2
        }
        fn eval(&self, t: f64, _tau: f64, x: &Coord) -> Coord {
            [(1.0 + t) * x[1], -(1.0 + t) * x[0], 0.0, 0.0]
        }
    }

    /// FLR fast field on (x, y, v_x, v_y): L = (v, v × e_z).
    struct FlrField;

    impl FastField for FlrField {
        fn dims(&self) -> usize {
            4
        }
        fn eval(&self, _t: f64, _tau: f64, x: &Coord) -> Coord {
            [x[2], x[3], x[3], -x[2]]
        }
    }

    #[test]
    fn beam_quarter_turn() {
        let x = integrate_flow(&BeamField, 0.0, 0.0, FRAC_PI_2, &[1.0, 0.0, 0.0, 0.0], 64).unwrap();
        assert!((x[0]).abs() < 1e-8, "got {x:?}");
        assert!((x[1] + 1.0).abs() < 1e-8, "got {x:?}");
    }

    #[test]
    fn identity_at_initial_time() {
        let x0 = [0.3, -0.7, 0.0, 0.0];
        let x = integrate_flow(&BeamField, 0.0, 1.25, 1.25, &x0, 64).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn flr_period_closure() {
        let x0 = [0.4, -0.2, 1.1, 0.6];
        let x = integrate_flow(&FlrField, 0.0, 0.0, 2.0 * PI, &x0, 64).unwrap();
        for d in 0..4 {
            assert!((x[d] - x0[d]).abs() < 1e-6, "component {d}: {x:?}");
        }
    }

    #[test]
    fn substep_floor_is_enforced() {
        assert!(integrate_flow(&BeamField, 0.0, 0.0, 1.0, &[1.0, 0.0, 0.0, 0.0], 4).is_err());
    }

    #[test]
    fn jacobian_is_identity_at_initial_time() {
        let flow = FlowMap::numeric(2.0 * PI, Arc::new(BeamField), 64);
        let j = flow.jacobian(0.7, &[0.5, 0.5, 0.0, 0.0], 0.0, 0.7).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((j[r][c] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn beam_jacobian_is_rotation_matrix() {
        let flow = FlowMap::numeric(2.0 * PI, Arc::new(BeamField), 64);
        let tau = 1.234;
        let j = flow.jacobian(tau, &[0.2, -0.4, 0.0, 0.0], 0.0, 0.0).unwrap();
        let want = [[tau.cos(), tau.sin()], [-tau.sin(), tau.cos()]];
        for r in 0..2 {
            for c in 0..2 {
                assert!((j[r][c] - want[r][c]).abs() < 1e-8, "entry ({r},{c})");
            }
        }
    }

    #[test]
    fn jacobian_determinant_is_one_for_divergence_free_fields() {
        let flow = FlowMap::numeric(2.0 * PI, Arc::new(FlrField), 64);
        let mut u = 0.37;
        for k in 0..100 {
            u = (u + 0.754877666246693_f64).fract();
            let x = [2.0 * u - 1.0, u, 1.0 - u, 0.5 * u];
            let tau = 2.0 * PI * ((k as f64) / 100.0);
            let j = flow.jacobian(tau, &x, 0.0, 0.0).unwrap();
            let d = det(&j, 4);
            assert!((d - 1.0).abs() < 1e-6, "det {d} at tau {tau}");
        }
    }

    #[test]
    fn dt_vanishes_for_autonomous_flows() {
        let flow = FlowMap::numeric(2.0 * PI, Arc::new(BeamField), 64);
        let v = flow.dt(1.1, &[0.4, 0.3, 0.0, 0.0], 0.5, 0.0).unwrap();
        for d in 0..2 {
            assert!(v[d].abs() < 1e-7, "got {v:?}");
        }
    }

    #[test]
    fn dt_matches_closed_form_at_second_order() {
        // X(τ; x, t; 0) = M((1+t)τ)x with M a clockwise rotation, so
        // ∂_t X = τ·M'((1+t)τ)x.
        let x = [0.8f64, -0.3, 0.0, 0.0];
        let tau = 0.9f64;
        let t = 0.4f64;
        let phi: f64 = (1.0 + t) * tau;
        let want = [
            tau * (-phi.sin() * x[0] + phi.cos() * x[1]),
            tau * (-phi.cos() * x[0] - phi.sin() * x[1]),
        ];
        let mut errs = Vec::new();
        for &h in &[1e-2, 5e-3] {
            let flow = FlowMap::numeric(2.0 * PI, Arc::new(ScaledBeamField), 256).with_dt_step(h);
            let got = flow.dt(tau, &x, t, 0.0).unwrap();
            let e = ((got[0] - want[0]).powi(2) + (got[1] - want[1]).powi(2)).sqrt();
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 1.9, "fitted order {order}, errors {errs:?}");
    }

    #[test]
    fn periodicity_residual_beam_numeric() {
        let flow = FlowMap::numeric(2.0 * PI, Arc::new(BeamField), 64);
        let samples: Vec<(Coord, f64)> = (0..20)
            .map(|i| {
                let a = i as f64 * 0.31;
                ([a.cos(), a.sin(), 0.0, 0.0], 0.0)
            })
            .collect();
        let r = check_periodicity(&flow, &samples).unwrap();
        assert!(r <= 1e-6, "residual {r}");
    }

    #[test]
    fn inverse_property_roundtrip() {
        let flow = FlowMap::numeric(2.0 * PI, Arc::new(FlrField), 64);
        let x = [0.3, 0.2, -0.5, 0.9];
        let tau = 1.7;
        let fwd = flow.advance(tau, &x, 0.0, 0.0).unwrap();
        let back = flow.advance(0.0, &fwd, 0.0, tau).unwrap();
        for d in 0..4 {
            assert!((back[d] - x[d]).abs() < 1e-8, "component {d}");
        }
    }

    #[test]
    fn linear_solve_guards_degenerate_jacobians() {
        let mut m = identity();
        m[0][0] = 0.2; // det far from 1
        assert!(matches!(
            solve_linear(&m, &[1.0, 0.0, 0.0, 0.0], 2),
            Err(CoreError::DegenerateFlow { .. })
        ));
        let rot = [[0.6, 0.8, 0.0, 0.0], [-0.8, 0.6, 0.0, 0.0], [0.0; 4], [0.0; 4]];
        let sol = solve_linear(&rot, &[0.6, -0.8, 0.0, 0.0], 2).unwrap();
        assert!((sol[0] - 1.0).abs() < 1e-12 && sol[1].abs() < 1e-12);
    }
}
