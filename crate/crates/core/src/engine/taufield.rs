//! A τ-indexed family of scalar fields: one grid field per fast-time node.
//! This is the storage shape of the correctors W_k and remainders R_k.

use std::sync::Arc;

use crate::numerics::{Coord, ScalarField, SplineInterp, TensorGrid};

/// One scalar field per τ node, all on the same grid. θ-periodic in τ by
/// construction (the machinery only ever produces periodic families).
#[derive(Debug, Clone)]
pub struct TauFamily {
    grid: Arc<TensorGrid>,
    slices: Vec<ScalarField>,
}

impl TauFamily {
    pub fn new(grid: Arc<TensorGrid>, slices: Vec<ScalarField>) -> Self {
        debug_assert_eq!(slices.len(), grid.tau_points());
        Self { grid, slices }
    }

    pub fn zeros(grid: Arc<TensorGrid>) -> Self {
        let slices = (0..grid.tau_points())
            .map(|_| ScalarField::zeros(Arc::clone(&grid)))
            .collect();
        Self { grid, slices }
    }

    pub fn grid(&self) -> &Arc<TensorGrid> {
        &self.grid
    }

    pub fn slice(&self, j: usize) -> &ScalarField {
        &self.slices[j]
    }

    pub fn slices(&self) -> &[ScalarField] {
        &self.slices
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().fold(0.0f64, |m, s| m.max(s.max_abs()))
    }

    /// Fitted splines of every slice, for off-grid evaluation.
    pub fn fit(&self) -> TauFamilyInterp {
        TauFamilyInterp {
            theta: self.grid.theta(),
            splines: self.slices.iter().map(SplineInterp::new).collect(),
        }
    }
}

/// Spline-fitted family, evaluable at arbitrary (τ, x) with periodic cubic
/// Lagrange interpolation across the four nearest τ slices.
pub struct TauFamilyInterp {
    theta: f64,
    splines: Vec<SplineInterp>,
}

/// Weights of the cubic Lagrange interpolant through offsets −1, 0, 1, 2
/// at fractional position `t` ∈ [0, 1) past the middle-left node.
#[inline]
pub(crate) fn lagrange4_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t * t - 1.0) * (t - 2.0) / 2.0,
        -t * (t + 1.0) * (t - 2.0) / 2.0,
        t * (t * t - 1.0) / 6.0,
    ]
}

impl TauFamilyInterp {
    pub fn eval(&self, tau: f64, x: &Coord) -> f64 {
        let n = self.splines.len();
        let u = (tau / self.theta).rem_euclid(1.0) * n as f64;
        let j = (u as usize).min(n - 1);
        let t = u - j as f64;
        let w = lagrange4_weights(t);
        let mut acc = 0.0;
        for (o, wo) in w.iter().enumerate() {
            let idx = (j + n + o - 1) % n;
            acc += wo * self.splines[idx].eval(x);
        }
        acc
    }

    /// Evaluate one stored τ slice directly.
    pub fn eval_slice(&self, j: usize, x: &Coord) -> f64 {
        self.splines[j].eval(x)
    }

    pub fn len(&self) -> usize {
        self.splines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splines.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::TensorGrid;
    use std::f64::consts::PI;

    #[test]
    fn periodic_tau_interpolation_matches_smooth_profile() {
        let g = Arc::new(TensorGrid::cube(2, -1.0, 1.0, 12, 32, 2.0 * PI).unwrap());
        let f = |tau: f64, x: &Coord| (tau.sin() + (2.0 * tau).cos()) * (1.0 + x[0] * 0.5);
        let slices: Vec<ScalarField> = (0..32)
            .map(|j| {
                let tau = g.tau_node(j);
                ScalarField::from_fn(Arc::clone(&g), |x| f(tau, x)).unwrap()
            })
            .collect();
        let fam = TauFamily::new(g, slices);
        let interp = fam.fit();
        for &tau in &[0.0, 0.11, 2.9, 6.1, -0.4, 9.0] {
            let got = interp.eval(tau, &[0.25, 0.0, 0.0, 0.0]);
            let want = f(tau.rem_euclid(2.0 * PI), &[0.25, 0.0, 0.0, 0.0]);
            assert!((got - want).abs() < 2e-4, "tau={tau}: got {got}, want {want}");
        }
    }

    #[test]
    fn lagrange_weights_interpolate_nodes_exactly() {
        let w0 = lagrange4_weights(0.0);
        assert!((w0[1] - 1.0).abs() < 1e-15);
        assert!(w0[0].abs() + w0[2].abs() + w0[3].abs() < 1e-15);
        let w1 = lagrange4_weights(1.0);
        assert!((w1[2] - 1.0).abs() < 1e-15);
    }
}
