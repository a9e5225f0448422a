//! Fourth-order finite-difference gradients on uniform grids.

use rayon::prelude::*;

use super::{ScalarField, VectorField};

/// Five-point stencil numerators; dividing by 12h gives the derivative.
/// Interior nodes use the centered stencil, the two nodes nearest each
/// boundary use one-sided stencils of the same order, so the derivative of
/// any quartic is exact everywhere.
#[inline]
fn stencil_numerator(y: &[f64; 5], pos: StencilPos) -> f64 {
    match pos {
        StencilPos::Left0 => -25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2] + 16.0 * y[3] - 3.0 * y[4],
        StencilPos::Left1 => -3.0 * y[0] - 10.0 * y[1] + 18.0 * y[2] - 6.0 * y[3] + y[4],
        StencilPos::Center => y[0] - 8.0 * y[1] + 8.0 * y[3] - y[4],
        StencilPos::Right1 => -y[0] + 6.0 * y[1] - 18.0 * y[2] + 10.0 * y[3] + 3.0 * y[4],
        StencilPos::Right0 => 3.0 * y[0] - 16.0 * y[1] + 36.0 * y[2] - 48.0 * y[3] + 25.0 * y[4],
    }
}

#[derive(Clone, Copy)]
enum StencilPos {
    Left0,
    Left1,
    Center,
    Right1,
    Right0,
}

/// Derivative of one axis of the field, written into `out`.
fn derive_axis(field: &ScalarField, axis: usize, out: &mut [f64]) {
    let grid = field.grid();
    let n = grid.axis(axis).count;
    let inv12h = 1.0 / (12.0 * grid.axis(axis).spacing());
    let stride: usize = (axis + 1..grid.dims()).map(|d| grid.axis(d).count).product();
    let block = n * stride;
    let vals = field.values();

    out.par_chunks_mut(block).enumerate().for_each(|(b, out_chunk)| {
        let chunk = &vals[b * block..(b + 1) * block];
        for i in 0..stride {
            for k in 0..n {
                let (first, pos) = if k < 2 {
                    (
                        0,
                        if k == 0 { StencilPos::Left0 } else { StencilPos::Left1 },
                    )
                } else if k >= n - 2 {
                    (
                        n - 5,
                        if k == n - 1 { StencilPos::Right0 } else { StencilPos::Right1 },
                    )
                } else {
                    (k - 2, StencilPos::Center)
                };
                let y = [
                    chunk[first * stride + i],
                    chunk[(first + 1) * stride + i],
                    chunk[(first + 2) * stride + i],
                    chunk[(first + 3) * stride + i],
                    chunk[(first + 4) * stride + i],
                ];
                out_chunk[k * stride + i] = stencil_numerator(&y, pos) * inv12h;
            }
        }
    });
}

/// Gradient of a field as a vector field on the same grid.
pub fn gradient(field: &ScalarField) -> VectorField {
    let grid = field.grid_arc();
    let dims = grid.dims();
    let mut components = Vec::with_capacity(dims);
    for axis in 0..dims {
        let mut out = vec![0.0; grid.len()];
        derive_axis(field, axis, &mut out);
        components.push(ScalarField::from_values_unchecked(grid.clone(), out));
    }
    VectorField::new(components).expect("gradient components share the field grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::TensorGrid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid2(count: usize, lo: f64, hi: f64) -> Arc<TensorGrid> {
        Arc::new(TensorGrid::cube(2, lo, hi, count, 16, 2.0 * PI).unwrap())
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let g = grid2(8, 0.0, 1.0);
        let f = ScalarField::from_fn(g, |_| 4.5).unwrap();
        let grad = gradient(&f);
        for d in 0..2 {
            assert_eq!(grad.component(d).max_abs(), 0.0);
        }
    }

    #[test]
    fn quadratic_derivative_is_exact() {
        let g = grid2(16, -1.0, 1.0);
        let f = ScalarField::from_fn(g.clone(), |x| x[0] * x[0]).unwrap();
        let grad = gradient(&f);
        for flat in 0..g.len() {
            let x = g.node(flat);
            let want = 2.0 * x[0];
            assert!(
                (grad.component(0).at(flat) - want).abs() < 1e-13,
                "at {x:?}"
            );
            assert!(grad.component(1).at(flat).abs() < 1e-13);
        }
    }

    #[test]
    fn trig_gradient_converges_at_fourth_order() {
        let mut errs = Vec::new();
        for &count in &[64usize, 128] {
            let g = grid2(count, 0.0, 2.0 * PI);
            let f = ScalarField::from_fn(g.clone(), |x| x[0].sin() * x[1].cos()).unwrap();
            let grad = gradient(&f);
            let mut emax = 0.0f64;
            for flat in 0..g.len() {
                let x = g.node(flat);
                let e0 = (grad.component(0).at(flat) - x[0].cos() * x[1].cos()).abs();
                let e1 = (grad.component(1).at(flat) + x[0].sin() * x[1].sin()).abs();
                emax = emax.max(e0).max(e1);
            }
            errs.push(emax);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 3.5, "fitted order {order}, errors {errs:?}");
    }

    #[test]
    fn gradient_commutes_with_adding_constants() {
        let g = grid2(24, 0.0, 2.0);
        let f = ScalarField::from_fn(g.clone(), |x| (1.3 * x[0]).sin() + x[1] * x[1]).unwrap();
        let fc = ScalarField::from_fn(g.clone(), |x| (1.3 * x[0]).sin() + x[1] * x[1] + 7.0).unwrap();
        let ga = gradient(&f);
        let gb = gradient(&fc);
        for d in 0..2 {
            for flat in 0..g.len() {
                let diff = (ga.component(d).at(flat) - gb.component(d).at(flat)).abs();
                assert!(diff < 2e-13, "component {d}, node {flat}: {diff}");
            }
        }
    }
}
