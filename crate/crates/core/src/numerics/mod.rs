//! Grid containers, interpolation, differentiation, periodic quadrature and
//! norms. Everything else in the crate builds on this module.

mod field;
mod grid;
mod quad;
mod spline;
mod stencil;

pub use field::{norm, NormKind, ScalarField, VectorField};
pub use grid::{AxisSpec, TensorGrid};
pub use quad::{cumquad_tau, quad_tau};
pub use spline::SplineInterp;
pub use stencil::gradient;

/// Maximum spatial dimension handled by the crate (beam is 2-D, the
/// kinetic reductions are 4-D).
pub const MAX_DIM: usize = 4;

/// A point or vector, padded to [`MAX_DIM`]; the active length comes from
/// the grid. Unused lanes stay zero.
pub type Coord = [f64; MAX_DIM];

/// A dense dims×dims matrix padded to [`MAX_DIM`].
pub type Matrix = [[f64; MAX_DIM]; MAX_DIM];

/// Identity matrix on the first `dims` lanes.
pub fn identity() -> Matrix {
    let mut m = [[0.0; MAX_DIM]; MAX_DIM];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// Interpolate a field at `x` with the tensor cubic spline.
///
/// Returns 0 outside the grid box (compact-support convention: users must
/// pad the box so fields effectively vanish at the boundary). This is a
/// convenience wrapper; hot loops should build a [`SplineInterp`] once and
/// evaluate it many times.
pub fn interpolate(field: &ScalarField, x: &Coord) -> crate::Result<f64> {
    if x[..field.grid().dims()].iter().any(|c| !c.is_finite()) {
        return Err(crate::CoreError::invalid(format!(
            "interpolation point is not finite: {:?}",
            &x[..field.grid().dims()]
        )));
    }
    Ok(SplineInterp::new(field).eval(x))
}

/// Deterministic sum: fixed-size chunks are summed sequentially and the
/// partials combined in order, so the result does not depend on thread
/// scheduling.
pub fn det_sum(values: &[f64]) -> f64 {
    use rayon::prelude::*;
    const CHUNK: usize = 4096;
    if values.len() <= CHUNK {
        return values.iter().sum();
    }
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}
