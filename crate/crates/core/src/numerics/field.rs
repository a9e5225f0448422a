//! Scalar and vector fields sampled on a tensor grid, plus grid-weighted
//! norms.

use std::sync::Arc;

use rayon::prelude::*;

use super::{det_sum, Coord, TensorGrid};
use crate::{CoreError, Result};

/// Real-valued samples on every node of a grid at a fixed time slice.
/// Immutable after construction; cheap to clone (the grid is shared).
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<TensorGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    /// Wrap a value array, checking size and finiteness.
    pub fn new(grid: Arc<TensorGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CoreError::invalid(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::invalid(format!(
                "field value at node {i} is not finite"
            )));
        }
        Ok(Self { grid, values })
    }

    /// Sample a function at every node, in parallel.
    pub fn from_fn(grid: Arc<TensorGrid>, f: impl Fn(&Coord) -> f64 + Sync) -> Result<Self> {
        let values: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.node(i)))
            .collect();
        Self::new(grid, values)
    }

    pub fn zeros(grid: Arc<TensorGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    /// Internal constructor for values produced by trusted kernels.
    pub(crate) fn from_values_unchecked(grid: Arc<TensorGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> Arc<TensorGrid> {
        Arc::clone(&self.grid)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, flat: usize) -> f64 {
        self.values[flat]
    }

    /// Pointwise linear combination a·self + b·other.
    pub fn lin_comb(&self, a: f64, other: &ScalarField, b: f64) -> ScalarField {
        debug_assert_eq!(self.values.len(), other.values.len());
        let values = self
            .values
            .par_iter()
            .zip(other.values.par_iter())
            .map(|(x, y)| a * x + b * y)
            .collect();
        ScalarField { grid: Arc::clone(&self.grid), values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// One scalar field per spatial component, all on the same grid.
#[derive(Debug, Clone)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        if components.is_empty() {
            return Err(CoreError::invalid("vector field needs at least one component"));
        }
        let grid = components[0].grid();
        if components.len() != grid.dims() {
            return Err(CoreError::invalid(format!(
                "vector field has {} components on a {}-d grid",
                components.len(),
                grid.dims()
            )));
        }
        if components.iter().any(|c| c.grid() != grid) {
            return Err(CoreError::invalid("vector field components live on different grids"));
        }
        Ok(Self { components })
    }

    pub fn from_fn(grid: Arc<TensorGrid>, f: impl Fn(&Coord) -> Coord + Sync) -> Result<Self> {
        let dims = grid.dims();
        let samples: Vec<Coord> = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.node(i)))
            .collect();
        let mut components = Vec::with_capacity(dims);
        for d in 0..dims {
            let vals: Vec<f64> = samples.iter().map(|c| c[d]).collect();
            components.push(ScalarField::new(Arc::clone(&grid), vals)?);
        }
        Ok(Self { components })
    }

    pub fn grid(&self) -> &TensorGrid {
        self.components[0].grid()
    }

    pub fn component(&self, d: usize) -> &ScalarField {
        &self.components[d]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn at(&self, flat: usize) -> Coord {
        let mut v = [0.0; super::MAX_DIM];
        for (d, c) in self.components.iter().enumerate() {
            v[d] = c.at(flat);
        }
        v
    }
}

/// Norm selector. The continuous L^p framework is represented by this
/// discrete menu; 2 is the default everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    One,
    Two,
    Inf,
}

impl NormKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::One => "1",
            Self::Two => "2",
            Self::Inf => "inf",
        }
    }
}

/// Grid-weighted discrete L^p norm: (Π h_d · Σ |f_i|^p)^(1/p) for finite p,
/// max |f_i| for p = ∞.
pub fn norm(field: &ScalarField, p: NormKind) -> f64 {
    let w = field.grid().cell_volume();
    match p {
        NormKind::One => {
            let abs: Vec<f64> = field.values().iter().map(|v| v.abs()).collect();
            w * det_sum(&abs)
        }
        NormKind::Two => {
            let sq: Vec<f64> = field.values().iter().map(|v| v * v).collect();
            (w * det_sum(&sq)).sqrt()
        }
        NormKind::Inf => field.max_abs(),
    }
}

/// Norm of the difference of two fields on the same grid.
pub fn norm_diff(a: &ScalarField, b: &ScalarField, p: NormKind) -> f64 {
    norm(&a.lin_comb(1.0, b, -1.0), p)
}
