//! Uniform tensor-product grids with a separate periodic fast-time axis.

use super::{Coord, MAX_DIM};
use crate::{CoreError, Result};

/// One spatial axis: closed interval [lo, hi] sampled at `count` uniform
/// nodes including both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi, count }
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.spacing() * i as f64
    }
}

/// Uniform tensor-product grid over an n-dimensional box (n ≤ 4), plus a
/// uniform periodic τ-grid on [0, θ).
///
/// τ nodes are τ_j = jθ/tau_points for j = 0..tau_points−1; the node at θ
/// is identified with τ = 0, so periodicity is exact by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    axes: Vec<AxisSpec>,
    tau_points: usize,
    theta: f64,
    strides: Vec<usize>,
    len: usize,
}

impl TensorGrid {
    pub fn new(axes: Vec<AxisSpec>, tau_points: usize, theta: f64) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(CoreError::invalid(format!(
                "grid dimension must be 1..={MAX_DIM}, got {}",
                axes.len()
            )));
        }
        for (d, ax) in axes.iter().enumerate() {
            if !(ax.lo.is_finite() && ax.hi.is_finite()) || ax.hi <= ax.lo {
                return Err(CoreError::invalid(format!(
                    "axis {d}: bounds [{}, {}] are not an increasing finite interval",
                    ax.lo, ax.hi
                )));
            }
            if ax.count < 8 {
                return Err(CoreError::invalid(format!(
                    "axis {d}: need at least 8 points, got {}",
                    ax.count
                )));
            }
        }
        if tau_points < 16 {
            return Err(CoreError::invalid(format!(
                "need at least 16 tau points, got {tau_points}"
            )));
        }
        if !(theta.is_finite() && theta > 0.0) {
            return Err(CoreError::invalid(format!("period theta must be positive, got {theta}")));
        }
        // Row-major: the last axis varies fastest.
        let mut strides = vec![0usize; axes.len()];
        let mut s = 1usize;
        for d in (0..axes.len()).rev() {
            strides[d] = s;
            s = s
                .checked_mul(axes[d].count)
                .ok_or_else(|| CoreError::config("grid size overflows usize".to_string()))?;
        }
        Ok(Self { axes, tau_points, theta, strides, len: s })
    }

    /// Same box in every dimension.
    pub fn cube(dims: usize, lo: f64, hi: f64, count: usize, tau_points: usize, theta: f64) -> Result<Self> {
        Self::new(vec![AxisSpec::new(lo, hi, count); dims], tau_points, theta)
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &AxisSpec {
        &self.axes[d]
    }

    /// Total number of spatial nodes.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tau_points(&self) -> usize {
        self.tau_points
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Spacing of the τ grid, θ/tau_points.
    pub fn tau_spacing(&self) -> f64 {
        self.theta / self.tau_points as f64
    }

    pub fn tau_node(&self, j: usize) -> f64 {
        self.theta * j as f64 / self.tau_points as f64
    }

    /// Flat index of a multi-index.
    pub fn index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims());
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Multi-index of a flat index.
    pub fn unravel(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for d in 0..self.dims() {
            idx[d] = flat / self.strides[d];
            flat %= self.strides[d];
        }
        idx
    }

    /// Coordinates of the node with flat index `flat`.
    pub fn node(&self, flat: usize) -> Coord {
        let idx = self.unravel(flat);
        let mut x = [0.0; MAX_DIM];
        for d in 0..self.dims() {
            x[d] = self.axes[d].node(idx[d]);
        }
        x
    }

    /// True if `x` lies inside the closed box.
    pub fn contains(&self, x: &Coord) -> bool {
        self.axes
            .iter()
            .enumerate()
            .all(|(d, ax)| x[d] >= ax.lo && x[d] <= ax.hi)
    }

    /// Product of the spacings, the volume weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|ax| ax.spacing()).product()
    }
}
