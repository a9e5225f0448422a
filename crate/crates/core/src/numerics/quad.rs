//! Periodic quadrature on the τ grid.

use super::TensorGrid;
use crate::{CoreError, Result};

fn check_len(samples: &[f64], grid: &TensorGrid) -> Result<()> {
    if samples.len() != grid.tau_points() {
        return Err(CoreError::invalid(format!(
            "expected {} tau samples, got {}",
            grid.tau_points(),
            samples.len()
        )));
    }
    Ok(())
}

/// Full-period integral ∫₀^θ of samples taken at the τ nodes.
///
/// With the node at θ identified with τ = 0, the periodic trapezoid rule
/// collapses to θ/N · Σ samples, which is spectrally accurate for smooth
/// θ-periodic integrands (exact for modes |m| < N). Callers that need the
/// τ-average divide by θ.
pub fn quad_tau(samples: &[f64], grid: &TensorGrid) -> Result<f64> {
    check_len(samples, grid)?;
    Ok(grid.tau_spacing() * samples.iter().sum::<f64>())
}

/// Cumulative trapezoid values ∫₀^{τ_j}; entry 0 is 0.
pub fn cumquad_tau(samples: &[f64], grid: &TensorGrid) -> Result<Vec<f64>> {
    check_len(samples, grid)?;
    Ok(cumquad_tau_unchecked(samples, grid.tau_spacing()))
}

/// Same as [`cumquad_tau`] without the length check, for hot loops that
/// sample on the grid's τ nodes by construction.
pub(crate) fn cumquad_tau_unchecked(samples: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    out.push(0.0);
    for j in 1..samples.len() {
        acc += 0.5 * h * (samples[j - 1] + samples[j]);
        out.push(acc);
    }
    out
}

/// Value of the cumulative integral continued through the closing panel
/// back to τ = θ; for a zero-mean periodic integrand this is the closure
/// defect of the cumulative integral.
pub(crate) fn close_period(samples: &[f64], cumulative_last: f64, h: f64) -> f64 {
    cumulative_last + 0.5 * h * (samples[samples.len() - 1] + samples[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(tau_points: usize) -> TensorGrid {
        TensorGrid::cube(2, 0.0, 1.0, 8, tau_points, 2.0 * PI).unwrap()
    }

    #[test]
    fn unit_samples_integrate_to_theta() {
        let g = grid(16);
        let s = vec![1.0; 16];
        assert!((quad_tau(&s, &g).unwrap() - 2.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn sin_integrates_to_zero() {
        let g = grid(16);
        let s: Vec<f64> = (0..16).map(|j| g.tau_node(j).sin()).collect();
        assert!(quad_tau(&s, &g).unwrap().abs() < 1e-14);
    }

    #[test]
    fn sin_squared_integrates_to_pi() {
        let g = grid(16);
        let s: Vec<f64> = (0..16).map(|j| g.tau_node(j).sin().powi(2)).collect();
        assert!((quad_tau(&s, &g).unwrap() - PI).abs() < 1e-12);
    }

    #[test]
    fn exact_for_low_fourier_modes() {
        // e^{imτ} integrates to 0 for m ≠ 0 exactly under the periodic rule.
        let g = grid(16);
        for m in 0..4 {
            let cos_m: Vec<f64> = (0..16).map(|j| (m as f64 * g.tau_node(j)).cos()).collect();
            let sin_m: Vec<f64> = (0..16).map(|j| (m as f64 * g.tau_node(j)).sin()).collect();
            let want = if m == 0 { 2.0 * PI } else { 0.0 };
            assert!((quad_tau(&cos_m, &g).unwrap() - want).abs() < 1e-13, "cos mode {m}");
            assert!(quad_tau(&sin_m, &g).unwrap().abs() < 1e-13, "sin mode {m}");
        }
    }

    #[test]
    fn sample_count_mismatch_is_rejected() {
        let g = grid(16);
        assert!(quad_tau(&vec![0.0; 15], &g).is_err());
        assert!(cumquad_tau(&vec![0.0; 17], &g).is_err());
    }

    #[test]
    fn cumulative_of_ones_is_linear() {
        let g = grid(16);
        let c = cumquad_tau(&vec![1.0; 16], &g).unwrap();
        for (j, v) in c.iter().enumerate() {
            let want = 2.0 * PI * j as f64 / 16.0;
            assert!((v - want).abs() < 1e-13);
        }
    }

    #[test]
    fn cumulative_of_cos_tracks_sin() {
        let g = TensorGrid::cube(2, 0.0, 1.0, 8, 64, 2.0 * PI).unwrap();
        let s: Vec<f64> = (0..64).map(|j| g.tau_node(j).cos()).collect();
        let c = cumquad_tau(&s, &g).unwrap();
        let mut emax = 0.0f64;
        for (j, v) in c.iter().enumerate() {
            emax = emax.max((v - g.tau_node(j).sin()).abs());
        }
        assert!(emax <= 1e-3, "max error {emax}");
    }

    #[test]
    fn zero_samples_give_zero_cumulative() {
        let g = grid(16);
        let c = cumquad_tau(&vec![0.0; 16], &g).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closing_panel_matches_full_integral() {
        let g = grid(32);
        let s: Vec<f64> = (0..32)
            .map(|j| 0.3 + (g.tau_node(j)).cos() - 2.0 * (2.0 * g.tau_node(j)).sin())
            .collect();
        let c = cumquad_tau(&s, &g).unwrap();
        let closed = close_period(&s, *c.last().unwrap(), g.tau_spacing());
        let full = quad_tau(&s, &g).unwrap();
        assert!((closed - full).abs() < 1e-13);
    }
}
