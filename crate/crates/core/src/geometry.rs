//! Concentric-ellipsoid geometry: minimum boundary distance, shrink factors,
//! and construction of the shrunk target set.
//!
//! For a positive-definite Gamma, the boundaries {x'Gx = 1} and {y'Gy = r^2}
//! are separated by at least (1 - r) min_i gamma_i where {1/gamma_i^2} are the
//! eigenvalues of Gamma. Shrinking the target by r(t) = 1 - delta/min gamma_i(t)
//! makes room for a delta-tube around the averaged trajectory.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg;
use crate::problem::FtsProblem;
use crate::schedule::MatrixSchedule;

/// Midpoint consistency tolerance for the piecewise-linear shrunk schedule.
const INTERP_TOL: f64 = 1e-6;

/// Per-node shrink data and the shrunk target schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShrunkSpec {
    /// Node shrink factors in (0, 1].
    pub r: Vec<f64>,
    /// Smallest semi-axis of Gamma at each node.
    pub gamma_min: Vec<f64>,
    /// GammaBar(tau) = Gamma(tau) / r(tau)^2 as a piecewise-linear schedule.
    pub gamma_bar: MatrixSchedule,
}

/// Semi-axes of the ellipsoid {x' M x = 1}: 1/sqrt(eigenvalue) each.
pub fn semi_axes(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = linalg::require_spd(m, "ellipsoid matrix")?;
    let ev = linalg::sym_eigenvalues(&s);
    let cond = ev[ev.len() - 1] / ev[0];
    if cond > linalg::COND_GUARD {
        return Err(Error::Definiteness(format!(
            "ellipsoid matrix condition number {cond:.3e} exceeds guard"
        )));
    }
    Ok(ev.iter().map(|l| 1.0 / l.sqrt()).collect())
}

/// Minimum distance between {x'Gx = 1} and {y'Gy = r^2}: (1 - r) min_i gamma_i.
pub fn min_ellipsoid_distance(gamma: &DMatrix<f64>, r: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!(
            "shrink factor must lie in (0, 1], got {r}"
        )));
    }
    let axes = semi_axes(gamma)?;
    let min_axis = axes.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((1.0 - r) * min_axis)
}

/// Least conservative admissible shrink factor: r = 1 - delta / min_i gamma_i.
pub fn shrink_factor(gamma_t: &DMatrix<f64>, delta: f64) -> Result<f64> {
    if delta < 0.0 {
        return Err(Error::Domain(format!("delta must be nonnegative, got {delta}")));
    }
    let axes = semi_axes(gamma_t)?;
    let min_axis = axes.iter().copied().fold(f64::INFINITY, f64::min);
    if delta >= min_axis {
        return Err(Error::ShrinkageInfeasible(format!(
            "delta = {delta} is not below the smallest semi-axis {min_axis:.6}"
        )));
    }
    Ok(1.0 - delta / min_axis)
}

/// Build the shrunk target schedule for a validated problem.
///
/// Verifies that the shrunk target at t0 still strictly contains the initial
/// set (GammaBar(t0) strictly below R); a violation means delta is too large
/// for this problem. Also verifies that linear interpolation of the node
/// values stays within `INTERP_TOL` of the exact GammaBar at segment
/// midpoints, so downstream consumers may treat it as piecewise-linear data.
pub fn shrunk_gamma(p: &FtsProblem, grid: &TimeGrid) -> Result<ShrunkSpec> {
    let mut r = Vec::with_capacity(grid.nodes().len());
    let mut gamma_min = Vec::with_capacity(grid.nodes().len());
    let mut samples = Vec::with_capacity(grid.nodes().len());
    for &tau in grid.nodes() {
        let g = linalg::require_spd(&p.gamma.eval(tau)?, "Gamma")?;
        let rf = shrink_factor(&g, p.delta)?;
        let axes = semi_axes(&g)?;
        r.push(rf);
        gamma_min.push(axes.iter().copied().fold(f64::INFINITY, f64::min));
        samples.push((tau, g / (rf * rf)));
    }

    let gbar0 = samples[0].1.clone();
    if !linalg::strictly_below(&gbar0, &p.r) {
        return Err(Error::DeltaTooLarge(format!(
            "shrunk target at t0 does not strictly contain the initial set \
             (lambda_min(R - GammaBar(t0)) = {:.6e}); reduce delta",
            linalg::lambda_min(&(&p.r - &gbar0))
        )));
    }

    let gamma_bar = MatrixSchedule::sampled_linear(samples)?;

    // Piecewise-linear fidelity at segment midpoints.
    for w in grid.nodes().windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let exact_g = p.gamma.eval(mid)?;
        let rf = shrink_factor(&exact_g, p.delta)?;
        let exact = exact_g / (rf * rf);
        let interp = gamma_bar.eval(mid)?;
        let scale = exact.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
        let err = (&interp - &exact)
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()))
            / scale;
        if err > INTERP_TOL {
            return Err(Error::Assembly(format!(
                "piecewise-linear shrunk target deviates by {err:.3e} at t = {mid}; refine the grid"
            )));
        }
    }

    Ok(ShrunkSpec {
        r,
        gamma_min,
        gamma_bar,
    })
}
