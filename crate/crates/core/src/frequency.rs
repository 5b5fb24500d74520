//! Minimum dithering-frequency estimates.
//!
//! The distance between the dithered and averaged trajectories is bounded by
//! {2(alpha+k)|B|/sqrt(w) + k(alpha+k)|B|^2 kappa / w} eta, where kappa
//! measures target-ellipsoid elongation and eta the transient amplification
//! of the averaged closed loop. Requiring the bound to stay below delta gives
//! a quadratic in 1/sqrt(w) (second order) or, dropping the 1/w term, a
//! closed-form lower bound (first order).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::averaging::averaged_matrix_at;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg;
use crate::problem::FtsProblem;
use crate::schedule::MatrixSchedule;

/// How eta is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMethod {
    /// Integrate the transition matrix of the averaged closed loop (default).
    Transition,
    /// Matrix exponential of the running trapezoidal integral of Abar.
    ExpOfIntegral,
}

/// Frequency-bound report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrequencyBound {
    /// max over nodes of lambda_max(Gamma) / sqrt(lambda_min(Gamma)).
    pub kappa: f64,
    /// Transient amplification of the averaged closed loop (transition method).
    pub eta: f64,
    /// Alternate eta from the exponential-of-integral form, reported alongside.
    pub eta_exp_of_integral: f64,
    /// Root of the second-order inequality, rad/s.
    pub omega_2nd: f64,
    /// First-order closed form, rad/s.
    pub omega_1st: f64,
    /// max over nodes of |B(tau)|.
    pub b_norm: f64,
    /// False when the fast/slow time-scale separation backing the
    /// approximations looks thin at omega_2nd.
    pub regime_ok: bool,
    /// max over nodes of max(|dGamma/dt|, |Gamma A|) used by the regime check.
    pub regime_scale: f64,
}

/// Elongation measure of the target schedule over the grid.
pub fn kappa(gamma: &MatrixSchedule, grid: &TimeGrid) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for &tau in grid.nodes() {
        let g = linalg::require_spd(&gamma.eval(tau)?, "Gamma")?;
        let ev = linalg::sym_eigenvalues(&g);
        worst = worst.max(ev[ev.len() - 1] / ev[0].sqrt());
    }
    Ok(worst)
}

/// Transient amplification of the averaged closed loop.
///
/// Transition method: integrate Phi' = Abar(t) Phi from the identity with
/// classical RK4 on the grid refined tenfold, tracking the largest spectral
/// norm over all refined nodes. Exp-of-integral method: the matrix
/// exponential of the running trapezoidal integral of Abar at each grid node.
pub fn eta(p: &FtsProblem, ka: f64, grid: &TimeGrid, method: EtaMethod) -> Result<f64> {
    match method {
        EtaMethod::Transition => {
            let fine = grid.refined(10)?;
            let n = p.n();
            let mut phi = DMatrix::<f64>::identity(n, n);
            let mut worst = 1.0f64;
            let h = fine.step();
            let nodes = fine.nodes();
            for w in nodes.windows(2) {
                let (t, t1) = (w[0], w[1]);
                let tm = 0.5 * (t + t1);
                let a0 = averaged_matrix_at(p, ka, t)?;
                let am = averaged_matrix_at(p, ka, tm)?;
                let a1 = averaged_matrix_at(p, ka, t1)?;
                let k1 = &a0 * &phi;
                let k2 = &am * (&phi + &k1 * (h / 2.0));
                let k3 = &am * (&phi + &k2 * (h / 2.0));
                let k4 = &a1 * (&phi + &k3 * h);
                phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                worst = worst.max(linalg::spectral_norm(&phi));
            }
            Ok(worst)
        }
        EtaMethod::ExpOfIntegral => {
            let n = p.n();
            let mut integral = DMatrix::<f64>::zeros(n, n);
            let mut worst = 1.0f64;
            let nodes = grid.nodes();
            let mut prev = averaged_matrix_at(p, ka, nodes[0])?;
            for w in nodes.windows(2) {
                let next = averaged_matrix_at(p, ka, w[1])?;
                integral += (&prev + &next) * (0.5 * (w[1] - w[0]));
                prev = next;
                worst = worst.max(linalg::spectral_norm(&linalg::matrix_exp(&integral)));
            }
            Ok(worst)
        }
    }
}

/// Solve the distance bound for the minimum dithering frequency.
///
/// With rho = delta / ((alpha + k) eta |B|) and c = k kappa |B|, the second
/// order condition reads c u^2 + 2 u <= rho in u = 1/sqrt(w). Its positive
/// root is written in the rationalized form u* = 2 rho / (2 + sqrt(4 + 4 c rho)),
/// which degrades gracefully to the first-order u = rho/2 as c -> 0.
pub fn min_frequency(
    k: f64,
    alpha: f64,
    b_norm: f64,
    kappa: f64,
    eta: f64,
    delta: f64,
) -> Result<(f64, f64)> {
    for (name, v) in [
        ("k", k),
        ("alpha", alpha),
        ("b_norm", b_norm),
        ("kappa", kappa),
        ("eta", eta),
        ("delta", delta),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!(
                "{name} must be strictly positive and finite, got {v}"
            )));
        }
    }
    let rho = delta / ((alpha + k) * eta * b_norm);
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("bound right-hand side rho = {rho} must be positive")));
    }
    let omega_1st = (2.0 / rho).powi(2);
    let c = k * kappa * b_norm;
    let u = 2.0 * rho / (2.0 + (4.0 + 4.0 * c * rho).sqrt());
    let omega_2nd = 1.0 / (u * u);
    Ok((omega_2nd, omega_1st))
}

/// Full frequency report for a synthesized gain.
pub fn frequency_bound(
    p: &FtsProblem,
    ka: f64,
    k: f64,
    alpha: f64,
    grid: &TimeGrid,
) -> Result<FrequencyBound> {
    let kap = kappa(&p.gamma, grid)?;
    let eta_tr = eta(p, ka, grid, EtaMethod::Transition)?;
    let eta_eoi = eta(p, ka, grid, EtaMethod::ExpOfIntegral)?;
    let mut b_norm = 0.0f64;
    for &tau in grid.nodes() {
        b_norm = b_norm.max(p.b.eval(tau)?.norm());
    }
    let (omega_2nd, omega_1st) = min_frequency(k, alpha, b_norm, kap, eta_tr, p.delta)?;

    // Time-scale separation check: omega^(3/2) should dominate both the
    // target's rate of change and Gamma A.
    let h = grid.step();
    let mut regime_scale = 0.0f64;
    let nodes = grid.nodes();
    for (idx, &tau) in nodes.iter().enumerate() {
        let g = p.gamma.eval(tau)?;
        let a = p.a.eval(tau)?;
        let gdot = if idx == 0 {
            (p.gamma.eval(nodes[1])? - &g) / h
        } else if idx + 1 == nodes.len() {
            (&g - p.gamma.eval(nodes[idx - 1])?) / h
        } else {
            (p.gamma.eval(nodes[idx + 1])? - p.gamma.eval(nodes[idx - 1])?) / (2.0 * h)
        };
        regime_scale = regime_scale
            .max(linalg::spectral_norm(&gdot))
            .max(linalg::spectral_norm(&(&g * &a)));
    }
    let regime_ok = omega_2nd.powf(1.5) >= 100.0 * regime_scale;

    Ok(FrequencyBound {
        kappa: kap,
        eta: eta_tr,
        eta_exp_of_integral: eta_eoi,
        omega_2nd,
        omega_1st,
        b_norm,
        regime_ok,
        regime_scale,
    })
}
