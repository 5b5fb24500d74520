//! Problem data for finite-time stabilization and its validation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg;
use crate::schedule::{matrix_from_rows, matrix_to_rows, MatrixSchedule};

/// Plant and finite-time-stability data.
///
/// The plant is x' = A(t)x + B(t)u with a single input column B(t). The goal
/// sets are x0' R x0 <= 1 for admissible initial states and x' Gamma(t) x < 1
/// for the state over [t0, t0+T]. `delta` is the maximum allowed distance
/// between the dithered state and its average. `pi` weights the quadratic
/// state measurement in the control law (defaults to Gamma).
#[derive(Debug, Clone)]
pub struct FtsProblem {
    pub a: MatrixSchedule,
    pub b: MatrixSchedule,
    pub r: DMatrix<f64>,
    pub gamma: MatrixSchedule,
    pub pi: MatrixSchedule,
    pub t0: f64,
    pub horizon: f64,
    pub delta: f64,
}

/// Dither/mixing controller parameters: u = alpha sqrt(w) cos(wt) - k sqrt(w) sin(wt) x'Pi(t)x.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControllerParams {
    pub k: f64,
    pub alpha: f64,
    pub omega: f64,
}

impl ControllerParams {
    pub fn new(k: f64, alpha: f64, omega: f64) -> Result<Self> {
        for (name, v) in [("k", k), ("alpha", alpha), ("omega", omega)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!(
                    "controller parameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(ControllerParams { k, alpha, omega })
    }
}

impl FtsProblem {
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.dims().0
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.horizon
    }

    /// Same problem with the input column negated (unknown-direction checks).
    pub fn with_flipped_b(&self) -> FtsProblem {
        let mut p = self.clone();
        p.b = p.b.negated();
        p
    }

    /// Check every invariant on the given grid and return the problem with
    /// set matrices symmetrized.
    ///
    /// Checks: consistent dimensions; R symmetric positive-definite;
    /// Gamma(tau) and Pi(tau) symmetric positive-definite at every node;
    /// Gamma(t0) strictly below R; delta below the smallest Gamma semi-axis
    /// over the grid; sampled schedules covering [t0, t0+T].
    pub fn validated(&self, grid: &TimeGrid) -> Result<FtsProblem> {
        let n = self.a.dims().0;
        if self.a.dims() != (n, n) {
            return Err(Error::Config(format!(
                "A must be square, got {:?}",
                self.a.dims()
            )));
        }
        if self.b.dims() != (n, 1) {
            return Err(Error::Config(format!(
                "B must be {n}x1, got {:?}",
                self.b.dims()
            )));
        }
        for (what, dims) in [("R", self.r.shape()), ("Gamma", self.gamma.dims()), ("Pi", self.pi.dims())] {
            if dims != (n, n) {
                return Err(Error::Config(format!(
                    "{what} must be {n}x{n}, got {dims:?}"
                )));
            }
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Domain(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Domain(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        if (grid.t0() - self.t0).abs() > 1e-12 * self.horizon.max(1.0)
            || (grid.horizon() - self.horizon).abs() > 1e-12 * self.horizon.max(1.0)
        {
            return Err(Error::Contract(format!(
                "grid [{}, {}] does not match problem [{}, {}]",
                grid.t0(),
                grid.t_end(),
                self.t0,
                self.t_end()
            )));
        }
        for (what, sched) in [("A", &self.a), ("B", &self.b), ("Gamma", &self.gamma), ("Pi", &self.pi)] {
            if let Some((lo, hi)) = sched.sample_span() {
                let tol = 1e-9 * self.horizon;
                if lo > self.t0 + tol || hi < self.t_end() - tol {
                    return Err(Error::Config(format!(
                        "{what} samples [{lo}, {hi}] do not cover [{}, {}]",
                        self.t0,
                        self.t_end()
                    )));
                }
            }
        }

        let r = linalg::require_spd(&self.r, "R")?;

        // Definiteness at every node, tracking the smallest semi-axis of Gamma.
        let mut min_gamma_axis = f64::INFINITY;
        for (idx, &tau) in grid.nodes().iter().enumerate() {
            let g = self.gamma.eval(tau)?;
            let g = linalg::require_spd(&g, &format!("Gamma at node {idx} (t = {tau})"))?;
            let p = self.pi.eval(tau)?;
            linalg::require_spd(&p, &format!("Pi at node {idx} (t = {tau})"))?;
            let lam_max = linalg::lambda_max(&g);
            min_gamma_axis = min_gamma_axis.min(1.0 / lam_max.sqrt());
        }

        let gamma0 = linalg::require_spd(&self.gamma.eval(self.t0)?, "Gamma(t0)")?;
        if !linalg::strictly_below(&gamma0, &r) {
            return Err(Error::WellPosedness(
                "Gamma(t0) is not strictly below R: the initial set must sit strictly inside the target set".into(),
            ));
        }

        if self.delta >= min_gamma_axis {
            return Err(Error::ShrinkageInfeasible(format!(
                "delta = {} is not below the smallest Gamma semi-axis {min_gamma_axis:.6} over the grid",
                self.delta
            )));
        }

        let mut out = self.clone();
        out.r = r;
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// JSON problem files.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ProblemRepr {
    n: usize,
    #[serde(rename = "A")]
    a: MatrixSchedule,
    #[serde(rename = "B")]
    b: MatrixSchedule,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "Gamma")]
    gamma: MatrixSchedule,
    #[serde(rename = "Pi", default, skip_serializing_if = "Option::is_none")]
    pi: Option<MatrixSchedule>,
    t0: f64,
    #[serde(rename = "T")]
    horizon: f64,
    #[serde(rename = "Delta")]
    delta: f64,
}

impl Serialize for FtsProblem {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let pi = if self.pi == self.gamma {
            None
        } else {
            Some(self.pi.clone())
        };
        ProblemRepr {
            n: self.n(),
            a: self.a.clone(),
            b: self.b.clone(),
            r: matrix_to_rows(&self.r),
            gamma: self.gamma.clone(),
            pi,
            t0: self.t0,
            horizon: self.horizon,
            delta: self.delta,
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for FtsProblem {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let repr = ProblemRepr::deserialize(de)?;
        let r = matrix_from_rows(&repr.r).map_err(DeError::custom)?;
        let pi = repr.pi.unwrap_or_else(|| repr.gamma.clone());
        if repr.a.dims().0 != repr.n {
            return Err(DeError::custom(format!(
                "declared n = {} does not match A dimensions {:?}",
                repr.n,
                repr.a.dims()
            )));
        }
        Ok(FtsProblem {
            a: repr.a,
            b: repr.b,
            r,
            gamma: repr.gamma,
            pi,
            t0: repr.t0,
            horizon: repr.horizon,
            delta: repr.delta,
        })
    }
}
