//! Semidefinite feasibility problems over affine matrix blocks, and the
//! conic-solver bridge.
//!
//! A problem holds scalar variables x (node matrices vectorized by the
//! caller plus one margin scalar) and blocks `C + sum_j x_j F_j <= 0` in the
//! Loewner order. Feasibility-with-margin maximizes the margin variable.
//! The interior-point backend is pluggable behind `solve`; solutions are
//! re-checked here by direct eigenvalue evaluation, which is the
//! authoritative acceptance test for a certificate.

extern crate openblas_src;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Margin below which a maximizing solution is not accepted as strictly
/// feasible. Strict matrix inequalities are open conditions; a positive
/// margin certifies them.
pub const STRICT_MARGIN: f64 = 1e-7;

/// Residual allowed when re-checking blocks at the returned solution.
pub const RECHECK_TOL: f64 = 1e-7;

/// Where a block came from, for diagnostics and export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTag {
    /// Evolution inequality on interval `k`, enforced at `endpoint` 0 or 1.
    IntervalDlmi { interval: usize, endpoint: usize },
    /// Node cap against the shrunk target inverse.
    Cap { node: usize },
    /// Initial-set inclusion at t0.
    Initial,
}

impl std::fmt::Display for BlockTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockTag::IntervalDlmi { interval, endpoint } => {
                write!(f, "interval_dlmi(k={interval},endpoint={endpoint})")
            }
            BlockTag::Cap { node } => write!(f, "cap(k={node})"),
            BlockTag::Initial => write!(f, "initial"),
        }
    }
}

/// One affine PSD constraint `constant + sum_j x_j coeffs_j <= 0`.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    pub tag: BlockTag,
    pub dim: usize,
    pub constant: DMatrix<f64>,
    /// Sparse list of (variable index, symmetric coefficient matrix).
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl PsdBlock {
    /// Evaluate the block at a solution vector.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (j, f) in &self.coeffs {
            m += f * x[*j];
        }
        m
    }
}

/// A margin-maximization semidefinite feasibility problem.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub n_vars: usize,
    /// Index of the margin scalar inside the variable vector.
    pub margin_var: usize,
    pub blocks: Vec<PsdBlock>,
}

/// Raw solver output before feasibility interpretation.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub margin: f64,
    pub status: String,
    pub iterations: u32,
}

/// Outcome of `solve_feasibility`.
#[derive(Debug, Clone)]
pub struct FeasibilityOutcome {
    pub feasible: bool,
    pub margin: f64,
    /// Largest eigenvalue over all blocks evaluated at the solution.
    pub recheck_residual: f64,
    pub x: Vec<f64>,
}

// --- symmetric vectorization (column-stacked upper triangle, sqrt(2) off-diag)

pub(crate) fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub(crate) fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let s2 = 2.0f64.sqrt();
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(s2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let s2 = 2.0f64.sqrt();
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[idx];
            } else {
                m[(i, j)] = v[idx] / s2;
                m[(j, i)] = v[idx] / s2;
            }
            idx += 1;
        }
    }
    m
}

impl SdpProblem {
    /// Total cone rows after vectorization.
    pub fn n_rows(&self) -> usize {
        self.blocks.iter().map(|b| svec_len(b.dim)).sum()
    }

    /// Largest block eigenvalue at `x` (negative means all blocks hold).
    pub fn recheck_residual(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| crate::linalg::lambda_max(&b.eval(x)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Plain-text export of every block's affine coefficients, row-major.
    ///
    /// Format: a header line, then per block one `block` line followed by a
    /// `const` line and one `var <j>` line per participating variable, each
    /// carrying dim*dim row-major entries.
    pub fn export_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "sdp n_vars={} margin_var={} blocks={}",
            self.n_vars,
            self.margin_var,
            self.blocks.len()
        );
        let dump = |m: &DMatrix<f64>| -> String {
            m.row_iter()
                .flat_map(|r| r.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>())
                .collect::<Vec<_>>()
                .join(" ")
        };
        for (idx, b) in self.blocks.iter().enumerate() {
            let _ = writeln!(out, "block {idx} tag={} dim={}", b.tag, b.dim);
            let _ = writeln!(out, "  const {}", dump(&b.constant));
            for (j, f) in &b.coeffs {
                let _ = writeln!(out, "  var {j} {}", dump(f));
            }
        }
        out
    }
}

/// Run the interior-point backend on the margin-maximization problem.
pub fn solve(sdp: &SdpProblem) -> Result<SdpSolution> {
    if sdp.n_vars == 0 || sdp.blocks.is_empty() {
        return Err(Error::Solver("empty problem".into()));
    }
    let n_rows = sdp.n_rows();

    // Assemble A (rows = stacked svec coords, cols = variables) and b so that
    // s = b - A x = svec(-block(x)) lands in the PSD triangle cone.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); sdp.n_vars];
    let mut b = vec![0.0f64; n_rows];
    let mut cones: Vec<SupportedConeT<f64>> = Vec::with_capacity(sdp.blocks.len());
    let mut row0 = 0usize;
    for block in &sdp.blocks {
        let len = svec_len(block.dim);
        let neg_const = svec(&(-&block.constant));
        b[row0..row0 + len].copy_from_slice(&neg_const);
        for (j, f) in &block.coeffs {
            for (off, v) in svec(f).into_iter().enumerate() {
                if v != 0.0 {
                    cols[*j].push((row0 + off, v));
                }
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(block.dim));
        row0 += len;
    }

    let mut colptr = Vec::with_capacity(sdp.n_vars + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut cols {
        col.sort_by_key(|(r, _)| *r);
        for (r, v) in col.iter() {
            rowval.push(*r);
            nzval.push(*v);
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(n_rows, sdp.n_vars, colptr, rowval, nzval);
    let p = CscMatrix::zeros((sdp.n_vars, sdp.n_vars));
    let mut q = vec![0.0f64; sdp.n_vars];
    q[sdp.margin_var] = -1.0; // maximize margin

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-9)
        .tol_gap_rel(1e-9)
        .tol_feas(1e-9)
        .max_iter(200)
        .build()
        .map_err(|e| Error::Solver(format!("settings: {e}")))?;
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("setup: {e:?}")))?;
    solver.solve();

    let status = solver.solution.status;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        other => {
            return Err(Error::Solver(format!(
                "status {other:?} after {} iterations",
                solver.info.iterations
            )))
        }
    }
    let x = solver.solution.x.clone();
    let margin = x[sdp.margin_var];
    Ok(SdpSolution {
        margin,
        x,
        status: format!("{status:?}"),
        iterations: solver.info.iterations,
    })
}

/// Maximize the margin and interpret the result: feasible means the margin
/// clears `STRICT_MARGIN` and every block re-checks to `RECHECK_TOL` by
/// direct eigenvalue evaluation.
pub fn solve_feasibility(sdp: &SdpProblem) -> Result<FeasibilityOutcome> {
    let sol = solve(sdp)?;
    let residual = sdp.recheck_residual(&sol.x);
    let feasible = sol.margin > STRICT_MARGIN && residual <= RECHECK_TOL;
    Ok(FeasibilityOutcome {
        feasible,
        margin: sol.margin,
        recheck_residual: residual,
        x: sol.x,
    })
}
