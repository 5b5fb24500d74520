//! Discretized differential matrix-inequality synthesis.
//!
//! The certificate Q(t) is piecewise-linear on the grid, so its derivative is
//! constant per interval and the evolution inequality is enforced at both
//! endpoints of every interval. Together with the node caps against the
//! shrunk target and the initial-set inclusion this yields a finite
//! margin-maximization semidefinite program, scanned over the gain product
//! from zero upward.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ShrunkSpec;
use crate::grid::TimeGrid;
use crate::linalg;
use crate::problem::FtsProblem;
use crate::schedule::{matrix_from_rows, matrix_to_rows, MatrixSchedule};
use crate::sdp::{BlockTag, PsdBlock, SdpProblem};

pub use crate::sdp::{solve_feasibility, FeasibilityOutcome, RECHECK_TOL, STRICT_MARGIN};

/// Default gain-product scan step.
pub const DEFAULT_SCAN_STEP: f64 = 0.01;
/// Default scan ceiling.
pub const DEFAULT_KA_MAX: f64 = 10.0;

/// Synthesis output: minimal feasible gain product with its certificate.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    /// Minimal feasible gain product found by the scan.
    pub ka: f64,
    /// Dither amplitude factor, k * alpha = ka.
    pub k: f64,
    pub alpha: f64,
    /// Achieved uniform eigenvalue slack.
    pub margin: f64,
    /// Certificate node matrices Q_0..Q_N.
    pub q_nodes: Vec<DMatrix<f64>>,
    /// Feedback row K(tau) = -ka B'(tau) Pi(tau) on the grid.
    pub gain: MatrixSchedule,
    /// Shrunk target used by the caps.
    pub shrunk: ShrunkSpec,
    pub grid: TimeGrid,
    /// Number of scan points solved before success.
    pub scan_evaluations: usize,
}

/// Symmetric basis matrix for upper-triangle slot (i, j), i <= j.
fn sym_basis(n: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    if i == j {
        m[(i, i)] = 1.0;
    } else {
        m[(i, j)] = 1.0;
        m[(j, i)] = 1.0;
    }
    m
}

/// Upper-triangle slots in svec order (column-stacked).
fn tri_slots(n: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            v.push((i, j));
        }
    }
    v
}

struct NodeData {
    a: DMatrix<f64>,
    /// B B' Pi at the node.
    bbt_pi: DMatrix<f64>,
    gbar_inv: DMatrix<f64>,
}

fn node_data(p: &FtsProblem, spec: &ShrunkSpec, grid: &TimeGrid) -> Result<Vec<NodeData>> {
    grid.nodes()
        .iter()
        .map(|&tau| {
            let a = p.a.eval(tau)?;
            let b = p.b.eval(tau)?;
            let pi = p.pi.eval(tau)?;
            let gbar = spec.gamma_bar.eval(tau)?;
            let gbar_inv = linalg::spd_inverse(&gbar, "shrunk target")
                .map_err(|e| Error::Assembly(format!("at t = {tau}: {e}")))?;
            Ok(NodeData {
                bbt_pi: &b * b.transpose() * pi,
                a,
                gbar_inv,
            })
        })
        .collect()
}

/// Assemble the discretized synthesis inequalities at a fixed gain product.
///
/// Emits, for every interval k and both endpoints tau in {tau_k, tau_k+1}:
///   -(Q_k+1 - Q_k)/h + A Q + Q A' - ka (B B' Pi Q + Q Pi B B') + m I <= 0,
/// plus node caps Q_k + m I <= GammaBar(tau_k)^-1 and the initial inclusion
/// R^-1 + m I <= Q_0, with m the margin variable to maximize.
pub fn assemble_lmi(
    p: &FtsProblem,
    spec: &ShrunkSpec,
    ka: f64,
    grid: &TimeGrid,
) -> Result<SdpProblem> {
    if ka < 0.0 {
        return Err(Error::Domain(format!("gain product must be nonnegative, got {ka}")));
    }
    let n = p.n();
    let slots = tri_slots(n);
    let s = slots.len();
    let n_int = grid.n_intervals();
    let n_nodes = n_int + 1;
    let n_vars = n_nodes * s + 1;
    let margin_var = n_nodes * s;
    let eye = DMatrix::identity(n, n);
    let nodes = node_data(p, spec, grid)?;
    let r_inv = linalg::spd_inverse(&p.r, "R")
        .map_err(|e| Error::Assembly(format!("{e}")))?;
    let h = grid.step();

    // A S + S A' - ka (BB'Pi S + S Pi BB') for the basis matrix of one slot.
    let dyn_coeff = |nd: &NodeData, sm: &DMatrix<f64>| -> DMatrix<f64> {
        let asym = &nd.a * sm + sm * nd.a.transpose();
        let gain = &nd.bbt_pi * sm + sm * nd.bbt_pi.transpose();
        asym - gain * ka
    };

    let mut blocks = Vec::with_capacity(2 * n_int + n_nodes + 1);
    for k in 0..n_int {
        for endpoint in 0..2 {
            let nd = &nodes[k + endpoint];
            let mut coeffs: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(2 * s + 1);
            for (slot, &(i, j)) in slots.iter().enumerate() {
                let sm = sym_basis(n, i, j);
                // -Qdot = (Q_k - Q_k+1)/h contributions.
                let mut ck = &sm / h;
                let mut ck1 = &sm / (-h);
                if endpoint == 0 {
                    ck += dyn_coeff(nd, &sm);
                } else {
                    ck1 += dyn_coeff(nd, &sm);
                }
                coeffs.push((k * s + slot, ck));
                coeffs.push(((k + 1) * s + slot, ck1));
            }
            coeffs.push((margin_var, eye.clone()));
            blocks.push(PsdBlock {
                tag: BlockTag::IntervalDlmi { interval: k, endpoint },
                dim: n,
                constant: DMatrix::zeros(n, n),
                coeffs,
            });
        }
    }
    for k in 0..n_nodes {
        let mut coeffs: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(s + 1);
        for (slot, &(i, j)) in slots.iter().enumerate() {
            coeffs.push((k * s + slot, sym_basis(n, i, j)));
        }
        coeffs.push((margin_var, eye.clone()));
        blocks.push(PsdBlock {
            tag: BlockTag::Cap { node: k },
            dim: n,
            constant: -&nodes[k].gbar_inv,
            coeffs,
        });
    }
    {
        let mut coeffs: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(s + 1);
        for (slot, &(i, j)) in slots.iter().enumerate() {
            coeffs.push((slot, -sym_basis(n, i, j)));
        }
        coeffs.push((margin_var, eye.clone()));
        blocks.push(PsdBlock {
            tag: BlockTag::Initial,
            dim: n,
            constant: r_inv,
            coeffs,
        });
    }

    debug_assert_eq!(blocks.len(), 2 * n_int + n_nodes + 1);
    Ok(SdpProblem {
        n_vars,
        margin_var,
        blocks,
    })
}

/// Node matrices from a solution vector.
fn q_nodes_from(x: &[f64], n: usize, n_nodes: usize) -> Vec<DMatrix<f64>> {
    let slots = tri_slots(n);
    (0..n_nodes)
        .map(|k| {
            let mut q = DMatrix::zeros(n, n);
            for (slot, &(i, j)) in slots.iter().enumerate() {
                let v = x[k * slots.len() + slot];
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
            q
        })
        .collect()
}

/// Flatten certificate nodes and margin back into a solution vector.
pub fn solution_vector(res: &SynthesisResult) -> Vec<f64> {
    let n = res.q_nodes[0].nrows();
    let slots = tri_slots(n);
    let mut x = Vec::with_capacity(res.q_nodes.len() * slots.len() + 1);
    for q in &res.q_nodes {
        for &(i, j) in &slots {
            x.push(q[(i, j)]);
        }
    }
    x.push(res.margin);
    x
}

/// Feedback row K(tau) = -ka B'(tau) Pi(tau) and the (k, alpha) split.
///
/// When no split is given both factors default to sqrt(ka); an explicit split
/// must multiply back to the gain product.
pub fn extract_gain(
    p: &FtsProblem,
    ka: f64,
    split: Option<(f64, f64)>,
    grid: &TimeGrid,
) -> Result<(MatrixSchedule, f64, f64)> {
    if ka < 0.0 {
        return Err(Error::Domain(format!("gain product must be nonnegative, got {ka}")));
    }
    let (k, alpha) = match split {
        Some((k, alpha)) => {
            if (k * alpha - ka).abs() > 1e-9 * ka.max(1.0) {
                return Err(Error::Domain(format!(
                    "split {k} * {alpha} does not multiply to the gain product {ka}"
                )));
            }
            (k, alpha)
        }
        None => (ka.sqrt(), ka.sqrt()),
    };
    let samples: Result<Vec<_>> = grid
        .nodes()
        .iter()
        .map(|&tau| {
            let b = p.b.eval(tau)?;
            let pi = p.pi.eval(tau)?;
            Ok((tau, b.transpose() * pi * (-ka)))
        })
        .collect();
    Ok((MatrixSchedule::sampled_linear(samples?)?, k, alpha))
}

/// Scan the gain product upward from zero and return the first value whose
/// margin-maximization is strictly feasible.
///
/// Scan points are solved in parallel batches but the result is the minimal
/// feasible point of the arithmetic progression regardless of completion
/// order; every smaller point is solved and found infeasible first.
pub fn scan_gain(
    p: &FtsProblem,
    spec: &ShrunkSpec,
    grid: &TimeGrid,
    step: f64,
    ka_max: f64,
) -> Result<SynthesisResult> {
    if !(step > 0.0) || !(ka_max >= 0.0) {
        return Err(Error::Domain(format!(
            "scan needs a positive step and nonnegative ceiling, got {step} and {ka_max}"
        )));
    }
    let n_points = (ka_max / step + 1e-9).floor() as usize + 1;
    let batch = rayon::current_num_threads().max(1);
    let mut evaluated = 0usize;
    let mut last_margin = f64::NEG_INFINITY;

    let mut start = 0usize;
    while start < n_points {
        let end = (start + batch).min(n_points);
        let outcomes: Vec<(f64, Result<FeasibilityOutcome>)> = (start..end)
            .into_par_iter()
            .map(|i| {
                let ka = i as f64 * step;
                let out = assemble_lmi(p, spec, ka, grid).and_then(|sdp| solve_feasibility(&sdp));
                (ka, out)
            })
            .collect();
        for (ka, out) in outcomes {
            evaluated += 1;
            let out = out.map_err(|e| Error::Solver(format!("at gain product {ka}: {e}")))?;
            last_margin = out.margin;
            if out.feasible {
                let n_nodes = grid.n_intervals() + 1;
                let q_nodes = q_nodes_from(&out.x, p.n(), n_nodes);
                for (idx, q) in q_nodes.iter().enumerate() {
                    if linalg::lambda_min(q) <= 0.0 {
                        return Err(Error::Solver(format!(
                            "certificate node {idx} not positive-definite at gain product {ka}"
                        )));
                    }
                }
                let (gain, k, alpha) = extract_gain(p, ka, None, grid)?;
                return Ok(SynthesisResult {
                    ka,
                    k,
                    alpha,
                    margin: out.margin,
                    q_nodes,
                    gain,
                    shrunk: spec.clone(),
                    grid: grid.clone(),
                    scan_evaluations: evaluated,
                });
            }
        }
        start = end;
    }
    Err(Error::SynthesisFailed(format!(
        "no feasible gain product in [0, {ka_max}] at step {step} \
         ({evaluated} points solved, last margin {last_margin:.3e})"
    )))
}

/// Re-check a returned certificate by direct eigenvalue evaluation.
///
/// Returns the worst slack: the maximum over assembled blocks of the largest
/// eigenvalue evaluated at the certificate with the margin term removed. A
/// sound certificate keeps this at or below -(margin - RECHECK_TOL).
pub fn recheck_certificate(
    p: &FtsProblem,
    res: &SynthesisResult,
) -> Result<f64> {
    let sdp = assemble_lmi(p, &res.shrunk, res.ka, &res.grid)?;
    let mut x = solution_vector(res);
    x[sdp.margin_var] = 0.0; // margin removed: blocks must clear it on their own
    Ok(sdp.recheck_residual(&x))
}

// ---------------------------------------------------------------------------
// JSON report form.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SynthesisRepr {
    ka: f64,
    k: f64,
    alpha: f64,
    margin: f64,
    grid: TimeGrid,
    #[serde(rename = "Q")]
    q_nodes: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "K")]
    gain: MatrixSchedule,
    shrunk: ShrunkSpec,
    scan_evaluations: usize,
}

impl Serialize for SynthesisResult {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        SynthesisRepr {
            ka: self.ka,
            k: self.k,
            alpha: self.alpha,
            margin: self.margin,
            grid: self.grid.clone(),
            q_nodes: self.q_nodes.iter().map(matrix_to_rows).collect(),
            gain: self.gain.clone(),
            shrunk: self.shrunk.clone(),
            scan_evaluations: self.scan_evaluations,
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for SynthesisResult {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let repr = SynthesisRepr::deserialize(de)?;
        let q_nodes: Result<Vec<_>> = repr.q_nodes.iter().map(|m| matrix_from_rows(m)).collect();
        Ok(SynthesisResult {
            ka: repr.ka,
            k: repr.k,
            alpha: repr.alpha,
            margin: repr.margin,
            grid: repr.grid,
            q_nodes: q_nodes.map_err(DeError::custom)?,
            gain: repr.gain,
            shrunk: repr.shrunk,
            scan_evaluations: repr.scan_evaluations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::BuiltinExample;
    use crate::geometry::shrunk_gamma;
    use crate::schedule::MatrixSchedule;
    use approx::assert_relative_eq;

    #[test]
    fn block_and_variable_counts() {
        let p = BuiltinExample::Ex1.problem();
        let grid = BuiltinExample::Ex1.default_grid();
        let spec = shrunk_gamma(&p, &grid).unwrap();
        let sdp = assemble_lmi(&p, &spec, 0.05, &grid).unwrap();
        assert_eq!(sdp.n_vars, 3 * 101 + 1);
        assert_eq!(sdp.blocks.len(), 200 + 101 + 1);
    }

    #[test]
    fn zero_gain_blocks_reduce_to_open_loop() {
        let p = BuiltinExample::Ex1.problem();
        let grid = BuiltinExample::Ex1.default_grid();
        let spec = shrunk_gamma(&p, &grid).unwrap();
        let with = assemble_lmi(&p, &spec, 0.0, &grid).unwrap();
        // Hand-build the open-loop dynamic coefficient for slot (0,0) of Q_0
        // at interval 0, endpoint 0: S/h + A S + S A'.
        let a = p.a.eval(0.0).unwrap();
        let s = sym_basis(2, 0, 0);
        let expected = &s / grid.step() + &a * &s + &s * a.transpose();
        let block = &with.blocks[0];
        let got = block
            .coeffs
            .iter()
            .find(|(j, _)| *j == 0)
            .map(|(_, f)| f.clone())
            .unwrap();
        assert!((got - expected).norm() < 1e-14);
    }

    #[test]
    fn scalar_assembly_matches_hand_expansion() {
        // n = 1: interval block is -qdot + 2(a - ka b^2 pi) q + m <= 0.
        let (a, b, pi, gbar, rmat) = (0.3, 0.7, 1.4, 2.0, 4.0);
        let p = FtsProblem {
            a: MatrixSchedule::constant(DMatrix::from_element(1, 1, a)),
            b: MatrixSchedule::constant(DMatrix::from_element(1, 1, b)),
            r: DMatrix::from_element(1, 1, rmat),
            gamma: MatrixSchedule::constant(DMatrix::from_element(1, 1, gbar)),
            pi: MatrixSchedule::constant(DMatrix::from_element(1, 1, pi)),
            t0: 0.0,
            horizon: 1.0,
            delta: 0.0,
        };
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let spec = shrunk_gamma(&p, &grid).unwrap();
        let ka = 0.2;
        let sdp = assemble_lmi(&p, &spec, ka, &grid).unwrap();
        let h = grid.step();
        // Interval 0, endpoint 0: coefficient of q_0 must be 1/h + 2(a - ka b^2 pi).
        let block = &sdp.blocks[0];
        let coeff_q0 = block.coeffs.iter().find(|(j, _)| *j == 0).unwrap().1[(0, 0)];
        let coeff_q1 = block.coeffs.iter().find(|(j, _)| *j == 1).unwrap().1[(0, 0)];
        assert_relative_eq!(
            coeff_q0,
            1.0 / h + 2.0 * (a - ka * b * b * pi),
            epsilon = 1e-12
        );
        assert_relative_eq!(coeff_q1, -1.0 / h, epsilon = 1e-12);
        // Endpoint 1 swaps which node carries the dynamics term.
        let block1 = &sdp.blocks[1];
        let c_q0 = block1.coeffs.iter().find(|(j, _)| *j == 0).unwrap().1[(0, 0)];
        let c_q1 = block1.coeffs.iter().find(|(j, _)| *j == 1).unwrap().1[(0, 0)];
        assert_relative_eq!(c_q0, 1.0 / h, epsilon = 1e-12);
        assert_relative_eq!(
            c_q1,
            -1.0 / h + 2.0 * (a - ka * b * b * pi),
            epsilon = 1e-12
        );
    }

    #[test]
    fn extract_gain_reference_values() {
        // With Pi = 2I and B = (0,1): K = -ka * B' * Pi = [0, -2 ka].
        let mut p = BuiltinExample::Ex1.problem();
        p.gamma = MatrixSchedule::constant(DMatrix::identity(2, 2) * 2.0);
        p.pi = p.gamma.clone();
        p.r = DMatrix::identity(2, 2) * 3.0;
        let grid = BuiltinExample::Ex1.default_grid();
        let (gain, k, alpha) = extract_gain(&p, 0.04, None, &grid).unwrap();
        let at = gain.eval(5.0).unwrap();
        assert_relative_eq!(at[(0, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(at[(0, 1)], -0.08, epsilon = 1e-12);
        assert_relative_eq!(k, 0.2, epsilon = 1e-12);
        assert_relative_eq!(alpha, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn zero_gain_is_zero_feedback() {
        let p = BuiltinExample::Ex1.problem();
        let grid = BuiltinExample::Ex1.default_grid();
        let (gain, _, _) = extract_gain(&p, 0.0, None, &grid).unwrap();
        assert!(gain.eval(3.0).unwrap().norm() == 0.0);
    }

    #[test]
    fn ex2_gain_vanishes_with_b() {
        let p = BuiltinExample::Ex2.problem();
        let grid = BuiltinExample::Ex2.default_grid();
        let (gain, _, _) = extract_gain(&p, 0.11, None, &grid).unwrap();
        let at = gain.eval(2.5).unwrap();
        assert!(at.norm() < 1e-12);
    }

    #[test]
    fn negative_gain_rejected() {
        let p = BuiltinExample::Ex1.problem();
        let grid = BuiltinExample::Ex1.default_grid();
        assert!(extract_gain(&p, -0.01, None, &grid).is_err());
        assert!(matches!(
            assemble_lmi(
                &p,
                &shrunk_gamma(&p, &grid).unwrap(),
                -0.01,
                &grid
            ),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn bad_split_rejected() {
        let p = BuiltinExample::Ex1.problem();
        let grid = BuiltinExample::Ex1.default_grid();
        assert!(extract_gain(&p, 0.04, Some((0.2, 0.3)), &grid).is_err());
        assert!(extract_gain(&p, 0.06, Some((0.2, 0.3)), &grid).is_ok());
    }
}
