//! Lie-bracket averaging.
//!
//! Two routes to the averaged dynamics live here. `averaged_closed_loop`
//! builds the closed-form averaged state matrix Abar(t) = A(t) - ka B B' Pi(t)
//! used by synthesis and simulation. The generic route — `nu_coefficient`,
//! `lie_bracket`, `averaged_field` — numerically averages an arbitrary
//! dithered field and exists to validate the closed form against an
//! independent computation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::problem::FtsProblem;
use crate::schedule::MatrixSchedule;

/// Simpson panels per axis for the dither quadratures.
const QUAD_PANELS: usize = 2048;

/// Quadrature threshold for the zero-mean and periodicity contracts.
const DITHER_TOL: f64 = 1e-8;

pub type VectorField<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Sync + 'a>;
pub type DitherSignal<'a> = Box<dyn Fn(f64) -> f64 + Sync + 'a>;

/// A collection of dithered vector fields b_i with periodic zero-mean
/// scalar signals u_i of the fast phase.
pub struct DitheredField<'a> {
    fields: Vec<VectorField<'a>>,
    signals: Vec<DitherSignal<'a>>,
    period: f64,
}

impl<'a> DitheredField<'a> {
    pub fn new(
        fields: Vec<VectorField<'a>>,
        signals: Vec<DitherSignal<'a>>,
        period: f64,
    ) -> Result<Self> {
        if fields.len() != signals.len() {
            return Err(Error::Contract(format!(
                "{} fields but {} dither signals",
                fields.len(),
                signals.len()
            )));
        }
        if !(period > 0.0) {
            return Err(Error::Contract(format!(
                "dither period must be positive, got {period}"
            )));
        }
        for (i, u) in signals.iter().enumerate() {
            check_dither(u, period)
                .map_err(|e| Error::Contract(format!("dither signal {i}: {e}")))?;
        }
        Ok(DitheredField {
            fields,
            signals,
            period,
        })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.period
    }
}

fn simpson<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels.max(2) & !1; // even
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

fn check_dither(u: &DitherSignal<'_>, period: f64) -> std::result::Result<(), String> {
    let mean = simpson(u.as_ref(), 0.0, period, QUAD_PANELS) / period;
    if mean.abs() > DITHER_TOL {
        return Err(format!("mean {mean:.3e} over one period is not zero"));
    }
    let scale = 1.0 + u(0.0).abs();
    if (u(0.0) - u(period)).abs() > DITHER_TOL * scale {
        return Err(format!(
            "not periodic: u(0) = {}, u(T_u) = {}",
            u(0.0),
            u(period)
        ));
    }
    Ok(())
}

/// Interaction coefficient of an ordered dither pair (i < j):
/// the double integral over one period of u_i(sigma) u_j(theta) for
/// 0 <= sigma <= theta <= T_u, by composite Simpson on both axes.
pub fn nu_coefficient(
    u_i: &DitherSignal<'_>,
    u_j: &DitherSignal<'_>,
    period: f64,
) -> Result<f64> {
    check_dither(u_i, period).map_err(Error::Contract)?;
    check_dither(u_j, period).map_err(Error::Contract)?;
    // Running inner integral of u_i at the outer Simpson nodes, accumulated
    // by sub-paneled Simpson so every node value is itself quadrature-exact.
    let n = QUAD_PANELS;
    let h = period / n as f64;
    let mut inner = Vec::with_capacity(n + 1);
    inner.push(0.0);
    for k in 1..=n {
        let a = h * (k - 1) as f64;
        let b = h * k as f64;
        let prev = inner[k - 1];
        inner.push(prev + simpson(&|s: f64| u_i(s), a, b, 16));
    }
    let mut acc = 0.0;
    for (k, fk) in inner.iter().enumerate() {
        let theta = h * k as f64;
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * fk * u_j(theta);
    }
    Ok(acc * h / 3.0)
}

/// Standard Lie bracket [b_i, b_j](x) with Jacobians by central differences
/// using step h = 1e-6 (1 + |x|).
pub fn lie_bracket(
    b_i: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    b_j: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    let jac_i = numeric_jacobian(b_i, x);
    let jac_j = numeric_jacobian(b_j, x);
    &jac_j * b_i(x) - &jac_i * b_j(x)
}

fn numeric_jacobian(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let h = 1e-6 * (1.0 + x.norm());
    let mut jac = DMatrix::zeros(m, n);
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(k, &col);
    }
    jac
}

/// Averaged vector field: drift(x) plus the bracket sum over ordered pairs
/// weighted by their interaction coefficients and 1/T_u.
pub fn averaged_field(
    drift: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    dithered: &DitheredField<'_>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut out = drift(x);
    let m = dithered.len();
    for i in 0..m {
        for j in (i + 1)..m {
            let nu = nu_coefficient(&dithered.signals[i], &dithered.signals[j], dithered.period)?;
            if nu != 0.0 {
                let br = lie_bracket(
                    dithered.fields[i].as_ref(),
                    dithered.fields[j].as_ref(),
                    x,
                );
                out += br * (nu / dithered.period);
            }
        }
    }
    Ok(out)
}

/// Averaged closed-loop state matrix at a single time.
pub fn averaged_matrix_at(p: &FtsProblem, ka: f64, t: f64) -> Result<DMatrix<f64>> {
    let a = p.a.eval(t)?;
    let b = p.b.eval(t)?;
    let pi = p.pi.eval(t)?;
    Ok(&a - (&b * b.transpose() * pi) * ka)
}

/// Averaged closed-loop schedule Abar(tau) = A - ka B B' Pi sampled on the
/// synthesis grid.
pub fn averaged_closed_loop(
    p: &FtsProblem,
    ka: f64,
    grid: &TimeGrid,
) -> Result<MatrixSchedule> {
    if ka < 0.0 {
        return Err(Error::Domain(format!(
            "gain product must be nonnegative, got {ka}"
        )));
    }
    let samples: Result<Vec<_>> = grid
        .nodes()
        .iter()
        .map(|&tau| averaged_matrix_at(p, ka, tau).map(|m| (tau, m)))
        .collect();
    MatrixSchedule::sampled_linear(samples?)
}

/// The dither and mixing fields of the stabilizing law at a frozen slow time:
/// b1 = alpha B(t), u1 = cos(theta); b2 = -k B(t) x'Pi(t)x, u2 = sin(theta);
/// drift = A(t) x. Used by the averaging oracle.
pub fn es_fields_at(
    p: &FtsProblem,
    k: f64,
    alpha: f64,
    t: f64,
) -> Result<(impl Fn(&DVector<f64>) -> DVector<f64>, DitheredField<'static>)> {
    let a = p.a.eval(t)?;
    let b = p.b.eval(t)?;
    let pi = p.pi.eval(t)?;
    let b1 = b.clone();
    let b2 = b.clone();
    let drift = move |x: &DVector<f64>| &a * x;
    let fields: Vec<VectorField<'static>> = vec![
        Box::new(move |x: &DVector<f64>| {
            let _ = x;
            DVector::from_column_slice(b1.column(0).as_slice()) * alpha
        }),
        Box::new(move |x: &DVector<f64>| {
            let v = (x.transpose() * &pi * x)[(0, 0)];
            DVector::from_column_slice(b2.column(0).as_slice()) * (-k * v)
        }),
    ];
    let signals: Vec<DitherSignal<'static>> = vec![
        Box::new(|theta: f64| theta.cos()),
        Box::new(|theta: f64| theta.sin()),
    ];
    let dithered = DitheredField::new(fields, signals, 2.0 * std::f64::consts::PI)?;
    Ok((drift, dithered))
}
