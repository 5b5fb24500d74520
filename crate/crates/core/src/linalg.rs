//! Small dense-matrix helpers shared across the crate.
//!
//! Everything here operates on `nalgebra::DMatrix<f64>` and is tuned for the
//! low state dimensions of this problem class (n = 1..4 typical).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative symmetry tolerance applied before symmetrizing inputs.
pub const SYM_REL_TOL: f64 = 1e-10;

/// A matrix is accepted as positive-definite when its smallest eigenvalue
/// exceeds `PD_REL_TOL * ||M||`.
pub const PD_REL_TOL: f64 = 1e-12;

/// Condition-number guard for inversions of set matrices.
pub const COND_GUARD: f64 = 1e12;

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut ev: Vec<f64> = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    DVector::from_vec(ev)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let ev = sym_eigenvalues(m);
    ev[ev.len() - 1]
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    lambda_max(&gram).max(0.0).sqrt()
}

/// Largest relative asymmetry |M - M^T| / max(1, |M|), max-abs entrywise.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Check symmetry to `SYM_REL_TOL`, then return the symmetrized (M + M^T)/2.
pub fn require_symmetric(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Definiteness(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = asymmetry(m);
    if asym > SYM_REL_TOL {
        return Err(Error::Definiteness(format!(
            "{what}: relative asymmetry {asym:.3e} exceeds {SYM_REL_TOL:.0e}"
        )));
    }
    Ok((m + m.transpose()) * 0.5)
}

/// Check symmetric positive-definiteness; returns the symmetrized matrix.
pub fn require_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let s = require_symmetric(m, what)?;
    let ev = sym_eigenvalues(&s);
    let lo = ev[0];
    let hi = ev[ev.len() - 1].abs().max(ev[0].abs());
    if lo <= PD_REL_TOL * hi.max(1.0) {
        return Err(Error::Definiteness(format!(
            "{what}: smallest eigenvalue {lo:.3e} is not positive at numerical scale"
        )));
    }
    Ok(s)
}

/// Inverse of a symmetric positive-definite matrix with a condition guard.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let s = require_spd(m, what)?;
    let eig = s.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    if hi / lo > COND_GUARD {
        return Err(Error::Definiteness(format!(
            "{what}: condition number {:.3e} exceeds guard {COND_GUARD:.0e}",
            hi / lo
        )));
    }
    let n = s.nrows();
    let mut inv_d = DMatrix::zeros(n, n);
    for i in 0..n {
        inv_d[(i, i)] = 1.0 / eig.eigenvalues[i];
    }
    let v = eig.eigenvectors;
    Ok(&v * inv_d * v.transpose())
}

/// `M <= N` in the Loewner order, strictly, i.e. lambda_min(N - M) > 0.
pub fn strictly_below(m: &DMatrix<f64>, n: &DMatrix<f64>) -> bool {
    lambda_min(&(n - m)) > 0.0
}

/// Matrix exponential by scaling-and-squaring with a (6,6) Pade approximant.
///
/// Accurate to ~1e-13 relative for the moderate-norm matrices integrated here;
/// unit tests pin it against eigendecompositions and an RK4 reference.
pub fn matrix_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix_exp needs a square matrix");
    let norm = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())) * n as f64;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let a = m / 2f64.powi(squarings as i32);

    // Pade(6,6): exp(A) ~= q(A)^-1 p(A) with p/q built from powers of A.
    let c = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let id = DMatrix::identity(n, n);
    let mut pow = id.clone();
    let mut even = &id * c[0];
    let mut odd = DMatrix::zeros(n, n);
    for (k, &ck) in c.iter().enumerate().skip(1) {
        pow = &pow * &a;
        if k % 2 == 0 {
            even += &pow * ck;
        } else {
            odd += &pow * ck;
        }
    }
    let p = &even + &odd;
    let q = &even - &odd;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Pade denominator must be invertible after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}
