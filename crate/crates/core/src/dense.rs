//! Thin helpers over faer for the dense Hermitian work.

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::C64;

pub fn eigh(a: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Backend(format!("{e:?}")))?;
    let vals = (0..a.nrows()).map(|i| evd.S()[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

pub fn eigvalsh(a: MatRef<'_, C64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Backend(format!("{e:?}")))
}

pub fn singular_values(a: MatRef<'_, C64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values().map_err(|e| Error::Backend(format!("{e:?}")))
}

/// Spectral norm.
pub fn op_norm(a: MatRef<'_, C64>) -> Result<f64> {
    Ok(singular_values(a)?.first().copied().unwrap_or(0.0))
}

pub fn max_abs(a: MatRef<'_, C64>) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn hermitian_defect(a: MatRef<'_, C64>) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..=j.min(a.nrows().saturating_sub(1)) {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

/// Orthonormal basis of the range of a Hermitian projector (eigenvectors with
/// eigenvalue above ½).
pub fn projector_range(p: MatRef<'_, C64>) -> Result<Mat<C64>> {
    let (vals, vecs) = eigh(p)?;
    let cols: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 0.5).collect();
    Ok(Mat::from_fn(p.nrows(), cols.len(), |i, j| vecs[(i, cols[j])]))
}

pub fn identity(n: usize) -> Mat<C64> {
    Mat::from_fn(n, n, |i, j| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
}
