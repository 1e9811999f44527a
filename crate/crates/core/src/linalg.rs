//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// `a^k` by repeated multiplication (exact for defective matrices, unlike
/// an eigendecomposition route).
pub fn matrix_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

/// Powers `a^0, a^1, ..., a^k`.
pub fn matrix_powers(a: &DMatrix<f64>, k: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(k + 1);
    out.push(DMatrix::identity(a.nrows(), a.ncols()));
    for i in 1..=k {
        let next = &out[i - 1] * a;
        out.push(next);
    }
    out
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of the symmetric part of `m`. Returns `-inf` for an
/// empty matrix.
pub fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `m`. Returns `+inf` for an
/// empty matrix.
pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn relu(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| if x < 0.0 { 0.0 } else { x })
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Build a matrix from row-major nested vectors. `ncols_hint` supplies the
/// column count when there are no rows.
pub fn from_rows(rows: &[Vec<f64>], ncols_hint: usize) -> Option<DMatrix<f64>> {
    let ncols = rows.first().map_or(ncols_hint, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
