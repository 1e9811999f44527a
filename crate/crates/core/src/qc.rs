//! Quadratic constraints satisfied by a repeated ReLU.
//!
//! Two multiplier families are provided:
//!
//! * doubly hyperdominant `Q0`, valid for every repeated nonlinearity with
//!   slope in `[0, 1]` through the origin:
//!   `M = [[0, Q0^T], [Q0, -(Q0 + Q0^T)]]`;
//! * the ReLU-specific family built from positivity, positive complement and
//!   complementarity, parameterized by entrywise nonnegative symmetric `Q2`,
//!   `Q3` and a Metzler `Qt`:
//!   `M = [[Q2, -Qt^T - Q2], [-Qt - Q2, Q2 + Q3 + Qt + Qt^T]]`.
//!
//! Both satisfy `[v; w]^T M [v; w] >= 0` for `w = relu(v)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default tolerance for cone-membership predicates.
pub const CONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QcKind {
    DoublyHyperdominant,
    ReluFull,
}

impl QcKind {
    pub fn short_name(self) -> &'static str {
        match self {
            QcKind::DoublyHyperdominant => "dh",
            QcKind::ReluFull => "relu",
        }
    }
}

impl std::str::FromStr for QcKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dh" | "doubly-hyperdominant" => Ok(QcKind::DoublyHyperdominant),
            "relu" | "relu-full" => Ok(QcKind::ReluFull),
            other => Err(Error::Parse(format!("unknown QC class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcClass {
    pub kind: QcKind,
    pub m: usize,
}

/// Decision variables of one multiplier family.
#[derive(Debug, Clone, PartialEq)]
pub enum QcVariables {
    DoublyHyperdominant { q0: DMatrix<f64> },
    ReluFull {
        q2: DMatrix<f64>,
        q3: DMatrix<f64>,
        qt: DMatrix<f64>,
    },
}

/// Assembled symmetric multiplier together with the variables it came from.
/// `scaling` records a diagonal positive-homogeneity scaling applied on top.
#[derive(Debug, Clone, PartialEq)]
pub struct QcMatrix {
    matrix: DMatrix<f64>,
    vars: QcVariables,
    scaling: Option<Vec<f64>>,
}

impl QcMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    pub fn vars(&self) -> &QcVariables {
        &self.vars
    }
    pub fn scaling(&self) -> Option<&[f64]> {
        self.scaling.as_deref()
    }
    /// Half the side length, i.e. the number of repeated nonlinearities.
    pub fn dim(&self) -> usize {
        self.matrix.nrows() / 2
    }
}

fn check_square(q: &DMatrix<f64>) -> bool {
    q.nrows() == q.ncols()
}

/// Off-diagonals `<= tol`, every row and column sum `>= -tol`.
pub fn is_doubly_hyperdominant(q: &DMatrix<f64>, tol: f64) -> bool {
    if !check_square(q) {
        return false;
    }
    let n = q.nrows();
    let off_ok = (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] <= tol));
    off_ok
        && q.row_iter().all(|r| r.sum() >= -tol)
        && q.column_iter().all(|c| c.sum() >= -tol)
}

/// Off-diagonals `>= -tol`; the diagonal is free.
pub fn is_metzler(q: &DMatrix<f64>, tol: f64) -> bool {
    check_square(q) && {
        let n = q.nrows();
        (0..n).all(|i| (0..n).all(|j| i == j || q[(i, j)] >= -tol))
    }
}

/// Symmetric to `tol` with every entry `>= -tol`.
pub fn is_symmetric_nonnegative(q: &DMatrix<f64>, tol: f64) -> bool {
    check_square(q)
        && q.iter().all(|&x| x >= -tol)
        && (0..q.nrows()).all(|i| (0..i).all(|j| (q[(i, j)] - q[(j, i)]).abs() <= tol))
}

fn first_violation(
    q: &DMatrix<f64>,
    cone: &'static str,
    bad: impl Fn(usize, usize, f64) -> bool,
) -> Result<()> {
    for i in 0..q.nrows() {
        for j in 0..q.ncols() {
            if bad(i, j, q[(i, j)]) {
                return Err(Error::ConeViolation { cone, row: i, col: j, value: q[(i, j)] });
            }
        }
    }
    Ok(())
}

impl QcVariables {
    pub fn kind(&self) -> QcKind {
        match self {
            QcVariables::DoublyHyperdominant { .. } => QcKind::DoublyHyperdominant,
            QcVariables::ReluFull { .. } => QcKind::ReluFull,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            QcVariables::DoublyHyperdominant { q0 } => q0.nrows(),
            QcVariables::ReluFull { q2, .. } => q2.nrows(),
        }
    }

    /// Check every cone predicate at `tol`, naming the first violation.
    pub fn check_cones(&self, tol: f64) -> Result<()> {
        match self {
            QcVariables::DoublyHyperdominant { q0 } => {
                if !check_square(q0) {
                    return Err(Error::DimensionMismatch("Q0 must be square".into()));
                }
                if is_doubly_hyperdominant(q0, tol) {
                    return Ok(());
                }
                let n = q0.nrows();
                for i in 0..n {
                    for j in 0..n {
                        if i != j && q0[(i, j)] > tol {
                            return Err(Error::NotDoublyHyperdominant(format!(
                                "off-diagonal entry ({i}, {j}) = {} is positive",
                                q0[(i, j)]
                            )));
                        }
                    }
                    let rs = q0.row(i).sum();
                    if rs < -tol {
                        return Err(Error::NotDoublyHyperdominant(format!("row {i} sums to {rs}")));
                    }
                    let cs = q0.column(i).sum();
                    if cs < -tol {
                        return Err(Error::NotDoublyHyperdominant(format!(
                            "column {i} sums to {cs}"
                        )));
                    }
                }
                unreachable!("predicate failed without a located violation")
            }
            QcVariables::ReluFull { q2, q3, qt } => {
                let m = q2.nrows();
                for (name, q) in [("Q2", q2), ("Q3", q3), ("Qt", qt)] {
                    if q.shape() != (m, m) {
                        return Err(Error::DimensionMismatch(format!(
                            "{name} has shape {:?}, expected ({m}, {m})",
                            q.shape()
                        )));
                    }
                }
                for (name, q) in [("Q2", q2), ("Q3", q3)] {
                    first_violation(q, name, |i, j, x| x < -tol || (x - q[(j, i)]).abs() > tol)?;
                }
                first_violation(qt, "Qt (Metzler)", |i, j, x| i != j && x < -tol)
            }
        }
    }

    /// Multiplier matrix for these variables (no cone check).
    pub fn multiplier(&self) -> DMatrix<f64> {
        match self {
            QcVariables::DoublyHyperdominant { q0 } => {
                let m = q0.nrows();
                let mut out = DMatrix::zeros(2 * m, 2 * m);
                out.view_mut((0, m), (m, m)).copy_from(&q0.transpose());
                out.view_mut((m, 0), (m, m)).copy_from(q0);
                out.view_mut((m, m), (m, m)).copy_from(&-(q0 + q0.transpose()));
                out
            }
            QcVariables::ReluFull { q2, q3, qt } => {
                let m = q2.nrows();
                let q2s = linalg::symmetrize(q2);
                let q3s = linalg::symmetrize(q3);
                let off = -(qt + &q2s);
                let mut out = DMatrix::zeros(2 * m, 2 * m);
                out.view_mut((0, 0), (m, m)).copy_from(&q2s);
                out.view_mut((0, m), (m, m)).copy_from(&off.transpose());
                out.view_mut((m, 0), (m, m)).copy_from(&off);
                // Grouped so each summand is exactly symmetric.
                out.view_mut((m, m), (m, m))
                    .copy_from(&((&q2s + &q3s) + (qt + qt.transpose())));
                out
            }
        }
    }

    /// Entrywise `Lambda Q Lambda` for diagonal `Lambda`.
    fn scaled(&self, lambda: &[f64]) -> QcVariables {
        let s = |q: &DMatrix<f64>| {
            DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| lambda[i] * q[(i, j)] * lambda[j])
        };
        match self {
            QcVariables::DoublyHyperdominant { q0 } => QcVariables::DoublyHyperdominant { q0: s(q0) },
            QcVariables::ReluFull { q2, q3, qt } => QcVariables::ReluFull {
                q2: s(q2),
                q3: s(q3),
                qt: s(qt),
            },
        }
    }
}

/// Assemble the slope-restricted multiplier from a doubly hyperdominant `Q0`.
pub fn assemble_m_dh(q0: DMatrix<f64>) -> Result<QcMatrix> {
    let vars = QcVariables::DoublyHyperdominant { q0 };
    vars.check_cones(CONE_TOL)?;
    Ok(QcMatrix { matrix: vars.multiplier(), vars, scaling: None })
}

/// Assemble the ReLU-specific multiplier.
pub fn assemble_m_relu(q2: DMatrix<f64>, q3: DMatrix<f64>, qt: DMatrix<f64>) -> Result<QcMatrix> {
    let vars = QcVariables::ReluFull { q2, q3, qt };
    vars.check_cones(CONE_TOL)?;
    Ok(QcMatrix { matrix: vars.multiplier(), vars, scaling: None })
}

/// Assemble from either family.
pub fn assemble(vars: QcVariables) -> Result<QcMatrix> {
    vars.check_cones(CONE_TOL)?;
    Ok(QcMatrix { matrix: vars.multiplier(), vars, scaling: None })
}

/// Positive-homogeneity scaling `diag(L, L) M diag(L, L)` with `L = diag(lambda)`.
pub fn scale_m(qc: &QcMatrix, lambda: &[f64]) -> Result<QcMatrix> {
    let m = qc.dim();
    if lambda.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "scaling has {} entries, multiplier dimension is {m}",
            lambda.len()
        )));
    }
    if let Some((index, &value)) = lambda.iter().enumerate().find(|(_, &l)| !(l >= 0.0)) {
        return Err(Error::NegativeLambda { index, value });
    }
    let full: Vec<f64> = lambda.iter().chain(lambda).copied().collect();
    let matrix = DMatrix::from_fn(2 * m, 2 * m, |i, j| full[i] * qc.matrix[(i, j)] * full[j]);
    let combined = match &qc.scaling {
        Some(prev) => prev.iter().zip(lambda).map(|(a, b)| a * b).collect(),
        None => lambda.to_vec(),
    };
    Ok(QcMatrix { matrix, vars: qc.vars.clone(), scaling: Some(combined) })
}

impl QcMatrix {
    /// Variables of the scaled multiplier: `Lambda Q Lambda` for each block.
    /// These reproduce [`QcMatrix::matrix`] exactly via `multiplier()`.
    pub fn effective_vars(&self) -> QcVariables {
        match &self.scaling {
            Some(l) => self.vars.scaled(l),
            None => self.vars.clone(),
        }
    }
}

/// `[v; w]^T M [v; w]`.
pub fn quadratic_form(m: &DMatrix<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let n = v.len();
    let z = DVector::from_fn(2 * n, |i, _| if i < n { v[i] } else { w[i - n] });
    z.dot(&(m * &z))
}

/// QC residual `[v; relu(v)]^T M [v; relu(v)]`.
pub fn qc_residual(qc: &QcMatrix, v: &DVector<f64>) -> Result<f64> {
    if v.len() != qc.dim() {
        return Err(Error::DimensionMismatch(format!(
            "input of length {} for a multiplier of dimension {}",
            v.len(),
            qc.dim()
        )));
    }
    Ok(quadratic_form(&qc.matrix, v, &linalg::relu(v)))
}

/// Seeded random cone member. Magnitudes are drawn log-uniformly over four
/// decades; about a quarter of the off-diagonal entries are exactly zero, and
/// some doubly hyperdominant samples sit on the row/column-sum boundary.
pub fn sample_qc_variables(class: QcClass, seed: u64) -> QcVariables {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = class.m;
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    let mag = |rng: &mut ChaCha8Rng| -> f64 {
        if rng.random_bool(0.25) {
            0.0
        } else {
            scale * rng.random::<f64>()
        }
    };
    match class.kind {
        QcKind::DoublyHyperdominant => {
            let mut q0 = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        q0[(i, j)] = -mag(&mut rng);
                    }
                }
            }
            let tight = rng.random_bool(0.3);
            for i in 0..m {
                let row: f64 = (0..m).filter(|&j| j != i).map(|j| -q0[(i, j)]).sum();
                let col: f64 = (0..m).filter(|&j| j != i).map(|j| -q0[(j, i)]).sum();
                let slack = if tight { 0.0 } else { scale * rng.random::<f64>() };
                q0[(i, i)] = row.max(col) + slack;
            }
            QcVariables::DoublyHyperdominant { q0 }
        }
        QcKind::ReluFull => {
            let sym = |rng: &mut ChaCha8Rng| {
                let mut q = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in 0..=i {
                        let x = mag(rng);
                        q[(i, j)] = x;
                        q[(j, i)] = x;
                    }
                }
                q
            };
            let q2 = sym(&mut rng);
            let q3 = sym(&mut rng);
            let mut qt = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..m {
                    qt[(i, j)] = if i == j {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        scale * g
                    } else {
                        mag(&mut rng)
                    };
                }
            }
            QcVariables::ReluFull { q2, q3, qt }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }
    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn dh_predicate() {
        assert!(is_doubly_hyperdominant(&DMatrix::identity(3, 3), CONE_TOL));
        assert!(is_doubly_hyperdominant(&mat(2, 2, &[1.0, -1.0, -1.0, 1.0]), CONE_TOL));
        assert!(!is_doubly_hyperdominant(&mat(2, 2, &[1.0, -2.0, 0.0, 1.0]), CONE_TOL));
        assert!(!is_doubly_hyperdominant(&mat(2, 2, &[1.0, 0.1, 0.0, 1.0]), CONE_TOL));
    }

    #[test]
    fn metzler_predicate() {
        assert!(is_metzler(&mat(2, 2, &[-5.0, 0.1, 0.0, 3.0]), CONE_TOL));
        assert!(is_metzler(&DMatrix::identity(2, 2), CONE_TOL));
        assert!(!is_metzler(&mat(2, 2, &[1.0, -0.1, 0.0, 1.0]), CONE_TOL));
    }

    #[test]
    fn dh_scalar_sector() {
        let qc = assemble_m_dh(DMatrix::identity(1, 1)).unwrap();
        assert_eq!(qc.matrix(), &mat(2, 2, &[0.0, 1.0, 1.0, -2.0]));
        assert_eq!(qc_residual(&qc, &vec(&[3.0])).unwrap(), 0.0);
    }

    #[test]
    fn dh_two_channel_residual() {
        // 2 w^T Q0 (v - w) with w = (1, 0), v - w = (0, -1): 2 * (1 * 1 * 0 + 1 * -1 * -1) = 2.
        let qc = assemble_m_dh(mat(2, 2, &[1.0, -1.0, -1.0, 1.0])).unwrap();
        assert!((qc_residual(&qc, &vec(&[1.0, -1.0])).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dh_zero_multiplier() {
        let qc = assemble_m_dh(DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(qc.matrix(), &DMatrix::zeros(4, 4));
        assert_eq!(qc_residual(&qc, &vec(&[1.0, -3.0])).unwrap(), 0.0);
    }

    #[test]
    fn dh_rejects_non_member() {
        let err = assemble_m_dh(mat(2, 2, &[1.0, -2.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::NotDoublyHyperdominant(_)));
    }

    #[test]
    fn relu_complementarity_multiplier() {
        let z = DMatrix::zeros(1, 1);
        let qc = assemble_m_relu(z.clone(), z, DMatrix::identity(1, 1)).unwrap();
        assert_eq!(qc.matrix(), &mat(2, 2, &[0.0, -1.0, -1.0, 2.0]));
        assert_eq!(qc_residual(&qc, &vec(&[1.0])).unwrap(), 0.0);
        assert_eq!(qc_residual(&qc, &vec(&[-1.0])).unwrap(), 0.0);
    }

    #[test]
    fn relu_positive_complement_term() {
        let z = DMatrix::zeros(1, 1);
        let qc = assemble_m_relu(DMatrix::identity(1, 1), z.clone(), z).unwrap();
        assert_eq!(qc_residual(&qc, &vec(&[-2.0])).unwrap(), 4.0);
    }

    #[test]
    fn relu_rejects_negative_metzler_offdiag() {
        let z = DMatrix::zeros(2, 2);
        let err = assemble_m_relu(z.clone(), z, mat(2, 2, &[0.0, -1.0, 0.0, 0.0])).unwrap_err();
        assert_eq!(
            err,
            Error::ConeViolation { cone: "Qt (Metzler)", row: 0, col: 1, value: -1.0 }
        );
    }

    #[test]
    fn scaling_identity_zero_and_dh_escape() {
        let q0 = mat(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let qc = assemble_m_dh(q0).unwrap();
        assert_eq!(scale_m(&qc, &[1.0, 1.0]).unwrap().matrix(), qc.matrix());
        assert_eq!(scale_m(&qc, &[0.0, 0.0]).unwrap().matrix(), &DMatrix::zeros(4, 4));

        let scaled = scale_m(&qc, &[1.0, 2.0]).unwrap();
        let QcVariables::DoublyHyperdominant { q0: sq0 } = scaled.effective_vars() else {
            panic!("family preserved");
        };
        assert_eq!(sq0, mat(2, 2, &[1.0, -2.0, -2.0, 4.0]));
        assert!(!is_doubly_hyperdominant(&sq0, CONE_TOL));
        assert_eq!(&scaled.effective_vars().multiplier(), scaled.matrix());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let v = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            assert!(qc_residual(&scaled, &v).unwrap() >= -1e-12);
        }
        assert!(matches!(scale_m(&qc, &[1.0, -1.0]), Err(Error::NegativeLambda { index: 1, .. })));
    }

    #[test]
    fn residual_dimension_checked() {
        let qc = assemble_m_dh(DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(qc_residual(&qc, &vec(&[1.0])), Err(Error::DimensionMismatch(_))));
        assert_eq!(qc_residual(&qc, &vec(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn samples_are_members_and_deterministic() {
        for kind in [QcKind::DoublyHyperdominant, QcKind::ReluFull] {
            let class = QcClass { kind, m: 4 };
            let a = sample_qc_variables(class, 11);
            assert!(a.check_cones(CONE_TOL).is_ok());
            assert_eq!(a, sample_qc_variables(class, 11));
            assert_eq!(a.kind(), kind);
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("relu".parse::<QcKind>().unwrap(), QcKind::ReluFull);
        assert_eq!("DH".parse::<QcKind>().unwrap(), QcKind::DoublyHyperdominant);
        assert!("circle".parse::<QcKind>().is_err());
    }
}
