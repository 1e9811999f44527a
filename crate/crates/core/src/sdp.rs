//! Narrow conic-program interface used by the certifier, and its Clarabel
//! implementation.
//!
//! A [`ConicProgram`] minimizes a linear objective over a decision vector
//! subject to affine symmetric-matrix constraints `F0 + sum_i x_i F_i >= 0`
//! (positive semidefinite) and scalar affine constraints `c + a^T x >= 0`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};

/// `constant + sum (x[var] * coeff)`, required to be positive semidefinite.
#[derive(Debug, Clone)]
pub struct SymAffine {
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl SymAffine {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (var, coeff) in &self.terms {
            out += coeff * x[*var];
        }
        out
    }
}

/// `constant + sum (x[var] * coeff) >= 0`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinearConstraint {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(i, a)| a * x[*i]).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub num_vars: usize,
    /// Minimized.
    pub objective: Vec<f64>,
    pub psd: Vec<SymAffine>,
    pub nonneg: Vec<LinearConstraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Solved,
    /// Converged to reduced accuracy.
    AlmostSolved,
    PrimalInfeasible,
    DualInfeasible,
    /// Iteration limit, stalled progress or numerical breakdown.
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    /// Backend's own status label.
    pub backend_status: String,
}

pub trait ConicBackend: Sync {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    /// Gap and feasibility tolerance handed to the interior-point method.
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200, verbose: false }
    }
}

impl SolverSettings {
    /// Defaults overridden by `RELUQC_SOLVER_TOL` and `RELUQC_MAX_ITER`.
    pub fn from_env() -> Self {
        let mut s = Self::default();
        if let Some(tol) = std::env::var("RELUQC_SOLVER_TOL").ok().and_then(|v| v.parse().ok()) {
            s.tol = tol;
        }
        if let Some(it) = std::env::var("RELUQC_MAX_ITER").ok().and_then(|v| v.parse().ok()) {
            s.max_iter = it;
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub settings: SolverSettings,
}

impl ClarabelBackend {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings }
    }
}

/// Entries below this fraction of a coefficient matrix's largest entry are
/// roundoff from forming products and are dropped.
const DROP_REL: f64 = 1e-14;

/// Upper triangle, column-major, off-diagonals scaled by sqrt(2): the layout
/// of Clarabel's PSD triangle cone.
fn svec_into(m: &DMatrix<f64>, out: &mut Vec<(usize, f64)>, offset: usize, negate: bool) {
    let n = m.nrows();
    let sign = if negate { -1.0 } else { 1.0 };
    let cutoff = DROP_REL * m.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    let mut k = offset;
    for j in 0..n {
        for i in 0..=j {
            let v = if i == j {
                m[(i, j)]
            } else {
                std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            if v.abs() > cutoff {
                out.push((k, sign * v));
            }
            k += 1;
        }
    }
}

fn status_of(s: SolverStatus) -> SolveStatus {
    match s {
        SolverStatus::Solved => SolveStatus::Solved,
        SolverStatus::AlmostSolved => SolveStatus::AlmostSolved,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::PrimalInfeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            SolveStatus::DualInfeasible
        }
        _ => SolveStatus::Inconclusive,
    }
}

impl ConicBackend for ClarabelBackend {
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution> {
        let n = program.num_vars;
        // Rows of A as (row, col, value) triplets; Clarabel uses A x + s = b.
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();

        if !program.nonneg.is_empty() {
            for c in &program.nonneg {
                let r = b.len();
                for &(var, a) in &c.terms {
                    if a != 0.0 {
                        rows.push(r);
                        cols.push(var);
                        vals.push(-a);
                    }
                }
                b.push(c.constant);
            }
            cones.push(SupportedConeT::NonnegativeConeT(program.nonneg.len()));
        }
        let mut scratch = Vec::new();
        for lmi in program.psd.iter().filter(|l| l.dim() > 0) {
            let dim = lmi.dim();
            let offset = b.len();
            let len = dim * (dim + 1) / 2;
            b.resize(offset + len, 0.0);
            scratch.clear();
            svec_into(&lmi.constant, &mut scratch, offset, false);
            for &(k, v) in &scratch {
                b[k] = v;
            }
            for (var, coeff) in &lmi.terms {
                scratch.clear();
                svec_into(coeff, &mut scratch, offset, true);
                for &(k, v) in &scratch {
                    rows.push(k);
                    cols.push(*var);
                    vals.push(v);
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(dim));
        }

        let a = triplets_to_csc(b.len(), n, &rows, &cols, &vals);
        let p = CscMatrix::<f64>::zeros((n, n));
        let tol = self.settings.tol;
        let settings = DefaultSettingsBuilder::default()
            .verbose(self.settings.verbose)
            .max_iter(self.settings.max_iter)
            .tol_gap_abs(tol)
            .tol_gap_rel(tol)
            .tol_feas(tol)
            .build()
            .map_err(|e| Error::SolverFailure { status: e.to_string(), alpha: None })?;
        let mut solver = DefaultSolver::new(&p, &program.objective, &a, &b, &cones, settings)
            .map_err(|e| Error::SolverFailure { status: e.to_string(), alpha: None })?;
        solver.solve();
        let sol = &solver.solution;
        Ok(ConicSolution {
            status: status_of(sol.status),
            x: sol.x.clone(),
            objective: sol.obj_val,
            iterations: sol.iterations,
            backend_status: format!("{:?}", sol.status),
        })
    }
}

fn triplets_to_csc(
    m: usize,
    n: usize,
    rows: &[usize],
    cols: &[usize],
    vals: &[f64],
) -> CscMatrix<f64> {
    // Sum duplicates after sorting by (col, row).
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_unstable_by_key(|&k| (cols[k], rows[k]));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(vals.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(vals.len());
    let mut last: Option<(usize, usize)> = None;
    for &k in &order {
        let key = (cols[k], rows[k]);
        if last == Some(key) {
            *nzval.last_mut().expect("duplicate follows an entry") += vals[k];
        } else {
            rowval.push(rows[k]);
            nzval.push(vals[k]);
            colptr[cols[k] + 1] += 1;
            last = Some(key);
        }
    }
    for j in 0..n {
        colptr[j + 1] += colptr[j];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_min_eigenvalue_lower_bound() {
        // maximize t s.t. diag(1, 2) - t I >= 0 and t <= 5.
        let program = ConicProgram {
            num_vars: 1,
            objective: vec![-1.0],
            psd: vec![SymAffine {
                constant: DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0])),
                terms: vec![(0, -DMatrix::identity(2, 2))],
            }],
            nonneg: vec![LinearConstraint { constant: 5.0, terms: vec![(0, -1.0)] }],
        };
        let sol = ClarabelBackend::default().solve(&program).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn off_diagonal_coupling() {
        // minimize y s.t. [[y, 1], [1, 1]] >= 0  ->  y = 1.
        let mut f0 = DMatrix::zeros(2, 2);
        f0[(0, 1)] = 1.0;
        f0[(1, 0)] = 1.0;
        f0[(1, 1)] = 1.0;
        let mut f1 = DMatrix::zeros(2, 2);
        f1[(0, 0)] = 1.0;
        let program = ConicProgram {
            num_vars: 1,
            objective: vec![1.0],
            psd: vec![SymAffine { constant: f0, terms: vec![(0, f1)] }],
            nonneg: vec![],
        };
        let sol = ClarabelBackend::default().solve(&program).unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-6, "{:?}", sol.x);
    }

    #[test]
    fn infeasible_detected() {
        // -1 - x^2 style: [[-1]] + x * 0 >= 0 is infeasible.
        let program = ConicProgram {
            num_vars: 1,
            objective: vec![0.0],
            psd: vec![],
            nonneg: vec![
                LinearConstraint { constant: -1.0, terms: vec![(0, 1.0)] },
                LinearConstraint { constant: 0.0, terms: vec![(0, -1.0)] },
            ],
        };
        let sol = ClarabelBackend::default().solve(&program).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    }

    #[test]
    fn duplicate_triplets_summed() {
        let a = triplets_to_csc(2, 2, &[0, 0, 1], &[1, 1, 0], &[1.0, 2.0, 5.0]);
        assert_eq!(a.colptr, vec![0, 1, 2]);
        assert_eq!(a.nzval, vec![5.0, 3.0]);
    }
}
