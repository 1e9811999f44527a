//! Dissipativity LMI over the lifted plant, its conic encoding, and the two
//! drivers built on it: gain minimization and stability-margin bisection.
//!
//! With `z = [x; W_N; D_N]` the LMI is
//!
//! ```text
//! L(P, M, g) = F^T P F - diag(P, 0, g I) + Ge^T Ge + H^T M H
//! F  = [A^N  B1N  B2N]
//! Ge = [C2N  D21N D22N]
//! H  = [C1N  D11N D12N; 0 I 0]
//! ```
//!
//! and a certificate is any `P >= 0`, cone-feasible multiplier and `g = gamma^2`
//! with `L < 0`. Dropping the `D_N` rows/columns gives the stability-only test.

use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lifting::{lift, LiftedSystem};
use crate::linalg::{self, to_rows};
use crate::qc::{QcClass, QcKind, QcVariables};
use crate::sdp::{
    ClarabelBackend, ConicBackend, ConicProgram, LinearConstraint, SolveStatus, SolverSettings,
    SymAffine,
};
use crate::sysmodel::{check_well_posed, StateSpace, WellPosedStatus};

/// Optimal slack above this counts as strictly feasible.
pub const FEASIBILITY_THRESHOLD: f64 = 1e-7;
/// Required LMI eigenvalue margin, relative to the coefficient scale.
pub const LMI_MARGIN_REL: f64 = 1e-7;
/// Allowed negative eigenvalue of a returned storage matrix.
pub const P_PSD_TOL: f64 = 1e-8;
/// Cone tolerance applied to solver-returned multipliers.
pub const CERT_CONE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QcSlices {
    DoublyHyperdominant { q0: Range<usize> },
    ReluFull { q2: Range<usize>, q3: Range<usize>, qt: Range<usize> },
}

/// Position of each named block inside the decision vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarLayout {
    /// Upper triangle of `P`, row by row.
    pub p: Range<usize>,
    pub qc: QcSlices,
    pub gamma_sq: Option<usize>,
    pub margin: Option<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Maximize `t` subject to `L <= -t I`, `t <= 1`.
    MaxMargin,
    /// Minimize `gamma^2` subject to `L <= -slack I`.
    MinGain { slack: f64 },
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub layout: VarLayout,
    pub class: QcClass,
    pub n_x: usize,
    pub lmi_dim: usize,
    pub include_performance: bool,
    pub objective: Objective,
    /// `max(1, largest |entry|)` over the lifted plant.
    pub scale: f64,
    pub program: ConicProgram,
}

/// Index pairs `(i, j)`, `i <= j`, in row order.
fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

/// `a^T b + b^T a` for row vectors `a`, `b`.
fn sym_outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let ab = a * b.transpose();
    &ab + ab.transpose()
}

fn sym_basis_outer(rows: &[DVector<f64>], i: usize, j: usize) -> DMatrix<f64> {
    if i == j {
        &rows[i] * rows[i].transpose()
    } else {
        sym_outer(&rows[i], &rows[j])
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.nrows()).map(|i| m.row(i).transpose()).collect()
}

fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks[0].nrows();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

struct LmiFactors {
    /// `[A^N B1N (B2N)]`.
    f: DMatrix<f64>,
    /// `[C2N D21N (D22N)]`.
    ge: DMatrix<f64>,
    /// `[C1N D11N (D12N)]`.
    hv: DMatrix<f64>,
    /// `[0 I (0)]`.
    hw: DMatrix<f64>,
}

fn lmi_factors(lifted: &LiftedSystem, include_performance: bool) -> LmiFactors {
    let n_x = lifted.an.nrows();
    let m = lifted.qc_dim();
    let mut hw_eye = DMatrix::zeros(m, n_x + m);
    hw_eye.view_mut((0, n_x), (m, m)).fill_with_identity();
    if include_performance {
        let nd = lifted.b2n.ncols();
        let hw = hstack(&[&hw_eye, &DMatrix::zeros(m, nd)]);
        LmiFactors {
            f: hstack(&[&lifted.an, &lifted.b1n, &lifted.b2n]),
            ge: hstack(&[&lifted.c2n, &lifted.d21n, &lifted.d22n]),
            hv: hstack(&[&lifted.c1n, &lifted.d11n, &lifted.d12n]),
            hw,
        }
    } else {
        LmiFactors {
            f: hstack(&[&lifted.an, &lifted.b1n]),
            ge: hstack(&[&lifted.c2n, &lifted.d21n]),
            hv: hstack(&[&lifted.c1n, &lifted.d11n]),
            hw: hw_eye,
        }
    }
}

/// Build the conic program for one lifted plant and multiplier family.
pub fn assemble_lmi(
    lifted: &LiftedSystem,
    class: QcClass,
    include_performance: bool,
    objective: Objective,
) -> Result<SdpProblem> {
    let n_x = lifted.an.nrows();
    let m = lifted.qc_dim();
    if class.m != m {
        return Err(Error::DimensionMismatch(format!(
            "QC dimension {} does not match n_v * N = {m}",
            class.m
        )));
    }
    if matches!(objective, Objective::MinGain { .. }) && !include_performance {
        return Err(Error::InvalidOptions(
            "gain minimization needs the performance block".into(),
        ));
    }
    let LmiFactors { f, ge, hv, hw } = lmi_factors(lifted, include_performance);
    let dim = f.ncols();
    let f_rows = rows_of(&f);
    let hw_rows = rows_of(&hw);
    // g_j = row j of (H_v - H_w), so (v - w)_j = g_j z.
    let g_rows = rows_of(&(&hv - &hw));

    let mut next = 0usize;
    let mut take = |len: usize| {
        let r = next..next + len;
        next += len;
        r
    };
    let p_pairs = upper_pairs(n_x);
    let p_range = take(p_pairs.len());
    let qc = match class.kind {
        QcKind::DoublyHyperdominant => QcSlices::DoublyHyperdominant { q0: take(m * m) },
        QcKind::ReluFull => {
            let tri = m * (m + 1) / 2;
            QcSlices::ReluFull { q2: take(tri), q3: take(tri), qt: take(m * m) }
        }
    };
    let gamma_sq = include_performance.then(|| take(1).start);
    let margin = matches!(objective, Objective::MaxMargin).then(|| take(1).start);
    let total = next;

    // The constraint matrix is S = -L(x) - t I (or - slack I).
    let mut terms: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(total);
    for (k, &(i, j)) in p_pairs.iter().enumerate() {
        let mut coeff = sym_basis_outer(&f_rows, i, j);
        if i == j {
            coeff[(i, i)] -= 1.0;
        } else {
            coeff[(i, j)] -= 1.0;
            coeff[(j, i)] -= 1.0;
        }
        terms.push((p_range.start + k, -coeff));
    }
    match &qc {
        QcSlices::DoublyHyperdominant { q0 } => {
            // 2 w^T Q0 (v - w)
            for k in 0..m {
                for j in 0..m {
                    let coeff = sym_outer(&hw_rows[k], &g_rows[j]);
                    terms.push((q0.start + k * m + j, -coeff));
                }
            }
        }
        QcSlices::ReluFull { q2, q3, qt } => {
            // (v - w)^T Q2 (v - w) + w^T Q3 w - 2 w^T Qt (v - w)
            for (k, &(i, j)) in upper_pairs(m).iter().enumerate() {
                terms.push((q2.start + k, -sym_basis_outer(&g_rows, i, j)));
                terms.push((q3.start + k, -sym_basis_outer(&hw_rows, i, j)));
            }
            for k in 0..m {
                for j in 0..m {
                    terms.push((qt.start + k * m + j, sym_outer(&hw_rows[k], &g_rows[j])));
                }
            }
        }
    }
    if let Some(g) = gamma_sq {
        let nd = dim - n_x - m;
        let mut coeff = DMatrix::zeros(dim, dim);
        coeff
            .view_mut((n_x + m, n_x + m), (nd, nd))
            .fill_with_identity();
        terms.push((g, coeff));
    }
    let mut constant = -(ge.transpose() * &ge);
    match objective {
        Objective::MaxMargin => {
            terms.push((margin.expect("margin slot"), -DMatrix::identity(dim, dim)));
        }
        Objective::MinGain { slack } => {
            for i in 0..dim {
                constant[(i, i)] -= slack;
            }
        }
    }
    terms.retain(|(_, c)| c.iter().any(|&x| x != 0.0));
    let lmi = SymAffine { constant, terms };

    let p_psd = SymAffine {
        constant: DMatrix::zeros(n_x, n_x),
        terms: p_pairs
            .iter()
            .enumerate()
            .map(|(k, &(i, j))| {
                let mut e = DMatrix::zeros(n_x, n_x);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                (p_range.start + k, e)
            })
            .collect(),
    };

    let mut nonneg = Vec::new();
    let ge0 = |terms: Vec<(usize, f64)>| LinearConstraint { constant: 0.0, terms };
    match &qc {
        QcSlices::DoublyHyperdominant { q0 } => {
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        nonneg.push(ge0(vec![(q0.start + i * m + j, -1.0)]));
                    }
                }
            }
            for i in 0..m {
                nonneg.push(ge0((0..m).map(|j| (q0.start + i * m + j, 1.0)).collect()));
                nonneg.push(ge0((0..m).map(|j| (q0.start + j * m + i, 1.0)).collect()));
            }
        }
        QcSlices::ReluFull { q2, q3, qt } => {
            for k in q2.clone().chain(q3.clone()) {
                nonneg.push(ge0(vec![(k, 1.0)]));
            }
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        nonneg.push(ge0(vec![(qt.start + i * m + j, 1.0)]));
                    }
                }
            }
        }
    }
    if let Some(g) = gamma_sq {
        nonneg.push(ge0(vec![(g, 1.0)]));
    }
    let mut cost = vec![0.0; total];
    match objective {
        Objective::MaxMargin => {
            let t = margin.expect("margin slot");
            nonneg.push(LinearConstraint { constant: 1.0, terms: vec![(t, -1.0)] });
            cost[t] = -1.0;
        }
        Objective::MinGain { .. } => cost[gamma_sq.expect("gamma slot")] = 1.0,
    }

    Ok(SdpProblem {
        layout: VarLayout { p: p_range, qc, gamma_sq, margin, total },
        class,
        n_x,
        lmi_dim: dim,
        include_performance,
        objective,
        scale: lifted.coefficient_scale(),
        program: ConicProgram { num_vars: total, objective: cost, psd: vec![lmi, p_psd], nonneg },
    })
}

/// Variables read back out of a decision vector.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub p: DMatrix<f64>,
    pub qc_vars: QcVariables,
    pub gamma_sq: Option<f64>,
    pub margin: Option<f64>,
}

impl SdpProblem {
    pub fn recover(&self, x: &[f64]) -> Recovered {
        let n = self.n_x;
        let m = self.class.m;
        let mut p = DMatrix::zeros(n, n);
        for (k, (i, j)) in upper_pairs(n).into_iter().enumerate() {
            p[(i, j)] = x[self.layout.p.start + k];
            p[(j, i)] = p[(i, j)];
        }
        let full = |r: &Range<usize>| DMatrix::from_row_slice(m, m, &x[r.clone()]);
        let sym = |r: &Range<usize>| {
            let mut q = DMatrix::zeros(m, m);
            for (k, (i, j)) in upper_pairs(m).into_iter().enumerate() {
                q[(i, j)] = x[r.start + k];
                q[(j, i)] = q[(i, j)];
            }
            q
        };
        let qc_vars = match &self.layout.qc {
            QcSlices::DoublyHyperdominant { q0 } => QcVariables::DoublyHyperdominant { q0: full(q0) },
            QcSlices::ReluFull { q2, q3, qt } => QcVariables::ReluFull {
                q2: sym(q2),
                q3: sym(q3),
                qt: full(qt),
            },
        };
        Recovered {
            p,
            qc_vars,
            gamma_sq: self.layout.gamma_sq.map(|g| x[g]),
            margin: self.layout.margin.map(|t| x[t]),
        }
    }
}

/// Evaluate the LMI directly from the lifted matrices, the storage matrix and
/// an assembled multiplier, independently of the conic encoding. `gamma_sq`
/// of `None` gives the stability-only block (states and `W_N`).
pub fn evaluate_lmi(
    lifted: &LiftedSystem,
    p: &DMatrix<f64>,
    multiplier: &DMatrix<f64>,
    gamma_sq: Option<f64>,
) -> DMatrix<f64> {
    let n_x = lifted.an.nrows();
    let m = lifted.qc_dim();
    let perf = gamma_sq.is_some();
    let nd = if perf { lifted.b2n.ncols() } else { 0 };
    let dim = n_x + m + nd;

    let an = &lifted.an;
    let b1 = &lifted.b1n;
    let b2 = &lifted.b2n;
    let mut storage = DMatrix::zeros(dim, dim);
    storage
        .view_mut((0, 0), (n_x, n_x))
        .copy_from(&(an.transpose() * p * an - p));
    let xw = an.transpose() * p * b1;
    storage.view_mut((0, n_x), (n_x, m)).copy_from(&xw);
    storage.view_mut((n_x, 0), (m, n_x)).copy_from(&xw.transpose());
    storage
        .view_mut((n_x, n_x), (m, m))
        .copy_from(&(b1.transpose() * p * b1));
    if let Some(g) = gamma_sq {
        let xd = an.transpose() * p * b2;
        let wd = b1.transpose() * p * b2;
        storage.view_mut((0, n_x + m), (n_x, nd)).copy_from(&xd);
        storage.view_mut((n_x + m, 0), (nd, n_x)).copy_from(&xd.transpose());
        storage.view_mut((n_x, n_x + m), (m, nd)).copy_from(&wd);
        storage.view_mut((n_x + m, n_x), (nd, m)).copy_from(&wd.transpose());
        storage
            .view_mut((n_x + m, n_x + m), (nd, nd))
            .copy_from(&(b2.transpose() * p * b2 - DMatrix::identity(nd, nd) * g));
    }

    let mut out_map = DMatrix::zeros(lifted.c2n.nrows(), dim);
    out_map.columns_mut(0, n_x).copy_from(&lifted.c2n);
    out_map.columns_mut(n_x, m).copy_from(&lifted.d21n);
    let mut h = DMatrix::zeros(2 * m, dim);
    h.view_mut((0, 0), (m, n_x)).copy_from(&lifted.c1n);
    h.view_mut((0, n_x), (m, m)).copy_from(&lifted.d11n);
    h.view_mut((m, n_x), (m, m)).fill_with_identity();
    if perf {
        out_map.columns_mut(n_x + m, nd).copy_from(&lifted.d22n);
        h.view_mut((0, n_x + m), (m, nd)).copy_from(&lifted.d12n);
    }
    storage + out_map.transpose() * &out_map + h.transpose() * multiplier * h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CertificateKind {
    GainBound,
    StabilityMargin,
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub p: DMatrix<f64>,
    pub qc_vars: QcVariables,
    pub horizon: usize,
    /// Achieved slack `t` (margin mode) or the imposed slack (gain mode).
    pub margin: f64,
    pub solver_status: String,
    pub wallclock_seconds: f64,
}

impl Certificate {
    pub fn qc_kind(&self) -> QcKind {
        self.qc_vars.kind()
    }

    pub fn multiplier(&self) -> DMatrix<f64> {
        self.qc_vars.multiplier()
    }

    /// `gamma^2` if this is a gain certificate; `None` selects the
    /// stability-only LMI block.
    pub fn gamma_sq(&self) -> Option<f64> {
        match self.kind {
            CertificateKind::GainBound => self.gamma.map(|g| g * g),
            CertificateKind::StabilityMargin => None,
        }
    }

    pub fn to_report(&self) -> CertificateReport {
        let (q0, q2, q3, qt) = match &self.qc_vars {
            QcVariables::DoublyHyperdominant { q0 } => (Some(to_rows(q0)), None, None, None),
            QcVariables::ReluFull { q2, q3, qt } => {
                (None, Some(to_rows(q2)), Some(to_rows(q3)), Some(to_rows(qt)))
            }
        };
        CertificateReport {
            kind: self.kind,
            qc_class: self.qc_kind().short_name(),
            horizon: self.horizon,
            gamma: self.gamma,
            alpha: self.alpha,
            margin: self.margin,
            solver_status: self.solver_status.clone(),
            wallclock_seconds: self.wallclock_seconds,
            p: to_rows(&self.p),
            q0,
            q2,
            q3,
            qt,
        }
    }
}

/// JSON form of a [`Certificate`]; matrices as row-major nested arrays.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub kind: CertificateKind,
    pub qc_class: &'static str,
    pub horizon: usize,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub margin: f64,
    pub solver_status: String,
    pub wallclock_seconds: f64,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q0", skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q2", skip_serializing_if = "Option::is_none")]
    pub q2: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q3", skip_serializing_if = "Option::is_none")]
    pub q3: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Qt", skip_serializing_if = "Option::is_none")]
    pub qt: Option<Vec<Vec<f64>>>,
}

/// Outcome of re-checking a certificate from raw matrices.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateCheck {
    pub lmi_max_eigenvalue: f64,
    pub scale: f64,
    pub p_min_eigenvalue: f64,
    pub cones_ok: bool,
    pub passed: bool,
}

/// Independent verification: `lambda_max(L) <= -1e-7 s`, `P >= -1e-8 I` and
/// cone membership at `1e-7`.
pub fn verify_certificate(cert: &Certificate, lifted: &LiftedSystem) -> CertificateCheck {
    check_variables(lifted, &cert.p, &cert.qc_vars, cert.gamma_sq())
}

fn check_variables(
    lifted: &LiftedSystem,
    p: &DMatrix<f64>,
    qc_vars: &QcVariables,
    gamma_sq: Option<f64>,
) -> CertificateCheck {
    let scale = lifted.coefficient_scale();
    let lmi = evaluate_lmi(lifted, p, &qc_vars.multiplier(), gamma_sq);
    let lmi_max_eigenvalue = linalg::max_sym_eigenvalue(&lmi);
    let p_min_eigenvalue = linalg::min_sym_eigenvalue(p);
    let cones_ok = qc_vars.check_cones(CERT_CONE_TOL).is_ok();
    let passed = lmi_max_eigenvalue <= -LMI_MARGIN_REL * scale
        && (p.nrows() == 0 || p_min_eigenvalue >= -P_PSD_TOL)
        && cones_ok;
    CertificateCheck { lmi_max_eigenvalue, scale, p_min_eigenvalue, cones_ok, passed }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertifyOptions {
    pub solver: SolverSettings,
    /// Gain-mode slack is this factor times the coefficient scale.
    pub gain_slack_rel: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self { solver: SolverSettings::default(), gain_slack_rel: 1e-6 }
    }
}

impl CertifyOptions {
    pub fn from_env() -> Self {
        Self { solver: SolverSettings::from_env(), ..Self::default() }
    }

    fn backend(&self) -> ClarabelBackend {
        ClarabelBackend::new(self.solver)
    }
}

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub vars: Recovered,
    pub margin: f64,
    pub status: String,
}

/// Maximize the slack of a margin-mode problem. Feasible iff the optimal
/// slack exceeds [`FEASIBILITY_THRESHOLD`] and the recovered point passes the
/// independent check against `lifted`. Iteration-limit and stalled solves
/// without a verifiable point count as infeasible; only a backend setup
/// failure is an error.
pub fn solve_feasibility(
    prob: &SdpProblem,
    lifted: &LiftedSystem,
    backend: &dyn ConicBackend,
) -> Result<FeasibilityResult> {
    if !matches!(prob.objective, Objective::MaxMargin) {
        return Err(Error::InvalidOptions("problem is not in margin mode".into()));
    }
    let sol = backend.solve(&prob.program)?;
    let vars = prob.recover(&sol.x);
    let margin = vars.margin.unwrap_or(f64::NEG_INFINITY);
    let feasible = match sol.status {
        SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible => false,
        _ => {
            margin > FEASIBILITY_THRESHOLD
                && check_variables(lifted, &vars.p, &vars.qc_vars, vars.gamma_sq).passed
        }
    };
    Ok(FeasibilityResult { feasible, vars, margin, status: sol.backend_status })
}

/// Certify the smallest induced-l2 gain bound available at horizon `n`.
pub fn certify_gain(
    ss: &StateSpace,
    n: usize,
    kind: QcKind,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    let start = Instant::now();
    let wp = check_well_posed(ss);
    if wp.status != WellPosedStatus::ProvenWellPosed {
        log::warn!("well-posedness not proven ({}); certificate assumes it", wp.reason);
    }
    let lifted = lift(ss, n)?;
    let class = QcClass { kind, m: lifted.qc_dim() };
    let slack = opts.gain_slack_rel * lifted.coefficient_scale();
    let prob = assemble_lmi(&lifted, class, true, Objective::MinGain { slack })?;
    let sol = opts.backend().solve(&prob.program)?;
    match sol.status {
        SolveStatus::PrimalInfeasible => {
            return Err(Error::Infeasible(format!("N = {n}, class {}", kind.short_name())))
        }
        SolveStatus::DualInfeasible | SolveStatus::Inconclusive => {
            return Err(Error::SolverFailure { status: sol.backend_status, alpha: None })
        }
        SolveStatus::Solved | SolveStatus::AlmostSolved => {}
    }
    let vars = prob.recover(&sol.x);
    let gamma_sq = vars.gamma_sq.expect("performance problem").max(0.0);
    let cert = Certificate {
        kind: CertificateKind::GainBound,
        gamma: Some(gamma_sq.sqrt()),
        alpha: None,
        p: vars.p,
        qc_vars: vars.qc_vars,
        horizon: n,
        margin: slack,
        solver_status: sol.backend_status,
        wallclock_seconds: start.elapsed().as_secs_f64(),
    };
    let check = verify_certificate(&cert, &lifted);
    if !check.passed {
        return Err(Error::SolverFailure {
            status: format!(
                "{} but returned point fails verification (lambda_max = {:.3e}, scale = {:.3e}, min eig P = {:.3e}, cones ok = {})",
                cert.solver_status, check.lmi_max_eigenvalue, check.scale, check.p_min_eigenvalue, check.cones_ok
            ),
            alpha: None,
        });
    }
    Ok(cert)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BisectionOptions {
    pub alpha_lo: f64,
    pub alpha_hi: f64,
    pub rel_tol: f64,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self { alpha_lo: 0.0, alpha_hi: 200.0, rel_tol: 1e-3 }
    }
}

impl BisectionOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_lo.is_finite() && self.alpha_hi.is_finite()) {
            return Err(Error::InvalidOptions("bisection bounds must be finite".into()));
        }
        if self.alpha_lo > self.alpha_hi {
            return Err(Error::InvalidOptions(format!(
                "alpha_lo = {} exceeds alpha_hi = {}",
                self.alpha_lo, self.alpha_hi
            )));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidOptions("rel_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BisectionStep {
    pub alpha: f64,
    pub feasible: bool,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct MarginOutcome {
    /// Largest alpha certified (0 when even `alpha_lo` fails).
    pub alpha: f64,
    /// Certificate at `alpha`, absent when nothing was certified.
    pub certificate: Option<Certificate>,
    pub trace: Vec<BisectionStep>,
    /// `alpha_hi` itself was feasible.
    pub range_saturated: bool,
    pub wallclock_seconds: f64,
}

/// Stability-only feasibility test at one plant.
pub fn certify_stability(
    ss: &StateSpace,
    n: usize,
    kind: QcKind,
    opts: &CertifyOptions,
) -> Result<(FeasibilityResult, LiftedSystem)> {
    let lifted = lift(ss, n)?;
    let class = QcClass { kind, m: lifted.qc_dim() };
    let prob = assemble_lmi(&lifted, class, false, Objective::MaxMargin)?;
    let res = solve_feasibility(&prob, &lifted, &opts.backend())?;
    Ok((res, lifted))
}

/// Largest alpha in `[alpha_lo, alpha_hi]` for which the stability-only LMI
/// of `builder(alpha)` is feasible, by bisection stopping once
/// `hi - lo <= rel_tol (1 + hi)`.
pub fn stability_margin<F>(
    builder: F,
    n: usize,
    kind: QcKind,
    bisection: &BisectionOptions,
    opts: &CertifyOptions,
) -> Result<MarginOutcome>
where
    F: Fn(f64) -> Result<StateSpace>,
{
    bisection.validate()?;
    let start = Instant::now();
    let mut trace = Vec::new();
    let mut test = |alpha: f64| -> Result<Option<Certificate>> {
        let t0 = Instant::now();
        let ss = builder(alpha)?;
        let (res, _) = certify_stability(&ss, n, kind, opts).map_err(|e| match e {
            Error::SolverFailure { status, .. } => Error::SolverFailure { status, alpha: Some(alpha) },
            other => other,
        })?;
        trace.push(BisectionStep { alpha, feasible: res.feasible, margin: res.margin });
        log::debug!("alpha = {alpha}: feasible = {} (t = {:.3e})", res.feasible, res.margin);
        Ok(res.feasible.then(|| Certificate {
            kind: CertificateKind::StabilityMargin,
            gamma: None,
            alpha: Some(alpha),
            p: res.vars.p,
            qc_vars: res.vars.qc_vars,
            horizon: n,
            margin: res.margin,
            solver_status: res.status,
            wallclock_seconds: t0.elapsed().as_secs_f64(),
        }))
    };

    let mut lo = bisection.alpha_lo;
    let mut hi = bisection.alpha_hi;
    let Some(mut best) = test(lo)? else {
        return Ok(MarginOutcome {
            alpha: 0.0,
            certificate: None,
            trace,
            range_saturated: false,
            wallclock_seconds: start.elapsed().as_secs_f64(),
        });
    };
    let mut range_saturated = false;
    if hi > lo {
        if let Some(cert) = test(hi)? {
            best = cert;
            lo = hi;
            range_saturated = true;
        }
    }
    while !range_saturated && hi - lo > bisection.rel_tol * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        match test(mid)? {
            Some(cert) => {
                best = cert;
                lo = mid;
            }
            None => hi = mid,
        }
    }
    best.wallclock_seconds = start.elapsed().as_secs_f64();
    Ok(MarginOutcome {
        alpha: lo,
        certificate: Some(best),
        trace,
        range_saturated,
        wallclock_seconds: start.elapsed().as_secs_f64(),
    })
}
