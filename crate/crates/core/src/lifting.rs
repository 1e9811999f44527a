//! N-step lifting that keeps the state dimension: one lifted step maps
//! `x(k-N+1)` to `x(k+1)` and consumes/produces newest-first stacks of the
//! per-step signals over the window.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, to_rows};
use crate::sysmodel::{Dims, StateSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    pub horizon: usize,
    pub an: DMatrix<f64>,
    pub b1n: DMatrix<f64>,
    pub b2n: DMatrix<f64>,
    pub c1n: DMatrix<f64>,
    pub c2n: DMatrix<f64>,
    pub d11n: DMatrix<f64>,
    pub d12n: DMatrix<f64>,
    pub d21n: DMatrix<f64>,
    pub d22n: DMatrix<f64>,
    pub source_dims: Dims,
}

/// A window of `horizon` samples of an `n`-dimensional signal, newest first:
/// block 0 is time `k`, block `horizon - 1` is time `k - horizon + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSignal {
    horizon: usize,
    base_dim: usize,
    data: DVector<f64>,
}

impl StackedSignal {
    /// Stack `samples`, given in chronological order, newest first.
    pub fn from_chronological(samples: &[DVector<f64>], base_dim: usize) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| s.len() != base_dim) {
            return Err(Error::DimensionMismatch(format!(
                "sample of length {} in a stack of base dimension {base_dim}",
                bad.len()
            )));
        }
        let horizon = samples.len();
        let mut data = DVector::zeros(base_dim * horizon);
        for (i, s) in samples.iter().rev().enumerate() {
            data.rows_mut(i * base_dim, base_dim).copy_from(s);
        }
        Ok(Self { horizon, base_dim, data })
    }

    pub fn from_data(data: DVector<f64>, base_dim: usize, horizon: usize) -> Result<Self> {
        if data.len() != base_dim * horizon {
            return Err(Error::DimensionMismatch(format!(
                "stack of length {} is not {base_dim} x {horizon}",
                data.len()
            )));
        }
        Ok(Self { horizon, base_dim, data })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn base_dim(&self) -> usize {
        self.base_dim
    }
    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    /// Samples back in chronological order.
    pub fn to_chronological(&self) -> Vec<DVector<f64>> {
        (0..self.horizon)
            .rev()
            .map(|i| self.data.rows(i * self.base_dim, self.base_dim).into_owned())
            .collect()
    }
}

/// Split a chronological sequence into consecutive non-overlapping windows of
/// length `horizon`, zero-padding the last one.
pub fn stack_sequence(
    seq: &[DVector<f64>],
    base_dim: usize,
    horizon: usize,
) -> Result<Vec<StackedSignal>> {
    if horizon == 0 {
        return Err(Error::InvalidHorizon(0));
    }
    let mut out = Vec::with_capacity(seq.len().div_ceil(horizon));
    for chunk in seq.chunks(horizon) {
        let mut window = chunk.to_vec();
        window.resize(horizon, DVector::zeros(base_dim));
        out.push(StackedSignal::from_chronological(&window, base_dim)?);
    }
    Ok(out)
}

/// Build the lifted plant for horizon `n`.
pub fn lift(ss: &StateSpace, n: usize) -> Result<LiftedSystem> {
    if n < 1 {
        return Err(Error::InvalidHorizon(n));
    }
    let d = ss.dims();
    let pows = linalg::matrix_powers(ss.a(), n);

    let input_map = |b: &DMatrix<f64>| {
        let cols = b.ncols();
        let mut out = DMatrix::zeros(d.n_x, cols * n);
        for c in 0..n {
            out.columns_mut(c * cols, cols).copy_from(&(&pows[c] * b));
        }
        out
    };
    let output_map = |c_mat: &DMatrix<f64>| {
        let rows = c_mat.nrows();
        let mut out = DMatrix::zeros(rows * n, d.n_x);
        for r in 0..n {
            out.rows_mut(r * rows, rows)
                .copy_from(&(c_mat * &pows[n - 1 - r]));
        }
        out
    };
    // Block (r, c): D if c == r, C A^{c-r-1} B if c > r, zero below.
    let toeplitz = |c_mat: &DMatrix<f64>, b: &DMatrix<f64>, dd: &DMatrix<f64>| {
        let (rows, cols) = dd.shape();
        let markov: Vec<DMatrix<f64>> = (0..n.saturating_sub(1))
            .map(|j| c_mat * &pows[j] * b)
            .collect();
        let mut out = DMatrix::zeros(rows * n, cols * n);
        for r in 0..n {
            out.view_mut((r * rows, r * cols), (rows, cols)).copy_from(dd);
            for c in (r + 1)..n {
                out.view_mut((r * rows, c * cols), (rows, cols))
                    .copy_from(&markov[c - r - 1]);
            }
        }
        out
    };

    Ok(LiftedSystem {
        horizon: n,
        an: pows[n].clone(),
        b1n: input_map(ss.b1()),
        b2n: input_map(ss.b2()),
        c1n: output_map(ss.c1()),
        c2n: output_map(ss.c2()),
        d11n: toeplitz(ss.c1(), ss.b1(), ss.d11()),
        d12n: toeplitz(ss.c1(), ss.b2(), ss.d12()),
        d21n: toeplitz(ss.c2(), ss.b1(), ss.d21()),
        d22n: toeplitz(ss.c2(), ss.b2(), ss.d22()),
        source_dims: d,
    })
}

impl LiftedSystem {
    /// QC dimension `n_v * N`.
    pub fn qc_dim(&self) -> usize {
        self.source_dims.n_v * self.horizon
    }

    /// One lifted step: returns `(x_next, V_N, E_N)`.
    pub fn step(
        &self,
        x0: &DVector<f64>,
        w_stack: &DVector<f64>,
        d_stack: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let x_next = &self.an * x0 + &self.b1n * w_stack + &self.b2n * d_stack;
        let v = &self.c1n * x0 + &self.d11n * w_stack + &self.d12n * d_stack;
        let e = &self.c2n * x0 + &self.d21n * w_stack + &self.d22n * d_stack;
        (x_next, v, e)
    }

    /// Largest absolute entry over all lifted blocks, floored at 1.
    pub fn coefficient_scale(&self) -> f64 {
        [
            &self.an, &self.b1n, &self.b2n, &self.c1n, &self.c2n, &self.d11n, &self.d12n,
            &self.d21n, &self.d22n,
        ]
        .iter()
        .map(|m| linalg::max_abs(m))
        .fold(1.0, f64::max)
    }

    pub fn to_report(&self) -> LiftedReport {
        LiftedReport {
            horizon: self.horizon,
            an: to_rows(&self.an),
            b1n: to_rows(&self.b1n),
            b2n: to_rows(&self.b2n),
            c1n: to_rows(&self.c1n),
            c2n: to_rows(&self.c2n),
            d11n: to_rows(&self.d11n),
            d12n: to_rows(&self.d12n),
            d21n: to_rows(&self.d21n),
            d22n: to_rows(&self.d22n),
        }
    }
}

/// Nested-array view of a lifted plant for JSON reports.
#[derive(Debug, Clone, Serialize)]
pub struct LiftedReport {
    pub horizon: usize,
    pub an: Vec<Vec<f64>>,
    pub b1n: Vec<Vec<f64>>,
    pub b2n: Vec<Vec<f64>>,
    pub c1n: Vec<Vec<f64>>,
    pub c2n: Vec<Vec<f64>>,
    pub d11n: Vec<Vec<f64>>,
    pub d12n: Vec<Vec<f64>>,
    pub d21n: Vec<Vec<f64>>,
    pub d22n: Vec<Vec<f64>>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Roll the original recursion and the lifted recursion side by side on
/// random open-loop inputs and return the largest discrepancy in states and
/// stacked outputs.
pub fn validate_lift(
    ss: &StateSpace,
    lifted: &LiftedSystem,
    trials: usize,
    steps: usize,
    seed: u64,
) -> f64 {
    let d = ss.dims();
    let n = lifted.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let x0 = gaussian_vec(&mut rng, d.n_x);
        let total = n * steps;
        let ws: Vec<_> = (0..total).map(|_| gaussian_vec(&mut rng, d.n_w)).collect();
        let ds: Vec<_> = (0..total).map(|_| gaussian_vec(&mut rng, d.n_d)).collect();
        worst = worst.max(lift_discrepancy(ss, lifted, &x0, &ws, &ds, steps));
    }
    worst
}

/// Discrepancy for one deterministic input realization.
pub fn lift_discrepancy(
    ss: &StateSpace,
    lifted: &LiftedSystem,
    x0: &DVector<f64>,
    ws: &[DVector<f64>],
    ds: &[DVector<f64>],
    steps: usize,
) -> f64 {
    let d = ss.dims();
    let n = lifted.horizon;
    let mut xs = vec![x0.clone()];
    let mut vs = Vec::with_capacity(n * steps);
    let mut es = Vec::with_capacity(n * steps);
    for k in 0..n * steps {
        let x = &xs[k];
        vs.push(ss.c1() * x + ss.d11() * &ws[k] + ss.d12() * &ds[k]);
        es.push(ss.c2() * x + ss.d21() * &ws[k] + ss.d22() * &ds[k]);
        xs.push(ss.a() * x + ss.b1() * &ws[k] + ss.b2() * &ds[k]);
    }
    let stack = |seq: &[DVector<f64>], dim| {
        StackedSignal::from_chronological(seq, dim)
            .expect("window samples share the base dimension")
            .data
    };
    let mut worst = 0.0_f64;
    let mut x_lift = x0.clone();
    for kappa in 0..steps {
        let window = kappa * n..(kappa + 1) * n;
        let (x_next, v, e) = lifted.step(
            &x_lift,
            &stack(&ws[window.clone()], d.n_w),
            &stack(&ds[window.clone()], d.n_d),
        );
        worst = worst
            .max(max_abs_diff(&x_next, &xs[(kappa + 1) * n]))
            .max(max_abs_diff(&v, &stack(&vs[window.clone()], d.n_v)))
            .max(max_abs_diff(&e, &stack(&es[window], d.n_e)));
        x_lift = x_next;
    }
    worst
}
