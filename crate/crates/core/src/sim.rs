//! Closed-loop rollouts of the plant with a repeated nonlinearity, used to
//! falsify stability claims, bound gains from below and replay certificates
//! along trajectories.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::certifier::Certificate;
use crate::error::{Error, Result};
use crate::lifting::{LiftedSystem, StackedSignal};
use crate::linalg;
use crate::qc::quadratic_form;
use crate::sysmodel::StateSpace;

pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;
/// A trial diverges once `|x(k)| > DIVERGENCE_FACTOR (1 + |x(0)|)`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Elementwise nonlinearity closing the loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Nonlinearity {
    #[default]
    Relu,
    Identity,
    /// `clamp(v, -limit, limit)`.
    Saturation { limit: f64 },
}

impl Nonlinearity {
    pub fn apply_scalar(self, v: f64) -> f64 {
        match self {
            Nonlinearity::Relu => v.max(0.0),
            Nonlinearity::Identity => v,
            Nonlinearity::Saturation { limit } => v.clamp(-limit, limit),
        }
    }

    pub fn apply(self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Nonlinearity::Relu => linalg::relu(v),
            _ => v.map(|x| self.apply_scalar(x)),
        }
    }
}

/// Signals of one rollout. `x` holds `T + 1` states; the other sequences hold
/// `T` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub d: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.v.len()
    }

    /// Largest residual of the plant equations and of `w = phi(v)` along the
    /// trajectory.
    pub fn recursion_residual(&self, ss: &StateSpace, nl: Nonlinearity) -> f64 {
        let mut worst = 0.0_f64;
        let mut note = |a: &DVector<f64>, b: &DVector<f64>| {
            worst = worst.max((a - b).amax());
        };
        for k in 0..self.steps() {
            let (x, v, w, d, e) = (&self.x[k], &self.v[k], &self.w[k], &self.d[k], &self.e[k]);
            note(&self.x[k + 1], &(ss.a() * x + ss.b1() * w + ss.b2() * d));
            note(v, &(ss.c1() * x + ss.d11() * w + ss.d12() * d));
            note(e, &(ss.c2() * x + ss.d21() * w + ss.d22() * d));
            note(w, &nl.apply(v));
        }
        worst
    }

    pub fn output_energy(&self) -> f64 {
        self.e.iter().map(|e| e.norm_squared()).sum()
    }

    pub fn input_energy(&self) -> f64 {
        self.d.iter().map(|d| d.norm_squared()).sum()
    }

    /// CSV with header `k,x1..,v1..,w1..,d1..,e1..`; the final row carries
    /// the terminal state only.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let n_x = self.x.first().map_or(0, |x| x.len());
        let width = |s: &[DVector<f64>]| s.first().map_or(0, |x| x.len());
        let groups = [
            ("v", width(&self.v)),
            ("w", width(&self.w)),
            ("d", width(&self.d)),
            ("e", width(&self.e)),
        ];
        let mut header = vec!["k".to_string()];
        header.extend((1..=n_x).map(|i| format!("x{i}")));
        for (name, n) in groups {
            header.extend((1..=n).map(|i| format!("{name}{i}")));
        }
        wtr.write_record(&header)?;
        for k in 0..self.x.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.x[k].iter().map(|x| x.to_string()));
            for (seq, (_, n)) in [&self.v, &self.w, &self.d, &self.e].into_iter().zip(groups) {
                match seq.get(k) {
                    Some(s) => row.extend(s.iter().map(|x| x.to_string())),
                    None => row.extend(std::iter::repeat_n(String::new(), n)),
                }
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()
    }
}

/// Solve `v = C1 x + D11 phi(v) + D12 d` and return `(v, phi(v))`.
fn loop_equation(
    ss: &StateSpace,
    nl: Nonlinearity,
    x: &DVector<f64>,
    d: &DVector<f64>,
    step: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let affine = ss.c1() * x + ss.d12() * d;
    if ss.d11().iter().all(|&a| a == 0.0) {
        let w = nl.apply(&affine);
        return Ok((affine, w));
    }
    let mut v = affine.clone();
    for _ in 0..FIXED_POINT_MAX_ITER {
        let next = &affine + ss.d11() * nl.apply(&v);
        let delta = (&next - &v).amax();
        v = next;
        if !delta.is_finite() {
            break;
        }
        if delta <= FIXED_POINT_TOL * (1.0 + v.amax()) {
            let w = nl.apply(&v);
            return Ok((v, w));
        }
    }
    Err(Error::FixedPointDivergence { step })
}

fn check_signal(d: &[DVector<f64>], n_d: usize) -> Result<()> {
    if let Some((k, bad)) = d.iter().enumerate().find(|(_, s)| s.len() != n_d) {
        return Err(Error::DimensionMismatch(format!(
            "disturbance sample {k} has length {} but n_d = {n_d}",
            bad.len()
        )));
    }
    Ok(())
}

/// Roll out `steps` steps with the ReLU loop closed. `d` may be shorter than
/// `steps`; missing samples are zero.
pub fn simulate(
    ss: &StateSpace,
    x0: &DVector<f64>,
    d: &[DVector<f64>],
    steps: usize,
) -> Result<Trajectory> {
    simulate_with(ss, Nonlinearity::Relu, x0, d, steps)
}

pub fn simulate_with(
    ss: &StateSpace,
    nl: Nonlinearity,
    x0: &DVector<f64>,
    d: &[DVector<f64>],
    steps: usize,
) -> Result<Trajectory> {
    let dims = ss.dims();
    if x0.len() != dims.n_x {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {} but n_x = {}",
            x0.len(),
            dims.n_x
        )));
    }
    if d.len() > steps {
        return Err(Error::LengthMismatch(format!(
            "{} disturbance samples for {steps} steps",
            d.len()
        )));
    }
    check_signal(d, dims.n_d)?;
    let zero_d = DVector::zeros(dims.n_d);
    let mut traj = Trajectory {
        x: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps),
        w: Vec::with_capacity(steps),
        d: Vec::with_capacity(steps),
        e: Vec::with_capacity(steps),
    };
    let mut x = x0.clone();
    for k in 0..steps {
        let dk = d.get(k).unwrap_or(&zero_d).clone();
        let (v, w) = loop_equation(ss, nl, &x, &dk, k)?;
        let e = ss.c2() * &x + ss.d21() * &w + ss.d22() * &dk;
        let next = ss.a() * &x + ss.b1() * &w + ss.b2() * &dk;
        traj.x.push(std::mem::replace(&mut x, next));
        traj.v.push(v);
        traj.w.push(w);
        traj.d.push(dk);
        traj.e.push(e);
    }
    traj.x.push(x);
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FalsifyOptions {
    pub num_ic: usize,
    pub ic_std: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for FalsifyOptions {
    fn default() -> Self {
        Self { num_ic: 20, ic_std: 10.0, steps: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsificationTrial {
    pub x0: Vec<f64>,
    pub final_state_norm: f64,
    pub max_state_norm: f64,
    pub diverged: bool,
    /// First step at which the divergence threshold was crossed.
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FalsificationReport {
    pub num_ic: usize,
    pub ic_std: f64,
    pub steps: usize,
    pub seed: u64,
    pub max_final_state_norm: f64,
    pub diverged: bool,
    pub trials: Vec<FalsificationTrial>,
}

/// Unforced rollouts from Gaussian initial states.
pub fn falsify_stability(ss: &StateSpace, opts: &FalsifyOptions) -> Result<FalsificationReport> {
    falsify_stability_with(ss, Nonlinearity::Relu, opts)
}

pub fn falsify_stability_with(
    ss: &StateSpace,
    nl: Nonlinearity,
    opts: &FalsifyOptions,
) -> Result<FalsificationReport> {
    if opts.num_ic > 0 && opts.steps == 0 {
        return Err(Error::InvalidOptions("falsification needs at least one step".into()));
    }
    let normal = Normal::new(0.0, opts.ic_std)
        .map_err(|e| Error::InvalidOptions(format!("ic_std = {}: {e}", opts.ic_std)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let dims = ss.dims();
    let zero_d = DVector::zeros(dims.n_d);
    let mut trials = Vec::with_capacity(opts.num_ic);
    for _ in 0..opts.num_ic {
        let x0 = DVector::from_fn(dims.n_x, |_, _| normal.sample(&mut rng));
        let threshold = DIVERGENCE_FACTOR * (1.0 + x0.norm());
        let mut x = x0.clone();
        let mut max_norm = x.norm();
        let mut diverged_at = None;
        for k in 0..opts.steps {
            let (_, w) = loop_equation(ss, nl, &x, &zero_d, k)?;
            x = ss.a() * &x + ss.b1() * &w;
            let norm = x.norm();
            max_norm = max_norm.max(norm);
            if !norm.is_finite() || norm > threshold {
                diverged_at = Some(k + 1);
                break;
            }
        }
        let final_norm = x.norm();
        trials.push(FalsificationTrial {
            x0: x0.iter().copied().collect(),
            final_state_norm: final_norm,
            max_state_norm: max_norm,
            diverged: diverged_at.is_some(),
            diverged_at,
        });
    }
    let diverged = trials.iter().any(|t| t.diverged);
    let max_final_state_norm = trials.iter().map(|t| t.final_state_norm).fold(0.0, f64::max);
    Ok(FalsificationReport {
        num_ic: opts.num_ic,
        ic_std: opts.ic_std,
        steps: opts.steps,
        seed: opts.seed,
        max_final_state_norm,
        diverged,
        trials,
    })
}

/// `|e|_2 / |d|_2` over a rollout from rest driven by `d` and then left
/// unforced until `steps`.
pub fn gain_ratio(ss: &StateSpace, d: &[DVector<f64>], steps: usize) -> Result<f64> {
    let traj = simulate(ss, &DVector::zeros(ss.dims().n_x), d, steps)?;
    let input = traj.input_energy();
    if input == 0.0 {
        return Err(Error::ZeroInput(0));
    }
    Ok((traj.output_energy() / input).sqrt())
}

/// Largest `|e|_2 / |d|_2` over random finite-energy inputs: unit Gaussian
/// samples on the first `steps / 2` steps, zero afterwards, from rest.
pub fn empirical_gain_lower_bound(
    ss: &StateSpace,
    trials: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let n_d = ss.dims().n_d;
    let active = (steps / 2).max(1).min(steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0_f64;
    for trial in 0..trials {
        let d: Vec<DVector<f64>> = (0..active)
            .map(|_| DVector::from_fn(n_d, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        if d.iter().all(|s| s.iter().all(|&x| x == 0.0)) {
            return Err(Error::ZeroInput(trial));
        }
        let ratio = gain_ratio(ss, &d, steps)?;
        best = best.max(ratio);
    }
    Ok(best)
}

fn closed_loop_radius(ss: &StateSpace) -> f64 {
    linalg::spectral_radius(&(ss.a() + ss.b1() * ss.c1()))
}

/// Smallest `alpha` in `[0, alpha_hi]` at which the loop closed with the
/// identity reaches spectral radius 1, located to `1e-6`.
pub fn nyquist_gain<F>(builder: F, alpha_hi: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<StateSpace>,
{
    const GRID: usize = 2000;
    const TOL: f64 = 1e-6;
    if !(alpha_hi.is_finite() && alpha_hi >= 0.0) {
        return Err(Error::InvalidOptions(format!("alpha_hi = {alpha_hi}")));
    }
    let radius = |alpha: f64| -> Result<f64> {
        let ss = builder(alpha)?;
        if ss.d11().iter().any(|&x| x != 0.0) {
            return Err(Error::InvalidOptions("nyquist gain needs D11 = 0".into()));
        }
        Ok(closed_loop_radius(&ss))
    };
    if radius(0.0)? >= 1.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=GRID {
        let alpha = alpha_hi * i as f64 / GRID as f64;
        if radius(alpha)? >= 1.0 {
            hi = Some(alpha);
            break;
        }
        lo = alpha;
    }
    let mut hi = hi.ok_or(Error::NoCrossing(alpha_hi))?;
    while hi - lo > TOL {
        let mid = 0.5 * (lo + hi);
        if radius(mid)? >= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Largest value over lifted steps `kappa` of
///
/// ```text
/// V(x((kappa+1)N)) - V(x(kappa N)) + |E|^2 - gamma^2 |D|^2 + [V;W]' M [V;W]
/// ```
///
/// with `V(x) = x' P x`. A valid certificate keeps this at or below roundoff.
/// Stability certificates use `gamma = 0`, so they only bound unforced
/// trajectories.
pub fn check_dissipation(
    cert: &Certificate,
    lifted: &LiftedSystem,
    traj: &Trajectory,
) -> Result<f64> {
    let n = lifted.horizon;
    let steps = traj.steps();
    if n == 0 || steps % n != 0 {
        return Err(Error::LengthMismatch(format!(
            "trajectory of {steps} steps is not a multiple of N = {n}"
        )));
    }
    if cert.horizon != n {
        return Err(Error::LengthMismatch(format!(
            "certificate horizon {} but lifted horizon {n}",
            cert.horizon
        )));
    }
    let p = &cert.p;
    let m: DMatrix<f64> = cert.multiplier();
    let gamma_sq = cert.gamma.map_or(0.0, |g| g * g);
    let dims = lifted.source_dims;
    let stack = |seq: &[DVector<f64>], base: usize| -> Result<DVector<f64>> {
        Ok(StackedSignal::from_chronological(seq, base)?.data().clone())
    };
    let mut worst = None::<f64>;
    for kappa in 0..steps / n {
        let window = kappa * n..(kappa + 1) * n;
        let x0 = &traj.x[kappa * n];
        let x1 = &traj.x[(kappa + 1) * n];
        let v = stack(&traj.v[window.clone()], dims.n_v)?;
        let w = stack(&traj.w[window.clone()], dims.n_w)?;
        let d = stack(&traj.d[window.clone()], dims.n_d)?;
        let e = stack(&traj.e[window], dims.n_e)?;
        let storage = |x: &DVector<f64>| (x.transpose() * p * x)[(0, 0)];
        let value = storage(x1) - storage(x0) + e.norm_squared() - gamma_sq * d.norm_squared()
            + quadratic_form(&m, &v, &w);
        worst = Some(worst.map_or(value, |acc| acc.max(value)));
    }
    Ok(worst.unwrap_or(0.0))
}
