//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use reluqc::certifier::{
    certify_gain, stability_margin, verify_certificate, BisectionOptions, Certificate,
    CertificateKind, CertifyOptions,
};
use reluqc::io::{reference_values, ReferenceValues};
use reluqc::lifting::{lift, validate_lift};
use reluqc::qc::{
    assemble, assemble_m_dh, assemble_m_relu, quadratic_form, qc_residual, sample_qc_variables,
    QcClass, QcKind, QcVariables,
};
use reluqc::sim::{
    check_dissipation, empirical_gain_lower_bound, falsify_stability, nyquist_gain, simulate,
    FalsifyOptions,
};
use reluqc::sysmodel::{build_lurye, gain_example, StateSpace};

const TABLE_REL_TOL: f64 = 0.02;
const STABILITY_CELL_SECONDS: f64 = 60.0;
const GAIN_CELL_SECONDS: f64 = 30.0;
const NYQUIST_TOL: f64 = 1e-3;
const QC_TOL: f64 = 1e-9;
const QC_SAMPLES: usize = 10_000;
const QC_DIMS: [usize; 4] = [1, 2, 6, 12];
const LIFT_TOL: f64 = 1e-9;
const DISSIPATION_REL: f64 = 1e-6;
const DISSIPATION_TRAJECTORIES: usize = 50;
const GAIN_NESTING_REL: f64 = 1e-6;
const FINAL_NORM_TOL: f64 = 1e-3;
const KINDS: [QcKind; 2] = [QcKind::ReluFull, QcKind::DoublyHyperdominant];

struct Cell {
    kind: QcKind,
    horizon: usize,
    value: Option<f64>,
    reference: f64,
    seconds: f64,
    certificate: Option<Certificate>,
    plant: Option<StateSpace>,
    note: String,
}

impl Cell {
    fn deviation(&self) -> Option<f64> {
        self.value.map(|v| (v - self.reference).abs() / self.reference)
    }
}

struct Report {
    failures: usize,
}

impl Report {
    fn criterion(&mut self, id: usize, title: &str, passed: bool, summary: String) {
        if !passed {
            self.failures += 1;
        }
        let verdict = if passed { "PASS" } else { "FAIL" };
        println!("criterion {id} [{title}]: {verdict} - {summary}");
    }
}

fn detail(line: String) {
    println!("    {line}");
}

fn stability_cells(refs: &ReferenceValues, opts: &CertifyOptions) -> Vec<Cell> {
    let bisection = BisectionOptions::default();
    let mut cells = Vec::new();
    for kind in KINDS {
        for &horizon in &refs.stability_table.horizons {
            let reference = refs.stability_table.value(kind, horizon).unwrap();
            let start = Instant::now();
            let outcome = stability_margin(build_lurye, horizon, kind, &bisection, opts);
            let seconds = start.elapsed().as_secs_f64();
            let cell = match outcome {
                Ok(out) => {
                    let plant = out.certificate.as_ref().and_then(|c| c.alpha).map(|a| build_lurye(a).unwrap());
                    Cell {
                        kind,
                        horizon,
                        value: Some(out.alpha),
                        reference,
                        seconds,
                        note: if out.range_saturated { "range saturated at alpha_hi".into() } else { String::new() },
                        certificate: out.certificate,
                        plant,
                    }
                }
                Err(e) => Cell {
                    kind,
                    horizon,
                    value: None,
                    reference,
                    seconds,
                    certificate: None,
                    plant: None,
                    note: e.to_string(),
                },
            };
            cells.push(cell);
        }
    }
    cells
}

fn gain_cells(refs: &ReferenceValues, opts: &CertifyOptions) -> Vec<Cell> {
    let plant = gain_example();
    let mut cells = Vec::new();
    for kind in KINDS {
        for &horizon in &refs.gain_table.horizons {
            let reference = refs.gain_table.value(kind, horizon).unwrap();
            let start = Instant::now();
            let outcome = certify_gain(&plant, horizon, kind, opts);
            let seconds = start.elapsed().as_secs_f64();
            let (value, certificate, note) = match outcome {
                Ok(cert) => (cert.gamma, Some(cert), String::new()),
                Err(e) => (None, None, e.to_string()),
            };
            cells.push(Cell {
                kind,
                horizon,
                value,
                reference,
                seconds,
                certificate,
                plant: Some(plant.clone()),
                note,
            });
        }
    }
    cells
}

fn table_criterion(report: &mut Report, id: usize, title: &str, cells: &[Cell], budget: f64) {
    let mut passed = true;
    let mut worst = 0.0_f64;
    for cell in cells {
        let dev = cell.deviation();
        let ok = dev.is_some_and(|d| d <= TABLE_REL_TOL) && cell.seconds <= budget;
        passed &= ok;
        worst = worst.max(dev.unwrap_or(f64::INFINITY));
        detail(format!(
            "{:<4} N={:<2} value={:<12} reference={:<9} dev={:<8} time={:.2}s {}{}",
            cell.kind.short_name(),
            cell.horizon,
            cell.value.map_or("-".into(), |v| format!("{v:.4}")),
            cell.reference,
            dev.map_or("-".into(), |d| format!("{:.2}%", 100.0 * d)),
            cell.seconds,
            if ok { "ok" } else { "MISMATCH" },
            if cell.note.is_empty() { String::new() } else { format!(" ({})", cell.note) },
        ));
    }
    let bad = cells
        .iter()
        .filter(|c| !(c.deviation().is_some_and(|d| d <= TABLE_REL_TOL) && c.seconds <= budget))
        .map(|c| format!("{} N={}", c.kind.short_name(), c.horizon))
        .collect::<Vec<_>>();
    let summary = if bad.is_empty() {
        format!("{} cells within {}% (worst {:.2}%)", cells.len(), 100.0 * TABLE_REL_TOL, 100.0 * worst)
    } else {
        format!("{} of {} cells off: {}", bad.len(), cells.len(), bad.join(", "))
    };
    report.criterion(id, title, passed, summary);
}

fn nyquist_criterion(report: &mut Report, refs: &ReferenceValues) {
    match nyquist_gain(build_lurye, 10.0) {
        Ok(alpha) => {
            let jury = 1.0 / 0.92;
            let passed = (alpha - refs.nyquist_gain).abs() <= NYQUIST_TOL && (alpha - jury).abs() <= NYQUIST_TOL;
            report.criterion(
                3,
                "nyquist oracle",
                passed,
                format!("alpha* = {alpha:.6} (reference {}, 1/0.92 = {jury:.6})", refs.nyquist_gain),
            );
        }
        Err(e) => report.criterion(3, "nyquist oracle", false, e.to_string()),
    }
}

fn qc_criterion(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut min_dh = f64::INFINITY;
    let mut min_relu = f64::INFINITY;
    let mut max_comp = 0.0_f64;
    let mut min_slope = f64::INFINITY;
    for &m in &QC_DIMS {
        for i in 0..QC_SAMPLES {
            let seed = rng.random::<u64>();
            let v = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));

            let dh_vars = sample_qc_variables(QcClass { kind: QcKind::DoublyHyperdominant, m }, seed);
            let q0 = match &dh_vars {
                QcVariables::DoublyHyperdominant { q0 } => q0.clone(),
                _ => unreachable!(),
            };
            let dh = assemble(dh_vars).unwrap();
            min_dh = min_dh.min(qc_residual(&dh, &v).unwrap());

            let relu = assemble(sample_qc_variables(QcClass { kind: QcKind::ReluFull, m }, seed)).unwrap();
            min_relu = min_relu.min(qc_residual(&relu, &v).unwrap());

            let diag = DVector::from_fn(m, |_, _| 10.0 * rng.sample::<f64, _>(StandardNormal));
            let comp = assemble_m_relu(
                nalgebra::DMatrix::zeros(m, m),
                nalgebra::DMatrix::zeros(m, m),
                nalgebra::DMatrix::from_diagonal(&diag),
            )
            .unwrap();
            max_comp = max_comp.max(qc_residual(&comp, &v).unwrap().abs());

            let dh = assemble_m_dh(q0).unwrap();
            let level: f64 = rng.random_range(0.05..3.0);
            let leak: f64 = rng.random_range(0.0..1.0);
            let w = v.map(|x| match i % 3 {
                0 => x.clamp(-level, level),
                1 => leak * x + (1.0 - leak) * x.max(0.0),
                _ => (x / level).tanh() * level,
            });
            min_slope = min_slope.min(quadratic_form(dh.matrix(), &v, &w));
        }
    }
    let passed = min_dh >= -QC_TOL && min_relu >= -QC_TOL && max_comp <= QC_TOL && min_slope >= -QC_TOL;
    report.criterion(
        4,
        "qc property suite",
        passed,
        format!(
            "{} samples/class at m in {QC_DIMS:?}: min dh {min_dh:.3e}, min relu {min_relu:.3e}, max |complementarity| {max_comp:.3e}, min dh slope-[0,1] {min_slope:.3e}",
            QC_SAMPLES * QC_DIMS.len()
        ),
    );
}

fn lift_criterion(report: &mut Report) {
    let plants = [("lurye", build_lurye(1.0).unwrap()), ("gain-example", gain_example())];
    let mut worst = 0.0_f64;
    for (name, ss) in &plants {
        for n in 1..=12 {
            let lifted = lift(ss, n).unwrap();
            let err = validate_lift(ss, &lifted, 10, 5, n as u64);
            worst = worst.max(err);
            if err > LIFT_TOL {
                detail(format!("{name} N={n}: discrepancy {err:.3e}"));
            }
        }
    }
    report.criterion(
        5,
        "lift equivalence",
        worst <= LIFT_TOL,
        format!("max discrepancy {worst:.3e} over both benchmarks, N = 1..12, 10 trials"),
    );
}

fn soundness_criterion(report: &mut Report, cells: &[&Cell]) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut worst_ratio = f64::NEG_INFINITY;
    for cell in cells {
        let (Some(cert), Some(plant)) = (&cell.certificate, &cell.plant) else {
            continue;
        };
        checked += 1;
        let lifted = lift(plant, cert.horizon).unwrap();
        let check = verify_certificate(cert, &lifted);
        let label = format!("{} N={} ({:?})", cell.kind.short_name(), cell.horizon, cert.kind);
        if !check.passed {
            failures.push(format!("{label}: re-evaluation failed"));
            continue;
        }
        let dims = plant.dims();
        let forced = cert.kind == CertificateKind::GainBound;
        let steps = 10 * cert.horizon;
        let mut cell_worst = f64::NEG_INFINITY;
        for _ in 0..DISSIPATION_TRAJECTORIES {
            let x0 = DVector::from_fn(dims.n_x, |_, _| rng.sample::<f64, _>(StandardNormal));
            let d: Vec<DVector<f64>> = if forced {
                (0..steps)
                    .map(|_| DVector::from_fn(dims.n_d, |_, _| rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            } else {
                Vec::new()
            };
            let traj = simulate(plant, &x0, &d, steps).unwrap();
            let energy = x0.norm_squared() + traj.input_energy();
            let scale = lifted.coefficient_scale().max(energy);
            let violation = check_dissipation(cert, &lifted, &traj).unwrap();
            cell_worst = cell_worst.max(violation / scale);
        }
        worst_ratio = worst_ratio.max(cell_worst);
        if cell_worst > DISSIPATION_REL {
            failures.push(format!("{label}: dissipation violation {cell_worst:.3e} x scale"));
        }
    }
    for f in &failures {
        detail(f.clone());
    }
    report.criterion(
        6,
        "certificate soundness",
        failures.is_empty() && checked > 0,
        format!(
            "{checked} certificates re-evaluated, {DISSIPATION_TRAJECTORIES} trajectories each, worst dissipation/scale {worst_ratio:.3e}"
        ),
    );
}

fn nesting_criterion(report: &mut Report, stability: &[Cell], gain: &[Cell]) {
    let tol = BisectionOptions::default().rel_tol;
    let mut bad = Vec::new();
    let find = |cells: &[Cell], kind, n| cells.iter().find(|c| c.kind == kind && c.horizon == n).and_then(|c| c.value);
    for n in stability.iter().map(|c| c.horizon).collect::<std::collections::BTreeSet<_>>() {
        if let (Some(dh), Some(relu)) = (
            find(stability, QcKind::DoublyHyperdominant, n),
            find(stability, QcKind::ReluFull, n),
        ) {
            if dh > relu + tol * (1.0 + relu) {
                bad.push(format!("margin N={n}: dh {dh:.4} > relu {relu:.4}"));
            }
        } else {
            bad.push(format!("margin N={n}: missing value"));
        }
    }
    for n in gain.iter().map(|c| c.horizon).collect::<std::collections::BTreeSet<_>>() {
        if let (Some(dh), Some(relu)) = (
            find(gain, QcKind::DoublyHyperdominant, n),
            find(gain, QcKind::ReluFull, n),
        ) {
            if relu > dh * (1.0 + GAIN_NESTING_REL) {
                bad.push(format!("gain N={n}: relu {relu:.4} > dh {dh:.4}"));
            }
        } else {
            bad.push(format!("gain N={n}: missing value"));
        }
    }
    let summary = if bad.is_empty() {
        "dh margins <= relu margins and relu gains <= dh gains at every horizon".to_string()
    } else {
        bad.join("; ")
    };
    report.criterion(7, "class nesting", bad.is_empty(), summary);
}

fn simulation_criterion(report: &mut Report, gain: &[Cell]) {
    let falsify = falsify_stability(
        &build_lurye(100.0).unwrap(),
        &FalsifyOptions { num_ic: 20, ic_std: 10.0, steps: 500, seed: 7 },
    )
    .unwrap();
    let converged = !falsify.diverged && falsify.max_final_state_norm < FINAL_NORM_TOL;
    let tightest = gain.iter().filter_map(|c| c.value).fold(f64::INFINITY, f64::min);
    let lower = empirical_gain_lower_bound(&gain_example(), 100, 300, 7).unwrap();
    let passed = converged && tightest.is_finite() && lower <= tightest;
    report.criterion(
        8,
        "simulation corroboration",
        passed,
        format!(
            "lurye alpha=100: diverged={}, max final norm {:.3e}; empirical gain {lower:.4} vs tightest certified {tightest:.4}",
            falsify.diverged, falsify.max_final_state_norm
        ),
    );
}

fn main() -> ExitCode {
    let refs = reference_values();
    let opts = CertifyOptions::from_env();
    let mut report = Report { failures: 0 };

    let stability = stability_cells(&refs, &opts);
    table_criterion(&mut report, 1, "stability-margin table", &stability, STABILITY_CELL_SECONDS);
    let gain = gain_cells(&refs, &opts);
    table_criterion(&mut report, 2, "gain table", &gain, GAIN_CELL_SECONDS);
    nyquist_criterion(&mut report, &refs);
    qc_criterion(&mut report);
    lift_criterion(&mut report);
    let all: Vec<&Cell> = stability.iter().chain(&gain).collect();
    soundness_criterion(&mut report, &all);
    nesting_criterion(&mut report, &stability, &gain);
    simulation_criterion(&mut report, &gain);

    println!("acceptance: {} of 8 criteria passed", 8 - report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
