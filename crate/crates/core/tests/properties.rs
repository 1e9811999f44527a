use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reluqc::lifting::{lift, stack_sequence, validate_lift};
use reluqc::linalg::{matrix_power, spectral_norm};
use reluqc::qc::{
    assemble, assemble_m_dh, assemble_m_relu, is_doubly_hyperdominant, is_metzler,
    is_symmetric_nonnegative, quadratic_form, qc_residual, sample_qc_variables, scale_m, QcClass,
    QcKind, QcVariables,
};
use reluqc::sysmodel::{build_lurye, tf_to_ss, PlantMatrices, StateSpace, TransferFunctionSiso};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random plant with `|A|_2 <= 1` so powers stay unit scale.
fn random_plant(seed: u64) -> StateSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = rng.random_range(1..=5);
    let n_v = rng.random_range(1..=3);
    let n_d = rng.random_range(0..=3);
    let n_e = rng.random_range(0..=3);
    let mut a = random_matrix(&mut rng, n_x, n_x);
    let norm = spectral_norm(&a);
    if norm > 1.0 {
        a /= norm;
    }
    StateSpace::new(PlantMatrices {
        a: Some(a),
        b1: Some(random_matrix(&mut rng, n_x, n_v)),
        b2: Some(random_matrix(&mut rng, n_x, n_d)),
        c1: Some(random_matrix(&mut rng, n_v, n_x)),
        c2: Some(random_matrix(&mut rng, n_e, n_x)),
        d11: Some(random_matrix(&mut rng, n_v, n_v)),
        d12: Some(random_matrix(&mut rng, n_v, n_d)),
        d21: Some(random_matrix(&mut rng, n_e, n_v)),
        d22: Some(random_matrix(&mut rng, n_e, n_d)),
    })
    .unwrap()
}

fn relu_v(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

fn gaussian(rng: &mut ChaCha8Rng, m: usize) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.sample(rand_distr::StandardNormal))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn realization_matches_difference_equation(
        n in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lead = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let mut den = vec![lead];
        den.extend((0..n).map(|_| lead * rng.random_range(-0.9..0.9) / n as f64));
        let num_len = rng.random_range(1..=n);
        let num: Vec<f64> = (0..num_len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let r = tf_to_ss(&TransferFunctionSiso { num: num.clone(), den: den.clone() }).unwrap();

        let u: Vec<f64> = (0..100).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        // den[0] y(k) + sum_i den[i] y(k-i) = sum_j num_pad[j] u(k-j), num right-aligned.
        let mut num_pad = vec![0.0; n + 1 - num_len];
        num_pad.extend(&num);
        let mut y_ref = vec![0.0; u.len()];
        for k in 0..u.len() {
            let mut acc = 0.0;
            for j in 0..=n {
                if k >= j {
                    acc += num_pad[j] * u[k - j];
                }
            }
            for i in 1..=n {
                if k >= i {
                    acc -= den[i] * y_ref[k - i];
                }
            }
            y_ref[k] = acc / den[0];
        }
        let mut x = DVector::zeros(n);
        let mut worst = 0.0_f64;
        let mut peak = 0.0_f64;
        for k in 0..u.len() {
            let y = (&r.c * &x)[0];
            x = &r.a * &x + &r.b * u[k];
            worst = worst.max((y - y_ref[k]).abs());
            peak = peak.max(y_ref[k].abs());
        }
        prop_assert!(worst <= 1e-10 * peak.max(1.0), "error {worst}, peak {peak}");
    }

    #[test]
    fn lurye_identity_loop_has_expected_characteristic_polynomial(alpha in 0.0f64..300.0) {
        let ss = build_lurye(alpha).unwrap();
        let cl = ss.a() + ss.b1() * ss.c1();
        // z^2 - trace z + det
        let trace = cl.trace();
        let det = cl.determinant();
        prop_assert!((-trace - (2.0 * alpha - 0.5)).abs() <= 1e-12 * (1.0 + alpha));
        prop_assert!((det - 0.92 * alpha).abs() <= 1e-12 * (1.0 + alpha));
    }

    #[test]
    fn lifting_is_exact(seed in any::<u64>(), n in 1usize..=12) {
        let ss = random_plant(seed);
        let lifted = lift(&ss, n).unwrap();
        prop_assert!(validate_lift(&ss, &lifted, 3, 4, seed) <= 1e-9);
        let mut direct = ss.a().clone_owned();
        direct = direct.pow((n - 1) as u32) * ss.a();
        prop_assert!((&lifted.an - &direct).amax() <= 1e-12);
        prop_assert!((&lifted.an - matrix_power(ss.a(), n)).amax() <= 1e-12);
    }

    #[test]
    fn stacking_preserves_energy(
        len in 0usize..40,
        base in 1usize..4,
        n in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq: Vec<_> = (0..len).map(|_| gaussian(&mut rng, base)).collect();
        let stacks = stack_sequence(&seq, base, n).unwrap();
        let original: f64 = seq.iter().map(|s| s.norm_squared()).sum();
        let stacked: f64 = stacks.iter().map(|s| s.data().norm_squared()).sum();
        prop_assert!((original - stacked).abs() <= 1e-12 * original.max(1.0));
        let round_trip: Vec<_> = stacks.iter().flat_map(|s| s.to_chronological()).collect();
        prop_assert_eq!(&round_trip[..len], &seq[..]);
    }

    #[test]
    fn sampled_multipliers_are_valid_qcs(seed in any::<u64>(), m in 1usize..=24, relu in any::<bool>()) {
        let kind = if relu { QcKind::ReluFull } else { QcKind::DoublyHyperdominant };
        let vars = sample_qc_variables(QcClass { kind, m }, seed);
        prop_assert!(vars.check_cones(1e-9).is_ok());
        let qc = assemble(vars).unwrap();
        prop_assert_eq!(qc.matrix(), &qc.matrix().transpose());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..50 {
            let v = gaussian(&mut rng, m);
            prop_assert!(qc_residual(&qc, &v).unwrap() >= -1e-9);
        }
    }

    #[test]
    fn diagonal_qt_is_complementarity(seed in any::<u64>(), m in 1usize..=24) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qt = DMatrix::from_diagonal(&gaussian(&mut rng, m).map(|x| 10.0 * x));
        let qc = assemble_m_relu(DMatrix::zeros(m, m), DMatrix::zeros(m, m), qt).unwrap();
        for _ in 0..50 {
            let v = gaussian(&mut rng, m);
            prop_assert!(qc_residual(&qc, &v).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn dh_holds_for_slope_restricted_maps(seed in any::<u64>(), m in 1usize..=12, which in 0u8..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q0 = match sample_qc_variables(QcClass { kind: QcKind::DoublyHyperdominant, m }, seed) {
            QcVariables::DoublyHyperdominant { q0 } => q0,
            _ => unreachable!(),
        };
        let qc = assemble_m_dh(q0).unwrap();
        let level: f64 = rng.random_range(0.05..3.0);
        let leak: f64 = rng.random_range(0.0..1.0);
        let phi = |x: f64| match which {
            0 => x.clamp(-level, level),
            1 => leak * x + (1.0 - leak) * x.max(0.0),
            _ => (x / level).tanh() * level,
        };
        for _ in 0..50 {
            let v = gaussian(&mut rng, m);
            let w = v.map(phi);
            prop_assert!(quadratic_form(qc.matrix(), &v, &w) >= -1e-9);
        }
    }

    #[test]
    fn dh_embeds_in_relu_class(seed in any::<u64>(), m in 1usize..=12) {
        let q0 = match sample_qc_variables(QcClass { kind: QcKind::DoublyHyperdominant, m }, seed) {
            QcVariables::DoublyHyperdominant { q0 } => q0,
            _ => unreachable!(),
        };
        let dh = assemble_m_dh(q0.clone()).unwrap();
        let relu = assemble_m_relu(DMatrix::zeros(m, m), DMatrix::zeros(m, m), -q0).unwrap();
        prop_assert!((dh.matrix() - relu.matrix()).amax() <= 1e-12);
    }

    #[test]
    fn nonnegative_scaling_stays_in_relu_cone(seed in any::<u64>(), m in 1usize..=12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vars = sample_qc_variables(QcClass { kind: QcKind::ReluFull, m }, seed);
        let lambda: Vec<f64> = (0..m)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..5.0) })
            .collect();
        let qc = assemble(vars).unwrap();
        let scaled = scale_m(&qc, &lambda).unwrap();
        match scaled.effective_vars() {
            QcVariables::ReluFull { q2, q3, qt } => {
                prop_assert!(is_symmetric_nonnegative(&q2, 1e-9));
                prop_assert!(is_symmetric_nonnegative(&q3, 1e-9));
                prop_assert!(is_metzler(&qt, 1e-9));
            }
            _ => prop_assert!(false, "scaling changed the class"),
        }
        for _ in 0..20 {
            let v = gaussian(&mut rng, m);
            let w = relu_v(&v);
            prop_assert!(quadratic_form(scaled.matrix(), &v, &w) >= -1e-9);
        }
    }
}

#[test]
fn scaled_dh_multiplier_leaves_dh_cone_but_stays_valid() {
    let q0 = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let qc = assemble_m_dh(q0).unwrap();
    let scaled = scale_m(&qc, &[1.0, 2.0]).unwrap();
    match scaled.effective_vars() {
        QcVariables::DoublyHyperdominant { q0 } => {
            assert_eq!(q0, DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 4.0]));
            assert!(!is_doubly_hyperdominant(&q0, 1e-9));
        }
        other => panic!("unexpected {other:?}"),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let v = gaussian(&mut rng, 2);
        assert!(qc_residual(&scaled, &v).unwrap() >= -1e-9);
    }
}
