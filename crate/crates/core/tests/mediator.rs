use nalgebra::DMatrix;
use proptest::prelude::*;
use qclock::mediator::*;
use qclock::qla::{exp_hermitian, sigma_z, unitarity_defect, C64};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let mut h = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = C64::from(rng.random_range(-1.0..1.0));
        for j in 0..i {
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    h
}

fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    exp_hermitian(&random_hermitian(n, rng), 2.0)
}

fn eye(n: usize) -> DMatrix<C64> {
    DMatrix::identity(n, n)
}

/// Phase e^{-iφ_s τ} on the aux |0⟩ level, controlled by the spin.
fn controlled_phase(phases: [f64; 2], tau: f64, d: usize, spin_first: bool) -> DMatrix<C64> {
    let mut u = eye(2 * d);
    for (s, ph) in phases.iter().enumerate() {
        let i = if spin_first { s * d } else { s };
        u[(i, i)] = C64::from_polar(1.0, -ph * tau);
    }
    u
}

#[test]
fn zero_hamiltonian_identity_is_exact() {
    let p = MediatorProblem::new(DMatrix::zeros(4, 4), 1.0, 2).unwrap();
    assert!(residual(&p, &eye(4), &eye(4)).unwrap() < 1e-28);
}

#[test]
fn local_diagonal_by_controlled_phases() {
    // H = a σz⊗I + b I⊗σz + c
    let (a, b, c, tau) = (0.7, -0.3, 0.2, 1.3);
    let mut h = DMatrix::<C64>::zeros(4, 4);
    for s1 in 0..2 {
        for s2 in 0..2 {
            let z = |s: usize| if s == 0 { 1.0 } else { -1.0 };
            h[(2 * s1 + s2, 2 * s1 + s2)] = C64::from(a * z(s1) + b * z(s2) + c);
        }
    }
    for d in 2..5 {
        let p = MediatorProblem::new(h.clone(), tau, d).unwrap();
        let u1 = controlled_phase([a + c, -a + c], tau, d, true);
        let u2 = controlled_phase([b, -b], tau, d, false);
        assert!(residual(&p, &u1, &u2).unwrap() < 1e-26, "d={d}");
    }
}

#[test]
fn random_unitaries_leave_a_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p = MediatorProblem::from_target(Target::Pair, 1.0, 3).unwrap();
    for _ in 0..5 {
        let r = residual(&p, &random_unitary(6, &mut rng), &random_unitary(6, &mut rng)).unwrap();
        assert!(r > 1e-3);
        assert!(r <= 16.0 + 1e-12);
    }
}

#[test]
fn non_unitary_input_rejected() {
    let p = MediatorProblem::from_target(Target::Pair, 1.0, 2).unwrap();
    let bad = eye(4) * C64::from(1.01);
    assert!(residual(&p, &bad, &eye(4)).is_err());
    assert!(residual(&p, &eye(6), &eye(4)).is_err());
    assert!(MediatorProblem::new(DMatrix::zeros(4, 4), 0.0, 2).is_err());
    assert!(MediatorProblem::new(DMatrix::zeros(4, 4), 1.0, 1).is_err());
    let mut nh = DMatrix::<C64>::zeros(4, 4);
    nh[(0, 1)] = C64::from(1.0);
    assert!(MediatorProblem::new(nh, 1.0, 2).is_err());
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in [2, 3] {
        let p = MediatorProblem::from_target(Target::Pair, 0.8, d).unwrap();
        let u1 = random_unitary(2 * d, &mut rng);
        let u2 = random_unitary(2 * d, &mut rng);
        for _ in 0..4 {
            let x1 = random_hermitian(2 * d, &mut rng) * C64::new(0.0, 1.0);
            let x2 = random_hermitian(2 * d, &mut rng) * C64::new(0.0, 1.0);
            let (fd, an) = directional_derivative(&p, &u1, &u2, &x1, &x2, 1e-5);
            assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "{fd} vs {an}");
        }
    }
}

#[test]
fn local_target_is_realized_at_qubit_aux() {
    let p = MediatorProblem::from_target(Target::LocalZ { omega: 1.0 }, 1.0, 2).unwrap();
    let sol = optimize(&p, &OptimizeOptions { restarts: 2, max_iters: 2000, seed: 11 }).unwrap();
    assert!(sol.residual < 1e-8, "{}", sol.residual);
    assert!(sol.realizable());
    assert!(unitarity_defect(&sol.u1) < 1e-10 && unitarity_defect(&sol.u2) < 1e-10);
    // explicit construction
    let u1 = exp_hermitian(&sigma_z(), 1.0).kronecker(&eye(2));
    assert!(residual(&p, &u1, &eye(4)).unwrap() < 1e-28);
}

#[test]
fn zero_residual_round_trips_compose() {
    let p = MediatorProblem::from_target(Target::LocalZ { omega: 0.9 }, 1.0, 2).unwrap();
    let sol = optimize(&p, &OptimizeOptions { restarts: 1, max_iters: 2000, seed: 1 }).unwrap();
    for k in 1..=8 {
        let e = round_trip_error(&p, &sol.u1, &sol.u2, k).unwrap();
        assert!(e <= k as f64 * 1e-6, "k={k}: {e}");
    }
}

#[test]
fn embedding_preserves_residual() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for d in 2..5 {
        let p = MediatorProblem::from_target(Target::Pair, 1.0, d).unwrap();
        let q = p.with_dim(d + 1).unwrap();
        let u1 = random_unitary(2 * d, &mut rng);
        let u2 = random_unitary(2 * d, &mut rng);
        let e1 = embed_unitary(&u1, d, d + 1, true);
        let e2 = embed_unitary(&u2, d, d + 1, false);
        let a = residual(&p, &u1, &u2).unwrap();
        let b = residual(&q, &e1, &e2).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} {b}");
    }
}

#[test]
fn optimizer_is_deterministic_and_improves_on_identity() {
    let p = MediatorProblem::from_target(Target::Pair, 1.0, 2).unwrap();
    let opts = OptimizeOptions { restarts: 4, max_iters: 300, seed: 42 };
    let a = optimize(&p, &opts).unwrap();
    let b = optimize(&p, &opts).unwrap();
    assert_eq!(a, b);
    let id = residual(&p, &eye(4), &eye(4)).unwrap();
    assert!(a.residual <= id);
    assert!((42..46).contains(&a.seed));
    let bad = OptimizeOptions { restarts: 0, ..opts };
    assert!(optimize(&p, &bad).is_err());
}

#[test]
fn scan_is_monotone_and_serializes() {
    let p = MediatorProblem::from_target(Target::Pair, 1.0, 2).unwrap();
    let opts = OptimizeOptions { restarts: 3, max_iters: 300, seed: 1 };
    let rep = dimension_scan(&p, &[4, 2, 3], &opts).unwrap();
    assert_eq!(rep.rows.iter().map(|r| r.d).collect::<Vec<_>>(), vec![2, 3, 4]);
    assert!(rep.monotone);
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("d,residual,restarts,iterations,seed\n"));
    assert_eq!(text.lines().count(), 4);
    let json = serde_json::to_string(&rep.solutions[0]).unwrap();
    let back: MediatorSolution = serde_json::from_str(&json).unwrap();
    assert!((back.u1 - &rep.solutions[0].u1).norm() < 1e-15);
    assert_eq!(dimension_scan(&p, &[2], &opts).unwrap().rows.len(), 1);
    assert!(dimension_scan(&p, &[], &opts).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn residual_gauge_invariant(seed in 0u64..1000, shift in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(4, &mut rng);
        let p = MediatorProblem::new(h.clone(), 0.7, 2).unwrap();
        let q = MediatorProblem::new(h + eye(4) * C64::from(shift), 0.7, 2).unwrap();
        let u1 = random_unitary(4, &mut rng);
        let u2 = random_unitary(4, &mut rng);
        let phased = &u1 * C64::from_polar(1.0, -shift * 0.7);
        let a = residual(&p, &u1, &u2).unwrap();
        let b = residual(&q, &phased, &u2).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
        prop_assert!(a >= 0.0);
    }
}
