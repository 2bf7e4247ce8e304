use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qclock::clock_sim::*;
use qclock::qla::{exp_hermitian, trace_distance, C64};
use qclock::wavepacket_analytic::*;
use qclock::Error;

fn single(omega: f64, theta: f64, delta: f64, n: usize) -> AutonomousScenario {
    let p = WavePacket::new(-7.0 * delta, 0.0, delta).unwrap();
    let clocks = ClockState::Single(p);
    let plan = plan_lattice(n, &clocks, 2.0 * omega, 7.0).unwrap();
    AutonomousScenario {
        system: SystemKind::SingleSpinTheta { omega, theta },
        clocks,
        lattice: plan.lattice,
        profile: CouplingProfile::Point,
        total_time: plan.total_time,
        dt: plan.lattice.dx,
        checkpoints: 4,
    }
}

fn chain(n: usize, e0: f64, delta: f64, xi: f64, yi: f64, alice: bool, bob: bool) -> AutonomousScenario {
    let clocks = ClockState::Pair(WavePacket::new(-xi, 0.0, delta).unwrap(), WavePacket::new(-yi, 0.0, delta).unwrap());
    let plan = plan_lattice(n, &clocks, 2.0 * e0, 7.0).unwrap();
    AutonomousScenario {
        system: SystemKind::Chain3 { e0, alice, bob },
        clocks,
        lattice: plan.lattice,
        profile: CouplingProfile::Point,
        total_time: plan.total_time,
        dt: plan.lattice.dx,
        checkpoints: 8,
    }
}

#[test]
fn single_spin_matches_oracle() {
    for theta in [FRAC_PI_4, 0.3, 0.0] {
        let s = single(1.0, theta, 2.0, 512);
        let tr = run(&s).unwrap();
        let f = &tr.final_state;
        assert!((f.norm_sqr() - 1.0).abs() < 1e-10);
        let ClockState::Single(p) = s.clocks else { unreachable!() };
        let oracle = single_spin_theta_final(theta, 1.0, p, s.total_time, PointerPhase::VonNeumann).unwrap();
        let fid = f.fidelity_with_expansion(&oracle).unwrap();
        assert!(fid > 1.0 - 1e-9, "θ={theta}: {fid}");
        let rho = f.discrete_density();
        assert!((rho - oracle.discrete_density()).norm() < 1e-8);
    }
}

#[test]
fn energy_basis_branches_are_unkicked() {
    let (c, s_) = (C64::new(0.6, 0.0), C64::new(0.0, 0.8));
    let mut s = single(1.0, 0.0, 1.0, 256);
    s.system = SystemKind::SingleSpinEnergy { omega: 1.0, up: c, down: s_ };
    let ham = build_hamiltonian(&s).unwrap();
    assert!(ham.system_commutator(0) < 1e-12);
    let tr = run(&s).unwrap();
    let ClockState::Single(p) = s.clocks else { unreachable!() };
    let oracle = energy_measurement_final(c, s_, 1.0, p, s.total_time, PointerPhase::VonNeumann).unwrap();
    assert!(tr.final_state.fidelity_with_expansion(&oracle).unwrap() > 1.0 - 1e-9);
    assert!(tr.final_state.mean_momentum(0).abs() < 1e-10);
    let br = measure_pointers(&tr.final_state, &[1]).unwrap();
    assert!((br[1].probability - 0.36).abs() < 1e-10);
}

#[test]
fn double_pointer_pair_and_joint_match_oracle() {
    let omega = 1.0;
    let pair = ClockState::Pair(WavePacket::new(-6.0, 0.0, 0.7).unwrap(), WavePacket::new(-6.5, 0.0, 0.7).unwrap());
    let joint = ClockState::Joint(JointGaussian::new((-7.0, -7.0), 1.0, 0.4).unwrap());
    for clocks in [pair, joint] {
        let plan = plan_lattice(256, &clocks, 2.0 * omega, 6.0).unwrap();
        let s = AutonomousScenario {
            system: SystemKind::SingleSpinTwoPointers { omega, theta: 0.4 },
            clocks,
            lattice: plan.lattice,
            profile: CouplingProfile::Point,
            total_time: plan.total_time,
            dt: plan.lattice.dx,
            checkpoints: 1,
        };
        let tr = run(&s).unwrap();
        let oracle = double_pointer_final(0.4, omega, clocks, s.total_time, OracleOptions::default()).unwrap();
        let fid = tr.final_state.fidelity_with_expansion(&oracle).unwrap();
        assert!(fid > 1.0 - 1e-8, "{clocks:?}: {fid}");
    }
}

#[test]
fn chain_matches_oracle_and_conserves_energy() {
    for delta in [0.05, 3.0] {
        let e0 = 2.0;
        let s = chain(512, e0, delta, 7.0 * delta, 7.5 * delta, true, true);
        let tr = run(&s).unwrap();
        let oracle = chain3_final(ChainScale::new(e0).unwrap(), s.clocks, s.total_time, OracleOptions::default()).unwrap();
        let fid = tr.final_state.fidelity_with_expansion(&oracle).unwrap();
        assert!(fid > 0.999, "Δ={delta}: {fid}");
        for r in energy_bookkeeping(&tr) {
            assert!((r.norm - 1.0).abs() < 1e-10);
            assert_eq!(r.pointer, 0.0);
        }
        assert!(tr.energy_drift().abs() < 1e-6, "{}", tr.energy_drift());
    }
}

#[test]
fn sequential_chain_checkpoint_matches_intermediate_oracle() {
    let delta = 3.0;
    let s = chain(512, 2.0, delta, 7.0 * delta, 25.0 * delta, true, true);
    let init = initial_state(&s).unwrap();
    let tr = evolve(&init, &s, EvolveOptions { checkpoints: 4, keep_states: true }).unwrap();
    let scale = ChainScale::new(2.0).unwrap();
    // Alice has cleared the coupling and Bob has not reached it.
    let mid = tr
        .checkpoints
        .iter()
        .find(|c| c.energy.time > 13.5 * delta && c.energy.time < 18.5 * delta)
        .expect("a checkpoint between the two passages");
    let t = mid.energy.time;
    let oracle = sequential_chain3_intermediate(scale, s.clocks, t, OracleOptions::default()).unwrap();
    let st = mid.state.as_ref().unwrap();
    assert!(st.fidelity_with_expansion(&oracle).unwrap() > 1.0 - 1e-8);
    let fin = sequential_chain3_final(scale, s.clocks, s.total_time, OracleOptions::default()).unwrap();
    assert!(tr.final_state.fidelity_with_expansion(&fin).unwrap() > 1.0 - 1e-8);
    let dist = st.momentum_distribution(0);
    let w = 1.0;
    assert!((mass_near(&dist, 0.0, w) - 0.625).abs() < 1e-6);
    assert!((mass_near(&dist, -2.0, w) - 0.25).abs() < 1e-6);
    assert!((mass_near(&dist, -4.0, w) - 0.125).abs() < 1e-6);
    let joint = tr.final_state.joint_momentum_distribution().unwrap();
    assert!((joint.mass_near(-4.0, 4.0, w) - 1.0 / 64.0).abs() < 1e-6);
}

/// Strang splitting of the same Hamiltonian applied directly in the lab frame.
fn lab_reference(s: &AutonomousScenario) -> Vec<C64> {
    let ham = build_hamiltonian(s).unwrap();
    let init = initial_state(s).unwrap();
    let n = s.lattice.n;
    let d = ham.discrete.total();
    let mut g = vec![0.0; n];
    for &(j, w) in &ham.profile {
        g[j] = w;
    }
    let w = ham.couplings[0].matrix();
    let half: Vec<DMatrix<C64>> = g.iter().map(|&gj| exp_hermitian(w, gj * s.dt / 2.0)).collect();
    let f = exp_hermitian(ham.system.matrix(), s.dt);
    let mut psi = init.amplitudes().to_vec();
    let apply = |psi: &mut Vec<C64>, m: &dyn Fn(usize) -> DMatrix<C64>| {
        for j in 0..n {
            let v = m(j) * DVector::from_column_slice(&psi[j * d..j * d + d]);
            psi[j * d..j * d + d].copy_from_slice(v.as_slice());
        }
    };
    for _ in 0..s.steps() {
        apply(&mut psi, &|j| half[j].clone());
        apply(&mut psi, &|_| f.clone());
        psi.rotate_right(d);
        apply(&mut psi, &|j| half[j].clone());
    }
    psi
}

#[test]
fn moving_frame_agrees_with_lab_stepper() {
    let p = WavePacket::new(-4.5, 0.5, 0.5).unwrap();
    for profile in [CouplingProfile::Point, CouplingProfile::GaussianBump { half_width: 0.3 }, CouplingProfile::TopHat { half_width: 0.3 }] {
        let s = AutonomousScenario {
            system: SystemKind::SingleSpinTheta { omega: 1.3, theta: 0.7 },
            clocks: ClockState::Single(p),
            lattice: ClockLattice::new(128, 0.125).unwrap(),
            profile,
            total_time: 9.0,
            dt: 0.125,
            checkpoints: 3,
        };
        let tr = run(&s).unwrap();
        let want = lab_reference(&s);
        let diff = tr.final_state.amplitudes().iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{profile:?}: {diff}");
    }
}

#[test]
fn extended_coupling_converges_at_second_order() {
    let mut errs = Vec::new();
    for dx in [0.1, 0.05, 0.025] {
        let p = WavePacket::new(-6.0, 0.0, 0.6).unwrap();
        let n = (24.0 / dx) as usize;
        let s = AutonomousScenario {
            system: SystemKind::SingleSpinTheta { omega: 1.0, theta: 0.5 },
            clocks: ClockState::Single(p),
            lattice: ClockLattice::new(n, dx).unwrap(),
            profile: CouplingProfile::GaussianBump { half_width: 0.4 },
            total_time: 12.0,
            dt: dx,
            checkpoints: 20,
        };
        errs.push(run(&s).unwrap().max_energy_excursion());
    }
    let order1 = (errs[0] / errs[1]).log2();
    let order2 = (errs[1] / errs[2]).log2();
    assert!((order1 - 2.0).abs() < 0.3 && (order2 - 2.0).abs() < 0.3, "{errs:?}");
}

#[test]
fn free_clock_is_rigid() {
    let mut s = single(1.0, 0.3, 1.0, 256);
    s.profile = CouplingProfile::Off;
    let init = initial_state(&s).unwrap();
    let tr = evolve(&init, &s, EvolveOptions { checkpoints: 5, keep_states: true }).unwrap();
    let (m0, s0) = init.position_stats(0);
    for c in &tr.checkpoints {
        let st = c.state.as_ref().unwrap();
        let (m, sd) = st.position_stats(0);
        assert!((m - m0 - c.energy.time).abs() < 1e-9);
        assert!((sd - s0).abs() < 1e-8);
        assert!((c.energy.h_total - tr.checkpoints[0].energy.h_total).abs() < 1e-12);
    }
}

#[test]
fn only_bob_budget_and_back_action() {
    let e0 = 2.0;
    let delta = 0.005;
    let only_b = chain(256, e0, delta, 7.0 * delta, 7.0 * delta, false, true);
    let both = chain(256, e0, delta, 7.0 * delta, 7.0 * delta, true, true);
    let h0 = only_b.system.initial_energy().unwrap();
    let rb = run(&only_b).unwrap();
    let r2 = run(&both).unwrap();
    let (b0, b1) = (energy_bookkeeping(&rb)[0], *energy_bookkeeping(&rb).last().unwrap());
    assert!((b0.h_system - h0).abs() < 1e-12);
    assert!((b1.h_system - b0.h_system - e0 / 2.0).abs() < 1e-3 * e0, "{}", b1.h_system - b0.h_system);
    assert!((b1.p[0] + b1.p[1] + b1.h_system - b0.h_system).abs() < 1e-3 * e0);
    let (c0, c1) = (energy_bookkeeping(&r2)[0], *energy_bookkeeping(&r2).last().unwrap());
    assert!((c1.h_system - c0.h_system - e0).abs() < 1e-3 * e0);
    // Bob's measurement changes Alice's reduced spin.
    let before = initial_state(&only_b).unwrap().reduced(&[0], &[]).unwrap();
    let after = rb.final_state.reduced(&[0], &[]).unwrap();
    let d = trace_distance(&before, &after).unwrap();
    assert!(d > 1e-4, "{d}");
}

#[test]
fn pointer_branches_are_subnormalized() {
    let s = single(1.0, 0.0, 1.0, 256);
    let tr = run(&s).unwrap();
    let br = measure_pointers(&tr.final_state, &[1]).unwrap();
    // θ = 0 from |↓⟩: the pointer never flips.
    assert!((br[0].probability - 1.0).abs() < 1e-12);
    assert!(br[1].state.is_none() || br[1].probability < 1e-20);
    let s = single(1.0, 0.6, 1.0, 256);
    let tr = run(&s).unwrap();
    let br = measure_pointers(&tr.final_state, &[1]).unwrap();
    let total: f64 = br.iter().map(|b| b.state.as_ref().unwrap().norm_sqr()).sum();
    assert!((total - 1.0).abs() < 1e-10);
    for b in &br {
        assert!((b.state.as_ref().unwrap().norm_sqr() - b.probability).abs() < 1e-12);
    }
    assert!(measure_pointers(&tr.final_state, &[5]).is_err());
}

#[test]
fn kicked_branch_momentum() {
    let s = single(1.0, FRAC_PI_4, 2.0, 512);
    let tr = run(&s).unwrap();
    let dist = tr.final_state.momentum_distribution(0);
    assert!((dist.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-10);
    // The |↑⟩ branches hold s²c² + s²c² = 1/2 and carry the kick −2ω.
    assert!((mass_near(&dist, -2.0, 1.0) - 0.5).abs() < 1e-4);
    assert!((tr.final_state.mean_momentum(0) + 1.0).abs() < 1e-8);
}

#[test]
fn pulse_reference_matches_sharp_limit() {
    let theta: f64 = 0.9;
    let (s, c) = theta.sin_cos();
    let down = qclock::qla::StateVector::qubit(C64::from(0.0), C64::from(1.0));
    let out = vonneumann_reference(&down, Observable::Theta(theta), &Pulse::gaussian(0.2, 0.01)).unwrap();
    let a = out.amplitudes();
    // [↑u, ↑f, ↓u, ↓f]
    let want = [C64::from(-s * c), C64::new(0.0, -s * c), C64::from(c * c), C64::new(0.0, -s * s)];
    for (x, y) in a.iter().zip(want) {
        assert!((x - y).norm() < 1e-12);
    }
    let rho = out.projector();
    assert!((rho.trace() - 1.0).abs() < 1e-12);
}

#[test]
fn errors() {
    let mut s = single(1.0, 0.3, 1.0, 256);
    s.dt = s.lattice.dx * 0.5;
    assert!(matches!(run(&s), Err(Error::IncommensurateStep { .. })));
    let mut s = single(1.0, 0.3, 1.0, 256);
    s.lattice = ClockLattice::new(32, s.lattice.dx).unwrap();
    assert!(matches!(run(&s), Err(Error::LatticeTooSmall(_))));
    let mut s = single(1.0, 0.3, 1.0, 256);
    s.total_time = (s.total_time / 2.0 / s.dt).round() * s.dt;
    assert!(matches!(run(&s), Err(Error::InteractionIncomplete(_))));
    assert!(matches!(ClockLattice::new(8, 0.1), Err(Error::LatticeTooSmall(_))));
    let mut s = single(1.0, 0.3, 1.0, 256);
    s.clocks = ClockState::Pair(WavePacket::new(-7.0, 0.0, 1.0).unwrap(), WavePacket::new(-7.0, 0.0, 1.0).unwrap());
    assert!(matches!(run(&s), Err(Error::InvalidScenario(_))));
    assert!(plan_lattice(16, &ClockState::Single(WavePacket::new(-50.0, 0.0, 0.1).unwrap()), 1.0, 7.0).is_err());
}

#[test]
fn scenario_json_round_trip_and_csv() {
    let s = chain(256, 2.0, 0.05, 0.35, 0.4, true, true);
    let text = serde_json::to_string_pretty(&s).unwrap();
    let back: AutonomousScenario = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
    let tr = run(&back).unwrap();
    let mut buf = Vec::new();
    tr.write_energy_csv(&mut buf).unwrap();
    let csv = String::from_utf8(buf).unwrap();
    assert!(csv.starts_with("t,h_total,h_chain,p_a,p_b,norm\n"));
    assert_eq!(csv.lines().count(), tr.checkpoints.len() + 1);
    let summary = tr.final_state.branch_summary(1e-6);
    let w: f64 = summary["branches"].as_array().unwrap().iter().map(|b| b["weight"].as_f64().unwrap()).sum();
    assert!((w - 1.0).abs() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn norm_conserved(theta in 0.0..PI, omega in 0.2..2.0f64, p0 in -1.0..1.0f64) {
        let p = WavePacket::new(-4.0, p0, 0.5).unwrap();
        let s = AutonomousScenario {
            system: SystemKind::SingleSpinTheta { omega, theta },
            clocks: ClockState::Single(p),
            lattice: ClockLattice::new(128, 0.125).unwrap(),
            profile: CouplingProfile::GaussianBump { half_width: 0.25 },
            total_time: 8.0,
            dt: 0.125,
            checkpoints: 4,
        };
        let tr = run(&s).unwrap();
        for r in energy_bookkeeping(&tr) {
            prop_assert!((r.norm - 1.0).abs() < 1e-10);
        }
    }
}
