use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::DMatrix;
use proptest::prelude::*;
use qclock::qla::{exp_hermitian, eye, sigma_x, sigma_z, trace_distance, DensityOperator, SubsystemShape, C64};
use qclock::spin_chain::{chain_hamiltonian, named_eigenstate, ChainLabel, ChainSpec};
use qclock::wavepacket_analytic::*;
use qclock::Error;

fn kron_all(ms: &[DMatrix<C64>]) -> DMatrix<C64> {
    ms.iter().skip(1).fold(ms[0].clone(), |acc, m| acc.kronecker(m))
}

fn proj(v: [f64; 2]) -> DMatrix<C64> {
    DMatrix::from_fn(2, 2, |i, j| C64::from(v[i] * v[j]))
}

/// Discrete amplitudes at clock positions r, built by sequencing free
/// evolutions with the instantaneous kicks e^{−iπ/2 W} in passage order.
struct PathOracle {
    h: DMatrix<C64>,
    couplings: Vec<DMatrix<C64>>,
    init: Vec<C64>,
}

impl PathOracle {
    fn evaluate(&self, clock: &ClockState, t: f64, r: &[f64]) -> Vec<C64> {
        let mut order: Vec<usize> = (0..r.len()).collect();
        // Passage time is t − r; larger position means earlier passage.
        order.retain(|&k| r[k] > 0.0);
        order.sort_by(|&a, &b| r[b].partial_cmp(&r[a]).unwrap().then(a.cmp(&b)));
        let mut v = nalgebra::DVector::from_vec(self.init.clone());
        let mut now = 0.0;
        for &k in &order {
            let pass = t - r[k];
            v = exp_hermitian(&self.h, pass - now) * v;
            v = exp_hermitian(&self.couplings[k], FRAC_PI_2) * v;
            now = pass;
        }
        v = exp_hermitian(&self.h, t - now) * v;
        let amp = clock.propagated(t).amplitude(r);
        v.iter().map(|z| z * amp).collect()
    }
}

fn single_spin_oracle(theta: f64, omega: f64, pointers: usize) -> PathOracle {
    let (s, c) = theta.sin_cos();
    let i2 = eye(2);
    let p = proj([c, s]);
    let mut h = vec![sigma_z() * C64::from(omega)];
    h.extend(std::iter::repeat(i2.clone()).take(pointers));
    let couplings = (0..pointers)
        .map(|k| {
            let mut f = vec![p.clone()];
            for j in 0..pointers {
                f.push(if j == k { sigma_x() } else { i2.clone() });
            }
            kron_all(&f)
        })
        .collect();
    let d = 2usize << pointers;
    let mut init = vec![C64::from(0.0); d];
    init[1 << pointers] = C64::from(1.0); // |↓, 0, ...⟩
    PathOracle { h: kron_all(&h), couplings, init }
}

fn chain_oracle(e0: f64) -> PathOracle {
    let i2 = eye(2);
    let up = proj([1.0, 0.0]);
    let hc = chain_hamiltonian(&ChainSpec::three(1.0).unwrap()).matrix() * C64::from(e0);
    let h = kron_all(&[hc, i2.clone(), i2.clone()]);
    let wa = kron_all(&[up.clone(), i2.clone(), i2.clone(), sigma_x(), i2.clone()]);
    let wb = kron_all(&[i2.clone(), i2.clone(), up, i2.clone(), sigma_x()]);
    let init = named_eigenstate(ChainLabel::MINUS).kron(&qclock::qla::StateVector::qubit(C64::from(1.0), C64::from(0.0))).kron(&qclock::qla::StateVector::qubit(C64::from(1.0), C64::from(0.0)));
    PathOracle { h, couplings: vec![wa, wb], init: init.into_amplitudes() }
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn sample_points(b: &BranchExpansion) -> Vec<Vec<f64>> {
    let m = b.clock.mean();
    let s: Vec<f64> = (0..m.len()).map(|j| b.clock.std(j)).collect();
    let offsets = [-1.7, -0.6, 0.0, 0.45, 1.3];
    let mut pts = Vec::new();
    if m.len() == 1 {
        for o in offsets {
            pts.push(vec![m[0] + o * s[0]]);
        }
    } else {
        for oa in offsets {
            for ob in offsets {
                pts.push(vec![m[0] + oa * s[0], m[1] + ob * s[1]]);
            }
        }
    }
    pts
}

fn pair(xi: f64, yi: f64, delta: f64) -> ClockState {
    ClockState::Pair(WavePacket::new(-xi, 0.3, delta).unwrap(), WavePacket::new(-yi, -0.2, delta).unwrap())
}

#[test]
fn single_spin_matches_path_oracle() {
    for theta in [FRAC_PI_4, 0.3, 1.2] {
        let p = WavePacket::new(-14.0, 0.5, 2.0).unwrap();
        let t = 40.0;
        let b = single_spin_theta_final(theta, 1.0, p, t, PointerPhase::VonNeumann).unwrap();
        let o = single_spin_oracle(theta, 1.0, 1);
        for r in sample_points(&b) {
            assert!(max_diff(&b.evaluate(&r), &o.evaluate(&ClockState::Single(p), t, &r)) < 1e-12);
        }
        assert!((b.norm_sqr() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn single_spin_branch_structure() {
    let p = WavePacket::new(-14.0, 0.5, 2.0).unwrap();
    let b = single_spin_theta_final(FRAC_PI_4, 1.0, p, 40.0, PointerPhase::Cnot).unwrap();
    assert_eq!(b.terms.len(), 4);
    for t in &b.terms {
        assert!((t.coefficient.norm() - 0.5).abs() < 1e-14);
    }
    let kicked = b.clock.packets(&b.terms[0].kicks)[0];
    assert!((kicked.p0 - (0.5 - 2.0)).abs() < 1e-14 && (kicked.x0 - 26.0).abs() < 1e-14);
    let masses = b.kick_masses(0);
    let m = masses.iter().find(|(k, _)| (k + 2.0).abs() < 1e-12).unwrap().1;
    assert!((m - 0.5).abs() < 1e-12, "2s²c² = 1/2 at θ = π/4, got {m}");
    let one = single_spin_theta_final(FRAC_PI_2, 1.0, p, 40.0, PointerPhase::Cnot).unwrap();
    assert_eq!(one.terms.len(), 1);
    assert_eq!(one.terms[0].kicks, vec![0.0]);
}

#[test]
fn energy_basis_measurement_correlates_and_leaves_clock() {
    let p = WavePacket::new(-10.0, 0.0, 1.0).unwrap();
    let (c, s) = (C64::from(0.6), C64::from(0.8));
    let b = energy_measurement_final(c, s, 1.0, p, 30.0, PointerPhase::VonNeumann).unwrap();
    let probs = b.outcome_probabilities(&[0, 1]);
    assert!((probs[1].1 - 0.36).abs() < 1e-14 && (probs[2].1 - 0.64).abs() < 1e-14);
    assert!(b.terms.iter().all(|t| t.kicks == vec![0.0]));
}

#[test]
fn projection_postulate_limit() {
    let theta = 0.4;
    let (s, c) = (f64::sin(theta), f64::cos(theta));
    let omega = 1.0;
    let delta = 1e-3;
    let p = WavePacket::new(-0.1, 0.0, delta).unwrap();
    let b = single_spin_theta_final(theta, omega, p, 1.0, PointerPhase::VonNeumann).unwrap();
    // e^{−iωσz x̄}(s|θ⟩(−i)|f⟩ − c|θ⊥⟩|u⟩) up to the global phase, with θ⊥ = s|↑⟩ − c|↓⟩
    // and x̄ the time elapsed since the clock passed.
    let th = [c, s];
    let tp = [s, -c];
    let xbar = b.clock.mean()[0];
    let mut v = [C64::from(0.0); 4];
    for k in 0..2 {
        let ph = C64::new(0.0, -omega * xbar * if k == 0 { 1.0 } else { -1.0 }).exp();
        v[2 * k + 1] += ph * C64::new(0.0, -s * th[k]);
        v[2 * k] += ph * C64::from(-c * tp[k]);
    }
    let rho = b.discrete_density();
    let mut f = C64::from(0.0);
    for a in 0..4 {
        for bb in 0..4 {
            f += v[a].conj() * rho[(a, bb)] * v[bb];
        }
    }
    assert!(f.re >= 1.0 - 1e-6, "{}", f.re);
}

#[test]
fn double_pointer_matches_path_oracle() {
    for (theta, xi, yi) in [(FRAC_PI_4, 12.0, 12.0), (0.35, 12.0, 12.5), (1.1, 12.0, 30.0), (0.8, 25.0, 11.0)] {
        let clocks = pair(xi, yi, 1.5);
        let t = 60.0;
        let b = double_pointer_final(theta, 1.0, clocks, t, OracleOptions::default()).unwrap();
        let o = single_spin_oracle(theta, 1.0, 2);
        for r in sample_points(&b) {
            assert!(max_diff(&b.evaluate(&r), &o.evaluate(&clocks, t, &r)) < 1e-12, "θ={theta} r={r:?}");
        }
        assert!((b.norm_sqr() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn double_pointer_joint_clock_matches_path_oracle() {
    let j = JointGaussian::new((-25.0, -25.3), 4.0, 0.3).unwrap().with_momenta(0.1, 0.4);
    let clocks = ClockState::Joint(j);
    let b = double_pointer_final(0.6, 1.0, clocks, 70.0, OracleOptions::default()).unwrap();
    let o = single_spin_oracle(0.6, 1.0, 2);
    for r in sample_points(&b) {
        assert!(max_diff(&b.evaluate(&r), &o.evaluate(&clocks, 70.0, &r)) < 1e-12);
    }
    assert!((b.norm_sqr() - 1.0).abs() < 1e-10);
}

#[test]
fn double_pointer_probabilities_closed_form() {
    for &wd in &[0.05, 0.5, 1.0, 3.0] {
        for &sep in &[0.0, PI / 4.0] {
            let delta = wd;
            let clocks = pair(10.0 * delta + 5.0, 10.0 * delta + 5.0 + sep, delta);
            let b = double_pointer_final(FRAC_PI_4, 1.0, clocks, 40.0 * delta + 20.0, OracleOptions::default()).unwrap();
            let f = f_parameter(&clocks, 1.0).unwrap();
            assert!((f - 2.0 * (2.0 * sep).cos() * (-4.0 * wd * wd).exp()).abs() < 1e-12);
            let got = PointerProbs::from_expansion(&b, 1, 2);
            let want = pointer_outcome_probs(FRAC_PI_4, f);
            for (a, bb) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                assert!((got.get(a, bb) - want.get(a, bb)).abs() < 1e-10, "ωΔ={wd} sep={sep} ({a},{bb})");
            }
        }
    }
}

#[test]
fn printed_forms_hold_off_diagonal_angle_when_alice_first() {
    let clocks = pair(8.0, 40.0, 1.0);
    let b = double_pointer_final(0.5, 1.0, clocks, 80.0, OracleOptions::default()).unwrap();
    let f = f_parameter(&clocks, 1.0).unwrap();
    let got = PointerProbs::from_expansion(&b, 1, 2);
    let want = pointer_outcome_probs(0.5, f);
    for (a, bb) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        assert!((got.get(a, bb) - want.get(a, bb)).abs() < 1e-10);
    }
}

#[test]
fn alice_first_specialization() {
    let clocks = pair(8.0, 40.0, 1.0);
    let b = double_pointer_final(FRAC_PI_4, 1.0, clocks, 80.0, OracleOptions::default()).unwrap();
    let gram = b.term_gram();
    let bfirst: f64 = (0..b.terms.len())
        .filter(|&i| b.terms[i].region == Region::BFirst)
        .map(|i| gram[(i, i)].re)
        .sum();
    assert!(bfirst < 1e-12);
    let pairs = b.kick_pair_masses();
    let cross = pairs.iter().find(|((ka, kb), _)| (ka + 2.0).abs() < 1e-12 && (kb - 2.0).abs() < 1e-12).unwrap();
    // s²c²·|1−0⟩|1−0⟩ has norm² 4s⁴c⁴.
    assert!((cross.1 - 0.25).abs() < 1e-12, "{}", cross.1);
    let zero = double_pointer_final(0.0, 1.0, clocks, 80.0, OracleOptions::default()).unwrap();
    assert!(zero.terms.iter().all(|t| t.kicks.iter().all(|&k| k == 0.0)));
}

#[test]
fn sharp_clocks_give_mixed_conditional_spin() {
    let clocks = pair(40.0, 40.0, 3.0);
    let b = double_pointer_final(FRAC_PI_4, 1.0, clocks, 100.0, OracleOptions::default()).unwrap();
    let rho = b.conditional_state(&[0], &[(1, 1), (2, 1)]);
    let want = rho_11_sharp(FRAC_PI_4);
    let shape = SubsystemShape::qubits(1);
    let a = DensityOperator::new(shape.clone(), rho).unwrap().normalized().unwrap();
    let w = DensityOperator::new(shape, want).unwrap().normalized().unwrap();
    assert!(trace_distance(&a, &w).unwrap() <= 1e-2);
}

fn quad2(clock: &ClockState, f: impl Fn(f64, f64) -> f64) -> f64 {
    let m = clock.mean();
    let (sx, sy) = (clock.std(0), clock.std(1));
    let n = 600;
    let (hx, hy) = (24.0 * sx / n as f64, 24.0 * sy / n as f64);
    let mut acc = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            let x = m[0] - 12.0 * sx + i as f64 * hx;
            let y = m[1] - 12.0 * sy + j as f64 * hy;
            let w = simpson(i, n) * simpson(j, n);
            acc += w * f(x, y) * clock.amplitude(&[x, y]).norm_sqr();
        }
    }
    acc * hx * hy / 9.0
}

fn simpson(i: usize, n: usize) -> f64 {
    if i == 0 || i == n {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

#[test]
fn f_parameter_matches_quadrature() {
    let omega = 0.7;
    let cases = [
        pair(3.0, 3.4, 0.8),
        ClockState::Joint(JointGaussian::new((-3.0, -3.1), 2.0, 0.4).unwrap()),
    ];
    for c in cases {
        let q = quad2(&c, |x, y| 2.0 * (2.0 * omega * (x - y)).cos());
        assert!((q - f_parameter(&c, omega).unwrap()).abs() < 1e-8, "{q}");
    }
    let j = JointGaussian::new((-3.0, -3.0), 5.0, 0.05).unwrap();
    let f = f_parameter(&ClockState::Joint(j), 1.0).unwrap();
    assert!((f - 2.0 * (-4.0f64 * 0.0025).exp()).abs() < 1e-12);
    assert!((f_parameter(&pair(3.0, 3.0, 1.0), 1.0).unwrap() - 2.0 * (-4.0f64).exp()).abs() < 1e-14);
    let single = ClockState::Single(WavePacket::new(-3.0, 0.0, 1.0).unwrap());
    assert!(matches!(f_parameter(&single, 1.0), Err(Error::UnsupportedClockState(_))));
}

#[test]
fn packet_overlap_matches_quadrature() {
    let a = WavePacket::new(-1.0, 0.4, 0.9).unwrap();
    let b = WavePacket::new(0.5, -0.3, 1.3).unwrap().kicked(0.2);
    let n = 4000;
    let (lo, hi) = (-15.0, 15.0);
    let h = (hi - lo) / n as f64;
    let mut acc = C64::from(0.0);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        acc += a.amplitude(x).conj() * b.amplitude(x) * simpson(i, n);
    }
    acc *= h / 3.0;
    assert!((acc - a.overlap(&b)).norm() < 1e-10);
}

#[test]
fn propagation_and_kicks() {
    let p = WavePacket::new(-4.0, 0.3, 1.1).unwrap();
    assert_eq!(p.propagated(0.0), p);
    let q = p.propagated(7.0);
    assert_eq!((q.x0, q.p0, q.delta), (3.0, 0.3, 1.1));
    assert_eq!(momentum_kick(&p, 0.0), p);
    let two = momentum_kick(&momentum_kick(&p, 0.4), -1.1);
    let one = momentum_kick(&p, -0.7);
    assert!((two.p0 - one.p0).abs() < 1e-15 && (two.prefactor - one.prefactor).norm() < 1e-15);
    let b = double_pointer_final(0.7, 1.0, pair(9.0, 9.5, 1.0), 30.0, OracleOptions::default()).unwrap();
    let later = double_pointer_final(0.7, 1.0, pair(9.0, 9.5, 1.0), 42.5, OracleOptions::default()).unwrap();
    let moved = free_propagate(&b, 12.5);
    for r in sample_points(&later) {
        assert!(max_diff(&moved.evaluate(&r), &later.evaluate(&r)) < 1e-12);
    }
    assert_eq!(free_propagate(&b, 0.0).evaluate(&[21.0, 20.0]), b.evaluate(&[21.0, 20.0]));
}

#[test]
fn incomplete_interaction_rejected() {
    let p = WavePacket::new(-10.0, 0.0, 1.0).unwrap();
    assert!(matches!(
        single_spin_theta_final(0.3, 1.0, p, 12.0, PointerPhase::Cnot),
        Err(Error::InteractionIncomplete(_))
    ));
    let wide = OracleOptions { coupling_width: 2.0, ..Default::default() };
    assert!(matches!(double_pointer_final(0.3, 1.0, pair(12.0, 12.0, 1.0), 40.0, wide), Err(Error::WindowsOverlap(_))));
}

fn e0_scale(e0: f64) -> ChainScale {
    ChainScale::new(e0).unwrap()
}

#[test]
fn chain3_matches_path_oracle() {
    for (e0, xi, yi) in [(2.0, 10.0, 10.0), (1.3, 10.0, 11.0), (2.0, 24.0, 10.0)] {
        let clocks = pair(xi, yi, 1.2);
        let t = 50.0;
        let b = chain3_final(e0_scale(e0), clocks, t, OracleOptions::default()).unwrap();
        let o = chain_oracle(e0);
        for r in sample_points(&b) {
            assert!(max_diff(&b.evaluate(&r), &o.evaluate(&clocks, t, &r)) < 1e-12, "E0={e0} r={r:?}");
        }
        assert!((b.norm_sqr() - 1.0).abs() < 1e-10);
        for term in &b.terms {
            let de = term.energy + e0;
            assert!((term.kicks.iter().sum::<f64>() + de).abs() < 1e-12);
        }
    }
}

#[test]
fn chain3_first_branch_is_verbatim() {
    let b = chain3_final(e0_scale(2.0), pair(10.0, 10.0, 1.0), 40.0, OracleOptions { phase: PointerPhase::Cnot, coupling_width: 0.0 }).unwrap();
    let t = &b.terms[0];
    assert_eq!(t.region, Region::AFirst);
    let want = named_eigenstate(ChainLabel::MINUS)
        .kron(&qclock::qla::StateVector::qubit(C64::from(0.25), C64::from(0.75)))
        .kron(&qclock::qla::StateVector::qubit(C64::from(0.25), C64::from(0.75)));
    assert!(t.system.max_abs_diff(&want).unwrap() < 1e-15);
    assert!((t.coefficient.norm() - 1.0).abs() < 1e-15);
    assert_eq!(t.kicks, vec![0.0, 0.0]);
}

#[test]
fn chain3_without_kicks_reproduces_table_two() {
    let b = chain3_final(e0_scale(0.0), pair(10.0, 10.0, 1.0), 40.0, OracleOptions::default()).unwrap();
    let p = PointerProbs::from_expansion(&b, 3, 4);
    // Physical flipped pointer = spin found up = result 0.
    assert!((p.p11 - 0.5).abs() < 1e-12);
    assert!((p.p01 - 0.25).abs() < 1e-12 && (p.p10 - 0.25).abs() < 1e-12);
    assert!(p.p00.abs() < 1e-12);
    assert!((b.system_energy() - 0.0).abs() < 1e-12);
}

#[test]
fn sequential_run() {
    let e0 = 6.0;
    let clocks = pair(8.0, 60.0, 0.5);
    let mid = sequential_chain3_intermediate(e0_scale(e0), clocks, 25.0, OracleOptions::default()).unwrap();
    assert_eq!(mid.terms.len(), 3);
    assert!((mid.norm_sqr() - 1.0).abs() < 1e-10);
    let ma = mid.kick_masses(0);
    for (k, w) in [(0.0, 0.625), (-e0, 0.25), (-2.0 * e0, 0.125)] {
        let got = ma.iter().find(|(x, _)| (x - k).abs() < 1e-9).unwrap().1;
        assert!((got - w).abs() < 1e-12, "kick {k}: {got}");
    }
    let o = chain_oracle(e0);
    for r in sample_points(&mid) {
        assert!(max_diff(&mid.evaluate(&r), &o.evaluate(&clocks, 25.0, &r)) < 1e-12);
    }

    let fin = sequential_chain3_final(e0_scale(e0), clocks, 90.0, OracleOptions::default()).unwrap();
    assert_eq!(fin.terms.len(), 9);
    assert!((fin.norm_sqr() - 1.0).abs() < 1e-10);
    for r in sample_points(&fin) {
        assert!(max_diff(&fin.evaluate(&r), &o.evaluate(&clocks, 90.0, &r)) < 1e-12);
    }
    let ma = fin.kick_masses(0);
    for (k, w) in [(0.0, 0.625), (-e0, 0.25), (-2.0 * e0, 0.125)] {
        let got = ma.iter().find(|(x, _)| (x - k).abs() < 1e-9).unwrap().1;
        assert!((got - w).abs() < 1e-12, "A kick {k}: {got}");
    }
    let mb = fin.kick_masses(1);
    for (k, w) in [(0.0, 0.59375), (-e0, 0.21875), (-2.0 * e0, 0.078125), (e0, 0.09375), (2.0 * e0, 0.015625)] {
        let got = mb.iter().find(|(x, _)| (x - k).abs() < 1e-9).unwrap().1;
        assert!((got - w).abs() < 1e-12, "B kick {k}: {got}");
    }
    let pairs = fin.kick_pair_masses();
    let cross = pairs.iter().find(|((a, b), _)| (a + 2.0 * e0).abs() < 1e-9 && (b - 2.0 * e0).abs() < 1e-9).unwrap();
    assert!((cross.1 - 1.0 / 64.0).abs() < 1e-12);
    assert!(matches!(
        sequential_chain3_final(e0_scale(e0), pair(10.0, 10.0, 0.5), 60.0, OracleOptions::default()),
        Err(Error::WindowsOverlap(_))
    ));
}

#[test]
fn json_lists_every_term() {
    let b = chain3_final(e0_scale(2.0), pair(10.0, 10.0, 1.0), 40.0, OracleOptions::default()).unwrap();
    let v = b.to_json();
    let terms = v["terms"].as_array().unwrap();
    assert_eq!(terms.len(), 18);
    for t in terms {
        assert!(t["label"].is_string() && t["packets"].as_array().unwrap().len() == 2);
        assert!(t["coefficient"].as_array().unwrap().len() == 2 && t["region"].is_string());
    }
    serde_json::to_string(&v).unwrap();
}

proptest! {
    #[test]
    fn closed_forms_normalized(theta in 0.0..PI, f in -2.0f64..2.0) {
        prop_assert!((pointer_outcome_probs(theta, f).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_pointer_norm(theta in 0.0..PI, omega in 0.1f64..3.0, delta in 0.2f64..2.0, sep in -3.0f64..3.0) {
        let clocks = pair(8.0 * delta + 3.0, 8.0 * delta + 3.0 + sep, delta);
        let b = double_pointer_final(theta, omega, clocks, 30.0 * delta + 20.0, OracleOptions::default()).unwrap();
        prop_assert!((b.norm_sqr() - 1.0).abs() < 1e-10);
    }
}
