//! Autonomous evolution under H = H_sys + Σ_k p_k + Σ_k g(q_k) W_k with the
//! clocks on a periodic lattice.
//!
//! With dt = dx the free part e^{−i(H_sys + Σp)dt} is exactly a one-site
//! cyclic shift times F = e^{−iH_sys dt}. The state is advanced in the
//! co-moving frame χ_n = (SF)^{−n} ψ_n, where only characteristics sitting on
//! coupling sites change: at integer time n the characteristic at lab site s
//! receives F^{−n} e^{−i g(s) dt W} F^{n} (Strang splitting of the coupling
//! against the free part, consecutive half kicks merged).
//!
//! Lab position of site j is (j − N/2)·dx; the coupling is centred at x = 0.
//! Internal amplitude layout is clock-major: [clock A, clock B, discrete].

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::qla::{
    exp_hermitian, eye, sigma_x, sigma_z, DensityOperator, HermitianOperator, PartialTrace, StateVector,
    SubsystemShape, C64, ONE, ZERO,
};
use crate::spin_chain::{chain_hamiltonian, named_eigenstate, ChainLabel, ChainSpec};
use crate::util::fmt12;
use crate::wavepacket_analytic::{BranchExpansion, ClockState, JointGaussian, WavePacket};

/// Packets must stay this many standard deviations inside the ring.
pub const FIT_MARGIN: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClockLattice {
    pub n: usize,
    pub dx: f64,
}

impl ClockLattice {
    pub fn new(n: usize, dx: f64) -> Result<Self> {
        if n < 16 {
            return Err(Error::LatticeTooSmall(format!("N = {n} < 16")));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::InvalidParameter(format!("dx = {dx}")));
        }
        Ok(Self { n, dx })
    }

    pub fn origin(&self) -> usize {
        self.n / 2
    }

    pub fn x(&self, j: usize) -> f64 {
        (j as f64 - self.origin() as f64) * self.dx
    }

    pub fn length(&self) -> f64 {
        self.n as f64 * self.dx
    }

    /// Position of site j on the periodic image closest to `center`.
    pub fn unwrap(&self, j: usize, center: f64) -> f64 {
        let x = self.x(j);
        let l = self.length();
        x + l * ((center - x) / l).round()
    }

    /// Momentum of FFT bin k, in the signed zone [−π/dx, π/dx).
    pub fn momentum(&self, k: usize) -> f64 {
        let ks = if k >= self.n / 2 { k as f64 - self.n as f64 } else { k as f64 };
        2.0 * PI * ks / self.length()
    }

    pub fn momentum_resolution(&self) -> f64 {
        2.0 * PI / self.length()
    }

    pub fn zone_edge(&self) -> f64 {
        PI / self.dx
    }

    /// Packet amplitudes times √dx, so that Σ|·|² ≈ 1.
    pub fn sample(&self, p: &WavePacket) -> Vec<C64> {
        (0..self.n).map(|j| p.amplitude(self.unwrap(j, p.x0)) * self.dx.sqrt()).collect()
    }
}

/// Coupling g(q) with ∫g dx = π/2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum CouplingProfile {
    Off,
    /// All weight on the site at x = 0: g = π/(2dx).
    Point,
    /// exp(−x²/2σ²) with σ = w/2, truncated at |x| ≤ 4w.
    GaussianBump { half_width: f64 },
    TopHat { half_width: f64 },
}

impl Default for CouplingProfile {
    fn default() -> Self {
        CouplingProfile::Point
    }
}

impl CouplingProfile {
    /// (site, g) pairs, normalized so that Σ g·dx = π/2 on the lattice.
    pub fn weights(&self, lattice: &ClockLattice) -> Result<Vec<(usize, f64)>> {
        let raw: Vec<(usize, f64)> = match *self {
            CouplingProfile::Off => return Ok(Vec::new()),
            CouplingProfile::Point => vec![(lattice.origin(), 1.0)],
            CouplingProfile::GaussianBump { half_width } => {
                let s = half_width / 2.0;
                (0..lattice.n)
                    .filter(|&j| lattice.x(j).abs() <= 4.0 * half_width)
                    .map(|j| (j, (-lattice.x(j).powi(2) / (2.0 * s * s)).exp()))
                    .collect()
            }
            CouplingProfile::TopHat { half_width } => {
                (0..lattice.n).filter(|&j| lattice.x(j).abs() <= half_width + 1e-12 * lattice.dx).map(|j| (j, 1.0)).collect()
            }
        };
        if raw.is_empty() {
            return Err(Error::LatticeTooSmall("coupling profile covers no lattice site".into()));
        }
        if raw.len() * 2 >= lattice.n {
            return Err(Error::LatticeTooSmall("coupling profile covers half the ring".into()));
        }
        let sum: f64 = raw.iter().map(|(_, g)| g).sum::<f64>() * lattice.dx;
        Ok(raw.into_iter().map(|(j, g)| (j, g * PI / (2.0 * sum))).collect())
    }

    /// Half-width of the support in position.
    pub fn reach(&self, lattice: &ClockLattice) -> f64 {
        match *self {
            CouplingProfile::Off | CouplingProfile::Point => 0.0,
            CouplingProfile::GaussianBump { half_width } => 4.0 * half_width,
            CouplingProfile::TopHat { half_width } => half_width.max(lattice.dx),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemKind {
    /// H = ωσz, pointer flips on |↑⟩, spin starts in up|↑⟩ + down|↓⟩.
    SingleSpinEnergy { omega: f64, up: C64, down: C64 },
    /// H = ωσz, pointer flips on cos θ|↑⟩ + sin θ|↓⟩, spin starts in |↓⟩.
    SingleSpinTheta { omega: f64, theta: f64 },
    /// As above with two pointers and two clocks.
    SingleSpinTwoPointers { omega: f64, theta: f64 },
    /// Three-spin chain in φ₋₁; Alice's pointer reads spin 1, Bob's spin 3.
    Chain3 { e0: f64, alice: bool, bob: bool },
}

impl SystemKind {
    pub fn clock_count(&self) -> usize {
        match self {
            SystemKind::SingleSpinEnergy { .. } | SystemKind::SingleSpinTheta { .. } => 1,
            _ => 2,
        }
    }

    pub fn subsystem_names(&self) -> Vec<&'static str> {
        match self {
            SystemKind::SingleSpinEnergy { .. } | SystemKind::SingleSpinTheta { .. } => vec!["spin", "pointer"],
            SystemKind::SingleSpinTwoPointers { .. } => vec!["spin", "pointer_a", "pointer_b"],
            SystemKind::Chain3 { .. } => vec!["spin1", "spin2", "spin3", "pointer_a", "pointer_b"],
        }
    }

    pub fn discrete_shape(&self) -> SubsystemShape {
        SubsystemShape::qubits(self.subsystem_names().len())
    }

    /// Indices of the pointer subsystems within the discrete part.
    pub fn pointers(&self) -> Vec<usize> {
        self.subsystem_names().iter().enumerate().filter(|(_, n)| n.starts_with("pointer")).map(|(i, _)| i).collect()
    }

    fn system_matrix(&self) -> DMatrix<C64> {
        match *self {
            SystemKind::SingleSpinEnergy { omega, .. } | SystemKind::SingleSpinTheta { omega, .. } => {
                (sigma_z() * C64::from(omega)).kronecker(&eye(2))
            }
            SystemKind::SingleSpinTwoPointers { omega, .. } => (sigma_z() * C64::from(omega)).kronecker(&eye(4)),
            SystemKind::Chain3 { e0, .. } => {
                let h = chain_hamiltonian(&ChainSpec::three(1.0).expect("unit chain")).matrix() * C64::from(e0);
                h.kronecker(&eye(4))
            }
        }
    }

    fn coupling_matrices(&self) -> Vec<DMatrix<C64>> {
        let proj = |c: f64, s: f64| DMatrix::from_row_slice(2, 2, &[c * c, c * s, s * c, s * s]).map(C64::from);
        match *self {
            SystemKind::SingleSpinEnergy { .. } => vec![proj(1.0, 0.0).kronecker(&sigma_x())],
            SystemKind::SingleSpinTheta { theta, .. } => vec![proj(theta.cos(), theta.sin()).kronecker(&sigma_x())],
            SystemKind::SingleSpinTwoPointers { theta, .. } => {
                let p = proj(theta.cos(), theta.sin());
                vec![p.kronecker(&sigma_x()).kronecker(&eye(2)), p.kronecker(&eye(2)).kronecker(&sigma_x())]
            }
            SystemKind::Chain3 { alice, bob, .. } => {
                let up = proj(1.0, 0.0);
                let wa = up.kronecker(&eye(4)).kronecker(&sigma_x()).kronecker(&eye(2));
                let wb = eye(4).kronecker(&up).kronecker(&eye(2)).kronecker(&sigma_x());
                let z = DMatrix::zeros(32, 32);
                vec![if alice { wa } else { z.clone() }, if bob { wb } else { z }]
            }
        }
    }

    fn initial_discrete(&self) -> Result<StateVector> {
        let u0 = StateVector::qubit(ONE, ZERO);
        let down = StateVector::qubit(ZERO, ONE);
        Ok(match *self {
            SystemKind::SingleSpinEnergy { up, down, .. } => {
                let s = StateVector::qubit(up, down);
                if (s.norm_sqr() - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("initial spin not normalized".into()));
                }
                s.kron(&u0)
            }
            SystemKind::SingleSpinTheta { .. } => down.kron(&u0),
            SystemKind::SingleSpinTwoPointers { .. } => down.kron(&u0).kron(&u0),
            SystemKind::Chain3 { .. } => named_eigenstate(ChainLabel::MINUS).kron(&u0).kron(&u0),
        })
    }

    /// Initial system energy.
    pub fn initial_energy(&self) -> Result<f64> {
        let h = HermitianOperator::new(self.discrete_shape(), self.system_matrix())?;
        self.initial_discrete()?.expectation(&h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutonomousScenario {
    pub system: SystemKind,
    pub clocks: ClockState,
    pub lattice: ClockLattice,
    #[serde(default)]
    pub profile: CouplingProfile,
    pub total_time: f64,
    pub dt: f64,
    /// Number of evenly spaced checkpoints after t = 0.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
}

fn default_checkpoints() -> usize {
    1
}

impl AutonomousScenario {
    pub fn steps(&self) -> usize {
        (self.total_time / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.lattice;
        if ((self.dt - l.dx) / l.dx).abs() > 1e-12 {
            return Err(Error::IncommensurateStep { dt: self.dt, dx: l.dx });
        }
        if ((self.steps() as f64) * self.dt - self.total_time).abs() > 1e-9 * self.total_time.max(1.0) {
            return Err(Error::IncommensurateStep { dt: self.dt, dx: l.dx });
        }
        if self.clocks.count() != self.system.clock_count() {
            return Err(Error::InvalidScenario(format!(
                "{} clocks given, system needs {}",
                self.clocks.count(),
                self.system.clock_count()
            )));
        }
        if self.total_time >= l.length() {
            return Err(Error::LatticeTooSmall(format!("T = {} exceeds ring length {}", self.total_time, l.length())));
        }
        let half = l.length() / 2.0;
        let reach = self.profile.reach(l);
        let m = self.clocks.mean();
        for j in 0..self.clocks.count() {
            let s = self.clocks.std(j);
            if 4.0 * s > l.length() {
                return Err(Error::LatticeTooSmall(format!("clock {j} width {s} vs ring {}", l.length())));
            }
            if m[j] - FIT_MARGIN * s < -half || m[j] + self.total_time + FIT_MARGIN * s > half {
                return Err(Error::LatticeTooSmall(format!(
                    "clock {j} runs from {} to {} (±{FIT_MARGIN}σ) on a ring of half-length {half}",
                    m[j],
                    m[j] + self.total_time
                )));
            }
            if self.profile != CouplingProfile::Off {
                if m[j] + FIT_MARGIN * s + reach > 0.0 {
                    return Err(Error::InvalidScenario(format!("clock {j} starts inside the coupling")));
                }
                if m[j] + self.total_time - FIT_MARGIN * s - reach < 0.0 {
                    return Err(Error::InteractionIncomplete(format!("clock {j} has not cleared the coupling at T")));
                }
            }
        }
        Ok(())
    }
}

/// The three parts of H: free system, clock translations, position-diagonal couplings.
#[derive(Clone, Debug)]
pub struct StructuredHamiltonian {
    pub discrete: SubsystemShape,
    pub system: HermitianOperator,
    /// W_k for each clock.
    pub couplings: Vec<HermitianOperator>,
    /// (lab site, g) shared by every clock.
    pub profile: Vec<(usize, f64)>,
    pub lattice: ClockLattice,
}

impl StructuredHamiltonian {
    pub fn clock_count(&self) -> usize {
        self.couplings.len()
    }

    /// ‖[H_sys, W_k]‖_F
    pub fn system_commutator(&self, k: usize) -> f64 {
        let (h, w) = (self.system.matrix(), self.couplings[k].matrix());
        (h * w - w * h).norm()
    }

    /// ‖[W_A, W_B]‖_F
    pub fn coupling_commutator(&self) -> f64 {
        if self.couplings.len() < 2 {
            return 0.0;
        }
        let (a, b) = (self.couplings[0].matrix(), self.couplings[1].matrix());
        (a * b - b * a).norm()
    }

    pub fn coupling_area(&self) -> f64 {
        self.profile.iter().map(|(_, g)| g).sum::<f64>() * self.lattice.dx
    }
}

pub fn build_hamiltonian(s: &AutonomousScenario) -> Result<StructuredHamiltonian> {
    s.validate()?;
    let discrete = s.system.discrete_shape();
    let system = HermitianOperator::new(discrete.clone(), s.system.system_matrix())?;
    let couplings = s
        .system
        .coupling_matrices()
        .into_iter()
        .map(|w| HermitianOperator::new(discrete.clone(), w))
        .collect::<Result<Vec<_>>>()?;
    let h = StructuredHamiltonian { discrete, system, couplings, profile: s.profile.weights(&s.lattice)?, lattice: s.lattice };
    let c = h.coupling_commutator();
    if c > 1e-12 {
        return Err(Error::InvalidScenario(format!("couplings do not commute ({c:e})")));
    }
    Ok(h)
}

/// Joint state of discrete system and clocks, lab frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LabState {
    pub lattice: ClockLattice,
    pub clocks: usize,
    pub discrete: SubsystemShape,
    pub names: Vec<String>,
    pub time: f64,
    amps: Vec<C64>,
}

impl LabState {
    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    fn d(&self) -> usize {
        self.discrete.total()
    }

    fn clock_sites(&self) -> usize {
        self.lattice.n.pow(self.clocks as u32)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Amplitude at clock sites `c` and discrete index `d`.
    pub fn amplitude(&self, c: &[usize], d: usize) -> C64 {
        let flat = c.iter().fold(0, |acc, &j| acc * self.lattice.n + j);
        self.amps[flat * self.d() + d]
    }

    /// As a StateVector over [discrete subsystems..., clock A, clock B].
    pub fn to_state_vector(&self) -> Result<StateVector> {
        let d = self.d();
        let nc = self.clock_sites();
        let mut out = vec![ZERO; d * nc];
        for c in 0..nc {
            for k in 0..d {
                out[k * nc + c] = self.amps[c * d + k];
            }
        }
        let mut dims = self.discrete.dims().to_vec();
        dims.extend(std::iter::repeat(self.lattice.n).take(self.clocks));
        StateVector::new(SubsystemShape::new(dims)?, out)
    }

    /// Reduced state of the chosen discrete subsystems and clocks.
    pub fn reduced(&self, discrete: &[usize], clocks: &[usize]) -> Result<DensityOperator> {
        let sv = self.to_state_vector()?;
        let off = self.discrete.count();
        let keep: Vec<usize> = discrete.iter().copied().chain(clocks.iter().map(|c| c + off)).collect();
        sv.partial_trace(&keep)
    }

    /// Discrete reduced state with all clocks traced out.
    pub fn discrete_density(&self) -> DMatrix<C64> {
        let d = self.d();
        let mut rho = DMatrix::from_element(d, d, ZERO);
        for block in self.amps.chunks(d) {
            for a in 0..d {
                if block[a] == ZERO {
                    continue;
                }
                for b in 0..d {
                    rho[(a, b)] += block[a] * block[b].conj();
                }
            }
        }
        rho
    }

    /// Unnormalized conditional reduced state of `keep` given pointer readouts `fixed`.
    pub fn conditional_discrete(&self, keep: &[usize], fixed: &[(usize, usize)]) -> DMatrix<C64> {
        let rho = self.discrete_density();
        let dims = self.discrete.dims();
        let strides = self.discrete.strides();
        let digit = |a: usize, s: usize| (a / strides[s]) % dims[s];
        let kd: usize = keep.iter().map(|&s| dims[s]).product();
        let traced: Vec<usize> = (0..dims.len()).filter(|s| !keep.contains(s) && !fixed.iter().any(|f| f.0 == *s)).collect();
        let key = |a: usize| keep.iter().fold(0, |acc, &s| acc * dims[s] + digit(a, s));
        let mut out = DMatrix::from_element(kd, kd, ZERO);
        let d = self.d();
        for a in 0..d {
            if fixed.iter().any(|&(s, v)| digit(a, s) != v) {
                continue;
            }
            for b in 0..d {
                if fixed.iter().any(|&(s, v)| digit(b, s) != v) || traced.iter().any(|&s| digit(a, s) != digit(b, s)) {
                    continue;
                }
                out[(key(a), key(b))] += rho[(a, b)];
            }
        }
        out
    }

    /// Readout probabilities of discrete subsystems, keyed in the order given.
    pub fn outcome_probabilities(&self, subsystems: &[usize]) -> Vec<(Vec<usize>, f64)> {
        let rho = self.discrete_density();
        let dims = self.discrete.dims();
        let strides = self.discrete.strides();
        let sd: Vec<usize> = subsystems.iter().map(|&s| dims[s]).collect();
        let total: usize = sd.iter().product();
        let mut out: Vec<(Vec<usize>, f64)> = (0..total)
            .map(|mut c| {
                let mut idx = vec![0; sd.len()];
                for k in (0..sd.len()).rev() {
                    idx[k] = c % sd[k];
                    c /= sd[k];
                }
                (idx, 0.0)
            })
            .collect();
        for a in 0..self.d() {
            let flat = subsystems.iter().zip(&sd).fold(0, |acc, (&s, &n)| acc * n + (a / strides[s]) % dims[s]);
            out[flat].1 += rho[(a, a)].re;
        }
        out
    }

    fn clock_coords(&self, c: usize) -> Vec<usize> {
        let n = self.lattice.n;
        match self.clocks {
            1 => vec![c],
            _ => vec![c / n, c % n],
        }
    }

    /// Mean and standard deviation of clock k's position (lab window coordinates).
    pub fn position_stats(&self, k: usize) -> (f64, f64) {
        let d = self.d();
        let (mut w, mut m, mut m2) = (0.0, 0.0, 0.0);
        for (c, block) in self.amps.chunks(d).enumerate() {
            let p: f64 = block.iter().map(|a| a.norm_sqr()).sum();
            if p == 0.0 {
                continue;
            }
            let x = self.lattice.x(self.clock_coords(c)[k]);
            w += p;
            m += p * x;
            m2 += p * x * x;
        }
        let mean = m / w;
        (mean, (m2 / w - mean * mean).max(0.0).sqrt())
    }

    /// Marginal momentum distribution of clock k, as (p, probability) sorted by p.
    pub fn momentum_distribution(&self, k: usize) -> Vec<(f64, f64)> {
        let probs = momentum_marginal(&self.amps, self.lattice.n, self.clocks, self.d(), k);
        let mut out: Vec<(f64, f64)> = probs.iter().enumerate().map(|(i, &p)| (self.lattice.momentum(i), p)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    pub fn mean_momentum(&self, k: usize) -> f64 {
        let probs = momentum_marginal(&self.amps, self.lattice.n, self.clocks, self.d(), k);
        probs.iter().enumerate().map(|(i, p)| p * self.lattice.momentum(i)).sum()
    }

    /// Joint momentum distribution of both clocks, indexed by FFT bins.
    pub fn joint_momentum_distribution(&self) -> Result<JointMomentum> {
        if self.clocks != 2 {
            return Err(Error::InvalidParameter("joint momentum needs two clocks".into()));
        }
        let n = self.lattice.n;
        let d = self.d();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n);
        let mut probs = DMatrix::<f64>::zeros(n, n);
        let mut grid = vec![ZERO; n * n];
        for k in 0..d {
            for c in 0..n * n {
                grid[c] = self.amps[c * d + k];
            }
            // Rows are clock A sites; transform along B then along A.
            for row in grid.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![ZERO; n];
            for jb in 0..n {
                for ja in 0..n {
                    col[ja] = grid[ja * n + jb];
                }
                fft.process(&mut col);
                for ja in 0..n {
                    probs[(ja, jb)] += col[ja].norm_sqr() / (n * n) as f64;
                }
            }
        }
        let momenta = (0..n).map(|i| self.lattice.momentum(i)).collect();
        Ok(JointMomentum { momenta, probs })
    }

    /// ⟨self|expansion⟩ with the oracle sampled at unwrapped lattice positions.
    pub fn overlap_with_expansion(&self, b: &BranchExpansion) -> Result<(C64, f64)> {
        if b.terms.is_empty() || b.terms[0].system.shape() != &self.discrete || b.clock.count() != self.clocks {
            return Err(Error::ShapeMismatch("expansion does not match the simulated system".into()));
        }
        let d = self.d();
        let centers = b.clock.mean();
        let scale = self.lattice.dx.powf(self.clocks as f64 / 2.0);
        let mut ov = ZERO;
        let mut norm = 0.0;
        for (c, block) in self.amps.chunks(d).enumerate() {
            let r: Vec<f64> =
                self.clock_coords(c).iter().zip(&centers).map(|(&j, &m)| self.lattice.unwrap(j, m)).collect();
            let o = b.evaluate(&r);
            for (a, z) in block.iter().zip(&o) {
                let z = z * scale;
                ov += a.conj() * z;
                norm += z.norm_sqr();
            }
        }
        Ok((ov, norm))
    }

    /// |⟨sim|oracle⟩|² normalized by both lattice norms.
    pub fn fidelity_with_expansion(&self, b: &BranchExpansion) -> Result<f64> {
        let (ov, n) = self.overlap_with_expansion(b)?;
        Ok(ov.norm_sqr() / (n * self.norm_sqr()))
    }

    fn discrete_label(&self, a: usize) -> String {
        let dims = self.discrete.dims();
        let strides = self.discrete.strides();
        self.names.iter().enumerate().map(|(s, n)| format!("{n}={}", (a / strides[s]) % dims[s])).collect::<Vec<_>>().join(",")
    }

    /// Per discrete basis state: weight and per-clock ⟨x⟩, std x, ⟨p⟩.
    pub fn branch_summary(&self, min_weight: f64) -> serde_json::Value {
        let d = self.d();
        let mut rows = Vec::new();
        for a in 0..d {
            let slice: Vec<C64> = self.amps.chunks(d).map(|b| b[a]).collect();
            let w: f64 = slice.iter().map(|z| z.norm_sqr()).sum();
            if w < min_weight {
                continue;
            }
            let part = LabState { discrete: SubsystemShape::new(vec![1]).expect("trivial shape"), amps: slice, names: Vec::new(), ..self.clone_header() };
            let clocks: Vec<serde_json::Value> = (0..self.clocks)
                .map(|k| {
                    let (m, s) = part.position_stats(k);
                    json!({"x_mean": m, "x_std": s, "p_mean": part.mean_momentum(k) / w})
                })
                .collect();
            rows.push(json!({"label": self.discrete_label(a), "weight": w, "clocks": clocks}));
        }
        json!({"time": self.time, "n": self.lattice.n, "dx": self.lattice.dx, "branches": rows})
    }

    fn clone_header(&self) -> LabState {
        LabState {
            lattice: self.lattice,
            clocks: self.clocks,
            discrete: self.discrete.clone(),
            names: self.names.clone(),
            time: self.time,
            amps: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct JointMomentum {
    /// Momentum of each FFT bin.
    pub momenta: Vec<f64>,
    /// probs[(a, b)]: clock A in bin a, clock B in bin b.
    pub probs: DMatrix<f64>,
}

impl JointMomentum {
    /// Probability within a box around (pa, pb).
    pub fn mass_near(&self, pa: f64, pb: f64, half_width: f64) -> f64 {
        let mut s = 0.0;
        for (a, &x) in self.momenta.iter().enumerate() {
            if (x - pa).abs() > half_width {
                continue;
            }
            for (b, &y) in self.momenta.iter().enumerate() {
                if (y - pb).abs() <= half_width {
                    s += self.probs[(a, b)];
                }
            }
        }
        s
    }
}

/// Probability within |p − center| ≤ half_width.
pub fn mass_near(dist: &[(f64, f64)], center: f64, half_width: f64) -> f64 {
    dist.iter().filter(|(p, _)| (p - center).abs() <= half_width).map(|(_, w)| w).sum()
}

fn momentum_marginal(amps: &[C64], n: usize, clocks: usize, d: usize, k: usize) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut probs = vec![0.0; n];
    let mut buf = vec![ZERO; n];
    let (stride, others) = match (clocks, k) {
        (1, _) => (d, 1),
        (_, 0) => (n * d, n),
        _ => (d, n),
    };
    for other in 0..others {
        let base_other = match (clocks, k) {
            (1, _) => 0,
            (_, 0) => other * d,
            _ => other * n * d,
        };
        for a in 0..d {
            for j in 0..n {
                buf[j] = amps[base_other + j * stride + a];
            }
            fft.process(&mut buf);
            for (p, z) in probs.iter_mut().zip(&buf) {
                *p += z.norm_sqr() / n as f64;
            }
        }
    }
    probs
}

/// Lattice samples of the scenario's initial state.
pub fn initial_state(s: &AutonomousScenario) -> Result<LabState> {
    let disc = s.system.initial_discrete()?;
    let l = s.lattice;
    let clock: Vec<C64> = match s.clocks {
        ClockState::Single(p) => l.sample(&p),
        ClockState::Pair(a, b) => {
            let (va, vb) = (l.sample(&a), l.sample(&b));
            va.iter().flat_map(|x| vb.iter().map(move |y| x * y)).collect()
        }
        ClockState::Joint(j) => sample_joint(&l, &j),
    };
    let norm: f64 = clock.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut amps = Vec::with_capacity(clock.len() * disc.len());
    for c in &clock {
        for a in disc.amplitudes() {
            amps.push(c * a / norm);
        }
    }
    Ok(LabState {
        lattice: l,
        clocks: s.clocks.count(),
        discrete: disc.shape().clone(),
        names: s.system.subsystem_names().iter().map(|n| n.to_string()).collect(),
        time: 0.0,
        amps,
    })
}

fn sample_joint(l: &ClockLattice, j: &JointGaussian) -> Vec<C64> {
    let mut out = Vec::with_capacity(l.n * l.n);
    for ja in 0..l.n {
        let x = l.unwrap(ja, j.center.0);
        for jb in 0..l.n {
            let y = l.unwrap(jb, j.center.1);
            out.push(j.amplitude(x, y) * l.dx);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub step: usize,
    pub time: f64,
    pub h_total: f64,
    pub h_system: f64,
    pub h_coupling: f64,
    /// ⟨p_A⟩, ⟨p_B⟩ (0 for an absent clock).
    pub p: [f64; 2],
    /// The pointers have no free Hamiltonian.
    pub pointer: f64,
    pub norm: f64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub energy: EnergyRecord,
    pub state: Option<Arc<LabState>>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    pub final_state: LabState,
}

impl Trajectory {
    /// Columns: t, h_total, h_chain, p_a, p_b, norm.
    pub fn write_energy_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "h_total", "h_chain", "p_a", "p_b", "norm"])?;
        for r in energy_bookkeeping(self) {
            wr.write_record([fmt12(r.time), fmt12(r.h_total), fmt12(r.h_system), fmt12(r.p[0]), fmt12(r.p[1]), fmt12(r.norm)])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// ⟨H_total⟩(T) − ⟨H_total⟩(0).
    pub fn energy_drift(&self) -> f64 {
        let e = energy_bookkeeping(self);
        e.last().map(|l| l.h_total - e[0].h_total).unwrap_or(0.0)
    }

    /// Largest |⟨H_total⟩(t) − ⟨H_total⟩(0)| over the checkpoints.
    pub fn max_energy_excursion(&self) -> f64 {
        let e = energy_bookkeeping(self);
        e.iter().map(|r| (r.h_total - e[0].h_total).abs()).fold(0.0, f64::max)
    }
}

pub fn energy_bookkeeping(t: &Trajectory) -> Vec<EnergyRecord> {
    t.checkpoints.iter().map(|c| c.energy).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Evenly spaced checkpoints after t = 0 (the final time is always one).
    pub checkpoints: usize,
    /// Keep the lab state at every checkpoint.
    pub keep_states: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { checkpoints: 1, keep_states: false }
    }
}

struct Engine {
    ham: StructuredHamiltonian,
    vecs: DMatrix<C64>,
    vals: Vec<f64>,
    dt: f64,
    n: usize,
    clocks: usize,
    d: usize,
}

impl Engine {
    fn new(ham: StructuredHamiltonian, dt: f64) -> Self {
        let eig = nalgebra::SymmetricEigen::new(ham.system.matrix().clone());
        let n = ham.lattice.n;
        let clocks = ham.clock_count();
        let d = ham.discrete.total();
        Self { vals: eig.eigenvalues.iter().copied().collect(), vecs: eig.eigenvectors, ham, dt, n, clocks, d }
    }

    /// F^m = e^{−iH_sys m dt}.
    fn free(&self, m: usize) -> DMatrix<C64> {
        let t = m as f64 * self.dt;
        let ph = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.vals.len(),
            self.vals.iter().map(|e| C64::from_polar(1.0, -e * t)),
        ));
        &self.vecs * ph * self.vecs.adjoint()
    }

    /// Apply the coupling kicks of integer time n with weight `frac` of a full step.
    fn kick(&self, chi: &mut [C64], n: usize, frac: f64) {
        if frac == 0.0 || self.ham.profile.is_empty() {
            return;
        }
        let u = self.free(n);
        let ud = u.adjoint();
        let (nn, d) = (self.n, self.d);
        let mut buf = vec![ZERO; d];
        for (k, w) in self.ham.couplings.iter().enumerate() {
            if w.matrix().iter().all(|z| *z == ZERO) {
                continue;
            }
            for &(site, g) in &self.ham.profile {
                let m = &ud * exp_hermitian(w.matrix(), g * self.dt * frac) * &u;
                let j0 = (site + nn - n % nn) % nn;
                let blocks: Vec<usize> = match (self.clocks, k) {
                    (1, _) => vec![j0 * d],
                    (_, 0) => (0..nn).map(|jb| (j0 * nn + jb) * d).collect(),
                    _ => (0..nn).map(|ja| (ja * nn + j0) * d).collect(),
                };
                for off in blocks {
                    let block = &mut chi[off..off + d];
                    if block.iter().all(|z| *z == ZERO) {
                        continue;
                    }
                    for (a, b) in buf.iter_mut().enumerate() {
                        *b = (0..d).map(|c| m[(a, c)] * block[c]).sum();
                    }
                    block.copy_from_slice(&buf);
                }
            }
        }
    }

    fn record(&self, chi: &[C64], n: usize) -> EnergyRecord {
        let d = self.d;
        let h = self.ham.system.matrix();
        let mut norm = 0.0;
        let mut hs = 0.0;
        for block in chi.chunks(d) {
            for a in 0..d {
                if block[a] == ZERO {
                    continue;
                }
                norm += block[a].norm_sqr();
                let hv: C64 = (0..d).map(|c| h[(a, c)] * block[c]).sum();
                hs += (block[a].conj() * hv).re;
            }
        }
        let mut p = [0.0; 2];
        for (k, pk) in p.iter_mut().enumerate().take(self.clocks) {
            let probs = momentum_marginal(chi, self.n, self.clocks, d, k);
            *pk = probs.iter().enumerate().map(|(i, q)| q * self.ham.lattice.momentum(i)).sum();
        }
        let u = self.free(n);
        let ud = u.adjoint();
        let mut hc = 0.0;
        for (k, w) in self.ham.couplings.iter().enumerate() {
            let wi = &ud * w.matrix() * &u;
            for &(site, g) in &self.ham.profile {
                let j0 = (site + self.n - n % self.n) % self.n;
                let blocks: Vec<usize> = match (self.clocks, k) {
                    (1, _) => vec![j0 * d],
                    (_, 0) => (0..self.n).map(|jb| (j0 * self.n + jb) * d).collect(),
                    _ => (0..self.n).map(|ja| (ja * self.n + j0) * d).collect(),
                };
                for off in blocks {
                    let b = &chi[off..off + d];
                    for a in 0..d {
                        let wv: C64 = (0..d).map(|c| wi[(a, c)] * b[c]).sum();
                        hc += g * (b[a].conj() * wv).re;
                    }
                }
            }
        }
        EnergyRecord {
            step: n,
            time: n as f64 * self.dt,
            h_total: hs + hc + p[0] + p[1],
            h_system: hs,
            h_coupling: hc,
            p,
            pointer: 0.0,
            norm,
        }
    }

    /// Lab state ψ_n[j] = F^n χ[j − n].
    fn materialize(&self, chi: &[C64], n: usize, proto: &LabState) -> LabState {
        let d = self.d;
        let nn = self.n;
        let u = self.free(n);
        let mut out = vec![ZERO; chi.len()];
        let shift = n % nn;
        let sites = nn.pow(self.clocks as u32);
        for c in 0..sites {
            let src = match self.clocks {
                1 => (c + nn - shift) % nn,
                _ => {
                    let (ja, jb) = (c / nn, c % nn);
                    ((ja + nn - shift) % nn) * nn + (jb + nn - shift) % nn
                }
            };
            let b = &chi[src * d..src * d + d];
            if b.iter().all(|z| *z == ZERO) {
                continue;
            }
            for a in 0..d {
                out[c * d + a] = (0..d).map(|k| u[(a, k)] * b[k]).sum();
            }
        }
        LabState { amps: out, time: n as f64 * self.dt, ..proto.clone_header() }
    }
}

/// Evolve the scenario from its lattice-sampled initial state.
pub fn run(s: &AutonomousScenario) -> Result<Trajectory> {
    let init = initial_state(s)?;
    evolve(&init, s, EvolveOptions { checkpoints: s.checkpoints.max(1), keep_states: false })
}

pub fn evolve(state: &LabState, s: &AutonomousScenario, opts: EvolveOptions) -> Result<Trajectory> {
    let ham = build_hamiltonian(s)?;
    if (state.norm_sqr() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!("initial norm² {}", state.norm_sqr())));
    }
    if state.discrete != ham.discrete || state.clocks != ham.clock_count() || state.lattice != ham.lattice {
        return Err(Error::ShapeMismatch("state does not match the scenario".into()));
    }
    let steps = s.steps();
    let engine = Engine::new(ham, s.dt);
    let k = opts.checkpoints.max(1);
    let marks: Vec<usize> = (0..=k).map(|i| ((i as f64) * steps as f64 / k as f64).round() as usize).collect();
    let mut chi = state.amps.clone();
    let mut checkpoints = Vec::new();
    for n in 0..=steps {
        // ψ_n carries the half kick of time n from the previous step.
        let (before, after) = match n {
            0 => (0.0, 0.5),
            _ if n == steps => (0.5, 0.0),
            _ => (0.5, 0.5),
        };
        if marks.contains(&n) {
            engine.kick(&mut chi, n, before);
            let energy = engine.record(&chi, n);
            let st = opts.keep_states.then(|| Arc::new(engine.materialize(&chi, n, state)));
            checkpoints.push(Checkpoint { energy, state: st });
            engine.kick(&mut chi, n, after);
        } else {
            engine.kick(&mut chi, n, before + after);
        }
    }
    let final_state = engine.materialize(&chi, steps, state);
    Ok(Trajectory { checkpoints, final_state })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    SigmaZ,
    /// Projector on cos θ|↑⟩ + sin θ|↓⟩.
    Theta(f64),
}

/// Sampled pulse g(t) with spacing dt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub samples: Vec<f64>,
    pub dt: f64,
}

impl Pulse {
    /// Gaussian of std `width`, sampled over ±8 widths and scaled to trapezoid area π/2.
    pub fn gaussian(width: f64, dt: f64) -> Self {
        let m = (8.0 * width / dt).ceil() as i64;
        let raw: Vec<f64> = (-m..=m).map(|i| (-(i as f64 * dt).powi(2) / (2.0 * width * width)).exp()).collect();
        let p = Pulse { samples: raw, dt };
        let a = p.area();
        Pulse { samples: p.samples.iter().map(|g| g * PI / (2.0 * a)).collect(), dt }
    }

    /// Trapezoid rule.
    pub fn area(&self) -> f64 {
        let s = &self.samples;
        if s.len() < 2 {
            return 0.0;
        }
        self.dt * (s.iter().sum::<f64>() - 0.5 * (s[0] + s[s.len() - 1]))
    }
}

/// Impulsive measurement: the pulse dominates, so the spin ⊗ pointer state
/// becomes e^{−i A P⊗σx}(ψ₀ ⊗ |0⟩) with A the pulse area.
pub fn vonneumann_reference(spin: &StateVector, observable: Observable, pulse: &Pulse) -> Result<StateVector> {
    if spin.shape().dims() != [2] {
        return Err(Error::ShapeMismatch("expected a single spin".into()));
    }
    let area = pulse.area();
    if (area - PI / 2.0).abs() > 1e-8 {
        return Err(Error::PulseArea(area));
    }
    let (c, s) = match observable {
        Observable::SigmaZ => (1.0, 0.0),
        Observable::Theta(t) => (t.cos(), t.sin()),
    };
    let p = DMatrix::from_row_slice(2, 2, &[c * c, c * s, s * c, s * s]).map(C64::from);
    let u = exp_hermitian(&p.kronecker(&sigma_x()), area);
    let psi = spin.kron(&StateVector::qubit(ONE, ZERO));
    let v = u * nalgebra::DVector::from_column_slice(psi.amplitudes());
    StateVector::new(psi.shape().clone(), v.iter().copied().collect())
}

#[derive(Clone, Debug)]
pub struct PointerBranch {
    pub outcome: Vec<usize>,
    pub probability: f64,
    /// Sub-normalized conditional state; None marks a zero-probability branch.
    pub state: Option<LabState>,
}

/// Computational-basis readout of the given pointer subsystems.
pub fn measure_pointers(state: &LabState, pointers: &[usize]) -> Result<Vec<PointerBranch>> {
    for &p in pointers {
        if p >= state.discrete.count() || state.discrete.dims()[p] != 2 {
            return Err(Error::TargetOutOfRange { index: p, count: state.discrete.count() });
        }
    }
    let d = state.d();
    let strides = state.discrete.strides();
    let k = pointers.len();
    let mut out = Vec::new();
    for code in 0..(1usize << k) {
        let outcome: Vec<usize> = (0..k).map(|j| (code >> (k - 1 - j)) & 1).collect();
        let keep: Vec<bool> =
            (0..d).map(|a| pointers.iter().zip(&outcome).all(|(&p, &o)| (a / strides[p]) % 2 == o)).collect();
        let amps: Vec<C64> = state.amps.iter().enumerate().map(|(i, z)| if keep[i % d] { *z } else { ZERO }).collect();
        let probability: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        let st = (probability > 0.0).then(|| LabState { amps, ..state.clone_header() });
        out.push(PointerBranch { outcome, probability, state: st });
    }
    Ok(out)
}

/// A lattice and run time for packets starting left of the coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePlan {
    pub lattice: ClockLattice,
    pub total_time: f64,
}

/// Choose dx and T so that every packet starts and ends ≥ `clearance` std away
/// from the coupling, the ring holds the whole run, and momenta up to `kmax`
/// plus six momentum widths stay inside the zone. Half the zone-limited
/// spacing is preferred: branch boundaries where the passage order flips
/// carry kinks whose momentum tails alias otherwise.
pub fn plan_lattice(n: usize, clocks: &ClockState, kmax: f64, clearance: f64) -> Result<LatticePlan> {
    let m = clocks.mean();
    let sig: Vec<f64> = (0..clocks.count()).map(|j| clocks.std(j)).collect();
    let resolve = match clocks {
        ClockState::Joint(j) => j.delta_minus.min(sig[0]),
        _ => sig.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let t = (0..m.len()).map(|j| -m[j] + clearance * sig[j]).fold(0.0, f64::max);
    let lo = (0..m.len()).map(|j| m[j] - (clearance + 1.0) * sig[j]).fold(0.0, f64::min);
    let hi = (0..m.len()).map(|j| m[j] + t + (clearance + 1.0) * sig[j]).fold(0.0, f64::max);
    let need = 2.0 * (-lo).max(hi);
    let zone = PI / (kmax + 6.0 * 0.5 / resolve);
    let dx_max = (resolve / 3.0).min(zone);
    let dx = (resolve / 4.0).min(zone / 2.0).max(need / n as f64);
    if dx > dx_max * (1.0 + 1e-12) {
        return Err(Error::LatticeTooSmall(format!("N = {n} needs dx = {dx}, above the resolution limit {dx_max}")));
    }
    let lattice = ClockLattice::new(n, dx)?;
    let steps = (t / dx).ceil();
    Ok(LatticePlan { lattice, total_time: steps * dx })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_integrate_to_quarter_turn() {
        let l = ClockLattice::new(256, 0.1).unwrap();
        for p in [
            CouplingProfile::Point,
            CouplingProfile::GaussianBump { half_width: 0.4 },
            CouplingProfile::TopHat { half_width: 0.35 },
        ] {
            let w = p.weights(&l).unwrap();
            let a: f64 = w.iter().map(|(_, g)| g).sum::<f64>() * l.dx;
            assert!((a - PI / 2.0).abs() < 1e-8);
        }
        assert!(CouplingProfile::Off.weights(&l).unwrap().is_empty());
        assert!(matches!(CouplingProfile::TopHat { half_width: 100.0 }.weights(&l), Err(Error::LatticeTooSmall(_))));
    }

    #[test]
    fn momenta_signed_zone() {
        let l = ClockLattice::new(16, 0.5).unwrap();
        assert_eq!(l.momentum(0), 0.0);
        assert!((l.momentum(15) + 2.0 * PI / 8.0).abs() < 1e-15);
        assert!((l.momentum(8) + l.zone_edge()).abs() < 1e-12);
    }

    #[test]
    fn pulse_area_checked() {
        let up = StateVector::qubit(ONE, ZERO);
        let ok = Pulse::gaussian(0.3, 0.01);
        let out = vonneumann_reference(&up, Observable::SigmaZ, &ok).unwrap();
        assert!((out.amplitudes()[1] - C64::new(0.0, -1.0)).norm() < 1e-12);
        let bad = Pulse { samples: ok.samples.iter().map(|g| g * 1.01).collect(), dt: ok.dt };
        assert!(matches!(vonneumann_reference(&up, Observable::SigmaZ, &bad), Err(Error::PulseArea(_))));
    }
}
