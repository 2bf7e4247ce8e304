//! Closed-form final states for clocks that trigger point-like pointer
//! couplings. A state is a finite sum of terms, each a discrete vector
//! (spins ⊗ pointers) times a plane-wave kick e^{ik·r} times one shared,
//! freely propagated Gaussian clock wavefunction, optionally restricted to
//! the half-plane where one clock passed the coupling first.
//!
//! Pointer kets are written in the physical basis: u = |0⟩ unflipped, f = |1⟩ flipped.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::qla::{StateVector, SubsystemShape, C64, I, ONE, ZERO};
use crate::spin_chain::{named_eigenstate, ChainLabel};
use crate::util::gauss_legendre;

/// Packets closer than this many standard deviations to the coupling count as interacting.
pub const MARGIN: f64 = 6.0;

/// Branch coefficients below this are dropped (cos(π/2) is not exactly zero).
const NEGLIGIBLE: f64 = 1e-15;

/// Relative phase given to a flipped pointer. The coupling e^{−iπ/2 P⊗σx}
/// produces −i; the CNOT form drops it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointerPhase {
    #[default]
    VonNeumann,
    Cnot,
}

impl PointerPhase {
    pub fn flip_factor(self) -> C64 {
        match self {
            PointerPhase::VonNeumann => -I,
            PointerPhase::Cnot => ONE,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub phase: PointerPhase,
    /// Half-width of an extended coupling profile; 0 for a point coupling.
    pub coupling_width: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyConvention {
    /// The value is the chain scale E0 itself.
    Direct,
    /// The value is the ω of the clock phases, with E0 = 2ω.
    ClockOmega,
}

impl FromStr for EnergyConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" | "e0" => Ok(Self::Direct),
            "clock-omega" | "omega" => Ok(Self::ClockOmega),
            _ => Err(Error::UnsupportedConvention(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainScale {
    pub e0: f64,
}

impl ChainScale {
    pub fn new(e0: f64) -> Result<Self> {
        if !(e0 >= 0.0 && e0.is_finite()) {
            return Err(Error::InvalidParameter(format!("E0 = {e0}")));
        }
        Ok(Self { e0 })
    }

    pub fn from_clock_omega(omega: f64) -> Result<Self> {
        Self::new(2.0 * omega)
    }

    pub fn from_convention(value: f64, convention: EnergyConvention) -> Result<Self> {
        match convention {
            EnergyConvention::Direct => Self::new(value),
            EnergyConvention::ClockOmega => Self::from_clock_omega(value),
        }
    }

    pub fn omega(&self) -> f64 {
        self.e0 / 2.0
    }
}

/// Gaussian packet (2πΔ²)^{-1/4}·prefactor·exp(−(x−x0)²/4Δ² + i p0 (x−x0)); Δ is the std of |φ|².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    pub x0: f64,
    pub p0: f64,
    pub delta: f64,
    pub prefactor: C64,
}

impl WavePacket {
    pub fn new(x0: f64, p0: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) || !x0.is_finite() || !p0.is_finite() {
            return Err(Error::InvalidParameter(format!("packet ({x0}, {p0}, {delta})")));
        }
        Ok(Self { x0, p0, delta, prefactor: ONE })
    }

    fn norm_const(&self) -> f64 {
        (2.0 * PI * self.delta * self.delta).powf(-0.25)
    }

    pub fn amplitude(&self, x: f64) -> C64 {
        let d = x - self.x0;
        let e = C64::new(-d * d / (4.0 * self.delta * self.delta), self.p0 * d);
        self.prefactor * self.norm_const() * e.exp()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.prefactor.norm_sqr()
    }

    pub fn sigma_p(&self) -> f64 {
        0.5 / self.delta
    }

    /// ⟨self|other⟩
    pub fn overlap(&self, other: &WavePacket) -> C64 {
        let a1 = 0.25 / (self.delta * self.delta);
        let a2 = 0.25 / (other.delta * other.delta);
        let a = a1 + a2;
        let b = C64::new(2.0 * a1 * self.x0 + 2.0 * a2 * other.x0, other.p0 - self.p0);
        let c = C64::new(-a1 * self.x0 * self.x0 - a2 * other.x0 * other.x0, self.p0 * self.x0 - other.p0 * other.x0);
        let n = self.norm_const() * other.norm_const() * (PI / a).sqrt();
        self.prefactor.conj() * other.prefactor * n * (b * b / (4.0 * a) + c).exp()
    }

    /// Free motion at unit velocity.
    pub fn propagated(&self, t: f64) -> Self {
        Self { x0: self.x0 + t, ..*self }
    }

    /// Multiply the wavefunction by e^{iκx}.
    pub fn kicked(&self, kappa: f64) -> Self {
        Self { p0: self.p0 + kappa, prefactor: self.prefactor * C64::new(0.0, kappa * self.x0).exp(), ..*self }
    }
}

pub fn momentum_kick(packet: &WavePacket, kappa: f64) -> WavePacket {
    packet.kicked(kappa)
}

/// Two clocks correlated in position: |Φ|² ∝ exp(−(u−ū)²/4Δ₋² − (v−v̄)²/4Δ₊²)
/// with u = x−y, v = x+y. Δ₊ = Δ₋ = Δ is a pair of independent width-Δ packets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointGaussian {
    pub center: (f64, f64),
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub momenta: (f64, f64),
    pub prefactor: C64,
}

impl JointGaussian {
    pub fn new(center: (f64, f64), delta_plus: f64, delta_minus: f64) -> Result<Self> {
        if !(delta_plus > 0.0 && delta_minus > 0.0 && delta_plus.is_finite() && delta_minus.is_finite()) {
            return Err(Error::InvalidParameter(format!("joint widths ({delta_plus}, {delta_minus})")));
        }
        Ok(Self { center, delta_plus, delta_minus, momenta: (0.0, 0.0), prefactor: ONE })
    }

    pub fn with_momenta(self, pa: f64, pb: f64) -> Self {
        Self { momenta: (pa, pb), ..self }
    }

    pub fn amplitude(&self, x: f64, y: f64) -> C64 {
        let (xc, yc) = self.center;
        let du = (x - y) - (xc - yc);
        let dv = (x + y) - (xc + yc);
        let n = (2.0 * PI * self.delta_plus * self.delta_minus).powf(-0.5);
        let re = -du * du / (8.0 * self.delta_minus.powi(2)) - dv * dv / (8.0 * self.delta_plus.powi(2));
        let im = self.momenta.0 * (x - xc) + self.momenta.1 * (y - yc);
        self.prefactor * n * C64::new(re, im).exp()
    }

    pub fn marginal_std(&self) -> f64 {
        ((self.delta_minus.powi(2) + self.delta_plus.powi(2)) / 2.0).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClockState {
    Single(WavePacket),
    Pair(WavePacket, WavePacket),
    Joint(JointGaussian),
}

impl ClockState {
    pub fn count(&self) -> usize {
        match self {
            ClockState::Single(_) => 1,
            _ => 2,
        }
    }

    pub fn propagated(&self, t: f64) -> Self {
        match *self {
            ClockState::Single(a) => ClockState::Single(a.propagated(t)),
            ClockState::Pair(a, b) => ClockState::Pair(a.propagated(t), b.propagated(t)),
            ClockState::Joint(j) => ClockState::Joint(JointGaussian { center: (j.center.0 + t, j.center.1 + t), ..j }),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        match self {
            ClockState::Single(a) => a.norm_sqr(),
            ClockState::Pair(a, b) => a.norm_sqr() * b.norm_sqr(),
            ClockState::Joint(j) => j.prefactor.norm_sqr(),
        }
    }

    /// Mean positions under |Φ|².
    pub fn mean(&self) -> Vec<f64> {
        match self {
            ClockState::Single(a) => vec![a.x0],
            ClockState::Pair(a, b) => vec![a.x0, b.x0],
            ClockState::Joint(j) => vec![j.center.0, j.center.1],
        }
    }

    pub fn mean_momentum(&self) -> Vec<f64> {
        match self {
            ClockState::Single(a) => vec![a.p0],
            ClockState::Pair(a, b) => vec![a.p0, b.p0],
            ClockState::Joint(j) => vec![j.momenta.0, j.momenta.1],
        }
    }

    /// Position covariance under |Φ|².
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        match self {
            ClockState::Single(a) => vec![vec![a.delta * a.delta]],
            ClockState::Pair(a, b) => vec![vec![a.delta * a.delta, 0.0], vec![0.0, b.delta * b.delta]],
            ClockState::Joint(j) => {
                let (p2, m2) = (j.delta_plus.powi(2), j.delta_minus.powi(2));
                let d = (p2 + m2) / 2.0;
                let o = (p2 - m2) / 2.0;
                vec![vec![d, o], vec![o, d]]
            }
        }
    }

    pub fn std(&self, clock: usize) -> f64 {
        self.covariance()[clock][clock].sqrt()
    }

    pub fn amplitude(&self, r: &[f64]) -> C64 {
        match self {
            ClockState::Single(a) => a.amplitude(r[0]),
            ClockState::Pair(a, b) => a.amplitude(r[0]) * b.amplitude(r[1]),
            ClockState::Joint(j) => j.amplitude(r[0], r[1]),
        }
    }

    /// Per-clock (x0, p0, Δ) descriptors after adding `kicks`.
    pub fn packets(&self, kicks: &[f64]) -> Vec<WavePacket> {
        match *self {
            ClockState::Single(a) => vec![a.kicked(kicks[0])],
            ClockState::Pair(a, b) => vec![a.kicked(kicks[0]), b.kicked(kicks[1])],
            ClockState::Joint(j) => {
                let s = j.marginal_std();
                let mk = |x0: f64, p0: f64| WavePacket { x0, p0, delta: s, prefactor: ONE };
                vec![mk(j.center.0, j.momenta.0 + kicks[0]), mk(j.center.1, j.momenta.1 + kicks[1])]
            }
        }
    }

    /// ∫ e^{ik·r}|Φ|² over the whole plane.
    pub fn characteristic(&self, k: &[f64]) -> C64 {
        let m = self.mean();
        let cov = self.covariance();
        let km: f64 = k.iter().zip(&m).map(|(a, b)| a * b).sum();
        let mut q = 0.0;
        for (i, ki) in k.iter().enumerate() {
            for (j, kj) in k.iter().enumerate() {
                q += ki * cov[i][j] * kj;
            }
        }
        self.norm_sqr() * C64::new(-0.5 * q, km).exp()
    }

    /// ∫_R e^{ik·r}|Φ|².
    pub fn region_characteristic(&self, k: &[f64], region: Region) -> C64 {
        match region {
            Region::All => self.characteristic(k),
            Region::AFirst => self.a_first_characteristic(k),
            Region::BFirst => self.characteristic(k) - self.a_first_characteristic(k),
        }
    }

    fn a_first_characteristic(&self, k: &[f64]) -> C64 {
        let m = self.mean();
        let s = self.covariance();
        let mu = m[0] - m[1];
        let var_u = s[0][0] + s[1][1] - 2.0 * s[0][1];
        let sig_u = var_u.sqrt();
        let c = k[0] * (s[0][0] - s[0][1]) + k[1] * (s[0][1] - s[1][1]);
        let var_w = k[0] * k[0] * s[0][0] + 2.0 * k[0] * k[1] * s[0][1] + k[1] * k[1] * s[1][1];
        let beta = c / var_u;
        let rest = (var_w - c * c / var_u).max(0.0);
        let km = k[0] * m[0] + k[1] * m[1];
        self.norm_sqr() * C64::new(-0.5 * rest, km).exp() * half_line_characteristic(-mu / sig_u, beta * sig_u)
    }
}

/// ∫_{z0}^∞ φ(z) e^{iaz} dz for the standard normal density φ.
pub fn half_line_characteristic(z0: f64, a: f64) -> C64 {
    const Z: f64 = 13.0;
    static GL: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    if z0 >= Z {
        return ZERO;
    }
    let (nodes, weights) = GL.get_or_init(|| gauss_legendre(12));
    let lo = z0.max(-Z);
    let width = 0.125f64.min(1.5 / a.abs().max(1e-300));
    let panels = ((Z - lo) / width).ceil().max(1.0) as usize;
    let h = (Z - lo) / panels as f64;
    let norm = 1.0 / (2.0 * PI).sqrt();
    let mut acc = ZERO;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * h;
        for (x, w) in nodes.iter().zip(weights) {
            let z = mid + 0.5 * h * x;
            acc += C64::new(0.0, a * z).exp() * (w * 0.5 * h * norm * (-0.5 * z * z).exp());
        }
    }
    acc
}

/// Which clock passed the coupling first; A-first is x ≥ y at fixed time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    All,
    AFirst,
    BFirst,
}

impl Region {
    pub fn contains(&self, r: &[f64]) -> bool {
        match self {
            Region::All => true,
            Region::AFirst => r[0] >= r[1],
            Region::BFirst => r[0] < r[1],
        }
    }

    pub fn intersect(self, other: Region) -> Option<Region> {
        match (self, other) {
            (Region::All, r) | (r, Region::All) => Some(r),
            (a, b) if a == b => Some(a),
            _ => None,
        }
    }
}

/// Phase e^{−i(max·max(x,y) + min·min(x,y))}, written per region as kicks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseField {
    pub max: f64,
    pub min: f64,
}

impl PhaseField {
    pub const NONE: PhaseField = PhaseField { max: 0.0, min: 0.0 };

    pub fn kicks(&self, region: Region) -> Result<Vec<f64>> {
        match region {
            Region::AFirst => Ok(vec![-self.max, -self.min]),
            Region::BFirst => Ok(vec![-self.min, -self.max]),
            Region::All if self.max == self.min => Ok(vec![-self.max, -self.min]),
            Region::All => Err(Error::InvalidParameter("ordered phase field needs a region".into())),
        }
    }
}

impl fmt::Display for PhaseField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp(-i({}*max + {}*min))", self.max, self.min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchTerm {
    pub label: String,
    /// Spins ⊗ pointers, physical pointer basis.
    pub system: StateVector,
    /// System energy of `system` (an eigenvector of the system Hamiltonian).
    pub energy: f64,
    pub coefficient: C64,
    pub region: Region,
    /// Momentum added to each clock.
    pub kicks: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchExpansion {
    pub time: f64,
    /// The shared clock state, freely propagated to `time`.
    pub clock: ClockState,
    pub terms: Vec<BranchTerm>,
}

impl BranchExpansion {
    fn system_shape(&self) -> &SubsystemShape {
        self.terms[0].system.shape()
    }

    /// G[i][j] = ⟨clock_i|clock_j⟩ for the kicked, region-restricted clock parts.
    pub fn clock_gram(&self) -> DMatrix<C64> {
        let n = self.terms.len();
        let mut g = DMatrix::from_element(n, n, ZERO);
        for i in 0..n {
            for j in i..n {
                let ti = &self.terms[i];
                let tj = &self.terms[j];
                let v = match ti.region.intersect(tj.region) {
                    Some(r) => {
                        let k: Vec<f64> = tj.kicks.iter().zip(&ti.kicks).map(|(a, b)| a - b).collect();
                        self.clock.region_characteristic(&k, r)
                    }
                    None => ZERO,
                };
                g[(i, j)] = v;
                g[(j, i)] = v.conj();
            }
        }
        g
    }

    /// T[i][j] = ⟨term_i|term_j⟩.
    pub fn term_gram(&self) -> DMatrix<C64> {
        let g = self.clock_gram();
        let n = self.terms.len();
        DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (&self.terms[i], &self.terms[j]);
            let s = a.system.inner(&b.system).unwrap_or(ZERO);
            a.coefficient.conj() * b.coefficient * s * g[(i, j)]
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.term_gram().iter().map(|z| z.re).sum()
    }

    /// Reduced state of spins ⊗ pointers with the clocks traced out.
    pub fn discrete_density(&self) -> DMatrix<C64> {
        let g = self.clock_gram();
        let d = self.system_shape().total();
        let mut rho = DMatrix::from_element(d, d, ZERO);
        for (i, ti) in self.terms.iter().enumerate() {
            for (j, tj) in self.terms.iter().enumerate() {
                let w = ti.coefficient * tj.coefficient.conj() * g[(j, i)];
                if w == ZERO {
                    continue;
                }
                let (vi, vj) = (ti.system.amplitudes(), tj.system.amplitudes());
                for a in 0..d {
                    if vi[a] == ZERO {
                        continue;
                    }
                    for b in 0..d {
                        rho[(a, b)] += w * vi[a] * vj[b].conj();
                    }
                }
            }
        }
        rho
    }

    /// Outcome probabilities of a computational-basis readout of `subsystems`,
    /// keyed by their indices in the order given.
    pub fn outcome_probabilities(&self, subsystems: &[usize]) -> Vec<(Vec<usize>, f64)> {
        let rho = self.discrete_density();
        let shape = self.system_shape();
        let dims: Vec<usize> = subsystems.iter().map(|&s| shape.dims()[s]).collect();
        let total: usize = dims.iter().product();
        let mut out: Vec<(Vec<usize>, f64)> = (0..total).map(|c| (unflatten(c, &dims), 0.0)).collect();
        for a in 0..shape.total() {
            let idx = unflatten(a, shape.dims());
            let key: Vec<usize> = subsystems.iter().map(|&s| idx[s]).collect();
            out[flatten(&key, &dims)].1 += rho[(a, a)].re;
        }
        out
    }

    /// Unnormalized reduced state of `keep` given fixed readouts of other subsystems.
    pub fn conditional_state(&self, keep: &[usize], fixed: &[(usize, usize)]) -> DMatrix<C64> {
        let rho = self.discrete_density();
        let shape = self.system_shape();
        let kd: Vec<usize> = keep.iter().map(|&s| shape.dims()[s]).collect();
        let n: usize = kd.iter().product();
        let mut out = DMatrix::from_element(n, n, ZERO);
        let idx: Vec<Vec<usize>> = (0..shape.total()).map(|a| unflatten(a, shape.dims())).collect();
        let traced: Vec<usize> = (0..shape.count()).filter(|s| !keep.contains(s) && !fixed.iter().any(|f| f.0 == *s)).collect();
        for a in 0..shape.total() {
            if fixed.iter().any(|&(s, v)| idx[a][s] != v) {
                continue;
            }
            for b in 0..shape.total() {
                if fixed.iter().any(|&(s, v)| idx[b][s] != v) || traced.iter().any(|&s| idx[a][s] != idx[b][s]) {
                    continue;
                }
                let ka: Vec<usize> = keep.iter().map(|&s| idx[a][s]).collect();
                let kb: Vec<usize> = keep.iter().map(|&s| idx[b][s]).collect();
                out[(flatten(&ka, &kd), flatten(&kb, &kd))] += rho[(a, b)];
            }
        }
        out
    }

    /// ⟨H_system⟩, using that every term's system vector is an energy eigenvector.
    pub fn system_energy(&self) -> f64 {
        let t = self.term_gram();
        let mut e = 0.0;
        for i in 0..self.terms.len() {
            for j in 0..self.terms.len() {
                e += (t[(i, j)] * self.terms[j].energy).re;
            }
        }
        e
    }

    /// Weight carried by each distinct kick of one clock, treating distinct kicks as orthogonal.
    pub fn kick_masses(&self, clock: usize) -> Vec<(f64, f64)> {
        let keys: Vec<Vec<f64>> = self.terms.iter().map(|t| vec![t.kicks[clock]]).collect();
        self.grouped_masses(&keys).into_iter().map(|(k, m)| (k[0], m)).collect()
    }

    /// Weight carried by each distinct (kick_A, kick_B) pair.
    pub fn kick_pair_masses(&self) -> Vec<((f64, f64), f64)> {
        let keys: Vec<Vec<f64>> = self.terms.iter().map(|t| t.kicks.clone()).collect();
        self.grouped_masses(&keys).into_iter().map(|(k, m)| ((k[0], k[1]), m)).collect()
    }

    fn grouped_masses(&self, keys: &[Vec<f64>]) -> Vec<(Vec<f64>, f64)> {
        let t = self.term_gram();
        let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            match groups.iter_mut().find(|(g, _)| g.iter().zip(k).all(|(a, b)| (a - b).abs() < 1e-9)) {
                Some((_, members)) => members.push(i),
                None => groups.push((k.clone(), vec![i])),
            }
        }
        let mut out: Vec<(Vec<f64>, f64)> = groups
            .into_iter()
            .map(|(k, m)| {
                let mass = m.iter().flat_map(|&i| m.iter().map(move |&j| (i, j))).map(|(i, j)| t[(i, j)].re).sum();
                (k, mass)
            })
            .collect();
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        out
    }

    /// Discrete amplitudes of the full state at clock positions r.
    pub fn evaluate(&self, r: &[f64]) -> Vec<C64> {
        let d = self.system_shape().total();
        let base = self.clock.amplitude(r);
        let mut out = vec![ZERO; d];
        for t in &self.terms {
            if !t.region.contains(r) {
                continue;
            }
            let phase: f64 = t.kicks.iter().zip(r).map(|(k, x)| k * x).sum();
            let w = t.coefficient * base * C64::new(0.0, phase).exp();
            for (o, a) in out.iter_mut().zip(t.system.amplitudes()) {
                *o += w * a;
            }
        }
        out
    }

    pub fn propagated(&self, t: f64) -> Self {
        free_propagate(self, t)
    }

    /// Structured description: label, coefficient, energy, region, kicks, per-clock packets.
    pub fn to_json(&self) -> serde_json::Value {
        let terms: Vec<serde_json::Value> = self
            .terms
            .iter()
            .map(|t| {
                let system: Vec<(usize, f64, f64)> = t
                    .system
                    .amplitudes()
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.norm() > 0.0)
                    .map(|(i, a)| (i, a.re, a.im))
                    .collect();
                let packets: Vec<serde_json::Value> = self
                    .clock
                    .packets(&t.kicks)
                    .iter()
                    .map(|p| json!({"x0": p.x0, "p0": p.p0, "delta": p.delta}))
                    .collect();
                json!({
                    "label": t.label,
                    "coefficient": [t.coefficient.re, t.coefficient.im],
                    "energy": t.energy,
                    "region": t.region,
                    "kicks": t.kicks,
                    "packets": packets,
                    "system_dims": t.system.shape().dims(),
                    "system": system,
                })
            })
            .collect();
        json!({"time": self.time, "clock": self.clock, "terms": terms})
    }
}

fn unflatten(mut c: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        idx[k] = c % dims[k];
        c /= dims[k];
    }
    idx
}

fn flatten(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (i, d)| acc * d + i)
}

/// Advance every packet by t. Each term picks up e^{−i(E + Σκ)t}.
pub fn free_propagate(b: &BranchExpansion, t: f64) -> BranchExpansion {
    let terms = b
        .terms
        .iter()
        .map(|term| {
            let e = term.energy + term.kicks.iter().sum::<f64>();
            BranchTerm { coefficient: term.coefficient * C64::new(0.0, -e * t).exp(), ..term.clone() }
        })
        .collect();
    BranchExpansion { time: b.time + t, clock: b.clock.propagated(t), terms }
}

fn check_completed(clock: &ClockState, t: f64, width: f64) -> Result<()> {
    let m = clock.mean();
    for (j, &x) in m.iter().enumerate() {
        let s = clock.std(j);
        if x + MARGIN * s + width > 0.0 {
            return Err(Error::InvalidParameter(format!("clock {j} starts inside the coupling (mean {x}, std {s})")));
        }
        if x + t - MARGIN * s - width < 0.0 {
            return Err(Error::InteractionIncomplete(format!("clock {j} at {} has not cleared the coupling", x + t)));
        }
    }
    Ok(())
}

/// Std of x − y and its mean.
fn separation(clock: &ClockState) -> (f64, f64) {
    let m = clock.mean();
    let s = clock.covariance();
    (m[0] - m[1], (s[0][0] + s[1][1] - 2.0 * s[0][1]).sqrt())
}

fn check_windows(clock: &ClockState, width: f64) -> Result<()> {
    if width > 0.0 {
        let (mu, su) = separation(clock);
        if mu.abs() < 2.0 * width + MARGIN * su {
            return Err(Error::WindowsOverlap(format!(
                "clock separation {mu} ± {su} inside an extended coupling of half-width {width}"
            )));
        }
    }
    Ok(())
}

fn qubit(u: f64, f: f64, phase: PointerPhase) -> StateVector {
    StateVector::qubit(C64::from(u), phase.flip_factor() * f)
}

fn spin(up: bool) -> StateVector {
    if up {
        StateVector::qubit(ONE, ZERO)
    } else {
        StateVector::qubit(ZERO, ONE)
    }
}

fn ket_label(u: f64, f: f64) -> String {
    use crate::projective::ratio;
    format!("({}u{}{}f)", ratio(u), if f < 0.0 { "-" } else { "+" }, ratio(f.abs()))
}

/// Spin c|↑⟩ + s|↓⟩ under H = ωσz measured in the energy basis: the pointer
/// flips on |↑⟩ and no clock is kicked.
pub fn energy_measurement_final(
    c: C64,
    s: C64,
    omega: f64,
    packet: WavePacket,
    t: f64,
    phase: PointerPhase,
) -> Result<BranchExpansion> {
    let clock = ClockState::Single(packet);
    check_completed(&clock, t, 0.0)?;
    let terms = vec![
        BranchTerm {
            label: "up,f".into(),
            system: spin(true).kron(&qubit(0.0, 1.0, phase)),
            energy: omega,
            coefficient: c * C64::new(0.0, -omega * t).exp(),
            region: Region::All,
            kicks: vec![0.0],
        },
        BranchTerm {
            label: "down,u".into(),
            system: spin(false).kron(&qubit(1.0, 0.0, phase)),
            energy: -omega,
            coefficient: s * C64::new(0.0, omega * t).exp(),
            region: Region::All,
            kicks: vec![0.0],
        },
    ];
    Ok(BranchExpansion { time: t, clock: clock.propagated(t), terms })
}

/// Spin initially |↓⟩ under H = ωσz, pointer flipped on |θ⟩ = cos θ|↑⟩ + sin θ|↓⟩.
/// Four branches {sc, s², −sc, c²}; the |↑⟩ branches carry the kick −2ω.
pub fn single_spin_theta_final(
    theta: f64,
    omega: f64,
    packet: WavePacket,
    t: f64,
    phase: PointerPhase,
) -> Result<BranchExpansion> {
    let clock = ClockState::Single(packet);
    check_completed(&clock, t, 0.0)?;
    let (s, c) = theta.sin_cos();
    let g = C64::new(0.0, omega * t).exp();
    let spec = [
        ("up,f", true, 1usize, s * c),
        ("down,f", false, 1, s * s),
        ("up,u", true, 0, -s * c),
        ("down,u", false, 0, c * c),
    ];
    let terms = spec
        .iter()
        .filter(|(.., a)| a.abs() > NEGLIGIBLE)
        .map(|&(label, up, p, a)| {
            let pointer = if p == 1 { qubit(0.0, 1.0, phase) } else { qubit(1.0, 0.0, phase) };
            BranchTerm {
                label: label.into(),
                system: spin(up).kron(&pointer),
                energy: if up { omega } else { -omega },
                coefficient: g * a,
                region: Region::All,
                kicks: vec![if up { -2.0 * omega } else { 0.0 }],
            }
        })
        .collect();
    Ok(BranchExpansion { time: t, clock: clock.propagated(t), terms })
}

/// One spin, two pointers, two clocks; both pointers flip on |θ⟩. Layout [spin, A pointer, B pointer].
pub fn double_pointer_final(
    theta: f64,
    omega: f64,
    clocks: ClockState,
    t: f64,
    opts: OracleOptions,
) -> Result<BranchExpansion> {
    if clocks.count() != 2 {
        return Err(Error::UnsupportedClockState("two clocks required".into()));
    }
    check_completed(&clocks, t, opts.coupling_width)?;
    check_windows(&clocks, opts.coupling_width)?;
    let (s, c) = theta.sin_cos();
    let w2 = 2.0 * omega;
    // (spin up, first pointer ket, second pointer ket, coefficient, field) for the first-passing clock's pointer first.
    let spec: [(bool, (f64, f64), (f64, f64), f64, PhaseField); 4] = [
        (true, (-1.0, 1.0), (s * s, c * c), s * c, PhaseField { max: w2, min: 0.0 }),
        (true, (c * c, s * s), (-1.0, 1.0), s * c, PhaseField { max: 0.0, min: w2 }),
        (false, (-1.0, 1.0), (-1.0, 1.0), s * s * c * c, PhaseField { max: w2, min: -w2 }),
        (false, (c * c, s * s), (c * c, s * s), 1.0, PhaseField::NONE),
    ];
    let g = C64::new(0.0, omega * t).exp();
    let mut terms = Vec::new();
    for region in [Region::AFirst, Region::BFirst] {
        for &(up, first, second, a, field) in &spec {
            if a.abs() <= NEGLIGIBLE {
                continue;
            }
            let (ka, kb) = if region == Region::AFirst { (first, second) } else { (second, first) };
            terms.push(BranchTerm {
                label: format!("{},{},{}", if up { "up" } else { "down" }, ket_label(ka.0, ka.1), ket_label(kb.0, kb.1)),
                system: spin(up).kron(&qubit(ka.0, ka.1, opts.phase)).kron(&qubit(kb.0, kb.1, opts.phase)),
                energy: if up { omega } else { -omega },
                coefficient: g * a,
                region,
                kicks: field.kicks(region)?,
            });
        }
    }
    Ok(BranchExpansion { time: t, clock: clocks.propagated(t), terms })
}

/// F = ∫∫ 2cos(2ω(x−y))|Φ|² in closed form.
pub fn f_parameter(clock: &ClockState, omega: f64) -> Result<f64> {
    match clock {
        ClockState::Single(_) => Err(Error::UnsupportedClockState("F needs two clocks".into())),
        _ => Ok(2.0 * clock.characteristic(&[2.0 * omega, -2.0 * omega]).re / clock.norm_sqr()),
    }
}

/// Probabilities of the physical pointer readouts (A, B).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointerProbs {
    pub p00: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
}

impl PointerProbs {
    pub fn sum(&self) -> f64 {
        self.p00 + self.p01 + self.p10 + self.p11
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        match (a, b) {
            (0, 0) => self.p00,
            (0, 1) => self.p01,
            (1, 0) => self.p10,
            _ => self.p11,
        }
    }

    /// Read off an expansion with pointers at subsystems `pa`, `pb`.
    pub fn from_expansion(b: &BranchExpansion, pa: usize, pb: usize) -> Self {
        let p = b.outcome_probabilities(&[pa, pb]);
        let g = |i: usize| p[i].1;
        Self { p00: g(0), p01: g(1), p10: g(2), p11: g(3) }
    }
}

pub fn pointer_outcome_probs(theta: f64, f: f64) -> PointerProbs {
    let (s, c) = theta.sin_cos();
    let (s2, c2) = (s * s, c * c);
    let k = 1.0 - 2.0 * s2 * c2;
    PointerProbs {
        p00: c2 * k + s2 * c2 * c2 * f,
        p11: s2 * k + s2 * s2 * c2 * f,
        p01: 2.0 * s2 * c2 * c2 - s2 * c2 * c2 * f,
        p10: 2.0 * s2 * s2 * c2 - s2 * s2 * c2 * f,
    }
}

/// Unnormalized spin state for both pointers flipped when the clocks resolve the kicks.
pub fn rho_11_sharp(theta: f64) -> DMatrix<C64> {
    let (s, c) = theta.sin_cos();
    let w = s * s * (1.0 - 2.0 * s * s * c * c);
    DMatrix::from_row_slice(2, 2, &[C64::from(w * c * c), ZERO, ZERO, C64::from(w * s * s)])
}

/// (chain eigenstate, A ket (u, f), B ket (u, f), ΔE after the first passage, total ΔE) in E0 units,
/// for Alice's clock passing first.
fn chain3_rows() -> [(ChainLabel, (f64, f64), (f64, f64), f64, f64); 9] {
    let q = 0.25;
    let r = 1.0 / 8f64.sqrt();
    let mi = ChainLabel::MINUS;
    let pl = ChainLabel::PLUS;
    let z = ChainLabel::ZERO2;
    [
        (mi, (q, 3.0 * q), (q, 3.0 * q), 0.0, 0.0),
        (pl, (q, 3.0 * q), (-q, q), 0.0, 2.0),
        (z, (q, 3.0 * q), (-r, r), 0.0, 1.0),
        (pl, (-q, q), (q, 3.0 * q), 2.0, 2.0),
        (mi, (-q, q), (-q, q), 2.0, 0.0),
        (z, (-q, q), (r, -r), 2.0, 1.0),
        (pl, (r, -r), (r, -r), 1.0, 2.0),
        (mi, (r, -r), (-r, r), 1.0, 0.0),
        (z, (r, -r), (0.5, 0.5), 1.0, 1.0),
    ]
}

fn chain3_term(
    label: ChainLabel,
    sign: f64,
    ka: (f64, f64),
    kb: (f64, f64),
    scale: ChainScale,
    coefficient: C64,
    region: Region,
    kicks: Vec<f64>,
    phase: PointerPhase,
) -> BranchTerm {
    let system = named_eigenstate(label).scaled(C64::from(sign)).kron(&qubit(ka.0, ka.1, phase)).kron(&qubit(kb.0, kb.1, phase));
    BranchTerm {
        label: format!("{}{},{},{}", if sign < 0.0 { "-" } else { "" }, label, ket_label(ka.0, ka.1), ket_label(kb.0, kb.1)),
        system,
        energy: scale.e0 * label.energy(),
        coefficient,
        region,
        kicks,
    }
}

/// Three-spin chain in φ₋₁ with Alice's pointer on spin 1 and Bob's on spin 3,
/// both clocks running. Layout [spin1, spin2, spin3, A pointer, B pointer].
pub fn chain3_final(scale: ChainScale, clocks: ClockState, t: f64, opts: OracleOptions) -> Result<BranchExpansion> {
    if clocks.count() != 2 {
        return Err(Error::UnsupportedClockState("two clocks required".into()));
    }
    check_completed(&clocks, t, opts.coupling_width)?;
    check_windows(&clocks, opts.coupling_width)?;
    let e0 = scale.e0;
    let g = C64::new(0.0, e0 * t).exp();
    let mut terms = Vec::new();
    for region in [Region::AFirst, Region::BFirst] {
        for (label, ka, kb, d1, d2) in chain3_rows() {
            let field = PhaseField { max: e0 * d1, min: e0 * (d2 - d1) };
            // Reflecting sites 1 ↔ 3 maps φ₀² to −φ₀² and swaps the pointers.
            let (sign, a, b) = match region {
                Region::AFirst => (1.0, ka, kb),
                _ => (if label == ChainLabel::ZERO2 { -1.0 } else { 1.0 }, kb, ka),
            };
            terms.push(chain3_term(label, sign, a, b, scale, g, region, field.kicks(region)?, opts.phase));
        }
    }
    Ok(BranchExpansion { time: t, clock: clocks.propagated(t), terms })
}

fn check_sequential(clocks: &ClockState) -> Result<()> {
    let (mu, su) = separation(clocks);
    if mu < 2.0 * MARGIN * su {
        return Err(Error::WindowsOverlap(format!("clock separation {mu} ± {su} does not put Alice first")));
    }
    Ok(())
}

/// State after Alice's clock has passed and before Bob's arrives.
pub fn sequential_chain3_intermediate(
    scale: ChainScale,
    clocks: ClockState,
    t: f64,
    opts: OracleOptions,
) -> Result<BranchExpansion> {
    if clocks.count() != 2 {
        return Err(Error::UnsupportedClockState("two clocks required".into()));
    }
    check_sequential(&clocks)?;
    let m = clocks.mean();
    let (sa, sb) = (clocks.std(0), clocks.std(1));
    if m[0] + MARGIN * sa + opts.coupling_width > 0.0 {
        return Err(Error::InvalidParameter("Alice's clock starts inside the coupling".into()));
    }
    if m[0] + t - MARGIN * sa - opts.coupling_width < 0.0 {
        return Err(Error::InteractionIncomplete("Alice's clock has not cleared the coupling".into()));
    }
    if m[1] + t + MARGIN * sb + opts.coupling_width > 0.0 {
        return Err(Error::WindowsOverlap("Bob's clock has reached the coupling".into()));
    }
    let e0 = scale.e0;
    let q = 0.25;
    let r = 1.0 / 8f64.sqrt();
    let rows = [
        (ChainLabel::MINUS, (q, 3.0 * q), 0.0),
        (ChainLabel::PLUS, (-q, q), 2.0),
        (ChainLabel::ZERO2, (r, -r), 1.0),
    ];
    let g = C64::new(0.0, e0 * t).exp();
    let terms = rows
        .iter()
        .map(|&(label, ka, d1)| {
            chain3_term(label, 1.0, ka, (1.0, 0.0), scale, g, Region::All, vec![-e0 * d1, 0.0], opts.phase)
        })
        .collect();
    Ok(BranchExpansion { time: t, clock: clocks.propagated(t), terms })
}

/// Final state when Alice's clock passes well before Bob's: the nine Alice-first branches.
pub fn sequential_chain3_final(
    scale: ChainScale,
    clocks: ClockState,
    t: f64,
    opts: OracleOptions,
) -> Result<BranchExpansion> {
    if clocks.count() != 2 {
        return Err(Error::UnsupportedClockState("two clocks required".into()));
    }
    check_sequential(&clocks)?;
    check_completed(&clocks, t, opts.coupling_width)?;
    let e0 = scale.e0;
    let g = C64::new(0.0, e0 * t).exp();
    let terms = chain3_rows()
        .iter()
        .map(|&(label, ka, kb, d1, d2)| {
            let kicks = vec![-e0 * d1, -e0 * (d2 - d1)];
            chain3_term(label, 1.0, ka, kb, scale, g, Region::All, kicks, opts.phase)
        })
        .collect();
    Ok(BranchExpansion { time: t, clock: clocks.propagated(t), terms })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packet_overlap_self_and_kick() {
        let a = WavePacket::new(-3.0, 0.4, 1.5).unwrap();
        assert!((a.overlap(&a).re - 1.0).abs() < 1e-14);
        let k = a.kicked(0.7);
        // ⟨a|e^{iκx}a⟩ = exp(iκx0 − κ²Δ²/2)
        assert!((a.overlap(&k) - C64::new(-0.5 * 0.49 * 2.25, -0.7 * 3.0).exp()).norm() < 1e-14);
        assert!((k.amplitude(0.3) - a.amplitude(0.3) * C64::new(0.0, 0.7 * 0.3).exp()).norm() < 1e-14);
    }

    #[test]
    fn half_line_limits() {
        let full = half_line_characteristic(-20.0, 1.3);
        assert!((full - C64::from((-0.5f64 * 1.69).exp())).norm() < 1e-13);
        assert!((half_line_characteristic(0.0, 0.0).re - 0.5).abs() < 1e-14);
        assert_eq!(half_line_characteristic(14.0, 0.0), ZERO);
    }

    #[test]
    fn conventions_parse() {
        assert_eq!("clock-omega".parse::<EnergyConvention>().unwrap(), EnergyConvention::ClockOmega);
        assert!(matches!("hbar".parse::<EnergyConvention>(), Err(Error::UnsupportedConvention(_))));
        assert_eq!(ChainScale::from_clock_omega(0.5).unwrap().e0, 1.0);
    }

    #[test]
    fn joint_reduces_to_pair() {
        let j = JointGaussian::new((-5.0, -7.0), 1.2, 1.2).unwrap();
        let a = WavePacket::new(-5.0, 0.0, 1.2).unwrap();
        let b = WavePacket::new(-7.0, 0.0, 1.2).unwrap();
        for (x, y) in [(-5.0, -7.0), (-4.0, -6.5), (-6.2, -5.1)] {
            assert!((j.amplitude(x, y) - a.amplitude(x) * b.amplitude(y)).norm() < 1e-14);
        }
    }
}
