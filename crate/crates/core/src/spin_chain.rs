//! Open chains coupled by the nearest-neighbour Bell-projector interaction
//! H_{j,j+1} = (σx⊗σx − σy⊗σy)/(2√2).

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qla::{eig_hermitian, eye, sigma_x, sigma_y, HermitianOperator, Spectrum, StateVector, SubsystemShape, C64, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n_spins: usize,
    pub e0: f64,
}

impl ChainSpec {
    pub fn new(n_spins: usize, e0: f64) -> Result<Self> {
        if n_spins < 2 {
            return Err(Error::InvalidParameter(format!("chain needs at least 2 spins, got {n_spins}")));
        }
        if !(e0 > 0.0 && e0.is_finite()) {
            return Err(Error::InvalidParameter(format!("energy scale must be positive, got {e0}")));
        }
        Ok(Self { n_spins, e0 })
    }

    pub fn three(e0: f64) -> Result<Self> {
        Self::new(3, e0)
    }
}

pub fn pair_coupling() -> HermitianOperator {
    let xx = sigma_x().kronecker(&sigma_x());
    let yy = sigma_y().kronecker(&sigma_y());
    let m = (xx - yy) / C64::from(2.0 * std::f64::consts::SQRT_2);
    HermitianOperator::on_qubits(m).expect("pair coupling is Hermitian")
}

pub fn chain_hamiltonian(spec: &ChainSpec) -> HermitianOperator {
    let n = spec.n_spins;
    let pair = pair_coupling();
    let dim = 1usize << n;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for j in 0..n - 1 {
        let left = eye(1 << j);
        let right = eye(1 << (n - j - 2));
        h += left.kronecker(pair.matrix()).kronecker(&right);
    }
    h *= C64::from(spec.e0);
    HermitianOperator::new(SubsystemShape::qubits(n), h).expect("chain Hamiltonian is Hermitian")
}

/// σx on every site.
pub fn flip_all(n: usize) -> DMatrix<C64> {
    (1..n).fold(sigma_x(), |acc, _| acc.kronecker(&sigma_x()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NamedState {
    MinusOne,
    ZeroOne,
    ZeroTwo,
    PlusOne,
}

/// A named 3-spin eigenstate, optionally with every spin flipped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainLabel {
    pub state: NamedState,
    pub flipped: bool,
}

impl ChainLabel {
    pub const MINUS: ChainLabel = ChainLabel { state: NamedState::MinusOne, flipped: false };
    pub const ZERO1: ChainLabel = ChainLabel { state: NamedState::ZeroOne, flipped: false };
    pub const ZERO2: ChainLabel = ChainLabel { state: NamedState::ZeroTwo, flipped: false };
    pub const PLUS: ChainLabel = ChainLabel { state: NamedState::PlusOne, flipped: false };

    pub fn all() -> Vec<ChainLabel> {
        let mut v = Vec::new();
        for flipped in [false, true] {
            for state in [NamedState::MinusOne, NamedState::ZeroOne, NamedState::ZeroTwo, NamedState::PlusOne] {
                v.push(ChainLabel { state, flipped });
            }
        }
        v
    }

    /// Eigenvalue in units of E0.
    pub fn energy(&self) -> f64 {
        match self.state {
            NamedState::MinusOne => -1.0,
            NamedState::ZeroOne | NamedState::ZeroTwo => 0.0,
            NamedState::PlusOne => 1.0,
        }
    }
}

impl fmt::Display for ChainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.state {
            NamedState::MinusOne => "phi-1",
            NamedState::ZeroOne => "phi0a",
            NamedState::ZeroTwo => "phi0b",
            NamedState::PlusOne => "phi+1",
        };
        write!(f, "{base}{}", if self.flipped { "'" } else { "" })
    }
}

impl FromStr for ChainLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (body, flipped) = match s.strip_suffix('\'') {
            Some(b) => (b, true),
            None => (s, false),
        };
        let state = match body {
            "phi-1" | "phi_-1" => NamedState::MinusOne,
            "phi0a" | "phi_0^1" => NamedState::ZeroOne,
            "phi0b" | "phi_0^2" => NamedState::ZeroTwo,
            "phi+1" | "phi_+1" => NamedState::PlusOne,
            _ => return Err(Error::UnknownLabel(s.to_string())),
        };
        Ok(ChainLabel { state, flipped })
    }
}

/// Literal amplitudes of the named 3-spin eigenstates (↑ = index 0).
pub fn named_eigenstate(label: ChainLabel) -> StateVector {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut a = [0.0f64; 8];
    match label.state {
        NamedState::MinusOne => {
            a[0b000] = h;
            a[0b011] = -0.5;
            a[0b110] = -0.5;
        }
        NamedState::PlusOne => {
            a[0b000] = h;
            a[0b011] = 0.5;
            a[0b110] = 0.5;
        }
        NamedState::ZeroOne => a[0b010] = 1.0,
        NamedState::ZeroTwo => {
            a[0b011] = h;
            a[0b110] = -h;
        }
    }
    let mut amps = vec![ZERO; 8];
    for (k, &v) in a.iter().enumerate() {
        let idx = if label.flipped { k ^ 0b111 } else { k };
        amps[idx] = C64::from(v);
    }
    StateVector::new(SubsystemShape::qubits(3), amps).expect("8 amplitudes")
}

#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub spec: ChainSpec,
    pub spectrum: Spectrum,
    pub named: Vec<(ChainLabel, StateVector)>,
}

impl EigenSystem {
    /// Eigenvalues with multiplicities, grouped within `tol`.
    pub fn multiplicities(&self, tol: f64) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &v in &self.spectrum.values {
            match out.last_mut() {
                Some((rep, m)) if (v - *rep).abs() <= tol => *m += 1,
                _ => out.push((v, 1)),
            }
        }
        out
    }
}

pub fn eigensystem(spec: &ChainSpec) -> EigenSystem {
    let spectrum = eig_hermitian(&chain_hamiltonian(spec));
    let named = if spec.n_spins == 3 {
        ChainLabel::all().into_iter().map(|l| (l, named_eigenstate(l))).collect()
    } else {
        Vec::new()
    };
    EigenSystem { spec: *spec, spectrum, named }
}
