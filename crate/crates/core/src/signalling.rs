//! How well Bob's apparatus (B pointer ⊗ B clock) tells whether Alice measured.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock_sim::{plan_lattice, run, AutonomousScenario, CouplingProfile, LabState, SystemKind};
use crate::error::{Error, Result};
use crate::qla::{fidelity, trace_distance, DensityOperator, C64};
use crate::util::fmt12;
use crate::wavepacket_analytic::{ClockState, WavePacket};

/// Chain runs use E0 = 2ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignallingConfig {
    pub omega: f64,
    /// Lattice sites per clock.
    pub n: usize,
    /// Alice's clock starts at −x_i, Bob's at −y_i, both in units of Δ.
    pub xi: f64,
    pub yi: f64,
    /// Start/stop clearance from the coupling, in units of Δ.
    pub clearance: f64,
}

impl Default for SignallingConfig {
    fn default() -> Self {
        Self { omega: 1.0, n: 256, xi: 7.0, yi: 7.0, clearance: 7.0 }
    }
}

impl SignallingConfig {
    pub fn e0(&self) -> f64 {
        2.0 * self.omega
    }

    /// Chain run at the given ωΔ with the chosen couplings on.
    pub fn scenario(&self, omega_delta: f64, alice: bool, bob: bool) -> Result<AutonomousScenario> {
        if !(omega_delta > 0.0 && self.omega > 0.0) {
            return Err(Error::InvalidParameter(format!("ωΔ = {omega_delta}, ω = {}", self.omega)));
        }
        let delta = omega_delta / self.omega;
        let clocks = ClockState::Pair(
            WavePacket::new(-self.xi * delta, 0.0, delta)?,
            WavePacket::new(-self.yi * delta, 0.0, delta)?,
        );
        let plan = plan_lattice(self.n, &clocks, 2.0 * self.e0(), self.clearance)?;
        let profile = if alice || bob { CouplingProfile::Point } else { CouplingProfile::Off };
        Ok(AutonomousScenario {
            system: SystemKind::Chain3 { e0: self.e0(), alice, bob },
            clocks,
            lattice: plan.lattice,
            profile,
            total_time: plan.total_time,
            dt: plan.lattice.dx,
            checkpoints: 1,
        })
    }
}

/// Reduced state of Bob's pointer and clock.
pub fn apparatus_marginal(state: &LabState) -> Result<DensityOperator> {
    let pb = state.names.iter().position(|n| n == "pointer_b").ok_or_else(|| Error::UnknownLabel("pointer_b".into()))?;
    state.reduced(&[pb], &[1])
}

/// Bob's marginal after the run, with Alice's coupling on or off.
pub fn bob_marginal(s: &AutonomousScenario, alice_measures: bool) -> Result<DensityOperator> {
    let SystemKind::Chain3 { e0, bob, .. } = s.system else {
        return Err(Error::InvalidScenario("signalling needs the three-spin chain".into()));
    };
    let mut s = s.clone();
    s.system = SystemKind::Chain3 { e0, alice: alice_measures, bob };
    if !alice_measures && !bob {
        s.profile = CouplingProfile::Off;
    } else if s.profile == CouplingProfile::Off {
        s.profile = CouplingProfile::Point;
    }
    apparatus_marginal(&run(&s)?.final_state)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignallingPoint {
    pub omega: f64,
    pub delta: f64,
    pub omega_delta: f64,
    pub trace_distance: f64,
    pub fidelity: f64,
    pub n: usize,
    pub dx: f64,
}

/// D between Bob's marginals with and without Alice. With `alice_off`
/// both runs leave Alice idle (null test).
pub fn signalling_point(omega_delta: f64, cfg: &SignallingConfig, alice_off: bool) -> Result<SignallingPoint> {
    let s = cfg.scenario(omega_delta, true, true)?;
    let with = bob_marginal(&s, !alice_off)?;
    let without = bob_marginal(&s, false)?;
    Ok(SignallingPoint {
        omega: cfg.omega,
        delta: omega_delta / cfg.omega,
        omega_delta,
        trace_distance: trace_distance(&with, &without)?,
        fidelity: fidelity(&with, &without)?,
        n: cfg.n,
        dx: s.lattice.dx,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SignallingPoint>,
    /// D non-decreasing along the grid as given.
    pub monotone: bool,
}

impl SweepReport {
    /// Columns: omega, delta, omega_delta, trace_distance, fidelity.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["omega", "delta", "omega_delta", "trace_distance", "fidelity"])?;
        for p in &self.points {
            wr.write_record([fmt12(p.omega), fmt12(p.delta), fmt12(p.omega_delta), fmt12(p.trace_distance), fmt12(p.fidelity)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn sweep(grid: &[f64], cfg: &SignallingConfig, alice_off: bool) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty ωΔ grid".into()));
    }
    let points = grid.par_iter().map(|&g| signalling_point(g, cfg, alice_off)).collect::<Result<Vec<_>>>()?;
    let monotone = points.windows(2).all(|w| w[1].trace_distance >= w[0].trace_distance);
    Ok(SweepReport { points, monotone })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalPurity {
    pub outcome: Vec<usize>,
    pub probability: f64,
    /// Purity of the normalized discrete system state given the readout; equals
    /// the purity of the clocks' conditional marginal.
    pub purity: f64,
    /// Normalized conditional system state (None for an empty branch).
    pub system: Option<nalgebra::DMatrix<C64>>,
}

/// Spin–clock entanglement left after reading both pointers.
pub fn post_pointer_clock_entanglement(state: &LabState) -> Result<Vec<ConditionalPurity>> {
    if state.clocks != 2 {
        return Err(Error::UnsupportedClockState("two clocks required".into()));
    }
    let pointers: Vec<usize> = state.names.iter().enumerate().filter(|(_, n)| n.starts_with("pointer")).map(|(i, _)| i).collect();
    let keep: Vec<usize> = (0..state.names.len()).filter(|i| !pointers.contains(i)).collect();
    let mut out = Vec::new();
    for (outcome, probability) in state.outcome_probabilities(&pointers) {
        let fixed: Vec<(usize, usize)> = pointers.iter().copied().zip(outcome.iter().copied()).collect();
        if probability <= 1e-14 {
            out.push(ConditionalPurity { outcome, probability, purity: f64::NAN, system: None });
            continue;
        }
        let rho = state.conditional_discrete(&keep, &fixed) / C64::from(probability);
        let purity = rho.iter().map(|z| z.norm_sqr()).sum();
        out.push(ConditionalPurity { outcome, probability, purity, system: Some(rho) });
    }
    Ok(out)
}
