//! Projection-postulate bookkeeping for local σz measurements on a chain,
//! and the question of which apparatus supplies which part of the energy.
//!
//! Outcome encoding: 0 is spin up (+1), 1 is spin down (−1).

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qla::{eig_hermitian, HermitianOperator, StateVector, ZERO};
use crate::util::fmt12;

const PROB_EPS: f64 = 1e-14;
const MATCH_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::A => "A",
            Party::B => "B",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementScenario {
    pub n_sites: usize,
    /// Each measuring party and the (0-based) site it probes with σz.
    pub probes: Vec<(Party, usize)>,
}

impl MeasurementScenario {
    pub fn new(n_sites: usize, probes: Vec<(Party, usize)>) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::InvalidScenario("no measuring party".into()));
        }
        for (i, &(p, s)) in probes.iter().enumerate() {
            if s >= n_sites {
                return Err(Error::InvalidScenario(format!("site {s} outside a {n_sites}-site chain")));
            }
            if probes[..i].iter().any(|&(q, t)| q == p || t == s) {
                return Err(Error::InvalidScenario("party or site repeated".into()));
            }
        }
        Ok(Self { n_sites, probes })
    }

    /// One party on the 3-chain: Alice holds site 1, Bob site 3.
    pub fn only(party: Party) -> Self {
        let site = match party {
            Party::A => 0,
            Party::B => 2,
        };
        Self { n_sites: 3, probes: vec![(party, site)] }
    }

    pub fn both() -> Self {
        Self { n_sites: 3, probes: vec![(Party::A, 0), (Party::B, 2)] }
    }

    pub fn parties(&self) -> Vec<Party> {
        self.probes.iter().map(|p| p.0).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub outcome: Vec<u8>,
    pub probability: f64,
    post: Option<StateVector>,
}

impl Branch {
    /// Renormalized post-measurement state; zero-probability branches have none.
    pub fn post_state(&self) -> Result<&StateVector> {
        self.post.as_ref().ok_or_else(|| Error::ZeroProbability(outcome_string(&self.outcome)))
    }

    pub fn is_empty(&self) -> bool {
        self.post.is_none()
    }
}

pub fn outcome_string(o: &[u8]) -> String {
    o.iter().map(|b| char::from(b'0' + b)).collect()
}

fn check_register(state: &StateVector, n: usize) -> Result<()> {
    if state.shape().dims() != vec![2; n].as_slice() {
        return Err(Error::ShapeMismatch(format!("expected {n} qubits, got {:?}", state.shape().dims())));
    }
    Ok(())
}

/// Born-rule branches for every outcome tuple, in lexicographic order.
pub fn measure_sites(state: &StateVector, scenario: &MeasurementScenario) -> Result<Vec<Branch>> {
    let n = scenario.n_sites;
    check_register(state, n)?;
    if (state.norm_sqr() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter("state is not normalized".into()));
    }
    let k = scenario.probes.len();
    let mut out = Vec::with_capacity(1 << k);
    for code in 0..(1usize << k) {
        let outcome: Vec<u8> = (0..k).map(|j| ((code >> (k - 1 - j)) & 1) as u8).collect();
        let mut amps = state.amplitudes().to_vec();
        for (idx, a) in amps.iter_mut().enumerate() {
            let keep = scenario
                .probes
                .iter()
                .zip(&outcome)
                .all(|(&(_, site), &o)| ((idx >> (n - 1 - site)) & 1) as u8 == o);
            if !keep {
                *a = ZERO;
            }
        }
        let projected = StateVector::new(state.shape().clone(), amps)?;
        let probability = projected.norm_sqr();
        let post = if probability > PROB_EPS { Some(projected.normalized()?) } else { None };
        out.push(Branch { outcome, probability, post });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub outcome: Vec<u8>,
    pub probability: f64,
    /// Sharp energy changes with their conditional probabilities.
    pub distribution: Vec<(f64, f64)>,
    pub mean: f64,
}

impl EnergyRow {
    pub fn prob_of(&self, delta_e: f64) -> f64 {
        self.distribution.iter().filter(|(d, _)| (d - delta_e).abs() < MATCH_TOL).map(|(_, p)| p).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    pub parties: Vec<Party>,
    pub initial_energy: f64,
    pub rows: Vec<EnergyRow>,
    pub overall_mean: f64,
}

impl EnergyTable {
    pub fn row(&self, outcome: &[u8]) -> Option<&EnergyRow> {
        self.rows.iter().find(|r| r.outcome == outcome)
    }

    pub fn position(&self, party: Party) -> Option<usize> {
        self.parties.iter().position(|&p| p == party)
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.rows.iter().map(|r| r.probability).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::MalformedTable(format!("probabilities sum to {total}")));
        }
        for r in &self.rows {
            if r.outcome.len() != self.parties.len() {
                return Err(Error::MalformedTable("outcome arity".into()));
            }
            let s: f64 = r.distribution.iter().map(|(_, p)| p).sum();
            let m: f64 = r.distribution.iter().map(|(d, p)| d * p).sum();
            if (s - 1.0).abs() > 1e-12 || (m - r.mean).abs() > 1e-12 {
                return Err(Error::MalformedTable(format!("row {}", outcome_string(&r.outcome))));
            }
        }
        Ok(())
    }

    /// Columns: outcome, prob, delta_e, prob_delta_e, conditional_mean, overall_mean.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["outcome", "prob", "delta_e", "prob_delta_e", "conditional_mean", "overall_mean"])?;
        for r in &self.rows {
            for &(d, p) in &r.distribution {
                wr.write_record([
                    outcome_string(&r.outcome),
                    fmt12(r.probability),
                    fmt12(d),
                    fmt12(p),
                    fmt12(r.mean),
                    fmt12(self.overall_mean),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Outcome probabilities with the sharp energy-change distribution of each
/// renormalized post-measurement state.
pub fn conditional_energy_stats(
    state: &StateVector,
    scenario: &MeasurementScenario,
    h: &HermitianOperator,
) -> Result<EnergyTable> {
    if h.shape() != state.shape() {
        return Err(Error::ShapeMismatch("Hamiltonian and state".into()));
    }
    let e_in = state.expectation(h)?;
    let projectors = eig_hermitian(h).projectors(1e-9);
    let mut rows = Vec::new();
    for b in measure_sites(state, scenario)? {
        if b.is_empty() {
            continue;
        }
        let post = b.post_state()?;
        let mean = snap(post.expectation(h)? - e_in);
        let amps = post.amplitudes();
        let mut distribution = Vec::new();
        for (e, p) in &projectors {
            let pv = p * nalgebra::DVector::from_column_slice(amps);
            let w: f64 = amps.iter().zip(pv.iter()).map(|(a, b)| (a.conj() * b).re).sum();
            if w > PROB_EPS {
                distribution.push((snap(e - e_in), w));
            }
        }
        rows.push(EnergyRow { outcome: b.outcome.clone(), probability: b.probability, distribution, mean });
    }
    let overall_mean = rows.iter().map(|r| r.probability * r.mean).sum();
    Ok(EnergyTable { parties: scenario.parties(), initial_energy: e_in, rows, overall_mean })
}

fn snap(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        0.0
    } else {
        x
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionOptions {
    /// When both parties read the same outcome, each is credited half the energy change.
    pub symmetric_equal_outcomes: bool,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        Self { symmetric_equal_outcomes: true }
    }
}

/// One (a, b, ΔE) cell of the two-party table with its admissible splits (α, β).
#[derive(Clone, Debug, Serialize)]
pub struct Cell {
    pub outcome: (u8, u8),
    pub delta_e: f64,
    pub mass: f64,
    pub splits: Vec<(f64, f64)>,
}

impl Cell {
    fn outcome_of(&self, party: Party) -> u8 {
        match party {
            Party::A => self.outcome.0,
            Party::B => self.outcome.1,
        }
    }

    fn other_outcome(&self, party: Party) -> u8 {
        match party {
            Party::A => self.outcome.1,
            Party::B => self.outcome.0,
        }
    }
}

fn share(split: (f64, f64), party: Party) -> f64 {
    match party {
        Party::A => split.0,
        Party::B => split.1,
    }
}

/// P(contribution of `party` = value | party's outcome) must equal `required`.
#[derive(Clone, Debug, Serialize)]
pub struct Constraint {
    pub party: Party,
    pub outcome: u8,
    pub value: f64,
    pub required: f64,
    pub marginal: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AttributionProblem {
    pub cells: Vec<Cell>,
    pub constraints: Vec<Constraint>,
    pub options: AttributionOptions,
}

fn supports(table: &EnergyTable) -> Vec<f64> {
    let mut v: Vec<f64> = Vec::new();
    for r in &table.rows {
        for &(d, _) in &r.distribution {
            if !v.iter().any(|x| (x - d).abs() < MATCH_TOL) {
                v.push(d);
            }
        }
    }
    v.sort_by(f64::total_cmp);
    v
}

fn contains(set: &[f64], x: f64) -> bool {
    set.iter().any(|s| (s - x).abs() < MATCH_TOL)
}

impl AttributionProblem {
    pub fn build(one_party: &[&EnergyTable], two_party: &EnergyTable, options: AttributionOptions) -> Result<Self> {
        if two_party.parties != [Party::A, Party::B] {
            return Err(Error::MalformedTable("two-party table must list parties A, B".into()));
        }
        two_party.validate()?;
        if one_party.is_empty() {
            return Err(Error::MalformedTable("no one-party table".into()));
        }
        let support_of = |p: Party| -> Option<Vec<f64>> {
            one_party.iter().find(|t| t.parties == [p]).map(|t| supports(t))
        };
        let sb = support_of(Party::B);
        let sa = support_of(Party::A);
        let (sa, sb) = match (sa, sb) {
            (Some(a), Some(b)) => (a, b),
            (Some(a), None) => (a.clone(), a),
            (None, Some(b)) => (b.clone(), b),
            (None, None) => return Err(Error::MalformedTable("one-party tables must have one party".into())),
        };
        let mut cells = Vec::new();
        for r in &two_party.rows {
            let outcome = (r.outcome[0], r.outcome[1]);
            for &(de, q) in &r.distribution {
                let mut splits: Vec<(f64, f64)> = sb
                    .iter()
                    .map(|&beta| (de - beta, beta))
                    .filter(|&(alpha, _)| contains(&sa, alpha))
                    .collect();
                if options.symmetric_equal_outcomes && outcome.0 == outcome.1 {
                    splits.retain(|&(a, b)| (a - b).abs() < MATCH_TOL);
                }
                cells.push(Cell { outcome, delta_e: de, mass: r.probability * q, splits });
            }
        }
        let mut constraints = Vec::new();
        for t in one_party {
            let party = match t.parties.as_slice() {
                [p] => *p,
                _ => return Err(Error::MalformedTable("one-party table with several parties".into())),
            };
            t.validate()?;
            let values: Vec<f64> = if party == Party::A { sa.clone() } else { sb.clone() };
            for row in &t.rows {
                let o = row.outcome[0];
                let marginal: f64 = cells.iter().filter(|c| c.outcome_of(party) == o).map(|c| c.mass).sum();
                if (marginal - row.probability).abs() > MATCH_TOL {
                    return Err(Error::MalformedTable(format!(
                        "party {party} outcome {o}: one-party probability {} vs two-party marginal {marginal}",
                        row.probability
                    )));
                }
                for &k in &values {
                    constraints.push(Constraint { party, outcome: o, value: k, required: row.prob_of(k), marginal });
                }
            }
        }
        Ok(Self { cells, constraints, options })
    }

    fn achieved(&self, c: &Constraint, weights: &[Vec<f64>]) -> f64 {
        let mut s = 0.0;
        for (cell, w) in self.cells.iter().zip(weights) {
            if cell.outcome_of(c.party) != c.outcome {
                continue;
            }
            for (split, wk) in cell.splits.iter().zip(w) {
                if (share(*split, c.party) - c.value).abs() < MATCH_TOL {
                    s += cell.mass * wk;
                }
            }
        }
        s / c.marginal
    }

    fn satisfied(&self, weights: &[Vec<f64>]) -> bool {
        self.constraints.iter().all(|c| (self.achieved(c, weights) - c.required).abs() < MATCH_TOL)
    }

    /// Range of a constraint's left side over all attributions, grouped by the distant outcome.
    fn interval(&self, c: &Constraint) -> Vec<CertificateTerm> {
        let mut others: BTreeSet<u8> = BTreeSet::new();
        for cell in self.cells.iter().filter(|x| x.outcome_of(c.party) == c.outcome) {
            others.insert(cell.other_outcome(c.party));
        }
        others
            .into_iter()
            .map(|o| {
                let group: Vec<&Cell> = self
                    .cells
                    .iter()
                    .filter(|x| x.outcome_of(c.party) == c.outcome && x.other_outcome(c.party) == o)
                    .collect();
                let gmass: f64 = group.iter().map(|x| x.mass).sum();
                let (mut lo, mut hi) = (0.0, 0.0);
                for cell in &group {
                    let hits = cell.splits.iter().map(|s| ((share(*s, c.party) - c.value).abs() < MATCH_TOL) as u8 as f64);
                    let (mn, mx) = hits.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), h| (a.min(h), b.max(h)));
                    lo += cell.mass * mn;
                    hi += cell.mass * mx;
                }
                CertificateTerm { distant_outcome: o, weight: gmass / c.marginal, min: lo / gmass, max: hi / gmass }
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateTerm {
    pub distant_outcome: u8,
    /// P(distant outcome | local outcome)
    pub weight: f64,
    /// Range of P(contribution = value | both outcomes).
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Serialize)]
pub enum Certificate {
    /// The constraint's required value lies outside the range every attribution can reach.
    Interval { constraint: Constraint, terms: Vec<CertificateTerm>, bound: f64, gap: f64 },
    /// A cell admits no split at all.
    EmptyCell { outcome: (u8, u8), delta_e: f64 },
    /// No deterministic assignment and no mixed one solves the linear system.
    Exhaustive { enumerated: usize },
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Certificate::Interval { constraint: c, terms, bound, .. } => {
                let local = if c.party == Party::A { 'a' } else { 'b' };
                write!(f, "prob(dE_{local}={}|{local}={}) = {} required, but = ", ratio(c.value), c.outcome, ratio(c.required))?;
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    if (t.max - t.min).abs() < MATCH_TOL {
                        write!(f, "{}*{}", ratio(t.weight), ratio(t.min))?;
                    } else {
                        write!(f, "{}*[{},{}]", ratio(t.weight), ratio(t.min), ratio(t.max))?;
                    }
                }
                let rel = if *bound > c.required { ">=" } else { "<=" };
                write!(f, " {rel} {}", ratio(*bound))
            }
            Certificate::EmptyCell { outcome, delta_e } => {
                write!(f, "cell ({},{}) with dE={} admits no split", outcome.0, outcome.1, ratio(*delta_e))
            }
            Certificate::Exhaustive { enumerated } => {
                write!(f, "{enumerated} deterministic attributions and the mixed relaxation all fail")
            }
        }
    }
}

/// Small-denominator rendering of a rational-looking float.
pub fn ratio(x: f64) -> String {
    for q in 1..=64u32 {
        let p = x * q as f64;
        if (p - p.round()).abs() < 1e-9 {
            let p = p.round() as i64;
            return if q == 1 { p.to_string() } else { format!("{p}/{q}") };
        }
    }
    format!("{x}")
}

#[derive(Clone, Debug, Serialize)]
pub enum Feasibility {
    /// Split weights per cell (one-hot when deterministic).
    Feasible { deterministic: bool, witness: Vec<Vec<f64>> },
    Infeasible { certificates: Vec<Certificate> },
}

#[derive(Clone, Debug, Serialize)]
pub struct FeasibilityReport {
    pub problem: AttributionProblem,
    pub outcome: Feasibility,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        matches!(self.outcome, Feasibility::Feasible { .. })
    }

    /// The violated constraint with the largest gap.
    pub fn binding(&self) -> Option<&Certificate> {
        match &self.outcome {
            Feasibility::Infeasible { certificates } => certificates.iter().max_by(|a, b| gap(a).total_cmp(&gap(b))),
            _ => None,
        }
    }

    pub fn summary(&self) -> String {
        match &self.outcome {
            Feasibility::Feasible { deterministic, .. } => {
                format!("FEASIBLE ({} attribution)", if *deterministic { "deterministic" } else { "mixed" })
            }
            Feasibility::Infeasible { .. } => {
                format!("INFEASIBLE: {}", self.binding().map(|c| c.to_string()).unwrap_or_default())
            }
        }
    }
}

fn gap(c: &Certificate) -> f64 {
    match c {
        Certificate::Interval { gap, .. } => *gap,
        _ => f64::INFINITY,
    }
}

const ENUMERATION_CAP: usize = 2_000_000;

pub fn attribution_feasibility(one_party: &EnergyTable, two_party: &EnergyTable) -> Result<FeasibilityReport> {
    attribution_feasibility_with(&[one_party], two_party, AttributionOptions::default())
}

/// Can the two-party energy changes be split between the apparatuses so that
/// each party's local contribution statistics match its one-party table?
pub fn attribution_feasibility_with(
    one_party: &[&EnergyTable],
    two_party: &EnergyTable,
    options: AttributionOptions,
) -> Result<FeasibilityReport> {
    let problem = AttributionProblem::build(one_party, two_party, options)?;
    let mut certificates = Vec::new();
    for cell in &problem.cells {
        if cell.splits.is_empty() {
            certificates.push(Certificate::EmptyCell { outcome: cell.outcome, delta_e: cell.delta_e });
        }
    }
    if certificates.is_empty() {
        for c in &problem.constraints {
            let terms = problem.interval(c);
            let lo: f64 = terms.iter().map(|t| t.weight * t.min).sum();
            let hi: f64 = terms.iter().map(|t| t.weight * t.max).sum();
            if c.required < lo - MATCH_TOL {
                certificates.push(Certificate::Interval { constraint: c.clone(), terms, bound: lo, gap: lo - c.required });
            } else if c.required > hi + MATCH_TOL {
                certificates.push(Certificate::Interval { constraint: c.clone(), terms, bound: hi, gap: c.required - hi });
            }
        }
    }
    if !certificates.is_empty() {
        return Ok(FeasibilityReport { problem, outcome: Feasibility::Infeasible { certificates } });
    }
    let (found, enumerated) = enumerate(&problem);
    if let Some(witness) = found {
        return Ok(FeasibilityReport { problem, outcome: Feasibility::Feasible { deterministic: true, witness } });
    }
    let outcome = match solve_mixed(&problem) {
        Some(witness) => Feasibility::Feasible { deterministic: false, witness },
        None => Feasibility::Infeasible { certificates: vec![Certificate::Exhaustive { enumerated }] },
    };
    Ok(FeasibilityReport { problem, outcome })
}

fn one_hot(problem: &AttributionProblem, choice: &[usize]) -> Vec<Vec<f64>> {
    problem
        .cells
        .iter()
        .zip(choice)
        .map(|(c, &k)| (0..c.splits.len()).map(|j| (j == k) as u8 as f64).collect())
        .collect()
}

fn enumerate(problem: &AttributionProblem) -> (Option<Vec<Vec<f64>>>, usize) {
    let radix: Vec<usize> = problem.cells.iter().map(|c| c.splits.len()).collect();
    let total = radix.iter().try_fold(1usize, |acc, &r| acc.checked_mul(r)).unwrap_or(usize::MAX);
    if total > ENUMERATION_CAP {
        return (None, 0);
    }
    let mut choice = vec![0usize; radix.len()];
    for n in 0..total {
        let w = one_hot(problem, &choice);
        if problem.satisfied(&w) {
            return (Some(w), n + 1);
        }
        for (c, &r) in choice.iter_mut().zip(&radix).rev() {
            *c += 1;
            if *c < r {
                break;
            }
            *c = 0;
        }
    }
    (None, total)
}

fn solve_mixed(problem: &AttributionProblem) -> Option<Vec<Vec<f64>>> {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<microlp::Variable>> =
        problem.cells.iter().map(|c| c.splits.iter().map(|_| lp.add_var(0.0, (0.0, 1.0))).collect()).collect();
    for v in &vars {
        let expr: Vec<(microlp::Variable, f64)> = v.iter().map(|&x| (x, 1.0)).collect();
        lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, 1.0);
    }
    for c in &problem.constraints {
        let mut expr = Vec::new();
        for (cell, v) in problem.cells.iter().zip(&vars) {
            if cell.outcome_of(c.party) != c.outcome {
                continue;
            }
            for (split, &x) in cell.splits.iter().zip(v) {
                if (share(*split, c.party) - c.value).abs() < MATCH_TOL {
                    expr.push((x, cell.mass / c.marginal));
                }
            }
        }
        lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, c.required);
    }
    let sol = lp.solve().ok()?.into_solution().ok()?;
    let w: Vec<Vec<f64>> = vars.iter().map(|v| v.iter().map(|&x| sol.var_value(x)).collect()).collect();
    problem.constraints.iter().all(|c| (problem.achieved(c, &w) - c.required).abs() < 1e-7).then_some(w)
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanEntry {
    pub outcome: (u8, u8),
    pub party: Party,
    pub mean: f64,
    /// True when obtained from a one-party marginal rather than the equal-split rule.
    pub solved: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanAttribution {
    pub entries: Vec<MeanEntry>,
    pub consistent: bool,
}

impl MeanAttribution {
    pub fn get(&self, outcome: (u8, u8), party: Party) -> Option<f64> {
        self.entries.iter().find(|e| e.outcome == outcome && e.party == party).map(|e| e.mean)
    }
}

/// Mean-level attribution: equal outcomes split the mean change evenly, the
/// remaining cells are fixed by each party's one-party mean.
pub fn mean_level_attribution(one_party: &[&EnergyTable], two_party: &EnergyTable) -> Result<MeanAttribution> {
    if two_party.parties != [Party::A, Party::B] {
        return Err(Error::MalformedTable("two-party table must list parties A, B".into()));
    }
    let rows: Vec<((u8, u8), f64, f64)> = two_party
        .rows
        .iter()
        .map(|r| ((r.outcome[0], r.outcome[1]), r.probability, r.mean))
        .collect();
    let mut known: Vec<MeanEntry> = Vec::new();
    for &(o, _, m) in &rows {
        if o.0 == o.1 {
            for party in [Party::A, Party::B] {
                known.push(MeanEntry { outcome: o, party, mean: m / 2.0, solved: false });
            }
        }
    }
    let local = |o: (u8, u8), p: Party| if p == Party::A { o.0 } else { o.1 };
    for t in one_party {
        let party = match t.parties.as_slice() {
            [p] => *p,
            _ => return Err(Error::MalformedTable("one-party table with several parties".into())),
        };
        for row in &t.rows {
            let x = row.outcome[0];
            let cells: Vec<&((u8, u8), f64, f64)> = rows.iter().filter(|r| local(r.0, party) == x).collect();
            let mut rhs = row.probability * row.mean;
            let mut unknown = Vec::new();
            for c in &cells {
                match known.iter().find(|e| e.outcome == c.0 && e.party == party) {
                    Some(e) => rhs -= c.1 * e.mean,
                    None => unknown.push(**c),
                }
            }
            if let [(o, p, _)] = unknown.as_slice() {
                known.push(MeanEntry { outcome: *o, party, mean: snap(rhs / p), solved: true });
            }
        }
    }
    let mut consistent = true;
    for &(o, _, m) in &rows {
        let a = known.iter().find(|e| e.outcome == o && e.party == Party::A).map(|e| e.mean);
        let b = known.iter().find(|e| e.outcome == o && e.party == Party::B).map(|e| e.mean);
        match (a, b) {
            (Some(a), Some(b)) => consistent &= (a + b - m).abs() < MATCH_TOL,
            (Some(a), None) => known.push(MeanEntry { outcome: o, party: Party::B, mean: snap(m - a), solved: true }),
            (None, Some(b)) => known.push(MeanEntry { outcome: o, party: Party::A, mean: snap(m - b), solved: true }),
            (None, None) => consistent = false,
        }
    }
    Ok(MeanAttribution { entries: known, consistent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin_chain::{chain_hamiltonian, named_eigenstate, ChainLabel, ChainSpec};

    fn setup() -> (StateVector, HermitianOperator) {
        (named_eigenstate(ChainLabel::MINUS), chain_hamiltonian(&ChainSpec::three(1.0).unwrap()))
    }

    #[test]
    fn bob_alone_three_quarters_up() {
        let (s, _) = setup();
        let br = measure_sites(&s, &MeasurementScenario::only(Party::B)).unwrap();
        assert!((br[0].probability - 0.75).abs() < 1e-12);
        let both = measure_sites(&s, &MeasurementScenario::both()).unwrap();
        assert!((both[0].probability - 0.5).abs() < 1e-12);
        assert!(both[3].is_empty());
        assert!(matches!(both[3].post_state(), Err(Error::ZeroProbability(_))));
    }

    #[test]
    fn eigenstate_of_measured_spin_is_untouched() {
        let s = named_eigenstate(ChainLabel::ZERO1);
        let br = measure_sites(&s, &MeasurementScenario::only(Party::B)).unwrap();
        assert!((br[0].probability - 1.0).abs() < 1e-15);
        assert!(br[0].post_state().unwrap().max_abs_diff(&s).unwrap() < 1e-15);
    }

    #[test]
    fn tables_are_party_symmetric() {
        let (s, h) = setup();
        let a = conditional_energy_stats(&s, &MeasurementScenario::only(Party::A), &h).unwrap();
        let b = conditional_energy_stats(&s, &MeasurementScenario::only(Party::B), &h).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.probability - y.probability).abs() < 1e-12 && (x.mean - y.mean).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let (s, h) = setup();
        let t = conditional_energy_stats(&s, &MeasurementScenario::only(Party::B), &h).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "outcome,prob,delta_e,prob_delta_e,conditional_mean,overall_mean");
        assert_eq!(lines.count(), 6);
    }

    #[test]
    fn ratio_rendering() {
        assert_eq!(ratio(1.0 / 6.0), "1/6");
        assert_eq!(ratio(2.0 / 3.0), "2/3");
        assert_eq!(ratio(1.0), "1");
    }
}
