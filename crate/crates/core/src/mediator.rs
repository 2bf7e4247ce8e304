//! Search for a shuttling auxiliary system whose go-and-return imprints the
//! eigenphases of a two-spin Hamiltonian.
//!
//! Registers are ordered [spin1, aux, spin2]. U1 acts on spin1 ⊗ aux, U2 on
//! aux ⊗ spin2, and the round trip is U1·U2 (U2 first).

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qla::{exp_hermitian, hermiticity_defect, sigma_z, unitarity_defect, C64};
use crate::spin_chain::pair_coupling;
use crate::util::fmt12;

/// Residual below which a dimension is reported as realizable.
pub const SUCCESS_THRESHOLD: f64 = 1e-6;
const UNITARY_TOL: f64 = 1e-8;

/// Complex matrices serialize as `{rows, cols, re, im}`, row-major.
mod cmat {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Raw {
        rows: usize,
        cols: usize,
        re: Vec<f64>,
        im: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<C64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let t = m.transpose();
        Raw { rows: m.nrows(), cols: m.ncols(), re: t.iter().map(|z| z.re).collect(), im: t.iter().map(|z| z.im).collect() }
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<C64>, D::Error> {
        let r = Raw::deserialize(d)?;
        if r.re.len() != r.rows * r.cols || r.im.len() != r.re.len() {
            return Err(serde::de::Error::custom("matrix data length mismatch"));
        }
        let data = r.re.iter().zip(&r.im).map(|(&a, &b)| C64::new(a, b));
        Ok(DMatrix::from_row_iterator(r.rows, r.cols, data))
    }
}

/// Named two-spin targets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "kebab-case")]
pub enum Target {
    /// The nearest-neighbour pair coupling of the chain.
    Pair,
    /// ω σz ⊗ I.
    LocalZ { omega: f64 },
}

impl Target {
    pub fn hamiltonian(&self) -> DMatrix<C64> {
        match *self {
            Target::Pair => pair_coupling().matrix().clone(),
            Target::LocalZ { omega } => (sigma_z() * C64::from(omega)).kronecker(&DMatrix::identity(2, 2)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediatorProblem {
    #[serde(with = "cmat")]
    pub h: DMatrix<C64>,
    pub tau: f64,
    pub d: usize,
}

impl MediatorProblem {
    pub fn new(h: DMatrix<C64>, tau: f64, d: usize) -> Result<Self> {
        if h.shape() != (4, 4) {
            return Err(Error::DimensionMismatch { expected: 4, found: h.nrows() });
        }
        let defect = hermiticity_defect(&h);
        if defect > 1e-10 {
            return Err(Error::NotHermitian(defect));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau = {tau}")));
        }
        if d < 2 {
            return Err(Error::InvalidParameter(format!("aux dimension {d} < 2")));
        }
        Ok(Self { h, tau, d })
    }

    pub fn from_target(t: Target, tau: f64, d: usize) -> Result<Self> {
        Self::new(t.hamiltonian(), tau, d)
    }

    pub fn with_dim(&self, d: usize) -> Result<Self> {
        Self::new(self.h.clone(), self.tau, d)
    }

    /// Isometry |s1 s2⟩ → |s1, 0, s2⟩.
    pub fn embedding(&self) -> DMatrix<C64> {
        let d = self.d;
        let mut e = DMatrix::zeros(4 * d, 4);
        for s1 in 0..2 {
            for s2 in 0..2 {
                e[(s1 * 2 * d + s2, s1 * 2 + s2)] = C64::from(1.0);
            }
        }
        e
    }

    /// e^{-iHτ}
    pub fn target_propagator(&self) -> DMatrix<C64> {
        exp_hermitian(&self.h, self.tau)
    }

    fn lift(&self, u1: &DMatrix<C64>, u2: &DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
        let i2 = DMatrix::<C64>::identity(2, 2);
        (u1.kronecker(&i2), i2.kronecker(u2))
    }

    fn check(&self, u: &DMatrix<C64>) -> Result<()> {
        let n = 2 * self.d;
        if u.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, found: u.nrows() });
        }
        let defect = unitarity_defect(u);
        if defect > UNITARY_TOL {
            return Err(Error::NotUnitary(defect));
        }
        Ok(())
    }
}

/// Σ_ε ‖U1U2(ψ_ε⊗0) − e^{−iετ}(ψ_ε⊗0)‖², i.e. ‖U1U2E − E·e^{−iHτ}‖_F².
pub fn residual(p: &MediatorProblem, u1: &DMatrix<C64>, u2: &DMatrix<C64>) -> Result<f64> {
    p.check(u1)?;
    p.check(u2)?;
    Ok(Landscape::new(p).residual(u1, u2))
}

/// ‖(U1U2)^k E − E e^{−iHkτ}‖_F.
pub fn round_trip_error(p: &MediatorProblem, u1: &DMatrix<C64>, u2: &DMatrix<C64>, k: usize) -> Result<f64> {
    p.check(u1)?;
    p.check(u2)?;
    let (a, b) = p.lift(u1, u2);
    let step = a * b;
    let e = p.embedding();
    let r = p.target_propagator();
    let mut lhs = e.clone();
    let mut rhs = DMatrix::<C64>::identity(4, 4);
    for _ in 0..k {
        lhs = &step * lhs;
        rhs = &r * rhs;
    }
    Ok((lhs - e * rhs).norm())
}

/// Extend U on spin ⊗ aux(d) to spin ⊗ aux(d_new) by acting trivially on the new levels.
/// `spin_first` selects the register order (U1: spin, aux; U2: aux, spin).
pub fn embed_unitary(u: &DMatrix<C64>, d: usize, d_new: usize, spin_first: bool) -> DMatrix<C64> {
    let idx = |s: usize, a: usize, dd: usize| if spin_first { s * dd + a } else { a * 2 + s };
    let mut out = DMatrix::<C64>::identity(2 * d_new, 2 * d_new);
    for s in 0..2 {
        for a in 0..d {
            for t in 0..2 {
                for b in 0..d {
                    out[(idx(s, a, d_new), idx(t, b, d_new))] = u[(idx(s, a, d), idx(t, b, d))];
                }
            }
        }
    }
    out
}

/// Residual and its Riemannian gradient for one problem.
struct Landscape {
    d: usize,
    e: DMatrix<C64>,
    er: DMatrix<C64>,
    /// E e^{+iHτ} E†
    q: DMatrix<C64>,
    i2: DMatrix<C64>,
}

impl Landscape {
    fn new(p: &MediatorProblem) -> Self {
        let e = p.embedding();
        let r = p.target_propagator();
        let er = &e * &r;
        let q = &e * r.adjoint() * e.adjoint();
        Self { d: p.d, e, er, q, i2: DMatrix::identity(2, 2) }
    }

    fn residual(&self, u1: &DMatrix<C64>, u2: &DMatrix<C64>) -> f64 {
        let m = u1.kronecker(&self.i2) * (self.i2.kronecker(u2) * &self.e);
        (m - &self.er).norm_squared()
    }

    /// Anti-Hermitian ascent directions of Re Tr(U1U2Q) for the updates
    /// U1 → U1 e^{X1}, U2 → e^{X2} U2.
    fn gradient(&self, u1: &DMatrix<C64>, u2: &DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
        let d = self.d;
        let m = self.i2.kronecker(u2) * &self.q * u1.kronecker(&self.i2);
        let n = 2 * d;
        let mut k1 = DMatrix::<C64>::zeros(n, n);
        let mut k2 = DMatrix::<C64>::zeros(n, n);
        let at = |s1: usize, a: usize, s2: usize| s1 * 2 * d + a * 2 + s2;
        for s1 in 0..2 {
            for a in 0..d {
                for s2 in 0..2 {
                    for t1 in 0..2 {
                        for b in 0..d {
                            for t2 in 0..2 {
                                let z = m[(at(s1, a, s2), at(t1, b, t2))];
                                if s2 == t2 {
                                    k1[(s1 * d + a, t1 * d + b)] += z;
                                }
                                if s1 == t1 {
                                    k2[(a * 2 + s2, b * 2 + t2)] += z;
                                }
                            }
                        }
                    }
                }
            }
        }
        let skew = |k: DMatrix<C64>| (k.adjoint() - k) * C64::from(0.5);
        (skew(k1), skew(k2))
    }
}

fn expm_skew(a: &DMatrix<C64>, eta: f64) -> DMatrix<C64> {
    // e^{ηA} = e^{-i(iA)η}
    exp_hermitian(&(a * C64::new(0.0, 1.0)), eta)
}

fn dot(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

struct Local {
    u1: DMatrix<C64>,
    u2: DMatrix<C64>,
    residual: f64,
    iterations: usize,
}

/// Polak-Ribière conjugate gradient with Armijo backtracking on U(2d) × U(2d).
fn descend(land: &Landscape, mut u1: DMatrix<C64>, mut u2: DMatrix<C64>, max_iters: usize) -> Local {
    let mut r = land.residual(&u1, &u2);
    let (mut g1, mut g2) = land.gradient(&u1, &u2);
    let (mut p1, mut p2) = (g1.clone(), g2.clone());
    let mut gg = dot(&g1, &g1) + dot(&g2, &g2);
    let mut eta = 0.1;
    let mut it = 0;
    while it < max_iters && r > 1e-28 && gg > 1e-30 {
        it += 1;
        // dr/dη along (p1, p2) is −2 Re⟨g, p⟩
        let mut slope = -2.0 * (dot(&g1, &p1) + dot(&g2, &p2));
        if slope >= 0.0 {
            p1 = g1.clone();
            p2 = g2.clone();
            slope = -2.0 * gg;
        }
        let mut accepted = None;
        let mut step = eta * 2.0;
        for _ in 0..60 {
            let c1 = &u1 * expm_skew(&p1, step);
            let c2 = expm_skew(&p2, step) * &u2;
            let rc = land.residual(&c1, &c2);
            if rc <= r + 1e-4 * step * slope {
                accepted = Some((c1, c2, rc));
                break;
            }
            step *= 0.5;
        }
        let Some((c1, c2, rc)) = accepted else { break };
        eta = step;
        u1 = c1;
        u2 = c2;
        r = rc;
        let (n1, n2) = land.gradient(&u1, &u2);
        let ng = dot(&n1, &n1) + dot(&n2, &n2);
        let beta = ((dot(&n1, &(&n1 - &g1)) + dot(&n2, &(&n2 - &g2))) / gg).max(0.0);
        p1 = &n1 + &p1 * C64::from(beta);
        p2 = &n2 + &p2 * C64::from(beta);
        g1 = n1;
        g2 = n2;
        gg = ng;
    }
    Local { u1, u2, residual: r, iterations: it }
}

fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let mut h = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = C64::from(rng.random_range(-1.0..1.0));
        for j in 0..i {
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    exp_hermitian(&h, std::f64::consts::PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { restarts: 8, max_iters: 2000, seed: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediatorSolution {
    pub d: usize,
    pub tau: f64,
    #[serde(with = "cmat")]
    pub u1: DMatrix<C64>,
    #[serde(with = "cmat")]
    pub u2: DMatrix<C64>,
    pub residual: f64,
    pub restarts: usize,
    /// Iterations of the winning restart.
    pub iterations: usize,
    /// Seed of the winning restart.
    pub seed: u64,
}

impl MediatorSolution {
    pub fn realizable(&self) -> bool {
        self.residual < SUCCESS_THRESHOLD
    }
}

/// Restart 0 starts from `start` (identity if None); restart r ≥ 1 from a
/// random unitary pair seeded by `seed + r`.
fn optimize_with_start(
    p: &MediatorProblem,
    opts: &OptimizeOptions,
    start: Option<(DMatrix<C64>, DMatrix<C64>)>,
) -> Result<MediatorSolution> {
    if opts.restarts == 0 {
        return Err(Error::InvalidParameter("restarts must be at least 1".into()));
    }
    let n = 2 * p.d;
    let land = Landscape::new(p);
    let start = start.unwrap_or_else(|| (DMatrix::identity(n, n), DMatrix::identity(n, n)));
    let runs: Vec<(u64, Local)> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = opts.seed.wrapping_add(r as u64);
            let (a, b) = if r == 0 {
                start.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (random_unitary(n, &mut rng), random_unitary(n, &mut rng))
            };
            (seed, descend(&land, a, b, opts.max_iters))
        })
        .collect();
    let (seed, best) = runs
        .into_iter()
        .reduce(|x, y| if y.1.residual < x.1.residual { y } else { x })
        .expect("at least one restart");
    Ok(MediatorSolution {
        d: p.d,
        tau: p.tau,
        residual: land.residual(&best.u1, &best.u2),
        u1: best.u1,
        u2: best.u2,
        restarts: opts.restarts,
        iterations: best.iterations,
        seed,
    })
}

pub fn optimize(p: &MediatorProblem, opts: &OptimizeOptions) -> Result<MediatorSolution> {
    optimize_with_start(p, opts, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub d: usize,
    pub residual: f64,
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub rows: Vec<ScanRow>,
    pub solutions: Vec<MediatorSolution>,
    /// Residual non-increasing in d, up to the 1e-10 embedding round-off.
    pub monotone: bool,
    /// Smallest d with residual below the success threshold.
    pub smallest_realizable: Option<usize>,
}

impl ScanReport {
    /// Columns: d, residual, restarts, iterations, seed.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["d", "residual", "restarts", "iterations", "seed"])?;
        for r in &self.rows {
            wr.write_record([r.d.to_string(), fmt12(r.residual), r.restarts.to_string(), r.iterations.to_string(), r.seed.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Optimizes each aux dimension in increasing order. Restart 0 at d starts
/// from the best solution at the previous d, padded with identity.
pub fn dimension_scan(template: &MediatorProblem, dims: &[usize], opts: &OptimizeOptions) -> Result<ScanReport> {
    let mut dims = dims.to_vec();
    dims.sort_unstable();
    dims.dedup();
    if dims.is_empty() {
        return Err(Error::InvalidParameter("empty dimension range".into()));
    }
    let mut rows = Vec::new();
    let mut solutions: Vec<MediatorSolution> = Vec::new();
    for &d in &dims {
        let p = template.with_dim(d)?;
        let start = solutions
            .last()
            .map(|s| (embed_unitary(&s.u1, s.d, d, true), embed_unitary(&s.u2, s.d, d, false)));
        let t0 = Instant::now();
        let sol = optimize_with_start(&p, opts, start)?;
        rows.push(ScanRow {
            d,
            residual: sol.residual,
            restarts: sol.restarts,
            iterations: sol.iterations,
            seed: sol.seed,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        solutions.push(sol);
    }
    let monotone = rows.windows(2).all(|w| w[1].residual <= w[0].residual + 1e-10);
    let smallest_realizable = rows.iter().find(|r| r.residual < SUCCESS_THRESHOLD).map(|r| r.d);
    Ok(ScanReport { rows, solutions, monotone, smallest_realizable })
}

/// Central finite-difference gradient of the residual along U1 → U1 e^{X},
/// U2 → e^{X} U2 for a single generator pair; used to check the analytic one.
pub fn directional_derivative(p: &MediatorProblem, u1: &DMatrix<C64>, u2: &DMatrix<C64>, x1: &DMatrix<C64>, x2: &DMatrix<C64>, h: f64) -> (f64, f64) {
    let land = Landscape::new(p);
    let r = |s: f64| land.residual(&(u1 * expm_skew(x1, s)), &(expm_skew(x2, s) * u2));
    let fd = (r(h) - r(-h)) / (2.0 * h);
    let (g1, g2) = land.gradient(u1, u2);
    (fd, -2.0 * (dot(&g1, x1) + dot(&g2, x2)))
}
