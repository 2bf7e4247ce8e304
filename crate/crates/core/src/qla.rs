//! Dense complex linear algebra over ordered tensor-product spaces.
//!
//! Subsystem order is significant: the first subsystem is the most
//! significant digit of the flat amplitude index.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use num_complex::Complex64 as C64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemShape {
    dims: Vec<usize>,
}

impl SubsystemShape {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("no subsystems".into()));
        }
        if let Some(k) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("subsystem {k} has dimension 0")));
        }
        Ok(Self { dims })
    }

    pub fn qubits(n: usize) -> Self {
        Self { dims: vec![2; n.max(1)] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn count(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for k in (0..self.dims.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    pub fn concat(&self, other: &SubsystemShape) -> SubsystemShape {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        SubsystemShape { dims }
    }

    pub fn select(&self, idx: &[usize]) -> Result<SubsystemShape> {
        check_targets(idx, self.count())?;
        SubsystemShape::new(idx.iter().map(|&k| self.dims[k]).collect())
    }

    /// Flat offsets of every configuration of `subset`, embedded in the full index.
    pub fn offsets(&self, subset: &[usize]) -> Vec<usize> {
        let strides = self.strides();
        let mut out = vec![0usize];
        for &k in subset {
            let mut next = Vec::with_capacity(out.len() * self.dims[k]);
            for &o in &out {
                for j in 0..self.dims[k] {
                    next.push(o + j * strides[k]);
                }
            }
            out = next;
        }
        out
    }

    pub fn complement(&self, subset: &[usize]) -> Vec<usize> {
        (0..self.count()).filter(|k| !subset.contains(k)).collect()
    }
}

fn check_targets(targets: &[usize], count: usize) -> Result<()> {
    for (i, &t) in targets.iter().enumerate() {
        if t >= count {
            return Err(Error::TargetOutOfRange { index: t, count });
        }
        if targets[..i].contains(&t) {
            return Err(Error::RepeatedTarget(t));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    shape: SubsystemShape,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(shape: SubsystemShape, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != shape.total() {
            return Err(Error::DimensionMismatch { expected: shape.total(), found: amps.len() });
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::InvalidParameter("non-finite amplitude".into()));
        }
        Ok(Self { shape, amps })
    }

    pub fn zeros(shape: SubsystemShape) -> Self {
        let n = shape.total();
        Self { shape, amps: vec![ZERO; n] }
    }

    /// Computational basis state for a multi-index.
    pub fn basis(shape: SubsystemShape, index: &[usize]) -> Result<Self> {
        if index.len() != shape.count() {
            return Err(Error::DimensionMismatch { expected: shape.count(), found: index.len() });
        }
        let strides = shape.strides();
        let mut flat = 0;
        for (k, (&i, &d)) in index.iter().zip(shape.dims()).enumerate() {
            if i >= d {
                return Err(Error::TargetOutOfRange { index: i, count: d });
            }
            flat += i * strides[k];
        }
        let mut s = Self::zeros(shape);
        s.amps[flat] = ONE;
        Ok(s)
    }

    pub fn qubit(alpha: C64, beta: C64) -> Self {
        Self { shape: SubsystemShape::qubits(1), amps: vec![alpha, beta] }
    }

    pub fn shape(&self) -> &SubsystemShape {
        &self.shape
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm);
        }
        Ok(self.scaled(C64::from(1.0 / n)))
    }

    pub fn scaled(&self, z: C64) -> Self {
        Self { shape: self.shape.clone(), amps: self.amps.iter().map(|a| a * z).collect() }
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        self.same_shape(other)?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        let ov = self.inner(other)?;
        Ok(ov.norm_sqr() / (self.norm_sqr() * other.norm_sqr()))
    }

    pub fn add(&self, other: &StateVector) -> Result<Self> {
        self.same_shape(other)?;
        let amps = self.amps.iter().zip(&other.amps).map(|(a, b)| a + b).collect();
        Ok(Self { shape: self.shape.clone(), amps })
    }

    pub fn sub(&self, other: &StateVector) -> Result<Self> {
        self.add(&other.scaled(-ONE))
    }

    pub fn kron(&self, other: &StateVector) -> Self {
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for a in &self.amps {
            for b in &other.amps {
                amps.push(a * b);
            }
        }
        Self { shape: self.shape.concat(&other.shape), amps }
    }

    pub fn expectation(&self, op: &HermitianOperator) -> Result<f64> {
        let v = op.apply(self)?;
        Ok(self.inner(&v)?.re)
    }

    /// Reorder subsystems: new subsystem k is old subsystem `order[k]`.
    pub fn permute(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.shape.count() {
            return Err(Error::DimensionMismatch { expected: self.shape.count(), found: order.len() });
        }
        check_targets(order, self.shape.count())?;
        let new_shape = self.shape.select(order)?;
        let src = self.shape.offsets(order);
        let amps = src.iter().map(|&o| self.amps[o]).collect();
        Ok(Self { shape: new_shape, amps })
    }

    pub fn projector(&self) -> DensityOperator {
        let n = self.amps.len();
        let m = DMatrix::from_fn(n, n, |i, j| self.amps[i] * self.amps[j].conj());
        DensityOperator { shape: self.shape.clone(), matrix: m }
    }

    pub fn max_abs_diff(&self, other: &StateVector) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
    }

    fn same_shape(&self, other: &StateVector) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape.dims(), other.shape.dims())));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    shape: SubsystemShape,
    matrix: DMatrix<C64>,
}

pub fn hermiticity_defect(m: &DMatrix<C64>) -> f64 {
    let mut defect: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            defect = defect.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    defect
}

fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl HermitianOperator {
    pub fn new(shape: SubsystemShape, matrix: DMatrix<C64>) -> Result<Self> {
        let n = shape.total();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.nrows() });
        }
        let defect = hermiticity_defect(&matrix);
        if defect > 1e-12 * max_abs(&matrix).max(f64::MIN_POSITIVE) {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self { shape, matrix })
    }

    pub fn on_qubits(matrix: DMatrix<C64>) -> Result<Self> {
        let n = matrix.nrows();
        if !n.is_power_of_two() || n < 2 {
            return Err(Error::InvalidShape(format!("dimension {n} is not a qubit register")));
        }
        Self::new(SubsystemShape::qubits(n.trailing_zeros() as usize), matrix)
    }

    pub fn identity(shape: SubsystemShape) -> Self {
        let n = shape.total();
        Self { shape, matrix: DMatrix::identity(n, n) }
    }

    pub fn zero(shape: SubsystemShape) -> Self {
        let n = shape.total();
        Self { shape, matrix: DMatrix::zeros(n, n) }
    }

    pub fn shape(&self) -> &SubsystemShape {
        &self.shape
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn kron(&self, other: &HermitianOperator) -> Self {
        Self { shape: self.shape.concat(&other.shape), matrix: self.matrix.kronecker(&other.matrix) }
    }

    pub fn scaled(&self, x: f64) -> Self {
        Self { shape: self.shape.clone(), matrix: self.matrix.map(|z| z * x) }
    }

    pub fn add(&self, other: &HermitianOperator) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch("operator sum".into()));
        }
        Ok(Self { shape: self.shape.clone(), matrix: &self.matrix + &other.matrix })
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if state.shape != self.shape {
            return Err(Error::ShapeMismatch("operator and state".into()));
        }
        let n = self.dim();
        let mut out = vec![ZERO; n];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for j in 0..n {
                acc += self.matrix[(i, j)] * state.amps[j];
            }
            *o = acc;
        }
        Ok(StateVector { shape: state.shape.clone(), amps: out })
    }

    /// Dense embedding of this operator on `targets` of `full`.
    pub fn embed(&self, full: &SubsystemShape, targets: &[usize]) -> Result<Self> {
        let tshape = full.select(targets)?;
        if tshape.total() != self.dim() {
            return Err(Error::DimensionMismatch { expected: tshape.total(), found: self.dim() });
        }
        let n = full.total();
        let toff = full.offsets(targets);
        let roff = full.offsets(&full.complement(targets));
        let mut m = DMatrix::zeros(n, n);
        for &r in &roff {
            for (a, &ia) in toff.iter().enumerate() {
                for (b, &ib) in toff.iter().enumerate() {
                    m[(r + ia, r + ib)] = self.matrix[(a, b)];
                }
            }
        }
        Ok(Self { shape: full.clone(), matrix: m })
    }

    /// e^{-iHt}
    pub fn propagator(&self, t: f64) -> DMatrix<C64> {
        exp_hermitian(&self.matrix, t)
    }
}

/// e^{-iHt} for a Hermitian matrix via its spectral decomposition.
pub fn exp_hermitian(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(h.clone());
    let v = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * t)));
    v * phases * v.adjoint()
}

pub fn unitarity_defect(u: &DMatrix<C64>) -> f64 {
    let n = u.nrows();
    let p = u.adjoint() * u - DMatrix::<C64>::identity(n, n);
    max_abs(&p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    shape: SubsystemShape,
    matrix: DMatrix<C64>,
}

impl DensityOperator {
    pub fn new(shape: SubsystemShape, matrix: DMatrix<C64>) -> Result<Self> {
        let n = shape.total();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.nrows() });
        }
        let defect = hermiticity_defect(&matrix);
        if defect > 1e-10 * max_abs(&matrix).max(1.0) {
            return Err(Error::NotHermitian(defect));
        }
        Ok(Self { shape, matrix })
    }

    pub fn shape(&self) -> &SubsystemShape {
        &self.shape
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn normalized(&self) -> Result<Self> {
        let t = self.trace();
        if t <= 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { shape: self.shape.clone(), matrix: self.matrix.map(|z| z / t) })
    }

    pub fn purity(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.trace().powi(2)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.matrix.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn expectation(&self, op: &HermitianOperator) -> Result<f64> {
        if op.shape != self.shape {
            return Err(Error::ShapeMismatch("operator and density".into()));
        }
        Ok((op.matrix() * &self.matrix).trace().re)
    }

    /// Conjugate by a unitary acting on the whole space.
    pub fn conjugated(&self, u: &DMatrix<C64>) -> Result<Self> {
        if u.nrows() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch { expected: self.matrix.nrows(), found: u.nrows() });
        }
        Ok(Self { shape: self.shape.clone(), matrix: u * &self.matrix * u.adjoint() })
    }
}

pub enum Tensor {
    State(StateVector),
    Operator(HermitianOperator),
}

/// Kronecker product of a nonempty list of like-kinded factors.
pub fn tensor(factors: &[Tensor]) -> Result<Tensor> {
    let (first, rest) = factors.split_first().ok_or(Error::EmptyFactors)?;
    match first {
        Tensor::State(s) => {
            let mut acc = s.clone();
            for f in rest {
                match f {
                    Tensor::State(t) => acc = acc.kron(t),
                    Tensor::Operator(_) => return Err(Error::MixedTensorKinds),
                }
            }
            Ok(Tensor::State(acc))
        }
        Tensor::Operator(o) => {
            let mut acc = o.clone();
            for f in rest {
                match f {
                    Tensor::Operator(t) => acc = acc.kron(t),
                    Tensor::State(_) => return Err(Error::MixedTensorKinds),
                }
            }
            Ok(Tensor::Operator(acc))
        }
    }
}

pub fn kron_states(factors: &[&StateVector]) -> Result<StateVector> {
    let (first, rest) = factors.split_first().ok_or(Error::EmptyFactors)?;
    Ok(rest.iter().fold((*first).clone(), |acc, f| acc.kron(f)))
}

pub fn kron_ops(factors: &[&HermitianOperator]) -> Result<HermitianOperator> {
    let (first, rest) = factors.split_first().ok_or(Error::EmptyFactors)?;
    Ok(rest.iter().fold((*first).clone(), |acc, f| acc.kron(f)))
}

/// Apply `op` (any square matrix) to the `targets` subsystems of `state`.
pub fn apply_local(op: &DMatrix<C64>, state: &StateVector, targets: &[usize]) -> Result<StateVector> {
    let shape = state.shape();
    check_targets(targets, shape.count())?;
    let tdim: usize = targets.iter().map(|&t| shape.dims()[t]).product();
    if op.nrows() != tdim || op.ncols() != tdim {
        return Err(Error::DimensionMismatch { expected: tdim, found: op.nrows() });
    }
    let toff = shape.offsets(targets);
    let roff = shape.offsets(&shape.complement(targets));
    let mut out = vec![ZERO; state.len()];
    let mut buf = vec![ZERO; tdim];
    for &r in &roff {
        for (b, &o) in buf.iter_mut().zip(&toff) {
            *b = state.amps[r + o];
        }
        for (a, &oa) in toff.iter().enumerate() {
            let mut acc = ZERO;
            for (b, v) in buf.iter().enumerate() {
                acc += op[(a, b)] * v;
            }
            out[r + oa] = acc;
        }
    }
    StateVector::new(shape.clone(), out)
}

pub trait PartialTrace {
    fn partial_trace(&self, keep: &[usize]) -> Result<DensityOperator>;
}

impl PartialTrace for StateVector {
    fn partial_trace(&self, keep: &[usize]) -> Result<DensityOperator> {
        if keep.is_empty() {
            return Err(Error::EmptyKeep);
        }
        let shape = self.shape();
        let kshape = shape.select(keep)?;
        let koff = shape.offsets(keep);
        let toff = shape.offsets(&shape.complement(keep));
        let (kd, td) = (koff.len(), toff.len());
        // Real and imaginary parts through real products: M M† = (A+iB)(A−iB)ᵀ.
        let a = DMatrix::<f64>::from_fn(kd, td, |i, j| self.amps[koff[i] + toff[j]].re);
        let b = DMatrix::<f64>::from_fn(kd, td, |i, j| self.amps[koff[i] + toff[j]].im);
        let re = &a * a.transpose() + &b * b.transpose();
        let x = &b * a.transpose();
        let m = DMatrix::from_fn(kd, kd, |i, j| C64::new(re[(i, j)], x[(i, j)] - x[(j, i)]));
        DensityOperator::new(kshape, m)
    }
}

impl PartialTrace for DensityOperator {
    fn partial_trace(&self, keep: &[usize]) -> Result<DensityOperator> {
        if keep.is_empty() {
            return Err(Error::EmptyKeep);
        }
        let kshape = self.shape.select(keep)?;
        let koff = self.shape.offsets(keep);
        let toff = self.shape.offsets(&self.shape.complement(keep));
        let m = DMatrix::from_fn(koff.len(), koff.len(), |i, j| {
            toff.iter().map(|&t| self.matrix[(koff[i] + t, koff[j] + t)]).sum()
        });
        DensityOperator::new(kshape, m)
    }
}

pub fn partial_trace<T: PartialTrace>(x: &T, keep: &[usize]) -> Result<DensityOperator> {
    x.partial_trace(keep)
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<StateVector>,
}

impl Spectrum {
    /// Group eigenvalues closer than `tol` and return (value, projector) pairs.
    pub fn projectors(&self, tol: f64) -> Vec<(f64, DMatrix<C64>)> {
        let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
        for (k, &v) in self.values.iter().enumerate() {
            match out.last_mut() {
                Some((rep, idx)) if (v - *rep).abs() <= tol => idx.push(k),
                _ => out.push((v, vec![k])),
            }
        }
        out.into_iter()
            .map(|(_, idx)| {
                let n = self.vectors[idx[0]].len();
                let mut p = DMatrix::zeros(n, n);
                let mean = idx.iter().map(|&k| self.values[k]).sum::<f64>() / idx.len() as f64;
                for &k in &idx {
                    let a = self.vectors[k].amplitudes();
                    p += DMatrix::from_fn(n, n, |i, j| a[i] * a[j].conj());
                }
                (mean, p)
            })
            .collect()
    }
}

/// Sorted eigenvalues with orthonormal eigenvectors.
pub fn eig_hermitian(op: &HermitianOperator) -> Spectrum {
    let eig = SymmetricEigen::new(op.matrix.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| StateVector {
            shape: op.shape.clone(),
            amps: eig.eigenvectors.column(k).iter().copied().collect(),
        })
        .collect();
    Spectrum { values, vectors }
}

fn check_pair(a: &DensityOperator, b: &DensityOperator) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape.dims(), b.shape.dims())));
    }
    let (ta, tb) = (a.trace(), b.trace());
    if (ta - tb).abs() > 1e-9 {
        return Err(Error::TraceMismatch(ta, tb));
    }
    Ok(())
}

/// Basis states populated by neither operator (diagonal below this, relative
/// to the largest) are dropped before diagonalizing.
const SUPPORT_CUTOFF: f64 = 1e-24;

/// Both matrices restricted to the basis states either one populates.
fn common_support(a: &DMatrix<C64>, b: &DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let pop: Vec<f64> = (0..a.nrows()).map(|i| a[(i, i)].re.max(b[(i, i)].re)).collect();
    let top = pop.iter().copied().fold(0.0, f64::max);
    let idx: Vec<usize> = (0..pop.len()).filter(|&i| pop[i] > SUPPORT_CUTOFF * top).collect();
    if idx.len() == pop.len() {
        return (a.clone(), b.clone());
    }
    let pick = |m: &DMatrix<C64>| DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])]);
    (pick(a), pick(b))
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidParameter("eigensolver returned a non-finite value".into()))
    }
}

/// (1/2)‖a − b‖₁
pub fn trace_distance(a: &DensityOperator, b: &DensityOperator) -> Result<f64> {
    check_pair(a, b)?;
    let (x, y) = common_support(&a.matrix, &b.matrix);
    let ev = (x - y).symmetric_eigenvalues();
    finite((0.5 * ev.iter().map(|x| x.abs()).sum::<f64>()).min(1.0))
}

/// Uhlmann fidelity (Tr√(√a b √a))².
pub fn fidelity(a: &DensityOperator, b: &DensityOperator) -> Result<f64> {
    check_pair(a, b)?;
    let (x, y) = common_support(&a.matrix, &b.matrix);
    let eig = SymmetricEigen::new(x);
    let v = &eig.eigenvectors;
    let sq = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| C64::from(e.max(0.0).sqrt())));
    let root = v * sq * v.adjoint();
    let m = &root * y * &root;
    let ev = m.symmetric_eigenvalues();
    finite(ev.iter().map(|x| x.max(0.0).sqrt()).sum::<f64>().powi(2).min(1.0))
}

pub fn sigma_x() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn sigma_y() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn sigma_z() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

pub fn eye(n: usize) -> DMatrix<C64> {
    DMatrix::identity(n, n)
}

/// |v⟩⟨v| for an amplitude slice.
pub fn ket_bra(v: &[C64]) -> DMatrix<C64> {
    DMatrix::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bell {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

pub fn bell(which: Bell) -> StateVector {
    let h = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    let amps = match which {
        Bell::PhiPlus => [h, ZERO, ZERO, h],
        Bell::PhiMinus => [h, ZERO, ZERO, -h],
        Bell::PsiPlus => [ZERO, h, h, ZERO],
        Bell::PsiMinus => [ZERO, h, -h, ZERO],
    };
    StateVector { shape: SubsystemShape::qubits(2), amps: amps.to_vec() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn up() -> StateVector {
        StateVector::qubit(ONE, ZERO)
    }

    #[test]
    fn basis_product_is_first_index() {
        let s = kron_states(&[&up(), &up(), &up()]).unwrap();
        assert_eq!(s.len(), 8);
        assert_eq!(s.amplitudes()[0], ONE);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tensor_rejects_mixed_kinds() {
        let f = [Tensor::State(up()), Tensor::Operator(HermitianOperator::identity(SubsystemShape::qubits(1)))];
        assert!(matches!(tensor(&f), Err(Error::MixedTensorKinds)));
    }

    #[test]
    fn identity_tensor_identity() {
        let a = HermitianOperator::identity(SubsystemShape::qubits(1));
        let b = HermitianOperator::identity(SubsystemShape::new(vec![3]).unwrap());
        let t = a.kron(&b);
        assert_eq!(t.matrix(), &eye(6));
    }

    #[test]
    fn apply_local_flips_pointer() {
        let down0 = StateVector::basis(SubsystemShape::qubits(2), &[1, 0]).unwrap();
        let out = apply_local(&sigma_x(), &down0, &[1]).unwrap();
        assert_eq!(out, StateVector::basis(SubsystemShape::qubits(2), &[1, 1]).unwrap());
        assert!(matches!(apply_local(&sigma_x(), &down0, &[2]), Err(Error::TargetOutOfRange { .. })));
        let cx = sigma_x().kronecker(&sigma_x());
        assert!(matches!(apply_local(&cx, &down0, &[0, 0]), Err(Error::RepeatedTarget(0))));
    }

    #[test]
    fn partial_trace_of_bell_is_mixed() {
        let rho = bell(Bell::PhiMinus).partial_trace(&[1]).unwrap();
        let half = DMatrix::from_diagonal_element(2, 2, C64::from(0.5));
        assert!((rho.matrix() - half).norm() < 1e-15);
        assert!(matches!(bell(Bell::PhiPlus).partial_trace(&[]), Err(Error::EmptyKeep)));
    }

    #[test]
    fn sigma_z_spectrum() {
        let sp = eig_hermitian(&HermitianOperator::on_qubits(sigma_z()).unwrap());
        assert!((sp.values[0] + 1.0).abs() < 1e-15 && (sp.values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_states_have_unit_distance() {
        let a = up().projector();
        let b = StateVector::qubit(ZERO, ONE).projector();
        assert!((trace_distance(&a, &b).unwrap() - 1.0).abs() < 1e-14);
        assert!(trace_distance(&a, &a).unwrap() < 1e-15);
        assert!(fidelity(&a, &b).unwrap() < 1e-14);
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(matches!(HermitianOperator::on_qubits(m), Err(Error::NotHermitian(_))));
    }
}
