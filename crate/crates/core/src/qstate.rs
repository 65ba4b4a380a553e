//! Dense n-qubit state engine.
//!
//! Basis index convention: bit `j` of a computational-basis index is the value of
//! qubit `j`, with qubit 0 the least significant bit. Tensor products place the
//! left operand on the low qubits.
//!
//! Phase conventions: the rotated GHZ state carries `e^{+iΘ}` on `|1…1⟩`,
//! `R_z(θ) = diag(1, e^{-iθ})`, and the measurement basis for angle `θ` is
//! `|±_θ⟩ = (|0⟩ ± e^{iθ}|1⟩)/√2` with outcome bit 0 for `|+_θ⟩`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const MAX_PURE_QUBITS: usize = 20;
pub const MAX_DENSITY_QUBITS: usize = 10;
/// Tolerance used for all state invariants (normalization, hermiticity, trace, PSD floor).
pub const STATE_TOL: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

fn check_pure_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_PURE_QUBITS {
        return Err(Error::Range(format!(
            "pure state qubit count {n} outside 1..={MAX_PURE_QUBITS}"
        )));
    }
    Ok(())
}

fn check_density_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_DENSITY_QUBITS {
        return Err(Error::Range(format!(
            "density matrix qubit count {n} outside 1..={MAX_DENSITY_QUBITS}"
        )));
    }
    Ok(())
}

/// Phase of `⊗_j (cos θ_j X + sin θ_j Y)` connecting basis index `r` to its complement.
#[inline]
fn correlator_phase(r: usize, angles: &[f64]) -> C64 {
    let mut arg = 0.0;
    for (j, &t) in angles.iter().enumerate() {
        if (r >> j) & 1 == 0 {
            arg += t;
        } else {
            arg -= t;
        }
    }
    C64::from_polar(1.0, arg)
}

/// Normalized n-qubit state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    n: usize,
    amps: Vec<C64>,
}

impl PureState {
    pub fn new(n: usize, amps: Vec<C64>) -> Result<Self> {
        check_pure_qubits(n)?;
        if amps.len() != 1 << n {
            return Err(Error::Arity {
                expected: 1 << n,
                actual: amps.len(),
            });
        }
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "squared norm {norm} differs from 1"
            )));
        }
        Ok(Self { n, amps })
    }

    /// Builds a state from arbitrary nonzero amplitudes by rescaling them.
    pub fn normalized(n: usize, mut amps: Vec<C64>) -> Result<Self> {
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Self::new(n, amps)
    }

    pub fn basis(n: usize, index: usize) -> Result<Self> {
        check_pure_qubits(n)?;
        if index >= 1 << n {
            return Err(Error::Range(format!("basis index {index} out of range")));
        }
        let mut amps = vec![ZERO; 1 << n];
        amps[index] = ONE;
        Ok(Self { n, amps })
    }

    /// `|+⟩ = (|0⟩ + |1⟩)/√2`.
    pub fn plus() -> Self {
        Self {
            n: 1,
            amps: vec![C64::new(FRAC_1_SQRT_2, 0.0); 2],
        }
    }

    /// Haar-random state from normalized complex Gaussian amplitudes.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        check_pure_qubits(n)?;
        let amps = (0..1usize << n)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self::normalized(n, amps)
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.n != other.n {
            return Err(Error::Dimension {
                left: self.n,
                right: other.n,
            });
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `self ⊗ other`, with `other` on the higher-indexed qubits.
    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let n = self.n + other.n;
        check_pure_qubits(n)?;
        let mut amps = Vec::with_capacity(1 << n);
        for b in &other.amps {
            for a in &self.amps {
                amps.push(a * b);
            }
        }
        Ok(Self { n, amps })
    }

    pub fn to_density(&self) -> Result<DensityMatrix> {
        DensityMatrix::from_pure(self)
    }

    /// Reduced density matrix on `keep` without forming the full projector.
    pub fn reduced(&self, keep: &[usize]) -> Result<DensityMatrix> {
        let keep = normalize_keep(self.n, keep)?;
        let traced: Vec<usize> = (0..self.n).filter(|q| !keep.contains(q)).collect();
        let dk = 1 << keep.len();
        let dt = 1 << traced.len();
        let mut m = DMatrix::<C64>::zeros(dk, dt);
        for (idx, a) in self.amps.iter().enumerate() {
            m[(gather(idx, &keep), gather(idx, &traced))] = *a;
        }
        let rho = &m * m.adjoint();
        Ok(DensityMatrix {
            n: keep.len(),
            data: rho,
        })
    }

    /// `Tr[|ψ⟩⟨ψ| ⊗_j (cos θ_j X + sin θ_j Y)]`.
    pub fn parity_correlator(&self, angles: &[f64]) -> Result<f64> {
        check_arity(self.n, angles.len())?;
        let full = (1usize << self.n) - 1;
        let sum: C64 = (0..self.amps.len())
            .map(|r| self.amps[r] * self.amps[r ^ full].conj() * correlator_phase(r, angles))
            .sum();
        Ok(sum.re)
    }
}

/// Density operator on at most [`MAX_DENSITY_QUBITS`] qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    data: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validating constructor: Hermitian, unit trace, PSD within [`STATE_TOL`].
    pub fn new(n: usize, data: DMatrix<C64>) -> Result<Self> {
        check_density_qubits(n)?;
        let d = 1 << n;
        if data.nrows() != d || data.ncols() != d {
            return Err(Error::Arity {
                expected: d,
                actual: data.nrows().max(data.ncols()),
            });
        }
        let rho = Self { n, data };
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_pure(psi: &PureState) -> Result<Self> {
        check_density_qubits(psi.n)?;
        let v = nalgebra::DVector::from_column_slice(&psi.amps);
        Ok(Self {
            n: psi.n,
            data: &v * v.adjoint(),
        })
    }

    pub fn maximally_mixed(n: usize) -> Result<Self> {
        check_density_qubits(n)?;
        let d = 1 << n;
        Ok(Self {
            n,
            data: DMatrix::<C64>::identity(d, d) * C64::new(1.0 / d as f64, 0.0),
        })
    }

    /// Random full-rank state `G G† / Tr[G G†]` with a complex Ginibre matrix `G`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        check_density_qubits(n)?;
        let d = 1 << n;
        let g = DMatrix::<C64>::from_fn(d, d, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let mut data = &g * g.adjoint();
        let tr = data.trace();
        data /= tr;
        hermitize(&mut data);
        Ok(Self { n, data })
    }

    /// Convex combination `Σ w_i ρ_i`; weights must be nonnegative and sum to 1.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("empty mixture".into()))?;
        let n = first.1.n;
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        if parts.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > STATE_TOL {
            return Err(Error::Range("mixture weights must be a distribution".into()));
        }
        let d = 1 << n;
        let mut data = DMatrix::<C64>::zeros(d, d);
        for (w, rho) in parts {
            if rho.n != n {
                return Err(Error::Dimension {
                    left: n,
                    right: rho.n,
                });
            }
            data += &rho.data * C64::new(*w, 0.0);
        }
        Ok(Self { n, data })
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.data[(row, col)]
    }

    pub fn trace(&self) -> C64 {
        self.data.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.data * &self.data).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.data.clone().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    /// Checks every type invariant; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for r in 0..d {
            for c in r..d {
                let diff = self.data[(r, c)] - self.data[(c, r)].conj();
                if diff.norm() > STATE_TOL {
                    return Err(Error::InvalidState(format!(
                        "not Hermitian at ({r},{c}): deviation {}",
                        diff.norm()
                    )));
                }
            }
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min = self.eigenvalues().first().copied().unwrap_or(0.0);
        if min < -STATE_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min}"
            )));
        }
        Ok(())
    }

    /// `⟨ψ|ρ|ψ⟩`, the fidelity to a pure state.
    pub fn overlap_with_pure(&self, psi: &PureState) -> Result<f64> {
        if psi.n != self.n {
            return Err(Error::Dimension {
                left: self.n,
                right: psi.n,
            });
        }
        let v = nalgebra::DVector::from_column_slice(&psi.amps);
        Ok((v.adjoint() * &self.data * &v)[(0, 0)].re)
    }

    /// `self ⊗ other`, with `other` on the higher-indexed qubits.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let n = self.n + other.n;
        check_density_qubits(n)?;
        // nalgebra's Kronecker product puts the left factor on the high bits.
        Ok(Self {
            n,
            data: other.data.kronecker(&self.data),
        })
    }

    /// `Tr[ρ ⊗_j (cos θ_j X + sin θ_j Y)]`.
    pub fn parity_correlator(&self, angles: &[f64]) -> Result<f64> {
        check_arity(self.n, angles.len())?;
        let full = self.dim() - 1;
        let sum: C64 = (0..self.dim())
            .map(|r| self.data[(r, r ^ full)] * correlator_phase(r, angles))
            .sum();
        Ok(sum.re)
    }

    /// Applies `diag(1, e^{iφ})` to one qubit.
    pub fn phase_qubit(&self, qubit: usize, phi: f64) -> Result<DensityMatrix> {
        if qubit >= self.n {
            return Err(Error::Range(format!("qubit {qubit} out of range")));
        }
        let ph = C64::from_polar(1.0, phi);
        let d = self.dim();
        let mut data = self.data.clone();
        for r in 0..d {
            for c in 0..d {
                let br = (r >> qubit) & 1;
                let bc = (c >> qubit) & 1;
                match (br, bc) {
                    (1, 0) => data[(r, c)] *= ph,
                    (0, 1) => data[(r, c)] *= ph.conj(),
                    _ => {}
                }
            }
        }
        Ok(Self { n: self.n, data })
    }

    /// Hermitian square root via eigendecomposition, negative eigenvalues clamped to 0.
    pub fn sqrt_matrix(&self) -> DMatrix<C64> {
        hermitian_sqrt(&self.data)
    }
}

fn hermitize(m: &mut DMatrix<C64>) {
    let adj = m.adjoint();
    *m = (&*m + adj) * C64::new(0.5, 0.0);
}

fn hermitian_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let eig = m.clone().symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0));
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&roots) * v.adjoint()
}

fn check_arity(n: usize, got: usize) -> Result<()> {
    if n != got {
        return Err(Error::Arity {
            expected: n,
            actual: got,
        });
    }
    Ok(())
}

/// Packs the bits of `idx` at positions `qubits` into a dense index.
pub(crate) fn gather(idx: usize, qubits: &[usize]) -> usize {
    qubits
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &q)| acc | (((idx >> q) & 1) << i))
}

/// Inverse of [`gather`].
pub(crate) fn scatter(dense: usize, qubits: &[usize]) -> usize {
    qubits
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &q)| acc | (((dense >> i) & 1) << q))
}

fn normalize_keep(n: usize, keep: &[usize]) -> Result<Vec<usize>> {
    if keep.is_empty() {
        return Err(Error::Range("keep set is empty".into()));
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if let Some(&q) = keep.iter().find(|&&q| q >= n) {
        return Err(Error::Range(format!("qubit {q} outside 0..{n}")));
    }
    Ok(keep)
}

/// A Verifier-issued measurement angle in `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MeasurementAngle(f64);

impl MeasurementAngle {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..PI).contains(&theta) {
            return Err(Error::Range(format!("angle {theta} outside [0, π)")));
        }
        Ok(Self(theta))
    }

    /// Reduces any real angle into `[0, π)`.
    pub fn wrapped(theta: f64) -> Self {
        let mut t = theta.rem_euclid(PI);
        if t >= PI {
            t = 0.0;
        }
        Self(t)
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for MeasurementAngle {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MeasurementAngle> for f64 {
    fn from(a: MeasurementAngle) -> f64 {
        a.0
    }
}

pub fn radians(angles: &[MeasurementAngle]) -> Vec<f64> {
    angles.iter().map(|a| a.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ChannelSpec {
    /// Scales the `|0…0⟩⟨1…1|` coherences by `1 - p`.
    GhzDephasing { p: f64 },
    /// `v ρ + (1 - v) I / 2^n`.
    Depolarizing { v: f64 },
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, x) = match *self {
            ChannelSpec::GhzDephasing { p } => ("p", p),
            ChannelSpec::Depolarizing { v } => ("v", v),
        };
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Range(format!("channel parameter {name}={x} outside [0,1]")));
        }
        Ok(())
    }
}

/// `(|0…0⟩ + e^{iΘ}|1…1⟩)/√2`.
pub fn ghz_state(n: usize, theta: f64) -> Result<PureState> {
    check_pure_qubits(n)?;
    let mut amps = vec![ZERO; 1 << n];
    amps[0] = C64::new(FRAC_1_SQRT_2, 0.0);
    let last = amps.len() - 1;
    amps[last] += C64::from_polar(FRAC_1_SQRT_2, theta);
    Ok(PureState { n, amps })
}

/// Applies `R_z(θ_j) = diag(1, e^{-iθ_j})` to every qubit `j`.
pub fn rz_all(state: &PureState, angles: &[f64]) -> Result<PureState> {
    check_arity(state.n, angles.len())?;
    let amps = state
        .amps
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            let arg: f64 = angles
                .iter()
                .enumerate()
                .filter(|(j, _)| (idx >> j) & 1 == 1)
                .map(|(_, t)| -t)
                .sum();
            a * C64::from_polar(1.0, arg)
        })
        .collect();
    Ok(PureState { n: state.n, amps })
}

/// Working copy of a state that can be measured one qubit at a time.
#[derive(Debug, Clone)]
pub enum Register {
    Pure(Vec<C64>),
    Mixed { dim: usize, data: Vec<C64> },
}

impl Register {
    pub fn num_qubits(&self) -> usize {
        let d = match self {
            Register::Pure(a) => a.len(),
            Register::Mixed { dim, .. } => *dim,
        };
        d.trailing_zeros() as usize
    }

    /// Measures qubit 0 in `{|+_φ⟩, |−_φ⟩}`, removes it, and returns the outcome bit.
    pub fn measure_lowest<R: Rng + ?Sized>(&mut self, phi: f64, rng: &mut R) -> u8 {
        let (plus, p_plus) = self.project_lowest(phi, 1.0);
        let u: f64 = rng.random();
        let (mut next, p, bit) = if u < p_plus {
            (plus, p_plus, 0u8)
        } else {
            let (minus, p_minus) = self.project_lowest(phi, -1.0);
            (minus, p_minus, 1u8)
        };
        if p > 0.0 {
            next.scale(1.0 / p);
        }
        *self = next;
        bit
    }

    /// Unnormalized post-measurement register and its probability.
    fn project_lowest(&self, phi: f64, sign: f64) -> (Register, f64) {
        let w = C64::from_polar(sign, -phi);
        match self {
            Register::Pure(a) => {
                let half = a.len() / 2;
                let out: Vec<C64> = (0..half)
                    .map(|i| (a[2 * i] + w * a[2 * i + 1]) * FRAC_1_SQRT_2)
                    .collect();
                let p = out.iter().map(|x| x.norm_sqr()).sum();
                (Register::Pure(out), p)
            }
            Register::Mixed { dim, data } => {
                let d = *dim;
                let h = d / 2;
                let wc = w.conj();
                let mut out = vec![ZERO; h * h];
                for r in 0..h {
                    for c in 0..h {
                        let e = |a: usize, b: usize| data[(2 * r + a) * d + (2 * c + b)];
                        out[r * h + c] =
                            (e(0, 0) + w * e(1, 0) + wc * e(0, 1) + e(1, 1)) * 0.5;
                    }
                }
                let p = (0..h).map(|i| out[i * h + i].re).sum::<f64>().max(0.0);
                (Register::Mixed { dim: h, data: out }, p)
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        match self {
            Register::Pure(a) => {
                let s = factor.sqrt();
                a.iter_mut().for_each(|x| *x *= s);
            }
            Register::Mixed { data, .. } => data.iter_mut().for_each(|x| *x *= factor),
        }
    }
}

/// States that support single-shot X–Y-plane measurements and parity correlators.
pub trait Measurable {
    fn num_qubits(&self) -> usize;
    fn register(&self) -> Register;
    fn parity_correlator(&self, angles: &[f64]) -> Result<f64>;
}

impl Measurable for PureState {
    fn num_qubits(&self) -> usize {
        self.n
    }
    fn register(&self) -> Register {
        Register::Pure(self.amps.clone())
    }
    fn parity_correlator(&self, angles: &[f64]) -> Result<f64> {
        PureState::parity_correlator(self, angles)
    }
}

impl Measurable for DensityMatrix {
    fn num_qubits(&self) -> usize {
        self.n
    }
    fn register(&self) -> Register {
        // Row-major copy.
        let d = self.dim();
        let mut data = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                data.push(self.data[(r, c)]);
            }
        }
        Register::Mixed { dim: d, data }
    }
    fn parity_correlator(&self, angles: &[f64]) -> Result<f64> {
        DensityMatrix::parity_correlator(self, angles)
    }
}

/// Measures every qubit `j` in the basis at angle `angles[j]` (any real radians),
/// sequentially from qubit 0 upward.
pub fn sample_xy_plane<S: Measurable + ?Sized, R: Rng + ?Sized>(
    state: &S,
    angles: &[f64],
    rng: &mut R,
) -> Result<Vec<u8>> {
    check_arity(state.num_qubits(), angles.len())?;
    let mut reg = state.register();
    Ok(angles.iter().map(|&phi| reg.measure_lowest(phi, rng)).collect())
}

/// Born-rule single-shot outcomes `Y_j` for the Verifier's angles.
pub fn sample_outcomes<S: Measurable + ?Sized, R: Rng + ?Sized>(
    state: &S,
    angles: &[MeasurementAngle],
    rng: &mut R,
) -> Result<Vec<u8>> {
    sample_xy_plane(state, &radians(angles), rng)
}

/// `(Σθ_j)/π mod 2` when the sum is a multiple of π within `tol`.
pub fn sum_parity(angles: &[f64], tol: f64) -> Option<u8> {
    let s = angles.iter().sum::<f64>() / PI;
    let k = s.round();
    if (s - k).abs() * PI > tol {
        return None;
    }
    Some((k as i64).rem_euclid(2) as u8)
}

/// Exact probability that the parity test passes for one angle setting.
pub fn setting_pass_probability<S: Measurable + ?Sized>(
    rho: &S,
    angles: &[MeasurementAngle],
) -> Result<f64> {
    let rad = radians(angles);
    check_arity(rho.num_qubits(), rad.len())?;
    let parity = sum_parity(&rad, STATE_TOL).ok_or_else(|| {
        Error::InvalidAssignment("angle sum is not a multiple of π".into())
    })?;
    let sign = if parity == 0 { 1.0 } else { -1.0 };
    Ok(0.5 * (1.0 + sign * rho.parity_correlator(&rad)?))
}

/// Reduced state on `keep`; kept qubits are renumbered in ascending order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix> {
    let keep = normalize_keep(rho.n, keep)?;
    let traced: Vec<usize> = (0..rho.n).filter(|q| !keep.contains(q)).collect();
    let dk = 1 << keep.len();
    let dt = 1 << traced.len();
    let mut out = DMatrix::<C64>::zeros(dk, dk);
    for t in 0..dt {
        let tb = scatter(t, &traced);
        for r in 0..dk {
            let fr = scatter(r, &keep) | tb;
            for c in 0..dk {
                out[(r, c)] += rho.data[(fr, scatter(c, &keep) | tb)];
            }
        }
    }
    Ok(DensityMatrix {
        n: keep.len(),
        data: out,
    })
}

const SUPPORT_TOL: f64 = 1e-13;

/// Squared Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`, clamped to `[0, 1]`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.n != sigma.n {
        return Err(Error::Dimension {
            left: rho.n,
            right: sigma.n,
        });
    }
    // Work on the support of the lower-rank state; spectral noise near zero
    // would otherwise enter through square roots at the √ε scale.
    let (er, es) = (rho.data.clone().symmetric_eigen(), sigma.data.clone().symmetric_eigen());
    let rank = |e: &nalgebra::SymmetricEigen<C64, nalgebra::Dyn>| {
        e.eigenvalues.iter().filter(|&&l| l > SUPPORT_TOL).count()
    };
    let (eig, other) = if rank(&es) < rank(&er) { (&es, &rho.data) } else { (&er, &sigma.data) };
    let support: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > SUPPORT_TOL)
        .collect();
    let w = DMatrix::from_fn(eig.eigenvectors.nrows(), support.len(), |r, c| {
        eig.eigenvectors[(r, support[c])] * C64::new(eig.eigenvalues[support[c]].sqrt(), 0.0)
    });
    let mut m = w.adjoint() * other * &w;
    hermitize(&mut m);
    let root_sum: f64 = m
        .symmetric_eigenvalues()
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    Ok((root_sum * root_sum).clamp(0.0, 1.0))
}

pub fn apply_channel(rho: &DensityMatrix, spec: &ChannelSpec) -> Result<DensityMatrix> {
    spec.validate()?;
    let d = rho.dim();
    let mut data = rho.data.clone();
    match *spec {
        ChannelSpec::GhzDephasing { p } => {
            let f = C64::new(1.0 - p, 0.0);
            data[(0, d - 1)] *= f;
            data[(d - 1, 0)] *= f;
        }
        ChannelSpec::Depolarizing { v } => {
            data *= C64::new(v, 0.0);
            let add = C64::new((1.0 - v) / d as f64, 0.0);
            for i in 0..d {
                data[(i, i)] += add;
            }
        }
    }
    Ok(DensityMatrix { n: rho.n, data })
}
