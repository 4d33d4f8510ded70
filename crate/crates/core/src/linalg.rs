//! Dense complex linear algebra used throughout the crate.
//!
//! Matrices are `nalgebra` dense matrices over `Complex64`. Multipartite
//! operators follow a fixed slot order: slot 0 is the trusted party (Alice),
//! followed by the untrusted parties in index order, with any environment
//! factor last. Basis indices are mixed-radix with slot 0 most significant,
//! which is the ordering produced by [`kron`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Default numerical tolerance for invariant checks (max-norm).
pub const DEFAULT_TOL: f64 = 1e-9;

/// Tolerance used by the normalization invariants of states.
pub const STATE_TOL: f64 = 1e-10;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// `ω^k` with `ω = exp(2πi/d)`. Quarter turns are returned exactly.
pub fn omega_pow(d: usize, k: i64) -> C64 {
    let d_i = d as i64;
    let k = k.rem_euclid(d_i);
    if (4 * k) % d_i == 0 {
        return match (4 * k) / d_i {
            0 => ONE,
            1 => C64::new(0.0, 1.0),
            2 => C64::new(-1.0, 0.0),
            _ => C64::new(0.0, -1.0),
        };
    }
    C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / d as f64)
}

pub fn omega(d: usize) -> C64 {
    omega_pow(d, 1)
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    Ok(())
}

/// Clock matrix `diag(1, ω, …, ω^{d-1})`.
pub fn gen_pauli_z(d: usize) -> Result<CMatrix> {
    check_dim(d)?;
    Ok(CMatrix::from_diagonal(&CVector::from_fn(d, |k, _| omega_pow(d, k as i64))))
}

/// Shift matrix `Σ_i |i+1 mod d⟩⟨i|`.
pub fn gen_pauli_x(d: usize) -> Result<CMatrix> {
    check_dim(d)?;
    let mut x = CMatrix::zeros(d, d);
    for i in 0..d {
        x[((i + 1) % d, i)] = ONE;
    }
    Ok(x)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Largest absolute entry.
pub fn max_norm(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

pub fn unitarity_residual(u: &CMatrix) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    max_diff(&(u.adjoint() * u), &identity(u.nrows()))
}

pub fn hermiticity_residual(h: &CMatrix) -> f64 {
    if !h.is_square() {
        return f64::INFINITY;
    }
    max_diff(h, &h.adjoint())
}

pub fn is_unitary(u: &CMatrix, tol: f64) -> bool {
    unitarity_residual(u) <= tol
}

pub fn is_hermitian(h: &CMatrix, tol: f64) -> bool {
    hermiticity_residual(h) <= tol
}

fn require_square(m: &CMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

/// Kronecker product of the factors in slot order.
pub fn kron<'a, I>(factors: I) -> Result<CMatrix>
where
    I: IntoIterator<Item = &'a CMatrix>,
{
    let mut iter = factors.into_iter();
    let first = iter.next().ok_or(Error::Empty("kron needs at least one factor"))?;
    Ok(iter.fold(first.clone(), |acc, f| acc.kronecker(f)))
}

/// Integer power of a unitary. Negative powers use the adjoint.
pub fn mat_power(u: &CMatrix, k: i64) -> Result<CMatrix> {
    require_square(u)?;
    let res = unitarity_residual(u);
    if res > DEFAULT_TOL {
        return Err(Error::NotUnitary(res));
    }
    let base = if k < 0 { u.adjoint() } else { u.clone() };
    Ok(power_unchecked(&base, k.unsigned_abs()))
}

pub(crate) fn power_unchecked(base: &CMatrix, mut e: u64) -> CMatrix {
    let mut result = identity(base.nrows());
    let mut sq = base.clone();
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &sq;
        }
        e >>= 1;
        if e > 0 {
            sq = &sq * &sq;
        }
    }
    result
}

/// `O + O†`.
pub fn hermitize(o: &CMatrix) -> Result<CMatrix> {
    require_square(o)?;
    Ok(o + o.adjoint())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(h: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    require_square(h)?;
    let scale = max_norm(h).max(1.0);
    let res = hermiticity_residual(h);
    if res > DEFAULT_TOL * scale {
        return Err(Error::NotHermitian(res));
    }
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(h.nrows(), h.ncols());
    for (col, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        phase_normalize(&mut v);
        vectors.set_column(col, &v);
    }
    Ok((values, vectors))
}

pub fn max_eigenvalue(h: &CMatrix) -> Result<f64> {
    Ok(top_eigenpair(h)?.0)
}

/// Largest eigenvalue and a phase-normalized eigenvector for it.
pub fn top_eigenpair(h: &CMatrix) -> Result<(f64, CVector)> {
    let (vals, vecs) = hermitian_eigen(h)?;
    let last = vals.len() - 1;
    Ok((vals[last], vecs.column(last).into_owned()))
}

/// Rotates `v` so that its first non-negligible entry is real and positive.
pub fn phase_normalize(v: &mut CVector) {
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-12).copied() {
        let phase = z.conj() / z.norm();
        v.iter_mut().for_each(|x| *x *= phase);
    }
}

/// Unit-norm pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(CVector);

impl StateVector {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::Empty("state vector"));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("norm {norm} differs from 1")));
        }
        Ok(Self(amplitudes))
    }

    /// Normalizes the input; fails on the zero vector.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if amplitudes.is_empty() || norm < 1e-300 {
            return Err(Error::InvalidState("cannot normalize the zero vector".into()));
        }
        Ok(Self(amplitudes.unscale(norm)))
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::IndexOutOfRange { index, len: dim });
        }
        let mut v = CVector::zeros(dim);
        v[index] = ONE;
        Ok(Self(v))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.0
    }

    pub fn into_inner(self) -> CVector {
        self.0
    }

    pub fn inner(&self, other: &StateVector) -> C64 {
        self.0.dotc(&other.0)
    }

    pub fn tensor(&self, other: &StateVector) -> StateVector {
        StateVector(self.0.kronecker(&other.0))
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix(&self.0 * self.0.adjoint())
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    pub fn new(m: CMatrix) -> Result<Self> {
        require_square(&m)?;
        let herm = hermiticity_residual(&m);
        if herm > STATE_TOL {
            return Err(Error::NotHermitian(herm));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let (vals, _) = hermitian_eigen(&m)?;
        if vals[0] < -1e-8 {
            return Err(Error::InvalidState(format!("negative eigenvalue {}", vals[0])));
        }
        Ok(Self(m))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(identity(dim).unscale(dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    /// `Tr[ρ O]`.
    pub fn expectation(&self, o: &CMatrix) -> Result<C64> {
        if o.shape() != self.0.shape() {
            return Err(Error::DimensionMismatch(format!(
                "operator {:?} vs state dimension {}",
                o.shape(),
                self.dim()
            )));
        }
        Ok(self.0.iter().zip(o.transpose().iter()).map(|(a, b)| a * b).sum())
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }
}

fn check_dims(dims: &[usize], total: usize) -> Result<()> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::DimensionMismatch(format!("invalid subsystem dimensions {dims:?}")));
    }
    let prod: usize = dims.iter().product();
    if prod != total {
        return Err(Error::DimensionMismatch(format!(
            "subsystem dimensions {dims:?} multiply to {prod}, expected {total}"
        )));
    }
    Ok(())
}

fn normalize_keep(keep: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut k = keep.to_vec();
    k.sort_unstable();
    k.dedup();
    if k.is_empty() {
        return Err(Error::Empty("partial trace needs at least one kept subsystem"));
    }
    if let Some(&bad) = k.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    Ok(k)
}

/// For every full basis index, its (kept, traced) coordinates.
fn split_indices(dims: &[usize], keep: &[usize]) -> (usize, usize, Vec<(usize, usize)>) {
    let total: usize = dims.iter().product();
    let kept_dim: usize = keep.iter().map(|&i| dims[i]).product();
    let traced_dim = total / kept_dim;
    let mut out = Vec::with_capacity(total);
    let mut digits = vec![0usize; dims.len()];
    for _ in 0..total {
        let (mut ki, mut ti) = (0, 0);
        for (slot, &dig) in digits.iter().enumerate() {
            if keep.binary_search(&slot).is_ok() {
                ki = ki * dims[slot] + dig;
            } else {
                ti = ti * dims[slot] + dig;
            }
        }
        out.push((ki, ti));
        for slot in (0..dims.len()).rev() {
            digits[slot] += 1;
            if digits[slot] < dims[slot] {
                break;
            }
            digits[slot] = 0;
        }
    }
    (kept_dim, traced_dim, out)
}

/// Reduced density matrix on the kept subsystems (in ascending slot order).
pub fn partial_trace(rho: &DensityMatrix, dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    check_dims(dims, rho.dim())?;
    let keep = normalize_keep(keep, dims.len())?;
    let (kd, td, split) = split_indices(dims, &keep);
    let mut full = vec![vec![0usize; td]; kd];
    for (idx, &(k, t)) in split.iter().enumerate() {
        full[k][t] = idx;
    }
    let m = rho.matrix();
    let red = CMatrix::from_fn(kd, kd, |a, b| (0..td).map(|t| m[(full[a][t], full[b][t])]).sum());
    Ok(DensityMatrix(red))
}

/// Reduced density matrix of a pure state on the kept subsystems.
pub fn reduced_density(psi: &StateVector, dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    check_dims(dims, psi.dim())?;
    let keep = normalize_keep(keep, dims.len())?;
    let (kd, td, split) = split_indices(dims, &keep);
    let mut m = CMatrix::zeros(kd, td);
    for (idx, &(k, t)) in split.iter().enumerate() {
        m[(k, t)] = psi.0[idx];
    }
    Ok(DensityMatrix(&m * m.adjoint()))
}

/// `⟨ψ|ρ|ψ⟩`, clamped to [0, 1].
pub fn fidelity(rho: &DensityMatrix, psi: &StateVector) -> Result<f64> {
    if rho.dim() != psi.dim() {
        return Err(Error::DimensionMismatch(format!(
            "state dimension {} vs density dimension {}",
            psi.dim(),
            rho.dim()
        )));
    }
    let v = psi.amplitudes();
    let f = v.dotc(&(rho.matrix() * v)).re;
    Ok(f.clamp(0.0, 1.0))
}

/// Applies `op` to subsystem `slot` of a vector laid out as `dims`.
pub fn apply_local(v: &CVector, dims: &[usize], slot: usize, op: &CMatrix) -> Result<CVector> {
    check_dims(dims, v.len())?;
    if slot >= dims.len() {
        return Err(Error::IndexOutOfRange { index: slot, len: dims.len() });
    }
    let n = dims[slot];
    if op.nrows() != n || op.ncols() != n {
        return Err(Error::DimensionMismatch(format!("operator {:?} on subsystem of dimension {n}", op.shape())));
    }
    Ok(apply_local_unchecked(v, dims, slot, op))
}

pub(crate) fn apply_local_unchecked(v: &CVector, dims: &[usize], slot: usize, op: &CMatrix) -> CVector {
    let n = dims[slot];
    let right: usize = dims[slot + 1..].iter().product();
    let left: usize = dims[..slot].iter().product();
    let mut out = CVector::zeros(v.len());
    let mut buf = vec![ZERO; n];
    for l in 0..left {
        let base = l * n * right;
        for r in 0..right {
            for (j, b) in buf.iter_mut().enumerate() {
                *b = v[base + j * right + r];
            }
            for i in 0..n {
                let mut acc = ZERO;
                for (j, b) in buf.iter().enumerate() {
                    acc += op[(i, j)] * b;
                }
                out[base + i * right + r] = acc;
            }
        }
    }
    out
}

/// Purification `Σ_i √λ_i |v_i⟩ ⊗ |i⟩` over the support of `ρ`. The
/// ancilla is the trailing factor, of dimension equal to the rank.
pub fn purify(rho: &DensityMatrix) -> Result<(StateVector, usize)> {
    let (vals, vecs) = hermitian_eigen(rho.matrix())?;
    let support: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-12).collect();
    let rank = support.len();
    let dim = rho.dim();
    let mut psi = CVector::zeros(dim * rank);
    for (k, &i) in support.iter().enumerate() {
        let amp = vals[i].sqrt();
        for r in 0..dim {
            psi[r * rank + k] = vecs[(r, i)] * amp;
        }
    }
    Ok((StateVector::normalized(psi)?, rank))
}

/// Haar-random unitary (QR of a complex Ginibre matrix with phase fix).
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

/// Haar-random pure state.
pub fn random_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> StateVector {
    let v = CVector::from_fn(n, |_, _| {
        C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
    });
    StateVector::normalized(v).expect("gaussian vector is nonzero")
}

/// Random density matrix of the given rank (partial trace of a random pure state).
pub fn random_density<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> DensityMatrix {
    let psi = random_state(n * rank, rng);
    reduced_density(&psi, &[n, rank], &[0]).expect("valid layout")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn clock_and_shift_small_dims() {
        let z2 = gen_pauli_z(2).unwrap();
        assert_eq!(z2, CMatrix::from_diagonal(&CVector::from_vec(vec![ONE, c(-1.0, 0.0)])));
        let x2 = gen_pauli_x(2).unwrap();
        assert_eq!(x2, CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]));

        let z3 = gen_pauli_z(3).unwrap();
        let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
        assert!((z3[(1, 1)] - w).norm() < 1e-15);
        assert!((z3[(2, 2)] - w * w).norm() < 1e-15);
        let x3 = gen_pauli_x(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == (j + 1) % 3 { ONE } else { ZERO };
                assert_eq!(x3[(i, j)], expected);
            }
        }
        assert!(matches!(gen_pauli_z(1), Err(Error::InvalidDimension(1))));
        assert!(matches!(gen_pauli_x(0), Err(Error::InvalidDimension(0))));
    }

    #[test]
    fn weyl_relation_and_order() {
        for d in 2..=6 {
            let z = gen_pauli_z(d).unwrap();
            let x = gen_pauli_x(d).unwrap();
            assert!(max_diff(&(&z * &x), &(&x * &z * omega(d))) <= 1e-12, "d={d}");
            assert!(max_diff(&mat_power(&z, d as i64).unwrap(), &identity(d)) <= 1e-12);
            assert!(max_diff(&mat_power(&x, d as i64).unwrap(), &identity(d)) <= 1e-12);
            assert!(is_unitary(&z, 1e-12) && is_unitary(&x, 1e-12));
        }
    }

    #[test]
    fn kron_examples() {
        let i2 = identity(2);
        assert_eq!(kron([&i2, &i2]).unwrap(), identity(4));
        let z = gen_pauli_z(2).unwrap();
        let x = gen_pauli_x(2).unwrap();
        let op = kron([&z, &x]).unwrap();
        let ket00 = StateVector::basis(4, 0).unwrap();
        let out = &op * ket00.amplitudes();
        assert_eq!(out, StateVector::basis(4, 1).unwrap().into_inner());
        assert!(kron(std::iter::empty::<&CMatrix>()).is_err());
    }

    #[test]
    fn kron_associative_against_entrywise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = haar_unitary(2, &mut rng);
        let b = haar_unitary(2, &mut rng);
        let cm = haar_unitary(2, &mut rng);
        let nested = kron([&a, &kron([&b, &cm]).unwrap()]).unwrap();
        let flat = kron([&a, &b, &cm]).unwrap();
        // entrywise definition: (A⊗B⊗C)[(i1 i2 i3),(j1 j2 j3)] = A[i1,j1] B[i2,j2] C[i3,j3]
        let oracle =
            CMatrix::from_fn(8, 8, |r, s| a[(r / 4, s / 4)] * b[((r / 2) % 2, (s / 2) % 2)] * cm[(r % 2, s % 2)]);
        assert!(max_diff(&nested, &oracle) < 1e-14);
        assert!(max_diff(&flat, &oracle) < 1e-14);
    }

    #[test]
    fn power_examples() {
        let z3 = gen_pauli_z(3).unwrap();
        assert!(max_diff(&mat_power(&z3, 3).unwrap(), &identity(3)) < 1e-14);
        let x2 = gen_pauli_x(2).unwrap();
        assert!(max_diff(&mat_power(&x2, -1).unwrap(), &x2) < 1e-15);
        let z4 = gen_pauli_z(4).unwrap();
        let sq = &z4 * &z4;
        assert!(max_diff(&mat_power(&z4, 2).unwrap(), &sq) < 1e-15);
        let expected = CMatrix::from_diagonal(&CVector::from_vec(vec![ONE, -ONE, ONE, -ONE]));
        assert!(max_diff(&mat_power(&z4, 2).unwrap(), &expected) < 1e-15);
        assert_eq!(mat_power(&z4, 0).unwrap(), identity(4));
        let bad = CMatrix::from_element(2, 2, ONE);
        assert!(matches!(mat_power(&bad, 2), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn hermitize_examples() {
        let z2 = gen_pauli_z(2).unwrap();
        assert_eq!(hermitize(&z2).unwrap(), &z2 * c(2.0, 0.0));
        let z3 = gen_pauli_z(3).unwrap();
        let h = hermitize(&z3).unwrap();
        let cos = (2.0 * std::f64::consts::PI / 3.0).cos();
        let expected =
            CMatrix::from_diagonal(&CVector::from_vec(vec![c(2.0, 0.0), c(2.0 * cos, 0.0), c(2.0 * cos, 0.0)]));
        assert!(max_diff(&h, &expected) < 1e-14);
        let xz = &gen_pauli_x(2).unwrap() * &z2;
        // XZ is anti-Hermitian for qubits, so XZ + (XZ)† vanishes
        let hx = hermitize(&xz).unwrap();
        assert!(max_norm(&hx) < 1e-15);
        assert!(is_hermitian(&hx, 1e-12));
        assert!(hermitize(&CMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn max_eigenvalue_examples() {
        let z = gen_pauli_z(2).unwrap();
        let x = gen_pauli_x(2).unwrap();
        assert!((max_eigenvalue(&z).unwrap() - 1.0).abs() < 1e-12);
        assert!((max_eigenvalue(&(&z + &x)).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let not_h = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(matches!(max_eigenvalue(&not_h), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn partial_trace_examples() {
        let bell = StateVector::normalized(CVector::from_vec(vec![ONE, ZERO, ZERO, ONE])).unwrap();
        let rho = bell.to_density();
        for keep in [[0], [1]] {
            let red = partial_trace(&rho, &[2, 2], &keep).unwrap();
            assert!(max_diff(red.matrix(), &identity(2).unscale(2.0)) < 1e-15);
        }
        let same = partial_trace(&rho, &[2, 2], &[0, 1]).unwrap();
        assert_eq!(same.matrix(), rho.matrix());
        assert!(partial_trace(&rho, &[2, 3], &[0]).is_err());
        assert!(partial_trace(&rho, &[2, 2], &[]).is_err());

        // W3 with equal weights: party 1 is excited in one of the three branches
        let s = 1.0 / 3f64.sqrt();
        let mut w = CVector::zeros(8);
        w[4] = c(s, 0.0);
        w[2] = c(s, 0.0);
        w[1] = c(s, 0.0);
        let w = StateVector::new(w).unwrap();
        let red = reduced_density(&w, &[2, 2, 2], &[1]).unwrap();
        let expected = CMatrix::from_diagonal(&CVector::from_vec(vec![c(2.0 / 3.0, 0.0), c(1.0 / 3.0, 0.0)]));
        assert!(max_diff(red.matrix(), &expected) < 1e-15);
    }

    #[test]
    fn fidelity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = random_state(5, &mut rng);
        assert!((fidelity(&psi.to_density(), &psi).unwrap() - 1.0).abs() < 1e-12);
        let mixed = DensityMatrix::maximally_mixed(5);
        assert!((fidelity(&mixed, &psi).unwrap() - 0.2).abs() < 1e-12);
        let v = 0.37;
        let m = psi.to_density().into_inner() * c(v, 0.0) + mixed.matrix() * c(1.0 - v, 0.0);
        let noisy = DensityMatrix::new(m).unwrap();
        assert!((fidelity(&noisy, &psi).unwrap() - (v + (1.0 - v) / 5.0)).abs() < 1e-12);
        assert!(fidelity(&noisy, &random_state(4, &mut rng)).is_err());
    }

    #[test]
    fn apply_local_matches_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dims = [2, 3, 2];
        let psi = random_state(12, &mut rng);
        let u = haar_unitary(3, &mut rng);
        let full = kron([&identity(2), &u, &identity(2)]).unwrap();
        let direct = &full * psi.amplitudes();
        let local = apply_local(psi.amplitudes(), &dims, 1, &u).unwrap();
        assert!((direct - local).norm() < 1e-13);
    }

    #[test]
    fn purification_reproduces_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let rho = random_density(6, 2, &mut rng);
        let (psi, rank) = purify(&rho).unwrap();
        assert_eq!(rank, 2);
        let back = reduced_density(&psi, &[6, rank], &[0]).unwrap();
        assert!(max_diff(back.matrix(), rho.matrix()) < 1e-12);
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(identity(2)).is_err());
        let nonpos = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.5, 0.0), c(-0.5, 0.0)]));
        assert!(DensityMatrix::new(nonpos).is_err());
        assert!(StateVector::new(CVector::from_vec(vec![ONE, ONE])).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn partial_trace_composes(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dims = [2, 3, 2];
            let rho = random_density(12, 3, &mut rng);
            let joint = partial_trace(&rho, &dims, &[1]).unwrap();
            let step = partial_trace(&rho, &dims, &[0, 1]).unwrap();
            let step = partial_trace(&step, &[2, 3], &[1]).unwrap();
            prop_assert!(max_diff(joint.matrix(), step.matrix()) <= 1e-12);
        }

        #[test]
        fn max_eigenvalue_dominates_rayleigh_quotients(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = CMatrix::from_fn(4, 4, |_, _| { let re: f64 = rng.random(); let im: f64 = rng.random(); C64::new(re - 0.5, im - 0.5) });
            let h = hermitize(&a).unwrap();
            let top = max_eigenvalue(&h).unwrap();
            for _ in 0..100 {
                let v = random_state(4, &mut rng);
                let q = v.amplitudes().dotc(&(&h * v.amplitudes())).re;
                prop_assert!(top >= q - 1e-12);
            }
        }

        #[test]
        fn kron_of_unitaries_is_unitary(seed in any::<u64>(), n1 in 1usize..4, n2 in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = haar_unitary(n1, &mut rng);
            let b = haar_unitary(n2, &mut rng);
            let k = kron([&a, &b]).unwrap();
            prop_assert_eq!(k.nrows(), n1 * n2);
            prop_assert!(is_unitary(&k, 1e-12));
        }
    }
}
