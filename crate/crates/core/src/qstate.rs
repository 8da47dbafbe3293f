//! Dense complex linear algebra for states, unitaries and channels.
//!
//! Qubit 0 is the leftmost tensor factor, so it owns the most significant bit
//! of a basis-state index. All matrices are dense; the largest register used
//! anywhere is five qubits (dimension 32).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;

pub const HERMITIAN_TOL: f64 = 1e-9;
pub const TRACE_TOL: f64 = 1e-9;
pub const PSD_TOL: f64 = -1e-8;
pub const PHASE_TOL: f64 = 1e-8;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Largest absolute entry of a matrix.
pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn identity(dim: usize) -> ComplexMatrix {
    ComplexMatrix::identity(dim, dim)
}

/// Kronecker product `a ⊗ b`.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Kronecker product of a list of factors, left to right.
pub fn tensor_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    factors
        .into_iter()
        .fold(identity(1), |acc, f| acc.kronecker(f))
}

pub fn pauli_i() -> ComplexMatrix {
    identity(2)
}

pub fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn pauli_z() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

/// Single-qubit Pauli by index: 0 = I, 1 = X, 2 = Y, 3 = Z.
pub fn pauli(index: usize) -> ComplexMatrix {
    match index {
        0 => pauli_i(),
        1 => pauli_x(),
        2 => pauli_y(),
        3 => pauli_z(),
        _ => panic!("pauli index {index} out of range"),
    }
}

/// Pauli string from base-4 digits, qubit 0 first.
pub fn pauli_string(digits: &[usize]) -> ComplexMatrix {
    let factors: Vec<ComplexMatrix> = digits.iter().map(|&d| pauli(d)).collect();
    tensor_all(factors.iter())
}

/// Decode a Pauli-string index (base 4, qubit 0 most significant) into digits.
pub fn pauli_digits(mut index: usize, n_qubits: usize) -> Vec<usize> {
    let mut digits = vec![0; n_qubits];
    for q in (0..n_qubits).rev() {
        digits[q] = index % 4;
        index /= 4;
    }
    digits
}

pub fn pauli_label(digits: &[usize]) -> String {
    digits.iter().map(|&d| ['I', 'X', 'Y', 'Z'][d]).collect()
}

/// Normalized state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: DVector<C64>,
}

impl PureState {
    pub fn new(amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("state norm {norm} is not 1")));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes the given vector.
    pub fn normalized(amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            amplitudes: amplitudes / c(norm, 0.0),
        })
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[index] = c(1.0, 0.0);
        Self { amplitudes: v }
    }

    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn ground(n_qubits: usize) -> Self {
        Self::basis(1 << n_qubits, 0)
    }

    /// `(|0…0⟩ + |1…1⟩)/√2`.
    pub fn ghz(n_qubits: usize) -> Self {
        let dim = 1 << n_qubits;
        let mut v = DVector::zeros(dim);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        v[0] = c(h, 0.0);
        v[dim - 1] = c(h, 0.0);
        Self { amplitudes: v }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(&self.amplitudes * self.amplitudes.adjoint())
    }
}

/// Hermitian, unit-trace, positive semidefinite operator.
///
/// Serializes as row-major `re` and `im` arrays; deserialization validates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SplitMatrix", try_from = "SplitMatrix")]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

#[derive(Serialize, Deserialize)]
struct SplitMatrix {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl From<DensityMatrix> for SplitMatrix {
    fn from(rho: DensityMatrix) -> Self {
        let m = &rho.matrix;
        let rows = |f: fn(&C64) -> f64| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect()).collect();
        Self {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }
}

impl TryFrom<SplitMatrix> for DensityMatrix {
    type Error = Error;

    fn try_from(s: SplitMatrix) -> Result<Self> {
        let d = s.re.len();
        if s.im.len() != d || s.re.iter().chain(&s.im).any(|r| r.len() != d) {
            return Err(Error::InvalidState("density matrix must be square with matching re/im parts".into()));
        }
        DensityMatrix::new(DMatrix::from_fn(d, d, |i, j| c(s.re[i][j], s.im[i][j])))
    }
}

impl DensityMatrix {
    /// Validates all density-matrix invariants.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        validate_density(&matrix)?;
        Ok(Self { matrix })
    }

    /// Wraps a matrix produced by a physical map; invariants hold by
    /// construction and are checked only in debug builds of tests.
    pub fn from_matrix_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn ground(n_qubits: usize) -> Self {
        PureState::ground(n_qubits).to_density()
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            matrix: identity(dim) / c(dim as f64, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.matrix)
    }

    pub fn validate(&self) -> Result<()> {
        validate_density(&self.matrix)
    }

    /// Expectation value `Tr(ρ O)`.
    pub fn expectation(&self, op: &ComplexMatrix) -> C64 {
        let mut acc = c(0.0, 0.0);
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                acc += self.matrix[(i, j)] * op[(j, i)];
            }
        }
        acc
    }

    /// Population of a computational basis state.
    pub fn population(&self, index: usize) -> f64 {
        self.matrix[(index, index)].re
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.matrix[(i, i)].re).collect()
    }
}

fn validate_density(m: &ComplexMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidState("matrix is not square".into()));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidState("non-finite entry".into()));
    }
    let herm = max_abs(&(m - m.adjoint()));
    if herm > HERMITIAN_TOL {
        return Err(Error::InvalidState(format!("not Hermitian ({herm:.3e})")));
    }
    let tr = m.trace();
    if (tr - c(1.0, 0.0)).norm() > TRACE_TOL {
        return Err(Error::InvalidState(format!("trace {tr} is not 1")));
    }
    let min_eig = hermitian_eigenvalues(m).first().copied().unwrap_or(0.0);
    if min_eig < PSD_TOL {
        return Err(Error::InvalidState(format!(
            "negative eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(())
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &ComplexMatrix) -> Vec<f64> {
    let sym = (m + m.adjoint()) * c(0.5, 0.0);
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Eigen-decomposition of a Hermitian matrix: (ascending eigenvalues, eigenvector columns).
pub fn hermitian_eigen(m: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let sym = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = ComplexMatrix::from_fn(m.nrows(), m.ncols(), |r, col| {
        eig.eigenvectors[(r, order[col])]
    });
    (values, vectors)
}

/// Trace distance `½‖a − b‖₁`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
    let diff = a.matrix() - b.matrix();
    0.5 * hermitian_eigenvalues(&diff).iter().map(|v| v.abs()).sum::<f64>()
}

/// Unitary operator.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryOp {
    matrix: ComplexMatrix,
}

impl UnitaryOp {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotUnitary(f64::INFINITY));
        }
        let dev = max_abs(&(matrix.adjoint() * &matrix - identity(matrix.nrows())));
        if dev > 1e-9 {
            return Err(Error::NotUnitary(dev));
        }
        Ok(Self { matrix })
    }

    pub fn from_matrix_unchecked(matrix: ComplexMatrix) -> Self {
        Self { matrix }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self {
            matrix: self.matrix.adjoint(),
        }
    }

    /// Operator applying `self` first and then `later`, i.e. `later · self`.
    pub fn then(&self, later: &UnitaryOp) -> Self {
        Self {
            matrix: &later.matrix * &self.matrix,
        }
    }
}

/// Reduced density matrix over the subsystems in `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize], dims: &[usize]) -> Result<DensityMatrix> {
    let total: usize = dims.iter().product();
    if total != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: total,
        });
    }
    let n = dims.len();
    if let Some(&bad) = keep.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidTarget {
            target: bad,
            n_qubits: n,
        });
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    let traced: Vec<usize> = (0..n).filter(|i| !keep_sorted.contains(i)).collect();
    let kept_dims: Vec<usize> = keep_sorted.iter().map(|&i| dims[i]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&i| dims[i]).collect();
    let kdim: usize = kept_dims.iter().product();
    let tdim: usize = traced_dims.iter().product();

    // Strides of each subsystem in the full index.
    let mut strides = vec![1usize; n];
    for i in (0..n.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let compose = |sub: &[usize], sub_dims: &[usize], mut idx: usize| -> usize {
        let mut full = 0;
        for k in (0..sub.len()).rev() {
            full += (idx % sub_dims[k]) * strides[sub[k]];
            idx /= sub_dims[k];
        }
        full
    };
    let kept_offsets: Vec<usize> = (0..kdim)
        .map(|i| compose(&keep_sorted, &kept_dims, i))
        .collect();
    let traced_offsets: Vec<usize> = (0..tdim)
        .map(|i| compose(&traced, &traced_dims, i))
        .collect();

    let m = rho.matrix();
    let out = ComplexMatrix::from_fn(kdim, kdim, |r, col| {
        traced_offsets
            .iter()
            .map(|&t| m[(kept_offsets[r] + t, kept_offsets[col] + t)])
            .sum()
    });
    Ok(DensityMatrix::from_matrix_unchecked(out))
}

/// `U ρ U†`.
pub fn apply_unitary(rho: &DensityMatrix, u: &UnitaryOp) -> Result<DensityMatrix> {
    if rho.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: u.dim(),
        });
    }
    let m = u.matrix() * rho.matrix() * u.matrix().adjoint();
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

/// Max-entry deviation of `Σ K†K` from the identity.
pub fn kraus_completeness_error(ks: &[ComplexMatrix]) -> f64 {
    let Some(first) = ks.first() else {
        return f64::INFINITY;
    };
    let d = first.ncols();
    let mut sum = ComplexMatrix::zeros(d, d);
    for k in ks {
        if k.ncols() != d {
            return f64::INFINITY;
        }
        sum += k.adjoint() * k;
    }
    max_abs(&(sum - identity(d)))
}

/// `Σ K ρ K†` for a trace-preserving Kraus set.
pub fn apply_kraus(rho: &DensityMatrix, ks: &[ComplexMatrix]) -> Result<DensityMatrix> {
    let dev = kraus_completeness_error(ks);
    if dev > 1e-9 {
        return Err(Error::NotTracePreserving(dev));
    }
    if ks[0].ncols() != rho.dim() || ks[0].nrows() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: ks[0].ncols(),
        });
    }
    let d = rho.dim();
    let mut out = ComplexMatrix::zeros(d, d);
    for k in ks {
        out += k * rho.matrix() * k.adjoint();
    }
    Ok(DensityMatrix::from_matrix_unchecked(out))
}

/// `⟨ψ|ρ|ψ⟩`.
pub fn fidelity_pure(psi: &PureState, rho: &DensityMatrix) -> Result<f64> {
    if psi.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: psi.dim(),
        });
    }
    let v = psi.amplitudes();
    let f = (v.adjoint() * rho.matrix() * v)[(0, 0)];
    Ok(f.re.clamp(0.0, 1.0))
}

/// `⟨0…0|ρ|0…0⟩`.
pub fn ground_population(rho: &DensityMatrix) -> f64 {
    rho.matrix()[(0, 0)].re
}

/// Equality up to a global phase, using the phase of the largest-magnitude entry of `u`.
pub fn phase_equal(u: &UnitaryOp, v: &UnitaryOp, tol: f64) -> bool {
    matrices_phase_equal(u.matrix(), v.matrix(), tol)
}

pub fn matrices_phase_equal(u: &ComplexMatrix, v: &ComplexMatrix, tol: f64) -> bool {
    if u.shape() != v.shape() {
        return false;
    }
    let (mut best, mut idx) = (0.0, 0);
    for (i, z) in u.iter().enumerate() {
        if z.norm() > best {
            best = z.norm();
            idx = i;
        }
    }
    let (a, b) = (u[idx], v[idx]);
    if b.norm() < 1e-12 {
        return best <= tol;
    }
    let phase = (a / b) / (a / b).norm();
    u.iter()
        .zip(v.iter())
        .all(|(x, y)| (x - phase * y).norm() <= tol)
}

/// Applies a local operator on `targets` from the left (`K · M`) in place.
///
/// `op` has dimension `2^targets.len()` with `targets[0]` as its most
/// significant qubit.
pub fn left_apply_local(m: &mut ComplexMatrix, op: &ComplexMatrix, targets: &[usize], n_qubits: usize) {
    let k = targets.len();
    let sub = 1usize << k;
    let d = m.nrows();
    let masks: Vec<usize> = targets.iter().map(|&t| 1 << (n_qubits - 1 - t)).collect();
    let full_mask: usize = masks.iter().sum();
    let offsets: Vec<usize> = (0..sub)
        .map(|s| {
            (0..k)
                .filter(|&b| s & (1 << (k - 1 - b)) != 0)
                .map(|b| masks[b])
                .sum()
        })
        .collect();
    let mut buf = vec![c(0.0, 0.0); sub];
    for col in 0..m.ncols() {
        for base in 0..d {
            if base & full_mask != 0 {
                continue;
            }
            for (s, &off) in offsets.iter().enumerate() {
                buf[s] = m[(base + off, col)];
            }
            for (r, &off) in offsets.iter().enumerate() {
                let mut acc = c(0.0, 0.0);
                for (s, &val) in buf.iter().enumerate() {
                    acc += op[(r, s)] * val;
                }
                m[(base + off, col)] = acc;
            }
        }
    }
}

/// Applies `M · K†` for a local `K` in place.
pub fn right_apply_local_adjoint(m: &mut ComplexMatrix, op: &ComplexMatrix, targets: &[usize], n_qubits: usize) {
    let k = targets.len();
    let sub = 1usize << k;
    let d = m.ncols();
    let masks: Vec<usize> = targets.iter().map(|&t| 1 << (n_qubits - 1 - t)).collect();
    let full_mask: usize = masks.iter().sum();
    let offsets: Vec<usize> = (0..sub)
        .map(|s| {
            (0..k)
                .filter(|&b| s & (1 << (k - 1 - b)) != 0)
                .map(|b| masks[b])
                .sum()
        })
        .collect();
    let mut buf = vec![c(0.0, 0.0); sub];
    for row in 0..m.nrows() {
        for base in 0..d {
            if base & full_mask != 0 {
                continue;
            }
            for (s, &off) in offsets.iter().enumerate() {
                buf[s] = m[(row, base + off)];
            }
            // (M K†)[row, r] = Σ_s M[row, s] conj(K[r, s])
            for (r, &off) in offsets.iter().enumerate() {
                let mut acc = c(0.0, 0.0);
                for (s, &val) in buf.iter().enumerate() {
                    acc += val * op[(r, s)].conj();
                }
                m[(row, base + off)] = acc;
            }
        }
    }
}

/// `K ρ K†` for a local operator, returned as a new matrix.
pub fn conjugate_local(rho: &ComplexMatrix, op: &ComplexMatrix, targets: &[usize], n_qubits: usize) -> ComplexMatrix {
    let mut out = rho.clone();
    left_apply_local(&mut out, op, targets, n_qubits);
    right_apply_local_adjoint(&mut out, op, targets, n_qubits);
    out
}

/// Applies a local Kraus set to the register in place.
pub fn apply_local_kraus(rho: &mut ComplexMatrix, ks: &[ComplexMatrix], targets: &[usize], n_qubits: usize) {
    if ks.len() == 1 {
        left_apply_local(rho, &ks[0], targets, n_qubits);
        right_apply_local_adjoint(rho, &ks[0], targets, n_qubits);
        return;
    }
    let mut acc = ComplexMatrix::zeros(rho.nrows(), rho.ncols());
    for k in ks {
        acc += conjugate_local(rho, k, targets, n_qubits);
    }
    *rho = acc;
}

/// Embeds a local operator acting on `targets` into the full register.
pub fn embed(op: &ComplexMatrix, targets: &[usize], n_qubits: usize) -> ComplexMatrix {
    let mut m = identity(1 << n_qubits);
    left_apply_local(&mut m, op, targets, n_qubits);
    m
}

/// Random state `AA†/Tr(AA†)` with `A` a `dim × rank` matrix of uniform
/// complex entries; rank 1 gives a pure state.
pub fn random_density(dim: usize, rank: usize, rng: &mut impl rand::Rng) -> DensityMatrix {
    let a = DMatrix::from_fn(dim, rank.max(1), |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let m = &a * a.adjoint();
    let t = m.trace();
    DensityMatrix::from_matrix_unchecked(m / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_matrix(rng: &mut impl Rng, d: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(d, d, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    pub(crate) fn random_density(rng: &mut impl Rng, d: usize) -> DensityMatrix {
        let a = random_matrix(rng, d);
        let m = &a * a.adjoint();
        let tr = m.trace();
        DensityMatrix::new(m / tr).unwrap()
    }

    pub(crate) fn random_unitary(rng: &mut impl Rng, d: usize) -> UnitaryOp {
        let a = random_matrix(rng, d);
        let qr = a.qr();
        UnitaryOp::new(qr.q()).unwrap()
    }

    fn random_channel(rng: &mut impl Rng, d: usize, n: usize) -> Vec<ComplexMatrix> {
        // Isometry columns split into Kraus blocks.
        let big = random_matrix(rng, d * n);
        let q = big.qr().q();
        (0..n)
            .map(|k| q.view((k * d, 0), (d, d)).into_owned())
            .collect()
    }

    #[test]
    fn tensor_identity_and_pauli() {
        assert_eq!(tensor(&identity(2), &identity(2)), identity(4));
        let xi = tensor(&pauli_x(), &identity(2));
        assert!(xi.iter().all(|z| z.im == 0.0 && (z.re == 0.0 || z.re == 1.0)));
        assert_eq!(xi[(0, 2)], c(1.0, 0.0));
    }

    #[test]
    fn tensor_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b, cm, d) = (
            random_matrix(&mut rng, 2),
            random_matrix(&mut rng, 2),
            random_matrix(&mut rng, 2),
            random_matrix(&mut rng, 2),
        );
        let lhs = tensor(&a, &b) * tensor(&cm, &d);
        let rhs = tensor(&(&a * &cm), &(&b * &d));
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn partial_trace_bell_is_mixed() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let bell = PureState::ghz(2).to_density();
        for keep in [0, 1] {
            let r = partial_trace(&bell, &[keep], &[2, 2]).unwrap();
            assert!(max_abs(&(r.matrix() - identity(2) * c(0.5, 0.0))) < 1e-12);
        }
        assert!(h > 0.0);
    }

    #[test]
    fn partial_trace_product_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_density(&mut rng, 2);
        let b = random_density(&mut rng, 3);
        let prod = DensityMatrix::new(tensor(a.matrix(), b.matrix())).unwrap();
        let r = partial_trace(&prod, &[0], &[2, 3]).unwrap();
        assert!(max_abs(&(r.matrix() - a.matrix())) < 1e-12);

        // Index-sum oracle on a random two-qubit state.
        let rho = random_density(&mut rng, 4);
        let m = rho.matrix();
        let r1 = partial_trace(&rho, &[1], &[2, 2]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = m[(i, j)] + m[(2 + i, 2 + j)];
                assert!((r1.matrix()[(i, j)] - expect).norm() < 1e-12);
            }
        }
        let r0 = partial_trace(&rho, &[0], &[2, 2]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expect = m[(2 * i, 2 * j)] + m[(2 * i + 1, 2 * j + 1)];
                assert!((r0.matrix()[(i, j)] - expect).norm() < 1e-12);
            }
        }
        let scalar = partial_trace(&rho, &[], &[2, 2]).unwrap();
        assert_abs_diff_eq!(scalar.matrix()[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert!(partial_trace(&rho, &[0], &[2, 3]).is_err());
    }

    #[test]
    fn unitary_application() {
        let g = DensityMatrix::ground(1);
        assert_eq!(apply_unitary(&g, &UnitaryOp::identity(2)).unwrap(), g);
        let x = UnitaryOp::new(pauli_x()).unwrap();
        let e = apply_unitary(&g, &x).unwrap();
        assert_abs_diff_eq!(e.population(1), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_density(&mut rng, 4);
        let u = random_unitary(&mut rng, 4);
        let out = apply_unitary(&rho, &u).unwrap();
        for (a, b) in rho.eigenvalues().iter().zip(out.eigenvalues()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
        assert!(apply_unitary(&rho, &x).is_err());
    }

    #[test]
    fn kraus_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_density(&mut rng, 2);
        assert!(max_abs(&(apply_kraus(&rho, &[identity(2)]).unwrap().matrix() - rho.matrix())) < 1e-15);
        let k0 = ComplexMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]);
        let k1 = ComplexMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]);
        let out = apply_kraus(&rho, &[k0.clone(), k1]).unwrap();
        assert!(max_abs(&(out.matrix() - DensityMatrix::ground(1).matrix())) < 1e-12);
        assert!(matches!(
            apply_kraus(&rho, &[k0]),
            Err(Error::NotTracePreserving(_))
        ));
    }

    #[test]
    fn fidelity_and_populations() {
        let ghz = PureState::ghz(3);
        assert_abs_diff_eq!(fidelity_pure(&ghz, &ghz.to_density()).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            fidelity_pure(&ghz, &DensityMatrix::maximally_mixed(8)).unwrap(),
            0.125,
            epsilon = 1e-12
        );
        let x = UnitaryOp::new(pauli_x()).unwrap();
        let flipped = apply_unitary(&DensityMatrix::ground(1), &x).unwrap();
        assert_abs_diff_eq!(fidelity_pure(&PureState::ground(1), &flipped).unwrap(), 0.0);
        assert_abs_diff_eq!(ground_population(&DensityMatrix::ground(3)), 1.0);
        assert_abs_diff_eq!(ground_population(&DensityMatrix::maximally_mixed(4)), 0.25);
        assert_abs_diff_eq!(ground_population(&flipped), 0.0);
    }

    #[test]
    fn phase_equality() {
        let ph = C64::from_polar(1.0, std::f64::consts::PI / 7.0);
        let i = UnitaryOp::identity(2);
        let pi = UnitaryOp::new(identity(2) * ph).unwrap();
        assert!(phase_equal(&i, &pi, PHASE_TOL));
        let x = UnitaryOp::new(pauli_x()).unwrap();
        let y = UnitaryOp::new(pauli_y()).unwrap();
        assert!(!phase_equal(&x, &y, PHASE_TOL));
    }

    #[test]
    fn local_application_matches_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rho = random_density(&mut rng, 8);
        let u = random_unitary(&mut rng, 4);
        let full = tensor(&identity(2), u.matrix());
        let expect = &full * rho.matrix() * full.adjoint();
        let got = conjugate_local(rho.matrix(), u.matrix(), &[1, 2], 3);
        assert!(max_abs(&(expect - got)) < 1e-12);

        // Reversed target order swaps the factor's qubits.
        let swap = ComplexMatrix::from_fn(4, 4, |r, col| {
            let sw = |i: usize| ((i & 1) << 1) | (i >> 1);
            if sw(r) == col { c(1., 0.) } else { c(0., 0.) }
        });
        let reordered = &swap * u.matrix() * &swap;
        let a = embed(u.matrix(), &[2, 0], 3);
        let b = embed(&reordered, &[0, 2], 3);
        assert!(max_abs(&(a - b)) < 1e-12);
    }

    proptest! {
        #[test]
        fn kraus_output_is_density(seed in 0u64..10_000, n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = random_density(&mut rng, 2);
            let ks = random_channel(&mut rng, 2, n);
            let out = apply_kraus(&rho, &ks).unwrap();
            prop_assert!(out.validate().is_ok());
        }

        #[test]
        fn fidelity_is_linear(seed in 0u64..10_000, a in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r1 = random_density(&mut rng, 4);
            let r2 = random_density(&mut rng, 4);
            let psi = PureState::normalized(DVector::from_fn(4, |_, _| c(rng.gen(), rng.gen()))).unwrap();
            let mix = DensityMatrix::new(r1.matrix() * c(a, 0.0) + r2.matrix() * c(1.0 - a, 0.0)).unwrap();
            let lhs = fidelity_pure(&psi, &mix).unwrap();
            let rhs = a * fidelity_pure(&psi, &r1).unwrap() + (1.0 - a) * fidelity_pure(&psi, &r2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn phase_equal_reflexive_symmetric(seed in 0u64..10_000, phi in 0.0f64..6.28) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_unitary(&mut rng, 2);
            let v = UnitaryOp::new(u.matrix() * C64::from_polar(1.0, phi)).unwrap();
            let w = random_unitary(&mut rng, 2);
            prop_assert!(phase_equal(&u, &u, PHASE_TOL));
            prop_assert_eq!(phase_equal(&u, &v, PHASE_TOL), phase_equal(&v, &u, PHASE_TOL));
            prop_assert_eq!(phase_equal(&u, &w, PHASE_TOL), phase_equal(&w, &u, PHASE_TOL));
        }
    }
}
