//! Noise channels and per-gate noisy evolution.
//!
//! Times are in ns, coherence times in µs, frequencies in MHz (cycles, not
//! angular). A phase accrued at `f` MHz over `t` ns is `2π·f·t·1e-3` rad.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix5, Vector5};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateset::{local_matrix_scaled, pair_key, GateDurations, GateKind, GateLabel};
use crate::qstate::{apply_local_kraus, c, left_apply_local, pauli_digits, pauli_string, right_apply_local_adjoint, ComplexMatrix, DensityMatrix};

/// MHz·ns → rad.
pub const MHZ_NS_TO_RAD: f64 = 2.0 * std::f64::consts::PI * 1e-3;

/// Per-qubit noise knobs. `None` disables a decoherence channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitNoise {
    pub t1_us: Option<f64>,
    pub tphi_white_us: Option<f64>,
    /// Standard deviation of the frozen per-shot detuning, MHz.
    pub sigma_quasistatic_mhz: f64,
    /// Depolarizing probability after each single-qubit gate.
    pub depolarizing_per_gate: f64,
    /// Fractional rotation-amplitude error.
    pub overrotation: f64,
    /// Depolarizing probability per 10 ns of explicit idle gate.
    pub idle_error_per_10ns: f64,
}

impl QubitNoise {
    pub fn noiseless() -> Self {
        Self {
            t1_us: None,
            tphi_white_us: None,
            sigma_quasistatic_mhz: 0.0,
            depolarizing_per_gate: 0.0,
            overrotation: 0.0,
            idle_error_per_10ns: 0.0,
        }
    }
}

/// Always-on ZZ interaction between two qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZzCoupling {
    pub a: usize,
    pub b: usize,
    pub rate_mhz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    pub qubits: Vec<QubitNoise>,
    /// Probability moved out of |11⟩ by each CZ.
    pub cz_leak: f64,
    /// Two-qubit depolarizing probability after each CZ.
    pub cz_depolarizing: f64,
    /// Per-pair overrides of `cz_depolarizing`, keyed "a-b" with a < b.
    #[serde(default)]
    pub cz_depolarizing_pairs: BTreeMap<String, f64>,
    #[serde(default)]
    pub zz: Vec<ZzCoupling>,
}

impl NoiseParams {
    pub fn noiseless(n_qubits: usize) -> Self {
        Self {
            qubits: vec![QubitNoise::noiseless(); n_qubits],
            cz_leak: 0.0,
            cz_depolarizing: 0.0,
            cz_depolarizing_pairs: BTreeMap::new(),
            zz: Vec::new(),
        }
    }

    pub fn cz_depolarizing_for(&self, a: usize, b: usize) -> f64 {
        self.cz_depolarizing_pairs
            .get(&pair_key(a, b))
            .copied()
            .unwrap_or(self.cz_depolarizing)
    }

    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    /// Restrict to the listed physical qubits, renumbered `0..len`.
    pub fn for_qubits(&self, physical: &[usize]) -> Result<Self> {
        let qubits = physical
            .iter()
            .map(|&p| {
                self.qubits.get(p).cloned().ok_or(Error::InvalidTarget {
                    target: p,
                    n_qubits: self.qubits.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pos = |p: usize| physical.iter().position(|&x| x == p);
        let zz = self
            .zz
            .iter()
            .filter_map(|z| {
                Some(ZzCoupling {
                    a: pos(z.a)?,
                    b: pos(z.b)?,
                    rate_mhz: z.rate_mhz,
                })
            })
            .collect();
        let mut cz_depolarizing_pairs = BTreeMap::new();
        for (i, &a) in physical.iter().enumerate() {
            for (j, &b) in physical.iter().enumerate().skip(i + 1) {
                if let Some(&p) = self.cz_depolarizing_pairs.get(&pair_key(a, b)) {
                    cz_depolarizing_pairs.insert(pair_key(i, j), p);
                }
            }
        }
        Ok(Self {
            qubits,
            cz_leak: self.cz_leak,
            cz_depolarizing: self.cz_depolarizing,
            cz_depolarizing_pairs,
            zz,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        for (i, q) in self.qubits.iter().enumerate() {
            let times_ok = q.t1_us.map_or(true, |t| t > 0.0) && q.tphi_white_us.map_or(true, |t| t > 0.0);
            if !times_ok {
                return Err(Error::InvalidParameter(format!("qubit {i}: coherence times must be > 0")));
            }
            if !prob(q.depolarizing_per_gate) || !prob(q.idle_error_per_10ns) {
                return Err(Error::InvalidParameter(format!("qubit {i}: probabilities must lie in [0, 1]")));
            }
            if q.sigma_quasistatic_mhz < 0.0 || !q.overrotation.is_finite() {
                return Err(Error::InvalidParameter(format!("qubit {i}: invalid quasi-static width or overrotation")));
            }
        }
        if !prob(self.cz_leak) || !prob(self.cz_depolarizing) || !self.cz_depolarizing_pairs.values().all(|&p| prob(p)) {
            return Err(Error::InvalidParameter("CZ probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// One frozen detuning per qubit for a shot, MHz.
    pub fn draw_detunings(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.qubits
            .iter()
            .map(|q| {
                if q.sigma_quasistatic_mhz > 0.0 {
                    Normal::new(0.0, q.sigma_quasistatic_mhz).unwrap().sample(rng)
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn has_quasistatic(&self) -> bool {
        self.qubits.iter().any(|q| q.sigma_quasistatic_mhz > 0.0)
    }
}

fn diag2(a: f64, b: f64) -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[c(a, 0.), c(0., 0.), c(0., 0.), c(b, 0.)])
}

/// Energy relaxation for `t` ns with `γ = 1 − exp(−t/T1)`.
pub fn amplitude_damping_kraus(t_ns: f64, t1_us: f64) -> Vec<ComplexMatrix> {
    let gamma = 1.0 - (-t_ns / (t1_us * 1e3)).exp();
    let k0 = diag2(1.0, (1.0 - gamma).sqrt());
    let k1 = ComplexMatrix::from_row_slice(2, 2, &[c(0., 0.), c(gamma.sqrt(), 0.), c(0., 0.), c(0., 0.)]);
    vec![k0, k1]
}

/// Pure dephasing with coherence factor `exp(−t/Tφ)`.
pub fn dephasing_kraus(t_ns: f64, tphi_us: f64) -> Vec<ComplexMatrix> {
    let lambda = (-t_ns / (tphi_us * 1e3)).exp();
    let k0 = diag2(((1.0 + lambda) / 2.0).sqrt(), ((1.0 + lambda) / 2.0).sqrt());
    let k1 = diag2(((1.0 - lambda) / 2.0).sqrt(), -((1.0 - lambda) / 2.0).sqrt());
    vec![k0, k1]
}

/// `ρ → (1 − p)ρ + p·I/dim` for `dim = 2^n`, as a Pauli Kraus set.
pub fn depolarizing_kraus(p: f64, dim: usize) -> Result<Vec<ComplexMatrix>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("depolarizing probability {p}")));
    }
    if !dim.is_power_of_two() || dim < 2 {
        return Err(Error::InvalidParameter(format!("depolarizing dimension {dim} is not 2^n")));
    }
    let n = dim.trailing_zeros() as usize;
    let d2 = (dim * dim) as f64;
    Ok((0..dim * dim)
        .map(|idx| {
            let w = if idx == 0 { 1.0 - p + p / d2 } else { p / d2 };
            pauli_string(&pauli_digits(idx, n)) * c(w.sqrt(), 0.0)
        })
        .collect())
}

/// Depolarizing applied directly to a register matrix on `targets`.
pub fn depolarize_local(rho: &mut ComplexMatrix, p: f64, targets: &[usize], n_qubits: usize) {
    if p <= 0.0 {
        return;
    }
    let ks = depolarizing_kraus(p.min(1.0), 1 << targets.len()).expect("valid depolarizing");
    apply_local_kraus(rho, &ks, targets, n_qubits);
}

/// `exp[−t/Tφ1 − (t/Tφ2)²]`.
pub fn ramsey_envelope(t_ns: f64, tphi1_us: f64, tphi2_us: f64) -> f64 {
    let t = t_ns * 1e-3;
    (-t / tphi1_us - (t / tphi2_us).powi(2)).exp()
}

/// Coupling between two transmons, MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingParams {
    pub g: f64,
    pub eta1: f64,
    pub eta2: f64,
    /// Frequency of qubit 2 minus qubit 1.
    pub delta: f64,
}

/// Dispersive ZZ rate `−2g²(η₁+η₂)/((Δ−η₁)(Δ+η₂))`, MHz.
pub fn zz_rate(cp: &CouplingParams) -> Result<f64> {
    let d1 = cp.delta - cp.eta1;
    let d2 = cp.delta + cp.eta2;
    if d1.abs() < 1e-6 || d2.abs() < 1e-6 {
        return Err(Error::Numerical(format!(
            "ZZ rate pole: Δ−η₁ = {d1}, Δ+η₂ = {d2}"
        )));
    }
    Ok(-2.0 * cp.g * cp.g * (cp.eta1 + cp.eta2) / (d1 * d2))
}

/// ZZ rate from exact diagonalization of two coupled three-level transmons,
/// with the same sign convention as [`zz_rate`]: `−(E11 − E10 − E01 + E00)`.
pub fn exact_zz_rate(cp: &CouplingParams, f1: f64) -> f64 {
    let f2 = f1 + cp.delta;
    let level = |n: usize, f: f64, eta: f64| n as f64 * f + eta * (n * n.saturating_sub(1)) as f64 / 2.0;
    let idx = |n1: usize, n2: usize| 3 * n1 + n2;
    let mut h = DMatrix::<f64>::zeros(9, 9);
    for n1 in 0..3 {
        for n2 in 0..3 {
            h[(idx(n1, n2), idx(n1, n2))] = level(n1, f1, cp.eta1) + level(n2, f2, cp.eta2);
            // g (a†b + ab†): |n1, n2⟩ → |n1+1, n2−1⟩
            if n1 < 2 && n2 > 0 {
                let amp = cp.g * ((n1 + 1) as f64).sqrt() * (n2 as f64).sqrt();
                h[(idx(n1 + 1, n2 - 1), idx(n1, n2))] = amp;
                h[(idx(n1, n2), idx(n1 + 1, n2 - 1))] = amp;
            }
        }
    }
    let eig = h.symmetric_eigen();
    let dressed = |bare: usize| {
        let mut best = (0usize, -1.0);
        for k in 0..9 {
            let w = eig.eigenvectors[(bare, k)].powi(2);
            if w > best.1 {
                best = (k, w);
            }
        }
        eig.eigenvalues[best.0]
    };
    let e00 = dressed(idx(0, 0));
    let e01 = dressed(idx(0, 1));
    let e10 = dressed(idx(1, 0));
    let e11 = dressed(idx(1, 1));
    -(e11 - e10 - e01 + e00)
}

/// Idle frequencies, nonlinearities and couplings of the five-qubit device, MHz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    pub frequencies: Vec<f64>,
    pub nonlinearities: Vec<f64>,
    /// Nearest-neighbour couplings, entry i couples qubits i and i+1.
    pub couplings: Vec<f64>,
    /// Typical next-nearest-neighbour coupling.
    pub nnn_coupling: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            frequencies: vec![5805.0, 5238.0, 5780.0, 5060.0, 5696.0],
            nonlinearities: vec![-217.0, -226.0, -214.0, -212.0, -223.0],
            couplings: vec![27.7, 30.8, 30.4, 30.9],
            nnn_coupling: 1.3,
        }
    }
}

/// One row of the device ZZ table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZzEntry {
    pub pair: String,
    pub coupling: CouplingParams,
    pub formula: f64,
    pub exact: f64,
    pub relative_error: f64,
}

impl DeviceParams {
    pub fn n_qubits(&self) -> usize {
        self.frequencies.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits();
        if n == 0 || self.nonlinearities.len() != n || self.couplings.len() + 1 != n {
            return Err(Error::InvalidParameter(format!(
                "device table needs n frequencies, n nonlinearities and n-1 couplings (got {}, {}, {})",
                n,
                self.nonlinearities.len(),
                self.couplings.len()
            )));
        }
        if self.frequencies.iter().chain(&self.nonlinearities).chain(&self.couplings).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("device parameters must be finite".into()));
        }
        Ok(())
    }

    /// Coupling between qubits `a < b`; next-nearest pairs use the typical value.
    pub fn coupling(&self, a: usize, b: usize) -> Result<CouplingParams> {
        let n = self.n_qubits();
        if a >= b || b >= n || b - a > 2 {
            return Err(Error::InvalidParameter(format!("no coupling between {a} and {b}")));
        }
        let g = if b - a == 1 { self.couplings[a] } else { self.nnn_coupling };
        Ok(CouplingParams {
            g,
            eta1: self.nonlinearities[a],
            eta2: self.nonlinearities[b],
            delta: self.frequencies[b] - self.frequencies[a],
        })
    }

    /// Formula versus exact diagonalization for every nearest and
    /// next-nearest pair at the idle point.
    pub fn zz_table(&self) -> Result<Vec<ZzEntry>> {
        self.validate()?;
        let n = self.n_qubits();
        let mut rows = Vec::new();
        for span in 1..=2 {
            for a in 0..n.saturating_sub(span) {
                let cp = self.coupling(a, a + span)?;
                let formula = zz_rate(&cp)?;
                let exact = exact_zz_rate(&cp, self.frequencies[a]);
                rows.push(ZzEntry {
                    pair: pair_key(a, a + span),
                    coupling: cp,
                    formula,
                    exact,
                    relative_error: (formula - exact).abs() / exact.abs(),
                });
            }
        }
        Ok(rows)
    }
}

/// Z-line crosstalk: `Φ_actual = M Φ_ideal`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZCrosstalkMatrix(pub Matrix5<f64>);

impl ZCrosstalkMatrix {
    pub fn new(m: Matrix5<f64>) -> Result<Self> {
        for i in 0..5 {
            for j in 0..5 {
                let v = m[(i, j)];
                if i == j && (v - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("crosstalk diagonal must be 1".into()));
                }
                if i != j && v.abs() >= 0.05 {
                    return Err(Error::InvalidParameter(format!("crosstalk entry ({i},{j}) = {v} is too large")));
                }
            }
        }
        Ok(Self(m))
    }

    /// Measured matrix of the five-qubit device.
    pub fn device() -> Self {
        #[rustfmt::skip]
        let m = Matrix5::new(
            1.000, -0.023, -0.014, -0.009, -0.006,
            0.019,  1.000, -0.022, -0.011, -0.007,
            0.017,  0.000,  1.000, -0.016, -0.009,
            0.016,  0.008, -0.015,  1.000, -0.014,
            0.013,  0.014, -0.016, -0.010,  1.000,
        );
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix5::identity())
    }

    pub fn apply(&self, fluxes: &Vector5<f64>) -> Vector5<f64> {
        self.0 * fluxes
    }
}

/// Compensated flux commands `M⁻¹ φ`.
pub fn correct_z_crosstalk(fluxes: &Vector5<f64>, m: &ZCrosstalkMatrix) -> Result<Vector5<f64>> {
    let lu = m.0.lu();
    if lu.determinant().abs() < 1e-12 {
        return Err(Error::Singular);
    }
    lu.solve(fluxes).ok_or(Error::Singular)
}

/// Decoherence of one qubit for `t` ns: T1, white dephasing and the frozen detuning phase.
pub fn apply_decoherence(rho: &mut ComplexMatrix, q: usize, t_ns: f64, noise: &NoiseParams, detunings: &[f64]) {
    if t_ns <= 0.0 {
        return;
    }
    let n = noise.n_qubits();
    let qn = &noise.qubits[q];
    if let Some(t1) = qn.t1_us {
        apply_local_kraus(rho, &amplitude_damping_kraus(t_ns, t1), &[q], n);
    }
    if let Some(tphi) = qn.tphi_white_us {
        apply_local_kraus(rho, &dephasing_kraus(t_ns, tphi), &[q], n);
    }
    let df = detunings.get(q).copied().unwrap_or(0.0);
    if df != 0.0 {
        let mut ph = ComplexMatrix::identity(2, 2);
        ph[(1, 1)] = c(0.0, -MHZ_NS_TO_RAD * df * t_ns).exp();
        left_apply_local(rho, &ph, &[q], n);
        right_apply_local_adjoint(rho, &ph, &[q], n);
    }
}

/// Deterministic ZZ phase `exp(−i2πΩt)` on |11⟩ of each coupled pair.
pub fn apply_zz(rho: &mut ComplexMatrix, t_ns: f64, noise: &NoiseParams) {
    let n = noise.n_qubits();
    for z in &noise.zz {
        if z.rate_mhz == 0.0 || t_ns <= 0.0 {
            continue;
        }
        let mut ph = ComplexMatrix::identity(4, 4);
        ph[(3, 3)] = c(0.0, -MHZ_NS_TO_RAD * z.rate_mhz * t_ns).exp();
        left_apply_local(rho, &ph, &[z.a, z.b], n);
        right_apply_local_adjoint(rho, &ph, &[z.a, z.b], n);
    }
}

/// Incoherent loss of |11⟩ weight `leak`, redistributed evenly onto |01⟩ and |10⟩.
pub fn cz_leak_kraus(leak: f64) -> Vec<ComplexMatrix> {
    let mut k0 = ComplexMatrix::identity(4, 4);
    k0[(3, 3)] = c((1.0 - leak).sqrt(), 0.0);
    let mut k1 = ComplexMatrix::zeros(4, 4);
    k1[(1, 3)] = c((leak / 2.0).sqrt(), 0.0);
    let mut k2 = ComplexMatrix::zeros(4, 4);
    k2[(2, 3)] = c((leak / 2.0).sqrt(), 0.0);
    vec![k0, k1, k2]
}

/// Ideal (over-rotated) unitary followed by the gate's error channels, in place.
pub fn apply_gate_noisy_in_place(
    rho: &mut ComplexMatrix,
    gate: &GateLabel,
    noise: &NoiseParams,
    durations: &GateDurations,
    detunings: &[f64],
) {
    let n = noise.n_qubits();
    let t = durations.duration(gate);
    let eps = noise.qubits[gate.targets[0]].overrotation;
    let u = local_matrix_scaled(gate.kind, if gate.kind == GateKind::CZ { 0.0 } else { eps });
    if gate.kind != GateKind::I {
        left_apply_local(rho, &u, &gate.targets, n);
        right_apply_local_adjoint(rho, &u, &gate.targets, n);
    }
    for &q in &gate.targets {
        apply_decoherence(rho, q, t, noise, detunings);
    }
    match gate.kind {
        GateKind::CZ => {
            if noise.cz_leak > 0.0 {
                apply_local_kraus(rho, &cz_leak_kraus(noise.cz_leak), &gate.targets, n);
            }
            depolarize_local(rho, noise.cz_depolarizing_for(gate.targets[0], gate.targets[1]), &gate.targets, n);
        }
        GateKind::I => {
            let qn = &noise.qubits[gate.targets[0]];
            depolarize_local(rho, qn.idle_error_per_10ns * t / 10.0, &gate.targets, n);
        }
        _ => {
            let qn = &noise.qubits[gate.targets[0]];
            depolarize_local(rho, qn.depolarizing_per_gate, &gate.targets, n);
        }
    }
}

pub fn apply_gate_noisy(
    rho: &DensityMatrix,
    gate: &GateLabel,
    noise: &NoiseParams,
    durations: &GateDurations,
    detunings: &[f64],
) -> Result<DensityMatrix> {
    let n = noise.n_qubits();
    gate.validate(n)?;
    if rho.dim() != 1 << n {
        return Err(Error::DimensionMismatch {
            expected: 1 << n,
            got: rho.dim(),
        });
    }
    let mut m = rho.matrix().clone();
    apply_gate_noisy_in_place(&mut m, gate, noise, durations, detunings);
    Ok(DensityMatrix::from_matrix_unchecked(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateset::gate_unitary;
    use crate::qstate::{apply_kraus, apply_unitary, ground_population, max_abs, PureState};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn excited() -> DensityMatrix {
        PureState::basis(2, 1).to_density()
    }

    fn plus() -> DensityMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        PureState::new(nalgebra::DVector::from_vec(vec![c(h, 0.), c(h, 0.)])).unwrap().to_density()
    }

    #[test]
    fn damping_examples() {
        let rho = plus();
        let id = apply_kraus(&rho, &amplitude_damping_kraus(0.0, 30.0)).unwrap();
        assert!(max_abs(&(id.matrix() - rho.matrix())) < 1e-15);
        let out = apply_kraus(&excited(), &amplitude_damping_kraus(1e9, 30.0)).unwrap();
        assert_abs_diff_eq!(out.population(0), 1.0, epsilon = 1e-12);
        let out = apply_kraus(&excited(), &amplitude_damping_kraus(30_000.0, 30.0)).unwrap();
        assert_abs_diff_eq!(out.population(1), (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn damping_composes() {
        let rho = plus();
        let a = apply_kraus(&apply_kraus(&rho, &amplitude_damping_kraus(100.0, 20.0)).unwrap(), &amplitude_damping_kraus(250.0, 20.0)).unwrap();
        let b = apply_kraus(&rho, &amplitude_damping_kraus(350.0, 20.0)).unwrap();
        assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-9);
    }

    #[test]
    fn dephasing_examples() {
        let rho = plus();
        let id = apply_kraus(&rho, &dephasing_kraus(0.0, 10.0)).unwrap();
        assert!(max_abs(&(id.matrix() - rho.matrix())) < 1e-15);
        let out = apply_kraus(&rho, &dephasing_kraus(10_000.0, 10.0)).unwrap();
        let x_exp = out.expectation(&crate::qstate::pauli_x()).re;
        assert_abs_diff_eq!(x_exp, (-1.0f64).exp(), epsilon = 1e-12);
        for t in [1.0, 50.0, 5e4] {
            let out = apply_kraus(&rho, &dephasing_kraus(t, 10.0)).unwrap();
            assert_abs_diff_eq!(out.population(0), 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn depolarizing_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = PureState::normalized(nalgebra::DVector::from_fn(4, |_, _| c(rng.gen(), rng.gen()))).unwrap().to_density();
        let id = apply_kraus(&rho, &depolarizing_kraus(0.0, 4).unwrap()).unwrap();
        assert!(max_abs(&(id.matrix() - rho.matrix())) < 1e-12);
        let full = apply_kraus(&rho, &depolarizing_kraus(1.0, 4).unwrap()).unwrap();
        assert!(max_abs(&(full.matrix() - DensityMatrix::maximally_mixed(4).matrix())) < 1e-12);
        let half = apply_kraus(&rho, &depolarizing_kraus(0.3, 4).unwrap()).unwrap();
        let expect = rho.matrix() * c(0.7, 0.) + DensityMatrix::maximally_mixed(4).matrix() * c(0.3, 0.);
        assert!(max_abs(&(half.matrix() - expect)) < 1e-12);
        assert!(depolarizing_kraus(1.5, 2).is_err());
    }

    #[test]
    fn ramsey_envelope_cases() {
        assert_eq!(ramsey_envelope(0.0, 5.0, 3.0), 1.0);
        assert_abs_diff_eq!(ramsey_envelope(2000.0, 4.0, 1e12), (-0.5f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(ramsey_envelope(3000.0, 3.0, 3.0), (-2.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn zz_rate_values() {
        let zero = CouplingParams { g: 30.0, eta1: -200.0, eta2: 200.0, delta: 700.0 };
        assert_eq!(zz_rate(&zero).unwrap(), 0.0);
        let nn = CouplingParams { g: 30.0, eta1: -214.0, eta2: -212.0, delta: 800.0 };
        // 2·900·426 / (1014·588)
        assert_abs_diff_eq!(zz_rate(&nn).unwrap(), 766_800.0 / 596_232.0, epsilon = 1e-12);
        let exact = exact_zz_rate(&nn, 5000.0);
        assert!((zz_rate(&nn).unwrap() - exact).abs() / exact.abs() < 0.10);

        let below = CouplingParams { g: 1.3, eta1: -220.0, eta2: -220.0, delta: 219.0 };
        let above = CouplingParams { delta: 221.0, ..below };
        let at = CouplingParams { delta: 220.0, ..below };
        assert!(zz_rate(&below).unwrap().signum() != zz_rate(&above).unwrap().signum());
        assert!(zz_rate(&at).is_err());
        let nnn = CouplingParams { delta: 300.0, ..below };
        assert!(zz_rate(&nnn).unwrap().abs() < 0.1);
    }

    #[test]
    fn zz_matches_exact_diagonalization_over_grid() {
        for g in [5.0, 15.0, 30.0] {
            for delta in [-1000.0, -600.0, -400.0, -300.0, 300.0, 400.0, 600.0, 1000.0] {
                let cp = CouplingParams { g, eta1: -214.0, eta2: -212.0, delta };
                // Second-order theory needs both intermediate detunings well above the coupling.
                if (delta - cp.eta1).abs().min((delta + cp.eta2).abs()) < 6.0 * g {
                    continue;
                }
                let approx = zz_rate(&cp).unwrap();
                let exact = exact_zz_rate(&cp, 5500.0);
                assert!((approx - exact).abs() / exact.abs() <= 0.10, "g={g} Δ={delta}: {approx} vs {exact}");
            }
        }
    }

    #[test]
    fn device_zz_table() {
        let rows = DeviceParams::default().zz_table().unwrap();
        assert_eq!(rows.len(), 7);
        for r in &rows {
            assert!(r.relative_error <= 0.10, "{}: {} vs {}", r.pair, r.formula, r.exact);
        }
        assert!(DeviceParams::default().coupling(0, 3).is_err());
    }

    #[test]
    fn crosstalk_correction() {
        let phi = Vector5::new(0.1, -0.2, 0.05, 0.3, -0.07);
        assert_eq!(correct_z_crosstalk(&phi, &ZCrosstalkMatrix::identity()).unwrap(), phi);
        let m = ZCrosstalkMatrix::device();
        ZCrosstalkMatrix::new(m.0).unwrap();
        let cmd = correct_z_crosstalk(&phi, &m).unwrap();
        let actual = m.apply(&cmd);
        assert!((actual - phi).amax() < 1e-12);
        let remnant = (actual - phi).amax() / phi.amax();
        assert!(remnant < 1e-4);
        assert!(ZCrosstalkMatrix::new(Matrix5::from_element(0.0)).is_err());
        assert!(matches!(correct_z_crosstalk(&phi, &ZCrosstalkMatrix(Matrix5::zeros())), Err(Error::Singular)));
    }

    #[test]
    fn noiseless_gate_equals_unitary() {
        let noise = NoiseParams::noiseless(2);
        let d = GateDurations::uniform(2, 20.0, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = PureState::normalized(nalgebra::DVector::from_fn(4, |_, _| c(rng.gen(), rng.gen()))).unwrap().to_density();
        for g in [GateLabel::single(GateKind::Y2, 1), GateLabel::cz(0, 1), GateLabel::single(GateKind::H, 0)] {
            let a = apply_gate_noisy(&rho, &g, &noise, &d, &[0.0, 0.0]).unwrap();
            let b = apply_unitary(&rho, &gate_unitary(&g, 2).unwrap()).unwrap();
            assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-12);
        }
    }

    #[test]
    fn idle_depolarizing_drop() {
        let mut noise = NoiseParams::noiseless(1);
        noise.qubits[0].idle_error_per_10ns = 0.0005;
        let d = GateDurations::uniform(1, 10.0, 40.0);
        let out = apply_gate_noisy(&DensityMatrix::ground(1), &GateLabel::single(GateKind::I, 0), &noise, &d, &[0.0]).unwrap();
        assert_abs_diff_eq!(1.0 - ground_population(&out), 0.00025, epsilon = 1e-15);
    }

    #[test]
    fn x_gate_with_t1() {
        let mut noise = NoiseParams::noiseless(1);
        noise.qubits[0].t1_us = Some(25.0);
        let d = GateDurations::uniform(1, 20.0, 40.0);
        let out = apply_gate_noisy(&DensityMatrix::ground(1), &GateLabel::single(GateKind::X, 0), &noise, &d, &[0.0]).unwrap();
        assert_abs_diff_eq!(out.population(1), (-20.0f64 / 25_000.0).exp(), epsilon = 1e-12);
    }

    #[test]
    fn cz_leak_channel() {
        let mut noise = NoiseParams::noiseless(2);
        noise.cz_leak = 0.01;
        let d = GateDurations::uniform(2, 20.0, 40.0);
        let rho = PureState::basis(4, 3).to_density();
        let out = apply_gate_noisy(&rho, &GateLabel::cz(0, 1), &noise, &d, &[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(out.population(3), 0.99, epsilon = 1e-12);
        assert_abs_diff_eq!(out.population(1), 0.005, epsilon = 1e-12);
        out.validate().unwrap();
    }

    #[test]
    fn zz_phase_on_11() {
        let mut noise = NoiseParams::noiseless(2);
        noise.zz.push(ZzCoupling { a: 0, b: 1, rate_mhz: 1.0 });
        let h = 0.5;
        let psi = PureState::new(nalgebra::DVector::from_element(4, c(h, 0.))).unwrap();
        let mut m = psi.to_density().into_matrix();
        apply_zz(&mut m, 250.0, &noise);
        // 2π·1 MHz·250 ns = π/2 on |11⟩
        let expected = c(0.0, -std::f64::consts::FRAC_PI_2).exp() * 0.25;
        assert!((m[(3, 0)] - expected).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn channels_preserve_invariants(t in 0.0f64..1e5, t1 in 1.0f64..100.0, tphi in 1.0f64..100.0, p in 0.0f64..1.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = nalgebra::DVector::from_fn(2, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let rho = PureState::normalized(v).unwrap().to_density();
            for ks in [amplitude_damping_kraus(t, t1), dephasing_kraus(t, tphi), depolarizing_kraus(p, 2).unwrap()] {
                prop_assert!(apply_kraus(&rho, &ks).unwrap().validate().is_ok());
            }
        }
    }
}
