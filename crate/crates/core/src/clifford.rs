//! Single- and two-qubit Clifford groups built from physical gates.
//!
//! Gate lists are time ordered left to right; the matching matrix product
//! runs right to left (`U = G_n ⋯ G_1`). Elements are keyed by the signed
//! Pauli images of the generators `X_q`, `Z_q` under conjugation, which
//! identifies a Clifford up to global phase.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateset::{sequence_unitary, GateKind, GateLabel};
use crate::qstate::{c, embed, pauli_string, pauli_digits, ComplexMatrix, UnitaryOp, C64};

/// Packed conjugation signature. Per generator: `2n` bits of Pauli digits
/// plus one sign bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CliffordKey(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CliffordClass {
    SingleQubit,
    CnotLike,
    IswapLike,
    SwapLike,
}

impl CliffordClass {
    pub const ALL: [CliffordClass; 4] = [
        CliffordClass::SingleQubit,
        CliffordClass::CnotLike,
        CliffordClass::IswapLike,
        CliffordClass::SwapLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CliffordClass::SingleQubit => "single_qubit",
            CliffordClass::CnotLike => "cnot_like",
            CliffordClass::IswapLike => "iswap_like",
            CliffordClass::SwapLike => "swap_like",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CliffordElement {
    pub gates: Vec<GateLabel>,
    pub unitary: UnitaryOp,
    pub key: CliffordKey,
    pub class: CliffordClass,
}

impl CliffordElement {
    pub fn from_gates(gates: Vec<GateLabel>, n_qubits: usize, class: CliffordClass) -> Result<Self> {
        let unitary = sequence_unitary(&gates, n_qubits)?;
        let key = clifford_key(&unitary, n_qubits)?;
        Ok(Self {
            gates,
            unitary,
            key,
            class,
        })
    }

    pub fn single_qubit_gate_count(&self) -> usize {
        self.gates.iter().filter(|g| g.kind != GateKind::CZ).count()
    }

    pub fn cz_count(&self) -> usize {
        self.gates.iter().filter(|g| g.kind == GateKind::CZ).count()
    }

    /// Copy of this element with every qubit index `q` replaced by `map[q]`.
    pub fn remapped(&self, map: &[usize]) -> Vec<GateLabel> {
        self.gates
            .iter()
            .map(|g| GateLabel {
                kind: g.kind,
                targets: g.targets.iter().map(|&t| map[t]).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct CliffordGroup {
    pub n_qubits: usize,
    pub elements: Vec<CliffordElement>,
    index: HashMap<CliffordKey, usize>,
}

impl CliffordGroup {
    fn from_elements(n_qubits: usize, elements: Vec<CliffordElement>) -> Result<Self> {
        let mut index = HashMap::with_capacity(elements.len());
        for (i, e) in elements.iter().enumerate() {
            if let Some(prev) = index.insert(e.key, i) {
                return Err(Error::GroupConstruction(format!(
                    "key collision between element {prev} ({}) and element {i} ({})",
                    describe(&elements[prev].gates),
                    describe(&e.gates)
                )));
            }
        }
        Ok(Self {
            n_qubits,
            elements,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn lookup(&self, key: CliffordKey) -> Option<usize> {
        self.index.get(&key).copied()
    }

    /// Index of the element phase-equal to `u`.
    pub fn find_unitary(&self, u: &UnitaryOp) -> Result<usize> {
        let key = clifford_key(u, self.n_qubits)?;
        self.lookup(key)
            .ok_or_else(|| Error::NotInGroup(format!("key {:#x}", key.0)))
    }

    pub fn identity_index(&self) -> Result<usize> {
        self.find_unitary(&UnitaryOp::identity(self.dim()))
    }

    pub fn inverse_index(&self, i: usize) -> Result<usize> {
        self.find_unitary(&self.elements[i].unitary.adjoint())
    }

    /// Index of the element performing `first` and then `second`.
    pub fn compose(&self, first: usize, second: usize) -> Result<usize> {
        let u = self.elements[first].unitary.then(&self.elements[second].unitary);
        self.find_unitary(&u)
    }

    pub fn class_count(&self, class: CliffordClass) -> usize {
        self.elements.iter().filter(|e| e.class == class).count()
    }

    pub fn mean_single_qubit_gates(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| e.single_qubit_gate_count())
            .sum::<usize>() as f64
            / self.len() as f64
    }

    pub fn mean_cz(&self) -> f64 {
        self.elements.iter().map(|e| e.cz_count()).sum::<usize>() as f64 / self.len() as f64
    }

    /// Total single-qubit gates and CZ gates in a class.
    pub fn class_gate_totals(&self, class: CliffordClass) -> (usize, usize) {
        self.elements
            .iter()
            .filter(|e| e.class == class)
            .fold((0, 0), |(sq, cz), e| {
                (sq + e.single_qubit_gate_count(), cz + e.cz_count())
            })
    }

    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        rng.gen_range(0..self.len())
    }
}

fn describe(gates: &[GateLabel]) -> String {
    gates
        .iter()
        .map(|g| g.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Signed Pauli decomposition of `m`, if it is `±` a single Pauli string.
fn as_signed_pauli(m: &ComplexMatrix, n_qubits: usize, tol: f64) -> Option<(usize, bool)> {
    let d = 1usize << n_qubits;
    let mut found = None;
    for idx in 0..(1usize << (2 * n_qubits)) {
        let p = pauli_string(&pauli_digits(idx, n_qubits));
        let mut tr = c(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                tr += p[(i, j)] * m[(j, i)];
            }
        }
        let coeff: C64 = tr / d as f64;
        if coeff.norm() > 0.5 {
            if found.is_some() || coeff.im.abs() > tol || (coeff.re.abs() - 1.0).abs() > tol {
                return None;
            }
            found = Some((idx, coeff.re < 0.0));
        } else if coeff.norm() > tol {
            return None;
        }
    }
    found
}

/// Conjugation signature of a Clifford unitary.
pub fn clifford_key(u: &UnitaryOp, n_qubits: usize) -> Result<CliffordKey> {
    let mut key = 0u64;
    let bits = 2 * n_qubits as u32 + 1;
    for q in 0..n_qubits {
        for gen in [1usize, 3] {
            let p = embed(&pauli_string(&[gen]), &[q], n_qubits);
            let img = u.matrix() * p * u.matrix().adjoint();
            let (idx, neg) = as_signed_pauli(&img, n_qubits, 1e-8)
                .ok_or_else(|| Error::NotInGroup("conjugation does not map Paulis to Paulis".into()))?;
            key = (key << bits) | ((idx as u64) << 1) | neg as u64;
        }
    }
    Ok(CliffordKey(key))
}

/// True when `U P U†` is a signed Pauli string for every nontrivial `P`.
pub fn maps_paulis_to_paulis(u: &UnitaryOp, n_qubits: usize) -> bool {
    (1..(1usize << (2 * n_qubits))).all(|idx| {
        let p = pauli_string(&pauli_digits(idx, n_qubits));
        let img = u.matrix() * p * u.matrix().adjoint();
        as_signed_pauli(&img, n_qubits, 1e-8).is_some()
    })
}

fn seq(q: usize, kinds: &[GateKind]) -> Vec<GateLabel> {
    kinds.iter().map(|&k| GateLabel::single(k, q)).collect()
}

/// Single-qubit Cliffords as physical gate lists in time order.
pub fn c1_decompositions() -> Vec<Vec<GateKind>> {
    use GateKind::*;
    vec![
        // Paulis
        vec![I],
        vec![X],
        vec![Y],
        vec![Y, X],
        // 2π/3 rotations
        vec![X2, Y2],
        vec![X2, MinusY2],
        vec![MinusX2, Y2],
        vec![MinusX2, MinusY2],
        vec![Y2, X2],
        vec![Y2, MinusX2],
        vec![MinusY2, X2],
        vec![MinusY2, MinusX2],
        // π/2 rotations
        vec![X2],
        vec![MinusX2],
        vec![Y2],
        vec![MinusY2],
        vec![MinusX2, Y2, X2],
        vec![MinusX2, MinusY2, X2],
        // Hadamard-like
        vec![X, Y2],
        vec![X, MinusY2],
        vec![Y, X2],
        vec![Y, MinusX2],
        vec![X2, Y2, X2],
        vec![MinusX2, Y2, MinusX2],
    ]
}

pub fn build_c1() -> Result<CliffordGroup> {
    let elements = c1_decompositions()
        .iter()
        .map(|kinds| CliffordElement::from_gates(seq(0, kinds), 1, CliffordClass::SingleQubit))
        .collect::<Result<Vec<_>>>()?;
    CliffordGroup::from_elements(1, elements)
}

/// The three-element sets terminating the CNOT- and iSWAP-like classes.
#[derive(Debug, Clone)]
pub struct S1Sets {
    pub s1: Vec<Vec<GateKind>>,
    pub s1_x2: Vec<Vec<GateKind>>,
    pub s1_y2: Vec<Vec<GateKind>>,
}

impl S1Sets {
    pub fn mean_gate_counts(&self) -> [f64; 3] {
        let mean = |s: &[Vec<GateKind>]| s.iter().map(Vec::len).sum::<usize>() as f64 / s.len() as f64;
        [mean(&self.s1), mean(&self.s1_x2), mean(&self.s1_y2)]
    }
}

/// Builds the S1 sets and checks each member against `c1`.
pub fn build_s1_sets(c1: &CliffordGroup) -> Result<S1Sets> {
    use GateKind::*;
    let sets = S1Sets {
        s1: vec![vec![I], vec![Y2, X2], vec![MinusX2, MinusY2]],
        s1_x2: vec![vec![X2], vec![X2, Y2, X2], vec![MinusY2]],
        s1_y2: vec![vec![Y2], vec![Y, X2], vec![MinusX2, MinusY2, X2]],
    };
    for set in [&sets.s1, &sets.s1_x2, &sets.s1_y2] {
        let mut seen = Vec::new();
        for kinds in set {
            let u = sequence_unitary(&seq(0, kinds), 1)?;
            let idx = c1
                .find_unitary(&u)
                .map_err(|_| Error::NotInGroup(format!("S1 member {kinds:?}")))?;
            let kinds_in_c1: Vec<GateKind> = c1.elements[idx].gates.iter().map(|g| g.kind).collect();
            if kinds_in_c1 != *kinds {
                return Err(Error::GroupConstruction(format!(
                    "S1 member {kinds:?} is implemented as {kinds_in_c1:?} in C1"
                )));
            }
            seen.push(idx);
        }
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != 3 {
            return Err(Error::GroupConstruction("S1 set has repeated elements".into()));
        }
    }
    Ok(sets)
}

/// Two-qubit Clifford group in four classes, with CZ as the only entangler.
pub fn build_c2() -> Result<CliffordGroup> {
    use GateKind::*;
    let c1 = build_c1()?;
    let s = build_s1_sets(&c1)?;
    let c1_kinds = c1_decompositions();

    let mut local_pairs = Vec::with_capacity(576);
    for a in &c1_kinds {
        for b in &c1_kinds {
            let mut g = seq(0, a);
            g.extend(seq(1, b));
            local_pairs.push(g);
        }
    }
    let cz = || GateLabel::cz(0, 1);
    let layer = |k0: GateKind, k1: GateKind| vec![GateLabel::single(k0, 0), GateLabel::single(k1, 1)];

    let mut elements = Vec::with_capacity(11520);
    for pre in &local_pairs {
        elements.push((pre.clone(), CliffordClass::SingleQubit));
    }
    for pre in &local_pairs {
        for s0 in &s.s1 {
            for s1 in &s.s1_y2 {
                let mut g = pre.clone();
                g.push(cz());
                g.extend(seq(0, s0));
                g.extend(seq(1, s1));
                elements.push((g, CliffordClass::CnotLike));
            }
        }
    }
    for pre in &local_pairs {
        for s0 in &s.s1_y2 {
            for s1 in &s.s1_x2 {
                let mut g = pre.clone();
                g.push(cz());
                g.extend(layer(Y2, MinusX2));
                g.push(cz());
                g.extend(seq(0, s0));
                g.extend(seq(1, s1));
                elements.push((g, CliffordClass::IswapLike));
            }
        }
    }
    for pre in &local_pairs {
        let mut g = pre.clone();
        g.push(cz());
        g.extend(layer(MinusY2, Y2));
        g.push(cz());
        g.extend(layer(Y2, MinusY2));
        g.push(cz());
        g.push(GateLabel::single(Y2, 1));
        elements.push((g, CliffordClass::SwapLike));
    }

    let elements = elements
        .into_par_iter()
        .map(|(g, class)| CliffordElement::from_gates(g, 2, class))
        .collect::<Result<Vec<_>>>()?;
    CliffordGroup::from_elements(2, elements)
}

/// Recovery element making `seq` (indices into `group`) the identity.
pub fn recovery(seq: &[usize], group: &CliffordGroup) -> Result<usize> {
    let mut u = UnitaryOp::identity(group.dim());
    for &i in seq {
        u = u.then(&group.elements[i].unitary);
    }
    group
        .find_unitary(&u.adjoint())
        .map_err(|_| Error::NotInGroup("recovery lookup failed; group not closed".into()))
}

fn flat_unitaries(group: &CliffordGroup) -> Vec<Vec<C64>> {
    group
        .elements
        .iter()
        .map(|e| e.unitary.matrix().iter().copied().collect())
        .collect()
}

#[inline]
fn overlap4(a: &[C64], b: &[C64]) -> f64 {
    // |Tr(A†B)|⁴ = |Σ conj(a_ij) b_ij|⁴ with matching storage order.
    let mut acc = c(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc.norm_sqr().powi(2)
}

/// `Σ_{k,k'} |Tr(U_k'† U_k)|⁴ / K²` over every pair.
pub fn two_design_sum(group: &CliffordGroup) -> f64 {
    let flat = flat_unitaries(group);
    let k = flat.len() as f64;
    let total: f64 = flat
        .par_iter()
        .map(|a| flat.iter().map(|b| overlap4(a, b)).sum::<f64>())
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / (k * k)
}

/// Monte-Carlo estimate of the same sum from random pairs: (mean, standard error).
pub fn two_design_sum_sampled(group: &CliffordGroup, pairs: usize, rng: &mut impl Rng) -> (f64, f64) {
    let flat = flat_unitaries(group);
    let n = flat.len();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..pairs {
        let v = overlap4(&flat[rng.gen_range(0..n)], &flat[rng.gen_range(0..n)]);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / pairs as f64;
    let var = (sum_sq / pairs as f64 - mean * mean).max(0.0);
    (mean, (var / pairs as f64).sqrt())
}

/// Two-design sum for an explicit list of unitaries.
pub fn two_design_sum_of(unitaries: &[UnitaryOp]) -> f64 {
    let flat: Vec<Vec<C64>> = unitaries.iter().map(|u| u.matrix().iter().copied().collect()).collect();
    let k = flat.len() as f64;
    flat.iter()
        .map(|a| flat.iter().map(|b| overlap4(a, b)).sum::<f64>())
        .sum::<f64>()
        / (k * k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateset::gate_unitary;
    use crate::qstate::{matrices_phase_equal, phase_equal, PHASE_TOL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn c2() -> &'static CliffordGroup {
        static C2: OnceLock<CliffordGroup> = OnceLock::new();
        C2.get_or_init(|| build_c2().unwrap())
    }

    #[test]
    fn c1_size_and_gate_count() {
        let g = build_c1().unwrap();
        assert_eq!(g.len(), 24);
        let total: usize = g.elements.iter().map(|e| e.gates.len()).sum();
        assert_eq!(total, 45);
        assert_eq!(g.mean_single_qubit_gates(), 1.875);
    }

    #[test]
    fn c1_closure_exhaustive() {
        let g = build_c1().unwrap();
        for a in 0..24 {
            for b in 0..24 {
                g.compose(a, b).unwrap();
            }
            g.inverse_index(a).unwrap();
        }
        g.identity_index().unwrap();
    }

    #[test]
    fn time_order_convention() {
        // [X/2, Y/2] means X/2 first: U = Y/2 · X/2.
        let gates = seq(0, &[GateKind::X2, GateKind::Y2]);
        let u = sequence_unitary(&gates, 1).unwrap();
        let x2 = gate_unitary(&gates[0], 1).unwrap();
        let y2 = gate_unitary(&gates[1], 1).unwrap();
        assert!(matrices_phase_equal(u.matrix(), &(y2.matrix() * x2.matrix()), 1e-12));
        assert!(!matrices_phase_equal(u.matrix(), &(x2.matrix() * y2.matrix()), 1e-6));
    }

    #[test]
    fn s1_sets() {
        let c1 = build_c1().unwrap();
        let s = build_s1_sets(&c1).unwrap();
        assert_eq!(s.s1[0], vec![GateKind::I]);
        for set in [&s.s1, &s.s1_x2, &s.s1_y2] {
            assert_eq!(set.len(), 3);
        }
        let m = s.mean_gate_counts();
        assert!((m[0] - 5.0 / 3.0).abs() < 1e-15);
        assert!((m[1] - 5.0 / 3.0).abs() < 1e-15);
        assert!((m[2] - 2.0).abs() < 1e-15);
        // The three sets are disjoint.
        let mut all: Vec<Vec<GateKind>> = s.s1.iter().chain(&s.s1_x2).chain(&s.s1_y2).cloned().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn c2_size_and_classes() {
        let g = c2();
        assert_eq!(g.len(), 11520);
        assert_eq!(g.class_count(CliffordClass::SingleQubit), 576);
        assert_eq!(g.class_count(CliffordClass::CnotLike), 5184);
        assert_eq!(g.class_count(CliffordClass::IswapLike), 5184);
        assert_eq!(g.class_count(CliffordClass::SwapLike), 576);
        assert_eq!(g.mean_cz(), 1.5);
    }

    #[test]
    fn c2_class_gate_histogram() {
        let g = c2();
        let expect = [
            (CliffordClass::SingleQubit, 90.0 / 24.0, 0.0),
            (CliffordClass::CnotLike, 89.0 / 12.0, 1.0),
            (CliffordClass::IswapLike, 113.0 / 12.0, 2.0),
            (CliffordClass::SwapLike, 35.0 / 4.0, 3.0),
        ];
        for (class, sq, cz) in expect {
            let n = g.class_count(class) as f64;
            let (tsq, tcz) = g.class_gate_totals(class);
            assert!((tsq as f64 / n - sq).abs() < 1e-12, "{class:?}");
            assert_eq!(tcz as f64 / n, cz);
        }
    }

    #[test]
    fn c2_keys_are_signed_pauli_maps() {
        let g = c2();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let e = &g.elements[g.sample_index(&mut rng)];
            assert!(maps_paulis_to_paulis(&e.unitary, 2));
        }
    }

    #[test]
    fn c2_group_properties() {
        let g = c2();
        g.identity_index().unwrap();
        for i in 0..g.len() {
            g.inverse_index(i).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            g.compose(g.sample_index(&mut rng), g.sample_index(&mut rng)).unwrap();
        }
    }

    #[test]
    fn key_equality_matches_phase_equality() {
        let g = c2();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for i in 0..1000 {
            let a = g.sample_index(&mut rng);
            // Every tenth pair is an element against a rephased copy of itself.
            let (u, v) = if i % 10 == 0 {
                let u = g.elements[a].unitary.clone();
                let v = UnitaryOp::from_matrix_unchecked(u.matrix() * C64::from_polar(1.0, 0.3 * i as f64));
                (u, v)
            } else {
                (g.elements[a].unitary.clone(), g.elements[g.sample_index(&mut rng)].unitary.clone())
            };
            let same_key = clifford_key(&u, 2).unwrap() == clifford_key(&v, 2).unwrap();
            assert_eq!(same_key, phase_equal(&u, &v, PHASE_TOL));
        }
    }

    #[test]
    fn recovery_cases() {
        let c1 = build_c1().unwrap();
        let id = c1.identity_index().unwrap();
        assert_eq!(recovery(&[], &c1).unwrap(), id);
        let x = c1.find_unitary(&gate_unitary(&GateLabel::single(GateKind::X, 0), 1).unwrap()).unwrap();
        assert_eq!(recovery(&[x], &c1).unwrap(), x);

        let g = c2();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let seq: Vec<usize> = (0..10).map(|_| g.sample_index(&mut rng)).collect();
        let r = recovery(&seq, g).unwrap();
        let mut u = UnitaryOp::identity(4);
        for &i in seq.iter().chain(std::iter::once(&r)) {
            u = u.then(&g.elements[i].unitary);
        }
        assert!(phase_equal(&u, &UnitaryOp::identity(4), PHASE_TOL));
        let total = g.elements.iter().filter(|e| {
            let mut w = UnitaryOp::identity(4);
            for &i in &seq {
                w = w.then(&g.elements[i].unitary);
            }
            phase_equal(&w.then(&e.unitary), &UnitaryOp::identity(4), PHASE_TOL)
        });
        assert_eq!(total.count(), 1);
    }

    #[test]
    fn two_design_small_cases() {
        let c1 = build_c1().unwrap();
        assert!((two_design_sum(&c1) - 2.0).abs() < 1e-9);
        assert!((two_design_sum_of(&[UnitaryOp::identity(2)]) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn collision_is_reported() {
        let c1 = build_c1().unwrap();
        let mut elems = c1.elements.clone();
        elems.push(c1.elements[1].clone());
        let err = CliffordGroup::from_elements(1, elems).unwrap_err();
        assert!(matches!(err, Error::GroupConstruction(_)));
    }
}
