//! Physical gate vocabulary and gate timing.
//!
//! Rotations follow `R_axis(θ) = exp(−iθσ/2)`. `H` is the composite `Y/2`
//! followed by `X`; `2T` is two `T` pulses in series.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{c, embed, ComplexMatrix, UnitaryOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateKind {
    I,
    X,
    MinusX,
    Y,
    MinusY,
    X2,
    MinusX2,
    Y2,
    MinusY2,
    Z,
    Z2,
    T,
    TwoT,
    H,
    CZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl GateKind {
    pub const SINGLE_QUBIT: [GateKind; 14] = [
        GateKind::I,
        GateKind::X,
        GateKind::MinusX,
        GateKind::Y,
        GateKind::MinusY,
        GateKind::X2,
        GateKind::MinusX2,
        GateKind::Y2,
        GateKind::MinusY2,
        GateKind::Z,
        GateKind::Z2,
        GateKind::T,
        GateKind::TwoT,
        GateKind::H,
    ];

    pub fn arity(self) -> usize {
        if self == GateKind::CZ {
            2
        } else {
            1
        }
    }

    /// Elementary rotations making up the gate, in time order.
    pub fn rotations(self) -> Vec<(Axis, f64)> {
        use GateKind::*;
        match self {
            I => vec![],
            X => vec![(Axis::X, PI)],
            MinusX => vec![(Axis::X, -PI)],
            Y => vec![(Axis::Y, PI)],
            MinusY => vec![(Axis::Y, -PI)],
            X2 => vec![(Axis::X, FRAC_PI_2)],
            MinusX2 => vec![(Axis::X, -FRAC_PI_2)],
            Y2 => vec![(Axis::Y, FRAC_PI_2)],
            MinusY2 => vec![(Axis::Y, -FRAC_PI_2)],
            Z => vec![(Axis::Z, PI)],
            Z2 => vec![(Axis::Z, FRAC_PI_2)],
            T => vec![(Axis::Z, FRAC_PI_4)],
            TwoT => vec![(Axis::Z, FRAC_PI_4), (Axis::Z, FRAC_PI_4)],
            H => vec![(Axis::Y, FRAC_PI_2), (Axis::X, PI)],
            CZ => vec![],
        }
    }

    /// The sign-flipped partner (`−G` for `G`), if any.
    pub fn inverse_kind(self) -> Option<GateKind> {
        use GateKind::*;
        Some(match self {
            X => MinusX,
            MinusX => X,
            Y => MinusY,
            MinusY => Y,
            X2 => MinusX2,
            MinusX2 => X2,
            Y2 => MinusY2,
            MinusY2 => Y2,
            I => I,
            CZ => CZ,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        use GateKind::*;
        match self {
            I => "I",
            X => "X",
            MinusX => "-X",
            Y => "Y",
            MinusY => "-Y",
            X2 => "X/2",
            MinusX2 => "-X/2",
            Y2 => "Y/2",
            MinusY2 => "-Y/2",
            Z => "Z",
            Z2 => "Z/2",
            T => "T",
            TwoT => "2T",
            H => "H",
            CZ => "CZ",
        }
    }

    pub fn is_microwave(self) -> bool {
        self.rotations().iter().any(|(a, _)| *a != Axis::Z)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn rotation(axis: Axis, theta: f64) -> ComplexMatrix {
    let (co, si) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    match axis {
        Axis::X => ComplexMatrix::from_row_slice(2, 2, &[c(co, 0.), c(0., -si), c(0., -si), c(co, 0.)]),
        Axis::Y => ComplexMatrix::from_row_slice(2, 2, &[c(co, 0.), c(-si, 0.), c(si, 0.), c(co, 0.)]),
        Axis::Z => ComplexMatrix::from_row_slice(2, 2, &[c(co, -si), c(0., 0.), c(0., 0.), c(co, si)]),
    }
}

/// Local matrix of a gate; microwave rotation angles are scaled by `1 + overrotation`.
pub fn local_matrix_scaled(kind: GateKind, overrotation: f64) -> ComplexMatrix {
    if kind == GateKind::CZ {
        let mut m = ComplexMatrix::identity(4, 4);
        m[(3, 3)] = c(-1.0, 0.0);
        return m;
    }
    kind.rotations()
        .into_iter()
        .fold(ComplexMatrix::identity(2, 2), |acc, (axis, theta)| {
            let scale = if axis == Axis::Z { 1.0 } else { 1.0 + overrotation };
            rotation(axis, theta * scale) * acc
        })
}

pub fn local_matrix(kind: GateKind) -> ComplexMatrix {
    local_matrix_scaled(kind, 0.0)
}

/// A gate and the qubits it acts on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GateLabel {
    pub kind: GateKind,
    pub targets: Vec<usize>,
}

impl GateLabel {
    pub fn single(kind: GateKind, q: usize) -> Self {
        debug_assert!(kind != GateKind::CZ);
        Self {
            kind,
            targets: vec![q],
        }
    }

    pub fn cz(a: usize, b: usize) -> Self {
        Self {
            kind: GateKind::CZ,
            targets: vec![a, b],
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.targets.len() != self.kind.arity() {
            return Err(Error::InvalidGate(format!(
                "{} expects {} target(s), got {}",
                self.kind,
                self.kind.arity(),
                self.targets.len()
            )));
        }
        if self.kind == GateKind::CZ && self.targets[0] == self.targets[1] {
            return Err(Error::InvalidGate("CZ targets must be distinct".into()));
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= n_qubits) {
            return Err(Error::InvalidTarget {
                target: t,
                n_qubits,
            });
        }
        Ok(())
    }
}

impl fmt::Display for GateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t: Vec<String> = self.targets.iter().map(|t| format!("q{t}")).collect();
        write!(f, "{}({})", self.kind, t.join(","))
    }
}

/// Unitary of a gate embedded on an `n_qubits` register.
pub fn gate_unitary(g: &GateLabel, n_qubits: usize) -> Result<UnitaryOp> {
    g.validate(n_qubits)?;
    Ok(UnitaryOp::from_matrix_unchecked(embed(
        &local_matrix(g.kind),
        &g.targets,
        n_qubits,
    )))
}

/// Composed unitary of a time-ordered gate list.
pub fn sequence_unitary(gates: &[GateLabel], n_qubits: usize) -> Result<UnitaryOp> {
    let mut u = UnitaryOp::identity(1 << n_qubits);
    for g in gates {
        u = u.then(&gate_unitary(g, n_qubits)?);
    }
    Ok(u)
}

/// CNOT built from CZ and `∓Y/2` on the target.
pub fn cnot_from_cz(control: usize, target: usize) -> Vec<GateLabel> {
    debug_assert_ne!(control, target);
    vec![
        GateLabel::single(GateKind::MinusY2, target),
        GateLabel::cz(control, target),
        GateLabel::single(GateKind::Y2, target),
    ]
}

/// Per-qubit single-qubit gate times, ns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitGateTimes {
    pub pi: f64,
    pub half_pi: f64,
    pub z: f64,
    pub idle: f64,
}

/// Gate durations in ns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateDurations {
    pub qubits: Vec<QubitGateTimes>,
    /// CZ duration per unordered qubit pair, keyed "a-b".
    pub cz: BTreeMap<String, f64>,
    /// Used for pairs without an entry.
    pub cz_default: f64,
}

pub fn pair_key(a: usize, b: usize) -> String {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    format!("{lo}-{hi}")
}

impl Default for GateDurations {
    fn default() -> Self {
        default_durations()
    }
}

impl GateDurations {
    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    /// Uniform timing for `n` qubits (single-qubit gate `sq` ns, CZ `cz` ns).
    pub fn uniform(n: usize, sq: f64, cz: f64) -> Self {
        Self {
            qubits: vec![
                QubitGateTimes {
                    pi: sq,
                    half_pi: sq,
                    z: 10.0,
                    idle: sq,
                };
                n
            ],
            cz: BTreeMap::new(),
            cz_default: cz,
        }
    }

    /// Restrict to the physical qubits listed, renumbered `0..len`.
    pub fn for_qubits(&self, physical: &[usize]) -> Result<Self> {
        let mut qubits = Vec::with_capacity(physical.len());
        for &p in physical {
            qubits.push(
                self.qubits
                    .get(p)
                    .cloned()
                    .ok_or(Error::InvalidTarget {
                        target: p,
                        n_qubits: self.qubits.len(),
                    })?,
            );
        }
        let mut cz = BTreeMap::new();
        for (i, &a) in physical.iter().enumerate() {
            for (j, &b) in physical.iter().enumerate().skip(i + 1) {
                if let Some(&t) = self.cz.get(&pair_key(a, b)) {
                    cz.insert(pair_key(i, j), t);
                }
            }
        }
        Ok(Self {
            qubits,
            cz,
            cz_default: self.cz_default,
        })
    }

    pub fn cz_time(&self, a: usize, b: usize) -> f64 {
        self.cz.get(&pair_key(a, b)).copied().unwrap_or(self.cz_default)
    }

    fn times(&self, q: usize) -> &QubitGateTimes {
        &self.qubits[q.min(self.qubits.len() - 1)]
    }

    pub fn duration(&self, g: &GateLabel) -> f64 {
        use GateKind::*;
        let q = g.targets[0];
        let t = self.times(q);
        match g.kind {
            I => t.idle,
            X | MinusX | Y | MinusY => t.pi,
            X2 | MinusX2 | Y2 | MinusY2 => t.half_pi,
            Z | Z2 | T => t.z,
            TwoT => 2.0 * t.z,
            H => t.half_pi + t.pi,
            CZ => self.cz_time(g.targets[0], g.targets[1]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits.is_empty() {
            return Err(Error::InvalidParameter("no qubit gate times".into()));
        }
        let all_positive = self
            .qubits
            .iter()
            .all(|t| t.pi > 0.0 && t.half_pi > 0.0 && t.z > 0.0 && t.idle > 0.0)
            && self.cz.values().all(|&v| v > 0.0)
            && self.cz_default > 0.0;
        if !all_positive {
            return Err(Error::InvalidParameter("gate durations must be positive".into()));
        }
        Ok(())
    }
}

/// Gate times of the five-qubit device, ns.
pub fn default_durations() -> GateDurations {
    let pi = [20.0, 20.0, 12.0, 18.0, 12.0];
    let half = [20.0, 20.0, 12.0, 12.0, 12.0];
    let idle = [20.0, 20.0, 12.0, 12.0, 12.0];
    let qubits = (0..5)
        .map(|q| QubitGateTimes {
            pi: pi[q],
            half_pi: half[q],
            z: 10.0,
            idle: idle[q],
        })
        .collect();
    let cz = [((0, 1), 45.0), ((1, 2), 43.0), ((2, 3), 43.0), ((3, 4), 38.0)]
        .into_iter()
        .map(|((a, b), t)| (pair_key(a, b), t))
        .collect();
    GateDurations {
        qubits,
        cz,
        cz_default: 40.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{max_abs, matrices_phase_equal, phase_equal, PHASE_TOL};

    fn single(kind: GateKind) -> UnitaryOp {
        gate_unitary(&GateLabel::single(kind, 0), 1).unwrap()
    }

    #[test]
    fn x_rotation_convention() {
        let x = single(GateKind::X);
        let expect = ComplexMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., -1.), c(0., 0.)]);
        assert!(max_abs(&(x.matrix() - expect)) < 1e-15);
    }

    #[test]
    fn cz_is_involution() {
        let cz = gate_unitary(&GateLabel::cz(0, 1), 2).unwrap();
        let sq = cz.then(&cz);
        assert!(max_abs(&(sq.matrix() - ComplexMatrix::identity(4, 4))) < 1e-15);
        assert_eq!(cz.matrix()[(3, 3)], c(-1.0, 0.0));
    }

    #[test]
    fn hadamard_is_y2_then_x() {
        let h = single(GateKind::H);
        let composed = single(GateKind::Y2).then(&single(GateKind::X));
        assert!(phase_equal(&h, &composed, PHASE_TOL));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let hadamard = ComplexMatrix::from_row_slice(2, 2, &[c(s, 0.), c(s, 0.), c(s, 0.), c(-s, 0.)]);
        assert!(matrices_phase_equal(h.matrix(), &hadamard, PHASE_TOL));
    }

    #[test]
    fn cnot_from_cz_matches_cnot() {
        let seq = cnot_from_cz(0, 1);
        let u = sequence_unitary(&seq, 2).unwrap();
        let mut cnot = ComplexMatrix::zeros(4, 4);
        for (r, col) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            cnot[(r, col)] = c(1.0, 0.0);
        }
        assert!(matrices_phase_equal(u.matrix(), &cnot, PHASE_TOL));

        let state = |idx: usize| {
            let mut v = nalgebra::DVector::zeros(4);
            v[idx] = c(1.0, 0.0);
            v
        };
        let out10 = u.matrix() * state(2);
        assert!((out10[3].norm_sqr() - 1.0).abs() < 1e-12);
        let out00 = u.matrix() * state(0);
        assert!((out00[0].norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_targets_rejected() {
        assert!(gate_unitary(&GateLabel::single(GateKind::X, 2), 2).is_err());
        assert!(gate_unitary(&GateLabel::cz(1, 1), 2).is_err());
    }

    #[test]
    fn device_durations() {
        let d = default_durations();
        d.validate().unwrap();
        assert_eq!(d.duration(&GateLabel::single(GateKind::X, 0)), 20.0);
        assert_eq!(d.duration(&GateLabel::single(GateKind::X, 2)), 12.0);
        for q in 0..5 {
            assert_eq!(d.duration(&GateLabel::single(GateKind::Z, q)), 10.0);
            assert_eq!(d.duration(&GateLabel::single(GateKind::TwoT, q)), 20.0);
            let h = d.duration(&GateLabel::single(GateKind::H, q));
            let parts = d.duration(&GateLabel::single(GateKind::Y2, q))
                + d.duration(&GateLabel::single(GateKind::X, q));
            assert_eq!(h, parts);
        }
        let h: Vec<f64> = (0..5).map(|q| d.duration(&GateLabel::single(GateKind::H, q))).collect();
        assert_eq!(h, vec![40.0, 40.0, 24.0, 30.0, 24.0]);
        assert_eq!(d.cz_time(2, 3), 43.0);
        assert_eq!(d.cz_time(4, 3), 38.0);
        let sub = d.for_qubits(&[2, 3]).unwrap();
        assert_eq!(sub.cz_time(0, 1), 43.0);
        assert!((38.0..=45.0).contains(&d.cz_time(0, 1)));
    }

    #[test]
    fn unitaries_have_unit_determinant_magnitude() {
        for kind in GateKind::SINGLE_QUBIT {
            let u = single(kind);
            assert!((u.matrix().determinant().norm() - 1.0).abs() < 1e-12, "{kind}");
            UnitaryOp::new(u.matrix().clone()).unwrap();
        }
    }

    #[test]
    fn signed_pairs_cancel_and_z_roots() {
        for kind in GateKind::SINGLE_QUBIT {
            if let Some(inv) = kind.inverse_kind() {
                let prod = single(kind).then(&single(inv));
                assert!(phase_equal(&prod, &UnitaryOp::identity(2), PHASE_TOL), "{kind}");
            }
        }
        let z2 = single(GateKind::Z2);
        assert!(phase_equal(&z2.then(&z2), &single(GateKind::Z), PHASE_TOL));
        let t = single(GateKind::T);
        assert!(phase_equal(&t.then(&t), &z2, PHASE_TOL));
        assert!(phase_equal(&single(GateKind::TwoT), &z2, PHASE_TOL));
    }
}
