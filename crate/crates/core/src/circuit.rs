//! Time-slotted circuits and their noisy simulation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateset::{gate_unitary, GateDurations, GateLabel};
use crate::noise::{apply_decoherence, apply_gate_noisy_in_place, apply_zz, NoiseParams};
use crate::qstate::{DensityMatrix, UnitaryOp};

/// Gates that run in parallel on disjoint qubits.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub gates: Vec<GateLabel>,
    /// Qubits whose gate in this slot is a spin-echo pulse.
    #[serde(default)]
    pub echo: Vec<usize>,
}

impl Slot {
    pub fn uses(&self, q: usize) -> bool {
        self.gates.iter().any(|g| g.targets.contains(&q))
    }

    pub fn duration(&self, durations: &GateDurations) -> f64 {
        self.gates
            .iter()
            .map(|g| durations.duration(g))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub n_qubits: usize,
    pub slots: Vec<Slot>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            slots: Vec::new(),
        }
    }

    pub fn push_slot(&mut self, gates: Vec<GateLabel>) -> Result<()> {
        let slot = Slot {
            gates,
            echo: Vec::new(),
        };
        self.check_slot(&slot)?;
        self.slots.push(slot);
        Ok(())
    }

    fn check_slot(&self, slot: &Slot) -> Result<()> {
        let mut used = vec![false; self.n_qubits];
        for g in &slot.gates {
            g.validate(self.n_qubits)?;
            for &t in &g.targets {
                if used[t] {
                    return Err(Error::InvalidGate(format!("qubit {t} appears twice in one slot")));
                }
                used[t] = true;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.slots.iter().try_for_each(|s| self.check_slot(s))
    }

    /// Packs a time-ordered gate list into slots as early as possible.
    pub fn from_sequence(gates: &[GateLabel], n_qubits: usize) -> Result<Self> {
        let mut c = Self::new(n_qubits);
        c.append_sequence(gates)?;
        Ok(c)
    }

    /// ASAP-packs `gates` after the existing slots.
    pub fn append_sequence(&mut self, gates: &[GateLabel]) -> Result<()> {
        let base = self.slots.len();
        let mut free_from = vec![base; self.n_qubits];
        for g in gates {
            g.validate(self.n_qubits)?;
            let at = g.targets.iter().map(|&t| free_from[t]).max().unwrap_or(base);
            while self.slots.len() <= at {
                self.slots.push(Slot::default());
            }
            self.slots[at].gates.push(g.clone());
            for &t in &g.targets {
                free_from[t] = at + 1;
            }
        }
        Ok(())
    }

    pub fn gates(&self) -> impl Iterator<Item = &GateLabel> {
        self.slots.iter().flat_map(|s| s.gates.iter())
    }

    pub fn total_duration(&self, durations: &GateDurations) -> f64 {
        self.slots.iter().map(|s| s.duration(durations)).sum()
    }

    /// Ideal unitary of the whole circuit.
    pub fn unitary(&self) -> Result<UnitaryOp> {
        let mut u = UnitaryOp::identity(1 << self.n_qubits);
        for g in self.gates() {
            u = u.then(&gate_unitary(g, self.n_qubits)?);
        }
        Ok(u)
    }

    /// Runs the circuit under noise. Gates shorter than their slot sit in the
    /// middle of it; unused qubits decohere for the full slot.
    pub fn simulate(
        &self,
        rho: &DensityMatrix,
        noise: &NoiseParams,
        durations: &GateDurations,
        detunings: &[f64],
    ) -> Result<DensityMatrix> {
        if noise.n_qubits() != self.n_qubits || rho.dim() != 1 << self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: 1 << self.n_qubits,
                got: rho.dim(),
            });
        }
        let mut m = rho.matrix().clone();
        for slot in &self.slots {
            let len = slot.duration(durations);
            for g in &slot.gates {
                let pad = (len - durations.duration(g)) / 2.0;
                for &q in &g.targets {
                    apply_decoherence(&mut m, q, pad, noise, detunings);
                }
                apply_gate_noisy_in_place(&mut m, g, noise, durations, detunings);
                for &q in &g.targets {
                    apply_decoherence(&mut m, q, pad, noise, detunings);
                }
            }
            for q in (0..self.n_qubits).filter(|&q| !slot.uses(q)) {
                apply_decoherence(&mut m, q, len, noise, detunings);
            }
            apply_zz(&mut m, len, noise);
        }
        Ok(DensityMatrix::from_matrix_unchecked(m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateset::{cnot_from_cz, GateKind};
    use crate::qstate::{apply_unitary, max_abs};

    #[test]
    fn asap_packing() {
        let mut gates = vec![GateLabel::single(GateKind::X, 0), GateLabel::single(GateKind::Y, 1)];
        gates.extend(cnot_from_cz(0, 1));
        let c = Circuit::from_sequence(&gates, 2).unwrap();
        assert_eq!(c.slots.len(), 4);
        assert_eq!(c.slots[0].gates.len(), 2);
        let d = GateDurations::uniform(2, 20.0, 40.0);
        assert_eq!(c.total_duration(&d), 20.0 + 20.0 + 40.0 + 20.0);
    }

    #[test]
    fn duplicate_targets_rejected() {
        let mut c = Circuit::new(2);
        assert!(c
            .push_slot(vec![GateLabel::single(GateKind::X, 0), GateLabel::single(GateKind::Y, 0)])
            .is_err());
    }

    #[test]
    fn noiseless_simulation_is_ideal() {
        let mut gates = vec![GateLabel::single(GateKind::Y2, 0)];
        gates.extend(cnot_from_cz(0, 1));
        gates.extend(cnot_from_cz(1, 2));
        let c = Circuit::from_sequence(&gates, 3).unwrap();
        let noise = NoiseParams::noiseless(3);
        let d = GateDurations::uniform(3, 20.0, 40.0);
        let out = c.simulate(&DensityMatrix::ground(3), &noise, &d, &[0.0; 3]).unwrap();
        let ideal = apply_unitary(&DensityMatrix::ground(3), &c.unitary().unwrap()).unwrap();
        assert!(max_abs(&(out.matrix() - ideal.matrix())) < 1e-9);
    }
}
