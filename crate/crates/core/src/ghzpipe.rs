//! N-qubit GHZ preparation with optional spin echoes, noisy simulation and
//! tomographic readout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::gateset::{cnot_from_cz, default_durations, pair_key, GateDurations, GateKind, GateLabel};
use crate::noise::{NoiseParams, QubitNoise};
use crate::qstate::{fidelity_pure, DensityMatrix, PureState};
use crate::tomo::{ghz_diagnostics, mle_reconstruct, repeated_reconstruction, simulate_tomo, GhzDiagnostics, TomoResult};

/// Y/2 on qubit 0, then CNOT(i → i+1) down the chain.
pub fn ghz_gates(n_qubits: usize) -> Vec<GateLabel> {
    let mut gates = vec![GateLabel::single(GateKind::Y2, 0)];
    for i in 0..n_qubits.saturating_sub(1) {
        gates.extend(cnot_from_cz(i, i + 1));
    }
    gates
}

fn check_size(n_qubits: usize) -> Result<()> {
    if !(2..=5).contains(&n_qubits) {
        return Err(Error::InvalidParameter(format!("GHZ needs 2 to 5 qubits, got {n_qubits}")));
    }
    Ok(())
}

/// GHZ circuit with the default device durations.
pub fn build_ghz(n_qubits: usize, with_echo: bool) -> Result<Circuit> {
    check_size(n_qubits)?;
    let qubits: Vec<usize> = (0..n_qubits).collect();
    build_ghz_with(n_qubits, with_echo, &default_durations().for_qubits(&qubits)?)
}

/// With echoes, every idle window on an entangled qubit that lasts at least
/// one CNOT block receives two X pulses: one near the window midpoint and a
/// compensating one as late as possible. Slots are picked so the free
/// evolution before and after the first pulse cancels as closely as the
/// slot grid allows.
pub fn build_ghz_with(n_qubits: usize, with_echo: bool, durations: &GateDurations) -> Result<Circuit> {
    check_size(n_qubits)?;
    let mut circuit = Circuit::from_sequence(&ghz_gates(n_qubits), n_qubits)?;
    if !with_echo {
        return Ok(circuit);
    }
    let block = |t: usize| {
        durations.duration(&GateLabel::single(GateKind::MinusY2, t))
            + durations.cz_time(t - 1, t)
            + durations.duration(&GateLabel::single(GateKind::Y2, t))
    };
    let min_block = (1..n_qubits).map(block).fold(f64::INFINITY, f64::min);
    let slot_len: Vec<f64> = circuit.slots.iter().map(|s| s.duration(durations)).collect();
    let starts: Vec<f64> = slot_len
        .iter()
        .scan(0.0, |acc, &d| {
            let s = *acc;
            *acc += d;
            Some(s)
        })
        .collect();
    let cz_slot = |q: usize| {
        circuit
            .slots
            .iter()
            .position(|s| s.gates.iter().any(|g| g.kind == GateKind::CZ && g.targets.contains(&q)))
    };
    let mut inserts = Vec::new();
    for q in 0..n_qubits {
        let Some(entangled_at) = cz_slot(q) else { continue };
        let mut s = entangled_at + 1;
        while s < circuit.slots.len() {
            if circuit.slots[s].uses(q) {
                s += 1;
                continue;
            }
            let a = s;
            while s < circuit.slots.len() && !circuit.slots[s].uses(q) {
                s += 1;
            }
            let b = s; // window is slots a..b
            let (t0, t1) = (starts[a], starts[b - 1] + slot_len[b - 1]);
            if t1 - t0 + 1e-9 < min_block || b - a < 2 {
                continue;
            }
            let total = t1 - t0;
            let center = |k: usize| starts[k] + 0.5 * slot_len[k];
            let mut best: Option<((f64, f64), usize, usize)> = None;
            for i in a..b {
                for j in i + 1..b {
                    let between = center(j) - center(i);
                    let imbalance = (total - 2.0 * between).abs();
                    let score = (imbalance, t1 - center(j));
                    if best.as_ref().is_none_or(|(bs, _, _)| score < *bs) {
                        best = Some((score, i, j));
                    }
                }
            }
            if let Some((_, i, j)) = best {
                inserts.push((q, i));
                inserts.push((q, j));
            }
        }
    }
    for (q, k) in inserts {
        circuit.slots[k].gates.push(GateLabel::single(GateKind::X, q));
        circuit.slots[k].echo.push(q);
    }
    circuit.validate()?;
    Ok(circuit)
}

/// Echo pulses per qubit.
pub fn echo_counts(circuit: &Circuit) -> Vec<usize> {
    (0..circuit.n_qubits)
        .map(|q| circuit.slots.iter().filter(|s| s.echo.contains(&q)).count())
        .collect()
}

/// Five-qubit profile built from the device's benchmarking tables:
/// single-qubit depolarizing `p = 2r` from each qubit's mean gate error,
/// CZ depolarizing `p = 4r/3` per pair, T1 = 30 µs.
pub fn paper_noise_profile() -> NoiseParams {
    let sq_fidelity = [0.9992, 0.9992, 0.9994, 0.9991, 0.9992];
    let qubits = sq_fidelity
        .iter()
        .map(|&f| QubitNoise {
            t1_us: Some(30.0),
            tphi_white_us: Some(PAPER_TPHI_US),
            sigma_quasistatic_mhz: PAPER_SIGMA_MHZ,
            depolarizing_per_gate: 2.0 * (1.0 - f),
            overrotation: 0.0,
            // 0.05 % per 10 ns of identity
            idle_error_per_10ns: 2.0 * 5e-4,
        })
        .collect();
    let cz = [0.9924, 0.9936, 0.9944, 0.9900];
    let cz_depolarizing_pairs = cz
        .iter()
        .enumerate()
        .map(|(i, &f)| (pair_key(i, i + 1), 4.0 / 3.0 * (1.0 - f)))
        .collect();
    NoiseParams {
        qubits,
        cz_leak: 0.0,
        cz_depolarizing: 4.0 / 3.0 * (1.0 - 0.9936),
        cz_depolarizing_pairs,
        zz: Vec::new(),
    }
}

/// White dephasing time of the calibrated profile, µs.
pub const PAPER_TPHI_US: f64 = 6.0;
/// Quasi-static detuning width of the calibrated profile, MHz.
pub const PAPER_SIGMA_MHZ: f64 = 0.1;

/// Named noise profiles: "paper" or "noiseless".
pub fn noise_profile(name: &str, n_qubits: usize) -> Result<NoiseParams> {
    match name {
        "paper" => {
            let qubits: Vec<usize> = (0..n_qubits).collect();
            paper_noise_profile().for_qubits(&qubits)
        }
        "noiseless" => Ok(NoiseParams::noiseless(n_qubits)),
        other => Err(Error::InvalidParameter(format!("unknown noise profile {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GhzConfig {
    pub n_qubits: usize,
    pub echo: bool,
    pub noise: NoiseParams,
    pub durations: GateDurations,
    /// Repetitions per tomography setting; `None` uses exact probabilities.
    pub shots: Option<u64>,
    /// Quasi-static detuning draws averaged into the state.
    pub detuning_draws: usize,
    /// Independent tomography repetitions for the fidelity spread.
    pub repeats: usize,
    pub seed: u64,
}

impl GhzConfig {
    pub fn new(n_qubits: usize, echo: bool, noise: NoiseParams) -> Result<Self> {
        check_size(n_qubits)?;
        let qubits: Vec<usize> = (0..n_qubits).collect();
        Ok(Self {
            n_qubits,
            echo,
            noise,
            durations: default_durations().for_qubits(&qubits)?,
            shots: None,
            detuning_draws: 64,
            repeats: 1,
            seed: 0,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhzExperiment {
    pub n_qubits: usize,
    pub echo: bool,
    /// Fidelity of the simulated state before tomography.
    pub state_fidelity: f64,
    pub diagnostics: GhzDiagnostics,
    pub fidelity_std: Option<f64>,
    pub tomography: TomoResult,
    pub echo_counts: Vec<usize>,
    pub duration_ns: f64,
}

/// Noisy state averaged over quasi-static draws; each draw has its own
/// seeded stream and the sum runs in draw order.
pub fn simulate_ghz_state(cfg: &GhzConfig) -> Result<(Circuit, DensityMatrix)> {
    check_size(cfg.n_qubits)?;
    if cfg.noise.n_qubits() != cfg.n_qubits {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_qubits,
            got: cfg.noise.n_qubits(),
        });
    }
    cfg.noise.validate()?;
    cfg.durations.validate()?;
    let circuit = build_ghz_with(cfg.n_qubits, cfg.echo, &cfg.durations)?;
    let draws = if cfg.noise.has_quasistatic() { cfg.detuning_draws.max(1) } else { 1 };
    let states = (0..draws)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(k as u64);
            let det = cfg.noise.draw_detunings(&mut rng);
            circuit.simulate(&DensityMatrix::ground(cfg.n_qubits), &cfg.noise, &cfg.durations, &det)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum = states[0].matrix().clone();
    for s in &states[1..] {
        sum += s.matrix();
    }
    let rho = DensityMatrix::from_matrix_unchecked(sum / crate::qstate::c(draws as f64, 0.0));
    Ok((circuit, rho))
}

pub fn run_ghz_experiment(cfg: &GhzConfig) -> Result<GhzExperiment> {
    let (circuit, rho) = simulate_ghz_state(cfg)?;
    let target = PureState::ghz(cfg.n_qubits);
    let state_fidelity = fidelity_pure(&target, &rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let (tomography, fidelity_std) = match cfg.shots {
        Some(shots) if cfg.repeats > 1 => {
            let rep = repeated_reconstruction(&rho, &target, shots, cfg.repeats, &mut rng)?;
            (rep.result, Some(rep.std))
        }
        shots => {
            let data = simulate_tomo(&rho, shots, None, &mut rng)?;
            (mle_reconstruct(&data, Some(&target))?, None)
        }
    };
    let mut diagnostics = ghz_diagnostics(&tomography.rho, cfg.n_qubits)?;
    if let Some(f) = tomography.fidelity {
        diagnostics.fidelity = f;
        diagnostics.genuine_entanglement = f > 0.5 + 1e-9;
    }
    Ok(GhzExperiment {
        n_qubits: cfg.n_qubits,
        echo: cfg.echo,
        state_fidelity,
        diagnostics,
        fidelity_std,
        tomography,
        echo_counts: echo_counts(&circuit),
        duration_ns: circuit.total_duration(&cfg.durations),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{apply_unitary, matrices_phase_equal};

    #[test]
    fn noiseless_circuits_prepare_ghz() {
        for n in 2..=5 {
            for echo in [false, true] {
                let c = build_ghz(n, echo).unwrap();
                let rho = apply_unitary(&DensityMatrix::ground(n), &c.unitary().unwrap()).unwrap();
                let f = fidelity_pure(&PureState::ghz(n), &rho).unwrap();
                assert!((f - 1.0).abs() < 1e-12, "n={n} echo={echo} f={f}");
            }
        }
    }

    #[test]
    fn echoes_are_paired_and_transparent() {
        for n in 2..=5 {
            let plain = build_ghz(n, false).unwrap();
            let echoed = build_ghz(n, true).unwrap();
            assert!(echo_counts(&echoed).iter().all(|c| c % 2 == 0));
            assert!(matrices_phase_equal(plain.unitary().unwrap().matrix(), echoed.unitary().unwrap().matrix(), 1e-10));
        }
        let five = echo_counts(&build_ghz(5, true).unwrap());
        assert_eq!(five, vec![2, 2, 2, 0, 0]);
    }

    #[test]
    fn echo_refocuses_static_detuning() {
        // A fixed detuning with no other noise is undone by the echo up to
        // the residual slot-grid imbalance.
        let n = 3;
        let mut noise = NoiseParams::noiseless(n);
        noise.qubits[0].sigma_quasistatic_mhz = 1.0;
        let mut cfg = GhzConfig::new(n, false, noise).unwrap();
        cfg.detuning_draws = 1;
        let det_cfg = |echo: bool| GhzConfig { echo, ..cfg.clone() };
        let fid = |c: &GhzConfig| {
            let circuit = build_ghz_with(c.n_qubits, c.echo, &c.durations).unwrap();
            let rho = circuit.simulate(&DensityMatrix::ground(n), &c.noise, &c.durations, &[2.0, 0.0, 0.0]).unwrap();
            fidelity_pure(&PureState::ghz(n), &rho).unwrap()
        };
        assert!(fid(&det_cfg(true)) > fid(&det_cfg(false)));
    }

    #[test]
    fn echo_wins_under_quasistatic_dephasing() {
        let n = 4;
        let mut noise = NoiseParams::noiseless(n);
        noise.qubits.iter_mut().for_each(|q| q.sigma_quasistatic_mhz = 0.5);
        let mut wins = 0;
        for seed in 0..20 {
            let fid = |echo: bool| {
                let mut cfg = GhzConfig::new(n, echo, noise.clone()).unwrap();
                cfg.detuning_draws = 8;
                cfg.seed = seed;
                let (_, rho) = simulate_ghz_state(&cfg).unwrap();
                fidelity_pure(&PureState::ghz(n), &rho).unwrap()
            };
            if fid(true) >= fid(false) {
                wins += 1;
            }
        }
        assert!(wins >= 16, "echo won {wins}/20");
    }

    #[test]
    fn invalid_size() {
        assert!(build_ghz(1, false).is_err());
        assert!(build_ghz(6, true).is_err());
    }

    #[test]
    fn noiseless_pipeline() {
        for n in 2..=4 {
            let cfg = GhzConfig::new(n, true, NoiseParams::noiseless(n)).unwrap();
            let r = run_ghz_experiment(&cfg).unwrap();
            assert!(r.diagnostics.fidelity >= 0.9999, "n={n} f={}", r.diagnostics.fidelity);
            assert!((r.diagnostics.offdiag_ratio.unwrap() - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn device_profile_shape() {
        let p = paper_noise_profile();
        p.validate().unwrap();
        assert_eq!(p.n_qubits(), 5);
        assert!((p.cz_depolarizing_for(3, 4) - 4.0 / 3.0 * 0.01).abs() < 1e-15);
        let three = noise_profile("paper", 3).unwrap();
        assert_eq!(three.cz_depolarizing_pairs.len(), 2);
        assert!(noise_profile("bogus", 3).is_err());
    }

    #[test]
    fn fidelity_monotone_in_noise_knobs() {
        let n = 3;
        let base = noise_profile("paper", n).unwrap();
        let fid = |noise: NoiseParams| {
            let mut cfg = GhzConfig::new(n, false, noise).unwrap();
            cfg.detuning_draws = 16;
            simulate_ghz_state(&cfg)
                .map(|(_, rho)| fidelity_pure(&PureState::ghz(n), &rho).unwrap())
                .unwrap()
        };
        let f0 = fid(base.clone());
        let mut worse = base.clone();
        worse.qubits.iter_mut().for_each(|q| q.t1_us = Some(10.0));
        assert!(fid(worse) < f0);
        let mut worse = base.clone();
        worse.qubits.iter_mut().for_each(|q| q.tphi_white_us = Some(3.0));
        assert!(fid(worse) < f0);
        let mut worse = base.clone();
        worse.qubits.iter_mut().for_each(|q| q.depolarizing_per_gate *= 4.0);
        assert!(fid(worse) < f0);
        let mut worse = base.clone();
        worse.cz_depolarizing_pairs.values_mut().for_each(|p| *p *= 3.0);
        assert!(fid(worse) < f0);
        let mut worse = base;
        worse.cz_leak = 0.01;
        assert!(fid(worse) < f0);
    }
}
