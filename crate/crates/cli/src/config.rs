//! TOML run configuration. Every section has defaults, unknown keys are
//! rejected, and parse errors carry the offending line.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use xmonsim::ctrlphys::{CzDesign, StepResponse};
use xmonsim::gateset::{default_durations, GateDurations, GateKind};
use xmonsim::ghzpipe::noise_profile;
use xmonsim::noise::{DeviceParams, NoiseParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub device: DeviceParams,
    pub durations: GateDurations,
    pub noise: NoiseSection,
    pub rb: RbSection,
    pub budget: BudgetSection,
    pub cz: CzSection,
    pub filter: FilterSection,
    pub zstep: ZstepSection,
    pub tomo: TomoSection,
    pub ghz: GhzSection,
    pub cliffords: CliffordSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            device: DeviceParams::default(),
            durations: default_durations(),
            noise: NoiseSection::default(),
            rb: RbSection::default(),
            budget: BudgetSection::default(),
            cz: CzSection::default(),
            filter: FilterSection::default(),
            zstep: ZstepSection::default(),
            tomo: TomoSection::default(),
            ghz: GhzSection::default(),
            cliffords: CliffordSection::default(),
        }
    }
}

/// Noise for the five physical qubits: a named profile, or explicit
/// parameters that replace it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub profile: String,
    pub params: Option<NoiseParams>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            profile: "paper".into(),
            params: None,
        }
    }
}

impl NoiseSection {
    /// Noise restricted to the given physical qubits.
    pub fn for_qubits(&self, qubits: &[usize]) -> Result<NoiseParams> {
        let full = match &self.params {
            Some(p) => p.clone(),
            None => noise_profile(&self.profile, 5)?,
        };
        Ok(full.for_qubits(qubits)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbSection {
    /// Physical qubits, one or two.
    pub qubits: Vec<usize>,
    pub m_values: Vec<usize>,
    pub k: usize,
    pub shots: Option<u64>,
    pub detuning_draws: usize,
    pub clifford_depolarizing: f64,
    /// Gate interleaved after every Clifford, e.g. "CZ" or "X/2".
    pub interleave: Option<String>,
    pub bootstrap_samples: usize,
    pub weighted: bool,
}

impl Default for RbSection {
    fn default() -> Self {
        Self {
            qubits: vec![2],
            m_values: vec![1, 5, 10, 20, 40, 70, 100, 150, 200],
            k: 30,
            shots: None,
            detuning_draws: 1,
            clifford_depolarizing: 0.0,
            interleave: None,
            bootstrap_samples: 200,
            weighted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub r_sq: f64,
    pub r_cz: f64,
    /// CZ budget terms; all four must be given for the share table.
    pub decoherence_a: Option<f64>,
    pub decoherence_b: Option<f64>,
    pub phase_control: Option<f64>,
    pub leakage: Option<f64>,
}

impl Default for BudgetSection {
    fn default() -> Self {
        Self {
            r_sq: 0.001,
            r_cz: 0.006,
            decoherence_a: Some(0.0017),
            decoherence_b: Some(0.0022),
            phase_control: Some(0.0017),
            leakage: Some(0.0015),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CzSection {
    pub design: CzDesign,
    pub target_phase: f64,
    /// Durations for the leakage sweep, ns.
    pub sweep: Vec<f64>,
    /// Trace sampling stride in integration steps.
    pub trace_every: usize,
}

impl Default for CzSection {
    fn default() -> Self {
        Self {
            design: CzDesign::reference(),
            target_phase: std::f64::consts::PI,
            sweep: vec![43.0, 86.0, 172.0, 344.0, 688.0],
            trace_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub delay_start: f64,
    pub delay_stop: f64,
    pub delay_step: f64,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            delay_start: 0.0,
            delay_stop: 10.0,
            delay_step: 0.025,
        }
    }
}

impl FilterSection {
    pub fn delays(&self) -> Result<Vec<f64>> {
        if !(self.delay_step > 0.0) || self.delay_stop < self.delay_start {
            bail!("filter delays need delay_step > 0 and delay_stop >= delay_start");
        }
        let n = ((self.delay_stop - self.delay_start) / self.delay_step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.delay_start + i as f64 * self.delay_step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZstepSection {
    pub response: StepResponse,
    pub amplitude_ghz: f64,
    pub t_max: f64,
    pub dt: f64,
}

impl Default for ZstepSection {
    fn default() -> Self {
        Self {
            response: StepResponse::typical(),
            amplitude_ghz: 0.5,
            t_max: 150.0,
            dt: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomoSection {
    pub n_qubits: usize,
    /// "ghz", "ground", "plus" or "random".
    pub state: String,
    pub shots: Option<u64>,
    pub repeats: usize,
}

impl Default for TomoSection {
    fn default() -> Self {
        Self {
            n_qubits: 2,
            state: "ghz".into(),
            shots: Some(10_000),
            repeats: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhzSection {
    pub n_qubits: usize,
    pub echo: bool,
    /// Per setting; absent means the device's usual count for this size.
    pub shots: Option<u64>,
    pub exact: bool,
    pub repeats: usize,
    pub detuning_draws: usize,
}

impl Default for GhzSection {
    fn default() -> Self {
        Self {
            n_qubits: 5,
            echo: true,
            shots: None,
            exact: false,
            repeats: 1,
            detuning_draws: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliffordSection {
    /// Sampled pairs for the C2 two-design check; 0 runs the full sum.
    pub pairs: usize,
}

impl Default for CliffordSection {
    fn default() -> Self {
        Self { pairs: 100_000 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.durations.validate()?;
        if let Some(p) = &self.noise.params {
            p.validate()?;
        }
        Ok(())
    }
}

/// Parses gate names as printed by the gate set ("X/2", "-Y/2", "CZ").
pub fn parse_gate(name: &str) -> Result<GateKind> {
    use GateKind::*;
    let all = [I, X, MinusX, Y, MinusY, X2, MinusX2, Y2, MinusY2, Z, Z2, T, TwoT, H, CZ];
    all.into_iter()
        .find(|k| k.name().eq_ignore_ascii_case(name.trim()))
        .with_context(|| format!("unknown gate {name:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = RunConfig::from_toml("seed = 3\n[rb]\nkk = 4\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn gate_names() {
        assert_eq!(parse_gate("cz").unwrap(), GateKind::CZ);
        assert_eq!(parse_gate("-Y/2").unwrap(), GateKind::MinusY2);
        assert!(parse_gate("sqrtswap").is_err());
    }

    #[test]
    fn filter_grid() {
        let d = FilterSection::default().delays().unwrap();
        assert_eq!(d.len(), 401);
        assert!((d[400] - 10.0).abs() < 1e-12);
    }
}
