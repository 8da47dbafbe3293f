//! Randomized benchmarking: reference, interleaved and simultaneous
//! protocols, decay fitting and error-per-Clifford algebra.
//!
//! Per-sequence random streams are derived from `(seed, m index, sequence
//! index)`, so results do not depend on how the sweep is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::clifford::{recovery, CliffordGroup};
use crate::error::{Error, Result};
use crate::gateset::{gate_unitary, GateDurations, GateLabel};
use crate::noise::{depolarize_local, zz_rate, CouplingParams, NoiseParams, ZzCoupling};
use crate::qstate::{partial_trace, DensityMatrix, UnitaryOp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbConfig {
    pub n_qubits: usize,
    pub m_values: Vec<usize>,
    pub k: usize,
    /// Binomial shots per sequence; `None` uses exact populations.
    #[serde(default)]
    pub shots: Option<u64>,
    pub noise: NoiseParams,
    pub durations: GateDurations,
    /// Depolarizing probability applied after every Clifford (oracle mode).
    #[serde(default)]
    pub clifford_depolarizing: f64,
    /// Quasi-static detuning draws averaged per sequence.
    #[serde(default = "one")]
    pub detuning_draws: usize,
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl RbConfig {
    pub fn new(n_qubits: usize, m_values: Vec<usize>, k: usize, noise: NoiseParams, durations: GateDurations, seed: u64) -> Self {
        Self {
            n_qubits,
            m_values,
            k,
            shots: None,
            noise,
            durations,
            clifford_depolarizing: 0.0,
            detuning_draws: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.n_qubits) {
            return Err(Error::InvalidParameter("RB supports 1 or 2 qubits".into()));
        }
        if self.m_values.is_empty() || self.m_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("m values must be strictly increasing".into()));
        }
        if self.k == 0 || self.detuning_draws == 0 {
            return Err(Error::InvalidParameter("k and detuning_draws must be at least 1".into()));
        }
        if self.noise.n_qubits() != self.n_qubits {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits,
                got: self.noise.n_qubits(),
            });
        }
        if !(0.0..=1.0).contains(&self.clifford_depolarizing) {
            return Err(Error::InvalidParameter("clifford_depolarizing must lie in [0, 1]".into()));
        }
        self.noise.validate()?;
        self.durations.validate()
    }
}

/// Sequence fidelity versus sequence length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbCurve {
    pub m_values: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Per-sequence fidelities for each `m`.
    pub samples: Vec<Vec<f64>>,
}

impl RbCurve {
    pub fn from_samples(m_values: Vec<usize>, samples: Vec<Vec<f64>>) -> Self {
        let (mean, std) = samples
            .iter()
            .map(|s| {
                let n = s.len() as f64;
                let mu = s.iter().sum::<f64>() / n;
                let var = if s.len() > 1 {
                    s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (mu, var.sqrt())
            })
            .unzip();
        Self {
            m_values,
            mean,
            std,
            samples,
        }
    }

    /// Curve from per-m means, with optional standard deviations.
    pub fn from_means(m_values: Vec<usize>, mean: Vec<f64>, std: Option<Vec<f64>>) -> Self {
        let samples = mean.iter().map(|&v| vec![v]).collect();
        let std = std.unwrap_or_else(|| vec![0.0; mean.len()]);
        Self {
            m_values,
            mean,
            std,
            samples,
        }
    }
}

#[derive(Debug, Clone)]
enum Block<'a> {
    Clifford(&'a [GateLabel]),
    Gate(&'a GateLabel),
}

fn sequence_rng(seed: u64, m_idx: usize, seq: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((m_idx as u64) << 32) | seq as u64);
    rng
}

/// Runs blocks from the ground state and returns the final state.
fn simulate_blocks(blocks: &[Block], n_qubits: usize, cfg_noise: &NoiseParams, durations: &GateDurations, clifford_depol: f64, detunings: &[f64]) -> Result<DensityMatrix> {
    let mut rho = DensityMatrix::ground(n_qubits);
    let all: Vec<usize> = (0..n_qubits).collect();
    for b in blocks {
        let gates: &[GateLabel] = match b {
            Block::Clifford(g) => g,
            Block::Gate(g) => std::slice::from_ref(*g),
        };
        let circuit = Circuit::from_sequence(gates, n_qubits)?;
        rho = circuit.simulate(&rho, cfg_noise, durations, detunings)?;
        if clifford_depol > 0.0 && matches!(b, Block::Clifford(_)) {
            let mut m = rho.into_matrix();
            depolarize_local(&mut m, clifford_depol, &all, n_qubits);
            rho = DensityMatrix::from_matrix_unchecked(m);
        }
    }
    Ok(rho)
}

fn sequence_fidelity(cfg: &RbConfig, blocks: &[Block], rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut pop = 0.0;
    for _ in 0..cfg.detuning_draws {
        let det = cfg.noise.draw_detunings(rng);
        let rho = simulate_blocks(blocks, cfg.n_qubits, &cfg.noise, &cfg.durations, cfg.clifford_depolarizing, &det)?;
        pop += rho.population(0);
    }
    let p = (pop / cfg.detuning_draws as f64).clamp(0.0, 1.0);
    Ok(match cfg.shots {
        Some(shots) if shots > 0 => Binomial::new(shots, p).unwrap().sample(rng) as f64 / shots as f64,
        _ => p,
    })
}

fn run_protocol(cfg: &RbConfig, group: &CliffordGroup, interleaved: Option<&GateLabel>) -> Result<RbCurve> {
    cfg.validate()?;
    if group.n_qubits != cfg.n_qubits {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_qubits,
            got: group.n_qubits,
        });
    }
    let gate_idx = match interleaved {
        Some(g) => Some(group.find_unitary(&gate_unitary(g, cfg.n_qubits)?).map_err(|_| {
            Error::NotInGroup(format!("interleaved gate {g} is not a Clifford"))
        })?),
        None => None,
    };
    let jobs: Vec<(usize, usize)> = (0..cfg.m_values.len())
        .flat_map(|mi| (0..cfg.k).map(move |j| (mi, j)))
        .collect();
    let values = jobs
        .par_iter()
        .map(|&(mi, j)| {
            let mut rng = sequence_rng(cfg.seed, mi, j);
            let m = cfg.m_values[mi];
            let mut idx_seq = Vec::with_capacity(2 * m + 1);
            for _ in 0..m {
                idx_seq.push(group.sample_index(&mut rng));
                if let Some(gi) = gate_idx {
                    idx_seq.push(gi);
                }
            }
            let rec = recovery(&idx_seq, group)?;
            let mut blocks = Vec::with_capacity(idx_seq.len() + 1);
            for (pos, &i) in idx_seq.iter().enumerate() {
                match (interleaved, pos % 2 == 1) {
                    (Some(g), true) => blocks.push(Block::Gate(g)),
                    _ => blocks.push(Block::Clifford(&group.elements[i].gates)),
                }
            }
            blocks.push(Block::Clifford(&group.elements[rec].gates));
            sequence_fidelity(cfg, &blocks, &mut rng)
        })
        .collect::<Result<Vec<f64>>>()?;
    let samples = values.chunks(cfg.k).map(|c| c.to_vec()).collect();
    Ok(RbCurve::from_samples(cfg.m_values.clone(), samples))
}

/// Reference RB: random Cliffords plus the recovery element.
pub fn run_reference(cfg: &RbConfig, group: &CliffordGroup) -> Result<RbCurve> {
    run_protocol(cfg, group, None)
}

/// Interleaved RB: `C₁, G, C₂, G, …, C_m, G, C_r`.
pub fn run_interleaved(cfg: &RbConfig, group: &CliffordGroup, gate: &GateLabel) -> Result<RbCurve> {
    run_protocol(cfg, group, Some(gate))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimultaneousResult {
    pub individual_a: RbCurve,
    pub simultaneous_a: RbCurve,
    pub individual_b: RbCurve,
    pub simultaneous_b: RbCurve,
    pub r_a: f64,
    pub r_a_given_b: f64,
    pub r_b: f64,
    pub r_b_given_a: f64,
    pub fits: [DecayFit; 4],
}

impl SimultaneousResult {
    pub fn added_error_a(&self) -> f64 {
        self.r_a_given_b - self.r_a
    }

    pub fn added_error_b(&self) -> f64 {
        self.r_b_given_a - self.r_b
    }
}

/// Simultaneous single-qubit RB on qubits A and B with an optional ZZ coupling.
///
/// Both configs must be single-qubit; `m_values`, `k` and `seed` come from `cfg_a`.
pub fn run_simultaneous(cfg_a: &RbConfig, cfg_b: &RbConfig, coupling: Option<&CouplingParams>, c1: &CliffordGroup) -> Result<SimultaneousResult> {
    cfg_a.validate()?;
    cfg_b.validate()?;
    if cfg_a.n_qubits != 1 || cfg_b.n_qubits != 1 || c1.n_qubits != 1 {
        return Err(Error::InvalidParameter("simultaneous RB takes two single-qubit configs".into()));
    }
    let mut noise = NoiseParams::noiseless(2);
    noise.qubits = vec![cfg_a.noise.qubits[0].clone(), cfg_b.noise.qubits[0].clone()];
    if let Some(cp) = coupling {
        noise.zz.push(ZzCoupling {
            a: 0,
            b: 1,
            rate_mhz: zz_rate(cp)?,
        });
    }
    let mut durations = cfg_a.durations.clone();
    durations.qubits = vec![cfg_a.durations.qubits[0].clone(), cfg_b.durations.qubits[0].clone()];
    let joint = RbConfig {
        n_qubits: 2,
        noise,
        durations,
        ..cfg_a.clone()
    };

    // mode: 0 = A alone, 1 = B alone, 2 = both
    let run = |mode: usize| -> Result<(RbCurve, RbCurve)> {
        let jobs: Vec<(usize, usize)> = (0..joint.m_values.len())
            .flat_map(|mi| (0..joint.k).map(move |j| (mi, j)))
            .collect();
        let values = jobs
            .par_iter()
            .map(|&(mi, j)| {
                let mut rng = sequence_rng(joint.seed, mi, j);
                let m = joint.m_values[mi];
                let seq_a: Vec<usize> = (0..m).map(|_| c1.sample_index(&mut rng)).collect();
                let seq_b: Vec<usize> = (0..m).map(|_| c1.sample_index(&mut rng)).collect();
                let (rec_a, rec_b) = (recovery(&seq_a, c1)?, recovery(&seq_b, c1)?);
                let full_a: Vec<usize> = seq_a.iter().copied().chain([rec_a]).collect();
                let full_b: Vec<usize> = seq_b.iter().copied().chain([rec_b]).collect();
                let blocks: Vec<Vec<GateLabel>> = full_a
                    .iter()
                    .zip(&full_b)
                    .map(|(&ia, &ib)| {
                        let mut g = Vec::new();
                        if mode != 1 {
                            g.extend(c1.elements[ia].remapped(&[0]));
                        }
                        if mode != 0 {
                            g.extend(c1.elements[ib].remapped(&[1]));
                        }
                        g
                    })
                    .collect();
                let block_refs: Vec<Block> = blocks.iter().map(|g| Block::Clifford(g)).collect();
                let mut pa = 0.0;
                let mut pb = 0.0;
                for _ in 0..joint.detuning_draws {
                    let det = joint.noise.draw_detunings(&mut rng);
                    let rho = simulate_blocks(&block_refs, 2, &joint.noise, &joint.durations, joint.clifford_depolarizing, &det)?;
                    pa += partial_trace(&rho, &[0], &[2, 2])?.population(0);
                    pb += partial_trace(&rho, &[1], &[2, 2])?.population(0);
                }
                let d = joint.detuning_draws as f64;
                Ok((pa / d, pb / d))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        let (va, vb): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
        let split = |v: Vec<f64>| v.chunks(joint.k).map(|c| c.to_vec()).collect::<Vec<_>>();
        Ok((
            RbCurve::from_samples(joint.m_values.clone(), split(va)),
            RbCurve::from_samples(joint.m_values.clone(), split(vb)),
        ))
    };
    let (individual_a, _) = run(0)?;
    let (_, individual_b) = run(1)?;
    let (simultaneous_a, simultaneous_b) = run(2)?;
    let opts = FitOptions::default();
    let fits = [
        fit_decay_with(&individual_a, &opts)?,
        fit_decay_with(&simultaneous_a, &opts)?,
        fit_decay_with(&individual_b, &opts)?,
        fit_decay_with(&simultaneous_b, &opts)?,
    ];
    Ok(SimultaneousResult {
        r_a: clifford_error(fits[0].p, 1),
        r_a_given_b: clifford_error(fits[1].p, 1),
        r_b: clifford_error(fits[2].p, 1),
        r_b_given_a: clifford_error(fits[3].p, 1),
        individual_a,
        simultaneous_a,
        individual_b,
        simultaneous_b,
        fits,
    })
}

/// Fit of `F(m) = A·p^m + B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub b: f64,
    pub p: f64,
    /// Bootstrap standard deviation of `p`.
    pub p_std: f64,
    pub residual_norm: f64,
    pub converged: bool,
    /// `p_std / (1 − p)` exceeds 0.5, or `p` sits on the `p = 1` bound.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Weight points by `1/std²` where stds are available.
    pub weighted: bool,
    pub bootstrap_samples: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weighted: false,
            bootstrap_samples: 200,
            seed: 0x5eed,
        }
    }
}

struct Point {
    m: f64,
    y: f64,
    w: f64,
}

/// Weighted linear solve for `(A, B)` at fixed `p`; returns (A, B, SSR).
fn linear_part(points: &[Point], p: f64) -> (f64, f64, f64) {
    let xs: Vec<f64> = points.iter().map(|pt| p.powf(pt.m)).collect();
    let sw: f64 = points.iter().map(|pt| pt.w).sum();
    let xm = points.iter().zip(&xs).map(|(pt, x)| pt.w * x).sum::<f64>() / sw;
    let ym = points.iter().map(|pt| pt.w * pt.y).sum::<f64>() / sw;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (pt, x) in points.iter().zip(&xs) {
        sxx += pt.w * (x - xm) * (x - xm);
        sxy += pt.w * (x - xm) * (pt.y - ym);
    }
    let a = if sxx > 1e-300 { sxy / sxx } else { 0.0 };
    let b = ym - a * xm;
    let ssr = points
        .iter()
        .zip(&xs)
        .map(|(pt, x)| pt.w * (a * x + b - pt.y).powi(2))
        .sum();
    (a, b, ssr)
}

/// Log-linear starting estimate: `B₀` = tail mean, `A₀` = first point − `B₀`.
fn initial_p(points: &[Point]) -> Option<f64> {
    let tail = points.len().div_ceil(3);
    let b0 = points[points.len() - tail..].iter().map(|p| p.y).sum::<f64>() / tail as f64;
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.y - b0 > 1e-12)
        .map(|p| (p.m, (p.y - b0).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
    let p = slope.exp();
    (p > 0.0 && p < 1.0).then_some(p)
}

const P_MIN: f64 = 1e-3;

/// Variable-projection fit: scan `p ∈ [P_MIN, 1]`, golden-section refine.
fn fit_points(points: &[Point]) -> (f64, f64, f64, f64, bool) {
    let ssr = |p: f64| linear_part(points, p).2;
    // Candidates on a log grid in 1 − p, plus the log-linear estimate.
    let mut cands: Vec<f64> = (0..=400)
        .map(|i| 1.0 - 10f64.powf(-(i as f64) * 10.0 / 400.0) * (1.0 - P_MIN))
        .collect();
    cands.push(1.0);
    if let Some(p0) = initial_p(points) {
        cands.push(p0);
    }
    cands.sort_by(|a, b| a.total_cmp(b));
    let vals: Vec<f64> = cands.iter().map(|&p| ssr(p)).collect();
    let lo_v = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_v = vals.iter().copied().fold(0.0, f64::max);
    let scale: f64 = points.iter().map(|pt| pt.w * pt.y * pt.y).sum::<f64>().max(1e-300);
    if hi_v - lo_v <= 1e-20 * scale {
        // No decay is resolvable: report the p = 1 bound.
        let (a, b, s) = linear_part(points, 1.0);
        return (a, b, 1.0, s, s.is_finite());
    }
    let best_i = vals.iter().position(|&v| v == lo_v).unwrap();
    let mut lo = cands[best_i.saturating_sub(1)];
    let mut hi = cands[(best_i + 1).min(cands.len() - 1)];
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (ssr(x1), ssr(x2));
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = ssr(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = ssr(x2);
        }
    }
    let mut p = 0.5 * (lo + hi);
    for cand in [cands[best_i], 1.0] {
        if ssr(cand) < ssr(p) {
            p = cand;
        }
    }
    let (a, b, s) = linear_part(points, p);
    let converged = s.is_finite() && p > P_MIN * 1.0001;
    (a, b, p, s, converged)
}

fn curve_points(curve: &RbCurve, weighted: bool) -> Vec<Point> {
    curve
        .m_values
        .iter()
        .zip(&curve.mean)
        .zip(&curve.std)
        .map(|((&m, &y), &s)| Point {
            m: m as f64,
            y,
            w: if weighted && s > 0.0 { 1.0 / (s * s) } else { 1.0 },
        })
        .collect()
}

pub fn fit_decay(curve: &RbCurve) -> Result<DecayFit> {
    fit_decay_with(curve, &FitOptions::default())
}

pub fn fit_decay_with(curve: &RbCurve, opts: &FitOptions) -> Result<DecayFit> {
    let mut distinct = curve.m_values.clone();
    distinct.dedup();
    if distinct.len() < 3 || curve.mean.len() != curve.m_values.len() || curve.std.len() != curve.m_values.len() {
        return Err(Error::InvalidParameter("decay fit needs at least 3 distinct m values".into()));
    }
    let points = curve_points(curve, opts.weighted);
    let (a, b, p, ssr, converged) = fit_points(&points);
    let mut warnings = Vec::new();
    if !converged {
        warnings.push("decay fit did not converge inside 0 < p ≤ 1".to_string());
    }
    if !(0.0..=1.0).contains(&b) {
        warnings.push(format!("offset B = {b:.4} lies outside [0, 1]"));
    }

    // Bootstrap: resample sequences when available, residuals otherwise.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let per_sequence = curve.samples.iter().all(|s| s.len() > 1);
    let residuals: Vec<f64> = points.iter().map(|pt| pt.y - (a * p.powf(pt.m) + b)).collect();
    let mut ps = Vec::with_capacity(opts.bootstrap_samples);
    for _ in 0..opts.bootstrap_samples {
        let boot: Vec<Point> = if per_sequence {
            curve
                .samples
                .iter()
                .zip(&points)
                .map(|(s, pt)| {
                    let mean = (0..s.len()).map(|_| s[rng.gen_range(0..s.len())]).sum::<f64>() / s.len() as f64;
                    Point { m: pt.m, y: mean, w: pt.w }
                })
                .collect()
        } else {
            points
                .iter()
                .map(|pt| Point {
                    m: pt.m,
                    y: a * p.powf(pt.m) + b + residuals[rng.gen_range(0..residuals.len())],
                    w: pt.w,
                })
                .collect()
        };
        ps.push(fit_points(&boot).2);
    }
    let p_std = if ps.len() > 1 {
        let mu = ps.iter().sum::<f64>() / ps.len() as f64;
        (ps.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (ps.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let degenerate = 1.0 - p < 1e-12 || p_std / (1.0 - p) > 0.5;
    if degenerate {
        warnings.push("decay is not resolved: large relative uncertainty on 1 − p".to_string());
    }
    Ok(DecayFit {
        a,
        b,
        p,
        p_std,
        residual_norm: ssr.sqrt(),
        converged,
        degenerate,
        warnings,
    })
}

fn dim(n_qubits: usize) -> f64 {
    (1u64 << n_qubits) as f64
}

/// Error per Clifford `r = (1 − p)(d − 1)/d`.
pub fn clifford_error(p: f64, n_qubits: usize) -> f64 {
    let d = dim(n_qubits);
    (1.0 - p) * (d - 1.0) / d
}

/// Inverse of [`clifford_error`].
pub fn decay_from_error(r: f64, n_qubits: usize) -> f64 {
    let d = dim(n_qubits);
    1.0 - r * d / (d - 1.0)
}

/// `r_gate = (1 − p_gate/p_ref)(d − 1)/d`.
pub fn interleaved_error(p_gate: f64, p_ref: f64, n_qubits: usize) -> f64 {
    let d = dim(n_qubits);
    (1.0 - p_gate / p_ref) * (d - 1.0) / d
}

/// False when the inputs violate `0 < p_gate ≤ p_ref ≤ 1`; the error is still computable.
pub fn interleaved_inputs_consistent(p_gate: f64, p_ref: f64) -> bool {
    0.0 < p_gate && p_gate <= p_ref && p_ref <= 1.0
}

/// Average physical-gate fidelity implied by a single-qubit error per Clifford.
pub fn avg_gate_fidelity_from_c1(r_ref: f64) -> f64 {
    1.0 - r_ref / 1.875
}

/// Errors per Clifford predicted from average gate errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CliffordErrorPrediction {
    pub r_c1: f64,
    pub r_c1_c1: f64,
    pub r_cnot: f64,
    pub r_iswap: f64,
    pub r_swap: f64,
    pub r_c2: f64,
    pub r_c2_cz: f64,
}

pub fn predict_clifford_errors(r_sq: f64, r_cz: f64) -> CliffordErrorPrediction {
    CliffordErrorPrediction {
        r_c1: 1.875 * r_sq,
        r_c1_c1: 90.0 / 24.0 * r_sq,
        r_cnot: r_cz + 89.0 / 12.0 * r_sq,
        r_iswap: 2.0 * r_cz + 113.0 / 12.0 * r_sq,
        r_swap: 3.0 * r_cz + 35.0 / 4.0 * r_sq,
        r_c2: 1.5 * r_cz + 33.0 / 4.0 * r_sq,
        r_c2_cz: 2.5 * r_cz + 33.0 / 4.0 * r_sq,
    }
}

impl CliffordErrorPrediction {
    /// Class-size-weighted mean of the four class errors.
    pub fn class_weighted_c2(&self) -> f64 {
        (576.0 * self.r_c1_c1 + 5184.0 * self.r_cnot + 5184.0 * self.r_iswap + 576.0 * self.r_swap) / 11520.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEntry {
    pub name: String,
    pub error: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub entries: Vec<BudgetEntry>,
    pub total: f64,
    pub decoherence_percent: f64,
    pub control_percent: f64,
}

/// CZ error budget with percentage shares of the summed total.
pub fn budget_assemble(decoherence_a: f64, decoherence_b: f64, phase_control: f64, leakage: f64) -> Result<ErrorBudget> {
    let parts = [
        ("decoherence_a", decoherence_a),
        ("decoherence_b", decoherence_b),
        ("single_qubit_phase", phase_control),
        ("leakage", leakage),
    ];
    if parts.iter().any(|(_, v)| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter("budget components must be ≥ 0".into()));
    }
    let total: f64 = parts.iter().map(|(_, v)| v).sum();
    let share = |v: f64| if total > 0.0 { 100.0 * v / total } else { 0.0 };
    let entries: Vec<BudgetEntry> = parts
        .iter()
        .map(|&(name, error)| BudgetEntry {
            name: name.to_string(),
            error,
            percent: share(error),
        })
        .collect();
    Ok(ErrorBudget {
        decoherence_percent: share(decoherence_a + decoherence_b),
        control_percent: share(phase_control + leakage),
        entries,
        total,
    })
}

/// Mean physical duration of a group's elements under `durations`, ns.
pub fn mean_clifford_duration(group: &CliffordGroup, durations: &GateDurations) -> Result<f64> {
    let mut total = 0.0;
    for e in &group.elements {
        total += Circuit::from_sequence(&e.gates, group.n_qubits)?.total_duration(durations);
    }
    Ok(total / group.len() as f64)
}

/// Composition of a sequence's ideal unitaries, for checks.
pub fn sequence_product(seq: &[usize], group: &CliffordGroup) -> UnitaryOp {
    seq.iter()
        .fold(UnitaryOp::identity(group.dim()), |u, &i| u.then(&group.elements[i].unitary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clifford::build_c1;
    use crate::gateset::GateKind;
    use approx::assert_abs_diff_eq;
    use rand_distr::Normal;

    fn synthetic(a: f64, b: f64, p: f64, ms: &[usize]) -> RbCurve {
        RbCurve::from_means(ms.to_vec(), ms.iter().map(|&m| a * p.powi(m as i32) + b).collect(), None)
    }

    const MS: [usize; 9] = [1, 10, 25, 50, 100, 200, 300, 500, 700];

    #[test]
    fn exact_curve_is_recovered() {
        let fit = fit_decay(&synthetic(0.5, 0.5, 0.99, &MS)).unwrap();
        assert_abs_diff_eq!(fit.p, 0.99, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.a, 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(fit.b, 0.5, epsilon = 1e-7);
        assert!(fit.converged && !fit.degenerate);
    }

    #[test]
    fn noisy_curve_within_bootstrap_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.005).unwrap();
        let samples: Vec<Vec<f64>> = MS
            .iter()
            .map(|&m| (0..30).map(|_| 0.5 * 0.99f64.powi(m as i32) + 0.5 + noise.sample(&mut rng)).collect())
            .collect();
        let curve = RbCurve::from_samples(MS.to_vec(), samples);
        let fit = fit_decay(&curve).unwrap();
        assert!(fit.p_std > 0.0);
        assert!((fit.p - 0.99).abs() <= 3.0 * fit.p_std, "{} ± {}", fit.p, fit.p_std);
    }

    #[test]
    fn constant_curve_is_flagged() {
        let curve = RbCurve::from_means(MS.to_vec(), vec![0.97; MS.len()], None);
        let fit = fit_decay(&curve).unwrap();
        assert!((0.999..=1.0).contains(&fit.p));
        assert!(fit.degenerate);
        assert!(!fit.warnings.is_empty());
    }

    #[test]
    fn too_few_points() {
        let curve = synthetic(0.5, 0.5, 0.9, &[1, 2]);
        assert!(fit_decay(&curve).is_err());
    }

    #[test]
    fn weighted_fit_on_exact_data() {
        let mut curve = synthetic(0.45, 0.5, 0.98, &MS);
        curve.std = MS.iter().map(|&m| 0.001 + 1e-5 * m as f64).collect();
        let fit = fit_decay_with(&curve, &FitOptions { weighted: true, ..Default::default() }).unwrap();
        assert_abs_diff_eq!(fit.p, 0.98, epsilon = 1e-9);
    }

    #[test]
    fn error_formulas() {
        assert_abs_diff_eq!(clifford_error(0.9978, 1), 0.0011, epsilon = 1e-12);
        assert_eq!(clifford_error(1.0, 2), 0.0);
        assert_abs_diff_eq!(clifford_error(0.9748, 2), 0.0189, epsilon = 1e-12);
        assert_abs_diff_eq!(decay_from_error(0.0189, 2), 0.9748, epsilon = 1e-12);

        let p_ref = decay_from_error(0.0189, 2);
        let p_gate = decay_from_error(0.0244, 2);
        assert_abs_diff_eq!(p_gate, 0.967467, epsilon = 1e-6);
        let r_cz = interleaved_error(p_gate, p_ref, 2);
        assert_abs_diff_eq!(1.0 - r_cz, 0.9944, epsilon = 5e-5);
        assert_eq!(interleaved_error(0.97, 0.97, 2), 0.0);
        assert_abs_diff_eq!(interleaved_error(0.998, 1.0, 1), 0.001, epsilon = 1e-12);
        assert!(!interleaved_inputs_consistent(0.99, 0.98));

        assert_abs_diff_eq!(avg_gate_fidelity_from_c1(0.0011), 0.99941, epsilon = 1e-5);
        assert_eq!(avg_gate_fidelity_from_c1(0.0), 1.0);
        let f = avg_gate_fidelity_from_c1(0.0018);
        assert_abs_diff_eq!(f, 0.99904, epsilon = 1e-5);
        assert!((f - 0.9991).abs() <= 1e-4);
    }

    #[test]
    fn prediction_values() {
        let p = predict_clifford_errors(0.001, 0.006);
        assert_abs_diff_eq!(p.r_c2, 0.01725, epsilon = 1e-15);
        assert_abs_diff_eq!(p.r_c2_cz, 0.02325, epsilon = 1e-15);
        assert_abs_diff_eq!(p.r_c1, 0.001875, epsilon = 1e-15);
        let z = predict_clifford_errors(0.0, 0.0);
        assert_eq!(z.r_c2, 0.0);
        assert_eq!(z.r_swap, 0.0);
    }

    #[test]
    fn class_weighted_average_versus_closed_form() {
        // The class coefficients average to 3/2 r_CZ + 41/5 r_SQ, which is
        // r_SQ/20 below the closed form 3/2 r_CZ + 33/4 r_SQ.
        for (sq, cz) in [(0.001, 0.006), (0.0, 0.01), (0.002, 0.0)] {
            let p = predict_clifford_errors(sq, cz);
            assert_abs_diff_eq!(p.class_weighted_c2(), 1.5 * cz + 41.0 / 5.0 * sq, epsilon = 1e-15);
            assert_abs_diff_eq!(p.r_c2 - p.class_weighted_c2(), sq / 20.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn budget_shares() {
        let b = budget_assemble(0.0017, 0.0022, 0.0017, 0.0015).unwrap();
        let pct: Vec<f64> = b.entries.iter().map(|e| e.percent.round()).collect();
        assert_eq!(pct, vec![24.0, 31.0, 24.0, 21.0]);
        assert_abs_diff_eq!(b.entries.iter().map(|e| e.percent).sum::<f64>(), 100.0, epsilon = 1e-9);
        assert_eq!(b.decoherence_percent.round(), 55.0);
        assert_eq!(b.control_percent.round(), 45.0);
        let single = budget_assemble(0.0, 0.0, 0.003, 0.0).unwrap();
        assert_eq!(single.entries[2].percent, 100.0);
        assert!(budget_assemble(-1.0, 0.0, 0.0, 0.0).is_err());
    }

    fn c1_cfg(noise: NoiseParams, ms: Vec<usize>, k: usize) -> RbConfig {
        RbConfig::new(1, ms, k, noise, GateDurations::uniform(1, 20.0, 40.0), 42)
    }

    #[test]
    fn zero_noise_reference_and_interleaved() {
        let c1 = build_c1().unwrap();
        let cfg = c1_cfg(NoiseParams::noiseless(1), vec![1, 5, 20], 5);
        let curve = run_reference(&cfg, &c1).unwrap();
        assert!(curve.mean.iter().all(|&f| (f - 1.0).abs() < 1e-9));
        let il = run_interleaved(&cfg, &c1, &GateLabel::single(GateKind::I, 0)).unwrap();
        assert!(il.mean.iter().all(|&f| (f - 1.0).abs() < 1e-9));
    }

    #[test]
    fn depolarizing_closed_form() {
        let c1 = build_c1().unwrap();
        let mut cfg = c1_cfg(NoiseParams::noiseless(1), vec![1, 10, 50, 200], 4);
        cfg.clifford_depolarizing = 0.01;
        let curve = run_reference(&cfg, &c1).unwrap();
        for (&m, samples) in curve.m_values.iter().zip(&curve.samples) {
            // m Cliffords plus the recovery, each followed by the channel.
            let expect = 0.5 * 0.99f64.powi(m as i32 + 1) + 0.5;
            for &s in samples {
                assert_abs_diff_eq!(s, expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn perfect_interleaved_gate_adds_nothing() {
        let c1 = build_c1().unwrap();
        let mut cfg = c1_cfg(NoiseParams::noiseless(1), vec![1, 20, 60, 150, 300], 3);
        cfg.clifford_depolarizing = 0.004;
        let r = fit_decay(&run_reference(&cfg, &c1).unwrap()).unwrap();
        let g = fit_decay(&run_interleaved(&cfg, &c1, &GateLabel::single(GateKind::X, 0)).unwrap()).unwrap();
        assert_abs_diff_eq!(g.p, r.p, epsilon = 1e-9);
    }

    #[test]
    fn non_clifford_interleaved_gate_rejected() {
        let c1 = build_c1().unwrap();
        let cfg = c1_cfg(NoiseParams::noiseless(1), vec![1, 2, 3], 1);
        assert!(run_interleaved(&cfg, &c1, &GateLabel::single(GateKind::T, 0)).is_err());
    }

    #[test]
    fn config_validation() {
        let c1 = build_c1().unwrap();
        let cfg = c1_cfg(NoiseParams::noiseless(1), vec![5, 5, 7], 1);
        assert!(run_reference(&cfg, &c1).is_err());
        let cfg = c1_cfg(NoiseParams::noiseless(1), vec![1, 5], 0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn finite_shots_are_deterministic() {
        let c1 = build_c1().unwrap();
        let mut noise = NoiseParams::noiseless(1);
        noise.qubits[0].depolarizing_per_gate = 0.01;
        let mut cfg = c1_cfg(noise, vec![1, 10, 30], 4);
        cfg.shots = Some(500);
        let a = run_reference(&cfg, &c1).unwrap();
        let b = run_reference(&cfg, &c1).unwrap();
        assert_eq!(a, b);
        assert!(a.mean.iter().all(|&f| (0.0..=1.0).contains(&f)));
    }

    #[test]
    fn simultaneous_without_coupling_adds_no_error() {
        let c1 = build_c1().unwrap();
        let mut noise = NoiseParams::noiseless(1);
        noise.qubits[0].depolarizing_per_gate = 0.001;
        let cfg = c1_cfg(noise, vec![1, 20, 60, 150, 300], 10);
        let res = run_simultaneous(&cfg, &cfg, None, &c1).unwrap();
        assert!(res.added_error_a().abs() <= 3.0 * res.fits[0].p_std.max(res.fits[1].p_std).max(1e-12));
        assert!(res.added_error_b().abs() <= 3.0 * res.fits[2].p_std.max(res.fits[3].p_std).max(1e-12));
    }

    #[test]
    fn zz_coupling_adds_error() {
        let c1 = build_c1().unwrap();
        let mut noise = NoiseParams::noiseless(1);
        noise.qubits[0].depolarizing_per_gate = 0.0005;
        let cfg = c1_cfg(noise, vec![1, 10, 30, 60, 100], 20);
        // Coupling tuned so Ω_ZZ ≈ 1.3 MHz.
        let cp = CouplingParams { g: 30.0, eta1: -214.0, eta2: -212.0, delta: 800.0 };
        let res = run_simultaneous(&cfg, &cfg, Some(&cp), &c1).unwrap();
        assert!(res.added_error_a() > 0.0);
        assert!(res.added_error_b() > 0.0);
    }
}
