//! State tomography: pre-rotation settings, probability simulation,
//! constrained least-squares reconstruction and reporting.
//!
//! Settings apply one of {I, X/2, Y/2, X} to every qubit before a
//! computational-basis measurement. The pre-rotations are the gate set's
//! own rotations, so Y/2 takes |+⟩ to |1⟩ and |−⟩ to |0⟩.
//!
//! The forward model is linear in the Pauli coefficients of ρ and factorizes
//! over qubits, which keeps the cost and its gradient cheap at five qubits.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::gateset::{local_matrix, GateDurations, GateKind, GateLabel};
use crate::noise::NoiseParams;
use crate::qstate::{c, conjugate_local, fidelity_pure, hermitian_eigen, pauli, pauli_digits, pauli_label, ComplexMatrix, DensityMatrix, PureState, C64};

pub const TOMO_GATES: [GateKind; 4] = [GateKind::I, GateKind::X2, GateKind::Y2, GateKind::X];

/// Default repetitions per setting.
pub fn default_shots(n_qubits: usize) -> u64 {
    if n_qubits <= 3 {
        10_000
    } else {
        6_000
    }
}

/// All 4^N settings, qubit 0 varying slowest.
pub fn settings(n_qubits: usize) -> Vec<Vec<GateKind>> {
    (0..1usize << (2 * n_qubits))
        .map(|s| pauli_digits(s, n_qubits).into_iter().map(|d| TOMO_GATES[d]).collect())
        .collect()
}

fn setting_index(setting: &[GateKind]) -> Option<usize> {
    setting.iter().try_fold(0usize, |acc, k| {
        TOMO_GATES.iter().position(|g| g == k).map(|d| 4 * acc + d)
    })
}

/// Per-qubit readout confusion `F[measured][actual]`.
pub type Confusion = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomoDataset {
    pub n_qubits: usize,
    pub settings: Vec<Vec<GateKind>>,
    /// Outcome probabilities per setting, basis-state order.
    pub probabilities: Vec<Vec<f64>>,
    #[serde(default)]
    pub counts: Option<Vec<Vec<u64>>>,
    #[serde(default)]
    pub repetitions: Option<u64>,
    #[serde(default)]
    pub confusion: Option<Vec<Confusion>>,
}

impl TomoDataset {
    /// Dataset from raw counts; probabilities are the normalized counts.
    pub fn from_counts(n_qubits: usize, settings: Vec<Vec<GateKind>>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let reps = counts.first().map(|c| c.iter().sum::<u64>()).unwrap_or(0);
        let probabilities = counts
            .iter()
            .map(|c| c.iter().map(|&k| k as f64 / reps.max(1) as f64).collect())
            .collect();
        let d = Self {
            n_qubits,
            settings,
            probabilities,
            counts: Some(counts),
            repetitions: Some(reps),
            confusion: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_qubits;
        if n == 0 || n > 6 {
            return Err(Error::InvalidParameter("tomography supports 1 to 6 qubits".into()));
        }
        let n_settings = 1usize << (2 * n);
        if self.settings.len() != n_settings || self.probabilities.len() != n_settings {
            return Err(Error::InvalidParameter(format!("expected {n_settings} settings")));
        }
        let mut seen = vec![false; n_settings];
        for s in &self.settings {
            if s.len() != n {
                return Err(Error::InvalidParameter("setting length differs from qubit count".into()));
            }
            let i = setting_index(s).ok_or_else(|| Error::InvalidParameter(format!("setting {s:?} uses a gate outside {{I, X/2, Y/2, X}}")))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParameter(format!("setting {s:?} appears twice")));
            }
        }
        for p in &self.probabilities {
            if p.len() != 1 << n || p.iter().any(|v| !v.is_finite() || *v < -1e-12) {
                return Err(Error::InvalidParameter("each setting needs 2^N non-negative probabilities".into()));
            }
            if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter("setting probabilities must sum to 1".into()));
            }
        }
        if let (Some(counts), Some(reps)) = (&self.counts, self.repetitions) {
            if counts.len() != n_settings || counts.iter().any(|c| c.iter().sum::<u64>() != reps) {
                return Err(Error::InvalidParameter("counts must sum to the repetitions for every setting".into()));
            }
        }
        if let Some(conf) = &self.confusion {
            if conf.len() != n || !conf.iter().all(valid_confusion) {
                return Err(Error::InvalidParameter("confusion needs one column-stochastic 2×2 matrix per qubit".into()));
            }
        }
        Ok(())
    }

    /// Probabilities in model order: per-qubit digits `2·k_q + b_q` for
    /// setting digit `k_q` and outcome bit `b_q`, qubit 0 most significant.
    fn canonical_probabilities(&self) -> Vec<f64> {
        let n = self.n_qubits;
        let mut y = vec![0.0; 1 << (3 * n)];
        for (s, p) in self.settings.iter().zip(&self.probabilities) {
            let digits = pauli_digits(setting_index(s).unwrap(), n);
            for (o, &v) in p.iter().enumerate() {
                let idx = (0..n).fold(0, |acc, q| 8 * acc + 2 * digits[q] + ((o >> (n - 1 - q)) & 1));
                y[idx] = v;
            }
        }
        y
    }
}

fn valid_confusion(f: &Confusion) -> bool {
    (0..2).all(|a| f[0][a] >= 0.0 && f[1][a] >= 0.0 && (f[0][a] + f[1][a] - 1.0).abs() < 1e-12)
}

/// Applies `⊗ factors` to `x`; factor `q` acts on digit `q` (most significant first).
fn kron_apply(factors: &[DMatrix<C64>], x: &[C64]) -> Vec<C64> {
    let mut cur = x.to_vec();
    let n = factors.len();
    let mut in_dims: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
    for q in 0..n {
        let f = &factors[q];
        let (rows, cols) = (f.nrows(), f.ncols());
        let left: usize = in_dims[..q].iter().product();
        let right: usize = in_dims[q + 1..].iter().product();
        let mut out = vec![c(0.0, 0.0); left * rows * right];
        for l in 0..left {
            for r in 0..rows {
                for k in 0..cols {
                    let a = f[(r, k)];
                    if a == c(0.0, 0.0) {
                        continue;
                    }
                    let src = (l * cols + k) * right;
                    let dst = (l * rows + r) * right;
                    for j in 0..right {
                        out[dst + j] += a * cur[src + j];
                    }
                }
            }
        }
        in_dims[q] = rows;
        cur = out;
    }
    cur
}

/// Index of ρ[(r, s)] in the per-qubit interleaved (r_q, s_q) ordering.
fn interleave_table(n: usize) -> Vec<usize> {
    let d = 1 << n;
    let mut t = vec![0; d * d];
    for r in 0..d {
        for s in 0..d {
            let mut idx = 0;
            for q in 0..n {
                let bit = n - 1 - q;
                idx = 4 * idx + 2 * ((r >> bit) & 1) + ((s >> bit) & 1);
            }
            t[r * d + s] = idx;
        }
    }
    t
}

/// Precomputed linear maps between ρ, Pauli coefficients and probabilities.
struct TomoModel {
    n: usize,
    interleave: Vec<usize>,
    /// (r_q, s_q) → Pauli coefficient Tr(ρσ_j) per qubit.
    to_pauli: DMatrix<C64>,
    /// Pauli digit → (r_q, s_q) entries of σ_j.
    from_pauli: DMatrix<C64>,
    /// Pauli coefficients → (setting, outcome) probabilities, per qubit.
    forward: Vec<DMatrix<C64>>,
    forward_t: Vec<DMatrix<C64>>,
    pinv: Vec<DMatrix<C64>>,
}

impl TomoModel {
    fn new(n: usize, confusion: Option<&[Confusion]>) -> Self {
        let mut to_pauli = DMatrix::zeros(4, 4);
        let mut from_pauli = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let p = pauli(j);
            for r in 0..2 {
                for s in 0..2 {
                    // Tr(ρσ) = Σ ρ_rs σ_sr
                    to_pauli[(j, 2 * r + s)] = p[(s, r)];
                    from_pauli[(2 * r + s, j)] = p[(r, s)];
                }
            }
        }
        let forward: Vec<DMatrix<C64>> = (0..n)
            .map(|q| {
                // M[(k, b), j] = ½·Tr(σ_j R_k†|b⟩⟨b|R_k)
                let mut m = DMatrix::<C64>::zeros(8, 4);
                for (k, g) in TOMO_GATES.iter().enumerate() {
                    let r = local_matrix(*g);
                    for b in 0..2 {
                        let row = r.row(b).transpose();
                        let proj = row.conjugate() * row.transpose();
                        // R†|b⟩⟨b|R has entries conj(R_bi)·R_bj.
                        for j in 0..4 {
                            let v = (pauli(j) * &proj).trace() * 0.5;
                            m[(2 * k + b, j)] = c(v.re, 0.0);
                        }
                    }
                }
                if let Some(conf) = confusion {
                    let f = conf[q];
                    let mut mixed = DMatrix::zeros(8, 4);
                    for k in 0..4 {
                        for b in 0..2 {
                            for a in 0..2 {
                                for j in 0..4 {
                                    mixed[(2 * k + b, j)] += m[(2 * k + a, j)] * f[b][a];
                                }
                            }
                        }
                    }
                    m = mixed;
                }
                m
            })
            .collect();
        let forward_t = forward.iter().map(|m| m.transpose()).collect();
        let pinv = forward
            .iter()
            .map(|m| m.clone().pseudo_inverse(1e-12).expect("pseudo-inverse"))
            .collect();
        Self {
            n,
            interleave: interleave_table(n),
            to_pauli,
            from_pauli,
            forward,
            forward_t,
            pinv,
        }
    }

    fn dim(&self) -> usize {
        1 << self.n
    }

    fn pauli_coefficients(&self, rho: &ComplexMatrix) -> Vec<f64> {
        let d = self.dim();
        let mut v = vec![c(0.0, 0.0); d * d];
        for r in 0..d {
            for s in 0..d {
                v[self.interleave[r * d + s]] = rho[(r, s)];
            }
        }
        let blocks = vec![self.to_pauli.clone(); self.n];
        kron_apply(&blocks, &v).iter().map(|z| z.re).collect()
    }

    /// `Σ_P w_P·P` as a d×d matrix.
    fn pauli_sum(&self, w: &[f64]) -> ComplexMatrix {
        let d = self.dim();
        let wc: Vec<C64> = w.iter().map(|&x| c(x, 0.0)).collect();
        let blocks = vec![self.from_pauli.clone(); self.n];
        let v = kron_apply(&blocks, &wc);
        DMatrix::from_fn(d, d, |r, s| v[self.interleave[r * d + s]])
    }

    fn predict(&self, coeffs: &[f64]) -> Vec<f64> {
        let cc: Vec<C64> = coeffs.iter().map(|&x| c(x, 0.0)).collect();
        kron_apply(&self.forward, &cc).iter().map(|z| z.re).collect()
    }

    fn adjoint(&self, resid: &[f64]) -> Vec<f64> {
        let rc: Vec<C64> = resid.iter().map(|&x| c(x, 0.0)).collect();
        kron_apply(&self.forward_t, &rc).iter().map(|z| z.re).collect()
    }

    fn linear_inversion_coeffs(&self, y: &[f64]) -> Vec<f64> {
        let yc: Vec<C64> = y.iter().map(|&x| c(x, 0.0)).collect();
        kron_apply(&self.pinv, &yc).iter().map(|z| z.re).collect()
    }

    fn rho_from_coeffs(&self, coeffs: &[f64]) -> ComplexMatrix {
        self.pauli_sum(coeffs) * c(1.0 / self.dim() as f64, 0.0)
    }

    /// Cost and gradient with respect to ρ (as a Hermitian matrix).
    fn cost_grad_rho(&self, rho: &ComplexMatrix, y: &[f64]) -> (f64, ComplexMatrix) {
        let coeffs: Vec<f64> = self.pauli_coefficients(rho).iter().map(|v| v / self.dim() as f64).collect();
        // Probabilities are linear in Tr(ρP)/2^N·2^N via the per-qubit ½ factors.
        let scale = self.dim() as f64;
        let cp: Vec<f64> = coeffs.iter().map(|v| v * scale).collect();
        let p = self.predict(&cp);
        let resid: Vec<f64> = p.iter().zip(y).map(|(a, b)| a - b).collect();
        let cost = resid.iter().map(|r| r * r).sum();
        // d cost / d Tr(ρP) = 2·Aᵀr; G = Σ_P (…)·P.
        let g: Vec<f64> = self.adjoint(&resid).iter().map(|v| 2.0 * v).collect();
        (cost, self.pauli_sum(&g))
    }
}

/// Diagonal of `U_s ρ U_s†` for every setting, canonical order, optionally
/// through readout confusion.
fn exact_probabilities(rho: &DensityMatrix, n: usize, confusion: Option<&[Confusion]>) -> Vec<Vec<f64>> {
    let locals: Vec<ComplexMatrix> = TOMO_GATES.iter().map(|&g| local_matrix(g)).collect();
    (0..1usize << (2 * n))
        .into_par_iter()
        .map(|s| {
            let mut m = rho.matrix().clone();
            for (q, d) in pauli_digits(s, n).into_iter().enumerate() {
                if d != 0 {
                    m = conjugate_local(&m, &locals[d], &[q], n);
                }
            }
            let mut p: Vec<f64> = (0..1 << n).map(|i| m[(i, i)].re.max(0.0)).collect();
            if let Some(conf) = confusion {
                p = apply_confusion(&p, conf, n);
            }
            let total: f64 = p.iter().sum();
            p.iter().map(|v| v / total).collect()
        })
        .collect()
}

fn apply_confusion(p: &[f64], conf: &[Confusion], n: usize) -> Vec<f64> {
    let factors: Vec<DMatrix<C64>> = conf
        .iter()
        .map(|f| DMatrix::from_fn(2, 2, |b, a| c(f[b][a], 0.0)))
        .collect();
    let pc: Vec<C64> = p.iter().map(|&x| c(x, 0.0)).collect();
    debug_assert_eq!(factors.len(), n);
    kron_apply(&factors, &pc).iter().map(|z| z.re).collect()
}

/// Multinomial draw by sequential binomials.
pub fn sample_counts(p: &[f64], shots: u64, rng: &mut impl Rng) -> Vec<u64> {
    let mut left = shots;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(p.len());
    for (i, &pi) in p.iter().enumerate() {
        let k = if i + 1 == p.len() || left == 0 {
            left
        } else {
            let q = (pi / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).unwrap().sample(rng)
        };
        out.push(k);
        left -= k;
        mass -= pi;
        if mass <= 0.0 {
            mass = f64::MIN_POSITIVE;
        }
    }
    out
}

/// Ideal-pulse tomography data; `shots = None` gives exact probabilities.
pub fn simulate_tomo(rho: &DensityMatrix, shots: Option<u64>, confusion: Option<&[Confusion]>, rng: &mut impl Rng) -> Result<TomoDataset> {
    rho.validate()?;
    let n = rho.dim().trailing_zeros() as usize;
    if 1 << n != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: 1 << n,
            got: rho.dim(),
        });
    }
    if let Some(conf) = confusion {
        if conf.len() != n || !conf.iter().all(valid_confusion) {
            return Err(Error::InvalidParameter("confusion needs one column-stochastic 2×2 matrix per qubit".into()));
        }
    }
    let probs = exact_probabilities(rho, n, confusion);
    let mut data = match shots {
        Some(reps) => {
            let counts = probs.iter().map(|p| sample_counts(p, reps, rng)).collect();
            TomoDataset::from_counts(n, settings(n), counts)?
        }
        None => TomoDataset {
            n_qubits: n,
            settings: settings(n),
            probabilities: probs,
            counts: None,
            repetitions: None,
            confusion: None,
        },
    };
    data.confusion = confusion.map(|c| c.to_vec());
    Ok(data)
}

/// Tomography with noisy pre-rotation pulses under `noise`.
pub fn simulate_tomo_noisy(rho: &DensityMatrix, noise: &NoiseParams, durations: &GateDurations, detunings: &[f64]) -> Result<TomoDataset> {
    let n = noise.n_qubits();
    let probabilities = settings(n)
        .par_iter()
        .map(|s| {
            let gates: Vec<GateLabel> = s
                .iter()
                .enumerate()
                .filter(|(_, k)| **k != GateKind::I)
                .map(|(q, &k)| GateLabel::single(k, q))
                .collect();
            let out = Circuit::from_sequence(&gates, n)?.simulate(rho, noise, durations, detunings)?;
            let p: Vec<f64> = out.populations().iter().map(|v| v.max(0.0)).collect();
            let total: f64 = p.iter().sum();
            Ok(p.iter().map(|v| v / total).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(TomoDataset {
        n_qubits: n,
        settings: settings(n),
        probabilities,
        counts: None,
        repetitions: None,
        confusion: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Stationarity threshold on the gradient's largest component.
    pub gradient_tolerance: f64,
    /// Relative objective decrease over `window` iterations below which the
    /// solve is treated as converged. Needed near rank-deficient optima,
    /// where the factor gradient vanishes slowly.
    pub function_tolerance: f64,
    pub window: usize,
    pub memory: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            gradient_tolerance: 1e-10,
            function_tolerance: 1e-7,
            window: 50,
            memory: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TomoResult {
    pub rho: DensityMatrix,
    /// Fidelity against the target, when one was given.
    pub fidelity: Option<f64>,
    /// Standard deviation over repeated reconstructions, when run.
    pub uncertainty: Option<f64>,
    pub pauli: BTreeMap<String, f64>,
    pub residual: f64,
    pub linear_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Lower-triangular factor packed as (re, im) pairs.
fn pack(l: &ComplexMatrix) -> Vec<f64> {
    let d = l.nrows();
    let mut x = Vec::with_capacity(d * (d + 1));
    for i in 0..d {
        for j in 0..=i {
            x.push(l[(i, j)].re);
            x.push(l[(i, j)].im);
        }
    }
    x
}

fn unpack(x: &[f64], d: usize) -> ComplexMatrix {
    let mut l = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = c(x[k], x[k + 1]);
            k += 2;
        }
    }
    l
}

fn rho_from_factor(l: &ComplexMatrix) -> (ComplexMatrix, f64) {
    let m = l * l.adjoint();
    let t = m.trace().re;
    let mut rho = m * c(1.0 / t, 0.0);
    // Exact Hermiticity.
    rho = (&rho + rho.adjoint()) * c(0.5, 0.0);
    (rho, t)
}

struct Objective<'a> {
    model: &'a TomoModel,
    y: &'a [f64],
}

impl Objective<'_> {
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.model.dim();
        let l = unpack(x, d);
        let (rho, t) = rho_from_factor(&l);
        let (f, g) = self.model.cost_grad_rho(&rho, self.y);
        let gr = (&g * &rho).trace().re;
        let gt = (g - DMatrix::identity(d, d) * c(gr, 0.0)) * &l * c(2.0 / t, 0.0);
        (f, pack(&gt))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Solve {
    x: Vec<f64>,
    f: f64,
    grad: f64,
    iterations: usize,
    plateau: bool,
}

/// L-BFGS with Armijo backtracking.
fn lbfgs(obj: &Objective, mut x: Vec<f64>, opts: &MleOptions) -> Solve {
    let (mut f, mut g) = obj.eval(&x);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mut iters = 0;
    let mut stall = 0;
    let mut history = vec![f];
    let mut plateau = false;
    while iters < opts.max_iterations {
        if inf(&g) <= opts.gradient_tolerance || f <= 1e-28 {
            break;
        }
        iters += 1;
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, yv) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(yv, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(yv)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = dot(&g, &g).sqrt().max(1e-300);
            q.iter_mut().for_each(|v| *v *= (1e-2 / gn).min(1.0));
        }
        for ((s, yv), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            let (fn_, gn) = obj.eval(&xn);
            if fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &yv) > 1e-300 {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        if f - fn_ <= 1e-16 * f.max(1e-300) {
            stall += 1;
        } else {
            stall = 0;
        }
        x = xn;
        f = fn_;
        g = gn;
        history.push(f);
        if stall >= 20 {
            break;
        }
        if opts.window > 0 && history.len() > opts.window {
            let old = history[history.len() - 1 - opts.window];
            if old - f <= opts.function_tolerance * f {
                plateau = true;
                break;
            }
        }
    }
    Solve {
        grad: inf(&g),
        x,
        f,
        iterations: iters,
        plateau,
    }
}

/// Closest positive-definite factor to a Hermitian estimate.
fn seed_factor(rho: &ComplexMatrix) -> ComplexMatrix {
    let d = rho.nrows();
    let (vals, vecs) = hermitian_eigen(rho);
    let eps = 1e-3 / d as f64;
    let clipped: Vec<f64> = vals.iter().map(|v| v.max(0.0) + eps).collect();
    let total: f64 = clipped.iter().sum();
    let diag = DMatrix::from_diagonal(&DVector::from_iterator(d, clipped.iter().map(|v| c(v / total, 0.0))));
    let psd = &vecs * diag * vecs.adjoint();
    let psd = (&psd + psd.adjoint()) * c(0.5, 0.0);
    psd.cholesky().map(|ch| ch.l()).unwrap_or_else(|| DMatrix::identity(d, d))
}

/// Least-squares reconstruction over physical states.
pub fn mle_reconstruct(data: &TomoDataset, target: Option<&PureState>) -> Result<TomoResult> {
    mle_reconstruct_with(data, target, &MleOptions::default())
}

pub fn mle_reconstruct_with(data: &TomoDataset, target: Option<&PureState>, opts: &MleOptions) -> Result<TomoResult> {
    data.validate()?;
    let n = data.n_qubits;
    let model = TomoModel::new(n, data.confusion.as_deref());
    let y = data.canonical_probabilities();
    let lin = model.linear_inversion_coeffs(&y);
    let lin_pred = model.predict(&lin);
    let linear_residual = lin_pred.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
    let rho_lin = model.rho_from_coeffs(&lin);
    let obj = Objective { model: &model, y: &y };
    let d = model.dim();
    let starts = [DMatrix::identity(d, d), seed_factor(&rho_lin)];
    let mut best: Option<Solve> = None;
    for l0 in &starts {
        let run = lbfgs(&obj, pack(l0), opts);
        if best.as_ref().is_none_or(|b| run.f < b.f) {
            best = Some(run);
        }
    }
    let Solve {
        x,
        f: residual,
        grad,
        iterations,
        plateau,
    } = best.unwrap();
    let (rho_m, _) = rho_from_factor(&unpack(&x, d));
    let rho = DensityMatrix::from_matrix_unchecked(rho_m);
    let converged = plateau || grad <= opts.gradient_tolerance || residual <= 1e-28 || residual <= linear_residual * (1.0 + 1e-9) + 1e-24;
    let fidelity = match target {
        Some(t) => Some(fidelity_pure(t, &rho)?),
        None => None,
    };
    Ok(TomoResult {
        pauli: pauli_representation(&rho),
        rho,
        fidelity,
        uncertainty: None,
        residual,
        linear_residual,
        converged,
        iterations,
    })
}

/// `c_P = Tr(ρP)` keyed by Pauli label, qubit 0 first.
pub fn pauli_representation(rho: &DensityMatrix) -> BTreeMap<String, f64> {
    let n = rho.dim().trailing_zeros() as usize;
    let model = TomoModel {
        n,
        interleave: interleave_table(n),
        ..TomoModel::new(n.max(1), None)
    };
    model
        .pauli_coefficients(rho.matrix())
        .into_iter()
        .enumerate()
        .map(|(i, v)| (pauli_label(&pauli_digits(i, n)), v))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepeatedTomo {
    pub fidelities: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Reconstruction of the first repetition, carrying `mean ± std`.
    pub result: TomoResult,
}

/// Independent shot-sampled reconstructions of `rho` against `target`.
pub fn repeated_reconstruction(rho: &DensityMatrix, target: &PureState, shots: u64, repeats: usize, rng: &mut impl Rng) -> Result<RepeatedTomo> {
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be ≥ 1".into()));
    }
    let datasets = (0..repeats)
        .map(|_| simulate_tomo(rho, Some(shots), None, rng))
        .collect::<Result<Vec<_>>>()?;
    let results = datasets
        .par_iter()
        .map(|d| mle_reconstruct(d, Some(target)))
        .collect::<Result<Vec<_>>>()?;
    let fidelities: Vec<f64> = results.iter().map(|r| r.fidelity.unwrap()).collect();
    let mean = fidelities.iter().sum::<f64>() / repeats as f64;
    let std = if repeats > 1 {
        (fidelities.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut result = results.into_iter().next().unwrap();
    result.fidelity = Some(mean);
    result.uncertainty = Some(std);
    Ok(RepeatedTomo {
        fidelities,
        mean,
        std,
        result,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GhzDiagnostics {
    pub fidelity: f64,
    /// `|ρ_{0…0,1…1}|² / (ρ_{0…0}·ρ_{1…1})`; `None` when a corner population vanishes.
    pub offdiag_ratio: Option<f64>,
    pub genuine_entanglement: bool,
}

pub fn ghz_diagnostics(rho: &DensityMatrix, n_qubits: usize) -> Result<GhzDiagnostics> {
    let d = 1usize << n_qubits;
    if rho.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: rho.dim(),
        });
    }
    let fidelity = fidelity_pure(&PureState::ghz(n_qubits), rho)?;
    let m = rho.matrix();
    let den = m[(0, 0)].re * m[(d - 1, d - 1)].re;
    let offdiag_ratio = (den > 1e-15).then(|| m[(0, d - 1)].norm_sqr() / den);
    Ok(GhzDiagnostics {
        fidelity,
        offdiag_ratio,
        genuine_entanglement: fidelity > 0.5 + 1e-9,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::trace_distance;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn bell() -> PureState {
        PureState::ghz(2)
    }

    fn plus(sign: f64) -> DensityMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        PureState::new(DVector::from_vec(vec![c(h, 0.0), c(sign * h, 0.0)])).unwrap().to_density()
    }

    fn random_density(n: usize, rank: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        crate::qstate::random_density(1 << n, rank, rng)
    }

    #[test]
    fn ground_all_identity_setting() {
        let d = simulate_tomo(&DensityMatrix::ground(2), None, None, &mut rng()).unwrap();
        assert_eq!(d.settings[0], vec![GateKind::I, GateKind::I]);
        assert_abs_diff_eq!(d.probabilities[0][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn y2_rotation_convention() {
        let y2 = setting_index(&[GateKind::Y2]).unwrap();
        let p = simulate_tomo(&plus(1.0), None, None, &mut rng()).unwrap();
        assert_abs_diff_eq!(p.probabilities[y2][1], 1.0, epsilon = 1e-12);
        let m = simulate_tomo(&plus(-1.0), None, None, &mut rng()).unwrap();
        assert_abs_diff_eq!(m.probabilities[y2][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bell_x2_x2_probabilities() {
        let rho = bell().to_density();
        let data = simulate_tomo(&rho, None, None, &mut rng()).unwrap();
        let i = setting_index(&[GateKind::X2, GateKind::X2]).unwrap();
        let u = crate::qstate::tensor(&local_matrix(GateKind::X2), &local_matrix(GateKind::X2));
        let psi = &u * bell().amplitudes();
        for b in 0..4 {
            assert_abs_diff_eq!(data.probabilities[i][b], psi[b].norm_sqr(), epsilon = 1e-12);
        }
        // X/2⊗X/2 takes the Bell state to −i(|01⟩ + |10⟩)/√2.
        assert_abs_diff_eq!(data.probabilities[i][1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(data.probabilities[i][2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn bell_round_trip() {
        let data = simulate_tomo(&bell().to_density(), None, None, &mut rng()).unwrap();
        let r = mle_reconstruct(&data, Some(&bell())).unwrap();
        assert!(r.fidelity.unwrap() >= 0.9999, "{}", r.fidelity.unwrap());
        r.rho.validate().unwrap();
    }

    #[test]
    fn maximally_mixed_fixed_point() {
        for n in 1..=3 {
            let mm = DensityMatrix::maximally_mixed(1 << n);
            let r = mle_reconstruct(&simulate_tomo(&mm, None, None, &mut rng()).unwrap(), None).unwrap();
            assert!(crate::qstate::max_abs(&(r.rho.matrix() - mm.matrix())) < 1e-6);
        }
    }

    #[test]
    fn random_states_round_trip() {
        let mut g = rng();
        for n in 1..=3 {
            for rank in [1, 2, 1 << n] {
                let rho = random_density(n, rank, &mut g);
                let r = mle_reconstruct(&simulate_tomo(&rho, None, None, &mut g).unwrap(), None).unwrap();
                let td = trace_distance(&r.rho, &rho);
                assert!(td < 1e-4, "n={n} rank={rank} td={td}");
                r.rho.validate().unwrap();
            }
        }
    }

    #[test]
    fn residual_versus_linear_inversion() {
        let mut g = rng();
        let rho = random_density(2, 4, &mut g);
        let data = simulate_tomo(&rho, Some(20_000), None, &mut g).unwrap();
        let r = mle_reconstruct(&data, None).unwrap();
        assert!(r.residual >= r.linear_residual - 1e-12);
        // A full-rank state with many shots has a physical linear inversion.
        assert!((r.residual - r.linear_residual).abs() <= 1e-6 * r.linear_residual.max(1e-12) + 1e-12, "{} vs {}", r.residual, r.linear_residual);

        let pure = simulate_tomo(&bell().to_density(), Some(2000), None, &mut g).unwrap();
        let rp = mle_reconstruct(&pure, Some(&bell())).unwrap();
        assert!(rp.residual >= rp.linear_residual - 1e-12);
        rp.rho.validate().unwrap();
    }

    #[test]
    fn confusion_is_modelled() {
        let conf = vec![[[0.98, 0.05], [0.02, 0.95]]; 2];
        let mut g = rng();
        let rho = random_density(2, 2, &mut g);
        let data = simulate_tomo(&rho, None, Some(&conf), &mut g).unwrap();
        let r = mle_reconstruct(&data, None).unwrap();
        assert!(trace_distance(&r.rho, &rho) < 1e-4);
        let bad = vec![[[0.9, 0.0], [0.0, 0.9]]; 2];
        assert!(simulate_tomo(&rho, None, Some(&bad), &mut g).is_err());
    }

    #[test]
    fn counts_sum_to_shots() {
        let mut g = rng();
        let data = simulate_tomo(&bell().to_density(), Some(1000), None, &mut g).unwrap();
        for c in data.counts.as_ref().unwrap() {
            assert_eq!(c.iter().sum::<u64>(), 1000);
        }
        assert_eq!(data.repetitions, Some(1000));
        let mut broken = data.clone();
        broken.settings[3] = broken.settings[2].clone();
        assert!(broken.validate().is_err());
    }

    #[test]
    fn bell_pauli_coefficients() {
        let p = pauli_representation(&bell().to_density());
        assert_abs_diff_eq!(p["II"], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p["XX"], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p["YY"], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p["ZZ"], 1.0, epsilon = 1e-12);
        let mm = pauli_representation(&DensityMatrix::maximally_mixed(8));
        assert!(mm.iter().all(|(k, v)| if k == "III" { (*v - 1.0).abs() < 1e-12 } else { v.abs() < 1e-12 }));
    }

    #[test]
    fn purity_identity() {
        let mut g = rng();
        for n in 1..=3 {
            let rho = random_density(n, 2, &mut g);
            let sum: f64 = pauli_representation(&rho).values().map(|v| v * v).sum();
            assert_abs_diff_eq!(sum / (1 << n) as f64, rho.purity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn pauli_coefficients_match_traces() {
        let mut g = rng();
        let rho = random_density(2, 3, &mut g);
        let rep = pauli_representation(&rho);
        for i in 0..16 {
            let digits = pauli_digits(i, 2);
            let direct = rho.expectation(&crate::qstate::pauli_string(&digits)).re;
            assert_abs_diff_eq!(rep[&pauli_label(&digits)], direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn ghz_diagnostics_cases() {
        for n in 2..=5 {
            let d = ghz_diagnostics(&PureState::ghz(n).to_density(), n).unwrap();
            assert_abs_diff_eq!(d.fidelity, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(d.offdiag_ratio.unwrap(), 1.0, epsilon = 1e-12);
            assert!(d.genuine_entanglement);
        }
        let mut m = PureState::ghz(3).to_density().into_matrix();
        m[(0, 7)] = c(0.0, 0.0);
        m[(7, 0)] = c(0.0, 0.0);
        let dephased = DensityMatrix::new(m).unwrap();
        let d = ghz_diagnostics(&dephased, 3).unwrap();
        assert_abs_diff_eq!(d.fidelity, 0.5, epsilon = 1e-12);
        assert!(!d.genuine_entanglement);
        assert_eq!(ghz_diagnostics(&DensityMatrix::ground(3), 3).unwrap().offdiag_ratio, None);
    }

    #[test]
    fn repeated_reconstruction_spread() {
        let mut g = rng();
        let rep = repeated_reconstruction(&bell().to_density(), &bell(), 10_000, 10, &mut g).unwrap();
        assert_eq!(rep.fidelities.len(), 10);
        assert!(rep.std > 0.0 && rep.std < 0.01);
        assert!(rep.mean > 0.99);
    }

    #[test]
    fn noisy_pulses_without_noise_match_ideal() {
        let rho = bell().to_density();
        let ideal = simulate_tomo(&rho, None, None, &mut rng()).unwrap();
        let noisy = simulate_tomo_noisy(&rho, &NoiseParams::noiseless(2), &GateDurations::uniform(2, 20.0, 40.0), &[0.0; 2]).unwrap();
        for (a, b) in ideal.probabilities.iter().zip(&noisy.probabilities) {
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }
}
