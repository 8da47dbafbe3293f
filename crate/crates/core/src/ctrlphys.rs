//! Continuous-time control physics: adiabatic CZ trajectories through the
//! |11⟩/|02⟩ crossing, the two-gate Ramsey leakage filter and Z-line
//! step-response predistortion.
//!
//! Detunings are in MHz and times in ns. A trajectory sample `x` is the
//! tuned qubit's detuning from the crossing, `x = E₀₂ − E₁₁`, so the
//! {|01⟩,|10⟩} splitting is `x − η`.

use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::MHZ_NS_TO_RAD;
use crate::qstate::{c, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    RaisedCosine,
    Tanh,
    Square,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub kind: ShapeKind,
    /// Fraction of the duration spent at the hold detuning.
    pub hold_fraction: f64,
    /// Idle detuning from the crossing, MHz.
    pub idle: f64,
    /// Hold detuning from the crossing, MHz.
    pub hold: f64,
    #[serde(default)]
    pub space: RampSpace,
}

/// Coordinate in which the envelope interpolates between idle and hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampSpace {
    Detuning,
    /// `θ = atan2(2√2·g, x)` of the {|11⟩,|02⟩} pair.
    #[default]
    MixingAngle,
}

impl PulseShape {
    /// Normalized excursion in [0, 1] at fractional time `u`.
    pub fn envelope(&self, u: f64) -> f64 {
        if self.kind == ShapeKind::Square {
            return 1.0;
        }
        let r = 0.5 * (1.0 - self.hold_fraction);
        if r <= 0.0 {
            return 1.0;
        }
        let v = if u < r {
            u / r
        } else if u > 1.0 - r {
            (1.0 - u) / r
        } else {
            return 1.0;
        };
        let v = v.clamp(0.0, 1.0);
        match self.kind {
            ShapeKind::RaisedCosine => 0.5 * (1.0 - (std::f64::consts::PI * v).cos()),
            ShapeKind::Tanh => {
                let k = 3.0f64;
                ((k * (2.0 * v - 1.0)).tanh() + k.tanh()) / (2.0 * k.tanh())
            }
            ShapeKind::Square => 1.0,
        }
    }

    pub fn detuning(&self, u: f64, g: f64) -> f64 {
        let e = self.envelope(u);
        if self.space == RampSpace::Detuning || g == 0.0 || e == 0.0 {
            return self.idle + (self.hold - self.idle) * e;
        }
        let w = 2.0 * std::f64::consts::SQRT_2 * g.abs();
        let (ti, th) = (w.atan2(self.idle), w.atan2(self.hold));
        let theta = ti + (th - ti) * e;
        w * theta.cos() / theta.sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzTrajectory {
    pub duration: f64,
    pub sample_dt: f64,
    /// Detuning from the crossing at `t = i·sample_dt`, MHz.
    pub samples: Vec<f64>,
    pub g: f64,
    pub eta: f64,
    pub shape: PulseShape,
}

pub const DEFAULT_DT: f64 = 0.01;

impl CzTrajectory {
    pub fn from_shape(shape: PulseShape, duration: f64, g: f64, eta: f64, sample_dt: f64) -> Result<Self> {
        if !(duration > 0.0) || !(sample_dt > 0.0) {
            return Err(Error::InvalidParameter("duration and sample spacing must be > 0".into()));
        }
        let n = (duration / sample_dt).round().max(1.0) as usize;
        let dt = duration / n as f64;
        let samples = (0..=n).map(|i| shape.detuning(i as f64 / n as f64, g)).collect();
        let t = Self {
            duration,
            sample_dt: dt,
            samples,
            g,
            eta,
            shape,
        };
        t.validate()?;
        Ok(t)
    }

    /// Constant detuning `x` for `duration`.
    pub fn square(x: f64, duration: f64, g: f64, eta: f64) -> Result<Self> {
        let shape = PulseShape {
            kind: ShapeKind::Square,
            hold_fraction: 1.0,
            idle: x,
            hold: x,
            space: RampSpace::Detuning,
        };
        Self::from_shape(shape, duration, g, eta, duration)
    }

    pub fn idle(&self) -> f64 {
        self.shape.idle
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || self.samples.len() < 2 {
            return Err(Error::InvalidParameter("trajectory needs duration > 0 and ≥ 2 samples".into()));
        }
        if self.samples.iter().any(|x| !x.is_finite()) || !self.g.is_finite() || !self.eta.is_finite() {
            return Err(Error::InvalidParameter("trajectory values must be finite".into()));
        }
        let (first, last) = (self.samples[0], *self.samples.last().unwrap());
        if self.shape.kind != ShapeKind::Square && ((first - self.idle()).abs() > 1e-9 || (last - self.idle()).abs() > 1e-9) {
            return Err(Error::InvalidParameter("trajectory must start and end at the idle detuning".into()));
        }
        Ok(())
    }

    /// Linear interpolation of the samples.
    pub fn detuning_at(&self, t: f64) -> f64 {
        let f = (t / self.sample_dt).clamp(0.0, (self.samples.len() - 1) as f64);
        let i = (f.floor() as usize).min(self.samples.len() - 2);
        let w = f - i as f64;
        self.samples[i] * (1.0 - w) + self.samples[i + 1] * w
    }

    /// Same shape stretched to `duration`.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::from_shape(self.shape.clone(), duration, self.g, self.eta, self.sample_dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    /// Eigenstates of the idle Hamiltonian.
    #[default]
    Dressed,
    Bare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CzResult {
    pub leakage: f64,
    pub phi00: f64,
    pub phi01: f64,
    pub phi10: f64,
    pub phi11: f64,
    pub phi_cz: f64,
    /// Largest deviation of the state norm over the trajectory.
    pub norm_drift: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub detuning: f64,
    pub p01: f64,
    pub p10: f64,
    pub p11: f64,
    pub p02: f64,
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = phi.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

/// Distance between two angles modulo 2π.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    wrap_phase(a - b).abs()
}

type C2 = Matrix2<C64>;

/// Subspace Hamiltonians (MHz) at detuning `x`: {|01⟩,|10⟩} and {|11⟩,|02⟩}.
fn hamiltonians(x: f64, g: f64, eta: f64) -> ([f64; 3], [f64; 3]) {
    // [diag0, diag1, offdiag]
    ([0.0, x - eta, g], [x - eta, 2.0 * x - eta, std::f64::consts::SQRT_2 * g])
}

/// exp(−i·2π·10⁻³·H·h) for a real symmetric 2×2 H.
fn expm2(h: [f64; 3], step: f64) -> C2 {
    let th = MHZ_NS_TO_RAD * step;
    let m = 0.5 * (h[0] + h[1]);
    let d = 0.5 * (h[0] - h[1]);
    let off = h[2];
    let w = (d * d + off * off).sqrt();
    let (cs, sn) = ((w * th).cos(), (w * th).sin());
    let s = if w > 0.0 { sn / w } else { th };
    let ph = C64::from_polar(1.0, -m * th);
    let i = c(0.0, 1.0);
    C2::new(
        ph * (c(cs, 0.0) - i * s * d),
        ph * (-i * s * off),
        ph * (-i * s * off),
        ph * (c(cs, 0.0) + i * s * d),
    )
}

/// Idle eigenvalues and eigenvectors ordered so column 0 is the state
/// adiabatically connected to basis state 0.
fn idle_basis(h: [f64; 3], basis: Basis) -> ([f64; 2], C2) {
    if basis == Basis::Bare || h[2] == 0.0 {
        return ([h[0], h[1]], C2::identity());
    }
    let m = nalgebra::Matrix2::new(h[0], h[2], h[2], h[1]);
    let e = SymmetricEigen::new(m);
    let (mut i0, mut i1) = (0, 1);
    if e.eigenvectors[(0, 1)].abs() > e.eigenvectors[(0, 0)].abs() {
        std::mem::swap(&mut i0, &mut i1);
    }
    let mut v = C2::zeros();
    for (col, idx) in [(0, i0), (1, i1)] {
        // Positive overlap with the bare state of the same label.
        let sign = e.eigenvectors[(col, idx)].signum();
        for r in 0..2 {
            v[(r, col)] = c(sign * e.eigenvectors[(r, idx)], 0.0);
        }
    }
    ([e.eigenvalues[i0], e.eigenvalues[i1]], v)
}

struct Propagators {
    single: C2,
    double: C2,
    e_single: [f64; 2],
    e_double: [f64; 2],
    norm_drift: f64,
}

fn propagate(traj: &CzTrajectory, dt: f64, basis: Basis, mut trace: Option<(&mut Vec<TracePoint>, usize)>) -> Result<Propagators> {
    traj.validate()?;
    if !(dt > 0.0) || dt > traj.sample_dt + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "dt = {dt} must be positive and at most the sample spacing {}",
            traj.sample_dt
        )));
    }
    let n = (traj.duration / dt).ceil() as usize;
    let h = traj.duration / n as f64;
    let mut us = C2::identity();
    let mut ud = C2::identity();
    let mut drift: f64 = 0.0;
    let (hs0, hd0) = hamiltonians(traj.idle(), traj.g, traj.eta);
    let (es, vs) = idle_basis(hs0, basis);
    let (ed, vd) = idle_basis(hd0, basis);
    for k in 0..n {
        let x = traj.detuning_at((k as f64 + 0.5) * h);
        let (hs, hd) = hamiltonians(x, traj.g, traj.eta);
        us = expm2(hs, h) * us;
        ud = expm2(hd, h) * ud;
        let col_norm = |u: &C2, j: usize| u[(0, j)].norm_sqr() + u[(1, j)].norm_sqr();
        for j in 0..2 {
            drift = drift.max((col_norm(&us, j) - 1.0).abs()).max((col_norm(&ud, j) - 1.0).abs());
        }
        if let Some((buf, every)) = trace.as_mut() {
            if k % *every == 0 || k + 1 == n {
                let s = vs.adjoint() * us * vs;
                let d = vd.adjoint() * ud * vd;
                buf.push(TracePoint {
                    t: (k + 1) as f64 * h,
                    detuning: x,
                    p01: s[(0, 0)].norm_sqr(),
                    p10: s[(1, 1)].norm_sqr(),
                    p11: d[(0, 0)].norm_sqr(),
                    p02: d[(1, 0)].norm_sqr(),
                });
            }
        }
    }
    if drift > 1e-8 {
        return Err(Error::Numerical(format!("propagator unitarity drift {drift:.2e} exceeds 1e-8")));
    }
    Ok(Propagators {
        single: vs.adjoint() * us * vs,
        double: vd.adjoint() * ud * vd,
        e_single: es,
        e_double: ed,
        norm_drift: drift,
    })
}

fn result_from(p: &Propagators, duration: f64) -> CzResult {
    let rel = |amp: C64, e: f64| wrap_phase(amp.arg() + MHZ_NS_TO_RAD * e * duration);
    let phi00 = 0.0;
    let phi01 = rel(p.single[(0, 0)], p.e_single[0]);
    let phi10 = rel(p.single[(1, 1)], p.e_single[1]);
    let phi11 = rel(p.double[(0, 0)], p.e_double[0]);
    CzResult {
        leakage: p.double[(1, 0)].norm_sqr(),
        phi00,
        phi01,
        phi10,
        phi11,
        phi_cz: wrap_phase(phi11 + phi00 - phi01 - phi10),
        norm_drift: p.norm_drift,
    }
}

/// Integrates the trajectory and reports leakage and phases relative to idling.
pub fn evolve_cz(traj: &CzTrajectory, dt: f64) -> Result<CzResult> {
    evolve_cz_in(traj, dt, Basis::Dressed)
}

pub fn evolve_cz_in(traj: &CzTrajectory, dt: f64, basis: Basis) -> Result<CzResult> {
    Ok(result_from(&propagate(traj, dt, basis, None)?, traj.duration))
}

/// Result plus populations recorded every `every` steps.
pub fn evolve_cz_trace(traj: &CzTrajectory, dt: f64, every: usize) -> Result<(CzResult, Vec<TracePoint>)> {
    let mut buf = Vec::new();
    let p = propagate(traj, dt, Basis::Dressed, Some((&mut buf, every.max(1))))?;
    Ok((result_from(&p, traj.duration), buf))
}

/// Full two-transmon evolution with three levels each; validates the
/// subspace factorization. Both transmons share the nonlinearity.
pub fn evolve_cz_full(traj: &CzTrajectory, dt: f64) -> Result<CzResult> {
    traj.validate()?;
    let idx = |na: usize, nb: usize| 3 * na + nb;
    let ham = |x: f64| {
        let fa = x - traj.eta;
        let mut h = DMatrix::<f64>::zeros(9, 9);
        for na in 0..3usize {
            for nb in 0..3usize {
                let e = na as f64 * fa
                    + (na * na.saturating_sub(1)) as f64 / 2.0 * traj.eta
                    + (nb * nb.saturating_sub(1)) as f64 / 2.0 * traj.eta;
                h[(idx(na, nb), idx(na, nb))] = e;
                if na + 1 < 3 && nb >= 1 {
                    let v = traj.g * (((na + 1) * nb) as f64).sqrt();
                    h[(idx(na + 1, nb - 1), idx(na, nb))] = v;
                    h[(idx(na, nb), idx(na + 1, nb - 1))] = v;
                }
            }
        }
        h
    };
    let n = (traj.duration / dt).ceil() as usize;
    let step = traj.duration / n as f64;
    let mut u = DMatrix::<C64>::identity(9, 9);
    for k in 0..n {
        let e = SymmetricEigen::new(ham(traj.detuning_at((k as f64 + 0.5) * step)));
        let v = e.eigenvectors.map(|x| c(x, 0.0));
        let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| C64::from_polar(1.0, -MHZ_NS_TO_RAD * l * step)));
        u = &v * d * v.transpose() * u;
    }
    let e0 = SymmetricEigen::new(ham(traj.idle()));
    // Dressed idle state with the largest overlap on each bare state.
    let dressed = |bare: usize| {
        let j = (0..9)
            .max_by(|&a, &b| e0.eigenvectors[(bare, a)].abs().total_cmp(&e0.eigenvectors[(bare, b)].abs()))
            .unwrap();
        let sign = e0.eigenvectors[(bare, j)].signum();
        let vec: Vec<C64> = (0..9).map(|r| c(sign * e0.eigenvectors[(r, j)], 0.0)).collect();
        (nalgebra::DVector::from_vec(vec), e0.eigenvalues[j])
    };
    let amp = |a: &nalgebra::DVector<C64>, b: &nalgebra::DVector<C64>| (a.adjoint() * &u * b)[(0, 0)];
    let (s01, e01) = dressed(idx(0, 1));
    let (s10, e10) = dressed(idx(1, 0));
    let (s11, e11) = dressed(idx(1, 1));
    let (s02, _) = dressed(idx(2, 0));
    let rel = |a: C64, e: f64| wrap_phase(a.arg() + MHZ_NS_TO_RAD * e * traj.duration);
    let phi01 = rel(amp(&s01, &s01), e01);
    let phi10 = rel(amp(&s10, &s10), e10);
    let phi11 = rel(amp(&s11, &s11), e11);
    let drift = (0..9)
        .map(|j| (u.column(j).norm_squared() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(CzResult {
        leakage: amp(&s02, &s11).norm_sqr(),
        phi00: 0.0,
        phi01,
        phi10,
        phi11,
        phi_cz: wrap_phase(phi11 - phi01 - phi10),
        norm_drift: drift,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzDesign {
    pub kind: ShapeKind,
    pub hold_fraction: f64,
    /// Idle detuning from the crossing, MHz.
    pub idle: f64,
    pub g: f64,
    pub eta: f64,
    pub duration: f64,
    pub sample_dt: f64,
    pub dt: f64,
    #[serde(default)]
    pub space: RampSpace,
}

impl CzDesign {
    /// 43 ns raised-cosine (in mixing angle) design with g = 30 MHz, η = −214 MHz and an 800 MHz idle splitting.
    pub fn reference() -> Self {
        Self {
            kind: ShapeKind::RaisedCosine,
            hold_fraction: 0.0,
            idle: 800.0 - 214.0,
            g: 30.0,
            eta: -214.0,
            duration: 43.0,
            sample_dt: 0.1,
            dt: DEFAULT_DT,
            space: RampSpace::MixingAngle,
        }
    }

    pub fn trajectory(&self, hold: f64) -> Result<CzTrajectory> {
        let shape = PulseShape {
            kind: self.kind,
            hold_fraction: self.hold_fraction,
            idle: self.idle,
            hold,
            space: self.space,
        };
        CzTrajectory::from_shape(shape, self.duration, self.g, self.eta, self.sample_dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedCz {
    pub trajectory: CzTrajectory,
    pub result: CzResult,
}

/// Searches the hold detuning so the conditional phase equals `target_phase`
/// (mod 2π) within 1e-3 rad.
pub fn tune_cz(design: &CzDesign, target_phase: f64) -> Result<TunedCz> {
    if !(design.duration > 0.0) {
        return Err(Error::InvalidParameter("duration must be > 0".into()));
    }
    let lowest = -2.0 * design.eta.abs() - 4.0 * design.g.abs();
    let n_grid = 600;
    let holds: Vec<f64> = (0..=n_grid)
        .map(|i| design.idle + (lowest - design.idle) * i as f64 / n_grid as f64)
        .collect();
    let eval = |hold: f64| -> Result<CzResult> { evolve_cz(&design.trajectory(hold)?, design.dt) };
    let results = holds.par_iter().map(|&h| eval(h)).collect::<Result<Vec<_>>>()?;
    // Unwrap the conditional phase along the grid from the idle end.
    let mut unwrapped = vec![results[0].phi_cz];
    for r in &results[1..] {
        let prev = *unwrapped.last().unwrap();
        unwrapped.push(prev + wrap_phase(r.phi_cz - prev));
    }
    let target = target_phase.abs();
    let Some(i) = (1..unwrapped.len()).find(|&i| unwrapped[i].abs() >= target) else {
        let (j, best) = unwrapped
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        return Err(Error::NonConvergence(format!(
            "conditional phase {target_phase} unreachable; best |φ| = {:.4} at hold {:.2} MHz",
            best.abs(),
            holds[j]
        )));
    };
    let sign = unwrapped[i].signum();
    let goal = sign * target;
    let (mut lo, mut hi) = (holds[i - 1], holds[i]);
    let (mut f_lo, mut base) = (unwrapped[i - 1] - goal, unwrapped[i - 1]);
    let mut best = (holds[i], results[i]);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let r = eval(mid)?;
        let phi = base + wrap_phase(r.phi_cz - base);
        let f = phi - goal;
        best = (mid, r);
        if f.abs() < 1e-7 {
            break;
        }
        if f.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f;
            base = phi;
        } else {
            hi = mid;
        }
    }
    let result = best.1;
    if phase_distance(result.phi_cz, target_phase) > 1e-3 {
        return Err(Error::NonConvergence(format!(
            "best conditional phase {:.5} misses target {target_phase}",
            result.phi_cz
        )));
    }
    Ok(TunedCz {
        trajectory: design.trajectory(best.0)?,
        result,
    })
}

/// Leakage of a fixed shape stretched to each duration.
pub fn leakage_vs_duration(traj: &CzTrajectory, durations: &[f64], dt: f64) -> Result<Vec<f64>> {
    durations
        .par_iter()
        .map(|&d| Ok(evolve_cz(&traj.with_duration(d)?, dt)?.leakage))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamseyFilter {
    pub delays: Vec<f64>,
    pub p11: Vec<f64>,
    pub delta_p: f64,
    pub leakage_estimate: f64,
    /// Dominant fringe period, ns; `None` without a visible fringe.
    pub period: Option<f64>,
}

/// Two CZ gates separated by an idle delay, starting from |11⟩.
pub fn ramsey_error_filter(traj: &CzTrajectory, delays: &[f64], dt: f64) -> Result<RamseyFilter> {
    let p = propagate(traj, dt, Basis::Dressed, None)?;
    ramsey_from_gate(&p.double, p.e_double[1] - p.e_double[0], delays)
}

/// Filter for an arbitrary gate on {|11⟩,|02⟩}; `splitting` is the idle
/// `E₀₂ − E₁₁` in MHz.
pub fn ramsey_from_gate(gate: &Matrix2<C64>, splitting: f64, delays: &[f64]) -> Result<RamseyFilter> {
    if delays.len() < 8 {
        return Err(Error::InvalidParameter("delay grid needs at least 8 points".into()));
    }
    let span = delays.iter().copied().fold(f64::NEG_INFINITY, f64::max) - delays.iter().copied().fold(f64::INFINITY, f64::min);
    let expected_period = 1e3 / splitting.abs();
    if !(span >= 3.0 * expected_period) {
        return Err(Error::InvalidParameter(format!(
            "delay grid spans {span:.3} ns, less than 3 fringe periods of {expected_period:.3} ns"
        )));
    }
    let p11: Vec<f64> = delays
        .iter()
        .map(|&tau| {
            let idle = C2::new(c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), C64::from_polar(1.0, -MHZ_NS_TO_RAD * splitting * tau));
            (gate * idle * gate)[(0, 0)].norm_sqr()
        })
        .collect();
    let max = p11.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = p11.iter().copied().fold(f64::INFINITY, f64::min);
    let delta_p = max - min;
    let period = (delta_p > 1e-12).then(|| dominant_period(delays, &p11, span));
    Ok(RamseyFilter {
        delays: delays.to_vec(),
        p11,
        delta_p,
        leakage_estimate: delta_p / 4.0,
        period,
    })
}

/// Period of the strongest Fourier component, scanning frequency finely.
fn dominant_period(t: &[f64], y: &[f64], span: f64) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let min_dt = t.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min);
    let f_max = 0.5 / min_dt;
    let f_min = 1.0 / span;
    let power = |f: f64| {
        let (mut re, mut im) = (0.0, 0.0);
        for (&ti, &yi) in t.iter().zip(y) {
            let a = 2.0 * std::f64::consts::PI * f * ti;
            re += (yi - mean) * a.cos();
            im += (yi - mean) * a.sin();
        }
        re * re + im * im
    };
    let steps = 20_000;
    let df = (f_max - f_min) / steps as f64;
    let (mut best_f, mut best_p) = (f_min, -1.0);
    for i in 0..=steps {
        let f = f_min + i as f64 * df;
        let p = power(f);
        if p > best_p {
            best_p = p;
            best_f = f;
        }
    }
    // Golden-section polish inside the neighbouring bins.
    let (mut a, mut b) = (best_f - df, best_f + df);
    for _ in 0..60 {
        let m1 = a + 0.382 * (b - a);
        let m2 = a + 0.618 * (b - a);
        if power(m1) > power(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    1.0 / (0.5 * (a + b))
}

/// Two-timescale Z-line step response: output of a unit step is
/// `1 + a1·e^{−t/τ1} + a2·e^{−t/τ2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepResponse {
    pub a1: f64,
    pub a2: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl StepResponse {
    pub fn identity() -> Self {
        Self {
            a1: 0.0,
            a2: 0.0,
            tau1: 100.0,
            tau2: 5.0,
        }
    }

    /// Timescales of 100 ns and 5 ns with percent-level ripple.
    pub fn typical() -> Self {
        Self {
            a1: 0.01,
            a2: 0.03,
            tau1: 100.0,
            tau2: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau1 > 0.0 && self.tau2 > 0.0) || !self.a1.is_finite() || !self.a2.is_finite() {
            return Err(Error::InvalidParameter("step response needs finite amplitudes and τ > 0".into()));
        }
        Ok(())
    }

    pub fn ripple(&self, t: f64) -> f64 {
        self.a1 * (-t / self.tau1).exp() + self.a2 * (-t / self.tau2).exp()
    }
}

/// Phase trace `2π·amplitude·∫₀ᵗ ripple` (amplitude in GHz, t in ns).
pub fn step_phase_response(sr: &StepResponse, amplitude_ghz: f64, t_grid: &[f64]) -> Result<Vec<f64>> {
    sr.validate()?;
    let integral = |t: f64| -> f64 {
        [(sr.a1, sr.tau1), (sr.a2, sr.tau2)]
            .iter()
            .map(|&(a, tau)| -a * tau * (-t / tau).exp_m1())
            .sum()
    };
    Ok(t_grid
        .iter()
        .map(|&t| 2.0 * std::f64::consts::PI * amplitude_ghz * integral(t.max(0.0)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub dt: f64,
    pub values: Vec<f64>,
}

fn filter_poles(sr: &StepResponse, dt: f64) -> Result<[f64; 2]> {
    sr.validate()?;
    if !(dt > 0.0) || dt >= sr.tau1.min(sr.tau2) {
        return Err(Error::InvalidParameter(format!(
            "sample spacing {dt} ns does not resolve τ = {} ns",
            sr.tau1.min(sr.tau2)
        )));
    }
    Ok([(-dt / sr.tau1).exp(), (-dt / sr.tau2).exp()])
}

/// Discrete line response `H(z) = 1 + Σ aᵢ(1 − z⁻¹)/(1 − αᵢz⁻¹)`, `αᵢ = e^{−dt/τᵢ}`.
pub fn apply_step_response(w: &Waveform, sr: &StepResponse) -> Result<Waveform> {
    let alpha = filter_poles(sr, w.dt)?;
    let amps = [sr.a1, sr.a2];
    let mut state = [0.0; 2];
    let mut prev = 0.0;
    let values = w
        .values
        .iter()
        .map(|&x| {
            let mut y = x;
            for i in 0..2 {
                state[i] = alpha[i] * state[i] + amps[i] * (x - prev);
                y += state[i];
            }
            prev = x;
            y
        })
        .collect();
    Ok(Waveform { dt: w.dt, values })
}

/// Inverse of [`apply_step_response`], so that filtering the result returns `w`.
pub fn predistort(w: &Waveform, sr: &StepResponse) -> Result<Waveform> {
    let alpha = filter_poles(sr, w.dt)?;
    let amps = [sr.a1, sr.a2];
    let gain = 1.0 + sr.a1 + sr.a2;
    if gain <= 0.0 {
        return Err(Error::InvalidParameter(format!("non-invertible response: 1 + a1 + a2 = {gain}")));
    }
    // Zeros of H are the poles of the inverse: gain·z² + c1·z + c2 = 0.
    let c1 = -(alpha[0] + alpha[1]) - sr.a1 * (1.0 + alpha[1]) - sr.a2 * (1.0 + alpha[0]);
    let c2 = alpha[0] * alpha[1] + sr.a1 * alpha[1] + sr.a2 * alpha[0];
    let disc = C64::new(c1 * c1 - 4.0 * gain * c2, 0.0).sqrt();
    let roots = [(-c1 + disc) / (2.0 * gain), (-c1 - disc) / (2.0 * gain)];
    if roots.iter().any(|r| r.norm() >= 1.0) {
        return Err(Error::InvalidParameter("inverse filter is unstable for these settings".into()));
    }
    let mut state = [0.0; 2];
    let mut prev = 0.0;
    let values = w
        .values
        .iter()
        .map(|&y| {
            let mut rest = 0.0;
            for i in 0..2 {
                rest += alpha[i] * state[i] - amps[i] * prev;
            }
            let x = (y - rest) / gain;
            for i in 0..2 {
                state[i] = alpha[i] * state[i] + amps[i] * (x - prev);
            }
            prev = x;
            x
        })
        .collect();
    Ok(Waveform { dt: w.dt, values })
}
