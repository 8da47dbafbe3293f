//! Subcommand definitions and their implementations.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use xmonsim::clifford::{build_c1, build_c2, two_design_sum, two_design_sum_sampled, CliffordClass, CliffordGroup};
use xmonsim::ctrlphys::{
    apply_step_response, evolve_cz_trace, predistort, ramsey_error_filter, step_phase_response, tune_cz, RamseyFilter,
    TracePoint, TunedCz, Waveform,
};
use xmonsim::gateset::{GateKind, GateLabel};
use xmonsim::ghzpipe::{run_ghz_experiment, GhzConfig, GhzExperiment};
use xmonsim::qstate::{c, random_density, trace_distance, DensityMatrix, PureState};
use xmonsim::rbench::{
    budget_assemble, clifford_error, fit_decay_with, interleaved_error, interleaved_inputs_consistent, predict_clifford_errors,
    run_interleaved, run_reference, CliffordErrorPrediction, DecayFit, ErrorBudget, FitOptions, RbConfig, RbCurve,
};
use xmonsim::tomo::{default_shots, mle_reconstruct, repeated_reconstruction, simulate_tomo, TomoResult};

use crate::config::{parse_gate, RunConfig};
use crate::output::{Format, Table};
use crate::reproduce::{self, CriterionReport, ReproduceOptions};

#[derive(Debug, Parser)]
#[command(name = "xmonsim", version, about = "Noisy few-qubit simulator and gate-characterization toolkit")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Worker threads for the parallel sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clifford group checks.
    Cliffords {
        #[command(subcommand)]
        action: CliffordsCmd,
    },
    /// Randomized benchmarking.
    Rb {
        #[command(subcommand)]
        action: RbCmd,
    },
    /// Error-per-Clifford prediction and CZ budget shares.
    Budget(BudgetArgs),
    /// Adiabatic CZ physics.
    Cz {
        #[command(subcommand)]
        action: CzCmd,
    },
    /// Z-line step response and predistortion.
    Zstep(ZstepArgs),
    /// State tomography round trip.
    Tomo(TomoArgs),
    /// GHZ preparation and tomography.
    Ghz(GhzArgs),
    /// Run the acceptance suite and compare against reference values.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Subcommand)]
pub enum CliffordsCmd {
    /// Group sizes, closure, gate counts and the two-design sum.
    Verify {
        /// Sampled pairs for the C2 two-design sum; 0 sums all pairs.
        #[arg(long)]
        pairs: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum RbCmd {
    /// Simulate reference (and optionally interleaved) RB.
    Run(RbRunArgs),
    /// Fit A·p^m + B to measured sequence fidelities.
    Fit(RbFitArgs),
}

#[derive(Debug, Args)]
pub struct RbRunArgs {
    /// Physical qubits, e.g. "2" or "2,3".
    #[arg(long, value_delimiter = ',')]
    pub qubits: Option<Vec<usize>>,
    /// Sequence lengths.
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// Random sequences per length.
    #[arg(long)]
    pub k: Option<usize>,
    /// Shots per sequence; exact populations when absent.
    #[arg(long)]
    pub shots: Option<u64>,
    /// Gate to interleave, e.g. "CZ" or "X/2".
    #[arg(long)]
    pub interleave: Option<String>,
    /// Noise profile name.
    #[arg(long)]
    pub profile: Option<String>,
}

#[derive(Debug, Args)]
pub struct RbFitArgs {
    /// CSV with header and columns m, fidelity and optionally std.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n_qubits: usize,
    /// Weight points by 1/std².
    #[arg(long)]
    pub weighted: bool,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// Single-qubit gate error.
    #[arg(long)]
    pub rsq: Option<f64>,
    /// CZ gate error.
    #[arg(long)]
    pub rcz: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum CzCmd {
    /// Tune the conditional phase and sweep leakage against duration.
    Sim(CzSimArgs),
    /// Ramsey error filter on the tuned gate.
    Filter,
}

#[derive(Debug, Args)]
pub struct CzSimArgs {
    /// Gate length, ns.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ZstepArgs {
    /// Step amplitude, GHz.
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// End of the time grid, ns.
    #[arg(long)]
    pub t_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TomoArgs {
    /// Number of qubits.
    #[arg(long)]
    pub n: Option<usize>,
    /// ghz, ground, plus or random.
    #[arg(long)]
    pub state: Option<String>,
    /// Shots per setting.
    #[arg(long)]
    pub shots: Option<u64>,
    /// Use exact probabilities instead of sampled counts.
    #[arg(long)]
    pub exact: bool,
    /// Independent reconstructions for the fidelity spread.
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GhzArgs {
    /// Number of qubits, 2 to 5.
    #[arg(long)]
    pub n: Option<usize>,
    /// Noise profile: paper or noiseless.
    #[arg(long)]
    pub profile: Option<String>,
    /// Insert spin echoes on idle windows.
    #[arg(long, conflicts_with = "no_echo")]
    pub echo: bool,
    #[arg(long)]
    pub no_echo: bool,
    /// Shots per tomography setting.
    #[arg(long)]
    pub shots: Option<u64>,
    /// Exact tomography probabilities.
    #[arg(long)]
    pub exact: bool,
    /// Independent reconstructions for the fidelity spread.
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Quasi-static detuning draws averaged into the state.
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Criterion numbers to run, e.g. "3,5,6".
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<u32>>,
    /// Full C2 two-design sum instead of the sampled check.
    #[arg(long)]
    pub full: bool,
}

/// A finished command: JSON payload plus an optional CSV view.
pub struct Outcome {
    pub name: String,
    pub result: Value,
    pub table: Option<Table>,
    /// Human summary for standard error.
    pub summary: Option<String>,
}

impl Outcome {
    fn new(name: &str, result: impl Serialize, table: Option<Table>) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            result: serde_json::to_value(result)?,
            table,
            summary: None,
        })
    }
}

/// Applies command-line overrides to the configuration; the result is what
/// gets embedded in the output.
pub fn resolve(cli: &Cli, mut cfg: RunConfig) -> Result<RunConfig> {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Cliffords {
            action: CliffordsCmd::Verify { pairs },
        } => {
            if let Some(p) = pairs {
                cfg.cliffords.pairs = *p;
            }
        }
        Command::Rb { action: RbCmd::Run(a) } => {
            if let Some(q) = &a.qubits {
                cfg.rb.qubits = q.clone();
            }
            if let Some(m) = &a.m {
                cfg.rb.m_values = m.clone();
            }
            if let Some(k) = a.k {
                cfg.rb.k = k;
            }
            if a.shots.is_some() {
                cfg.rb.shots = a.shots;
            }
            if a.interleave.is_some() {
                cfg.rb.interleave = a.interleave.clone();
            }
            if let Some(p) = &a.profile {
                cfg.noise.profile = p.clone();
                cfg.noise.params = None;
            }
        }
        Command::Rb { action: RbCmd::Fit(a) } => cfg.rb.weighted |= a.weighted,
        Command::Budget(a) => {
            if let Some(v) = a.rsq {
                cfg.budget.r_sq = v;
            }
            if let Some(v) = a.rcz {
                cfg.budget.r_cz = v;
            }
        }
        Command::Cz { action: CzCmd::Sim(a) } => {
            if let Some(d) = a.duration {
                cfg.cz.design.duration = d;
            }
        }
        Command::Cz { action: CzCmd::Filter } => {}
        Command::Zstep(a) => {
            if let Some(v) = a.amplitude {
                cfg.zstep.amplitude_ghz = v;
            }
            if let Some(v) = a.t_max {
                cfg.zstep.t_max = v;
            }
        }
        Command::Tomo(a) => {
            if let Some(n) = a.n {
                cfg.tomo.n_qubits = n;
            }
            if let Some(s) = &a.state {
                cfg.tomo.state = s.clone();
            }
            if a.shots.is_some() {
                cfg.tomo.shots = a.shots;
            }
            if a.exact {
                cfg.tomo.shots = None;
            }
            if let Some(r) = a.repeats {
                cfg.tomo.repeats = r;
            }
        }
        Command::Ghz(a) => {
            if let Some(n) = a.n {
                cfg.ghz.n_qubits = n;
            }
            if let Some(p) = &a.profile {
                cfg.noise.profile = p.clone();
                cfg.noise.params = None;
            }
            if a.echo {
                cfg.ghz.echo = true;
            }
            if a.no_echo {
                cfg.ghz.echo = false;
            }
            if a.shots.is_some() {
                cfg.ghz.shots = a.shots;
            }
            cfg.ghz.exact |= a.exact;
            if let Some(r) = a.repeats {
                cfg.ghz.repeats = r;
            }
            if let Some(d) = a.draws {
                cfg.ghz.detuning_draws = d;
            }
        }
        Command::Reproduce(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli, cfg: &RunConfig) -> Result<Outcome> {
    match &cli.command {
        Command::Cliffords {
            action: CliffordsCmd::Verify { .. },
        } => cliffords_verify(cfg),
        Command::Rb { action: RbCmd::Run(_) } => rb_run(cfg),
        Command::Rb { action: RbCmd::Fit(a) } => rb_fit(cfg, a),
        Command::Budget(_) => budget(cfg),
        Command::Cz { action: CzCmd::Sim(_) } => cz_sim(cfg),
        Command::Cz { action: CzCmd::Filter } => cz_filter(cfg),
        Command::Zstep(_) => zstep(cfg),
        Command::Tomo(_) => tomo(cfg),
        Command::Ghz(_) => ghz(cfg),
        Command::Reproduce(a) => reproduce_cmd(cfg, a),
    }
}

#[derive(Debug, Serialize)]
pub struct CliffordReport {
    pub c1_size: usize,
    pub c2_size: usize,
    pub c2_classes: BTreeMap<String, usize>,
    pub c1_mean_gates: f64,
    pub c2_mean_cz: f64,
    pub c2_mean_single_qubit: f64,
    pub c1_two_design: f64,
    pub c2_two_design: f64,
    /// Standard error of the sampled C2 sum; absent for the full sum.
    pub c2_two_design_stderr: Option<f64>,
    pub c2_two_design_pairs: usize,
}

pub fn clifford_report(pairs: usize, seed: u64) -> Result<CliffordReport> {
    let c1 = build_c1()?;
    let c2 = build_c2()?;
    let c2_classes = [
        CliffordClass::SingleQubit,
        CliffordClass::CnotLike,
        CliffordClass::IswapLike,
        CliffordClass::SwapLike,
    ]
    .into_iter()
    .map(|k| (k.name().to_string(), c2.class_count(k)))
    .collect();
    let (c2_two_design, stderr, used) = if pairs == 0 {
        (two_design_sum(&c2), None, c2.len() * c2.len())
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, s) = two_design_sum_sampled(&c2, pairs, &mut rng);
        (m, Some(s), pairs)
    };
    Ok(CliffordReport {
        c1_size: c1.len(),
        c2_size: c2.len(),
        c2_classes,
        c1_mean_gates: c1.mean_single_qubit_gates(),
        c2_mean_cz: c2.mean_cz(),
        c2_mean_single_qubit: c2.mean_single_qubit_gates(),
        c1_two_design: two_design_sum(&c1),
        c2_two_design,
        c2_two_design_stderr: stderr,
        c2_two_design_pairs: used,
    })
}

fn cliffords_verify(cfg: &RunConfig) -> Result<Outcome> {
    let report = clifford_report(cfg.cliffords.pairs, cfg.seed)?;
    let mut t = Table::new(&["quantity", "value"]);
    t.rows.push(vec!["c1_size".into(), report.c1_size.to_string()]);
    t.rows.push(vec!["c2_size".into(), report.c2_size.to_string()]);
    for (k, v) in &report.c2_classes {
        t.rows.push(vec![k.clone(), v.to_string()]);
    }
    t.rows.push(vec!["c2_two_design".into(), report.c2_two_design.to_string()]);
    Outcome::new("cliffords verify", report, Some(t))
}

#[derive(Debug, Serialize)]
pub struct InterleavedReport {
    pub gate: String,
    pub curve: RbCurve,
    pub fit: DecayFit,
    pub r_gate: f64,
    pub fidelity: f64,
    pub consistent: bool,
}

#[derive(Debug, Serialize)]
pub struct RbReport {
    pub qubits: Vec<usize>,
    pub reference: RbCurve,
    pub reference_fit: DecayFit,
    pub r_clifford: f64,
    pub interleaved: Option<InterleavedReport>,
}

fn group_for(n: usize) -> Result<CliffordGroup> {
    Ok(match n {
        1 => build_c1()?,
        2 => build_c2()?,
        _ => bail!("randomized benchmarking runs on one or two qubits, got {n}"),
    })
}

fn rb_run(cfg: &RunConfig) -> Result<Outcome> {
    let s = &cfg.rb;
    let n = s.qubits.len();
    let group = group_for(n)?;
    let noise = cfg.noise.for_qubits(&s.qubits)?;
    let durations = cfg.durations.for_qubits(&s.qubits)?;
    let mut rc = RbConfig::new(n, s.m_values.clone(), s.k, noise, durations, cfg.seed);
    rc.shots = s.shots;
    rc.detuning_draws = s.detuning_draws;
    rc.clifford_depolarizing = s.clifford_depolarizing;
    rc.validate()?;
    let opts = FitOptions {
        weighted: s.weighted,
        bootstrap_samples: s.bootstrap_samples,
        seed: cfg.seed,
    };
    let reference = run_reference(&rc, &group)?;
    let reference_fit = fit_decay_with(&reference, &opts)?;
    let interleaved = match &s.interleave {
        None => None,
        Some(name) => {
            let kind = parse_gate(name)?;
            let gate = if kind == GateKind::CZ {
                if n != 2 {
                    bail!("CZ interleaving needs two qubits");
                }
                GateLabel::cz(0, 1)
            } else {
                GateLabel::single(kind, 0)
            };
            let curve = run_interleaved(&rc, &group, &gate)?;
            let fit = fit_decay_with(&curve, &opts)?;
            let r_gate = interleaved_error(fit.p, reference_fit.p, n);
            Some(InterleavedReport {
                gate: kind.name().into(),
                consistent: interleaved_inputs_consistent(fit.p, reference_fit.p),
                curve,
                fit,
                r_gate,
                fidelity: 1.0 - r_gate,
            })
        }
    };
    let mut header = vec!["m", "reference_mean", "reference_std"];
    if interleaved.is_some() {
        header.extend(["interleaved_mean", "interleaved_std"]);
    }
    let mut t = Table::new(&header);
    for (i, &m) in reference.m_values.iter().enumerate() {
        let mut row = vec![m as f64, reference.mean[i], reference.std[i]];
        if let Some(il) = &interleaved {
            row.extend([il.curve.mean[i], il.curve.std[i]]);
        }
        t.push(&row);
    }
    let report = RbReport {
        qubits: s.qubits.clone(),
        r_clifford: clifford_error(reference_fit.p, n),
        reference,
        reference_fit,
        interleaved,
    };
    Outcome::new("rb run", report, Some(t))
}

#[derive(Debug, Deserialize)]
struct FitRow {
    m: usize,
    fidelity: f64,
    #[serde(default)]
    std: Option<f64>,
}

pub fn read_curve(path: &std::path::Path) -> Result<RbCurve> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("m") || headers.get(1) != Some("fidelity") {
        bail!("{}: header must be m,fidelity[,std]", path.display());
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<FitRow>().enumerate() {
        rows.push(rec.with_context(|| format!("{}: data row {}", path.display(), i + 1))?);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let std = if rows.iter().all(|r| r.std.is_some()) {
        Some(rows.iter().map(|r| r.std.unwrap_or(0.0)).collect())
    } else {
        None
    };
    Ok(RbCurve::from_means(
        rows.iter().map(|r| r.m).collect(),
        rows.iter().map(|r| r.fidelity).collect(),
        std,
    ))
}

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub n_qubits: usize,
    pub points: usize,
    pub fit: DecayFit,
    pub r_clifford: f64,
}

fn rb_fit(cfg: &RunConfig, a: &RbFitArgs) -> Result<Outcome> {
    let curve = read_curve(&a.input)?;
    let opts = FitOptions {
        weighted: cfg.rb.weighted,
        bootstrap_samples: cfg.rb.bootstrap_samples,
        seed: cfg.seed,
    };
    let fit = fit_decay_with(&curve, &opts)?;
    let mut t = Table::new(&["a", "b", "p", "p_std", "r_clifford"]);
    let r = clifford_error(fit.p, a.n_qubits);
    t.push(&[fit.a, fit.b, fit.p, fit.p_std, r]);
    let report = FitReport {
        n_qubits: a.n_qubits,
        points: curve.m_values.len(),
        fit,
        r_clifford: r,
    };
    Outcome::new("rb fit", report, Some(t))
}

#[derive(Debug, Serialize)]
pub struct BudgetReport {
    pub prediction: CliffordErrorPrediction,
    pub class_weighted_c2: f64,
    pub cz_budget: Option<ErrorBudget>,
}

fn budget(cfg: &RunConfig) -> Result<Outcome> {
    let b = &cfg.budget;
    if !(b.r_sq >= 0.0 && b.r_cz >= 0.0) {
        bail!("gate errors must be non-negative");
    }
    let prediction = predict_clifford_errors(b.r_sq, b.r_cz);
    let cz_budget = match (b.decoherence_a, b.decoherence_b, b.phase_control, b.leakage) {
        (Some(da), Some(db), Some(ph), Some(lk)) => Some(budget_assemble(da, db, ph, lk)?),
        (None, None, None, None) => None,
        _ => bail!("budget shares need decoherence_a, decoherence_b, phase_control and leakage together"),
    };
    let p = &prediction;
    let mut t = Table::new(&["quantity", "value"]);
    for (k, v) in [
        ("r_c1", p.r_c1),
        ("r_c1_c1", p.r_c1_c1),
        ("r_cnot", p.r_cnot),
        ("r_iswap", p.r_iswap),
        ("r_swap", p.r_swap),
        ("r_c2", p.r_c2),
        ("r_c2_cz", p.r_c2_cz),
    ] {
        t.rows.push(vec![k.into(), v.to_string()]);
    }
    let report = BudgetReport {
        class_weighted_c2: prediction.class_weighted_c2(),
        prediction,
        cz_budget,
    };
    Outcome::new("budget", report, Some(t))
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub duration: f64,
    pub leakage: f64,
}

#[derive(Debug, Serialize)]
pub struct CzReport {
    pub tuned: TunedCz,
    pub phase_error: f64,
    pub sweep: Vec<SweepPoint>,
    pub trace: Vec<TracePoint>,
}

fn tuned_cz(cfg: &RunConfig) -> Result<TunedCz> {
    Ok(tune_cz(&cfg.cz.design, cfg.cz.target_phase)?)
}

fn cz_sim(cfg: &RunConfig) -> Result<Outcome> {
    let tuned = tuned_cz(cfg)?;
    let (_, trace) = evolve_cz_trace(&tuned.trajectory, cfg.cz.design.dt, cfg.cz.trace_every.max(1))?;
    let leak = xmonsim::ctrlphys::leakage_vs_duration(&tuned.trajectory, &cfg.cz.sweep, cfg.cz.design.dt)?;
    let sweep = cfg
        .cz
        .sweep
        .iter()
        .zip(leak)
        .map(|(&duration, leakage)| SweepPoint { duration, leakage })
        .collect();
    let mut t = Table::new(&["t", "detuning", "p01", "p10", "p11", "p02"]);
    for p in &trace {
        t.push(&[p.t, p.detuning, p.p01, p.p10, p.p11, p.p02]);
    }
    let report = CzReport {
        phase_error: xmonsim::ctrlphys::phase_distance(tuned.result.phi_cz, cfg.cz.target_phase),
        tuned,
        sweep,
        trace,
    };
    Outcome::new("cz sim", report, Some(t))
}

#[derive(Debug, Serialize)]
pub struct FilterReport {
    pub filter: RamseyFilter,
    pub gate_leakage: f64,
    /// `1/(E₀₂ − E₁₁)` at idle, ns.
    pub expected_period: f64,
}

fn cz_filter(cfg: &RunConfig) -> Result<Outcome> {
    let tuned = tuned_cz(cfg)?;
    let delays = cfg.filter.delays()?;
    let filter = ramsey_error_filter(&tuned.trajectory, &delays, cfg.cz.design.dt)?;
    let mut t = Table::new(&["delay", "p11"]);
    for (d, p) in filter.delays.iter().zip(&filter.p11) {
        t.push(&[*d, *p]);
    }
    let report = FilterReport {
        expected_period: 1e3 / cfg.cz.design.idle.abs(),
        gate_leakage: tuned.result.leakage,
        filter,
    };
    Outcome::new("cz filter", report, Some(t))
}

#[derive(Debug, Serialize)]
pub struct ZstepReport {
    pub times: Vec<f64>,
    /// Phase after a step through the uncorrected line, rad.
    pub phase: Vec<f64>,
    /// Phase with the predistorted step, rad.
    pub phase_corrected: Vec<f64>,
    pub predistorted: Vec<f64>,
    /// Largest deviation of the corrected line output from the ideal step.
    pub flatness: f64,
}

fn zstep(cfg: &RunConfig) -> Result<Outcome> {
    let z = &cfg.zstep;
    if !(z.dt > 0.0 && z.t_max > 0.0) {
        bail!("zstep needs dt > 0 and t_max > 0");
    }
    let n = (z.t_max / z.dt + 1e-9).floor() as usize + 1;
    let times: Vec<f64> = (0..n).map(|i| i as f64 * z.dt).collect();
    let phase = step_phase_response(&z.response, z.amplitude_ghz, &times)?;
    let step = Waveform {
        dt: z.dt,
        values: vec![1.0; n],
    };
    let pre = predistort(&step, &z.response)?;
    let out = apply_step_response(&pre, &z.response)?;
    let flatness = out.values.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let mut acc = 0.0;
    let phase_corrected = out
        .values
        .iter()
        .map(|v| {
            let p = 2.0 * std::f64::consts::PI * z.amplitude_ghz * acc;
            acc += (v - 1.0) * z.dt;
            p
        })
        .collect::<Vec<_>>();
    let mut t = Table::new(&["t", "phase", "phase_corrected", "predistorted"]);
    for i in 0..n {
        t.push(&[times[i], phase[i], phase_corrected[i], pre.values[i]]);
    }
    let report = ZstepReport {
        times,
        phase,
        phase_corrected,
        predistorted: pre.values,
        flatness,
    };
    Outcome::new("zstep", report, Some(t))
}

fn rho_table(rho: &DensityMatrix) -> Table {
    let mut t = Table::new(&["row", "col", "re", "im"]);
    let m = rho.matrix();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            t.push(&[i as f64, j as f64, m[(i, j)].re, m[(i, j)].im]);
        }
    }
    t
}

fn plus_state(n: usize) -> Result<PureState> {
    let d = 1 << n;
    let amp = c(1.0 / (d as f64).sqrt(), 0.0);
    Ok(PureState::new(PureState::ghz(n).amplitudes().map(|_| amp))?)
}

#[derive(Debug, Serialize)]
pub struct TomoReport {
    pub state: String,
    pub n_qubits: usize,
    pub shots: Option<u64>,
    pub result: TomoResult,
    pub trace_distance: f64,
    pub fidelity_mean: Option<f64>,
    pub fidelity_std: Option<f64>,
}

fn tomo(cfg: &RunConfig) -> Result<Outcome> {
    let s = &cfg.tomo;
    let n = s.n_qubits;
    if !(1..=5).contains(&n) {
        bail!("tomography supports 1 to 5 qubits, got {n}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (rho, target) = match s.state.as_str() {
        "ghz" => (PureState::ghz(n).to_density(), Some(PureState::ghz(n))),
        "ground" => (PureState::ground(n).to_density(), Some(PureState::ground(n))),
        "plus" => {
            let p = plus_state(n)?;
            (p.to_density(), Some(p))
        }
        "random" => (random_density(1 << n, 1 << n, &mut rng), None),
        other => bail!("unknown tomography state {other:?}"),
    };
    let (result, mean, std) = match (s.shots, &target) {
        (Some(shots), Some(t)) if s.repeats > 1 => {
            let rep = repeated_reconstruction(&rho, t, shots, s.repeats, &mut rng)?;
            (rep.result, Some(rep.mean), Some(rep.std))
        }
        (_, _) if s.repeats > 1 => bail!("repeated tomography needs finite shots and a pure target state"),
        (shots, t) => {
            let data = simulate_tomo(&rho, shots, None, &mut rng)?;
            (mle_reconstruct(&data, t.as_ref())?, None, None)
        }
    };
    let report = TomoReport {
        state: s.state.clone(),
        n_qubits: n,
        shots: s.shots,
        trace_distance: trace_distance(&rho, &result.rho),
        result,
        fidelity_mean: mean,
        fidelity_std: std,
    };
    let t = rho_table(&report.result.rho);
    Outcome::new("tomo", report, Some(t))
}

fn ghz(cfg: &RunConfig) -> Result<Outcome> {
    let s = &cfg.ghz;
    let qubits: Vec<usize> = (0..s.n_qubits).collect();
    let mut gc = GhzConfig::new(s.n_qubits, s.echo, cfg.noise.for_qubits(&qubits)?)?;
    gc.durations = cfg.durations.for_qubits(&qubits)?;
    gc.shots = if s.exact { None } else { Some(s.shots.unwrap_or_else(|| default_shots(s.n_qubits))) };
    gc.repeats = s.repeats;
    gc.detuning_draws = s.detuning_draws;
    gc.seed = cfg.seed;
    let exp: GhzExperiment = run_ghz_experiment(&gc)?;
    let t = rho_table(&exp.tomography.rho);
    let summary = format!(
        "N={} echo={} fidelity={:.4} (state {:.4}) offdiag_ratio={:.3} genuine={}",
        exp.n_qubits,
        exp.echo,
        exp.diagnostics.fidelity,
        exp.state_fidelity,
        exp.diagnostics.offdiag_ratio.unwrap_or(f64::NAN),
        exp.diagnostics.genuine_entanglement
    );
    let mut o = Outcome::new("ghz", exp, Some(t))?;
    o.summary = Some(summary);
    Ok(o)
}

fn reproduce_cmd(cfg: &RunConfig, a: &ReproduceArgs) -> Result<Outcome> {
    let opts = ReproduceOptions {
        seed: cfg.seed,
        only: a.only.clone(),
        full_two_design: a.full,
    };
    let reports: Vec<CriterionReport> = reproduce::run(&opts)?;
    let summary = reproduce::render_table(&reports);
    let mut t = Table::new(&["criterion", "check", "value", "target", "tolerance", "pass", "required"]);
    for r in &reports {
        for ch in &r.checks {
            t.rows.push(vec![
                r.id.to_string(),
                ch.name.clone(),
                ch.value.to_string(),
                ch.target.to_string(),
                ch.tolerance.to_string(),
                ch.pass.to_string(),
                ch.required.to_string(),
            ]);
        }
    }
    let mut o = Outcome::new("reproduce", &reports, Some(t))?;
    o.summary = Some(summary);
    Ok(o)
}
