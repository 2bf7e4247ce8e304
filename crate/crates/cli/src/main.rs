use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Value};

use qclock::acceptance::run_criteria;
use qclock::clock_sim::{mass_near, plan_lattice, run, AutonomousScenario, CouplingProfile, SystemKind, Trajectory};
use qclock::mediator::{dimension_scan, MediatorProblem, OptimizeOptions, Target};
use qclock::projective::{attribution_feasibility, conditional_energy_stats, MeasurementScenario, Party};
use qclock::qla::C64;
use qclock::signalling::{sweep, SignallingConfig};
use qclock::spin_chain::{chain_hamiltonian, named_eigenstate, ChainLabel, ChainSpec};
use qclock::util::{fmt12, parse_usize_set};
use qclock::wavepacket_analytic::{
    chain3_final, double_pointer_final, energy_measurement_final, sequential_chain3_final, single_spin_theta_final, BranchExpansion,
    ChainScale, ClockState, OracleOptions, PointerPhase, WavePacket,
};

const THREADS_ENV: &str = "QCLOCK_THREADS";
const EXIT_VALIDATION: u8 = 2;
const EXIT_USAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "qclock", version, about = "Measurement models on spin chains with autonomous quantum clocks")]
struct Cli {
    /// JSON file whose keys override the command's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Projective energy tables and the attribution certificate.
    Tables(TablesArgs),
    /// Autonomous clock simulation with oracle comparison.
    Clock(ClockArgs),
    /// Bob-apparatus distinguishability sweep.
    Signalling(SignallingArgs),
    /// Mediator dimension scan.
    Mediator(MediatorArgs),
    /// Run the acceptance criteria.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Who {
    A,
    B,
}

#[derive(Args, Serialize, Deserialize)]
struct TablesArgs {
    /// Party measuring alone in the one-party table.
    #[arg(long, value_enum, default_value = "b")]
    who: Who,
    /// Chain energy unit.
    #[arg(long, default_value_t = 1.0)]
    e0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum SystemName {
    SingleEnergy,
    SingleTheta,
    DoublePointer,
    Chain3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum ProfileName {
    Point,
    Bump,
    TopHat,
}

#[derive(Args, Serialize, Deserialize)]
struct ClockArgs {
    #[arg(long, value_enum, default_value = "single-theta")]
    system: SystemName,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    theta: f64,
    /// Clock position spread Δ.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Energy-basis amplitudes (real) for single-energy.
    #[arg(long, default_value_t = 0.6)]
    up: f64,
    #[arg(long, default_value_t = 0.8)]
    down: f64,
    /// Chain energy unit; defaults to 2ω.
    #[arg(long)]
    e0: Option<f64>,
    /// Clock start distances from the coupling, in units of Δ.
    #[arg(long, default_value_t = 7.0)]
    xi: f64,
    #[arg(long, default_value_t = 7.0)]
    yi: f64,
    /// Bob's clock arrives after Alice's has passed.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    alice_off: bool,
    #[arg(long)]
    bob_off: bool,
    /// Lattice sites per clock.
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, value_enum, default_value = "point")]
    profile: ProfileName,
    #[arg(long, default_value_t = 0.5)]
    half_width: f64,
    #[arg(long, default_value_t = 16)]
    checkpoints: usize,
    /// Oracle fidelity deficit above which the run counts as a validation failure.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Args, Serialize, Deserialize)]
struct SignallingArgs {
    /// ωΔ values, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.2,1,3")]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long)]
    alice_off: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum TargetName {
    Pair,
    LocalZ,
}

#[derive(Args, Serialize, Deserialize)]
struct MediatorArgs {
    #[arg(long, value_enum)]
    target: Option<TargetName>,
    /// Aux dimensions, e.g. `2..6` or `2,3`.
    #[arg(long, default_value = "2..6")]
    dims: String,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    omega: f64,
    #[arg(long, default_value_t = 8)]
    restarts: usize,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Serialize, Deserialize)]
struct ValidateArgs {
    /// Subset of criteria (default all).
    #[arg(long, value_delimiter = ',')]
    criteria: Vec<u32>,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    version: &'static str,
    outputs: Vec<String>,
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Keys from `--config` replace the parsed flags.
fn resolve<T: Serialize + DeserializeOwned>(args: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else { return Ok(args) };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    let over: Value = serde_json::from_str(&text).map_err(|e| usage(format!("parsing {}: {e}", path.display())))?;
    let Value::Object(over) = over else { return Err(usage("config must be a JSON object")) };
    let mut base = serde_json::to_value(&args)?;
    let obj = base.as_object_mut().expect("flag structs serialize to objects");
    for (k, v) in over {
        let key = k.replace('-', "_");
        if !obj.contains_key(&key) {
            return Err(usage(format!("unknown config key `{k}`")));
        }
        obj.insert(key, v);
    }
    serde_json::from_value(base).map_err(|e| usage(format!("config: {e}")))
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        self.files.push(path.display().to_string());
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, v)?;
        Ok(())
    }

    fn finish(mut self, command: &'static str, config: Value, seed: Option<u64>) -> Result<()> {
        let path = self.dir.join("manifest.json");
        self.files.push(path.display().to_string());
        let m = RunManifest { command, config, seed, version: env!("CARGO_PKG_VERSION"), outputs: self.files };
        serde_json::to_writer_pretty(BufWriter::new(File::create(&path)?), &m)?;
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Ok(v) = std::env::var(THREADS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("{THREADS_ENV} must be a positive integer");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) => {
                eprintln!("usage error: {u}");
                ExitCode::from(EXIT_USAGE)
            }
            None => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Returns false on a validation failure.
fn dispatch(cli: Cli) -> Result<bool> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Tables(a) => tables(resolve(a, cfg)?, &cli.out),
        Command::Clock(a) => clock(resolve(a, cfg)?, &cli.out),
        Command::Signalling(a) => signalling(resolve(a, cfg)?, &cli.out),
        Command::Mediator(a) => mediator(resolve(a, cfg)?, &cli.out),
        Command::Validate(a) => validate(resolve(a, cfg)?, &cli.out),
    }
}

fn tables(a: TablesArgs, out: &Path) -> Result<bool> {
    let mut o = Outputs::new(out)?;
    let state = named_eigenstate(ChainLabel::MINUS);
    let h = chain_hamiltonian(&ChainSpec::three(a.e0)?);
    let party = if a.who == Who::A { Party::A } else { Party::B };
    let one = conditional_energy_stats(&state, &MeasurementScenario::only(party), &h)?;
    let two = conditional_energy_stats(&state, &MeasurementScenario::both(), &h)?;
    one.write_csv(o.create("table1.csv")?)?;
    two.write_csv(o.create("table2.csv")?)?;
    let rep = attribution_feasibility(&one, &two)?;
    o.json("certificate.json", &json!({ "summary": rep.summary(), "report": rep }))?;
    println!("{}", rep.summary());
    o.finish("tables", serde_json::to_value(&a)?, None)?;
    Ok(!rep.is_feasible())
}

fn clock(a: ClockArgs, out: &Path) -> Result<bool> {
    if a.sequential && a.system != SystemName::Chain3 {
        return Err(usage("--sequential needs --system chain3"));
    }
    if (a.alice_off || a.bob_off) && a.system != SystemName::Chain3 {
        return Err(usage("--alice-off/--bob-off need --system chain3"));
    }
    if !(a.delta > 0.0 && a.omega > 0.0) {
        return Err(usage("--delta and --omega must be positive"));
    }
    let d = a.delta;
    let e0 = a.e0.unwrap_or(2.0 * a.omega);
    let yi = if a.sequential { a.yi.max(a.xi + 18.0) } else { a.yi };
    let (system, clocks, kmax) = match a.system {
        SystemName::SingleEnergy => (
            SystemKind::SingleSpinEnergy { omega: a.omega, up: C64::from(a.up), down: C64::from(a.down) },
            ClockState::Single(WavePacket::new(-a.xi * d, 0.0, d)?),
            2.0 * a.omega,
        ),
        SystemName::SingleTheta => (
            SystemKind::SingleSpinTheta { omega: a.omega, theta: a.theta },
            ClockState::Single(WavePacket::new(-a.xi * d, 0.0, d)?),
            2.0 * a.omega,
        ),
        SystemName::DoublePointer => (
            SystemKind::SingleSpinTwoPointers { omega: a.omega, theta: a.theta },
            ClockState::Pair(WavePacket::new(-a.xi * d, 0.0, d)?, WavePacket::new(-yi * d, 0.0, d)?),
            2.0 * a.omega,
        ),
        SystemName::Chain3 => (
            SystemKind::Chain3 { e0, alice: !a.alice_off, bob: !a.bob_off },
            ClockState::Pair(WavePacket::new(-a.xi * d, 0.0, d)?, WavePacket::new(-yi * d, 0.0, d)?),
            2.0 * e0,
        ),
    };
    let plan = plan_lattice(a.n, &clocks, kmax, 7.0)?;
    let profile = match (a.profile, a.alice_off && a.bob_off) {
        (_, true) => CouplingProfile::Off,
        (ProfileName::Point, _) => CouplingProfile::Point,
        (ProfileName::Bump, _) => CouplingProfile::GaussianBump { half_width: a.half_width },
        (ProfileName::TopHat, _) => CouplingProfile::TopHat { half_width: a.half_width },
    };
    let s = AutonomousScenario {
        system,
        clocks,
        lattice: plan.lattice,
        profile,
        total_time: plan.total_time,
        dt: plan.lattice.dx,
        checkpoints: a.checkpoints.max(1),
    };
    let tr = run(&s)?;
    let mut o = Outputs::new(out)?;
    o.json("scenario.json", &s)?;
    tr.write_energy_csv(o.create("trajectory.csv")?)?;
    let fin = &tr.final_state;
    o.json(
        "final_state.json",
        &json!({
            "time": fin.time,
            "subsystems": fin.names,
            "branches": fin.branch_summary(1e-8)["branches"],
            "discrete_density_diag": fin.discrete_density().diagonal().iter().map(|z| z.re).collect::<Vec<_>>(),
        }),
    )?;
    let oracle = oracle_for(&a, &s, e0)?;
    let mut ok = true;
    let mut diff = json!({ "energy_drift": tr.energy_drift() });
    if let Some(oracle) = oracle {
        let fid = fin.fidelity_with_expansion(&oracle)?;
        ok = fid >= 1.0 - a.tolerance;
        let ptr = s.system.pointers();
        let sim = fin.outcome_probabilities(&ptr);
        let ora = oracle.outcome_probabilities(&ptr);
        let branches: Vec<Value> = sim
            .iter()
            .zip(&ora)
            .map(|((o1, p1), (_, p2))| json!({ "pointers": o1, "simulated": p1, "oracle": p2, "difference": p1 - p2 }))
            .collect();
        diff["fidelity"] = json!(fid);
        diff["pointer_outcomes"] = json!(branches);
        kick_table(&mut o, &tr, &oracle, s.clocks.count(), kmax / 2.0)?;
        println!("oracle fidelity {}", fmt12(fid));
    }
    o.json("oracle_diff.json", &diff)?;
    o.finish("clock", serde_json::to_value(&a)?, None)?;
    Ok(ok)
}

fn oracle_for(a: &ClockArgs, s: &AutonomousScenario, e0: f64) -> Result<Option<BranchExpansion>> {
    if s.profile != CouplingProfile::Point || a.alice_off || a.bob_off {
        return Ok(None);
    }
    let t = s.total_time;
    let ph = PointerPhase::VonNeumann;
    let opts = OracleOptions::default();
    Ok(Some(match (a.system, s.clocks) {
        (SystemName::SingleEnergy, ClockState::Single(p)) => energy_measurement_final(C64::from(a.up), C64::from(a.down), a.omega, p, t, ph)?,
        (SystemName::SingleTheta, ClockState::Single(p)) => single_spin_theta_final(a.theta, a.omega, p, t, ph)?,
        (SystemName::DoublePointer, c) => double_pointer_final(a.theta, a.omega, c, t, opts)?,
        (SystemName::Chain3, c) if a.sequential => sequential_chain3_final(ChainScale::new(e0)?, c, t, opts)?,
        (SystemName::Chain3, c) => chain3_final(ChainScale::new(e0)?, c, t, opts)?,
        _ => return Ok(None),
    }))
}

/// Clock kick masses, oracle vs simulated (window ± half the kick spacing).
fn kick_table(o: &mut Outputs, tr: &Trajectory, oracle: &BranchExpansion, clocks: usize, spacing: f64) -> Result<()> {
    let mut wr = csv::Writer::from_writer(o.create("kicks.csv")?);
    wr.write_record(["clock", "kick", "oracle_mass", "simulated_mass"])?;
    for k in 0..clocks {
        let dist = tr.final_state.momentum_distribution(k);
        let p0 = oracle.clock.mean_momentum()[k];
        for (kick, m) in oracle.kick_masses(k) {
            let sim = mass_near(&dist, p0 + kick, spacing / 2.0);
            wr.write_record([k.to_string(), fmt12(kick), fmt12(m), fmt12(sim)])?;
        }
    }
    wr.flush()?;
    Ok(())
}

fn signalling(a: SignallingArgs, out: &Path) -> Result<bool> {
    if a.grid.is_empty() {
        return Err(usage("empty --grid"));
    }
    let cfg = SignallingConfig { omega: a.omega, n: a.n, ..SignallingConfig::default() };
    let rep = sweep(&a.grid, &cfg, a.alice_off)?;
    let mut o = Outputs::new(out)?;
    rep.write_csv(o.create("signalling.csv")?)?;
    o.json("signalling.json", &json!({ "config": cfg, "report": rep }))?;
    for p in &rep.points {
        println!("wD={} D={}", fmt12(p.omega_delta), fmt12(p.trace_distance));
    }
    o.finish("signalling", serde_json::to_value(&a)?, None)?;
    Ok(true)
}

fn mediator(a: MediatorArgs, out: &Path) -> Result<bool> {
    let Some(name) = a.target else { return Err(usage("mediator needs --target pair|local-z")) };
    let Some(dims) = parse_usize_set(&a.dims) else { return Err(usage(format!("bad --dims `{}`", a.dims))) };
    if dims.is_empty() || dims.iter().any(|&d| d < 2) {
        return Err(usage("--dims must be a nonempty set of dimensions >= 2"));
    }
    let target = match name {
        TargetName::Pair => Target::Pair,
        TargetName::LocalZ => Target::LocalZ { omega: a.omega },
    };
    let p = MediatorProblem::from_target(target, a.tau, dims[0])?;
    let opts = OptimizeOptions { restarts: a.restarts, max_iters: a.max_iters, seed: a.seed };
    let rep = dimension_scan(&p, &dims, &opts)?;
    let mut o = Outputs::new(out)?;
    rep.write_csv(o.create("mediator_scan.csv")?)?;
    for s in &rep.solutions {
        o.json(&format!("solution_d{}.json", s.d), s)?;
    }
    o.json(
        "mediator_report.json",
        &json!({
            "target": target,
            "rows": rep.rows,
            "monotone": rep.monotone,
            "smallest_realizable": rep.smallest_realizable,
        }),
    )?;
    for r in &rep.rows {
        println!("d={} residual={}", r.d, fmt12(r.residual));
    }
    o.finish("mediator", serde_json::to_value(&a)?, Some(a.seed))?;
    Ok(true)
}

fn validate(a: ValidateArgs, out: &Path) -> Result<bool> {
    if let Some(bad) = a.criteria.iter().find(|&&i| !(1..=12).contains(&i)) {
        return Err(usage(format!("no criterion {bad}")));
    }
    let results = run_criteria(&a.criteria);
    for r in &results {
        println!("{}", r.line());
    }
    let mut o = Outputs::new(out)?;
    o.json("validation.json", &results)?;
    o.finish("validate", serde_json::to_value(&a)?, None)?;
    Ok(results.iter().all(|r| r.pass))
}
