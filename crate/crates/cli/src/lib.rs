//! Argument handling and subcommands of the `idls` simulator binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use idls::channel::{ChannelModel, ChannelSpec, SPEED_OF_LIGHT};
use idls::detectors::{DeltaMode, LambdaMode};
use idls::harness::{
    convergence_csv, db_to_linear, lambda_csv, run_convergence, run_lambda_trace, run_sweep, sweep_csv,
    trials_for_bits, DetectorKind, ExperimentSpec, RunOptions, SweepRow, DEFAULT_MAX_BITS, DEFAULT_TARGET_ERRORS,
};
use idls::regparam::LambdaSolver;
use idls::validate;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "idls", version, about = "IDLS detection simulator for overloaded MIMO/NOMA")]
pub struct Cli {
    /// Worker threads for trial-parallel runs.
    #[arg(long, global = true, env = "IDLS_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// BER versus Eb/N0 for a list of detectors.
    Sweep(ExperimentArgs),
    /// BER of the sliced iterate after each IDLS iteration.
    Convergence(ExperimentArgs),
    /// Per-iteration regularization weights of an IDLS detector.
    LambdaTrace(ExperimentArgs),
    /// Symbol error rates of the detectors against the exhaustive ML oracle.
    OracleCompare(ExperimentArgs),
    /// Runs the built-in property suites.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentArgs {
    /// TOML file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nt: Option<usize>,
    /// Defaults to `--nt`.
    #[arg(long)]
    pub nr: Option<usize>,
    /// iid or jakes.
    #[arg(long)]
    pub channel: Option<String>,
    /// Antenna spacing in carrier wavelengths (default 0.5).
    #[arg(long)]
    pub spacing_wavelengths: Option<f64>,
    #[arg(long)]
    pub carrier_hz: Option<f64>,
    /// Comma-separated: zf, lmmse, idls, idls-noise, idls-robust, soav, ml.
    #[arg(long)]
    pub detector: Option<String>,
    /// `start:step:stop` or a comma-separated list, in dB.
    #[arg(long)]
    pub ebn0: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Bit errors per detector and point before stopping; 0 disables.
    #[arg(long)]
    pub target_errors: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bits_per_symbol: Option<u32>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub kmax: Option<usize>,
    /// auto, auto-once or fixed=<value>.
    #[arg(long)]
    pub lambda: Option<String>,
    /// pencil or secular.
    #[arg(long)]
    pub lambda_solver: Option<String>,
    /// CSI uncertainty tau^2 in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub tau_db: Option<f64>,
    /// Transmit distortion level eta in dB.
    #[arg(long, allow_hyphen_values = true)]
    pub eta_db: Option<f64>,
    /// noise or fixed=<value>.
    #[arg(long)]
    pub delta: Option<String>,
    /// SOAV weight; auto tunes it on pilot trials.
    #[arg(long)]
    pub soav_lambda: Option<String>,
    #[arg(long)]
    pub pilot_trials: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Smaller instance counts.
    #[arg(long)]
    pub quick: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

/// Error split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

/// `start:step:stop` (inclusive), a comma list, or a single value.
pub fn parse_ebn0(text: &str) -> Result<Vec<f64>, CliError> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad Eb/N0 value '{s}'")));
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return usage(format!("Eb/N0 range must be start:step:stop, got '{text}'"));
        }
        let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || stop < start {
            return usage(format!("Eb/N0 range needs step > 0 and stop >= start, got '{text}'"));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // round to suppress accumulated binary error in the grid labels
        return Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect());
    }
    let vals = text.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
    if vals.is_empty() {
        return usage("empty Eb/N0 list");
    }
    Ok(vals)
}

pub fn parse_detectors(text: &str) -> Result<Vec<DetectorKind>, CliError> {
    let kinds = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<DetectorKind>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if kinds.is_empty() {
        return usage("no detectors given");
    }
    Ok(kinds)
}

fn parse_fixed(text: &str, what: &str) -> Result<f64, CliError> {
    let v = text.strip_prefix("fixed=").unwrap_or(text);
    v.parse::<f64>().map_err(|_| CliError::Usage(format!("bad {what} value '{text}'")))
}

pub fn parse_lambda(text: &str) -> Result<LambdaMode, CliError> {
    match text {
        "auto" => Ok(LambdaMode::Auto),
        "auto-once" => Ok(LambdaMode::AutoOnce),
        t if t.starts_with("fixed=") => Ok(LambdaMode::Fixed(parse_fixed(t, "lambda")?)),
        t => usage(format!("--lambda must be auto, auto-once or fixed=<v>, got '{t}'")),
    }
}

pub fn parse_delta(text: &str) -> Result<DeltaMode, CliError> {
    match text {
        "noise" => Ok(DeltaMode::NoisePower),
        t if t.starts_with("fixed=") => Ok(DeltaMode::Fixed(parse_fixed(t, "delta")?)),
        t => usage(format!("--delta must be noise or fixed=<v>, got '{t}'")),
    }
}

fn parse_solver(text: &str) -> Result<LambdaSolver, CliError> {
    match text {
        "pencil" => Ok(LambdaSolver::Pencil),
        "secular" => Ok(LambdaSolver::Secular),
        t => usage(format!("--lambda-solver must be pencil or secular, got '{t}'")),
    }
}

fn parse_channel(text: &str) -> Result<ChannelModel, CliError> {
    match text {
        "iid" | "iid-rayleigh" => Ok(ChannelModel::IidRayleigh),
        "jakes" | "jakes-correlated" => Ok(ChannelModel::JakesCorrelated),
        t => usage(format!("--channel must be iid or jakes, got '{t}'")),
    }
}

/// Flags over file values.
pub fn merge(flags: &ExperimentArgs) -> Result<ExperimentArgs, CliError> {
    let Some(path) = &flags.config else {
        return Ok(flags.clone());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let file: ExperimentArgs =
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?;
    macro_rules! pick {
        ($($f:ident),*) => { ExperimentArgs { config: flags.config.clone(), $($f: flags.$f.clone().or(file.$f),)* } };
    }
    Ok(pick!(
        nt, nr, channel, spacing_wavelengths, carrier_hz, detector, ebn0, trials, target_errors, seed,
        bits_per_symbol, alpha, eps, kmax, lambda, lambda_solver, tau_db, eta_db, delta, soav_lambda,
        pilot_trials, batch_size, out
    ))
}

/// Per-command defaults that differ from the sweep.
#[derive(Debug, Clone, Copy)]
pub struct CommandDefaults {
    pub nt: usize,
    pub detectors: &'static str,
    pub ebn0: &'static str,
    pub trials: Option<usize>,
}

pub const SWEEP_DEFAULTS: CommandDefaults = CommandDefaults { nt: 32, detectors: "idls,lmmse", ebn0: "0:2:12", trials: None };
pub const CONVERGENCE_DEFAULTS: CommandDefaults = CommandDefaults { nt: 32, detectors: "idls", ebn0: "8", trials: None };
pub const LAMBDA_DEFAULTS: CommandDefaults = CommandDefaults { nt: 24, detectors: "idls", ebn0: "10", trials: Some(100) };
pub const ORACLE_DEFAULTS: CommandDefaults = CommandDefaults { nt: 4, detectors: "idls,ml", ebn0: "14", trials: Some(1000) };

/// Resolves arguments into a complete experiment; every default lands in the spec.
pub fn resolve(args: &ExperimentArgs, d: CommandDefaults) -> Result<(ExperimentSpec, PathBuf), CliError> {
    let args = merge(args)?;
    let nt = args.nt.unwrap_or(d.nt);
    let nr = args.nr.unwrap_or(nt);
    let model = parse_channel(args.channel.as_deref().unwrap_or("iid"))?;
    let mut channel = ChannelSpec::new(nt, nr, model);
    if let Some(f) = args.carrier_hz {
        channel.carrier_hz = f;
    }
    channel.spacing_m = args.spacing_wavelengths.unwrap_or(0.5) * SPEED_OF_LIGHT / channel.carrier_hz;
    let detectors = parse_detectors(args.detector.as_deref().unwrap_or(d.detectors))?;
    let ebn0 = parse_ebn0(args.ebn0.as_deref().unwrap_or(d.ebn0))?;
    let mut spec = ExperimentSpec::new(channel, detectors, ebn0);
    if let Some(b) = args.bits_per_symbol {
        spec.bits_per_symbol = b;
    }
    spec.max_trials = args
        .trials
        .or(d.trials)
        .unwrap_or_else(|| trials_for_bits(DEFAULT_MAX_BITS, nt, spec.bits_per_symbol));
    spec.target_bit_errors = match args.target_errors {
        Some(0) => None,
        Some(t) => Some(t),
        None if d.trials.is_some() && args.trials.is_none() => None,
        None => Some(DEFAULT_TARGET_ERRORS),
    };
    spec.master_seed = args.seed.unwrap_or(0);
    if let Some(a) = args.alpha {
        spec.idls.alpha = a;
    }
    if let Some(e) = args.eps {
        spec.idls.eps = e;
    }
    if let Some(k) = args.kmax {
        spec.idls.k_max = k;
    }
    if let Some(l) = &args.lambda {
        spec.idls.lambda_mode = parse_lambda(l)?;
    }
    if let Some(s) = &args.lambda_solver {
        spec.idls.lambda_solver = parse_solver(s)?;
    }
    if let Some(dm) = &args.delta {
        spec.idls.delta_mode = parse_delta(dm)?;
    }
    spec.tau_sq = args.tau_db.map_or(0.0, db_to_linear);
    spec.eta = args.eta_db.map_or(0.0, db_to_linear);
    match args.soav_lambda.as_deref() {
        None | Some("auto") => spec.soav.lambda = None,
        Some(v) => spec.soav.lambda = Some(v.parse().map_err(|_| CliError::Usage(format!("bad --soav-lambda '{v}'")))?),
    }
    if let Some(p) = args.pilot_trials {
        spec.soav.pilot_trials = p;
    }
    if let Some(b) = args.batch_size {
        spec.batch_size = b;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((spec, args.out.unwrap_or_else(|| PathBuf::from("results"))))
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub timestamp: String,
    pub seed: u64,
    pub workers: usize,
    pub overloading_ratio: f64,
    pub spec: &'a ExperimentSpec,
    pub soav_lambda: BTreeMap<String, f64>,
    pub failed_trials: BTreeMap<String, usize>,
    pub elapsed_s: f64,
}

fn write_outputs(dir: &Path, name: &str, csv: &str, manifest: &RunManifest) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join(format!("{name}.csv"));
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let man_path = dir.join(format!("{name}.manifest.json"));
    fs::write(&man_path, serde_json::to_string_pretty(manifest)? + "\n")
        .with_context(|| format!("writing {}", man_path.display()))?;
    eprintln!("wrote {} and {}", csv_path.display(), man_path.display());
    Ok(())
}

fn manifest<'a>(command: &'a str, spec: &'a ExperimentSpec, workers: usize, rows: &[SweepRow], start: Instant) -> RunManifest<'a> {
    let key = |r: &SweepRow| format!("{}@{}", r.detector, idls::harness::fmt_sig(r.ebn0_db));
    RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339(),
        seed: spec.master_seed,
        workers,
        overloading_ratio: spec.overloading_ratio(),
        spec,
        soav_lambda: rows.iter().filter_map(|r| r.soav_lambda.map(|l| (key(r), l))).collect(),
        failed_trials: rows.iter().filter(|r| r.failed_trials > 0).map(|r| (key(r), r.failed_trials)).collect(),
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}

fn print_rows(rows: &[SweepRow], with_ser: bool) {
    println!(
        "{:<12} {:>8} {:>8} {:>12} {:>12} {:>10} {:>9}{}",
        "detector",
        "ebn0_db",
        "trials",
        "bit_errors",
        "ber",
        "avg_iter",
        "conv",
        if with_ser { "          ser" } else { "" }
    );
    for r in rows {
        print!(
            "{:<12} {:>8} {:>8} {:>12} {:>12.4e} {:>10.2} {:>9.3}",
            r.detector.name(),
            idls::harness::fmt_sig(r.ebn0_db),
            r.trials,
            r.bit_errors,
            r.ber,
            r.avg_iterations,
            r.converged_fraction
        );
        if with_ser {
            print!(" {:>12.4e}", r.ser());
        }
        println!();
        if let Some(l) = r.soav_lambda {
            println!("{:<12} weight {l} chosen on pilot trials", "");
        }
    }
}

fn opts(workers: usize) -> Result<RunOptions, CliError> {
    if workers == 0 {
        return usage("--workers must be at least 1");
    }
    Ok(RunOptions { workers })
}

pub fn cmd_sweep(args: &ExperimentArgs, workers: usize) -> Result<(), CliError> {
    let (spec, out) = resolve(args, SWEEP_DEFAULTS)?;
    let start = Instant::now();
    let res = run_sweep(&spec, opts(workers)?).context("sweep failed")?;
    print_rows(&res.rows, false);
    write_outputs(&out, "sweep", &sweep_csv(&res.rows), &manifest("sweep", &spec, workers, &res.rows, start))?;
    eprintln!("elapsed {:.2} s", start.elapsed().as_secs_f64());
    Ok(())
}

pub fn cmd_oracle_compare(args: &ExperimentArgs, workers: usize) -> Result<(), CliError> {
    let (mut spec, out) = resolve(args, ORACLE_DEFAULTS)?;
    if !spec.detectors.contains(&DetectorKind::Ml) {
        spec.detectors.push(DetectorKind::Ml);
    }
    let start = Instant::now();
    let res = run_sweep(&spec, opts(workers)?).context("oracle comparison failed")?;
    print_rows(&res.rows, true);
    write_outputs(&out, "oracle", &sweep_csv(&res.rows), &manifest("oracle-compare", &spec, workers, &res.rows, start))?;
    Ok(())
}

pub fn cmd_convergence(args: &ExperimentArgs, workers: usize) -> Result<(), CliError> {
    let (spec, out) = resolve(args, CONVERGENCE_DEFAULTS)?;
    if !spec.detectors.iter().any(|k| k.is_idls()) {
        return usage("convergence needs an IDLS detector (idls, idls-noise or idls-robust)");
    }
    let start = Instant::now();
    let mut rows = Vec::new();
    for &ebn0 in &spec.ebn0_grid_db {
        rows.extend(run_convergence(&spec, ebn0, opts(workers)?).context("convergence run failed")?);
    }
    for r in rows.iter().filter(|r| r.iteration == 1 || r.iteration % 10 == 0 || r.iteration == spec.idls.k_max) {
        println!("{:<12} {:>8} {:>4} {:>12.4e}", r.detector.name(), idls::harness::fmt_sig(r.ebn0_db), r.iteration, r.ber);
    }
    write_outputs(&out, "convergence", &convergence_csv(&rows), &manifest("convergence", &spec, workers, &[], start))?;
    Ok(())
}

pub fn cmd_lambda_trace(args: &ExperimentArgs, workers: usize) -> Result<(), CliError> {
    let (spec, out) = resolve(args, LAMBDA_DEFAULTS)?;
    if !spec.detectors.iter().any(|k| k.is_idls()) {
        return usage("lambda-trace needs an IDLS detector (idls, idls-noise or idls-robust)");
    }
    let start = Instant::now();
    let ebn0 = spec.ebn0_grid_db[0];
    let trace = run_lambda_trace(&spec, ebn0, opts(workers)?).context("lambda trace failed")?;
    println!("{} at {} dB over {} trials: mean weight per iteration", trace.detector, idls::harness::fmt_sig(ebn0), trace.per_trial.len());
    for (k, m) in trace.mean.iter().enumerate() {
        println!("{:>4} {:>14.6e}", k + 1, m);
    }
    write_outputs(&out, "lambda", &lambda_csv(&trace), &manifest("lambda-trace", &spec, workers, &[], start))?;
    Ok(())
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let results = validate::run_all(args.seed, args.quick);
    for r in &results {
        println!("{:<4} {:<34} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} suites passed in {:.1} s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!("{failed} validation suite(s) failed")));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sweep(a) => cmd_sweep(a, cli.workers),
        Command::Convergence(a) => cmd_convergence(a, cli.workers),
        Command::LambdaTrace(a) => cmd_lambda_trace(a, cli.workers),
        Command::OracleCompare(a) => cmd_oracle_compare(a, cli.workers),
        Command::Validate(a) => cmd_validate(a),
    }
}
