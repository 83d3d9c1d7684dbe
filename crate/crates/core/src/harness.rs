//! Monte-Carlo engine: paired trials, Eb/N0 sweeps, convergence and weight
//! traces, and the CSV serializations of their results.
//!
//! Every trial owns a ChaCha8 stream keyed by `(master_seed, Eb/N0, trial)`,
//! so results do not depend on scheduling. Trials run in fixed-size batches;
//! which detectors are still active in a batch depends only on earlier
//! batches, which keeps early stopping deterministic for any worker count.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    effective_noise_covariance, normalize_received, receive, transmit, ChannelSampler, ChannelSpec, EffectiveNoise,
    ImpairmentParams,
};
use crate::constellation::{Constellation, RealLinearModel};
use crate::detectors::{idls, idls_noise_aware, idls_robust, lmmse, lmmse_sigma_aware, zf, DetectionResult, DetectorConfig};
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, RVec};
use crate::ml::{ml_detect, OracleLimits};
use crate::soav::{soav_detect, L1Config, LAMBDA_GRID};

pub const DEFAULT_MAX_BITS: u64 = 1_000_000;
pub const DEFAULT_TARGET_ERRORS: u64 = 200;
pub const DEFAULT_BATCH: usize = 32;
pub const DEFAULT_PILOT_TRIALS: usize = 200;

pub const DOMAIN_TRIAL: u64 = 0;
pub const DOMAIN_PILOT: u64 = 1;

/// Complex-domain noise variance `Nt / (b 10^(EbN0/10))`.
pub fn noise_variance(nt: usize, bits_per_symbol: u32, ebn0_db: f64) -> f64 {
    nt as f64 / (bits_per_symbol as f64 * 10f64.powf(ebn0_db / 10.0))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Zf,
    Lmmse,
    Idls,
    IdlsNoise,
    IdlsRobust,
    Soav,
    Ml,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 7] = [
        DetectorKind::Zf,
        DetectorKind::Lmmse,
        DetectorKind::Idls,
        DetectorKind::IdlsNoise,
        DetectorKind::IdlsRobust,
        DetectorKind::Soav,
        DetectorKind::Ml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Zf => "zf",
            DetectorKind::Lmmse => "lmmse",
            DetectorKind::Idls => "idls",
            DetectorKind::IdlsNoise => "idls-noise",
            DetectorKind::IdlsRobust => "idls-robust",
            DetectorKind::Soav => "soav",
            DetectorKind::Ml => "ml",
        }
    }

    /// One of the IDLS variants, which expose iterates and weight traces.
    pub fn is_idls(self) -> bool {
        matches!(self, DetectorKind::Idls | DetectorKind::IdlsNoise | DetectorKind::IdlsRobust)
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown detector '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoavSettings {
    /// Fixed weight; `None` picks the best of `LAMBDA_GRID` on pilot trials.
    pub lambda: Option<f64>,
    pub pilot_trials: usize,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SoavSettings {
    fn default() -> Self {
        let l1 = L1Config::default();
        Self { lambda: None, pilot_trials: DEFAULT_PILOT_TRIALS, max_iters: l1.max_iters, tol: l1.tol }
    }
}

impl SoavSettings {
    fn config(&self, lambda: f64) -> L1Config {
        L1Config { lambda, max_iters: self.max_iters, tol: self.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub channel: ChannelSpec,
    /// Gauss-Markov `tau^2` (linear).
    pub tau_sq: f64,
    /// Transmit distortion level (linear).
    pub eta: f64,
    pub bits_per_symbol: u32,
    pub detectors: Vec<DetectorKind>,
    pub idls: DetectorConfig,
    pub soav: SoavSettings,
    pub ebn0_grid_db: Vec<f64>,
    pub max_trials: usize,
    /// Per-detector stop once this many bit errors are counted.
    pub target_bit_errors: Option<u64>,
    pub master_seed: u64,
    pub batch_size: usize,
    pub oracle_cap: u64,
}

impl ExperimentSpec {
    /// QPSK, ideal hardware, default stopping of `min(1e6 bits, 200 errors)`.
    pub fn new(channel: ChannelSpec, detectors: Vec<DetectorKind>, ebn0_grid_db: Vec<f64>) -> Self {
        let bits_per_symbol = 2;
        let max_trials = trials_for_bits(DEFAULT_MAX_BITS, channel.nt, bits_per_symbol);
        Self {
            channel,
            tau_sq: 0.0,
            eta: 0.0,
            bits_per_symbol,
            detectors,
            idls: DetectorConfig::default(),
            soav: SoavSettings::default(),
            ebn0_grid_db,
            max_trials,
            target_bit_errors: Some(DEFAULT_TARGET_ERRORS),
            master_seed: 0,
            batch_size: DEFAULT_BATCH,
            oracle_cap: OracleLimits::default().max_candidates,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        if self.ebn0_grid_db.is_empty() || self.ebn0_grid_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("Eb/N0 grid must be non-empty and finite".into()));
        }
        if self.max_trials == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("trials and batch size must be at least 1".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::InvalidParameter("no detectors selected".into()));
        }
        if !(0.0..1.0).contains(&self.tau_sq) || !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= tau^2 < 1 and eta >= 0, got tau^2={}, eta={}",
                self.tau_sq, self.eta
            )));
        }
        if let Some(l) = self.soav.lambda {
            self.soav.config(l).validate()?;
        }
        self.idls.validate()?;
        Constellation::square_qam(self.bits_per_symbol)?;
        Ok(())
    }

    pub fn impairments(&self) -> Result<ImpairmentParams> {
        ImpairmentParams::for_channel(&self.channel, self.tau_sq, self.eta)
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::square_qam(self.bits_per_symbol)
    }

    pub fn overloading_ratio(&self) -> f64 {
        self.channel.overloading_ratio()
    }
}

/// Trials needed to transmit at least `bits` bits.
pub fn trials_for_bits(bits: u64, nt: usize, bits_per_symbol: u32) -> usize {
    let per = (nt as u64 * bits_per_symbol as u64).max(1);
    bits.div_ceil(per).max(1) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

/// Stream for one trial; the key separates seeds, Eb/N0 points and domains.
pub fn trial_rng(master_seed: u64, ebn0_db: f64, domain: u64, trial: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&ebn0_db.to_bits().to_le_bytes());
    key[16..24].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial as u64);
    rng
}

/// Everything one trial hands to the detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialInputs {
    pub indices: Vec<usize>,
    pub y: CVec,
    pub h_est: CMat,
    pub sigma2: f64,
    /// `(y, H_est)` stacked.
    pub model: RealLinearModel,
    /// `(y / sqrt(1 - tau^2), H_est)` stacked.
    pub model_bar: RealLinearModel,
    pub noise: EffectiveNoise,
}

/// Fixed per-point state shared by all trials.
pub struct PointContext {
    spec: ExperimentSpec,
    con: Constellation,
    imp: ImpairmentParams,
    sampler: ChannelSampler,
    pub ebn0_db: f64,
    pub sigma2: f64,
}

impl PointContext {
    pub fn new(spec: &ExperimentSpec, ebn0_db: f64) -> Result<Self> {
        spec.validate()?;
        let imp = spec.impairments()?;
        let sampler = ChannelSampler::new(&spec.channel, &imp)?;
        Ok(Self {
            spec: spec.clone(),
            con: spec.constellation()?,
            imp,
            sampler,
            ebn0_db,
            sigma2: noise_variance(spec.channel.nt, spec.bits_per_symbol, ebn0_db),
        })
    }

    pub fn constellation(&self) -> &Constellation {
        &self.con
    }

    /// Channel, symbols, distortion and noise, in that draw order.
    pub fn draw(&self, domain: u64, trial: usize) -> Result<TrialInputs> {
        let mut rng = trial_rng(self.spec.master_seed, self.ebn0_db, domain, trial);
        let real = self.sampler.draw(&mut rng);
        let m = self.con.len();
        let indices: Vec<usize> = (0..self.spec.channel.nt).map(|_| rng.random_range(0..m)).collect();
        let s = self.con.symbols(&indices);
        let x = transmit(&s, &self.imp, &mut rng);
        let y = receive(&real.h_true, &x, self.sigma2, &mut rng)?;
        let y_bar = normalize_received(&y, self.imp.tau)?;
        let model = RealLinearModel::from_complex(&y, &real.h_est)?;
        let model_bar = RealLinearModel::from_complex(&y_bar, &real.h_est)?;
        let noise = effective_noise_covariance(&real.h_est, &self.imp, self.sigma2)?;
        Ok(TrialInputs { indices, y, h_est: real.h_est, sigma2: self.sigma2, model, model_bar, noise })
    }

    /// Runs one detector; `soav_lambda` is required for SOAV.
    pub fn detect(&self, kind: DetectorKind, input: &TrialInputs, soav_lambda: f64) -> Result<Detected> {
        let cfg = &self.spec.idls;
        let from_idls = |r: DetectionResult| Detected {
            estimate: Estimate::Real(r.s_hat_real),
            iterations: r.iterations,
            converged: r.converged,
            lambda_trace: r.lambda_trace,
            iterates: r.iterates,
        };
        Ok(match kind {
            DetectorKind::Zf => Detected::linear(zf(&input.model)?),
            DetectorKind::Lmmse => {
                if self.imp.is_ideal() {
                    Detected::linear(lmmse(&input.model, input.sigma2)?)
                } else {
                    Detected::linear(lmmse_sigma_aware(&input.model_bar, &input.noise)?)
                }
            }
            DetectorKind::Idls => from_idls(idls(&input.model, &self.con, cfg, input.sigma2)?),
            DetectorKind::IdlsNoise => from_idls(idls_noise_aware(&input.model, &self.con, cfg, input.sigma2)?),
            DetectorKind::IdlsRobust => {
                from_idls(idls_robust(&input.model_bar, &self.con, cfg, &input.noise, input.sigma2)?)
            }
            DetectorKind::Soav => {
                let r = soav_detect(&input.model, &self.con, &self.spec.soav.config(soav_lambda))?;
                Detected {
                    estimate: Estimate::Real(r.s_hat_real),
                    iterations: r.iterations,
                    converged: r.converged,
                    lambda_trace: Vec::new(),
                    iterates: Vec::new(),
                }
            }
            DetectorKind::Ml => {
                let limits = OracleLimits { max_candidates: self.spec.oracle_cap };
                let r = ml_detect(&input.y, &input.h_est, &self.con, limits)?;
                Detected {
                    estimate: Estimate::Indices(r.indices),
                    iterations: 0,
                    converged: true,
                    lambda_trace: Vec::new(),
                    iterates: Vec::new(),
                }
            }
        })
    }

    /// Bit and symbol errors of a detector output against the trial truth.
    pub fn score(&self, est: &Estimate, truth: &[usize]) -> Result<(u64, u64)> {
        let indices = match est {
            Estimate::Real(s) => self.con.slice(s)?.indices,
            Estimate::Indices(i) => i.clone(),
        };
        let d = crate::constellation::Decision::new(&self.con, indices);
        Ok((d.bit_errors(&self.con, truth), d.symbol_errors(truth)))
    }

    fn bits_per_trial(&self) -> u64 {
        self.spec.channel.nt as u64 * self.spec.bits_per_symbol as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    Real(RVec),
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detected {
    pub estimate: Estimate,
    pub iterations: usize,
    pub converged: bool,
    pub lambda_trace: Vec<f64>,
    pub iterates: Vec<RVec>,
}

impl Detected {
    fn linear(s: RVec) -> Self {
        Self { estimate: Estimate::Real(s), iterations: 0, converged: true, lambda_trace: Vec::new(), iterates: Vec::new() }
    }
}

/// Outcome of one detector on one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub detector: DetectorKind,
    pub ebn0_db: f64,
    pub trial: usize,
    pub bit_errors: u64,
    pub symbol_errors: u64,
    pub total_bits: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the detector returned an error; such trials carry no counts.
    pub failed: bool,
    pub lambda_trace: Option<Vec<f64>>,
    /// Bit errors of the sliced iterate after each iteration `1..=k_max`.
    #[serde(skip)]
    pub iterate_bit_errors: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub detector: DetectorKind,
    pub channel: String,
    pub nt: usize,
    pub nr: usize,
    pub ebn0_db: f64,
    pub trials: usize,
    pub bit_errors: u64,
    pub total_bits: u64,
    pub ber: f64,
    pub avg_iterations: f64,
    pub converged_fraction: f64,
    pub symbol_errors: u64,
    pub failed_trials: usize,
    pub soav_lambda: Option<f64>,
}

impl SweepRow {
    pub fn ser(&self) -> f64 {
        let symbols = self.trials as u64 * self.nt as u64;
        if symbols == 0 {
            0.0
        } else {
            self.symbol_errors as f64 / symbols as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub detector: DetectorKind,
    pub ebn0_db: f64,
    pub iteration: usize,
    pub ber: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaTrace {
    pub detector: DetectorKind,
    pub ebn0_db: f64,
    pub per_trial: Vec<Vec<f64>>,
    /// Mean over the trials still running at each iteration.
    pub mean: Vec<f64>,
}

fn build_pool(opts: RunOptions) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// SOAV weight with the fewest pilot bit errors; ties keep the smaller weight.
pub fn tune_soav_lambda(ctx: &PointContext, pool: &rayon::ThreadPool) -> Result<f64> {
    if let Some(l) = ctx.spec.soav.lambda {
        return Ok(l);
    }
    let trials = ctx.spec.soav.pilot_trials.max(1);
    let inputs: Vec<TrialInputs> =
        pool.install(|| (0..trials).into_par_iter().map(|t| ctx.draw(DOMAIN_PILOT, t)).collect::<Result<_>>())?;
    let mut best = (u64::MAX, LAMBDA_GRID[0]);
    for &lambda in &LAMBDA_GRID {
        let errors: u64 = pool.install(|| {
            inputs
                .par_iter()
                .map(|inp| match ctx.detect(DetectorKind::Soav, inp, lambda) {
                    Ok(d) => ctx.score(&d.estimate, &inp.indices).map(|s| s.0).unwrap_or(ctx.bits_per_trial()),
                    Err(_) => ctx.bits_per_trial(),
                })
                .sum()
        });
        if errors < best.0 {
            best = (errors, lambda);
        }
    }
    Ok(best.1)
}

fn evaluate(
    ctx: &PointContext,
    kinds: &[DetectorKind],
    active: &[bool],
    trial: usize,
    soav_lambda: f64,
    keep_iterates: bool,
) -> Vec<Option<TrialRecord>> {
    let total_bits = ctx.bits_per_trial();
    let failed = |kind| TrialRecord {
        detector: kind,
        ebn0_db: ctx.ebn0_db,
        trial,
        bit_errors: 0,
        symbol_errors: 0,
        total_bits: 0,
        iterations: 0,
        converged: false,
        failed: true,
        lambda_trace: None,
        iterate_bit_errors: None,
    };
    let input = match ctx.draw(DOMAIN_TRIAL, trial) {
        Ok(i) => i,
        Err(_) => return kinds.iter().zip(active).map(|(&k, &a)| a.then(|| failed(k))).collect(),
    };
    kinds
        .iter()
        .zip(active)
        .map(|(&kind, &on)| {
            if !on {
                return None;
            }
            let run = || -> Result<TrialRecord> {
                let d = ctx.detect(kind, &input, soav_lambda)?;
                let (bit_errors, symbol_errors) = ctx.score(&d.estimate, &input.indices)?;
                let iterate_bit_errors = if keep_iterates && kind.is_idls() {
                    let mut per = Vec::with_capacity(ctx.spec.idls.k_max);
                    for k in 0..ctx.spec.idls.k_max {
                        let s = &d.iterates[k.min(d.iterates.len() - 1)];
                        per.push(ctx.score(&Estimate::Real(s.clone()), &input.indices)?.0);
                    }
                    Some(per)
                } else {
                    None
                };
                Ok(TrialRecord {
                    detector: kind,
                    ebn0_db: ctx.ebn0_db,
                    trial,
                    bit_errors,
                    symbol_errors,
                    total_bits,
                    iterations: d.iterations,
                    converged: d.converged,
                    failed: false,
                    lambda_trace: kind.is_idls().then_some(d.lambda_trace),
                    iterate_bit_errors,
                })
            };
            Some(run().unwrap_or_else(|_| failed(kind)))
        })
        .collect()
}

/// Per-detector counted records for one Eb/N0 point, honoring early stops.
fn run_point(
    ctx: &PointContext,
    kinds: &[DetectorKind],
    pool: &rayon::ThreadPool,
    soav_lambda: f64,
    keep_iterates: bool,
    target: Option<u64>,
) -> Vec<Vec<TrialRecord>> {
    let n = kinds.len();
    let mut active = vec![true; n];
    let mut errors = vec![0u64; n];
    let mut counted: Vec<Vec<TrialRecord>> = vec![Vec::new(); n];
    let max = ctx.spec.max_trials;
    let mut next = 0;
    while next < max && active.iter().any(|&a| a) {
        let end = (next + ctx.spec.batch_size).min(max);
        let batch: Vec<Vec<Option<TrialRecord>>> = pool.install(|| {
            (next..end).into_par_iter().map(|t| evaluate(ctx, kinds, &active, t, soav_lambda, keep_iterates)).collect()
        });
        for d in 0..n {
            if !active[d] {
                continue;
            }
            for rec in batch.iter().map(|row| row[d].clone().expect("active detector has a record")) {
                errors[d] += rec.bit_errors;
                counted[d].push(rec);
                if target.is_some_and(|t| errors[d] >= t) {
                    active[d] = false;
                    break;
                }
            }
        }
        next = end;
    }
    counted
}

fn aggregate(ctx: &PointContext, kind: DetectorKind, recs: &[TrialRecord], soav_lambda: Option<f64>) -> SweepRow {
    let ok: Vec<&TrialRecord> = recs.iter().filter(|r| !r.failed).collect();
    let bit_errors: u64 = ok.iter().map(|r| r.bit_errors).sum();
    let total_bits: u64 = ok.iter().map(|r| r.total_bits).sum();
    let trials = ok.len();
    let denom = trials.max(1) as f64;
    SweepRow {
        detector: kind,
        channel: ctx.spec.channel.model.short_name().to_string(),
        nt: ctx.spec.channel.nt,
        nr: ctx.spec.channel.nr,
        ebn0_db: ctx.ebn0_db,
        trials,
        bit_errors,
        total_bits,
        ber: if total_bits == 0 { 0.0 } else { bit_errors as f64 / total_bits as f64 },
        avg_iterations: ok.iter().map(|r| r.iterations as f64).sum::<f64>() / denom,
        converged_fraction: ok.iter().filter(|r| r.converged).count() as f64 / denom,
        symbol_errors: ok.iter().map(|r| r.symbol_errors).sum(),
        failed_trials: recs.len() - trials,
        soav_lambda: if kind == DetectorKind::Soav { soav_lambda } else { None },
    }
}

fn sweep_with(spec: &ExperimentSpec, opts: RunOptions, keep_iterates: bool) -> Result<SweepOutput> {
    spec.validate()?;
    let pool = build_pool(opts)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for &ebn0 in &spec.ebn0_grid_db {
        let ctx = PointContext::new(spec, ebn0)?;
        let soav_lambda = if spec.detectors.contains(&DetectorKind::Soav) {
            Some(tune_soav_lambda(&ctx, &pool)?)
        } else {
            None
        };
        let counted =
            run_point(&ctx, &spec.detectors, &pool, soav_lambda.unwrap_or(0.0), keep_iterates, spec.target_bit_errors);
        for (&kind, recs) in spec.detectors.iter().zip(counted) {
            rows.push(aggregate(&ctx, kind, &recs, soav_lambda));
            records.extend(recs);
        }
    }
    Ok(SweepOutput { rows, records })
}

/// BER table over the Eb/N0 grid for every detector in the spec.
pub fn run_sweep(spec: &ExperimentSpec, opts: RunOptions) -> Result<SweepOutput> {
    sweep_with(spec, opts, false)
}

/// BER of the sliced iterate after each iteration, for the IDLS detectors of
/// the spec, over the same trials `run_sweep` would count.
pub fn run_convergence(spec: &ExperimentSpec, ebn0_db: f64, opts: RunOptions) -> Result<Vec<ConvergenceRow>> {
    let mut spec = spec.clone();
    spec.detectors.retain(|k| k.is_idls());
    if spec.detectors.is_empty() {
        return Err(Error::InvalidParameter("convergence needs at least one IDLS detector".into()));
    }
    spec.ebn0_grid_db = vec![ebn0_db];
    spec.idls.record_iterates = true;
    let out = sweep_with(&spec, opts, true)?;
    let mut rows = Vec::new();
    for &kind in &spec.detectors {
        let recs: Vec<&TrialRecord> = out.records.iter().filter(|r| r.detector == kind && !r.failed).collect();
        let bits: u64 = recs.iter().map(|r| r.total_bits).sum();
        for k in 0..spec.idls.k_max {
            let errs: u64 = recs.iter().map(|r| r.iterate_bit_errors.as_ref().expect("iterates kept")[k]).sum();
            rows.push(ConvergenceRow {
                detector: kind,
                ebn0_db,
                iteration: k + 1,
                ber: if bits == 0 { 0.0 } else { errs as f64 / bits as f64 },
            });
        }
    }
    Ok(rows)
}

/// Weight traces of the first IDLS detector of the spec over `max_trials`.
pub fn run_lambda_trace(spec: &ExperimentSpec, ebn0_db: f64, opts: RunOptions) -> Result<LambdaTrace> {
    let kind = spec
        .detectors
        .iter()
        .copied()
        .find(|k| k.is_idls())
        .ok_or_else(|| Error::InvalidParameter("lambda trace needs an IDLS detector".into()))?;
    let mut spec = spec.clone();
    spec.detectors = vec![kind];
    spec.ebn0_grid_db = vec![ebn0_db];
    spec.validate()?;
    let pool = build_pool(opts)?;
    let ctx = PointContext::new(&spec, ebn0_db)?;
    let counted = run_point(&ctx, &spec.detectors, &pool, 0.0, false, None);
    let per_trial: Vec<Vec<f64>> =
        counted[0].iter().filter(|r| !r.failed).map(|r| r.lambda_trace.clone().unwrap_or_default()).collect();
    let longest = per_trial.iter().map(Vec::len).max().unwrap_or(0);
    let mean = (0..longest)
        .map(|k| {
            let vals: Vec<f64> = per_trial.iter().filter_map(|t| t.get(k).copied()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    Ok(LambdaTrace { detector: kind, ebn0_db, per_trial, mean })
}

/// `%.10g`-style rendering: 10 significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.9e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..10).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub const SWEEP_HEADER: &str = "detector,channel,nt,nr,ebn0_db,trials,bit_errors,total_bits,ber,avg_iterations,converged_fraction";
pub const CONVERGENCE_HEADER: &str = "detector,ebn0_db,iteration,ber";
pub const LAMBDA_HEADER: &str = "trial,iteration,lambda";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.detector,
            r.channel,
            r.nt,
            r.nr,
            fmt_sig(r.ebn0_db),
            r.trials,
            r.bit_errors,
            r.total_bits,
            fmt_sig(r.ber),
            fmt_sig(r.avg_iterations),
            fmt_sig(r.converged_fraction)
        );
    }
    out
}

pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = format!("{CONVERGENCE_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.detector, fmt_sig(r.ebn0_db), r.iteration, fmt_sig(r.ber));
    }
    out
}

/// Per-trial rows, trials and iterations numbered from 1.
pub fn lambda_csv(trace: &LambdaTrace) -> String {
    let mut out = format!("{LAMBDA_HEADER}\n");
    for (t, lams) in trace.per_trial.iter().enumerate() {
        for (k, &l) in lams.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", t + 1, k + 1, fmt_sig(l));
        }
    }
    out
}
