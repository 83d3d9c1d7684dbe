//! Linear detectors and the IDLS iterations.
//!
//! All routines work on the real-stacked model. Noise variances follow the
//! complex convention (`sigma2` per complex entry).

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::channel::EffectiveNoise;
use crate::constellation::{stack_mat, Constellation, RealLinearModel};
use crate::error::{Error, Result};
use crate::l0::{constellation_penalty, update_pivots, DEFAULT_ALPHA};
pub use crate::linalg::solve_normal_equations;
use crate::linalg::{spd_factor, RMat, RVec};
use crate::normal::{Variant, WeightedLs};
use crate::regparam::{solve_lambda, LambdaSolver};

/// Relative ridge of the initializer when the plain normal matrix is singular.
pub const INIT_RIDGE: f64 = 1e-6;
/// Relative change below which `AutoOnce` freezes the weight.
pub const AUTO_ONCE_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// Solve the pencil at every iteration.
    Auto,
    /// Solve the pencil until the weight settles, then keep it.
    AutoOnce,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMode {
    /// `delta = sigma2`.
    NoisePower,
    Fixed(f64),
}

impl DeltaMode {
    pub fn resolve(self, sigma2: f64) -> f64 {
        match self {
            DeltaMode::NoisePower => sigma2,
            DeltaMode::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub lambda_mode: LambdaMode,
    pub eps: f64,
    pub k_max: usize,
    pub delta_mode: DeltaMode,
    #[serde(default)]
    pub lambda_solver: LambdaSolver,
    /// Keep every iterate in the result.
    #[serde(default)]
    pub record_iterates: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            lambda_mode: LambdaMode::Auto,
            eps: 1e-4,
            k_max: 50,
            delta_mode: DeltaMode::NoisePower,
            lambda_solver: LambdaSolver::Pencil,
            record_iterates: false,
        }
    }
}

impl DetectorConfig {
    pub fn fixed(lambda: f64) -> Self {
        Self { lambda_mode: LambdaMode::Fixed(lambda), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {}", self.eps)));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if let LambdaMode::Fixed(v) = self.lambda_mode {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("fixed lambda must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub s_hat_real: RVec,
    pub iterations: usize,
    pub lambda_trace: Vec<f64>,
    /// `fit(s) + lambda * sum_i l0_smooth(s - p_i)` after each update.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Iterates `s^(1), s^(2), ...` when requested.
    pub iterates: Vec<RVec>,
    /// Set when the pencil had no admissible eigenvalue and no earlier weight existed.
    pub lambda_fallback: bool,
}

/// `(H^T H)^-1 H^T y`.
pub fn zf(model: &RealLinearModel) -> Result<RVec> {
    if model.h.ncols() > model.h.nrows() {
        return Err(Error::Singular);
    }
    let ht = model.h.transpose();
    let chol = Cholesky::new(&ht * &model.h).ok_or(Error::Singular)?;
    Ok(chol.solve(&(ht * &model.y)))
}

/// `(H^T H + sigma2 I)^-1 H^T y`.
pub fn lmmse(model: &RealLinearModel, sigma2: f64) -> Result<RVec> {
    let ls = WeightedLs::noise_aware(model, sigma2)?;
    Ok(spd_factor(ls.gram)?.solve(&ls.rhs))
}

/// `H^T (H H^T + sigma2 I)^-1 y`.
pub fn lmmse_right(model: &RealLinearModel, sigma2: f64) -> Result<RVec> {
    let mut a = &model.h * model.h.transpose();
    for i in 0..a.nrows() {
        a[(i, i)] += sigma2;
    }
    Ok(model.h.transpose() * spd_factor(a)?.solve(&model.y))
}

/// `H^T (H H^T + Sigma)^-1 y` with the full effective-noise covariance.
pub fn lmmse_sigma_aware(model_bar: &RealLinearModel, noise: &EffectiveNoise) -> Result<RVec> {
    let sigma = stack_mat(&noise.total());
    if sigma.nrows() != model_bar.h.nrows() {
        return Err(Error::Dimension("covariance does not match the observation".into()));
    }
    let a = &model_bar.h * model_bar.h.transpose() + sigma;
    Ok(model_bar.h.transpose() * spd_factor(a)?.solve(&model_bar.y))
}

/// `(H^T W H + sigma_u I)^-1 H^T W y_bar`, the unregularized robust solve.
pub fn weighted_lmmse(model_bar: &RealLinearModel, noise: &EffectiveNoise) -> Result<RVec> {
    let ls = WeightedLs::robust(model_bar, noise)?;
    Ok(spd_factor(ls.gram)?.solve(&ls.rhs))
}

/// `(G + INIT_RIDGE * tr(G) / dim * I)^-1 g`.
pub fn ridge_initializer(ls: &WeightedLs) -> Result<RVec> {
    let n = ls.dim();
    let shift = INIT_RIDGE * ls.gram.trace() / n.max(1) as f64;
    solve_normal_equations(&RVec::from_element(n, shift), &ls.gram, &ls.rhs)
}

/// The `lambda = 0` solution when it exists, the ridge initializer otherwise.
fn initial_estimate(ls: &WeightedLs, obs_dim: usize) -> Result<RVec> {
    if ls.ridge == 0.0 && ls.dim() > obs_dim {
        return ridge_initializer(ls);
    }
    match Cholesky::new(ls.gram.clone()) {
        Some(c) => Ok(c.solve(&ls.rhs)),
        None => ridge_initializer(ls),
    }
}

/// Shared loop: pivots, weight, closed-form update, stopping test.
pub fn iterate(
    ls: &WeightedLs,
    con: &Constellation,
    cfg: &DetectorConfig,
    delta: f64,
    init: RVec,
) -> Result<DetectionResult> {
    cfg.validate()?;
    if init.len() != ls.dim() {
        return Err(Error::Dimension(format!("initializer has length {}, system {}", init.len(), ls.dim())));
    }
    let levels = con.pam_levels();
    let mut s = init;
    let mut lambda_trace = Vec::with_capacity(cfg.k_max);
    let mut objective_trace = Vec::with_capacity(cfg.k_max);
    let mut iterates = Vec::new();
    let mut converged = false;
    let mut lambda_fallback = false;
    let mut frozen = false;
    let mut iterations = 0;
    for k in 1..=cfg.k_max {
        iterations = k;
        let qt = update_pivots(&s, con, cfg.alpha)?;
        let lambda = match cfg.lambda_mode {
            LambdaMode::Fixed(v) => v,
            _ if frozen => *lambda_trace.last().expect("frozen implies a previous weight"),
            mode => {
                let lam = match solve_lambda(cfg.lambda_solver, ls, &qt, delta) {
                    Ok(v) => v,
                    Err(Error::NoAdmissibleLambda) => match lambda_trace.last() {
                        Some(&prev) => prev,
                        None => {
                            lambda_fallback = true;
                            1.0
                        }
                    },
                    Err(e) => return Err(e),
                };
                if mode == LambdaMode::AutoOnce {
                    if let Some(&prev) = lambda_trace.last() {
                        frozen = ((lam - prev) / lam).abs() < AUTO_ONCE_TOL;
                    }
                }
                lam
            }
        };
        let next = solve_normal_equations(&(&qt.b_mat_diag * lambda), &ls.gram, &(&qt.b_vec * lambda + &ls.rhs))?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        let step = (&next - &s).norm();
        s = next;
        lambda_trace.push(lambda);
        objective_trace.push(ls.fit(&s) + lambda * constellation_penalty(&s, levels, cfg.alpha));
        if cfg.record_iterates {
            iterates.push(s.clone());
        }
        if step < cfg.eps {
            converged = true;
            break;
        }
    }
    Ok(DetectionResult { s_hat_real: s, iterations, lambda_trace, objective_trace, converged, iterates, lambda_fallback })
}

/// Plain IDLS; `sigma2` only enters through `delta`.
pub fn idls(model: &RealLinearModel, con: &Constellation, cfg: &DetectorConfig, sigma2: f64) -> Result<DetectionResult> {
    let ls = WeightedLs::plain(model);
    let init = initial_estimate(&ls, model.h.nrows())?;
    iterate(&ls, con, cfg, cfg.delta_mode.resolve(sigma2), init)
}

/// IDLS with the `sigma2 I` ridge in the normal equations.
pub fn idls_noise_aware(
    model: &RealLinearModel,
    con: &Constellation,
    cfg: &DetectorConfig,
    sigma2: f64,
) -> Result<DetectionResult> {
    let ls = WeightedLs::noise_aware(model, sigma2)?;
    let init = initial_estimate(&ls, model.h.nrows())?;
    iterate(&ls, con, cfg, cfg.delta_mode.resolve(sigma2), init)
}

/// Robust IDLS on the normalized observation and the channel estimate.
pub fn idls_robust(
    model_bar: &RealLinearModel,
    con: &Constellation,
    cfg: &DetectorConfig,
    noise: &EffectiveNoise,
    sigma2: f64,
) -> Result<DetectionResult> {
    let ls = WeightedLs::robust(model_bar, noise)?;
    let init = initial_estimate(&ls, model_bar.h.nrows())?;
    iterate(&ls, con, cfg, cfg.delta_mode.resolve(sigma2), init)
}

/// Dense `A = lambda B + G` residual of the fixed-point equations at `s`.
pub fn stationarity_residual(ls: &WeightedLs, con: &Constellation, alpha: f64, lambda: f64, s: &RVec) -> Result<f64> {
    let qt = update_pivots(s, con, alpha)?;
    let a: RMat = &ls.gram + qt.b_mat() * lambda;
    let rhs = &qt.b_vec * lambda + &ls.rhs;
    Ok((a * s - &rhs).norm() / rhs.norm().max(f64::MIN_POSITIVE))
}

/// Which variant `iterate` was configured for, for reporting.
pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Plain => "idls",
        Variant::NoiseAware => "idls-noise",
        Variant::Robust => "idls-robust",
    }
}
