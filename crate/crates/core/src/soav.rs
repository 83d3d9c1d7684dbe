//! l1-regularized baseline: `min lambda sum_i ||s - p_i 1||_1 + ||y - H s||^2`
//! by proximal gradient with a fixed `1 / L` step.

use serde::{Deserialize, Serialize};

use crate::constellation::{Constellation, RealLinearModel};
use crate::error::{Error, Result};
use crate::linalg::{power_iteration_max_eig, RVec};

/// Pilot grid for the penalty weight.
pub const LAMBDA_GRID: [f64; 6] = [0.01, 0.05, 0.1, 0.5, 1.0, 5.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Config {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once `||s^(k) - s^(k-1)|| < tol * max(1, ||s^(k)||)`.
    pub tol: f64,
}

impl Default for L1Config {
    fn default() -> Self {
        Self { lambda: 0.1, max_iters: 2000, tol: 1e-7 }
    }
}

impl L1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("l1 weight must be non-negative, got {}", self.lambda)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParameter("l1 solver needs tol > 0 and max_iters >= 1".into()));
        }
        Ok(())
    }
}

/// `argmin_u (u - v)^2 / 2 + theta * sum_i |u - p_i|` for sorted `levels`.
pub fn prox_sum_abs(v: f64, theta: f64, levels: &[f64]) -> f64 {
    if theta <= 0.0 || levels.is_empty() {
        return v;
    }
    let m = levels.len();
    let cost = |u: f64| 0.5 * (u - v) * (u - v) + theta * levels.iter().map(|p| (u - p).abs()).sum::<f64>();
    let mut best = levels[0];
    let mut best_cost = cost(best);
    let consider = |u: f64, best: &mut f64, best_cost: &mut f64| {
        let c = cost(u);
        if c < *best_cost {
            *best = u;
            *best_cost = c;
        }
    };
    for &p in &levels[1..] {
        consider(p, &mut best, &mut best_cost);
    }
    // stationary point on each open interval between breakpoints
    for below in 0..=m {
        let slope = below as f64 - (m - below) as f64;
        let u = v - theta * slope;
        let lo = if below == 0 { f64::NEG_INFINITY } else { levels[below - 1] };
        let hi = if below == m { f64::INFINITY } else { levels[below] };
        if u > lo && u < hi {
            consider(u, &mut best, &mut best_cost);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Result {
    pub s_hat_real: RVec,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

pub fn soav_objective(model: &RealLinearModel, levels: &[f64], lambda: f64, s: &RVec) -> f64 {
    let fit = (&model.y - &model.h * s).norm_squared();
    let pen: f64 = s.iter().map(|&u| levels.iter().map(|p| (u - p).abs()).sum::<f64>()).sum();
    fit + lambda * pen
}

pub fn soav_detect(model: &RealLinearModel, con: &Constellation, cfg: &L1Config) -> Result<L1Result> {
    soav_detect_traced(model, con, cfg, false)
}

/// As [`soav_detect`], optionally recording the objective after every step.
pub fn soav_detect_traced(
    model: &RealLinearModel,
    con: &Constellation,
    cfg: &L1Config,
    trace: bool,
) -> Result<L1Result> {
    cfg.validate()?;
    let levels = con.pam_levels();
    let ht = model.h.transpose();
    let gram = &ht * &model.h;
    let hty = &ht * &model.y;
    let lip = 2.0 * power_iteration_max_eig(&gram, 1e-10, 1000) * (1.0 + 1e-6);
    if !(lip > 0.0) {
        return Err(Error::Singular);
    }
    let step = 1.0 / lip;
    let theta = cfg.lambda * step;
    let mut s = RVec::zeros(model.h.ncols());
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iters {
        iterations = k;
        let grad = (&gram * &s - &hty) * 2.0;
        let u = &s - grad * step;
        let next = u.map(|v| prox_sum_abs(v, theta, levels));
        let change = (&next - &s).norm();
        s = next;
        if trace {
            objective_trace.push(soav_objective(model, levels, cfg.lambda, &s));
        }
        if change < cfg.tol * s.norm().max(1.0) {
            converged = true;
            break;
        }
    }
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(iterations));
    }
    Ok(L1Result { s_hat_real: s, iterations, converged, objective_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian_matrix;
    use crate::constellation::{make_qpsk, stack_vec};
    use crate::detectors::zf;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_prox(v: f64, theta: f64, levels: &[f64]) -> f64 {
        let (lo, hi) = (v.min(levels[0]) - 1.0, v.max(*levels.last().unwrap()) + 1.0);
        let n = 100_000;
        let cost = |u: f64| 0.5 * (u - v) * (u - v) + theta * levels.iter().map(|p| (u - p).abs()).sum::<f64>();
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .min_by(|a, b| cost(*a).total_cmp(&cost(*b)))
            .unwrap()
    }

    #[test]
    fn prox_reduces_to_soft_threshold_and_identity() {
        assert!((prox_sum_abs(1.0, 0.5, &[0.0]) - 0.5).abs() < 1e-15);
        assert!((prox_sum_abs(-0.2, 0.5, &[0.0])).abs() < 1e-15);
        assert_eq!(prox_sum_abs(0.37, 0.0, &[-1.0, 1.0]), 0.37);
        // between two levels the subgradients cancel
        assert!((prox_sum_abs(0.3, 10.0, &[-1.0, 1.0]) - 0.3).abs() < 1e-15);
        assert!((prox_sum_abs(0.3, 10.0, &[-1.0, 1.0]) - grid_prox(0.3, 10.0, &[-1.0, 1.0])).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn prox_matches_grid(v in -4.0f64..4.0, theta in 0.0f64..3.0) {
            for levels in [vec![-1.0, 1.0], vec![-3.0, -1.0, 1.0, 3.0]] {
                let a = prox_sum_abs(v, theta, &levels);
                prop_assert!((a - grid_prox(v, theta, &levels)).abs() < 1e-4, "{} {}", a, grid_prox(v, theta, &levels));
            }
        }
    }

    fn instance(nt: usize, nr: usize, sigma2: f64, seed: u64) -> (RealLinearModel, RVec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let con = make_qpsk();
        let h = complex_gaussian_matrix(&mut rng, nr, nt, 1.0);
        let idx: Vec<usize> = (0..nt).map(|_| rng.random_range(0..4)).collect();
        let s = con.symbols(&idx);
        let n = complex_gaussian_matrix(&mut rng, nr, 1, sigma2);
        let y = &h * &s + n.column(0);
        (RealLinearModel::from_complex(&y, &h).unwrap(), stack_vec(&s))
    }

    #[test]
    fn zero_weight_is_least_squares() {
        let (m, _) = instance(3, 6, 0.1, 1);
        let cfg = L1Config { lambda: 0.0, max_iters: 100_000, tol: 1e-12 };
        let r = soav_detect(&m, &make_qpsk(), &cfg).unwrap();
        assert!((r.s_hat_real - zf(&m).unwrap()).amax() < 1e-6);
    }

    #[test]
    fn objective_is_monotone() {
        let (m, _) = instance(4, 4, 0.0, 2);
        let cfg = L1Config { lambda: 0.5, ..L1Config::default() };
        let r = soav_detect_traced(&m, &make_qpsk(), &cfg, true).unwrap();
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_config() {
        let (m, _) = instance(2, 2, 0.0, 3);
        assert!(soav_detect(&m, &make_qpsk(), &L1Config { lambda: -1.0, ..L1Config::default() }).is_err());
    }
}
