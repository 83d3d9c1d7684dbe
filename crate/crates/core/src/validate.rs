//! Self-checks behind `idls validate`: reduction lattice, Woodbury identity,
//! majorization, weight-optimizer oracles and the effective-noise covariance.

use nalgebra::Cholesky;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{
    complex_gaussian, complex_gaussian_matrix, effective_noise_covariance, ChannelSampler, ChannelSpec,
    ImpairmentParams,
};
use crate::constellation::{make_qpsk, stack_mat, stack_vec, RealLinearModel};
use crate::detectors::{
    idls, idls_noise_aware, idls_robust, lmmse, lmmse_right, weighted_lmmse, zf, DetectorConfig,
};
use crate::error::Error;
use crate::l0::{l0_smooth, surrogate_value, update_pivots};
use crate::linalg::{CMat, CVec, RVec, C64};
use crate::ml::{ml_detect, residual, OracleLimits};
use crate::normal::WeightedLs;
use crate::regparam::{max_finite_real_geneig, secular_lambda, PencilPair};
use crate::soav::prox_sum_abs;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

struct Draw {
    h: CMat,
    y: CVec,
    truth: Vec<usize>,
}

fn draw(rng: &mut ChaCha8Rng, nt: usize, nr: usize, sigma2: f64) -> Draw {
    let con = make_qpsk();
    let h = complex_gaussian_matrix(rng, nr, nt, 1.0);
    let truth: Vec<usize> = (0..nt).map(|_| rng.random_range(0..4)).collect();
    let y = &h * con.symbols(&truth) + complex_gaussian_matrix(rng, nr, 1, sigma2).column(0);
    Draw { h, y, truth }
}

fn dev(a: &RVec, b: &RVec) -> f64 {
    (a - b).amax()
}

pub fn check_stacking(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (r, c) = (rng.random_range(1..8), rng.random_range(1..8));
        let a = complex_gaussian_matrix(&mut rng, r, c, 1.0);
        let x: CVec = complex_gaussian_matrix(&mut rng, c, 1, 1.0).column(0).into_owned();
        worst = worst.max((stack_vec(&(&a * &x)) - stack_mat(&a) * stack_vec(&x)).amax());
        worst = worst.max((stack_vec(&x).norm() - x.norm()).abs());
    }
    outcome("stacking homomorphism", worst <= 1e-13, format!("max deviation {worst:.2e} (tol 1e-13)"))
}

pub fn check_reduction_lattice(seed: u64, instances: usize) -> CheckOutcome {
    let con = make_qpsk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let auto = DetectorConfig::default();
    let zero = DetectorConfig::fixed(0.0);
    let mut worst = 0.0f64;
    let mut run = || -> crate::error::Result<()> {
        for _ in 0..instances {
            let nt = rng.random_range(4..=16);
            let nr = rng.random_range(4..=16);
            let sigma2 = rng.random_range(0.05..1.0);
            let d = draw(&mut rng, nt, nr, sigma2);
            let m = RealLinearModel::from_complex(&d.y, &d.h)?;
            let ideal = effective_noise_covariance(&d.h, &ImpairmentParams::ideal(nt, nr), sigma2)?;
            let na = idls_noise_aware(&m, &con, &auto, sigma2)?.s_hat_real;
            worst = worst.max(dev(&idls_robust(&m, &con, &auto, &ideal, sigma2)?.s_hat_real, &na));
            worst = worst.max(dev(&idls_noise_aware(&m, &con, &auto, 0.0)?.s_hat_real, &idls(&m, &con, &auto, 0.0)?.s_hat_real));
            if nr >= nt {
                worst = worst.max(dev(&idls(&m, &con, &zero, sigma2)?.s_hat_real, &zf(&m)?));
            }
            worst = worst.max(dev(&idls_noise_aware(&m, &con, &zero, sigma2)?.s_hat_real, &lmmse(&m, sigma2)?));
            let imp = ImpairmentParams::for_channel(&ChannelSpec::jakes(nt, nr), 0.05, 0.01)?;
            let noise = effective_noise_covariance(&d.h, &imp, sigma2)?;
            worst = worst.max(dev(&idls_robust(&m, &con, &zero, &noise, sigma2)?.s_hat_real, &weighted_lmmse(&m, &noise)?));
        }
        Ok(())
    };
    match run() {
        Ok(()) => outcome("reduction lattice", worst <= 1e-10, format!("max deviation {worst:.2e} (tol 1e-10)")),
        Err(e) => outcome("reduction lattice", false, format!("error: {e}")),
    }
}

pub fn check_woodbury(seed: u64, instances: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (nt, nr) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let sigma2 = rng.random_range(0.01..2.0);
        let d = draw(&mut rng, nt, nr, sigma2);
        let m = RealLinearModel::from_complex(&d.y, &d.h).expect("consistent draw");
        match (lmmse(&m, sigma2), lmmse_right(&m, sigma2)) {
            (Ok(a), Ok(b)) => worst = worst.max((&a - &b).norm() / b.norm()),
            _ => return outcome("woodbury identity", false, "factorization failed".into()),
        }
    }
    outcome("woodbury identity", worst <= 1e-10, format!("max relative gap {worst:.2e} (tol 1e-10)"))
}

pub fn check_majorization(seed: u64) -> CheckOutcome {
    let alpha = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gap = f64::INFINITY;
    let mut tight = 0.0f64;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=6);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let l0 = l0_smooth(&x, alpha).expect("alpha > 0");
        gap = gap.min(surrogate_value(&x, &p, alpha).expect("equal lengths") - l0);
        tight = tight.max((surrogate_value(&x, &x, alpha).expect("equal lengths") - l0).abs());
    }
    let con = make_qpsk();
    let mut rise = f64::NEG_INFINITY;
    for _ in 0..30 {
        let (nt, nr) = (rng.random_range(2..=10), rng.random_range(2..=10));
        let d = draw(&mut rng, nt, nr, 0.2);
        let m = RealLinearModel::from_complex(&d.y, &d.h).expect("consistent draw");
        if let Ok(r) = idls(&m, &con, &DetectorConfig::fixed(0.5), 0.2) {
            for w in r.objective_trace.windows(2) {
                rise = rise.max((w[1] - w[0]) / w[0].abs().max(1.0));
            }
        }
    }
    outcome(
        "quadratic-transform majorization",
        gap >= -1e-12 && tight <= 1e-10 && rise <= 1e-9,
        format!("min gap {gap:.2e}, tightness {tight:.2e}, max objective rise {rise:.2e}"),
    )
}

/// Log-grid plus bisection root of `k(s(mu)) = 0` on dense solves.
pub fn mu_bisection(ls: &WeightedLs, b_diag: &RVec, b: &RVec, delta: f64, points: usize) -> Option<f64> {
    let k = |mu: f64| {
        let a = nalgebra::DMatrix::from_diagonal(b_diag) + &ls.gram * mu;
        let s = Cholesky::new(a)?.solve(&(b + &ls.rhs * mu));
        Some(ls.fit(&s) - delta)
    };
    let scale = b_diag.sum() / ls.gram.trace();
    let mu_at = |i: usize| scale * 10f64.powf(-10.0 + 20.0 * i as f64 / (points - 1) as f64);
    let mut prev = k(mu_at(0))?;
    for i in 1..points {
        let cur = k(mu_at(i))?;
        if prev > 0.0 && cur <= 0.0 {
            let (mut lo, mut hi) = (mu_at(i - 1).ln(), mu_at(i).ln());
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if k(mid.exp())? > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some((0.5 * (lo + hi)).exp());
        }
        prev = cur;
    }
    None
}

pub fn check_lambda_oracles(seed: u64, per_variant: usize) -> CheckOutcome {
    let con = make_qpsk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut kkt = 0.0f64;
    let mut matched = 0;
    let mut mismatched = 0;
    for variant in 0..3 {
        for t in 0..per_variant {
            let nt = 2 + t % 3;
            let nr = nt + t % 2;
            let sigma2 = rng.random_range(0.05..0.6);
            let d = draw(&mut rng, nt, nr, sigma2);
            let m = RealLinearModel::from_complex(&d.y, &d.h).expect("consistent draw");
            let ls = match variant {
                0 => WeightedLs::plain(&m),
                1 => WeightedLs::noise_aware(&m, sigma2).expect("sigma2 >= 0"),
                _ => {
                    let imp = ImpairmentParams::for_channel(&ChannelSpec::jakes(nt, nr), 0.05, 0.01).expect("valid");
                    WeightedLs::robust(&m, &effective_noise_covariance(&d.h, &imp, sigma2).expect("valid"))
                        .expect("weight is positive definite")
                }
            };
            let s0 = stack_vec(&con.symbols(&d.truth)).map(|v| v + 0.4 * rng.random_range(-1.0..1.0));
            let qt = update_pivots(&s0, &con, 0.1).expect("alpha > 0");
            let lo = RVec::from_fn(s0.len(), |i, _| qt.b_vec[i] / qt.b_mat_diag[i]);
            let hi = Cholesky::new(&ls.gram + nalgebra::DMatrix::identity(s0.len(), s0.len()) * (1e-9 * ls.gram.trace()))
                .map(|c| c.solve(&ls.rhs))
                .unwrap_or_else(|| lo.clone());
            let delta = 0.5 * (ls.fit(&lo) + ls.fit(&hi));
            let pencil = PencilPair::assemble(&ls, &qt, delta).expect("dimensions agree");
            let oracle = mu_bisection(&ls, &qt.b_mat_diag, &qt.b_vec, delta, 10_000).map(|mu| 1.0 / mu);
            match (max_finite_real_geneig(&pencil), secular_lambda(&ls, &qt, delta), oracle) {
                (Ok(p), Ok(s), Some(o)) => {
                    let rel = ((p.lambda_opt - o).abs() / o).max((s - o).abs() / o);
                    worst = worst.max(rel);
                    kkt = kkt.max(p.kkt_residual / ls.energy);
                    if rel <= 5e-4 && p.kkt_residual <= 1e-6 * ls.energy {
                        matched += 1;
                    } else {
                        mismatched += 1;
                    }
                }
                (Err(Error::NoAdmissibleLambda), Err(Error::NoAdmissibleLambda), None) => {}
                _ => mismatched += 1,
            }
        }
    }
    outcome(
        "weight optimizer vs bisection",
        mismatched == 0 && matched > 0,
        format!("{matched} matched, {mismatched} mismatched, worst relative gap {worst:.2e}, worst |k|/e {kkt:.2e}"),
    )
}

pub fn check_covariance(seed: u64, samples: usize) -> CheckOutcome {
    let (nt, nr) = (8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ChannelSpec::jakes(nt, nr);
    let con = make_qpsk();
    let mut worst = 0.0f64;
    for (tau_db, eta_db) in [(-15.0f64, -20.0f64), (-10.0, -10.0)] {
        let (tau2, eta) = (10f64.powf(tau_db / 10.0), 10f64.powf(eta_db / 10.0));
        let imp = ImpairmentParams::for_channel(&spec, tau2, eta).expect("valid impairments");
        let sampler = ChannelSampler::new(&spec, &imp).expect("valid spec");
        let h_est = sampler.draw(&mut rng).h_est;
        let analytic = effective_noise_covariance(&h_est, &imp, 1.0).expect("tau < 1").total();
        let scale = C64::new(1.0 / (1.0 - tau2).sqrt(), 0.0);
        let tau = C64::new(tau2.sqrt(), 0.0);
        let mut acc = CMat::zeros(nr, nr);
        for _ in 0..samples {
            let e = sampler.draw(&mut rng).e;
            let s = con.symbols(&(0..nt).map(|_| rng.random_range(0..4)).collect::<Vec<_>>());
            let w = CVec::from_fn(nt, |_, _| complex_gaussian(&mut rng, eta));
            let n = CVec::from_fn(nr, |_, _| complex_gaussian(&mut rng, 1.0));
            let v = &h_est * &w + (&e * &s * tau + &e * &w * tau + n) * scale;
            acc += &v * v.adjoint();
        }
        let emp = acc / C64::new(samples as f64, 0.0);
        worst = worst.max((emp - &analytic).norm() / analytic.norm());
    }
    outcome("effective-noise covariance", worst <= 0.05, format!("worst relative Frobenius error {worst:.4} (tol 0.05)"))
}

pub fn check_ml_optimality(seed: u64) -> CheckOutcome {
    let con = make_qpsk();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = true;
    for _ in 0..20 {
        let d = draw(&mut rng, 3, 3, 0.5);
        let Ok(best) = ml_detect(&d.y, &d.h, &con, OracleLimits::default()) else {
            return outcome("ml oracle optimality", false, "enumeration failed".into());
        };
        for c in 0..64usize {
            let idx = [c >> 4, (c >> 2) & 3, c & 3];
            ok &= residual(&d.y, &d.h, &con.symbols(&idx)) >= best.residual - 1e-12;
        }
    }
    outcome("ml oracle optimality", ok, "no candidate beats the oracle on 20 instances".into())
}

pub fn check_prox(seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = [-1.0, 1.0];
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (v, theta) = (rng.random_range(-3.0..3.0), rng.random_range(0.0..2.0));
        let cost = |u: f64| 0.5 * (u - v) * (u - v) + theta * levels.iter().map(|p: &f64| (u - p).abs()).sum::<f64>();
        let grid = (0..=20_000).map(|i| -4.0 + 8.0 * i as f64 / 20_000.0).min_by(|a, b| cost(*a).total_cmp(&cost(*b)));
        worst = worst.max((prox_sum_abs(v, theta, &levels) - grid.expect("non-empty grid")).abs());
    }
    outcome("l1 prox vs grid", worst <= 1e-3, format!("max deviation {worst:.2e} (grid step 4e-4)"))
}

/// Runs every suite; `quick` shrinks instance counts.
pub fn run_all(seed: u64, quick: bool) -> Vec<CheckOutcome> {
    let scale = if quick { 5 } else { 1 };
    vec![
        check_stacking(seed),
        check_reduction_lattice(seed + 1, 100 / scale),
        check_woodbury(seed + 2, 100 / scale),
        check_majorization(seed + 3),
        check_lambda_oracles(seed + 4, 60 / scale),
        check_covariance(seed + 5, 100_000 / scale),
        check_ml_optimality(seed + 6),
        check_prox(seed + 7),
    ]
}
