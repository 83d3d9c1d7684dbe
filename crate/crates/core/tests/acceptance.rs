//! Acceptance criteria 1 to 9. Each test prints one `criterion N: PASS|FAIL`
//! line with the measured quantities, then asserts.
//!
//! Oracles here are written against explicit formulas (dense inverses, direct
//! sampling, grid search) and share no code path with the routines they check
//! beyond the instance generators.

use std::sync::Mutex;
use std::time::Instant;

use idls::channel::{
    complex_gaussian, complex_gaussian_matrix, effective_noise_covariance, jakes_signature, ChannelSpec,
    ImpairmentParams,
};
use idls::constellation::{make_qpsk, stack_mat, RealLinearModel};
use idls::detectors::{idls, idls_noise_aware, idls_robust, lmmse, lmmse_right, DetectorConfig};
use idls::harness::{
    convergence_csv, lambda_csv, run_convergence, run_lambda_trace, run_sweep, sweep_csv,
    trials_for_bits, DetectorKind, ExperimentSpec, RunOptions, SweepRow,
};
use idls::l0::{l0_smooth, surrogate_value, update_pivots};
use idls::linalg::{CMat, CVec, RMat, RVec, C64};
use idls::normal::WeightedLs;
use idls::regparam::{max_finite_real_geneig, LambdaSolver, PencilPair};
use idls::Error;
use nalgebra::{Cholesky, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Timed criteria must not share the CPU with each other.
static SERIAL: Mutex<()> = Mutex::new(());

/// Writes past the test harness capture so passing criteria show in plain `cargo test` logs.
macro_rules! emit {
    ($($t:tt)*) => {{
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, $($t)*);
        let _ = out.flush();
    }};
}

fn report(id: u32, pass: bool, detail: String) {
    emit!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn inv(a: &RMat) -> RMat {
    a.clone().try_inverse().expect("invertible test matrix")
}

fn plus_diag(a: &RMat, d: f64) -> RMat {
    a + RMat::identity(a.nrows(), a.ncols()) * d
}

struct Instance {
    h: CMat,
    y: CVec,
    sigma2: f64,
}

fn instance(rng: &mut ChaCha8Rng, nt: usize, nr: usize, sigma2: f64, imp: &ImpairmentParams) -> Instance {
    let con = make_qpsk();
    let h = complex_gaussian_matrix(rng, nr, nt, 1.0);
    let idx: Vec<usize> = (0..nt).map(|_| rng.random_range(0..4)).collect();
    let s = con.symbols(&idx);
    let x = CVec::from_fn(nt, |i, _| s[i] + if imp.eta > 0.0 { complex_gaussian(rng, imp.eta) } else { C64::new(0.0, 0.0) });
    let y = &h * x + complex_gaussian_matrix(rng, nr, 1, sigma2.max(0.0)).column(0);
    Instance { h, y, sigma2 }
}

fn real(inst: &Instance) -> RealLinearModel {
    RealLinearModel::from_complex(&inst.y, &inst.h).unwrap()
}

/// `(stack(Sigma_C) + I)^-1` by dense inverse.
fn weight_oracle(inst: &Instance, imp: &ImpairmentParams) -> (RMat, f64) {
    let (tau2, eta) = (imp.tau * imp.tau, imp.eta);
    let hh = &inst.h * inst.h.adjoint();
    let phi_r = imp.phi_r.map(|v| C64::new(v, 0.0));
    let sc = hh * C64::new(eta, 0.0) + phi_r * C64::new(tau2 / (1.0 - tau2) * (1.0 + eta) * imp.phi_t.trace(), 0.0);
    let w = inv(&plus_diag(&stack_mat(&sc), 1.0));
    (w, inst.sigma2 / (1.0 - tau2))
}

fn max_dev(a: &RVec, b: &RVec) -> f64 {
    (a - b).amax()
}

#[test]
fn criterion_1_reduction_lattice() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let con = make_qpsk();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = DetectorConfig::default();
    let zero = DetectorConfig::fixed(0.0);
    let mut worst = [0.0f64; 5];
    let mut zf_cases = 0;
    for _ in 0..100 {
        let nt = rng.random_range(4..=16);
        let nr = rng.random_range(4..=16);
        let sigma2 = rng.random_range(0.05..1.0);
        let ideal = ImpairmentParams::ideal(nt, nr);
        let inst = instance(&mut rng, nt, nr, sigma2, &ideal);
        let m = real(&inst);
        let y_bar = m.clone();
        let noise = effective_noise_covariance(&inst.h, &ideal, sigma2).unwrap();

        let noise_aware = idls_noise_aware(&m, &con, &cfg, sigma2).unwrap();
        let robust = idls_robust(&y_bar, &con, &cfg, &noise, sigma2).unwrap();
        worst[0] = worst[0].max(max_dev(&robust.s_hat_real, &noise_aware.s_hat_real));

        let noise_free = idls_noise_aware(&m, &con, &cfg, 0.0).unwrap();
        let plain = idls(&m, &con, &cfg, 0.0).unwrap();
        worst[1] = worst[1].max(max_dev(&noise_free.s_hat_real, &plain.s_hat_real));

        let ht = m.h.transpose();
        let gram = &ht * &m.h;
        if nr >= nt {
            zf_cases += 1;
            let zf_oracle = inv(&gram) * &ht * &m.y;
            worst[2] = worst[2].max(max_dev(&idls(&m, &con, &zero, sigma2).unwrap().s_hat_real, &zf_oracle));
        }
        let lmmse_oracle = inv(&plus_diag(&gram, sigma2)) * &ht * &m.y;
        worst[3] = worst[3].max(max_dev(&idls_noise_aware(&m, &con, &zero, sigma2).unwrap().s_hat_real, &lmmse_oracle));

        let tau_sq = rng.random_range(0.01..0.2);
        let imp = ImpairmentParams::for_channel(&ChannelSpec::jakes(nt, nr), tau_sq, 0.01).unwrap();
        let inst_r = instance(&mut rng, nt, nr, sigma2, &imp);
        let y_bar_c = inst_r.y.map(|v| v / (1.0 - tau_sq).sqrt());
        let mb = RealLinearModel::from_complex(&y_bar_c, &inst_r.h).unwrap();
        let noise_r = effective_noise_covariance(&inst_r.h, &imp, sigma2).unwrap();
        let (w, white) = weight_oracle(&inst_r, &imp);
        let hb = &mb.h;
        let weighted_oracle = inv(&plus_diag(&(hb.transpose() * &w * hb), white)) * hb.transpose() * &w * &mb.y;
        let got = idls_robust(&mb, &con, &zero, &noise_r, sigma2).unwrap().s_hat_real;
        worst[4] = worst[4].max(max_dev(&got, &weighted_oracle));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|&d| d <= 1e-10) && elapsed < 10.0;
    report(
        1,
        pass,
        format!(
            "max dev robust=noise {:.2e}, noise(0)=plain {:.2e}, plain(0)=zf {:.2e} ({zf_cases} cases), noise(0)=lmmse {:.2e}, robust(0)=weighted {:.2e}; tol 1e-10; {elapsed:.1} s (< 10 s)",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_woodbury() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut worst_sigma = 0.0f64;
    for _ in 0..100 {
        let nt = rng.random_range(2..=16);
        let nr = rng.random_range(2..=16);
        let sigma2 = rng.random_range(0.01..2.0);
        let ideal = ImpairmentParams::ideal(nt, nr);
        let m = real(&instance(&mut rng, nt, nr, sigma2, &ideal));
        let left = lmmse(&m, sigma2).unwrap();
        let right = lmmse_right(&m, sigma2).unwrap();
        worst = worst.max((&left - &right).norm() / right.norm());

        // general covariance: H^T (H H^T + S)^-1 y = (H^T S^-1 H + I)^-1 H^T S^-1 y
        let a = RMat::from_fn(m.h.nrows(), m.h.nrows(), |_, _| rng.random_range(-1.0..1.0));
        let s = plus_diag(&(&a * a.transpose()), sigma2);
        let ht = m.h.transpose();
        let lhs = &ht * inv(&(&m.h * &ht + &s)) * &m.y;
        let si = inv(&s);
        let rhs = inv(&plus_diag(&(&ht * &si * &m.h), 1.0)) * &ht * &si * &m.y;
        worst_sigma = worst_sigma.max((&lhs - &rhs).norm() / rhs.norm());
    }
    let pass = worst <= 1e-10 && worst_sigma <= 1e-10;
    report(2, pass, format!("max relative gap {worst:.2e} (sigma2 I), {worst_sigma:.2e} (full covariance); tol 1e-10"));
    assert!(pass);
}

#[test]
fn criterion_3_majorization() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let alpha = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let smooth = |x: &[f64]| x.iter().map(|v| v * v / (v * v + alpha)).sum::<f64>();
    let mut worst_gap = f64::INFINITY;
    let mut worst_tight = 0.0f64;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=8);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let lib = l0_smooth(&x, alpha).unwrap();
        assert!((lib - smooth(&x)).abs() < 1e-12);
        worst_gap = worst_gap.min(surrogate_value(&x, &p, alpha).unwrap() - smooth(&x));
        worst_tight = worst_tight.max((surrogate_value(&x, &x, alpha).unwrap() - smooth(&x)).abs());
    }
    let con = make_qpsk();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut steps = 0;
    for i in 0..100 {
        let nt = rng.random_range(2..=12);
        let nr = rng.random_range(2..=12);
        let lambda = [0.1, 0.5, 1.0, 2.0][i % 4];
        let m = real(&instance(&mut rng, nt, nr, 0.2, &ImpairmentParams::ideal(nt, nr)));
        let r = idls(&m, &con, &DetectorConfig::fixed(lambda), 0.2).unwrap();
        for w in r.objective_trace.windows(2) {
            steps += 1;
            worst_rise = worst_rise.max((w[1] - w[0]) / w[0].abs().max(1.0));
        }
    }
    let pass = worst_gap >= -1e-12 && worst_tight <= 1e-10 && worst_rise <= 1e-9;
    report(
        3,
        pass,
        format!(
            "min surrogate - l0 {worst_gap:.2e} (>= -1e-12), tightness {worst_tight:.2e} (<= 1e-10) over 1e4 pairs; max relative objective rise {worst_rise:.2e} (<= 1e-9) over {steps} IDLS steps"
        ),
    );
    assert!(pass);
}

/// Least-squares data `(G, g, e)` of each variant by explicit formulas.
fn ls_oracle(variant: usize, inst: &Instance, imp: &ImpairmentParams) -> (RMat, RVec, f64) {
    let m = real(inst);
    let ht = m.h.transpose();
    match variant {
        0 => (&ht * &m.h, &ht * &m.y, m.y.norm_squared()),
        1 => (plus_diag(&(&ht * &m.h), inst.sigma2), &ht * &m.y, m.y.norm_squared()),
        _ => {
            let y_bar = &m.y / (1.0 - imp.tau * imp.tau).sqrt();
            let (w, white) = weight_oracle(inst, imp);
            (plus_diag(&(&ht * &w * &m.h), white), &ht * &w * &y_bar, y_bar.dot(&(&w * &y_bar)))
        }
    }
}

/// Root of `k(s(mu)) = 0` by a 1e4-point logarithmic grid and bisection, with
/// `s(mu) = (B + mu G)^-1 (b + mu g)` from a dense Cholesky solve.
fn mu_bisection(gram: &RMat, g: &RVec, e: f64, b_diag: &RVec, b: &RVec, delta: f64) -> Option<f64> {
    let k = |mu: f64| {
        let a = RMat::from_diagonal(b_diag) + gram * mu;
        let s = Cholesky::new(a).expect("B + mu G is positive definite").solve(&(b + g * mu));
        s.dot(&(gram * &s)) - 2.0 * g.dot(&s) + e - delta
    };
    let scale = b_diag.sum() / gram.trace();
    let n = 10_000;
    let grid: Vec<f64> = (0..n).map(|i| scale * 10f64.powf(-10.0 + 20.0 * i as f64 / (n - 1) as f64)).collect();
    let vals: Vec<f64> = grid.iter().map(|&mu| k(mu)).collect();
    let i = (0..n - 1).find(|&i| vals[i] > 0.0 && vals[i + 1] <= 0.0)?;
    let (mut lo, mut hi) = (grid[i].ln(), grid[i + 1].ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if k(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((0.5 * (lo + hi)).exp())
}

#[test]
fn criterion_4_lambda_oracle() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let con = make_qpsk();
    let alpha: f64 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let names = ["plain", "noise-aware", "robust"];
    let mut matched = [0usize; 3];
    let mut worst_rel = 0.0f64;
    let mut worst_kkt = 0.0f64;
    let mut failures = Vec::new();
    for variant in 0..3 {
        for t in 0..60 {
            let nt = [2, 3, 4][t % 3];
            let nr = nt + [0, 0, 1, 2][t % 4] - usize::from(t % 5 == 0);
            let sigma2 = rng.random_range(0.05..0.6);
            let imp = if variant == 2 {
                ImpairmentParams::for_channel(&ChannelSpec::jakes(nt, nr), rng.random_range(0.02..0.2), 0.01).unwrap()
            } else {
                ImpairmentParams::ideal(nt, nr)
            };
            let inst = instance(&mut rng, nt, nr, sigma2, &imp);
            // pivots at a perturbed constellation point
            let s0 = RVec::from_fn(2 * nt, |_, _| {
                (if rng.random_bool(0.5) { 1.0 } else { -1.0 }) / 2f64.sqrt() + 0.4 * rng.random_range(-1.0..1.0)
            });
            let sa = alpha.sqrt();
            let betas = |v: f64| con.pam_levels().iter().map(move |&p| (p, sa / ((v - p) * (v - p) + alpha)));
            let b_diag = s0.map(|v| betas(v).map(|(_, bt)| bt * bt).sum());
            let b = s0.map(|v| betas(v).map(|(p, bt)| p * bt * bt).sum());
            let (gram, g, e) = ls_oracle(variant, &inst, &imp);
            // constraint level halfway between the two extreme fits
            let fit = |s: &RVec| s.dot(&(&gram * s)) - 2.0 * g.dot(s) + e;
            let s_lo = RVec::from_fn(2 * nt, |i, _| b[i] / b_diag[i]);
            let s_hi = Cholesky::new(plus_diag(&gram, 1e-9 * gram.trace())).unwrap().solve(&g);
            let delta = if variant == 0 && nr == nt { inst.sigma2 } else { 0.5 * (fit(&s_lo) + fit(&s_hi)) };

            let m = real(&inst);
            let ls = match variant {
                0 => WeightedLs::plain(&m),
                1 => WeightedLs::noise_aware(&m, sigma2).unwrap(),
                _ => {
                    let y_bar = inst.y.map(|v| v / (1.0 - imp.tau * imp.tau).sqrt());
                    let mb = RealLinearModel::from_complex(&y_bar, &inst.h).unwrap();
                    WeightedLs::robust(&mb, &effective_noise_covariance(&inst.h, &imp, sigma2).unwrap()).unwrap()
                }
            };
            let qt = update_pivots(&s0, &con, alpha).unwrap();
            let pencil = PencilPair::assemble(&ls, &qt, delta).unwrap();
            let oracle = mu_bisection(&gram, &g, e, &b_diag, &b, delta).map(|mu| 1.0 / mu);
            match (max_finite_real_geneig(&pencil), oracle) {
                (Ok(sol), Some(lam)) => {
                    let rel = (sol.lambda_opt - lam).abs() / lam;
                    let kkt = sol.kkt_residual / e;
                    worst_rel = worst_rel.max(rel);
                    worst_kkt = worst_kkt.max(kkt);
                    if rel <= 5e-4 && kkt <= 1e-6 {
                        matched[variant] += 1;
                    } else {
                        failures.push(format!("{} nt={nt} nr={nr}: pencil {} oracle {lam}", names[variant], sol.lambda_opt));
                    }
                }
                (Err(Error::NoAdmissibleLambda), None) => {}
                (a, b) => failures.push(format!("{} nt={nt} nr={nr}: pencil {:?} oracle {:?}", names[variant], a.map(|s| s.lambda_opt), b)),
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && matched.iter().all(|&c| c >= 50) && elapsed < 60.0;
    report(
        4,
        pass,
        format!(
            "matched {:?} (plain, noise-aware, robust; >= 50 each), worst relative gap {worst_rel:.2e} (<= 5e-4), worst |k|/yTy {worst_kkt:.2e} (<= 1e-6), {} mismatches; {elapsed:.1} s (< 60 s)",
            matched,
            failures.len()
        ),
    );
    for f in failures.iter().take(5) {
        emit!("  mismatch {f}");
    }
    assert!(pass);
}

fn sweep_row<'a>(rows: &'a [SweepRow], kind: DetectorKind) -> &'a SweepRow {
    rows.iter().find(|r| r.detector == kind).expect("detector present")
}

#[test]
fn criterion_5_ml_parity() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut spec = ExperimentSpec::new(
        ChannelSpec::iid(4, 4),
        vec![DetectorKind::Ml, DetectorKind::Idls, DetectorKind::IdlsNoise, DetectorKind::Lmmse],
        vec![14.0],
    );
    spec.max_trials = 2000;
    spec.target_bit_errors = None;
    spec.master_seed = 5;
    let out = run_sweep(&spec, RunOptions::default()).unwrap();
    let ml = sweep_row(&out.rows, DetectorKind::Ml);
    let idls_row = sweep_row(&out.rows, DetectorKind::Idls);
    let elapsed = start.elapsed().as_secs_f64();
    let pass = ml.trials == 2000
        && idls_row.trials == 2000
        && idls_row.symbol_errors as f64 <= 1.5 * ml.symbol_errors as f64
        && elapsed < 300.0;
    report(
        5,
        pass,
        format!(
            "symbol errors over 2000 trials: idls {} vs ml {} (limit 1.5x = {:.1}); {elapsed:.1} s (< 300 s)",
            idls_row.symbol_errors,
            ml.symbol_errors,
            1.5 * ml.symbol_errors as f64
        ),
    );
    for kind in [DetectorKind::IdlsNoise, DetectorKind::Lmmse] {
        emit!("  info: {} symbol errors {}", kind, sweep_row(&out.rows, kind).symbol_errors);
    }
    assert!(pass);
}

/// 95% Wilson score interval.
fn wilson(errors: u64, n: u64) -> (f64, f64) {
    let z = 1.959963984540054;
    let n = n as f64;
    let p = errors as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    (centre - half, centre + half)
}

/// `a` below `b` with disjoint 95% intervals.
fn separated(a: &SweepRow, b: &SweepRow) -> bool {
    wilson(a.bit_errors, a.total_bits).1 < wilson(b.bit_errors, b.total_bits).0
}

fn ber_setting(channel: ChannelSpec, ebn0: f64, tau_db: Option<(f64, f64)>, detectors: Vec<DetectorKind>) -> Vec<SweepRow> {
    let nt = channel.nt;
    let mut spec = ExperimentSpec::new(channel, detectors, vec![ebn0]);
    if let Some((tau_db, eta_db)) = tau_db {
        spec.tau_sq = 10f64.powf(tau_db / 10.0);
        spec.eta = 10f64.powf(eta_db / 10.0);
    }
    spec.max_trials = trials_for_bits(200_000, nt, 2);
    spec.target_bit_errors = None;
    spec.master_seed = 6;
    spec.idls.lambda_solver = LambdaSolver::Secular;
    run_sweep(&spec, RunOptions::default()).unwrap().rows
}

fn describe(rows: &[SweepRow]) -> String {
    rows.iter()
        .map(|r| {
            let (lo, hi) = wilson(r.bit_errors, r.total_bits);
            format!("{} {:.3e} [{lo:.2e}, {hi:.2e}]", r.detector, r.ber)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn criterion_6_ber_ordering() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let iid = vec![DetectorKind::Idls, DetectorKind::Soav, DetectorKind::Lmmse, DetectorKind::IdlsNoise];
    let square = ber_setting(ChannelSpec::iid(32, 32), 8.0, None, iid.clone());
    let wide = ber_setting(ChannelSpec::iid(48, 32), 12.0, None, iid);
    let robust = ber_setting(
        ChannelSpec::jakes(40, 32),
        12.0,
        Some((-15.0, -20.0)),
        vec![DetectorKind::IdlsRobust, DetectorKind::Lmmse],
    );
    let ordered = |rows: &[SweepRow]| {
        let (i, s, l) = (
            sweep_row(rows, DetectorKind::Idls),
            sweep_row(rows, DetectorKind::Soav),
            sweep_row(rows, DetectorKind::Lmmse),
        );
        i.total_bits >= 200_000 && separated(i, s) && separated(s, l)
    };
    let sq_ok = ordered(&square);
    let wide_ok = ordered(&wide);
    let rob_ok = separated(sweep_row(&robust, DetectorKind::IdlsRobust), sweep_row(&robust, DetectorKind::Lmmse));
    let elapsed = start.elapsed().as_secs_f64();
    let pass = sq_ok && wide_ok && rob_ok && elapsed < 1800.0;
    report(
        6,
        pass,
        format!(
            "32x32 @8 dB {}, 48x32 @12 dB {}, robust 40x32 @12 dB {}; {elapsed:.0} s (< 1800 s)",
            if sq_ok { "ordered" } else { "NOT ordered" },
            if wide_ok { "ordered" } else { "NOT ordered" },
            if rob_ok { "ordered" } else { "NOT ordered" }
        ),
    );
    for (name, rows) in [("32x32 @8 dB", &square), ("48x32 @12 dB", &wide), ("robust 40x32 @12 dB", &robust)] {
        emit!("  {name}: {}", describe(rows));
        if let Some(l) = rows.iter().find_map(|r| r.soav_lambda) {
            emit!("  {name}: soav weight {l}");
        }
    }
    assert!(pass);
}

#[test]
fn criterion_7_convergence_within_37() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut counts = Vec::new();
    for (nt, nr, ebn0) in [(32, 32, 8.0), (48, 32, 12.0)] {
        let mut spec = ExperimentSpec::new(ChannelSpec::iid(nt, nr), vec![DetectorKind::Idls], vec![ebn0]);
        spec.max_trials = 500;
        spec.target_bit_errors = None;
        spec.master_seed = 7;
        spec.idls.lambda_solver = LambdaSolver::Secular;
        assert_eq!(spec.idls.eps, 1e-4);
        let out = run_sweep(&spec, RunOptions::default()).unwrap();
        let ok = out.records.iter().filter(|r| !r.failed && r.converged && r.iterations <= 37).count();
        counts.push((nt, nr, ebn0, ok, out.records.len()));
    }
    let ok: usize = counts.iter().map(|c| c.3).sum();
    let total: usize = counts.iter().map(|c| c.4).sum();
    let frac = ok as f64 / total as f64;
    let pass = total == 1000 && frac >= 0.95;
    report(7, pass, format!("{ok}/{total} = {frac:.3} converged within 37 iterations (>= 0.95), eps 1e-4, auto weight"));
    for (nt, nr, ebn0, ok, n) in counts {
        emit!("  {nt}x{nr} @{ebn0} dB: {ok}/{n}");
    }
    assert!(pass);
}

/// Empirical covariance of `H w + (tau E s + tau E w + n) / sqrt(1 - tau^2)`.
fn sampled_covariance(h: &CMat, phi_r: &RMat, phi_t: &RMat, tau2: f64, eta: f64, sigma2: f64, samples: usize, seed: u64) -> CMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nr, nt) = h.shape();
    let root = |phi: &RMat| {
        let eig = SymmetricEigen::new(phi.clone());
        let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        (&eig.eigenvectors * RMat::from_diagonal(&d) * eig.eigenvectors.transpose()).map(|v| C64::new(v, 0.0))
    };
    let (rr, rt) = (root(phi_r), root(phi_t));
    let con = make_qpsk();
    let scale = 1.0 / (1.0 - tau2).sqrt();
    let tau = tau2.sqrt();
    let mut acc = CMat::zeros(nr, nr);
    for _ in 0..samples {
        let e = &rr * complex_gaussian_matrix(&mut rng, nr, nt, 1.0) * &rt;
        let s = CVec::from_fn(nt, |_, _| con.points()[rng.random_range(0..4)]);
        let w = complex_gaussian_matrix(&mut rng, nt, 1, eta).column(0).into_owned();
        let n = complex_gaussian_matrix(&mut rng, nr, 1, sigma2).column(0).into_owned();
        let nt_vec = h * &w + (&e * &s * C64::new(tau, 0.0) + &e * &w * C64::new(tau, 0.0) + n) * C64::new(scale, 0.0);
        acc += &nt_vec * nt_vec.adjoint();
    }
    acc / C64::new(samples as f64, 0.0)
}

#[test]
fn criterion_8_effective_noise_covariance() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let (nr, nt) = (8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let h = complex_gaussian_matrix(&mut rng, nr, nt, 1.0);
    let spec = ChannelSpec::jakes(nt, nr);
    let phi_r = jakes_signature(nr, spec.carrier_hz, spec.spacing_m).unwrap();
    let phi_t = jakes_signature(nt, spec.carrier_hz, spec.spacing_m).unwrap();
    let mut errs = Vec::new();
    for (k, (tau_db, eta_db)) in [(-15.0f64, -20.0f64), (-10.0, -10.0)].into_iter().enumerate() {
        let (tau2, eta) = (10f64.powf(tau_db / 10.0), 10f64.powf(eta_db / 10.0));
        let imp = ImpairmentParams::for_channel(&spec, tau2, eta).unwrap();
        let analytic = effective_noise_covariance(&h, &imp, 1.0).unwrap().total();
        let empirical = sampled_covariance(&h, &phi_r, &phi_t, tau2, eta, 1.0, 100_000, 900 + k as u64);
        errs.push(((empirical - &analytic).norm() / analytic.norm(), tau_db, eta_db));
    }
    let pass = errs.iter().all(|e| e.0 <= 0.05);
    report(
        8,
        pass,
        errs.iter()
            .map(|(e, t, h)| format!("(tau2 {t} dB, eta {h} dB) rel Frobenius {e:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
            + "; tol 0.05, Nr 8, 1e5 samples",
    );
    assert!(pass);
}

#[test]
fn criterion_9_reproducible_across_workers() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut spec = ExperimentSpec::new(
        ChannelSpec::iid(12, 8),
        vec![DetectorKind::Lmmse, DetectorKind::Idls, DetectorKind::IdlsNoise, DetectorKind::Soav],
        vec![6.0, 10.0],
    );
    spec.max_trials = 160;
    spec.target_bit_errors = Some(60);
    spec.master_seed = 99;
    spec.soav.pilot_trials = 40;
    spec.idls.k_max = 20;
    let render = |workers: usize| {
        let opts = RunOptions { workers };
        let sweep = sweep_csv(&run_sweep(&spec, opts).unwrap().rows);
        let conv = convergence_csv(&run_convergence(&spec, 6.0, opts).unwrap());
        let lam = lambda_csv(&run_lambda_trace(&spec, 10.0, opts).unwrap());
        (sweep, conv, lam)
    };
    let base = render(1);
    let same: Vec<bool> = [4, 16].iter().map(|&w| render(w) == base).collect();
    let pass = same.iter().all(|&s| s);
    report(9, pass, format!("sweep, convergence and lambda CSVs byte-identical for workers 4: {}, 16: {} (vs 1)", same[0], same[1]));
    assert!(pass);
}
