//! Optimal regularization weight from a symmetric matrix pencil.
//!
//! With the pivots frozen, the regularized problem is equivalent to the
//! single-constraint QCQP
//!
//! ```text
//! minimize  s^T B s - 2 b^T s   subject to  k(s) = s^T G s - 2 g^T s + e - delta <= 0
//! ```
//!
//! whose active-constraint KKT point solves `(B + mu G) s = b + mu g`,
//! `k(s) = 0`. Stacking `x = [rho; x1; x2]` turns those conditions into the
//! generalized eigenproblem `P x = lambda Q x` with
//!
//! ```text
//!     | e - delta  -g^T   b^T |          |  0    0    -g^T |
//! Q = |   -g        G     -B  |      P = |  0    0     G   |
//!     |    b       -B      0  |          | -g    G     0   |
//! ```
//!
//! and `lambda = 1 / mu`. The optimal weight is the largest finite, real,
//! positive eigenvalue.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::channel::EffectiveNoise;
use crate::constellation::RealLinearModel;
use crate::error::{Error, Result};
use crate::l0::QtState;
use crate::linalg::{solve_normal_equations, RMat, RVec};
use crate::normal::{Variant, WeightedLs};

/// Relative size beyond which an eigenvalue is infinite (and below which it is zero).
pub const TOL_INF: f64 = 1e-10;
/// Relative imaginary part above which an eigenvalue is treated as complex.
pub const TOL_IM: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PencilPair {
    pub q_mat: RMat,
    pub p_mat: RMat,
    pub variant: Variant,
}

impl PencilPair {
    /// Assembles `(Q, P)` from the variant's least-squares data and the pivots.
    pub fn assemble(ls: &WeightedLs, qt: &QtState, delta: f64) -> Result<Self> {
        let n = ls.dim();
        if qt.dim() != n {
            return Err(Error::Dimension(format!("pivots have dimension {} but the system has {}", qt.dim(), n)));
        }
        let dim = 2 * n + 1;
        let mut q = RMat::zeros(dim, dim);
        let mut p = RMat::zeros(dim, dim);
        q[(0, 0)] = ls.energy - delta;
        for i in 0..n {
            let (r1, r2) = (1 + i, 1 + n + i);
            q[(0, r1)] = -ls.rhs[i];
            q[(r1, 0)] = -ls.rhs[i];
            q[(0, r2)] = qt.b_vec[i];
            q[(r2, 0)] = qt.b_vec[i];
            q[(r1, r2)] = -qt.b_mat_diag[i];
            q[(r2, r1)] = -qt.b_mat_diag[i];
            p[(0, r2)] = -ls.rhs[i];
            p[(r2, 0)] = -ls.rhs[i];
        }
        q.view_mut((1, 1), (n, n)).copy_from(&ls.gram);
        p.view_mut((1, 1 + n), (n, n)).copy_from(&ls.gram);
        p.view_mut((1 + n, 1), (n, n)).copy_from(&ls.gram.transpose());
        Ok(Self { q_mat: q, p_mat: p, variant: ls.variant })
    }

    pub fn dim(&self) -> usize {
        self.q_mat.nrows()
    }

    /// Half-size `2 Nt` of the embedded system.
    pub fn system_dim(&self) -> usize {
        (self.dim() - 1) / 2
    }

    /// Recovers `(G, g, e - delta, B diagonal, b)` from the block layout.
    fn blocks(&self) -> (RMat, RVec, f64, RVec, RVec) {
        let n = self.system_dim();
        let gram = self.p_mat.view((1, 1 + n), (n, n)).into_owned();
        let rhs = RVec::from_fn(n, |i, _| -self.p_mat[(0, 1 + n + i)]);
        let q11 = self.q_mat[(0, 0)];
        let b_diag = RVec::from_fn(n, |i, _| -self.q_mat[(1 + i, 1 + n + i)]);
        let b_vec = RVec::from_fn(n, |i, _| self.q_mat[(0, 1 + n + i)]);
        (gram, rhs, q11, b_diag, b_vec)
    }

    /// `s(mu) = (B + mu G)^-1 (b + mu g)`, written as `(lambda B + G)^-1 (lambda b + g)`.
    pub fn kkt_point(&self, lambda: f64) -> Result<RVec> {
        let (gram, rhs, _, b_diag, b_vec) = self.blocks();
        solve_normal_equations(&(b_diag * lambda), &gram, &(b_vec * lambda + rhs))
    }

    /// Signed constraint value `k(s)` encoded in the pencil.
    pub fn constraint(&self, s: &RVec) -> f64 {
        let (gram, rhs, q11, _, _) = self.blocks();
        s.dot(&(&gram * s)) - 2.0 * rhs.dot(s) + q11
    }
}

/// Plain pencil with `delta = sigma2`.
pub fn build_pencil_plain(model: &RealLinearModel, qt: &QtState, sigma2: f64) -> Result<PencilPair> {
    PencilPair::assemble(&WeightedLs::plain(model), qt, sigma2)
}

/// Pencil with the ridge-augmented blocks `H^T H + sigma2 I` and `delta = sigma2`.
pub fn build_pencil_noise(model: &RealLinearModel, qt: &QtState, sigma2: f64) -> Result<PencilPair> {
    PencilPair::assemble(&WeightedLs::noise_aware(model, sigma2)?, qt, sigma2)
}

/// Mahalanobis-weighted pencil on the normalized observation, `delta = sigma2`.
pub fn build_pencil_robust(
    model_bar: &RealLinearModel,
    noise: &EffectiveNoise,
    qt: &QtState,
    sigma2: f64,
) -> Result<PencilPair> {
    PencilPair::assemble(&WeightedLs::robust(model_bar, noise)?, qt, sigma2)
}

/// One generalized eigenvalue `re + i im`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenEigenvalue {
    pub re: f64,
    pub im: f64,
}

impl GenEigenvalue {
    /// Infinite relative to the pencil scale, `|lambda| ||B|| > ||A|| / TOL_INF`.
    pub fn is_infinite(&self, norm_a: f64, norm_b: f64) -> bool {
        !self.re.is_finite() || !self.im.is_finite() || self.re.hypot(self.im) * norm_b * TOL_INF > norm_a
    }

    /// Zero eigenvalues correspond to `mu = inf`, the unconstrained limit.
    pub fn is_zero(&self, norm_a: f64, norm_b: f64) -> bool {
        self.re.hypot(self.im) * norm_b < TOL_INF * norm_a
    }

    pub fn value(&self) -> (f64, f64) {
        (self.re, self.im)
    }

    pub fn is_real(&self) -> bool {
        self.im.abs() <= TOL_IM * (1.0 + self.re.abs())
    }
}

/// Reciprocal pivot growth below which `B` is shifted before inversion.
const SHIFT_RCOND: f64 = 1e-12;

/// All generalized eigenvalues of `A x = lambda B x`.
///
/// Uses the Schur form of `(B + c A)^-1 A`, with eigenvalues `nu` mapped back
/// through `lambda = nu / (1 - c nu)`; `c = 0` unless `B` is numerically singular.
pub fn generalized_eigenvalues(a: &RMat, b: &RMat) -> Result<Vec<GenEigenvalue>> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.shape() != (n, n) {
        return Err(Error::Dimension(format!("pencil shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::Eigen("non-finite pencil entries".into()));
    }
    let (na, nb) = (a.norm(), b.norm());
    let shifts = [0.0, 0.618_033_988_749_895 * nb / na.max(f64::MIN_POSITIVE)];
    for &c in &shifts {
        let lu = (b + a * c).lu();
        let u = lu.u();
        let diag = u.diagonal().abs();
        let (lo, hi) = (diag.min(), diag.max());
        if !(hi > 0.0) || lo / hi < SHIFT_RCOND {
            continue;
        }
        let m = lu.solve(a).ok_or_else(|| Error::Eigen("singular shifted pencil".into()))?;
        let nus = m.complex_eigenvalues();
        return Ok(nus
            .iter()
            .map(|nu| {
                let den = nalgebra::Complex::new(1.0, 0.0) - nu * c;
                let l = nu / den;
                GenEigenvalue { re: l.re, im: l.im }
            })
            .collect());
    }
    Err(Error::Eigen("pencil is numerically singular".into()))
}

/// Unit null vector of `A - lambda B` from the smallest singular triplet.
pub fn generalized_eigenvector(a: &RMat, b: &RMat, lambda: f64) -> Result<RVec> {
    let svd = (a - b * lambda).svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Eigen("singular vectors unavailable".into()))?;
    let k = svd.singular_values.imin();
    Ok(v_t.row(k).transpose())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    pub lambda_opt: f64,
    pub mu_opt: f64,
    /// Generalized eigenvector of the selected eigenvalue, when requested.
    pub eigvec: Option<RVec>,
    /// KKT point reconstructed by the weighted solve at `lambda_opt`.
    pub s_bar: RVec,
    /// `|k(s_bar)|`.
    pub kkt_residual: f64,
}

fn select_eigenvalue(pencil: &PencilPair, vals: &[GenEigenvalue]) -> Option<f64> {
    let (np, nq) = (pencil.p_mat.norm(), pencil.q_mat.norm());
    vals.iter()
        .filter(|e| !e.is_infinite(np, nq) && !e.is_zero(np, nq) && e.is_real() && e.re > 0.0)
        .map(|e| e.re)
        .max_by(|a, b| a.total_cmp(b))
}

fn finish(pencil: &PencilPair, lambda: f64, eigvec: Option<RVec>) -> Result<LambdaSolution> {
    let s_bar = pencil.kkt_point(lambda)?;
    let kkt_residual = pencil.constraint(&s_bar).abs();
    Ok(LambdaSolution { lambda_opt: lambda, mu_opt: 1.0 / lambda, eigvec, s_bar, kkt_residual })
}

/// Largest finite, real, strictly positive eigenvalue of `P x = lambda Q x`.
pub fn max_finite_real_geneig(pencil: &PencilPair) -> Result<LambdaSolution> {
    let vals = generalized_eigenvalues(&pencil.p_mat, &pencil.q_mat)?;
    let lambda = select_eigenvalue(pencil, &vals).ok_or(Error::NoAdmissibleLambda)?;
    finish(pencil, lambda, None)
}

/// As [`max_finite_real_geneig`], also returning the eigenvector.
pub fn max_finite_real_geneig_with_vector(pencil: &PencilPair) -> Result<LambdaSolution> {
    let vals = generalized_eigenvalues(&pencil.p_mat, &pencil.q_mat)?;
    let lambda = select_eigenvalue(pencil, &vals).ok_or(Error::NoAdmissibleLambda)?;
    let x = generalized_eigenvector(&pencil.p_mat, &pencil.q_mat, lambda)?;
    finish(pencil, lambda, Some(x))
}

/// Route used to obtain the optimal weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSolver {
    /// Dense eigen-decomposition of the `(P, Q)` pencil.
    #[default]
    Pencil,
    /// Root of `k(s(lambda)) = 0` on the spectral form of `B^-1/2 G B^-1/2`.
    Secular,
}

/// `k(s(lambda))` in closed form over the spectrum of `B^-1/2 G B^-1/2`.
#[derive(Debug, Clone)]
pub struct SecularFunction {
    eig: RVec,
    cb: RVec,
    cg: RVec,
    q11: f64,
}

impl SecularFunction {
    pub fn new(ls: &WeightedLs, qt: &QtState, delta: f64) -> Result<Self> {
        let n = ls.dim();
        if qt.dim() != n {
            return Err(Error::Dimension(format!("pivots have dimension {} but the system has {}", qt.dim(), n)));
        }
        if qt.b_mat_diag.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let inv_sqrt = qt.b_mat_diag.map(|d| 1.0 / d.sqrt());
        let c = RMat::from_fn(n, n, |i, j| ls.gram[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
        let c = (&c + c.transpose()) * 0.5;
        let se = SymmetricEigen::new(c);
        let vt = se.eigenvectors.transpose();
        let cb = &vt * qt.b_vec.component_mul(&inv_sqrt);
        let cg = &vt * ls.rhs.component_mul(&inv_sqrt);
        let eig = se.eigenvalues.map(|v| v.max(0.0));
        Ok(Self { eig, cb, cg, q11: ls.energy - delta })
    }

    /// Signed constraint value at `s(lambda)`; non-decreasing in `lambda`.
    pub fn eval(&self, lambda: f64) -> f64 {
        let mut k = self.q11;
        for j in 0..self.eig.len() {
            let den = lambda + self.eig[j];
            if den <= 0.0 {
                continue;
            }
            let z = (lambda * self.cb[j] + self.cg[j]) / den;
            k += self.eig[j] * z * z - 2.0 * self.cg[j] * z;
        }
        k
    }

    /// Unique positive root, bracketed on a log grid and refined by bisection.
    pub fn root(&self) -> Result<f64> {
        let scale = self.eig.max().max(f64::MIN_POSITIVE);
        let (mut lo, mut hi) = (scale * 1e-14, scale * 1e14);
        let (klo, khi) = (self.eval(lo), self.eval(hi));
        if !(klo < 0.0 && khi > 0.0) {
            return Err(Error::NoAdmissibleLambda);
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if self.eval(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi / lo - 1.0 < 1e-14 {
                break;
            }
        }
        Ok((lo * hi).sqrt())
    }
}

/// Optimal weight by the spectral route.
pub fn secular_lambda(ls: &WeightedLs, qt: &QtState, delta: f64) -> Result<f64> {
    SecularFunction::new(ls, qt, delta)?.root()
}

/// Optimal weight by the chosen route.
pub fn solve_lambda(solver: LambdaSolver, ls: &WeightedLs, qt: &QtState, delta: f64) -> Result<f64> {
    match solver {
        LambdaSolver::Pencil => Ok(max_finite_real_geneig(&PencilPair::assemble(ls, qt, delta)?)?.lambda_opt),
        LambdaSolver::Secular => secular_lambda(ls, qt, delta),
    }
}
