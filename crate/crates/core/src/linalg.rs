//! Dense linear algebra shared by the detectors, the pencil builders and the
//! channel synthesizer.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use nalgebra::Complex;

use crate::error::{Error, Result};

pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;
pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative jitter added to the diagonal when the first Cholesky attempt fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// Cholesky factor of a symmetric positive definite matrix, retrying once with
/// `CHOLESKY_JITTER * trace / dim` on the diagonal.
pub fn spd_factor(a: RMat) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, a.ncols())));
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    let jitter = CHOLESKY_JITTER * a.trace().abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
    let mut a = a;
    for i in 0..n {
        a[(i, i)] += jitter;
    }
    Cholesky::new(a).ok_or(Error::NotPositiveDefinite)
}

/// Solves `(dense + diag(diag_part)) x = rhs` for a symmetric positive definite
/// assembled matrix.
pub fn solve_normal_equations(diag_part: &RVec, dense_part: &RMat, rhs: &RVec) -> Result<RVec> {
    let n = dense_part.nrows();
    if dense_part.ncols() != n || diag_part.len() != n || rhs.len() != n {
        return Err(Error::Dimension(format!(
            "normal equations: dense {}x{}, diag {}, rhs {}",
            n,
            dense_part.ncols(),
            diag_part.len(),
            rhs.len()
        )));
    }
    let mut a = dense_part.clone();
    for i in 0..n {
        a[(i, i)] += diag_part[i];
    }
    let x = spd_factor(a)?.solve(rhs);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::NotPositiveDefinite)
    }
}

/// Solves `a x = rhs` (matrix right-hand side) for symmetric positive definite `a`.
pub fn spd_solve_mat(a: &RMat, rhs: &RMat) -> Result<RMat> {
    Ok(spd_factor(a.clone())?.solve(rhs))
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues down to `-1e-10 * max|eig|` are clamped to zero; anything more
/// negative is reported as a failure.
pub fn psd_sqrt(a: &RMat) -> Result<RMat> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", n, a.ncols())));
    }
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::SquareRoot("non-finite entries".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = -1e-10 * scale.max(1.0);
    let mut roots = RVec::zeros(n);
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < floor {
            return Err(Error::SquareRoot(format!("eigenvalue {ev:.3e} is negative")));
        }
        roots[i] = ev.max(0.0).sqrt();
    }
    let v = &eig.eigenvectors;
    let scaled = RMat::from_fn(n, n, |i, j| v[(i, j)] * roots[j]);
    Ok(&scaled * v.transpose())
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from the all-ones vector.
pub fn power_iteration_max_eig(a: &RMat, tol: f64, max_iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = RVec::from_element(n, 1.0 / (n as f64).sqrt());
    let mut estimate = 0.0;
    for it in 0..max_iters {
        let mut w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            // The start vector fell in the null space; perturb deterministically.
            if it == 0 {
                v = RVec::from_fn(n, |i, _| 1.0 + i as f64);
                v /= v.norm();
                continue;
            }
            return 0.0;
        }
        w /= norm;
        let next = w.dot(&(a * &w));
        v = w;
        if (next - estimate).abs() <= tol * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

pub fn is_symmetric(a: &RMat, tol: f64) -> bool {
    a.nrows() == a.ncols()
        && (0..a.nrows()).all(|i| (0..i).all(|j| (a[(i, j)] - a[(j, i)]).abs() <= tol))
}
