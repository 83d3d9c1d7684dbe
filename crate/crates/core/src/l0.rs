//! Smooth l0 approximation and its quadratic-transform majorizer.
//!
//! The constellation regularizer `sum_i ||s - p_i 1||_0` is replaced by the
//! smooth surrogate `sum_i sum_j (s_j - p_i)^2 / ((s_j - p_i)^2 + alpha)`.
//! Around a pivot, each ratio is majorized by a quadratic with weights
//! `beta_ij^2`, which collapses into a diagonal matrix `B` and a vector `b`:
//! the regularizer then reads `s^T B s - 2 b^T s + const`.

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::linalg::{RMat, RVec};

/// Default shaping parameter.
pub const DEFAULT_ALPHA: f64 = 0.1;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("shaping parameter must be positive, got {alpha}")))
    }
}

/// `sum |x_i|^2 / (|x_i|^2 + alpha)`.
pub fn l0_smooth(x: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(x.iter().map(|v| v * v / (v * v + alpha)).sum())
}

/// Quadratic-transform value of the smooth l0 at `x` with weights taken at `pivot`.
///
/// Majorizes [`l0_smooth`] and touches it at `x == pivot`.
pub fn surrogate_value(x: &[f64], pivot: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if x.len() != pivot.len() {
        return Err(Error::Dimension(format!("x has length {}, pivot {}", x.len(), pivot.len())));
    }
    let sa = alpha.sqrt();
    let mut acc = x.len() as f64;
    for (&xi, &pi) in x.iter().zip(pivot) {
        let beta = sa / (pi * pi + alpha);
        acc -= 2.0 * beta * sa - beta * beta * (xi * xi + alpha);
    }
    Ok(acc)
}

/// Constellation regularizer `sum_i l0_smooth(s - p_i 1)` on a stacked vector.
pub fn constellation_penalty(s: &RVec, levels: &[f64], alpha: f64) -> f64 {
    levels
        .iter()
        .map(|&p| s.iter().map(|&v| (v - p) * (v - p) / ((v - p) * (v - p) + alpha)).sum::<f64>())
        .sum()
}

/// Quadratic-transform pivots at a given iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct QtState {
    /// `beta[(i, j)]` for PAM level `i` and coordinate `j`.
    pub beta: RMat,
    pub b_vec: RVec,
    /// Diagonal of `B`.
    pub b_mat_diag: RVec,
    pub alpha: f64,
}

impl QtState {
    pub fn dim(&self) -> usize {
        self.b_vec.len()
    }

    /// Dense copy of `B`.
    pub fn b_mat(&self) -> RMat {
        RMat::from_diagonal(&self.b_mat_diag)
    }

    /// `s^T B s - 2 b^T s`.
    pub fn quadratic(&self, s: &RVec) -> f64 {
        s.iter()
            .zip(self.b_mat_diag.iter().zip(self.b_vec.iter()))
            .map(|(&v, (&d, &b))| d * v * v - 2.0 * b * v)
            .sum()
    }
}

/// Recomputes `beta`, `b` and `B` at iterate `s`.
pub fn update_pivots(s: &RVec, con: &Constellation, alpha: f64) -> Result<QtState> {
    check_alpha(alpha)?;
    let levels = con.pam_levels();
    let n = s.len();
    let sa = alpha.sqrt();
    let mut beta = RMat::zeros(levels.len(), n);
    let mut b_vec = RVec::zeros(n);
    let mut b_mat_diag = RVec::zeros(n);
    for j in 0..n {
        for (i, &p) in levels.iter().enumerate() {
            let d = s[j] - p;
            let bij = sa / (d * d + alpha);
            beta[(i, j)] = bij;
            let w = bij * bij;
            b_vec[j] += p * w;
            b_mat_diag[j] += w;
        }
    }
    Ok(QtState { beta, b_vec, b_mat_diag, alpha })
}
