//! Exhaustive maximum-likelihood detection over the complex alphabet.

use crate::constellation::Constellation;
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    pub max_candidates: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self { max_candidates: 1 << 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlResult {
    /// Symbol indices of the minimizer.
    pub indices: Vec<usize>,
    pub residual: f64,
}

/// Number of candidate vectors, `|C|^Nt`.
pub fn candidate_count(con: &Constellation, nt: usize) -> u128 {
    (con.len() as u128).checked_pow(nt as u32).unwrap_or(u128::MAX)
}

pub fn residual(y: &CVec, h: &CMat, s: &CVec) -> f64 {
    (y - h * s).norm_squared()
}

/// Minimizes `||y - H s||^2` over `s in C^Nt`; ties keep the lexicographically
/// first index vector (first symbol most significant).
pub fn ml_detect(y: &CVec, h: &CMat, con: &Constellation, limits: OracleLimits) -> Result<MlResult> {
    let nt = h.ncols();
    if h.nrows() != y.len() {
        return Err(Error::Dimension(format!("H has {} rows but y has length {}", h.nrows(), y.len())));
    }
    let count = candidate_count(con, nt);
    if count > limits.max_candidates as u128 {
        return Err(Error::OracleCap { count, cap: limits.max_candidates });
    }
    let m = con.len();
    let points = con.points();
    let mut idx = vec![0usize; nt];
    let mut best = MlResult { indices: idx.clone(), residual: f64::INFINITY };
    let mut r = CVec::zeros(y.len());
    loop {
        r.copy_from(y);
        for (j, &k) in idx.iter().enumerate() {
            r.axpy(-points[k], &h.column(j), nalgebra::Complex::new(1.0, 0.0));
        }
        let res = r.norm_squared();
        if res < best.residual {
            best.residual = res;
            best.indices.copy_from_slice(&idx);
        }
        // odometer, last symbol fastest
        let mut pos = nt;
        loop {
            if pos == 0 {
                return Ok(best);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < m {
                break;
            }
            idx[pos] = 0;
        }
    }
}
