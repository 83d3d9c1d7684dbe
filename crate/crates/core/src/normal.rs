//! Weighted least-squares data shared by the detector variants and their
//! regularization pencils.
//!
//! Every IDLS variant minimizes
//! `s^T G s - 2 g^T s + e + lambda (s^T B s - 2 b^T s)` where
//!
//! | variant     | `G`                                   | `g`            | `e`            |
//! |-------------|---------------------------------------|----------------|----------------|
//! | plain       | `H^T H`                               | `H^T y`        | `y^T y`        |
//! | noise-aware | `H^T H + sigma2 I`                    | `H^T y`        | `y^T y`        |
//! | robust      | `H^T W H + sigma2 / (1 - tau^2) I`    | `H^T W y_bar`  | `y_bar^T W y_bar` |
//!
//! with `W = (Sigma_C + I)^-1` in the robust case.

use serde::{Deserialize, Serialize};

use crate::channel::EffectiveNoise;
use crate::constellation::{stack_mat, RealLinearModel};
use crate::error::{Error, Result};
use crate::linalg::{spd_factor, RMat, RVec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Plain,
    NoiseAware,
    Robust,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLs {
    pub variant: Variant,
    pub gram: RMat,
    pub rhs: RVec,
    pub energy: f64,
    /// Multiple of the identity already folded into `gram`.
    pub ridge: f64,
}

impl WeightedLs {
    pub fn plain(model: &RealLinearModel) -> Self {
        let ht = model.h.transpose();
        Self {
            variant: Variant::Plain,
            gram: &ht * &model.h,
            rhs: &ht * &model.y,
            energy: model.y.norm_squared(),
            ridge: 0.0,
        }
    }

    pub fn noise_aware(model: &RealLinearModel, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise variance must be non-negative, got {sigma2}")));
        }
        let mut ls = Self::plain(model);
        ls.variant = Variant::NoiseAware;
        ls.ridge = sigma2;
        for i in 0..ls.gram.nrows() {
            ls.gram[(i, i)] += sigma2;
        }
        Ok(ls)
    }

    /// Mahalanobis-weighted data for the normalized observation `y_bar` on the
    /// estimate `model.h`, with `W = (Sigma_C + I)^-1` from `noise`.
    pub fn robust(model_bar: &RealLinearModel, noise: &EffectiveNoise) -> Result<Self> {
        let nr2 = model_bar.h.nrows();
        let nt2 = model_bar.h.ncols();
        if noise.sigma_c.nrows() * 2 != nr2 {
            return Err(Error::Dimension(format!(
                "Sigma_C is {}x{} but the stacked observation has length {}",
                noise.sigma_c.nrows(),
                noise.sigma_c.ncols(),
                nr2
            )));
        }
        let mut weight = stack_mat(&noise.sigma_c);
        for i in 0..nr2 {
            weight[(i, i)] += 1.0;
        }
        let chol = spd_factor(weight)?;
        let mut joint = RMat::zeros(nr2, nt2 + 1);
        joint.columns_mut(0, nt2).copy_from(&model_bar.h);
        joint.column_mut(nt2).copy_from(&model_bar.y);
        let solved = chol.solve(&joint);
        let wh = solved.columns(0, nt2);
        let wy = solved.column(nt2);
        let ht = model_bar.h.transpose();
        let mut gram = &ht * wh;
        gram = (&gram + gram.transpose()) * 0.5;
        let ridge = noise.white_level();
        for i in 0..nt2 {
            gram[(i, i)] += ridge;
        }
        Ok(Self { variant: Variant::Robust, gram, rhs: &ht * wy, energy: model_bar.y.dot(&wy), ridge })
    }

    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    /// `s^T G s - 2 g^T s + e`, the (weighted, ridged) data-fit term.
    pub fn fit(&self, s: &RVec) -> f64 {
        s.dot(&(&self.gram * s)) - 2.0 * self.rhs.dot(s) + self.energy
    }

    /// Signed constraint function `k(s) = fit(s) - delta` of the QCQP.
    pub fn kkt_residual(&self, s: &RVec, delta: f64) -> f64 {
        self.fit(s) - delta
    }
}

/// `k(s) = s^T H^T H s - 2 y^T H s + y^T y - delta` for the plain model.
pub fn kkt_residual(model: &RealLinearModel, s_bar: &RVec, delta: f64) -> f64 {
    WeightedLs::plain(model).kkt_residual(s_bar, delta)
}
