//! Flat-fading channel synthesis with spatial correlation, Gauss-Markov CSI
//! error and additive transmit distortion.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, CMat, CVec, RMat, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const DEFAULT_CARRIER_HZ: f64 = 5e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelModel {
    IidRayleigh,
    JakesCorrelated,
}

impl ChannelModel {
    pub fn short_name(self) -> &'static str {
        match self {
            ChannelModel::IidRayleigh => "iid",
            ChannelModel::JakesCorrelated => "jakes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub nt: usize,
    pub nr: usize,
    pub model: ChannelModel,
    pub carrier_hz: f64,
    pub spacing_m: f64,
}

impl ChannelSpec {
    /// Half-wavelength spacing at the default 5 GHz carrier.
    pub fn new(nt: usize, nr: usize, model: ChannelModel) -> Self {
        Self { nt, nr, model, carrier_hz: DEFAULT_CARRIER_HZ, spacing_m: half_wavelength(DEFAULT_CARRIER_HZ) }
    }

    pub fn iid(nt: usize, nr: usize) -> Self {
        Self::new(nt, nr, ChannelModel::IidRayleigh)
    }

    pub fn jakes(nt: usize, nr: usize) -> Self {
        Self::new(nt, nr, ChannelModel::JakesCorrelated)
    }

    /// Overloading ratio `Nt / Nr`.
    pub fn overloading_ratio(&self) -> f64 {
        self.nt as f64 / self.nr as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.nt == 0 || self.nr == 0 {
            return Err(Error::InvalidParameter(format!("antenna counts must be positive, got {}x{}", self.nt, self.nr)));
        }
        if !(self.carrier_hz > 0.0 && self.spacing_m > 0.0) {
            return Err(Error::InvalidParameter("carrier and spacing must be positive".into()));
        }
        Ok(())
    }
}

pub fn half_wavelength(carrier_hz: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * carrier_hz)
}

/// Bessel function of the first kind, order zero.
///
/// Trapezoidal rule on `J0(x) = (1/pi) * int_0^pi cos(x sin t) dt`; the
/// integrand is smooth and periodic, so the rule converges geometrically once
/// the node count exceeds `|x| / 2`.
pub fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    let n = (x.ceil() as usize).max(16) + 48;
    let h = std::f64::consts::PI / n as f64;
    let mut acc = 0.5 * (1.0 + (x * (std::f64::consts::PI).sin()).cos());
    for k in 1..n {
        acc += (x * (k as f64 * h).sin()).cos();
    }
    acc / n as f64
}

/// Jakes spatial correlation `J0(2 pi f_c d |k - l| / c)`.
pub fn jakes_signature(n: usize, carrier_hz: f64, spacing_m: f64) -> Result<RMat> {
    if n == 0 || !(carrier_hz > 0.0) || !(spacing_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "jakes signature needs n >= 1 and positive carrier/spacing (n={n}, f_c={carrier_hz}, d={spacing_m})"
        )));
    }
    let arg = 2.0 * std::f64::consts::PI * carrier_hz * spacing_m / SPEED_OF_LIGHT;
    let taps: Vec<f64> = (0..n).map(|m| if m == 0 { 1.0 } else { bessel_j0(arg * m as f64) }).collect();
    Ok(RMat::from_fn(n, n, |k, l| taps[k.abs_diff(l)]))
}

/// CSI uncertainty, RF distortion and the correlation signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpairmentParams {
    /// Gauss-Markov uncertainty, `0 <= tau <= 1`.
    pub tau: f64,
    /// Distortion-to-signal power ratio.
    pub eta: f64,
    pub phi_r: RMat,
    pub phi_t: RMat,
}

impl ImpairmentParams {
    pub fn ideal(nt: usize, nr: usize) -> Self {
        Self { tau: 0.0, eta: 0.0, phi_r: RMat::identity(nr, nr), phi_t: RMat::identity(nt, nt) }
    }

    /// Signatures implied by the channel model, with the given `tau^2` and `eta`.
    pub fn for_channel(spec: &ChannelSpec, tau_sq: f64, eta: f64) -> Result<Self> {
        let (phi_r, phi_t) = match spec.model {
            ChannelModel::IidRayleigh => (RMat::identity(spec.nr, spec.nr), RMat::identity(spec.nt, spec.nt)),
            ChannelModel::JakesCorrelated => (
                jakes_signature(spec.nr, spec.carrier_hz, spec.spacing_m)?,
                jakes_signature(spec.nt, spec.carrier_hz, spec.spacing_m)?,
            ),
        };
        let p = Self { tau: tau_sq.max(0.0).sqrt(), eta, phi_r, phi_t };
        p.validate()?;
        Ok(p)
    }

    pub fn is_ideal(&self) -> bool {
        self.tau == 0.0 && self.eta == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be non-negative, got {}", self.eta)));
        }
        Ok(())
    }

    fn gm_weights(&self) -> Result<(f64, f64)> {
        let tau2 = self.tau * self.tau;
        if tau2 >= 1.0 {
            return Err(Error::InvalidParameter("tau = 1 leaves no usable channel estimate".into()));
        }
        Ok((tau2, 1.0 - tau2))
    }
}

/// One channel draw: the true channel, the receiver's estimate and the error.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h_true: CMat,
    pub h_est: CMat,
    pub e: CMat,
}

/// Draws `CN(0, variance)` samples.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

pub fn complex_gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMat {
    // column-major fill order is part of the reproducibility contract
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = complex_gaussian(rng, variance);
        }
    }
    m
}

fn to_complex(a: &RMat) -> CMat {
    a.map(|v| C64::new(v, 0.0))
}

/// Precomputed correlation square roots for repeated draws.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    nt: usize,
    nr: usize,
    tau: f64,
    sqrt_r: Option<CMat>,
    sqrt_t: Option<CMat>,
}

impl ChannelSampler {
    pub fn new(spec: &ChannelSpec, imp: &ImpairmentParams) -> Result<Self> {
        spec.validate()?;
        imp.validate()?;
        if imp.phi_r.shape() != (spec.nr, spec.nr) || imp.phi_t.shape() != (spec.nt, spec.nt) {
            return Err(Error::Dimension(format!(
                "correlation shapes {:?}/{:?} do not match {}x{} channel",
                imp.phi_r.shape(),
                imp.phi_t.shape(),
                spec.nr,
                spec.nt
            )));
        }
        let root = |phi: &RMat| -> Result<Option<CMat>> {
            if *phi == RMat::identity(phi.nrows(), phi.ncols()) {
                Ok(None)
            } else {
                Ok(Some(to_complex(&psd_sqrt(phi)?)))
            }
        };
        Ok(Self { nt: spec.nt, nr: spec.nr, tau: imp.tau, sqrt_r: root(&imp.phi_r)?, sqrt_t: root(&imp.phi_t)? })
    }

    fn correlate(&self, m: CMat) -> CMat {
        let m = match &self.sqrt_r {
            Some(r) => r * m,
            None => m,
        };
        match &self.sqrt_t {
            Some(t) => m * t,
            None => m,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ChannelRealization {
        let h_iid = complex_gaussian_matrix(rng, self.nr, self.nt, 1.0);
        let e_iid = complex_gaussian_matrix(rng, self.nr, self.nt, 1.0);
        let h_est = self.correlate(h_iid);
        let e = self.correlate(e_iid);
        let a = (1.0 - self.tau * self.tau).max(0.0).sqrt();
        let h_true = h_est.map(|v| v * a) + e.map(|v| v * self.tau);
        ChannelRealization { h_true, h_est, e }
    }
}

pub fn draw_channel<R: Rng + ?Sized>(
    spec: &ChannelSpec,
    imp: &ImpairmentParams,
    rng: &mut R,
) -> Result<ChannelRealization> {
    Ok(ChannelSampler::new(spec, imp)?.draw(rng))
}

/// Adds `w ~ CN(0, eta I)` to unit-power symbols.
pub fn transmit<R: Rng + ?Sized>(s: &CVec, imp: &ImpairmentParams, rng: &mut R) -> CVec {
    if imp.eta == 0.0 {
        return s.clone();
    }
    CVec::from_fn(s.len(), |i, _| s[i] + complex_gaussian(rng, imp.eta))
}

/// `y = H x + n` with `n ~ CN(0, sigma2 I)`.
pub fn receive<R: Rng + ?Sized>(h_true: &CMat, x: &CVec, sigma2: f64, rng: &mut R) -> Result<CVec> {
    if h_true.ncols() != x.len() {
        return Err(Error::Dimension(format!("H has {} columns but x has length {}", h_true.ncols(), x.len())));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise variance must be non-negative, got {sigma2}")));
    }
    let mut y = h_true * x;
    if sigma2 > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng, sigma2);
        }
    }
    Ok(y)
}

/// `y / sqrt(1 - tau^2)`.
pub fn normalize_received(y: &CVec, tau: f64) -> Result<CVec> {
    let tau2 = tau * tau;
    if !(tau2 < 1.0) {
        return Err(Error::InvalidParameter("tau = 1 leaves no usable channel estimate".into()));
    }
    let scale = 1.0 / (1.0 - tau2).sqrt();
    Ok(y.map(|v| v * scale))
}

/// Correlated and uncorrelated parts of the effective-noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveNoise {
    pub sigma_c: CMat,
    pub sigma_u: CMat,
}

impl EffectiveNoise {
    pub fn total(&self) -> CMat {
        &self.sigma_c + &self.sigma_u
    }

    /// Diagonal level of the uncorrelated part, `sigma2 / (1 - tau^2)`.
    pub fn white_level(&self) -> f64 {
        if self.sigma_u.nrows() == 0 {
            0.0
        } else {
            self.sigma_u[(0, 0)].re
        }
    }
}

/// Covariance of `H_est w + (tau E s + tau E w + n) / sqrt(1 - tau^2)`.
pub fn effective_noise_covariance(h_est: &CMat, imp: &ImpairmentParams, sigma2: f64) -> Result<EffectiveNoise> {
    let (tau2, one_minus) = imp.gm_weights()?;
    let nr = h_est.nrows();
    if imp.phi_r.shape() != (nr, nr) || imp.phi_t.ncols() != h_est.ncols() {
        return Err(Error::Dimension("correlation signatures do not match the channel estimate".into()));
    }
    let mut sigma_c = h_est * h_est.adjoint() * C64::new(imp.eta, 0.0);
    if tau2 > 0.0 {
        let w = tau2 / one_minus * (1.0 + imp.eta) * imp.phi_t.trace();
        sigma_c += to_complex(&imp.phi_r) * C64::new(w, 0.0);
    }
    // exact Hermitian symmetry
    sigma_c = (&sigma_c + sigma_c.adjoint()) * C64::new(0.5, 0.0);
    let sigma_u = CMat::identity(nr, nr) * C64::new(sigma2 / one_minus, 0.0);
    Ok(EffectiveNoise { sigma_c, sigma_u })
}
