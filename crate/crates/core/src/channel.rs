//! Ground-truth time-domain multipath channel.
//!
//! Each tap is a Rayleigh-fading process with a Jakes Doppler spectrum,
//! approximated by the first-order autoregression `h_k = alpha h_{k-1} + v_k`
//! whose coefficients come from the Yule-Walker fit
//! `alpha = J0(2 pi f_d T_s)` and `E[v v^H] = (1 - alpha^2) diag(pdp)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numerics::{bessel_j0, NumericsError, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error("invalid channel parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Static statistics of a simulated link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProfile {
    pdp: Vec<f64>,
    normalized_doppler: f64,
    alpha: f64,
    process_noise: Vec<f64>,
}

impl ChannelProfile {
    /// Exponential power-delay profile `pdp[l] ~ exp(-pdp_decay * l)`, scaled to
    /// unit total power.
    pub fn new(num_paths: usize, normalized_doppler: f64, pdp_decay: f64) -> Result<Self, ChannelError> {
        if num_paths == 0 {
            return Err(ChannelError::InvalidParameter("num_paths must be >= 1".into()));
        }
        if !(pdp_decay >= 0.0) || !pdp_decay.is_finite() {
            return Err(ChannelError::InvalidParameter(format!("pdp_decay must be finite and >= 0, got {pdp_decay}")));
        }
        let raw: Vec<f64> = (0..num_paths).map(|l| (-pdp_decay * l as f64).exp()).collect();
        Self::from_pdp(&raw, normalized_doppler)
    }

    /// Arbitrary positive power-delay profile; it is rescaled to unit sum.
    pub fn from_pdp(pdp: &[f64], normalized_doppler: f64) -> Result<Self, ChannelError> {
        if pdp.is_empty() {
            return Err(ChannelError::InvalidParameter("power-delay profile is empty".into()));
        }
        if pdp.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(ChannelError::InvalidParameter("power-delay profile entries must be positive".into()));
        }
        if !(normalized_doppler >= 0.0 && normalized_doppler < 0.5) {
            return Err(ChannelError::InvalidParameter(format!("normalized doppler must lie in [0, 0.5), got {normalized_doppler}")));
        }
        let total: f64 = pdp.iter().sum();
        let pdp: Vec<f64> = pdp.iter().map(|p| p / total).collect();
        let alpha = bessel_j0(2.0 * PI * normalized_doppler)?;
        let process_noise = pdp.iter().map(|p| (1.0 - alpha * alpha) * p).collect();
        Ok(Self { pdp, normalized_doppler, alpha, process_noise })
    }

    pub fn num_paths(&self) -> usize {
        self.pdp.len()
    }

    pub fn pdp(&self) -> &[f64] {
        &self.pdp
    }

    pub fn normalized_doppler(&self) -> f64 {
        self.normalized_doppler
    }

    /// AR(1) transition coefficient.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Diagonal of the process-noise covariance.
    pub fn process_noise(&self) -> &[f64] {
        &self.process_noise
    }
}

/// Circularly-symmetric complex Gaussian sample with `E|z|^2 = var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Channel impulse response at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChannel {
    pub taps: Vec<C64>,
    pub time_index: u64,
}

impl TimeChannel {
    /// Stationary draw: tap `l` ~ CN(0, pdp[l]), at time index 0.
    pub fn init<R: Rng + ?Sized>(profile: &ChannelProfile, rng: &mut R) -> Self {
        let taps = profile.pdp.iter().map(|&p| complex_gaussian(rng, p)).collect();
        Self { taps, time_index: 0 }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// One AR(1) step.
    pub fn step<R: Rng + ?Sized>(&self, profile: &ChannelProfile, rng: &mut R) -> Self {
        assert_eq!(self.taps.len(), profile.num_paths(), "channel length does not match profile");
        let taps = self
            .taps
            .iter()
            .zip(&profile.process_noise)
            .map(|(&h, &q)| {
                let v = if q > 0.0 { complex_gaussian(rng, q) } else { C64::new(0.0, 0.0) };
                h * profile.alpha + v
            })
            .collect();
        Self { taps, time_index: self.time_index + 1 }
    }

    pub fn power(&self) -> f64 {
        self.taps.iter().map(|z| z.norm_sqr()).sum()
    }
}
