//! Binary hypothesis tests deciding whether the current observation comes from
//! the tracked transmitter.
//!
//! The Kalman test compares `lambda = 2 eps^H Sigma^{-1} eps` against a
//! chi-squared quantile with `2Q` degrees of freedom. The baseline compares
//! normalized CSI magnitude differences against an empirically calibrated
//! threshold.

use crate::numerics::{chi2_quantile, InverseQuadForm, NumericsError, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectorError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("false-alarm probability must lie in (0, 1), got {0}")]
    FalseAlarm(f64),
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("reference observation has zero magnitude")]
    ZeroReference,
    #[error("no calibration samples")]
    EmptyCalibration,
    #[error("statistic is not a finite non-negative number: {0}")]
    BadStatistic(f64),
}

type Result<T> = std::result::Result<T, DetectorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hypothesis {
    /// Legitimate transmitter.
    H0,
    /// Spoofer.
    H1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transmitter {
    Alice,
    Eve,
}

impl Transmitter {
    pub fn hypothesis(self) -> Hypothesis {
        match self {
            Transmitter::Alice => Hypothesis::H0,
            Transmitter::Eve => Hypothesis::H1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    Kalman,
    MagnitudeDiff,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Kalman => "kalman",
            DetectorKind::MagnitudeDiff => "magnitude",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub statistic: f64,
    pub threshold: f64,
    pub decision: Hypothesis,
    pub ground_truth: Hypothesis,
    pub detector: DetectorKind,
    pub time_index: u64,
}

impl DetectionRecord {
    pub fn new(statistic: f64, threshold: f64, truth: Transmitter, detector: DetectorKind, time_index: u64) -> Self {
        Self { statistic, threshold, decision: decide(statistic, threshold), ground_truth: truth.hypothesis(), detector, time_index }
    }

    pub fn is_error(&self) -> bool {
        self.decision != self.ground_truth
    }
}

/// Degrees of freedom of the Kalman statistic under H0 for `q` pilots.
pub fn kalman_dof(num_pilots: usize) -> u32 {
    2 * num_pilots as u32
}

/// `2 eps^H Sigma^{-1} eps`.
pub fn test_statistic<S: InverseQuadForm + ?Sized>(residual: &[C64], covariance: &S) -> Result<f64> {
    let v = 2.0 * covariance.inv_quad(residual)?;
    if !v.is_finite() || v < 0.0 {
        return Err(DetectorError::BadStatistic(v));
    }
    Ok(v)
}

/// The `(1 - p_fa)` quantile of chi-squared with `dof` degrees of freedom.
pub fn threshold(p_fa: f64, dof: u32) -> Result<f64> {
    check_p_fa(p_fa)?;
    Ok(chi2_quantile(1.0 - p_fa, dof)?)
}

fn check_p_fa(p_fa: f64) -> Result<()> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(DetectorError::FalseAlarm(p_fa));
    }
    Ok(())
}

/// H1 iff the statistic strictly exceeds the threshold.
pub fn decide(statistic: f64, threshold: f64) -> Hypothesis {
    if statistic > threshold {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

/// `|| |cur| - |prev| ||^2 / || |prev| ||^2`.
pub fn magnitude_diff_statistic(current: &[C64], previous: &[C64]) -> Result<f64> {
    if current.len() != previous.len() {
        return Err(DetectorError::Length(current.len(), previous.len()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (c, p) in current.iter().zip(previous) {
        let pm = p.norm();
        let d = c.norm() - pm;
        num += d * d;
        den += pm * pm;
    }
    if den == 0.0 {
        return Err(DetectorError::ZeroReference);
    }
    Ok(num / den)
}

/// Nearest-rank `(1 - p_fa)` quantile of H0 calibration samples.
pub fn calibrate_empirical_threshold(samples: &[f64], p_fa: f64) -> Result<f64> {
    check_p_fa(p_fa)?;
    if samples.is_empty() {
        return Err(DetectorError::EmptyCalibration);
    }
    if let Some(&bad) = samples.iter().find(|s| !s.is_finite()) {
        return Err(DetectorError::BadStatistic(bad));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((n as f64) * (1.0 - p_fa) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}
