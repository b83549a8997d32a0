//! Distorted DFT-domain CSI observations.
//!
//! `h_obs = E C h + w`: the partial DFT `C` maps the time-domain channel onto
//! the pilot subcarriers, the diagonal `E` applies the common phase offset
//! (CFO) and the linear phase slope (packet-detection delay), and `w` is
//! circularly-symmetric Gaussian noise.

use std::f64::consts::PI;

use rand::Rng;

use crate::channel::{complex_gaussian, TimeChannel};
use crate::numerics::{wrap_phase, CMatrix, C64};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObservationError {
    #[error("invalid pilot grid: {0}")]
    InvalidGrid(String),
    #[error("noise variance must be positive and finite, got {0}")]
    NoiseVariance(f64),
    #[error("channel has {got} taps, observer expects {expected}")]
    ChannelLength { expected: usize, got: usize },
}

/// Pilot subcarrier layout inside an `M`-point DFT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotGrid {
    dft_size: usize,
    indices: Vec<usize>,
}

impl PilotGrid {
    pub fn new(dft_size: usize, indices: Vec<usize>) -> Result<Self, ObservationError> {
        if dft_size == 0 {
            return Err(ObservationError::InvalidGrid("dft size must be >= 1".into()));
        }
        if indices.is_empty() {
            return Err(ObservationError::InvalidGrid("at least one pilot is required".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&q| q >= dft_size) {
            return Err(ObservationError::InvalidGrid(format!("pilot index {bad} outside [0, {dft_size})")));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ObservationError::InvalidGrid("pilot indices must be strictly increasing".into()));
        }
        Ok(Self { dft_size, indices })
    }

    /// The 114 occupied subcarriers of a 40 MHz HT symbol (signed carriers
    /// -58..=-2 and 2..=58) as bins of a 128-point DFT.
    pub fn ht40() -> Self {
        let indices = (2..=58).chain(70..=126).collect();
        Self { dft_size: 128, indices }
    }

    /// Parses `ht40`, `all`, or a comma list of indices and inclusive ranges
    /// such as `2-58,70-126`.
    pub fn parse(spec: &str, dft_size: usize) -> Result<Self, ObservationError> {
        let spec = spec.trim();
        match spec {
            "ht40" => {
                if dft_size != 128 {
                    return Err(ObservationError::InvalidGrid("ht40 layout needs dft_size = 128".into()));
                }
                return Ok(Self::ht40());
            }
            "all" => return Self::new(dft_size, (0..dft_size).collect()),
            _ => {}
        }
        let mut indices = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| ObservationError::InvalidGrid(format!("bad pilot index '{s}'")));
            match part.split_once('-') {
                Some((a, b)) => {
                    let (a, b) = (parse(a)?, parse(b)?);
                    if a > b {
                        return Err(ObservationError::InvalidGrid(format!("empty range '{part}'")));
                    }
                    indices.extend(a..=b);
                }
                None => indices.push(parse(part)?),
            }
        }
        Self::new(dft_size, indices)
    }

    pub fn dft_size(&self) -> usize {
        self.dft_size
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn num_pilots(&self) -> usize {
        self.indices.len()
    }
}

/// Random phase distortion of one CSI estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDistortion {
    offset: f64,
    slope: f64,
}

impl PhaseDistortion {
    /// `offset` is wrapped into `[-pi, pi)`; `slope` is in radians per
    /// subcarrier index.
    pub fn new(offset: f64, slope: f64) -> Self {
        Self { offset: wrap_phase(offset), slope }
    }

    pub fn identity() -> Self {
        Self { offset: 0.0, slope: 0.0 }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }
}

/// Distorted CSI on the pilot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiObservation {
    pub values: Vec<C64>,
    pub time_index: u64,
}

impl CsiObservation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(|z| z.norm())
    }
}

/// `[C]_{m,l} = exp(-j 2 pi q_m l / M)`.
pub fn partial_dft(grid: &PilotGrid, num_paths: usize) -> CMatrix {
    let m = grid.dft_size as f64;
    CMatrix::from_fn(grid.num_pilots(), num_paths, |row, l| {
        let q = grid.indices[row] as f64;
        C64::from_polar(1.0, -2.0 * PI * q * l as f64 / m)
    })
}

/// Diagonal of `E = exp(j offset) diag(exp(j slope q_m))`.
pub fn phase_error_matrix(d: &PhaseDistortion, grid: &PilotGrid) -> Vec<C64> {
    grid.indices.iter().map(|&q| C64::from_polar(1.0, d.offset + d.slope * q as f64)).collect()
}

/// Offset uniform on `[-pi, pi)`, slope uniform on `[-max_slope, max_slope]`.
pub fn draw_phase_distortion<R: Rng + ?Sized>(rng: &mut R, max_slope: f64) -> PhaseDistortion {
    let offset = rng.random_range(-PI..PI);
    let slope = if max_slope > 0.0 { rng.random_range(-max_slope..=max_slope) } else { 0.0 };
    PhaseDistortion::new(offset, slope)
}

/// Per-pilot noise variance for a unit-power channel.
pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Holds the partial DFT for one grid and channel length so that repeated
/// observations do not rebuild it.
#[derive(Debug, Clone)]
pub struct Observer {
    grid: PilotGrid,
    dft: CMatrix,
}

impl Observer {
    pub fn new(grid: PilotGrid, num_paths: usize) -> Self {
        let dft = partial_dft(&grid, num_paths);
        Self { grid, dft }
    }

    pub fn grid(&self) -> &PilotGrid {
        &self.grid
    }

    pub fn dft(&self) -> &CMatrix {
        &self.dft
    }

    /// `C h`, the undistorted DFT-domain channel.
    pub fn true_csi(&self, h: &TimeChannel) -> Result<Vec<C64>, ObservationError> {
        if h.len() != self.dft.cols() {
            return Err(ObservationError::ChannelLength { expected: self.dft.cols(), got: h.len() });
        }
        Ok(self.dft.mul_vec(&h.taps).expect("dimensions checked"))
    }

    pub fn observe<R: Rng + ?Sized>(
        &self,
        h: &TimeChannel,
        d: &PhaseDistortion,
        noise_var: f64,
        rng: &mut R,
    ) -> Result<CsiObservation, ObservationError> {
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(ObservationError::NoiseVariance(noise_var));
        }
        let clean = self.true_csi(h)?;
        let values = clean.iter().zip(phase_error_matrix(d, &self.grid)).map(|(c, e)| e * c + complex_gaussian(rng, noise_var)).collect();
        Ok(CsiObservation { values, time_index: h.time_index })
    }
}

/// One-shot form of [`Observer::observe`].
pub fn observe<R: Rng + ?Sized>(
    h: &TimeChannel,
    d: &PhaseDistortion,
    grid: &PilotGrid,
    noise_var: f64,
    rng: &mut R,
) -> Result<CsiObservation, ObservationError> {
    Observer::new(grid.clone(), h.len()).observe(h, d, noise_var, rng)
}
