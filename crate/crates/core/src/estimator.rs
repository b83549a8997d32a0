//! Adaptive Kalman filter over the time-domain channel with joint estimation
//! of the per-observation phase distortion.
//!
//! One step is: predict `h_{k|k-1} = alpha h_{k-1|k-1}`,
//! `P_{k|k-1} = alpha^2 P_{k-1|k-1} + R`; pick `(offset, slope)` minimizing the
//! whitened residual energy; form `B = E C`, the residual `eps = h_obs - B h`,
//! its covariance `Sigma = B P B^H + sigma_w^2 I`, the gain and the update.
//!
//! # Structured evaluation
//!
//! `E` is a unitary diagonal, so `Sigma(d)^{-1} = E Sigma_0^{-1} E^H` with
//! `Sigma_0 = C P C^H + sigma_w^2 I` independent of the distortion. With the
//! thin QR factorization `C = U T` (`U` is `Q x L` with orthonormal columns),
//!
//! ```text
//! Sigma_0^{-1} = U N^{-1} U^H + (I - U U^H) / sigma_w^2,   N = sigma_w^2 I + T P T^H
//! ```
//!
//! so every objective evaluation, gain and covariance update reduces to
//! `L x L` algebra plus one `L x Q` projection. [`ResidualCovariance`] keeps
//! this factored form; [`ResidualCovariance::to_dense`] and the free functions
//! [`negative_log_likelihood`], [`gain`] and [`update`] are the direct
//! `Q x Q` forms.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::channel::ChannelProfile;
use crate::numerics::{norm_sqr, wrap_phase, CMatrix, Cholesky, HermitianPsdMatrix, InverseQuadForm, NumericsError, C64};
use crate::observation::{partial_dft, phase_error_matrix, CsiObservation, PhaseDistortion, PilotGrid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("expected a {expected:?} state, got {got:?}")]
    WrongKind { expected: StateKind, got: StateKind },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("covariance entry {index} went negative ({value:e})")]
    NegativeCovariance { index: usize, value: f64 },
    #[error("observation time {got} does not follow state time {state}")]
    TimeIndex { state: u64, got: u64 },
    #[error("pilot grid does not resolve {0} channel taps")]
    RankDeficient(usize),
    #[error("invalid phase search configuration: {0}")]
    InvalidSearch(String),
    #[error("noise variance must be positive and finite, got {0}")]
    NoiseVariance(f64),
}

type Result<T> = std::result::Result<T, EstimatorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Predicted,
    Updated,
}

/// Channel mean and diagonal error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vec<C64>,
    pub cov_diag: Vec<f64>,
    pub kind: StateKind,
    pub time_index: u64,
}

impl KalmanState {
    fn expect(&self, kind: StateKind) -> Result<()> {
        if self.kind != kind {
            return Err(EstimatorError::WrongKind { expected: kind, got: self.kind });
        }
        Ok(())
    }
}

/// Zero mean, stationary covariance.
pub fn init_state(profile: &ChannelProfile) -> KalmanState {
    KalmanState {
        mean: vec![C64::new(0.0, 0.0); profile.num_paths()],
        cov_diag: profile.pdp().to_vec(),
        kind: StateKind::Updated,
        time_index: 0,
    }
}

pub fn predict(state: &KalmanState, profile: &ChannelProfile) -> Result<KalmanState> {
    state.expect(StateKind::Updated)?;
    if state.mean.len() != profile.num_paths() {
        return Err(EstimatorError::Dimension { what: "predict", expected: profile.num_paths(), got: state.mean.len() });
    }
    let a = profile.alpha();
    Ok(KalmanState {
        mean: state.mean.iter().map(|m| m * a).collect(),
        cov_diag: state.cov_diag.iter().zip(profile.process_noise()).map(|(p, r)| a * a * p + r).collect(),
        kind: StateKind::Predicted,
        time_index: state.time_index + 1,
    })
}

/// Which function of the distortion the phase search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `eps^H Sigma^{-1} eps`, the Gaussian negative log-likelihood up to the
    /// log-determinant.
    Whitened,
    /// `h_obs^H Sigma^{-1} h_obs - 2 Re[h_obs^H B h]`, with the cross term
    /// left unweighted.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSearchConfig {
    pub slope_grid_points: usize,
    pub offset_grid_points: usize,
    pub refine_iterations: usize,
    pub refine_tolerance: f64,
    pub slope_search_bound: f64,
    pub objective: Objective,
    /// Adds `ln det Sigma`. It does not depend on the distortion, so the
    /// argmin is unchanged; only reported objective values move.
    pub include_log_det: bool,
}

impl Default for PhaseSearchConfig {
    fn default() -> Self {
        Self {
            slope_grid_points: 64,
            offset_grid_points: 64,
            refine_iterations: 20,
            refine_tolerance: 1e-5,
            slope_search_bound: 2.0 * PI * 4.0 / 128.0,
            objective: Objective::Whitened,
            include_log_det: false,
        }
    }
}

impl PhaseSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slope_grid_points < 2 || self.offset_grid_points < 2 {
            return Err(EstimatorError::InvalidSearch("grids need at least 2 points".into()));
        }
        if !(self.refine_tolerance > 0.0) {
            return Err(EstimatorError::InvalidSearch("refine tolerance must be positive".into()));
        }
        if !(self.slope_search_bound > 0.0) || !self.slope_search_bound.is_finite() {
            return Err(EstimatorError::InvalidSearch("slope bound must be positive".into()));
        }
        Ok(())
    }
}

/// Precomputed factorization of the partial DFT for one pilot grid and
/// channel length.
#[derive(Debug, Clone)]
pub struct PilotBasis {
    grid: PilotGrid,
    dft: CMatrix,
    // U^H split into real/imaginary planes, stored pilot-major (Q blocks of L)
    uh_re: Vec<f64>,
    uh_im: Vec<f64>,
    tri: CMatrix,
    centroid: f64,
    centered: Vec<f64>,
    gaps: Vec<usize>,
}

impl PilotBasis {
    pub fn new(grid: PilotGrid, num_paths: usize) -> Result<Self> {
        let q_count = grid.num_pilots();
        if num_paths == 0 || num_paths > q_count {
            return Err(EstimatorError::RankDeficient(num_paths));
        }
        let dft = partial_dft(&grid, num_paths);
        // modified Gram-Schmidt with one reorthogonalization pass
        let mut cols: Vec<Vec<C64>> = Vec::with_capacity(num_paths);
        let mut tri = CMatrix::zeros(num_paths, num_paths);
        for j in 0..num_paths {
            let mut v: Vec<C64> = (0..q_count).map(|m| dft[(m, j)]).collect();
            let original = norm_sqr(&v).sqrt();
            for _ in 0..2 {
                for (i, u) in cols.iter().enumerate() {
                    let r: C64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                    tri[(i, j)] += r;
                    for (vm, um) in v.iter_mut().zip(u) {
                        *vm -= r * um;
                    }
                }
            }
            let nrm = norm_sqr(&v).sqrt();
            if nrm <= 1e-10 * original {
                return Err(EstimatorError::RankDeficient(num_paths));
            }
            tri[(j, j)] = C64::new(nrm, 0.0);
            v.iter_mut().for_each(|z| *z /= nrm);
            cols.push(v);
        }
        let mut uh_re = Vec::with_capacity(num_paths * q_count);
        let mut uh_im = Vec::with_capacity(num_paths * q_count);
        for m in 0..q_count {
            uh_re.extend(cols.iter().map(|u| u[m].re));
            uh_im.extend(cols.iter().map(|u| -u[m].im));
        }
        let q: Vec<f64> = grid.indices().iter().map(|&i| i as f64).collect();
        let centroid = q.iter().sum::<f64>() / q.len() as f64;
        let centered = q.iter().map(|x| x - centroid).collect();
        let gaps = grid.indices().windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { grid, dft, uh_re, uh_im, tri, centroid, centered, gaps })
    }

    pub fn grid(&self) -> &PilotGrid {
        &self.grid
    }

    pub fn dft(&self) -> &CMatrix {
        &self.dft
    }

    pub fn num_paths(&self) -> usize {
        self.tri.rows()
    }

    /// Orthonormal factor `U` (Q x L) of the thin QR `C = U T`.
    pub fn orthonormal_factor(&self) -> CMatrix {
        let l = self.num_paths();
        CMatrix::from_fn(self.num_pilots(), l, |m, k| C64::new(self.uh_re[m * l + k], -self.uh_im[m * l + k]))
    }

    /// Upper-triangular factor `T` (L x L) of the thin QR `C = U T`.
    pub fn triangular_factor(&self) -> &CMatrix {
        &self.tri
    }

    pub fn num_pilots(&self) -> usize {
        self.grid.num_pilots()
    }

    /// `B = E(d) C`.
    pub fn distorted_dft(&self, d: &PhaseDistortion) -> CMatrix {
        let e = phase_error_matrix(d, &self.grid);
        let ones = vec![C64::new(1.0, 0.0); self.num_paths()];
        self.dft.scale_rows_cols(&e, &ones)
    }

    // U^H x for split input
    fn project(&self, xr: &[f64], xi: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
        match self.num_paths() {
            4 => project_fixed::<4>(&self.uh_re, &self.uh_im, xr, xi, out_re, out_im),
            8 => project_fixed::<8>(&self.uh_re, &self.uh_im, xr, xi, out_re, out_im),
            16 => project_fixed::<16>(&self.uh_re, &self.uh_im, xr, xi, out_re, out_im),
            l => {
                out_re.fill(0.0);
                out_im.fill(0.0);
                for (m, (ar, ai)) in self.uh_re.chunks_exact(l).zip(self.uh_im.chunks_exact(l)).enumerate() {
                    let (yr, yi) = (xr[m], xi[m]);
                    for (((br, bi), a), b) in out_re.iter_mut().zip(out_im.iter_mut()).zip(ar).zip(ai) {
                        *br += a * yr - b * yi;
                        *bi += a * yi + b * yr;
                    }
                }
            }
        }
    }

    fn project_complex(&self, x: &[C64]) -> Vec<C64> {
        let xr: Vec<f64> = x.iter().map(|z| z.re).collect();
        let xi: Vec<f64> = x.iter().map(|z| z.im).collect();
        let mut br = vec![0.0; self.num_paths()];
        let mut bi = vec![0.0; self.num_paths()];
        self.project(&xr, &xi, &mut br, &mut bi);
        br.iter().zip(&bi).map(|(&r, &i)| C64::new(r, i)).collect()
    }

    // exp(-j slope (q_m - centroid)) into split planes
    fn centered_phasors(&self, slope: f64, pr: &mut [f64], pi: &mut [f64]) {
        let unit = C64::from_polar(1.0, -slope);
        let mut phasor = C64::from_polar(1.0, -slope * self.centered[0]);
        for m in 0..pr.len() {
            if m > 0 {
                let gap = self.gaps[m - 1];
                phasor *= if gap == 1 { unit } else { C64::from_polar(1.0, -slope * gap as f64) };
            }
            pr[m] = phasor.re;
            pi[m] = phasor.im;
        }
    }
}

fn project_fixed<const L: usize>(uh_re: &[f64], uh_im: &[f64], xr: &[f64], xi: &[f64], out_re: &mut [f64], out_im: &mut [f64]) {
    let mut br = [0.0_f64; L];
    let mut bi = [0.0_f64; L];
    for (((ar, ai), &yr), &yi) in uh_re.chunks_exact(L).zip(uh_im.chunks_exact(L)).zip(xr).zip(xi) {
        for k in 0..L {
            br[k] += ar[k] * yr - ai[k] * yi;
            bi[k] += ar[k] * yi + ai[k] * yr;
        }
    }
    out_re.copy_from_slice(&br);
    out_im.copy_from_slice(&bi);
}

/// Predicted state plus everything about `Sigma_0` that does not depend on
/// the observation or the distortion.
#[derive(Debug, Clone)]
pub struct Prediction {
    state: KalmanState,
    basis: Arc<PilotBasis>,
    noise_var: f64,
    n_chol: Cholesky,
    // T h, N^{-1} T h, (T h)^H N^{-1} T h
    t_mean: Vec<C64>,
    w: Vec<C64>,
    mean_energy: f64,
    dft_mean: Vec<C64>,
    // diag(T^H N^{-1} T)
    gain_diag: Vec<f64>,
    ln_det_sigma: f64,
}

impl Prediction {
    pub fn new(state: KalmanState, basis: Arc<PilotBasis>, noise_var: f64) -> Result<Self> {
        state.expect(StateKind::Predicted)?;
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(EstimatorError::NoiseVariance(noise_var));
        }
        let l = basis.num_paths();
        if state.mean.len() != l || state.cov_diag.len() != l {
            return Err(EstimatorError::Dimension { what: "prediction", expected: l, got: state.mean.len() });
        }
        let t = &basis.tri;
        let p = &state.cov_diag;
        let n_mat = CMatrix::from_fn(l, l, |i, j| {
            let mut s: C64 = (0..l).map(|k| t[(i, k)] * p[k] * t[(j, k)].conj()).sum();
            if i == j {
                s += noise_var;
            }
            s
        });
        let n_chol = Cholesky::factor(&n_mat)?;
        let t_mean = t.mul_vec(&state.mean)?;
        let w = n_chol.solve(&t_mean)?;
        let mean_energy = t_mean.iter().zip(&w).map(|(a, b)| (a.conj() * b).re).sum();
        let dft_mean = basis.dft.mul_vec(&state.mean)?;
        let gain_diag = (0..l)
            .map(|k| {
                let col: Vec<C64> = (0..l).map(|i| t[(i, k)]).collect();
                n_chol.inv_quad(&col)
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let q = basis.num_pilots();
        let ln_det_sigma = n_chol.ln_det() + (q - l) as f64 * noise_var.ln();
        Ok(Self { state, basis, noise_var, n_chol, t_mean, w, mean_energy, dft_mean, gain_diag, ln_det_sigma })
    }

    pub fn state(&self) -> &KalmanState {
        &self.state
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn basis(&self) -> &Arc<PilotBasis> {
        &self.basis
    }

    /// `ln det Sigma`; identical for every distortion.
    pub fn ln_det_sigma(&self) -> f64 {
        self.ln_det_sigma
    }

    /// Structured covariance of the residual under distortion `d`.
    pub fn covariance(&self, d: &PhaseDistortion) -> ResidualCovariance {
        ResidualCovariance {
            basis: Arc::clone(&self.basis),
            rotation: phase_error_matrix(d, &self.basis.grid),
            n_chol: self.n_chol.clone(),
            noise_var: self.noise_var,
            cov_diag: self.state.cov_diag.clone(),
        }
    }

    /// `eps = h_obs - E(d) C h_{k|k-1}`.
    pub fn residual(&self, obs: &CsiObservation, d: &PhaseDistortion) -> Result<Vec<C64>> {
        self.check_obs(obs)?;
        let e = phase_error_matrix(d, &self.basis.grid);
        Ok(obs.values.iter().zip(&e).zip(&self.dft_mean).map(|((y, e), m)| y - e * m).collect())
    }

    fn check_obs(&self, obs: &CsiObservation) -> Result<()> {
        if obs.len() != self.basis.num_pilots() {
            return Err(EstimatorError::Dimension { what: "observation", expected: self.basis.num_pilots(), got: obs.len() });
        }
        Ok(())
    }

    /// Fast evaluator of the phase objective for one observation.
    pub fn objective<'a>(&'a self, obs: &'a CsiObservation, form: Objective, include_log_det: bool) -> Result<PhaseObjective<'a>> {
        self.check_obs(obs)?;
        let q = obs.len();
        Ok(PhaseObjective {
            pred: self,
            energy: norm_sqr(&obs.values),
            obs_re: obs.values.iter().map(|z| z.re).collect(),
            obs_im: obs.values.iter().map(|z| z.im).collect(),
            pr: vec![0.0; q],
            pi: vec![0.0; q],
            form,
            log_det: if include_log_det { self.ln_det_sigma } else { 0.0 },
            yr: vec![0.0; q],
            yi: vec![0.0; q],
            br: vec![0.0; self.basis.num_paths()],
            bi: vec![0.0; self.basis.num_paths()],
            b: vec![C64::new(0.0, 0.0); self.basis.num_paths()],
        })
    }
}

/// Objective restricted to one slope: `f(c) = base - 2 Re(exp(j c) z)` where
/// `c = offset + slope * centroid` is the offset measured at the pilot
/// centroid.
#[derive(Debug, Clone, Copy)]
struct SlopeTerms {
    base: f64,
    z: C64,
}

impl SlopeTerms {
    fn at(&self, centered_offset: f64) -> f64 {
        self.base - 2.0 * (C64::from_polar(1.0, centered_offset) * self.z).re
    }
}

pub struct PhaseObjective<'a> {
    pred: &'a Prediction,
    energy: f64,
    obs_re: Vec<f64>,
    obs_im: Vec<f64>,
    pr: Vec<f64>,
    pi: Vec<f64>,
    form: Objective,
    log_det: f64,
    yr: Vec<f64>,
    yi: Vec<f64>,
    br: Vec<f64>,
    bi: Vec<f64>,
    b: Vec<C64>,
}

impl PhaseObjective<'_> {
    fn terms(&mut self, slope: f64) -> SlopeTerms {
        let mut pr = std::mem::take(&mut self.pr);
        let mut pi = std::mem::take(&mut self.pi);
        self.pred.basis.centered_phasors(slope, &mut pr, &mut pi);
        let t = self.terms_with(&pr, &pi);
        self.pr = pr;
        self.pi = pi;
        t
    }

    // same as `terms` with the centered phasors supplied
    fn terms_with(&mut self, pr: &[f64], pi: &[f64]) -> SlopeTerms {
        let basis = &self.pred.basis;
        for m in 0..pr.len() {
            let (a, b) = (self.obs_re[m], self.obs_im[m]);
            self.yr[m] = a * pr[m] - b * pi[m];
            self.yi[m] = a * pi[m] + b * pr[m];
        }
        basis.project(&self.yr, &self.yi, &mut self.br, &mut self.bi);
        for ((b, &r), &i) in self.b.iter_mut().zip(&self.br).zip(&self.bi) {
            *b = C64::new(r, i);
        }
        let b_energy = norm_sqr(&self.b);
        let out_of_range = (self.energy - b_energy).max(0.0) / self.pred.noise_var;
        let (constant, partner) = match self.form {
            Objective::Whitened => (self.pred.mean_energy, &self.pred.w),
            Objective::Direct => (0.0, &self.pred.t_mean),
        };
        let z = self.b.iter().zip(partner).map(|(b, w)| b.conj() * w).sum();
        self.pred.n_chol.forward(&mut self.b);
        let in_range = norm_sqr(&self.b);
        SlopeTerms { base: out_of_range + in_range + constant + self.log_det, z }
    }

    pub fn evaluate(&mut self, d: &PhaseDistortion) -> f64 {
        let c = d.offset() + d.slope() * self.pred.basis.centroid;
        self.terms(d.slope()).at(c)
    }
}

/// Result of the phase search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate {
    pub distortion: PhaseDistortion,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    value: f64,
    slope: f64,
    offset: f64,
}

impl Candidate {
    fn new(value: f64, slope: f64, centered: f64, centroid: f64) -> Self {
        Self { value, slope, offset: wrap_phase(centered - slope * centroid) }
    }

    // strict improvement, ties to smaller |slope| then smaller |offset|
    fn beats(&self, other: &Candidate) -> bool {
        if self.value != other.value {
            return self.value < other.value;
        }
        let (a, b) = (self.slope.abs(), other.slope.abs());
        if a != b {
            return a < b;
        }
        self.offset.abs() < other.offset.abs()
    }
}

// Brent's parabolic/golden minimizer on [a, b] started from x, stopping at
// absolute tolerance `tol` or after `max_iter` iterations.
fn brent_minimize(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, x0: f64, max_iter: usize, tol: f64) -> (f64, f64) {
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let fx0 = f(x0);
    let (mut fx, mut fw, mut fv) = (fx0, fx0, fx0);
    let (mut d, mut e) = (0.0_f64, 0.0_f64);
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * 0.5 + 1e-15 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    (x, fx)
}

/// Phase search for a fixed pilot basis and configuration, with the grid
/// phasors tabulated once.
#[derive(Debug, Clone)]
pub struct PhaseSearcher {
    basis: Arc<PilotBasis>,
    cfg: PhaseSearchConfig,
    table_re: Vec<f64>,
    table_im: Vec<f64>,
}

impl PhaseSearcher {
    pub fn new(basis: Arc<PilotBasis>, cfg: PhaseSearchConfig) -> Result<Self> {
        cfg.validate()?;
        let q = basis.num_pilots();
        let n = cfg.slope_grid_points;
        let mut table_re = vec![0.0; n * q];
        let mut table_im = vec![0.0; n * q];
        for i in 0..n {
            let slope = grid_slope(&cfg, i);
            for m in 0..q {
                let p = C64::from_polar(1.0, -slope * basis.centered[m]);
                table_re[i * q + m] = p.re;
                table_im[i * q + m] = p.im;
            }
        }
        Ok(Self { basis, cfg, table_re, table_im })
    }

    pub fn config(&self) -> &PhaseSearchConfig {
        &self.cfg
    }

    /// Minimizes the configured objective over `[-bound, bound] x [-pi, pi)`:
    /// coarse grid, then refinement around the best grid point.
    ///
    /// The offset is searched relative to the pilot centroid, where offset and
    /// slope decouple; the returned offset is converted back.
    pub fn estimate(&self, obs: &CsiObservation, pred: &Prediction) -> Result<PhaseEstimate> {
        if !Arc::ptr_eq(&self.basis, &pred.basis) && self.basis.grid != pred.basis.grid {
            return Err(EstimatorError::InvalidSearch("prediction uses a different pilot basis".into()));
        }
        search(obs, pred, &self.cfg, Some((&self.table_re, &self.table_im)))
    }
}

fn grid_slope(cfg: &PhaseSearchConfig, i: usize) -> f64 {
    let bound = cfg.slope_search_bound;
    -bound + i as f64 * (2.0 * bound / (cfg.slope_grid_points - 1) as f64)
}

/// One-off phase search; see [`PhaseSearcher::estimate`].
pub fn estimate_phase(obs: &CsiObservation, pred: &Prediction, cfg: &PhaseSearchConfig) -> Result<PhaseEstimate> {
    cfg.validate()?;
    search(obs, pred, cfg, None)
}

fn search(obs: &CsiObservation, pred: &Prediction, cfg: &PhaseSearchConfig, table: Option<(&[f64], &[f64])>) -> Result<PhaseEstimate> {
    let mut objective = pred.objective(obs, cfg.objective, cfg.include_log_det)?;
    let centroid = pred.basis.centroid;
    let bound = cfg.slope_search_bound;
    let slope_cell = 2.0 * bound / (cfg.slope_grid_points - 1) as f64;
    let offset_cell = 2.0 * PI / cfg.offset_grid_points as f64;
    let n_off = cfg.offset_grid_points as i64;
    let grid_offset = |j: i64| -PI + j.rem_euclid(n_off) as f64 * offset_cell;

    let best_on_slope = |terms: &SlopeTerms, slope: f64| -> Candidate {
        if terms.z.norm() == 0.0 {
            // offset does not enter the objective
            Candidate::new(terms.base, slope, slope * centroid, centroid)
        } else {
            let target = -terms.z.arg();
            let j = ((target + PI) / offset_cell).round() as i64;
            (j - 1..=j + 1)
                .map(|jj| {
                    let c = grid_offset(jj);
                    Candidate::new(terms.at(c), slope, c, centroid)
                })
                .reduce(|a, b| if b.beats(&a) { b } else { a })
                .expect("three candidates")
        }
    };

    let mut best: Option<Candidate> = None;
    let q = obs.len();
    for i in 0..cfg.slope_grid_points {
        let slope = grid_slope(cfg, i);
        let terms = match table {
            Some((re, im)) => objective.terms_with(&re[i * q..(i + 1) * q], &im[i * q..(i + 1) * q]),
            None => objective.terms(slope),
        };
        let cand = best_on_slope(&terms, slope);
        if best.as_ref().is_none_or(|b| cand.beats(b)) {
            best = Some(cand);
        }
    }
    let grid_best = best.expect("grid has points");

    // For a fixed slope the optimal centered offset is -arg z, so refinement
    // is one-dimensional in the slope on the profiled objective.
    // The reported offset moves by `centroid` per unit of slope error.
    let slope_tol = cfg.refine_tolerance / (1.0 + centroid.abs());
    let lo = (grid_best.slope - slope_cell).max(-bound);
    let hi = (grid_best.slope + slope_cell).min(bound);
    let (slope, _) = brent_minimize(
        |s| {
            let t = objective.terms(s);
            t.base - 2.0 * t.z.norm()
        },
        lo,
        hi,
        grid_best.slope,
        cfg.refine_iterations,
        slope_tol,
    );
    let terms = objective.terms(slope);
    let centered = if terms.z.norm() == 0.0 { slope * centroid } else { -terms.z.arg() };
    let refined = Candidate::new(terms.at(centered), slope, centered, centroid);
    let chosen = if refined.beats(&grid_best) { refined } else { grid_best };
    Ok(PhaseEstimate { distortion: PhaseDistortion::new(chosen.offset, chosen.slope), objective: chosen.value })
}

/// `Sigma = E C P C^H E^H + sigma_w^2 I`, kept in factored form.
#[derive(Debug, Clone)]
pub struct ResidualCovariance {
    basis: Arc<PilotBasis>,
    rotation: Vec<C64>,
    n_chol: Cholesky,
    noise_var: f64,
    cov_diag: Vec<f64>,
}

impl ResidualCovariance {
    /// `U^H E^H v`, the component of the de-rotated vector inside the span of
    /// `C`.
    fn range_coeffs(&self, v: &[C64]) -> (Vec<C64>, f64) {
        let x: Vec<C64> = v.iter().zip(&self.rotation).map(|(a, e)| e.conj() * a).collect();
        (self.basis.project_complex(&x), norm_sqr(&x))
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn to_dense(&self) -> HermitianPsdMatrix {
        let q = self.rotation.len();
        let l = self.cov_diag.len();
        let c = &self.basis.dft;
        let mut m = CMatrix::from_fn(q, q, |i, j| {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..l {
                s += c[(i, k)] * self.cov_diag[k] * c[(j, k)].conj();
            }
            self.rotation[i] * s * self.rotation[j].conj()
        });
        for i in 0..q {
            m[(i, i)] = C64::new(m[(i, i)].re + self.noise_var, 0.0);
        }
        HermitianPsdMatrix::new(m).expect("hermitian by construction")
    }
}

impl InverseQuadForm for ResidualCovariance {
    fn dim(&self) -> usize {
        self.rotation.len()
    }

    fn inv_quad(&self, v: &[C64]) -> std::result::Result<f64, NumericsError> {
        if v.len() != self.rotation.len() {
            return Err(NumericsError::DimensionMismatch { expected: self.rotation.len(), got: v.len() });
        }
        let (b, energy) = self.range_coeffs(v);
        let out_of_range = (energy - norm_sqr(&b)).max(0.0) / self.noise_var;
        Ok(out_of_range + self.n_chol.inv_quad(&b)?)
    }
}

/// Everything the detector needs from one observation against one
/// prediction.
#[derive(Debug, Clone)]
pub struct Innovation {
    pub distortion: PhaseDistortion,
    pub objective: f64,
    pub residual: Vec<C64>,
    pub covariance: ResidualCovariance,
    pub time_index: u64,
}

/// Evaluates `obs` against `pred` at a given distortion.
pub fn innovation_at(pred: &Prediction, obs: &CsiObservation, d: PhaseDistortion, objective: f64) -> Result<Innovation> {
    let residual = pred.residual(obs, &d)?;
    Ok(Innovation { distortion: d, objective, residual, covariance: pred.covariance(&d), time_index: obs.time_index })
}

/// Measurement update through the thin-QR factorization; agrees with the
/// dense `gain` / `update` pair.
pub fn structured_update(pred: &Prediction, innov: &Innovation) -> Result<KalmanState> {
    let (a, _) = innov.covariance.range_coeffs(&innov.residual);
    let x = pred.n_chol.solve(&a)?;
    let t = &pred.basis.tri;
    let l = pred.basis.num_paths();
    let p = &pred.state.cov_diag;
    let mean = (0..l)
        .map(|k| {
            let th_x: C64 = (0..l).map(|i| t[(i, k)].conj() * x[i]).sum();
            pred.state.mean[k] + th_x * p[k]
        })
        .collect();
    let cov_diag = clamp_covariance(p.iter().zip(&pred.gain_diag).map(|(p, g)| p - p * p * g).collect())?;
    Ok(KalmanState { mean, cov_diag, kind: StateKind::Updated, time_index: pred.state.time_index })
}

fn clamp_covariance(cov: Vec<f64>) -> Result<Vec<f64>> {
    cov.into_iter()
        .enumerate()
        .map(
            |(index, value)| {
                if value < -1e-12 || value.is_nan() {
                    Err(EstimatorError::NegativeCovariance { index, value })
                } else {
                    Ok(value.max(0.0))
                }
            },
        )
        .collect()
}

/// Output of one full filter step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: KalmanState,
    pub distortion: PhaseDistortion,
    pub residual: Vec<C64>,
    pub covariance: ResidualCovariance,
}

/// Sequential Kalman filter tracking one link.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    profile: ChannelProfile,
    basis: Arc<PilotBasis>,
    noise_var: f64,
    searcher: PhaseSearcher,
    state: KalmanState,
    updates: u64,
}

impl KalmanFilter {
    pub fn new(profile: ChannelProfile, basis: Arc<PilotBasis>, noise_var: f64, search: PhaseSearchConfig) -> Result<Self> {
        let searcher = PhaseSearcher::new(Arc::clone(&basis), search)?;
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(EstimatorError::NoiseVariance(noise_var));
        }
        if profile.num_paths() != basis.num_paths() {
            return Err(EstimatorError::Dimension { what: "filter", expected: basis.num_paths(), got: profile.num_paths() });
        }
        let state = init_state(&profile);
        Ok(Self { profile, basis, noise_var, searcher, state, updates: 0 })
    }

    /// Replaces the current (updated) state, e.g. to start from a known channel.
    pub fn with_state(mut self, state: KalmanState) -> Result<Self> {
        state.expect(StateKind::Updated)?;
        self.state = state;
        Ok(self)
    }

    pub fn state(&self) -> &KalmanState {
        &self.state
    }

    pub fn basis(&self) -> &Arc<PilotBasis> {
        &self.basis
    }

    pub fn search(&self) -> &PhaseSearchConfig {
        self.searcher.config()
    }

    /// Number of measurement updates applied so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn predict(&self) -> Result<Prediction> {
        Prediction::new(predict(&self.state, &self.profile)?, Arc::clone(&self.basis), self.noise_var)
    }

    /// Phase search, residual and covariance for `obs`; the filter state is
    /// untouched.
    pub fn innovate(&self, pred: &Prediction, obs: &CsiObservation) -> Result<Innovation> {
        if obs.time_index != pred.state.time_index {
            return Err(EstimatorError::TimeIndex { state: self.state.time_index, got: obs.time_index });
        }
        let est = self.searcher.estimate(obs, pred)?;
        innovation_at(pred, obs, est.distortion, est.objective)
    }

    /// As [`Self::innovate`] with the distortion supplied instead of searched.
    pub fn innovate_known_phase(&self, pred: &Prediction, obs: &CsiObservation, d: PhaseDistortion) -> Result<Innovation> {
        if obs.time_index != pred.state.time_index {
            return Err(EstimatorError::TimeIndex { state: self.state.time_index, got: obs.time_index });
        }
        let cfg = self.searcher.config();
        let objective = pred.objective(obs, cfg.objective, cfg.include_log_det)?.evaluate(&d);
        innovation_at(pred, obs, d, objective)
    }

    pub fn update(&mut self, pred: &Prediction, innov: &Innovation) -> Result<&KalmanState> {
        if innov.time_index != pred.state.time_index || pred.state.time_index != self.state.time_index + 1 {
            return Err(EstimatorError::TimeIndex { state: self.state.time_index, got: innov.time_index });
        }
        self.state = structured_update(pred, innov)?;
        self.updates += 1;
        Ok(&self.state)
    }

    /// Advances without a measurement: the prediction becomes the new state.
    pub fn coast(&mut self, pred: &Prediction) -> Result<&KalmanState> {
        if pred.state.time_index != self.state.time_index + 1 {
            return Err(EstimatorError::TimeIndex { state: self.state.time_index, got: pred.state.time_index });
        }
        self.state = KalmanState { kind: StateKind::Updated, ..pred.state.clone() };
        Ok(&self.state)
    }

    pub fn step(&mut self, obs: &CsiObservation) -> Result<StepOutput> {
        let pred = self.predict()?;
        let innov = self.innovate(&pred, obs)?;
        self.finish_step(pred, innov)
    }

    pub fn step_known_phase(&mut self, obs: &CsiObservation, d: PhaseDistortion) -> Result<StepOutput> {
        let pred = self.predict()?;
        let innov = self.innovate_known_phase(&pred, obs, d)?;
        self.finish_step(pred, innov)
    }

    fn finish_step(&mut self, pred: Prediction, innov: Innovation) -> Result<StepOutput> {
        self.update(&pred, &innov)?;
        Ok(StepOutput { state: self.state.clone(), distortion: innov.distortion, residual: innov.residual, covariance: innov.covariance })
    }
}

/// One complete step from an updated state, as a free function.
pub fn filter_step(
    state: &KalmanState,
    obs: &CsiObservation,
    profile: &ChannelProfile,
    basis: &Arc<PilotBasis>,
    noise_var: f64,
    cfg: &PhaseSearchConfig,
) -> Result<StepOutput> {
    let mut filter = KalmanFilter::new(profile.clone(), Arc::clone(basis), noise_var, cfg.clone())?.with_state(state.clone())?;
    filter.step(obs)
}

fn dense_sigma(pred: &KalmanState, b: &CMatrix, noise_var: f64) -> Result<HermitianPsdMatrix> {
    let q = b.rows();
    let l = b.cols();
    if pred.cov_diag.len() != l {
        return Err(EstimatorError::Dimension { what: "covariance", expected: l, got: pred.cov_diag.len() });
    }
    let mut m = CMatrix::from_fn(q, q, |i, j| (0..l).map(|k| b[(i, k)] * pred.cov_diag[k] * b[(j, k)].conj()).sum());
    for i in 0..q {
        m[(i, i)] = C64::new(m[(i, i)].re + noise_var, 0.0);
    }
    Ok(HermitianPsdMatrix::new(m)?)
}

fn check_dense_inputs(obs: &CsiObservation, pred: &KalmanState, c: &CMatrix) -> Result<()> {
    pred.expect(StateKind::Predicted)?;
    if obs.len() != c.rows() {
        return Err(EstimatorError::Dimension { what: "observation", expected: c.rows(), got: obs.len() });
    }
    if pred.mean.len() != c.cols() {
        return Err(EstimatorError::Dimension { what: "state", expected: c.cols(), got: pred.mean.len() });
    }
    Ok(())
}

fn distort(d: &PhaseDistortion, grid: &PilotGrid, c: &CMatrix) -> CMatrix {
    let e = phase_error_matrix(d, grid);
    c.scale_rows_cols(&e, &vec![C64::new(1.0, 0.0); c.cols()])
}

/// `eps(d)^H Sigma(d)^{-1} eps(d)` with `Sigma(d)` built and factored in full.
pub fn negative_log_likelihood(
    d: &PhaseDistortion,
    obs: &CsiObservation,
    pred: &KalmanState,
    grid: &PilotGrid,
    c: &CMatrix,
    noise_var: f64,
) -> Result<f64> {
    check_dense_inputs(obs, pred, c)?;
    let b = distort(d, grid, c);
    let sigma = dense_sigma(pred, &b, noise_var)?;
    let bm = b.mul_vec(&pred.mean)?;
    let eps: Vec<C64> = obs.values.iter().zip(&bm).map(|(y, m)| y - m).collect();
    Ok(sigma.inv_quad(&eps)?)
}

/// The direct form `h^H Sigma^{-1} h - 2 Re[h^H B h_pred]`, in full `Q x Q` form.
pub fn direct_objective(
    d: &PhaseDistortion,
    obs: &CsiObservation,
    pred: &KalmanState,
    grid: &PilotGrid,
    c: &CMatrix,
    noise_var: f64,
) -> Result<f64> {
    check_dense_inputs(obs, pred, c)?;
    let b = distort(d, grid, c);
    let sigma = dense_sigma(pred, &b, noise_var)?;
    let bm = b.mul_vec(&pred.mean)?;
    let cross: C64 = obs.values.iter().zip(&bm).map(|(y, m)| y.conj() * m).sum();
    Ok(sigma.inv_quad(&obs.values)? - 2.0 * cross.re)
}

/// `K = P B^H (B P B^H + sigma_w^2 I)^{-1}` via Hermitian solves of
/// `Sigma K^H = B P`.
pub fn gain(pred: &KalmanState, b: &CMatrix, noise_var: f64) -> Result<CMatrix> {
    pred.expect(StateKind::Predicted)?;
    let sigma = dense_sigma(pred, b, noise_var)?;
    let chol = sigma.cholesky()?;
    let (q, l) = (b.rows(), b.cols());
    let mut k = CMatrix::zeros(l, q);
    for col in 0..l {
        let rhs: Vec<C64> = (0..q).map(|i| b[(i, col)] * pred.cov_diag[col]).collect();
        let x = chol.solve(&rhs)?;
        for (i, xi) in x.iter().enumerate() {
            k[(col, i)] = xi.conj();
        }
    }
    Ok(k)
}

/// Measurement update with an explicit gain; keeps the diagonal of
/// `(I_L - K B) P`.
pub fn update(pred: &KalmanState, obs: &CsiObservation, b: &CMatrix, k: &CMatrix) -> Result<KalmanState> {
    pred.expect(StateKind::Predicted)?;
    let bm = b.mul_vec(&pred.mean)?;
    let innov: Vec<C64> = obs.values.iter().zip(&bm).map(|(y, m)| y - m).collect();
    let correction = k.mul_vec(&innov)?;
    let mean = pred.mean.iter().zip(&correction).map(|(m, c)| m + c).collect();
    let kb = k.matmul(b)?;
    let l = pred.mean.len();
    let cov = (0..l).map(|i| ((C64::new(1.0, 0.0) - kb[(i, i)]) * pred.cov_diag[i]).re).collect();
    Ok(KalmanState { mean, cov_diag: clamp_covariance(cov)?, kind: StateKind::Updated, time_index: pred.time_index })
}

/// `min_phi |exp(j phi) estimate - truth|^2`: the estimation error once the
/// unobservable common phase is removed.
pub fn phase_aligned_sq_error(estimate: &[C64], truth: &[C64]) -> f64 {
    let cross: C64 = estimate.iter().zip(truth).map(|(e, t)| e.conj() * t).sum();
    (norm_sqr(estimate) + norm_sqr(truth) - 2.0 * cross.norm()).max(0.0)
}
