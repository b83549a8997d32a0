use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EveChannel, HarnessError, Protocol, ScenarioConfig};
use crate::channel::{ChannelProfile, TimeChannel};
use crate::detector::{
    calibrate_empirical_threshold, decide, kalman_dof, magnitude_diff_statistic, test_statistic, threshold, DetectionRecord, DetectorKind,
    Hypothesis, Transmitter,
};
use crate::estimator::{KalmanFilter, PilotBasis};
use crate::observation::{draw_phase_distortion, snr_to_noise_var, CsiObservation, Observer, PilotGrid};

type Result<T> = std::result::Result<T, HarnessError>;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master`; see the module documentation.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    splitmix64(master.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Counts over the test half of one or more trials.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub alice_total: u64,
    pub false_alarms: u64,
    pub eve_total: u64,
    pub detections: u64,
}

impl DetectionCounts {
    pub fn record(&mut self, r: &DetectionRecord) {
        match r.ground_truth {
            Hypothesis::H0 => {
                self.alice_total += 1;
                self.false_alarms += u64::from(r.decision == Hypothesis::H1);
            }
            Hypothesis::H1 => {
                self.eve_total += 1;
                self.detections += u64::from(r.decision == Hypothesis::H1);
            }
        }
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            alice_total: self.alice_total + o.alice_total,
            false_alarms: self.false_alarms + o.false_alarms,
            eve_total: self.eve_total + o.eve_total,
            detections: self.detections + o.detections,
        }
    }

    pub fn misses(&self) -> u64 {
        self.eve_total - self.detections
    }

    pub fn detection_rate(&self) -> f64 {
        ratio(self.detections, self.eve_total)
    }

    pub fn false_alarm_rate(&self) -> f64 {
        ratio(self.false_alarms, self.alice_total)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Records of one trial, per detector, in step order (Alice before Eve
/// within a step).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub kalman: Vec<DetectionRecord>,
    pub magnitude: Vec<DetectionRecord>,
    pub magnitude_threshold: Option<f64>,
    /// Measurement updates applied by the Alice-tracking filter.
    pub filter_updates: u64,
    pub burn_in: u64,
}

impl TrialResult {
    pub fn records(&self, kind: DetectorKind) -> &[DetectionRecord] {
        match kind {
            DetectorKind::Kalman => &self.kalman,
            DetectorKind::MagnitudeDiff => &self.magnitude,
        }
    }

    /// Records after the burn-in.
    pub fn test_records(&self, kind: DetectorKind) -> impl Iterator<Item = &DetectionRecord> + '_ {
        let burn_in = self.burn_in;
        self.records(kind).iter().filter(move |r| r.time_index > burn_in)
    }

    pub fn counts(&self, kind: DetectorKind) -> DetectionCounts {
        let mut c = DetectionCounts::default();
        self.test_records(kind).for_each(|r| c.record(r));
        c
    }
}

/// A validated configuration with its derived model objects.
#[derive(Debug, Clone)]
pub struct Scenario {
    cfg: ScenarioConfig,
    profile: ChannelProfile,
    basis: Arc<PilotBasis>,
    observer: Observer,
    noise_var: f64,
    kalman_threshold: f64,
}

impl Scenario {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let profile = ChannelProfile::new(cfg.num_paths, cfg.normalized_doppler, cfg.pdp_decay)?;
        let grid = PilotGrid::parse(&cfg.pilot_spec, cfg.dft_size)?;
        let basis = Arc::new(PilotBasis::new(grid.clone(), cfg.num_paths)?);
        let kalman_threshold = threshold(cfg.nominal_false_alarm, kalman_dof(grid.num_pilots()))?;
        Ok(Self {
            observer: Observer::new(grid, cfg.num_paths),
            cfg: cfg.clone(),
            profile,
            basis,
            noise_var: snr_to_noise_var(cfg.snr_db),
            kalman_threshold,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn profile(&self) -> &ChannelProfile {
        &self.profile
    }

    pub fn basis(&self) -> &Arc<PilotBasis> {
        &self.basis
    }

    pub fn observer(&self) -> &Observer {
        &self.observer
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn kalman_threshold(&self) -> f64 {
        self.kalman_threshold
    }

    pub fn new_filter(&self) -> Result<KalmanFilter> {
        Ok(KalmanFilter::new(self.profile.clone(), Arc::clone(&self.basis), self.noise_var, self.cfg.search.clone())?)
    }

    fn uses(&self, kind: DetectorKind) -> bool {
        self.cfg.detectors.contains(&kind)
    }

    fn observe(&self, h: &TimeChannel, rng: &mut ChaCha8Rng) -> Result<CsiObservation> {
        let d = draw_phase_distortion(rng, self.cfg.max_slope);
        Ok(self.observer.observe(h, &d, self.noise_var, rng)?)
    }

    /// Runs trial `index` of this scenario.
    pub fn run_trial(&self, index: usize) -> Result<TrialResult> {
        let seed = trial_seed(self.cfg.seed, index);
        self.run_seeded(seed).map_err(|(step, e)| HarnessError::Trial { trial: index, seed, step, source: Box::new(e) })
    }

    fn run_seeded(&self, seed: u64) -> std::result::Result<TrialResult, (u64, HarnessError)> {
        match self.cfg.protocol {
            Protocol::Parallel => self.run_parallel(seed),
            Protocol::Schedule { attack_prob } => self.run_schedule(seed, attack_prob),
        }
    }

    fn next_eve(&self, eve: &TimeChannel, alice: &TimeChannel, rng: &mut ChaCha8Rng) -> TimeChannel {
        match self.cfg.eve {
            EveChannel::Independent => eve.step(&self.profile, rng),
            EveChannel::CloneAlice => alice.clone(),
        }
    }

    fn run_parallel(&self, seed: u64) -> std::result::Result<TrialResult, (u64, HarnessError)> {
        let at = |k: u64| move |e: HarnessError| (k, e);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut alice = TimeChannel::init(&self.profile, &mut rng);
        let mut eve = match self.cfg.eve {
            EveChannel::Independent => TimeChannel::init(&self.profile, &mut rng),
            EveChannel::CloneAlice => alice.clone(),
        };
        let mut filter = self.new_filter().map_err(at(0))?;
        let n = self.cfg.num_steps;
        let mut kalman = Vec::with_capacity(if self.uses(DetectorKind::Kalman) { 2 * n } else { 0 });
        let mut mag_stats: Vec<(u64, f64, f64)> = Vec::new();
        let mut prev_alice: Option<CsiObservation> = None;

        for k in 1..=n as u64 {
            alice = alice.step(&self.profile, &mut rng);
            eve = self.next_eve(&eve, &alice, &mut rng);
            let obs_a = self.observe(&alice, &mut rng).map_err(at(k))?;
            let obs_e = self.observe(&eve, &mut rng).map_err(at(k))?;

            if self.uses(DetectorKind::Kalman) {
                let mut step = || -> Result<(f64, f64)> {
                    let pred = filter.predict()?;
                    let ia = filter.innovate(&pred, &obs_a)?;
                    let ie = filter.innovate(&pred, &obs_e)?;
                    let la = test_statistic(&ia.residual, &ia.covariance)?;
                    let le = test_statistic(&ie.residual, &ie.covariance)?;
                    filter.update(&pred, &ia)?;
                    Ok((la, le))
                };
                let (la, le) = step().map_err(at(k))?;
                let t = self.kalman_threshold;
                kalman.push(DetectionRecord::new(la, t, Transmitter::Alice, DetectorKind::Kalman, k));
                kalman.push(DetectionRecord::new(le, t, Transmitter::Eve, DetectorKind::Kalman, k));
            }

            if self.uses(DetectorKind::MagnitudeDiff) {
                if let Some(prev) = &prev_alice {
                    let sa = magnitude_diff_statistic(&obs_a.values, &prev.values).map_err(|e| (k, e.into()))?;
                    let se = magnitude_diff_statistic(&obs_e.values, &prev.values).map_err(|e| (k, e.into()))?;
                    mag_stats.push((k, sa, se));
                }
                prev_alice = Some(obs_a);
            }
        }

        let (magnitude, magnitude_threshold) = if self.uses(DetectorKind::MagnitudeDiff) {
            let calib: Vec<f64> = mag_stats.iter().filter(|s| s.0 <= self.cfg.burn_in as u64).map(|s| s.1).collect();
            let t = calibrate_empirical_threshold(&calib, self.cfg.nominal_false_alarm).map_err(|e| (n as u64, e.into()))?;
            let records = mag_stats
                .iter()
                .flat_map(|&(k, sa, se)| {
                    [
                        DetectionRecord::new(sa, t, Transmitter::Alice, DetectorKind::MagnitudeDiff, k),
                        DetectionRecord::new(se, t, Transmitter::Eve, DetectorKind::MagnitudeDiff, k),
                    ]
                })
                .collect();
            (records, Some(t))
        } else {
            (Vec::new(), None)
        };

        Ok(TrialResult { kalman, magnitude, magnitude_threshold, filter_updates: filter.updates(), burn_in: self.cfg.burn_in as u64 })
    }

    fn run_schedule(&self, seed: u64, attack_prob: f64) -> std::result::Result<TrialResult, (u64, HarnessError)> {
        let at = |k: u64| move |e: HarnessError| (k, e);
        let burn_in = self.cfg.burn_in as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut alice = TimeChannel::init(&self.profile, &mut rng);
        let mut eve = match self.cfg.eve {
            EveChannel::Independent => TimeChannel::init(&self.profile, &mut rng),
            EveChannel::CloneAlice => alice.clone(),
        };
        let mut filter = self.new_filter().map_err(at(0))?;
        let mut kalman = Vec::new();
        let mut magnitude = Vec::new();
        let mut calib = Vec::new();
        let mut mag_threshold = None;
        let mut reference: Option<CsiObservation> = None;

        for k in 1..=self.cfg.num_steps as u64 {
            alice = alice.step(&self.profile, &mut rng);
            eve = self.next_eve(&eve, &alice, &mut rng);
            let attack = k > burn_in && rng.random::<f64>() < attack_prob;
            let (tx, channel) = if attack { (Transmitter::Eve, &eve) } else { (Transmitter::Alice, &alice) };
            let obs = self.observe(channel, &mut rng).map_err(at(k))?;

            if self.uses(DetectorKind::Kalman) {
                let mut step = || -> Result<f64> {
                    let pred = filter.predict()?;
                    let innov = filter.innovate(&pred, &obs)?;
                    let lambda = test_statistic(&innov.residual, &innov.covariance)?;
                    if decide(lambda, self.kalman_threshold) == Hypothesis::H0 {
                        filter.update(&pred, &innov)?;
                    } else {
                        filter.coast(&pred)?;
                    }
                    Ok(lambda)
                };
                let lambda = step().map_err(at(k))?;
                kalman.push(DetectionRecord::new(lambda, self.kalman_threshold, tx, DetectorKind::Kalman, k));
            }

            if self.uses(DetectorKind::MagnitudeDiff) {
                let accepted = match &reference {
                    None => true,
                    Some(prev) => {
                        let s = magnitude_diff_statistic(&obs.values, &prev.values).map_err(|e| (k, e.into()))?;
                        if k <= burn_in {
                            calib.push(s);
                            if k == burn_in {
                                let t = calibrate_empirical_threshold(&calib, self.cfg.nominal_false_alarm).map_err(|e| (k, e.into()))?;
                                mag_threshold = Some(t);
                            }
                            true
                        } else {
                            let t = mag_threshold.expect("calibrated at the end of the burn-in");
                            let r = DetectionRecord::new(s, t, tx, DetectorKind::MagnitudeDiff, k);
                            magnitude.push(r);
                            r.decision == Hypothesis::H0
                        }
                    }
                };
                if accepted {
                    reference = Some(obs);
                }
            }
        }
        Ok(TrialResult { kalman, magnitude, magnitude_threshold: mag_threshold, filter_updates: filter.updates(), burn_in })
    }

    /// Runs trials `0..num_trials` in parallel and folds each result with `f`.
    pub fn map_trials<T: Send>(&self, f: impl Fn(TrialResult) -> T + Sync + Send) -> Result<Vec<T>> {
        (0..self.cfg.num_trials).into_par_iter().map(|i| self.run_trial(i).map(&f)).collect()
    }

    /// Test-half counts per configured detector, summed over all trials.
    pub fn counts(&self) -> Result<Vec<(DetectorKind, DetectionCounts)>> {
        let kinds = self.cfg.detectors.clone();
        let per_trial = self.map_trials(|t| kinds.iter().map(|&k| t.counts(k)).collect::<Vec<_>>())?;
        Ok(kinds
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, per_trial.iter().fold(DetectionCounts::default(), |acc, c| acc.merge(c[i]))))
            .collect())
    }
}

/// One trial with an explicit seed.
pub fn run_trial(cfg: &ScenarioConfig, trial_seed: u64) -> Result<TrialResult> {
    let scenario = Scenario::new(cfg)?;
    scenario.run_seeded(trial_seed).map_err(|(step, e)| HarnessError::Trial { trial: 0, seed: trial_seed, step, source: Box::new(e) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SnrDb,
    NormalizedDoppler,
    FalseAlarm,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SnrDb => "snr_db",
            SweepAxis::NormalizedDoppler => "normalized_doppler",
            SweepAxis::FalseAlarm => "false_alarm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "snr_db" => Some(SweepAxis::SnrDb),
            "normalized_doppler" => Some(SweepAxis::NormalizedDoppler),
            "false_alarm" => Some(SweepAxis::FalseAlarm),
            _ => None,
        }
    }

    fn apply(self, cfg: &mut ScenarioConfig, value: f64) {
        match self {
            SweepAxis::SnrDb => cfg.snr_db = value,
            SweepAxis::NormalizedDoppler => cfg.normalized_doppler = value,
            SweepAxis::FalseAlarm => cfg.nominal_false_alarm = value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub axis_value: f64,
    pub detector: DetectorKind,
    pub detection_rate: f64,
    pub empirical_false_alarm: f64,
    pub num_trials: usize,
    pub num_steps: usize,
    /// Raw counts behind the rates; not part of the CSV schema.
    pub counts: Option<DetectionCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub config_hash: String,
    pub seed: u64,
    /// Creation time in seconds since the epoch; not written to CSV so that
    /// output stays byte-identical across runs.
    pub created_unix: Option<u64>,
}

impl SweepResult {
    pub fn point(&self, axis_value: f64, detector: DetectorKind) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.axis_value == axis_value && p.detector == detector)
    }
}

/// Runs the scenario at every axis value.
pub fn sweep(cfg: &ScenarioConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(HarnessError::Request("sweep needs at least one value".into()));
    }
    if values.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(HarnessError::Request("sweep values must be strictly increasing".into()));
    }
    cfg.validate()?;
    let mut points = Vec::new();
    for &v in values {
        let mut c = cfg.clone();
        axis.apply(&mut c, v);
        let scenario = Scenario::new(&c)?;
        for (detector, counts) in scenario.counts()? {
            points.push(SweepPoint {
                axis_value: v,
                detector,
                detection_rate: counts.detection_rate(),
                empirical_false_alarm: counts.false_alarm_rate(),
                num_trials: c.num_trials,
                num_steps: c.num_steps,
                counts: Some(counts),
            });
        }
    }
    Ok(SweepResult {
        axis,
        points,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_alarm_rate: f64,
    pub detection_rate: f64,
}

/// Empirical ROC from H0 and H1 statistic samples: `num_points` thresholds
/// evenly spaced over the pooled range, plus one below it, reported in
/// increasing false-alarm order.
pub fn roc_curve(h0: &[f64], h1: &[f64], num_points: usize) -> Result<Vec<RocPoint>> {
    if h0.is_empty() || h1.is_empty() {
        return Err(HarnessError::Request("ROC needs non-empty H0 and H1 samples".into()));
    }
    if num_points < 2 {
        return Err(HarnessError::Request("ROC needs at least two thresholds".into()));
    }
    if h0.iter().chain(h1).any(|x| !x.is_finite()) {
        return Err(HarnessError::Request("ROC samples must be finite".into()));
    }
    let mut a = h0.to_vec();
    let mut b = h1.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let lo = a[0].min(b[0]);
    let hi = a[a.len() - 1].max(b[b.len() - 1]);
    let above = |s: &[f64], t: f64| (s.len() - s.partition_point(|&x| x <= t)) as f64 / s.len() as f64;
    let spacing = (hi - lo) / (num_points - 1) as f64;
    let mut thresholds = vec![lo - if spacing > 0.0 { spacing } else { 1.0 }];
    thresholds.extend((0..num_points).map(|i| lo + spacing * i as f64));
    let mut pts: Vec<RocPoint> =
        thresholds.iter().map(|&t| RocPoint { threshold: t, false_alarm_rate: above(&a, t), detection_rate: above(&b, t) }).collect();
    pts.reverse();
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub detector: DetectorKind,
    pub points: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub curves: Vec<RocCurve>,
    pub config_hash: String,
    pub seed: u64,
}

/// ROC of every configured detector over the test halves of all trials.
pub fn roc(cfg: &ScenarioConfig) -> Result<RocResult> {
    let scenario = Scenario::new(cfg)?;
    let kinds = cfg.detectors.clone();
    let per_trial = scenario.map_trials(|t| {
        kinds
            .iter()
            .map(|&k| {
                let (mut h0, mut h1) = (Vec::new(), Vec::new());
                for r in t.test_records(k) {
                    match r.ground_truth {
                        Hypothesis::H0 => h0.push(r.statistic),
                        Hypothesis::H1 => h1.push(r.statistic),
                    }
                }
                (h0, h1)
            })
            .collect::<Vec<_>>()
    })?;
    let mut curves = Vec::new();
    for (i, &k) in kinds.iter().enumerate() {
        let h0: Vec<f64> = per_trial.iter().flat_map(|t| t[i].0.iter().copied()).collect();
        let h1: Vec<f64> = per_trial.iter().flat_map(|t| t[i].1.iter().copied()).collect();
        curves.push(RocCurve { detector: k, points: roc_curve(&h0, &h1, cfg.roc_points)? });
    }
    Ok(RocResult { curves, config_hash: cfg.hash(), seed: cfg.seed })
}
