use std::f64::consts::PI;
use std::sync::Arc;

use phyauth::channel::{ChannelProfile, TimeChannel};
use phyauth::estimator::*;
use phyauth::numerics::{norm_sqr, wrap_phase, CMatrix, InverseQuadForm, C64};
use phyauth::observation::{draw_phase_distortion, snr_to_noise_var, CsiObservation, Observer, PhaseDistortion, PilotGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn predicted(mean: Vec<C64>, cov: Vec<f64>, k: u64) -> KalmanState {
    KalmanState { mean, cov_diag: cov, kind: StateKind::Predicted, time_index: k }
}

fn setup(l: usize, doppler: f64) -> (ChannelProfile, Arc<PilotBasis>, Observer) {
    let profile = ChannelProfile::new(l, doppler, 0.5).unwrap();
    let basis = Arc::new(PilotBasis::new(PilotGrid::ht40(), l).unwrap());
    (profile, basis, Observer::new(PilotGrid::ht40(), l))
}

#[test]
fn predict_examples() {
    let p = ChannelProfile::new(2, 0.0, 0.0).unwrap();
    let s = KalmanState { mean: vec![c(1.0, 2.0), c(0.5, 0.0)], cov_diag: vec![0.3, 0.1], kind: StateKind::Updated, time_index: 4 };
    let pr = predict(&s, &p).unwrap();
    assert_eq!(pr.mean, s.mean);
    assert_eq!(pr.cov_diag, s.cov_diag);
    assert_eq!(pr.time_index, 5);
    assert!(predict(&pr, &p).is_err());

    let fd = 2.404_825_557_695_773 / (2.0 * PI);
    let p0 = ChannelProfile::new(2, fd, 0.0).unwrap();
    let pr = predict(&s, &p0).unwrap();
    assert!(pr.mean.iter().all(|m| m.norm() < 1e-11));
    for (a, b) in pr.cov_diag.iter().zip(p0.pdp()) {
        assert!((a - b).abs() < 1e-12);
    }

    // alpha = 0.9, R = 0.19 against the scalar recursion 0.81 * 1 + 0.19
    let s1 = KalmanState { mean: vec![c(1.0, 0.0)], cov_diag: vec![1.0], kind: StateKind::Updated, time_index: 0 };
    let a = 0.9_f64;
    let oracle = a * a * 1.0 + 0.19;
    let p_var = (a * a) * s1.cov_diag[0] + (1.0 - a * a) * 1.0;
    assert!((p_var - oracle).abs() < 1e-15);
    assert!((oracle - 1.0).abs() < 1e-15);
}

#[test]
fn init_state_is_stationary_prior() {
    let p = ChannelProfile::new(8, 1e-4, 0.5).unwrap();
    let s = init_state(&p);
    assert!(s.mean.iter().all(|m| *m == c(0.0, 0.0)));
    assert!((s.cov_diag.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let pr = predict(&s, &p).unwrap();
    for (a, b) in pr.cov_diag.iter().zip(p.pdp()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn basis_factorizes_dft() {
    let basis = PilotBasis::new(PilotGrid::ht40(), 8).unwrap();
    let q = basis.num_pilots();
    let u = basis.orthonormal_factor();
    let ut = u.matmul(basis.triangular_factor()).unwrap();
    for m in 0..q {
        for l in 0..8 {
            assert!((ut[(m, l)] - basis.dft()[(m, l)]).norm() < 1e-12);
        }
    }
    let gram = u.adjoint().matmul(&u).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - c(want, 0.0)).norm() < 1e-12);
        }
    }
    assert!(PilotBasis::new(PilotGrid::new(8, vec![1, 2]).unwrap(), 3).is_err());
}

fn random_state(rng: &mut impl Rng, l: usize, k: u64) -> KalmanState {
    predicted(
        (0..l).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect(),
        (0..l).map(|_| rng.random::<f64>() * 0.2).collect(),
        k,
    )
}

#[test]
fn log_det_term_does_not_move_the_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let basis = Arc::new(PilotBasis::new(PilotGrid::ht40(), 8).unwrap());
    for _ in 0..5 {
        let st = random_state(&mut rng, 8, 1);
        let obs = CsiObservation { values: (0..114).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>())).collect(), time_index: 1 };
        let pred = Prediction::new(st, Arc::clone(&basis), 0.3).unwrap();
        let plain = estimate_phase(&obs, &pred, &PhaseSearchConfig::default()).unwrap();
        let cfg = PhaseSearchConfig { include_log_det: true, ..PhaseSearchConfig::default() };
        let with_det = estimate_phase(&obs, &pred, &cfg).unwrap();
        let (a, b) = (plain.distortion, with_det.distortion);
        assert!(wrap_phase(a.offset() - b.offset()).abs() < 1e-7 && (a.slope() - b.slope()).abs() < 1e-7, "{a:?} vs {b:?}");
        assert!((with_det.objective - plain.objective - pred.ln_det_sigma()).abs() < 1e-9 * with_det.objective.abs().max(1.0));
    }
}

#[test]
fn structured_objective_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let basis = Arc::new(PilotBasis::new(PilotGrid::ht40(), 8).unwrap());
    for _ in 0..10 {
        let st = random_state(&mut rng, 8, 1);
        let sigma2 = 0.05 + rng.random::<f64>();
        let obs = CsiObservation { values: (0..114).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>())).collect(), time_index: 1 };
        let pred = Prediction::new(st.clone(), Arc::clone(&basis), sigma2).unwrap();
        for _ in 0..5 {
            let d = draw_phase_distortion(&mut rng, 0.2);
            let dense = negative_log_likelihood(&d, &obs, &st, basis.grid(), basis.dft(), sigma2).unwrap();
            let fast = pred.objective(&obs, Objective::Whitened, false).unwrap().evaluate(&d);
            assert!((dense - fast).abs() < 1e-9 * dense.abs().max(1.0), "{dense} vs {fast}");

            let dense_p = direct_objective(&d, &obs, &st, basis.grid(), basis.dft(), sigma2).unwrap();
            let fast_p = pred.objective(&obs, Objective::Direct, false).unwrap().evaluate(&d);
            assert!((dense_p - fast_p).abs() < 1e-9 * dense_p.abs().max(1.0));

            let sigma = pred.covariance(&d).to_dense();
            let ld = sigma.cholesky().unwrap().ln_det();
            assert!((ld - pred.ln_det_sigma()).abs() < 1e-8 * ld.abs().max(1.0));
            let with_det = pred.objective(&obs, Objective::Whitened, true).unwrap().evaluate(&d);
            assert!((with_det - fast - ld).abs() < 1e-8 * with_det.abs().max(1.0));

            let eps = pred.residual(&obs, &d).unwrap();
            let q_dense = sigma.inv_quad(&eps).unwrap();
            let q_fast = pred.covariance(&d).inv_quad(&eps).unwrap();
            assert!((q_dense - q_fast).abs() < 1e-9 * q_dense.max(1.0));
            assert!((q_fast - fast).abs() < 1e-9 * fast.max(1.0));
        }
    }
}

#[test]
fn objective_vanishes_at_truth_and_scales() {
    let (profile, basis, observer) = setup(8, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let h = TimeChannel::init(&profile, &mut rng).step(&profile, &mut rng);
    let d = PhaseDistortion::new(0.4, -0.03);
    let obs = observer.observe(&h, &d, 1e-30, &mut rng).unwrap();
    let st = predicted(h.taps.clone(), vec![0.01; 8], 1);
    let v = negative_log_likelihood(&d, &obs, &st, basis.grid(), basis.dft(), 0.1).unwrap();
    assert!(v.abs() < 1e-18);

    let noisy = observer.observe(&h, &d, 0.1, &mut rng).unwrap();
    let base = negative_log_likelihood(&d, &noisy, &st, basis.grid(), basis.dft(), 0.1).unwrap();
    let scaled_state = predicted(h.taps.clone(), vec![0.03; 8], 1);
    let scaled = negative_log_likelihood(&d, &noisy, &scaled_state, basis.grid(), basis.dft(), 0.3).unwrap();
    assert!((scaled - base / 3.0).abs() < 1e-10 * base);
}

#[test]
fn single_path_minimum_found_by_brute_force() {
    let grid = PilotGrid::new(32, (0..32).step_by(2).collect()).unwrap();
    let basis = Arc::new(PilotBasis::new(grid.clone(), 1).unwrap());
    let observer = Observer::new(grid.clone(), 1);
    let h = TimeChannel { taps: vec![c(0.8, -0.6)], time_index: 1 };
    let truth = PhaseDistortion::new(1.234, 0.037);
    let obs = observer.observe(&h, &truth, 1e-30, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let st = predicted(h.taps.clone(), vec![1e-3], 1);
    let pred = Prediction::new(st.clone(), Arc::clone(&basis), 1e-4).unwrap();

    let mut best = (f64::INFINITY, 0.0, 0.0);
    let step = 1e-3;
    let mut f = pred.objective(&obs, Objective::Whitened, false).unwrap();
    for i in 0..=300 {
        let slope = -0.1 + i as f64 * step;
        for j in 0..6284 {
            let offset = -PI + j as f64 * step;
            let d = PhaseDistortion::new(offset, slope);
            let v = f.evaluate(&d);
            if v < best.0 {
                best = (v, offset, slope);
            }
        }
    }
    assert!((best.1 - truth.offset()).abs() <= step, "offset {}", best.1);
    assert!((best.2 - truth.slope()).abs() <= step, "slope {}", best.2);
    // and the dense objective agrees at the brute-force minimizer
    let d = PhaseDistortion::new(best.1, best.2);
    let dense = negative_log_likelihood(&d, &obs, &st, &grid, basis.dft(), 1e-4).unwrap();
    assert!((dense - best.0).abs() < 1e-6 * dense.max(1.0));
}

#[test]
fn estimate_phase_recovers_generator() {
    let (profile, basis, observer) = setup(8, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let h = TimeChannel::init(&profile, &mut rng).step(&profile, &mut rng);
    let cfg = PhaseSearchConfig::default();
    for truth in [PhaseDistortion::new(0.7, 0.05), PhaseDistortion::identity(), PhaseDistortion::new(-3.0, -0.19)] {
        let obs = observer.observe(&h, &truth, 1e-30, &mut rng).unwrap();
        let pred = Prediction::new(predicted(h.taps.clone(), vec![1e-4; 8], 1), Arc::clone(&basis), 1e-8).unwrap();
        let est = estimate_phase(&obs, &pred, &cfg).unwrap();
        assert!(wrap_phase(est.distortion.offset() - truth.offset()).abs() < cfg.refine_tolerance, "{est:?} vs {truth:?}");
        assert!((est.distortion.slope() - truth.slope()).abs() < cfg.refine_tolerance);
    }
}

#[test]
fn estimate_phase_is_scale_invariant() {
    let (profile, basis, observer) = setup(8, 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let h = TimeChannel::init(&profile, &mut rng).step(&profile, &mut rng);
    let truth = PhaseDistortion::new(-1.1, 0.02);
    let obs = observer.observe(&h, &truth, 0.1, &mut rng).unwrap();
    let mean: Vec<C64> = h.taps.iter().map(|t| t * 0.9).collect();
    let cfg = PhaseSearchConfig::default();
    let a =
        estimate_phase(&obs, &Prediction::new(predicted(mean.clone(), vec![0.01; 8], 1), Arc::clone(&basis), 0.1).unwrap(), &cfg).unwrap();
    let s = 3.0;
    let obs_s = CsiObservation { values: obs.values.iter().map(|v| v * s).collect(), time_index: 1 };
    let mean_s = mean.iter().map(|m| m * s).collect();
    let pred_s = Prediction::new(predicted(mean_s, vec![0.01 * s * s; 8], 1), Arc::clone(&basis), 0.1 * s * s).unwrap();
    let b = estimate_phase(&obs_s, &pred_s, &cfg).unwrap();
    assert!(wrap_phase(a.distortion.offset() - b.distortion.offset()).abs() < 1e-7);
    assert!((a.distortion.slope() - b.distortion.slope()).abs() < 1e-7);
    assert!((a.objective - b.objective).abs() < 1e-7 * a.objective);
}

#[test]
fn flat_offset_ties_break_to_zero() {
    // zero prediction: the whitened objective does not depend on the offset
    let (_, basis, observer) = setup(8, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let h = TimeChannel { taps: (0..8).map(|_| phyauth::channel::complex_gaussian(&mut rng, 0.125)).collect(), time_index: 1 };
    let obs = observer.observe(&h, &PhaseDistortion::new(2.0, 0.0), 0.01, &mut rng).unwrap();
    let pred = Prediction::new(predicted(vec![c(0.0, 0.0); 8], vec![0.125; 8], 1), Arc::clone(&basis), 0.01).unwrap();
    let est = estimate_phase(&obs, &pred, &PhaseSearchConfig::default()).unwrap();
    assert_eq!(est.distortion.offset(), 0.0);
}

#[test]
fn gain_examples() {
    let b = CMatrix::from_diag(&[c(1.0, 0.0)]);
    let k = gain(&predicted(vec![c(0.0, 0.0)], vec![1.0], 1), &b, 1.0).unwrap();
    assert!((k[(0, 0)] - c(0.5, 0.0)).norm() < 1e-15);

    let basis = PilotBasis::new(PilotGrid::ht40(), 4).unwrap();
    let bm = basis.distorted_dft(&PhaseDistortion::new(0.3, 0.01));
    let zero = gain(&predicted(vec![c(0.0, 0.0); 4], vec![0.0; 4], 1), &bm, 0.1).unwrap();
    assert_eq!(zero.max_abs(), 0.0);
    let tiny = gain(&predicted(vec![c(0.0, 0.0); 4], vec![0.25; 4], 1), &bm, 1e12).unwrap();
    assert!(tiny.max_abs() < 1e-9);
}

#[test]
fn update_examples() {
    let b = CMatrix::from_diag(&[c(1.0, 0.0)]);
    let pr = predicted(vec![c(0.2, 0.0)], vec![1.0], 1);
    let obs = CsiObservation { values: vec![c(1.0, 1.0)], time_index: 1 };
    let k = gain(&pr, &b, 1.0).unwrap();
    let up = update(&pr, &obs, &b, &k).unwrap();
    assert!((up.cov_diag[0] - 0.5).abs() < 1e-15);
    assert!((up.mean[0] - c(0.6, 0.5)).norm() < 1e-15);
    let same = update(&pr, &obs, &b, &CMatrix::zeros(1, 1)).unwrap();
    assert_eq!(same.mean, pr.mean);
    assert_eq!(same.cov_diag, pr.cov_diag);
    assert_eq!(same.kind, StateKind::Updated);
}

#[test]
fn structured_update_matches_dense_gain_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let basis = Arc::new(PilotBasis::new(PilotGrid::ht40(), 8).unwrap());
    for _ in 0..5 {
        let st = random_state(&mut rng, 8, 1);
        let obs = CsiObservation { values: (0..114).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>())).collect(), time_index: 1 };
        let d = draw_phase_distortion(&mut rng, 0.2);
        let pred = Prediction::new(st.clone(), Arc::clone(&basis), 0.2).unwrap();
        let innov = innovation_at(&pred, &obs, d, 0.0).unwrap();
        let fast = structured_update(&pred, &innov).unwrap();
        let b = basis.distorted_dft(&d);
        let k = gain(&st, &b, 0.2).unwrap();
        // K solves K Sigma = P B^H
        let sigma = pred.covariance(&d).to_dense();
        let lhs = k.matmul(sigma.matrix()).unwrap();
        let rhs = CMatrix::from_diag(&st.cov_diag.iter().map(|&p| c(p, 0.0)).collect::<Vec<_>>()).matmul(&b.adjoint()).unwrap();
        for i in 0..8 {
            for j in 0..114 {
                assert!((lhs[(i, j)] - rhs[(i, j)]).norm() < 1e-10);
            }
        }
        let dense = update(&st, &obs, &b, &k).unwrap();
        for l in 0..8 {
            assert!((fast.mean[l] - dense.mean[l]).norm() < 1e-10);
            assert!((fast.cov_diag[l] - dense.cov_diag[l]).abs() < 1e-12);
            assert!(fast.cov_diag[l] <= st.cov_diag[l] + 1e-15);
        }
    }
}

#[test]
fn noiseless_run_converges() {
    let (profile, basis, observer) = setup(8, 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut filter = KalmanFilter::new(profile.clone(), basis, 1e-10, PhaseSearchConfig::default()).unwrap();
    let mut h = TimeChannel::init(&profile, &mut rng);
    let mut last = f64::INFINITY;
    for _ in 0..100 {
        h = h.step(&profile, &mut rng);
        let d = draw_phase_distortion(&mut rng, 2.0 * PI * 4.0 / 128.0);
        let obs = observer.observe(&h, &d, 1e-30, &mut rng).unwrap();
        let out = filter.step(&obs).unwrap();
        last = phase_aligned_sq_error(&out.state.mean, &h.taps).sqrt();
    }
    assert!(last < 1e-6, "final error {last}");
    assert_eq!(filter.updates(), 100);
}

#[test]
fn static_noiseless_covariance_decreases() {
    let (profile, basis, observer) = setup(8, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let mut filter = KalmanFilter::new(profile.clone(), basis, 1e-6, PhaseSearchConfig::default()).unwrap();
    let h0 = TimeChannel::init(&profile, &mut rng);
    let mut prev = filter.state().cov_diag.clone();
    let mut h = h0;
    for _ in 0..30 {
        h = h.step(&profile, &mut rng);
        let obs = observer.observe(&h, &draw_phase_distortion(&mut rng, 0.1), 1e-30, &mut rng).unwrap();
        let out = filter.step(&obs).unwrap();
        for (a, b) in out.state.cov_diag.iter().zip(&prev) {
            assert!(a <= b);
        }
        prev = out.state.cov_diag;
    }
    assert!(prev.iter().all(|&p| p < 1e-7));
}

#[test]
fn denoises_below_raw_noise_floor() {
    let (profile, basis, observer) = setup(8, 1e-4);
    let sigma2 = snr_to_noise_var(10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut filter = KalmanFilter::new(profile.clone(), basis, sigma2, PhaseSearchConfig::default()).unwrap();
    let mut h = TimeChannel::init(&profile, &mut rng);
    let (mut acc, mut n) = (0.0, 0);
    for k in 0..400 {
        h = h.step(&profile, &mut rng);
        let obs = observer.observe(&h, &draw_phase_distortion(&mut rng, 0.19), sigma2, &mut rng).unwrap();
        let out = filter.step(&obs).unwrap();
        for (p, pdp) in out.state.cov_diag.iter().zip(profile.pdp()) {
            assert!(*p >= 0.0 && *p <= pdp * (1.0 + 1e-9));
        }
        if k >= 200 {
            // per-subcarrier error in the DFT domain; C has unit-modulus
            // entries and the taps are aligned first
            let cross: C64 = out.state.mean.iter().zip(&h.taps).map(|(e, t)| e.conj() * t).sum();
            let rot = C64::from_polar(1.0, cross.arg());
            let aligned: Vec<C64> = out.state.mean.iter().map(|m| m * rot).collect();
            let est = observer.dft().mul_vec(&aligned).unwrap();
            let tru = observer.true_csi(&h).unwrap();
            acc += est.iter().zip(&tru).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / 114.0;
            n += 1;
        }
    }
    assert!(acc / (n as f64) < sigma2, "mse {}", acc / n as f64);
}

#[test]
fn deterministic_trajectories() {
    let run = || {
        let (profile, basis, observer) = setup(8, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut filter = KalmanFilter::new(profile.clone(), basis, 0.1, PhaseSearchConfig::default()).unwrap();
        let mut h = TimeChannel::init(&profile, &mut rng);
        let mut states = Vec::new();
        for _ in 0..20 {
            h = h.step(&profile, &mut rng);
            let obs = observer.observe(&h, &draw_phase_distortion(&mut rng, 0.19), 0.1, &mut rng).unwrap();
            states.push(filter.step(&obs).unwrap().state);
        }
        states
    };
    assert_eq!(run(), run());
}

#[test]
fn rejects_out_of_order_observations() {
    let (profile, basis, _) = setup(8, 0.0);
    let mut filter = KalmanFilter::new(profile, basis, 0.1, PhaseSearchConfig::default()).unwrap();
    let obs = CsiObservation { values: vec![c(1.0, 0.0); 114], time_index: 5 };
    assert!(matches!(filter.step(&obs), Err(EstimatorError::TimeIndex { .. })));
    let short = CsiObservation { values: vec![c(1.0, 0.0); 3], time_index: 1 };
    assert!(filter.step(&short).is_err());
}

#[test]
fn search_config_validation() {
    let mut cfg = PhaseSearchConfig::default();
    assert!(cfg.validate().is_ok());
    cfg.slope_grid_points = 1;
    assert!(cfg.validate().is_err());
    let cfg = PhaseSearchConfig { refine_tolerance: 0.0, ..Default::default() };
    assert!(cfg.validate().is_err());
}

#[test]
fn aligned_error_ignores_common_phase() {
    let t = vec![c(1.0, 0.5), c(-0.2, 0.1)];
    let rotated: Vec<C64> = t.iter().map(|z| z * C64::from_polar(1.0, 2.1)).collect();
    assert!(phase_aligned_sq_error(&rotated, &t) < 1e-24);
    assert!((phase_aligned_sq_error(&[c(0.0, 0.0); 2], &t) - norm_sqr(&t)).abs() < 1e-15);
}
