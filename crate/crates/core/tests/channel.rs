use phyauth::channel::*;
use phyauth::numerics::C64;
use phyauth::reference;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

#[test]
fn static_single_path_profile() {
    let p = ChannelProfile::new(1, 0.0, 0.0).unwrap();
    assert_eq!(p.pdp(), &[1.0]);
    assert_eq!(p.alpha(), 1.0);
    assert_eq!(p.process_noise(), &[0.0]);
}

#[test]
fn doppler_alpha_matches_bessel_value() {
    let p = ChannelProfile::new(8, 1e-4, 0.5).unwrap();
    let oracle = reference::bessel_j0_integral(2.0 * PI * 1e-4);
    assert!((p.alpha() - oracle).abs() < 1e-13);
    assert!((1.0 - p.alpha() - 9.8696e-8).abs() < 1e-11);
    assert!((p.pdp().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (q, pdp) in p.process_noise().iter().zip(p.pdp()) {
        assert!((q - (1.0 - p.alpha().powi(2)) * pdp).abs() < 1e-18);
    }
}

#[test]
fn two_path_alpha_and_decay() {
    let p = ChannelProfile::new(2, 0.1, 0.0).unwrap();
    assert!((p.alpha() - 0.903_71).abs() < 1e-5);
    assert_eq!(p.pdp(), &[0.5, 0.5]);
    let d = ChannelProfile::new(4, 0.0, 1.0).unwrap();
    for l in 1..4 {
        assert!((d.pdp()[l] / d.pdp()[l - 1] - (-1.0_f64).exp()).abs() < 1e-12);
    }
}

#[test]
fn rejects_bad_parameters() {
    assert!(ChannelProfile::new(0, 0.0, 0.0).is_err());
    assert!(ChannelProfile::new(2, 0.5, 0.0).is_err());
    assert!(ChannelProfile::new(2, -0.1, 0.0).is_err());
    assert!(ChannelProfile::new(2, 0.1, f64::NAN).is_err());
    assert!(ChannelProfile::from_pdp(&[1.0, 0.0], 0.0).is_err());
}

#[test]
fn stationary_moments() {
    let p = ChannelProfile::new(1, 0.0, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let (mut tot, mut re2, mut im2) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let z = TimeChannel::init(&p, &mut rng).taps[0];
        tot += z.norm_sqr();
        re2 += z.re * z.re;
        im2 += z.im * z.im;
    }
    let n = n as f64;
    assert!((tot / n - 1.0).abs() < 0.02);
    assert!((re2 / n - 0.5).abs() < 0.01);
    assert!((im2 / n - 0.5).abs() < 0.01);
}

#[test]
fn seeded_draws_repeat() {
    let p = ChannelProfile::new(8, 1e-3, 0.3).unwrap();
    let a = TimeChannel::init(&p, &mut ChaCha8Rng::seed_from_u64(9));
    let b = TimeChannel::init(&p, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
    assert_eq!(a.time_index, 0);
    assert_eq!(a.len(), 8);
}

#[test]
fn frozen_channel_does_not_move() {
    let p = ChannelProfile::new(3, 0.0, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = TimeChannel::init(&p, &mut rng);
    let next = h.step(&p, &mut rng);
    assert_eq!(next.taps, h.taps);
    assert_eq!(next.time_index, 1);
}

#[test]
fn alpha_zero_gives_fresh_draws() {
    // J0 has its first zero at 2.404825557695773; f_d T_s = x / (2 pi).
    let fd = 2.404_825_557_695_773 / (2.0 * PI);
    let p = ChannelProfile::new(1, fd, 0.0).unwrap();
    assert!(p.alpha().abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut h = TimeChannel::init(&p, &mut rng);
    let n = 50_000;
    let mut cross = C64::new(0.0, 0.0);
    for _ in 0..n {
        let next = h.step(&p, &mut rng);
        cross += next.taps[0] * h.taps[0].conj();
        h = next;
    }
    assert!((cross / n as f64).norm() < 0.02);
}

fn lag_correlation(traj: &[C64], lag: usize) -> f64 {
    let num: C64 = traj[lag..].iter().zip(traj).map(|(a, b)| a * b.conj()).sum();
    let den: f64 = traj.iter().map(|z| z.norm_sqr()).sum();
    num.re / den * (traj.len() as f64 / (traj.len() - lag) as f64)
}

#[test]
fn autocorrelation_and_stationarity() {
    // alpha = J0(2 pi * 0.05) ~ 0.951: short correlation time keeps the
    // Monte Carlo estimates tight at 1e5 steps.
    let p = ChannelProfile::new(1, 0.05, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut h = TimeChannel::init(&p, &mut rng);
    let mut traj = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        h = h.step(&p, &mut rng);
        traj.push(h.taps[0]);
    }
    let var = traj.iter().map(|z| z.norm_sqr()).sum::<f64>() / traj.len() as f64;
    assert!((var - 1.0).abs() < 0.03, "variance {var}");
    for m in [1usize, 2, 5] {
        let rho = lag_correlation(&traj, m);
        assert!((rho - p.alpha().powi(m as i32)).abs() < 0.01, "lag {m}: {rho}");
    }
}

#[test]
fn total_power_stays_unit() {
    let p = ChannelProfile::new(8, 0.01, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 4000;
    let mut chans: Vec<TimeChannel> = (0..trials).map(|_| TimeChannel::init(&p, &mut rng)).collect();
    for k in 0..60 {
        let mean = chans.iter().map(TimeChannel::power).sum::<f64>() / trials as f64;
        assert!((mean - 1.0).abs() < 0.03, "k={k} power {mean}");
        chans = chans.iter().map(|h| h.step(&p, &mut rng)).collect();
    }
    // per-tap variance
    for l in 0..8 {
        let v = chans.iter().map(|h| h.taps[l].norm_sqr()).sum::<f64>() / trials as f64;
        assert!((v / p.pdp()[l] - 1.0).abs() < 0.1, "tap {l}");
    }
}
