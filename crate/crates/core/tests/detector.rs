use phyauth::detector::*;
use phyauth::numerics::C64;
use phyauth::numerics::{CMatrix, HermitianPsdMatrix};
use phyauth::reference::chi2_quantile_bisect;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn statistic_examples() {
    let id = HermitianPsdMatrix::new(CMatrix::identity(3)).unwrap();
    assert_eq!(test_statistic(&[c(0.0, 0.0); 3], &id).unwrap(), 0.0);
    let half = HermitianPsdMatrix::new(CMatrix::from_diag(&[c(0.5, 0.0), c(0.5, 0.0)])).unwrap();
    let v = test_statistic(&[c(1.0, 0.0), c(0.0, 1.0)], &half).unwrap();
    assert!((v - 8.0).abs() < 1e-12);
    assert!(test_statistic(&[c(1.0, 0.0)], &id).is_err());
}

#[test]
fn threshold_examples() {
    assert!((threshold(0.5, 2).unwrap() - 2.0 * 2.0_f64.ln()).abs() < 1e-10);
    let t = threshold(0.1, 228).unwrap();
    assert!((t - chi2_quantile_bisect(0.9, 228)).abs() < 1e-6);
    assert!((t - 255.7589).abs() < 1e-3);
    assert!(threshold(0.01, 228).unwrap() > t);
    assert!(threshold(0.0, 2).is_err());
    assert!(threshold(1.0, 2).is_err());
}

#[test]
fn decide_ties_to_h0() {
    assert_eq!(decide(3.0, 3.0), Hypothesis::H0);
    assert_eq!(decide(3.0 + 1e-12, 3.0), Hypothesis::H1);
    assert_eq!(decide(0.0, 1.0), Hypothesis::H0);
}

#[test]
fn magnitude_examples() {
    let a = [c(1.0, 0.0), c(0.0, -2.0)];
    let rotated: Vec<C64> = a.iter().map(|z| z * C64::from_polar(1.0, 0.7)).collect();
    assert!(magnitude_diff_statistic(&rotated, &a).unwrap() < 1e-30);
    let doubled: Vec<C64> = a.iter().map(|z| z * 2.0).collect();
    assert!((magnitude_diff_statistic(&doubled, &a).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(magnitude_diff_statistic(&a, &[c(0.0, 0.0); 2]), Err(DetectorError::ZeroReference));
}

#[test]
fn empirical_threshold_examples() {
    let s: Vec<f64> = (1..=10).map(f64::from).collect();
    assert_eq!(calibrate_empirical_threshold(&s, 0.1).unwrap(), 9.0);
    let s: Vec<f64> = (1..=100).map(f64::from).collect();
    assert_eq!(calibrate_empirical_threshold(&s, 0.05).unwrap(), 95.0);
    assert_eq!(calibrate_empirical_threshold(&[4.0], 0.5).unwrap(), 4.0);
    assert!(calibrate_empirical_threshold(&[], 0.5).is_err());
}

#[test]
fn record_flags_errors() {
    let r = DetectionRecord::new(5.0, 3.0, Transmitter::Alice, DetectorKind::Kalman, 7);
    assert_eq!(r.decision, Hypothesis::H1);
    assert!(r.is_error());
    let r = DetectionRecord::new(5.0, 3.0, Transmitter::Eve, DetectorKind::MagnitudeDiff, 7);
    assert!(!r.is_error());
}

proptest! {
    #[test]
    fn empirical_threshold_exceedance(mut s in proptest::collection::vec(0.0_f64..10.0, 1..400), p in 0.01_f64..0.99) {
        let t = calibrate_empirical_threshold(&s, p).unwrap();
        let above = s.iter().filter(|&&x| x > t).count() as f64;
        prop_assert!(above <= (s.len() as f64) * p + 1e-9);
        s.sort_by(f64::total_cmp);
        prop_assert!(s.contains(&t));
    }

    #[test]
    fn threshold_monotone_in_p_fa(a in 0.001_f64..0.999, b in 0.001_f64..0.999) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        prop_assert!(threshold(lo, 228).unwrap() > threshold(hi, 228).unwrap());
    }

    #[test]
    fn statistic_non_negative(v in proptest::collection::vec((-1.0_f64..1.0, -1.0_f64..1.0), 4), p in 0.01_f64..2.0) {
        let m = HermitianPsdMatrix::new(CMatrix::from_diag(&[c(p, 0.0); 4])).unwrap();
        let eps: Vec<C64> = v.iter().map(|&(a, b)| c(a, b)).collect();
        prop_assert!(test_statistic(&eps, &m).unwrap() >= 0.0);
    }
}
