use phyauth::numerics::*;
use phyauth::reference;
use proptest::prelude::*;

#[test]
fn j0_at_zero_is_one() {
    assert_eq!(bessel_j0(0.0).unwrap(), 1.0);
}

#[test]
fn j0_matches_integral_oracle_up_to_twenty() {
    let mut x = -20.0;
    while x <= 20.0 {
        let got = bessel_j0(x).unwrap();
        let want = reference::bessel_j0_integral(x);
        assert!((got - want).abs() <= 1e-12, "x={x}: {got} vs {want}");
        x += 0.0625;
    }
}

#[test]
fn j0_branch_seams_are_continuous() {
    for seam in [8.0_f64, 25.0] {
        for x in [seam - 1e-9, seam, seam + 1e-9] {
            let got = bessel_j0(x).unwrap();
            assert!((got - reference::bessel_j0_integral(x)).abs() < 1e-12, "seam {seam} at {x}");
        }
    }
    let far = bessel_j0(40.0).unwrap();
    assert!((far - reference::bessel_j0_integral(40.0)).abs() < 1e-12);
}

#[test]
fn j0_rejects_non_finite() {
    assert!(bessel_j0(f64::NAN).is_err());
    assert!(bessel_j0(f64::INFINITY).is_err());
}

#[test]
fn j0_frozen_values() {
    assert!((bessel_j0(1.0).unwrap() - 0.765_197_686_558).abs() < 1e-12);
    assert!(bessel_j0(2.404_825_557_696).unwrap().abs() < 1e-10);
}

#[test]
fn ln_gamma_integers() {
    let mut log_fact = 0.0_f64;
    for n in 1..150_u32 {
        // ln Gamma(n) = ln (n-1)!
        let got = ln_gamma(n as f64);
        assert!((got - log_fact).abs() <= 1e-12 * log_fact.abs().max(1.0), "n={n}");
        log_fact += (n as f64).ln();
    }
}

#[test]
fn chi2_cdf_edge_and_closed_form() {
    assert_eq!(chi2_cdf(0.0, 2).unwrap(), 0.0);
    let half = chi2_cdf(2.0 * std::f64::consts::LN_2, 2).unwrap();
    assert!((half - 0.5).abs() < 1e-14);
    for x in [0.1, 1.0, 3.0, 17.0] {
        let want = 1.0 - (-x / 2.0_f64).exp();
        assert!((chi2_cdf(x, 2).unwrap() - want).abs() < 1e-14);
    }
    assert!(chi2_cdf(-1.0, 2).is_err());
    assert!(chi2_cdf(1.0, 0).is_err());
    assert_eq!(chi2_cdf(f64::INFINITY, 5).unwrap(), 1.0);
}

#[test]
fn chi2_cdf_matches_quadrature_oracle() {
    for &(x, dof) in &[(228.0, 228_u32), (255.0, 228), (200.0, 228), (7.0, 10), (12.5, 10), (0.3, 2)] {
        let got = chi2_cdf(x, dof).unwrap();
        let want = reference::chi2_cdf_quadrature(x, dof);
        assert!((got - want).abs() < 1e-10, "({x},{dof}) {got} vs {want}");
    }
}

#[test]
fn chi2_quantile_examples() {
    let q = chi2_quantile(0.5, 2).unwrap();
    assert!((q - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    assert!(chi2_quantile(0.0, 2).is_err());
    assert!(chi2_quantile(1.0, 2).is_err());
    assert!(chi2_quantile(f64::NAN, 2).is_err());
    let mut prev = 0.0;
    for i in 1..100 {
        let q = chi2_quantile(i as f64 / 100.0, 228).unwrap();
        assert!(q > prev);
        prev = q;
    }
}

#[test]
fn chi2_pdf_is_cdf_derivative() {
    for &(x, dof) in &[(3.0, 4_u32), (228.0, 228), (1.5, 1)] {
        let h = 1e-5 * x;
        let fd = (chi2_cdf(x + h, dof).unwrap() - chi2_cdf(x - h, dof).unwrap()) / (2.0 * h);
        let pdf = chi2_pdf(x, dof).unwrap();
        assert!((fd - pdf).abs() < 1e-7 * pdf.max(1e-3), "({x},{dof})");
    }
}

proptest! {
    #[test]
    fn quantile_round_trips(p in 0.001_f64..0.999, dof_idx in 0usize..3) {
        let dof = [2_u32, 10, 228][dof_idx];
        let x = chi2_quantile(p, dof).unwrap();
        let back = chi2_cdf(x, dof).unwrap();
        prop_assert!((back - p).abs() < 1e-8);
        let again = chi2_quantile(back, dof).unwrap();
        prop_assert!((again - x).abs() <= 1e-8 * x);
    }

    #[test]
    fn cdf_monotone_and_bounded(a in 0.0_f64..600.0, b in 0.0_f64..600.0, dof in 1_u32..300) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let flo = chi2_cdf(lo, dof).unwrap();
        let fhi = chi2_cdf(hi, dof).unwrap();
        prop_assert!((0.0..=1.0).contains(&flo) && (0.0..=1.0).contains(&fhi));
        prop_assert!(flo <= fhi + 1e-15);
    }

    #[test]
    fn j0_bounded(x in -1e4_f64..1e4) {
        prop_assert!(bessel_j0(x).unwrap().abs() <= 1.0 + 1e-15);
    }
}
