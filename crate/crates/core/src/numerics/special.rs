//! Special functions: Bessel J0, log-gamma, the regularized incomplete gamma
//! pair and the chi-squared law built on top of them.

use std::f64::consts::PI;

use super::NumericsError;

const EPS: f64 = 1e-16;
const FPMIN: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

/// Zero-order Bessel function of the first kind.
///
/// Power series on `|x| <= 8`, Miller backward recurrence on `8 < |x| <= 25`
/// and the Hankel asymptotic expansion beyond.
pub fn bessel_j0(x: f64) -> Result<f64, NumericsError> {
    if !x.is_finite() {
        return Err(NumericsError::Domain(format!("bessel_j0 needs a finite argument, got {x}")));
    }
    let ax = x.abs();
    Ok(if ax <= 8.0 {
        j0_series(ax)
    } else if ax <= 25.0 {
        j0_miller(ax)
    } else {
        j0_asymptotic(ax)
    })
}

fn j0_series(x: f64) -> f64 {
    let y = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= y / (k * k);
        sum += term;
        if term.abs() < EPS * sum.abs().max(1e-3) {
            break;
        }
        k += 1.0;
    }
    sum
}

// Normalized with 1 = J0 + 2 * sum_{k>=1} J_{2k}.
fn j0_miller(x: f64) -> f64 {
    let start = 2 * ((x as usize + 40) / 2);
    let two_over_x = 2.0 / x;
    let mut j_next = 0.0;
    let mut j_cur = 1e-30;
    let mut even_sum = 0.0;
    let mut j0 = 0.0;
    for n in (1..=start).rev() {
        let j_prev = n as f64 * two_over_x * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        if j_cur.abs() > 1e250 {
            j_cur *= 1e-250;
            j_next *= 1e-250;
            even_sum *= 1e-250;
        }
        // j_cur now holds J_{n-1}
        let order = n - 1;
        if order == 0 {
            j0 = j_cur;
        } else if order % 2 == 0 {
            even_sum += j_cur;
        }
    }
    j0 / (j0 + 2.0 * even_sum)
}

fn j0_asymptotic(x: f64) -> f64 {
    // a_k = prod_{i=1..k} (-(2i-1)^2) / (k! 8^k); P takes even k, Q odd k.
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut prev = f64::INFINITY;
    for k in 0..60 {
        let term = a / x.powi(k as i32);
        if term.abs() > prev {
            break;
        }
        prev = term.abs();
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
        if term.abs() < EPS {
            break;
        }
        let odd = (2 * k + 1) as f64;
        a *= -(odd * odd) / ((k + 1) as f64 * 8.0);
    }
    let chi = x - 0.25 * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn gamma_prefactor(a: f64, x: f64) -> f64 {
    (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * gamma_prefactor(a, x)
}

// Modified Lentz evaluation of the upper-tail continued fraction.
fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    gamma_prefactor(a, x) * h
}

/// Regularized lower and upper incomplete gamma `(P(a, x), Q(a, x))`.
pub fn regularized_gamma(a: f64, x: f64) -> Result<(f64, f64), NumericsError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(NumericsError::Domain(format!("incomplete gamma needs a > 0, got {a}")));
    }
    if x.is_nan() || x < 0.0 {
        return Err(NumericsError::Domain(format!("incomplete gamma needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    if x < a {
        let p = gamma_series(a, x).clamp(0.0, 1.0);
        Ok((p, 1.0 - p))
    } else {
        let q = gamma_continued_fraction(a, x).clamp(0.0, 1.0);
        Ok((1.0 - q, q))
    }
}

fn check_dof(dof: u32) -> Result<f64, NumericsError> {
    if dof == 0 {
        return Err(NumericsError::Domain("chi-squared needs dof >= 1".into()));
    }
    Ok(dof as f64)
}

fn check_x(x: f64) -> Result<(), NumericsError> {
    if x.is_nan() || x < 0.0 {
        return Err(NumericsError::Domain(format!("chi-squared argument must be >= 0, got {x}")));
    }
    Ok(())
}

/// Chi-squared cumulative distribution function.
pub fn chi2_cdf(x: f64, dof: u32) -> Result<f64, NumericsError> {
    let k = check_dof(dof)?;
    check_x(x)?;
    Ok(regularized_gamma(0.5 * k, 0.5 * x)?.0)
}

/// Chi-squared survival function `1 - F(x)`, accurate in the upper tail.
pub fn chi2_sf(x: f64, dof: u32) -> Result<f64, NumericsError> {
    let k = check_dof(dof)?;
    check_x(x)?;
    Ok(regularized_gamma(0.5 * k, 0.5 * x)?.1)
}

pub fn chi2_pdf(x: f64, dof: u32) -> Result<f64, NumericsError> {
    let k = check_dof(dof)?;
    check_x(x)?;
    if x == 0.0 {
        return Ok(match dof {
            1 => f64::INFINITY,
            2 => 0.5,
            _ => 0.0,
        });
    }
    let half = 0.5 * k;
    Ok(((half - 1.0) * x.ln() - 0.5 * x - half * std::f64::consts::LN_2 - ln_gamma(half)).exp())
}

/// Inverse of the chi-squared CDF.
///
/// Wilson-Hilferty start, then Newton steps kept inside a bisection bracket.
/// Upper-tail probabilities are matched through the survival function so that
/// `p` close to one keeps full relative precision in `1 - p`.
pub fn chi2_quantile(p: f64, dof: u32) -> Result<f64, NumericsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(NumericsError::Domain(format!("quantile probability must lie in (0, 1), got {p}")));
    }
    let k = check_dof(dof)?;
    let upper = p > 0.5;
    let tail = 1.0 - p;
    // g is increasing in x in both branches
    let g = |x: f64| -> Result<f64, NumericsError> { Ok(if upper { tail - chi2_sf(x, dof)? } else { chi2_cdf(x, dof)? - p }) };

    let z = inverse_normal_cdf(p);
    let c = 2.0 / (9.0 * k);
    let mut x = k * (1.0 - c + z * c.sqrt()).powi(3);
    if !(x > 0.0) || !x.is_finite() {
        x = k.max(1.0) * 1e-3;
    }

    let mut lo = 0.0;
    let mut hi = x;
    while g(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(NumericsError::Convergence("chi2_quantile failed to bracket".into()));
        }
    }

    for _ in 0..200 {
        let gx = g(x)?;
        if gx == 0.0 {
            return Ok(x);
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = chi2_pdf(x, dof)?;
        let mut next = if slope > 0.0 && slope.is_finite() { x - gx / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) || (hi - lo) <= 1e-15 * hi {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

// Acklam's rational approximation; only the starting point of the chi-squared
// root finder depends on it.
fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] =
        [-5.447_609_879_822_406e1, 1.615_858_368_580_409e2, -1.556_989_798_598_866e2, 6.680_131_188_771_972e1, -1.328_068_155_288_572e1];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
