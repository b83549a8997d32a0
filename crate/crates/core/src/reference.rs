//! Independent reference computations used to check the production code paths.
//!
//! Nothing here is called by the simulator or the estimator. Each routine takes
//! a deliberately different route from the production implementation it checks
//! (quadrature instead of incomplete-gamma series, an integral representation
//! instead of series/recurrence, elimination instead of Cholesky, a scalar
//! filter written out by hand instead of the matrix filter).

use std::f64::consts::PI;

use crate::numerics::{CMatrix, C64};

/// `J0(x) = (1/pi) * integral_0^pi cos(x sin t) dt` by the trapezoidal rule,
/// which converges geometrically for this periodic integrand.
pub fn bessel_j0_integral(x: f64) -> f64 {
    let n = 1024;
    let h = PI / n as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let mut sum = 0.5 * (f(0.0) + f(PI));
    for i in 1..n {
        sum += f(i as f64 * h);
    }
    sum * h / PI
}

// ln Gamma(k/2) from exact factorial products.
fn ln_gamma_half_dof(dof: u32) -> f64 {
    if dof % 2 == 0 {
        let n = dof / 2;
        (1..n).map(|i| (i as f64).ln()).sum()
    } else {
        // Gamma(n + 1/2) = sqrt(pi) (2n)! / (4^n n!)
        let n = (dof - 1) / 2;
        let ln_2n_fact: f64 = (1..=2 * n).map(|i| (i as f64).ln()).sum();
        let ln_n_fact: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
        0.5 * PI.ln() + ln_2n_fact - n as f64 * 4.0_f64.ln() - ln_n_fact
    }
}

/// Chi-squared CDF by composite Simpson quadrature of the density, after the
/// substitution `t = u^2` which removes the `t^{-1/2}` singularity at dof = 1.
pub fn chi2_cdf_quadrature(x: f64, dof: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = dof as f64;
    let ln_norm = 0.5 * k * 2.0_f64.ln() + ln_gamma_half_dof(dof);
    let integrand = |u: f64| {
        if u == 0.0 {
            if dof == 1 {
                2.0 * (-ln_norm).exp()
            } else {
                0.0
            }
        } else {
            (2.0_f64.ln() + (k - 1.0) * u.ln() - 0.5 * u * u - ln_norm).exp()
        }
    };
    let upper = x.sqrt();
    let panels = 40_000;
    let h = upper / panels as f64;
    let mut sum = integrand(0.0) + integrand(upper);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(i as f64 * h);
    }
    (sum * h / 3.0).clamp(0.0, 1.0)
}

/// Chi-squared quantile by bisection on [`chi2_cdf_quadrature`].
pub fn chi2_quantile_bisect(p: f64, dof: u32) -> f64 {
    let mut lo = 0.0;
    let mut hi = (dof as f64).max(1.0);
    while chi2_cdf_quadrature(hi, dof) < p {
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf_quadrature(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Gaussian elimination with partial pivoting on a general complex system.
pub fn gaussian_elimination_solve(a: &CMatrix, b: &[C64]) -> Vec<C64> {
    let n = a.rows();
    let mut m: Vec<Vec<C64>> = (0..n)
        .map(|r| {
            let mut row = a.row(r).to_vec();
            row.push(b[r]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].norm().total_cmp(&m[j][col].norm())).expect("non-empty pivot range");
        m.swap(col, pivot);
        let p = m[col][col];
        for r in (col + 1)..n {
            let factor = m[r][col] / p;
            for c in col..=n {
                let sub = factor * m[col][c];
                m[r][c] -= sub;
            }
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut s = m[r][n];
        for c in (r + 1)..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    x
}

/// Textbook scalar Kalman filter for `x_k = a x_{k-1} + v`, `y_k = x_k + w`.
#[derive(Debug, Clone)]
pub struct ScalarKalman {
    pub a: f64,
    pub process_var: f64,
    pub noise_var: f64,
    pub mean: C64,
    pub var: f64,
}

impl ScalarKalman {
    pub fn new(a: f64, process_var: f64, noise_var: f64, mean: C64, var: f64) -> Self {
        Self { a, process_var, noise_var, mean, var }
    }

    pub fn step(&mut self, y: C64) -> (C64, f64) {
        let prior_mean = self.mean * self.a;
        let prior_var = self.a * self.a * self.var + self.process_var;
        let gain = prior_var / (prior_var + self.noise_var);
        self.mean = prior_mean + (y - prior_mean) * gain;
        self.var = (1.0 - gain) * prior_var;
        (self.mean, self.var)
    }
}
