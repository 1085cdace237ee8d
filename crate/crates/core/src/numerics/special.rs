//! Gaussian and chi-squared distribution functions.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density and distribution function at `x`.
pub fn normal_pdf_cdf(x: f64) -> (f64, f64) {
    if x.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    let cdf = 0.5 * libm::erfc(-x / SQRT_2);
    (pdf, cdf)
}

/// `log N(x; mean, var)`
pub fn normal_log_density(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * PI * var).ln() + d * d / var)
}

/// Regularized lower incomplete gamma function `P(a, x)`.
///
/// Series expansion below `a + 1`, Lentz continued fraction for the upper
/// tail above it.
pub fn regularized_lower_gamma(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let log_prefactor = a * x.ln() - x - libm::lgamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..1_000_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefactor).exp().min(1.0)
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1_000_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (1.0 - (h.ln() + log_prefactor).exp()).max(0.0)
    }
}

pub fn chi2_cdf(dof: u64, x: f64) -> f64 {
    regularized_lower_gamma(dof as f64 / 2.0, x / 2.0)
}

/// Inverse of [`chi2_cdf`] by bisection.
pub fn chi2_quantile(dof: u64, p: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidArgument("chi-squared needs dof >= 1".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let k = dof as f64;
    let mut lo = 0.0;
    let mut hi = k.max(1.0);
    while chi2_cdf(dof, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(dof, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent CDF for dof=1: P(chi2_1 <= x) = erf(sqrt(x/2)).
    fn chi2_1_cdf(x: f64) -> f64 {
        libm::erf((x / 2.0).sqrt())
    }

    #[test]
    fn normal_reference_points() {
        let (pdf, cdf) = normal_pdf_cdf(0.0);
        assert!((pdf - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(cdf, 0.5);
        let (pdf, cdf) = normal_pdf_cdf(40.0);
        assert!(pdf < 1e-300);
        assert_eq!(cdf, 1.0);
        let (_, cdf) = normal_pdf_cdf(1.644_853_626_951_472_2);
        assert!((cdf - 0.95).abs() < 1e-12);
        let (_, lower) = normal_pdf_cdf(-8.0);
        assert!((lower - 6.220_960_574_271_785e-16).abs() < 1e-27);
    }

    #[test]
    fn chi2_two_dof_median_is_two_ln_two() {
        let q = chi2_quantile(2, 0.5).unwrap();
        assert!((q - 2.0 * std::f64::consts::LN_2).abs() < 1e-10);
        // closed form CDF for dof 2
        for x in [0.1, 1.0, 3.0, 10.0] {
            assert!((chi2_cdf(2, x) - (1.0 - (-x / 2.0).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn chi2_one_dof_median_matches_bisection_oracle() {
        let (mut lo, mut hi) = (0.0_f64, 10.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chi2_1_cdf(mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((oracle - 0.454_936).abs() < 1e-6);
        let q = chi2_quantile(1, 0.5).unwrap();
        assert!((q - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn chi2_large_dof_matches_wilson_hilferty() {
        let k = 100_000_u64;
        let q = chi2_quantile(k, 0.95).unwrap();
        // Wilson-Hilferty: k (1 - 2/(9k) + z sqrt(2/(9k)))^3
        let kf = k as f64;
        let z = 1.644_853_626_951_472_2;
        let wh = kf * (1.0 - 2.0 / (9.0 * kf) + z * (2.0 / (9.0 * kf)).sqrt()).powi(3);
        assert!((q / kf - 1.00737).abs() < 1e-5);
        assert!((q - wh).abs() / wh < 1e-6);
    }

    #[test]
    fn quantile_rejects_bad_probability() {
        assert!(matches!(chi2_quantile(3, 0.0), Err(Error::InvalidProbability(_))));
        assert!(matches!(chi2_quantile(3, 1.0), Err(Error::InvalidProbability(_))));
        assert!(chi2_quantile(0, 0.5).is_err());
    }

    #[test]
    fn cdf_inverts_quantile() {
        for &k in &[1_u64, 2, 5, 30, 1000, 200_000] {
            for &p in &[0.001, 0.05, 0.5, 0.95, 0.999] {
                let q = chi2_quantile(k, p).unwrap();
                assert!((chi2_cdf(k, q) - p).abs() < 1e-8, "k={k} p={p}");
            }
        }
    }
}
