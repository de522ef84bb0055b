//! Scalar normal-distribution helpers.

use statrs::distribution::{ContinuousCDF, Normal};


pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Log density of N(mean, var) at `x`.
#[inline]
pub fn log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * d * d / var
}

#[inline]
pub fn pdf(x: f64, mean: f64, var: f64) -> f64 {
    log_pdf(x, mean, var).exp()
}

/// Standard normal density.
#[inline]
pub fn std_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, accurate in both tails.
#[inline]
pub fn std_cdf(z: f64) -> f64 {
    if z.is_infinite() {
        return if z > 0.0 { 1.0 } else { 0.0 };
    }
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile. One Newton step on top of the statrs inverse
/// brings the result to within an ulp or two of the exact value.
pub fn std_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let z = Normal::standard().inverse_cdf(p);
    let dens = std_pdf(z);
    if dens > 0.0 && z.is_finite() {
        z - (std_cdf(z) - p) / dens
    } else {
        z
    }
}

/// Two-sided critical value for a central interval at `level`.
pub fn critical_value(level: f64) -> f64 {
    std_quantile(0.5 + 0.5 * level)
}
