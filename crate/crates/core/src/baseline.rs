//! Normal-normal random-effects model fitted by maximum likelihood.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::inference::{delta_ci, DerivedQuantity, Estimate, ProbabilityScale, QuantityKind};
use crate::normal;

const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct NormalFit {
    pub mu: f64,
    pub tau2: f64,
    pub se_mu: f64,
    pub se_tau2: f64,
    pub loglik: f64,
    pub aic: f64,
    /// Covariance of `(μ̂, τ̂²)` from the inverse observed information.
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
    /// τ̂² sits on the zero boundary; its Wald interval is one-sided in truth.
    pub boundary: bool,
    pub iterations: usize,
}

/// Log-likelihood of `y_i ~ N(μ, v_i + τ²)`.
pub fn loglik(y: &[f64], v: &[f64], mu: f64, tau2: f64) -> f64 {
    y.iter().zip(v).map(|(&yi, &vi)| normal::log_pdf(yi, mu, vi + tau2)).sum()
}

/// Weighted mean with weights `1/(v_i + τ²)`.
pub fn weighted_mean(y: &[f64], v: &[f64], tau2: f64) -> f64 {
    let (num, den) = y
        .iter()
        .zip(v)
        .fold((0.0, 0.0), |(n, d), (&yi, &vi)| (n + yi / (vi + tau2), d + 1.0 / (vi + tau2)));
    num / den
}

fn profile(y: &[f64], v: &[f64], tau2: f64) -> f64 {
    loglik(y, v, weighted_mean(y, v, tau2), tau2)
}

/// Profile score and curvature in τ².
fn profile_derivatives(y: &[f64], v: &[f64], tau2: f64) -> (f64, f64, f64) {
    let mu = weighted_mean(y, v, tau2);
    let (mut g, mut h_tt, mut h_mt, mut h_mm) = (0.0, 0.0, 0.0, 0.0);
    for (&yi, &vi) in y.iter().zip(v) {
        let a = vi + tau2;
        let r = yi - mu;
        g += 0.5 * (r * r / (a * a) - 1.0 / a);
        h_tt += 0.5 / (a * a) - r * r / (a * a * a);
        h_mt -= r / (a * a);
        h_mm -= 1.0 / a;
    }
    let expected = y.iter().zip(v).map(|(_, &vi)| 0.5 / ((vi + tau2) * (vi + tau2))).sum();
    (g, h_tt - h_mt * h_mt / h_mm, expected)
}

/// Maximum-likelihood fit by profile iteration: μ̂ is the weighted mean at
/// the current τ², and τ² takes projected Newton steps (Fisher scoring when
/// the profile is not locally concave) with step halving.
pub fn fit_ml(dataset: &Dataset) -> Result<NormalFit> {
    dataset.require_fittable()?;
    let y = dataset.y();
    let v = dataset.v();
    fit_ml_slices(&y, &v)
}

pub fn fit_ml_slices(y: &[f64], v: &[f64]) -> Result<NormalFit> {
    let n = y.len();
    if n < 3 || v.len() != n {
        return Err(Error::InvalidData(format!("normal model needs at least 3 effects, found {n}")));
    }
    // Method-of-moments start.
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|yi| (yi - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let mut tau2 = (var - v.iter().sum::<f64>() / n as f64).max(0.0);
    let mut f = profile(y, v, tau2);
    let mut trace = vec![tau2];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=MAX_ITER {
        iterations = it;
        let (g, h, expected) = profile_derivatives(y, v, tau2);
        if tau2 == 0.0 && g <= 0.0 {
            converged = true;
            break;
        }
        let step = if h < 0.0 { -g / h } else { g / expected };
        let mut next = (tau2 + step).max(0.0);
        let mut fn_ = profile(y, v, next);
        // Below the rounding noise of the profile, trust the Newton step.
        if 0.5 * g * (next - tau2) > 1e-12 * (1.0 + f.abs()) {
            let mut t = 1.0;
            while fn_ < f && t > 1e-10 {
                t *= 0.5;
                next = (tau2 + t * step).max(0.0);
                fn_ = profile(y, v, next);
            }
            if fn_ < f {
                next = tau2;
                fn_ = f;
            }
        }
        let moved = (next - tau2).abs();
        tau2 = next;
        f = fn_;
        trace.push(tau2);
        if moved <= 1e-13 * (1.0 + tau2) || g.abs() <= 1e-14 * expected.sqrt().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "normal ML fit did not converge in {MAX_ITER} iterations; tau2 trace tail {:?}",
            &trace[trace.len().saturating_sub(5)..]
        )));
    }
    let mu = weighted_mean(y, v, tau2);
    let boundary = tau2 == 0.0;

    // Observed information of (μ, τ²).
    let (mut i_mm, mut i_mt, mut i_tt) = (0.0, 0.0, 0.0);
    for (&yi, &vi) in y.iter().zip(v) {
        let a = vi + tau2;
        let r = yi - mu;
        i_mm += 1.0 / a;
        i_mt += r / (a * a);
        i_tt += r * r / (a * a * a) - 0.5 / (a * a);
    }
    if i_tt <= 0.0 {
        // Observed curvature is not informative at the boundary; use the
        // expected information there.
        i_tt = v.iter().map(|&vi| 0.5 / ((vi + tau2) * (vi + tau2))).sum();
        i_mt = 0.0;
    }
    let info = DMatrix::from_row_slice(2, 2, &[i_mm, i_mt, i_mt, i_tt]);
    let vcov = info
        .try_inverse()
        .ok_or_else(|| Error::Singular("normal-model information matrix".into()))?;
    let ll = loglik(y, v, mu, tau2);
    Ok(NormalFit {
        mu,
        tau2,
        se_mu: vcov[(0, 0)].max(0.0).sqrt(),
        se_tau2: vcov[(1, 1)].max(0.0).sqrt(),
        loglik: ll,
        aic: -2.0 * ll + 4.0,
        vcov,
        boundary,
        iterations,
    })
}

impl NormalFit {
    /// `−2·loglik + 2·2`.
    pub fn aic(&self) -> f64 {
        self.aic
    }

    pub fn mean_ci(&self, level: f64) -> DerivedQuantity {
        let est = Estimate { value: self.mu, grad: Some(DVector::from_vec(vec![1.0, 0.0])) };
        delta_ci(QuantityKind::Mean, &est, &self.vcov, level, ProbabilityScale::Identity)
            .expect("vcov is positive definite")
    }

    pub fn variance_ci(&self, level: f64) -> DerivedQuantity {
        let est = Estimate { value: self.tau2, grad: Some(DVector::from_vec(vec![0.0, 1.0])) };
        delta_ci(QuantityKind::Variance, &est, &self.vcov, level, ProbabilityScale::Identity)
            .expect("vcov is positive definite")
    }

    /// Normal density of true effects at the estimates (zero-width when
    /// τ̂² = 0, which yields 0 everywhere here).
    pub fn pdf(&self, theta: f64) -> f64 {
        if self.tau2 > 0.0 {
            normal::pdf(theta, self.mu, self.tau2)
        } else {
            0.0
        }
    }

    /// `P(θ < t) = Φ((t − μ̂)/τ̂)` with a delta-method CI through (μ̂, τ̂²).
    pub fn tail_prob(&self, threshold: f64, level: f64) -> DerivedQuantity {
        let kind = QuantityKind::TailProb { threshold };
        if self.tau2 <= 0.0 {
            let p = if threshold > self.mu { 1.0 } else { 0.0 };
            return DerivedQuantity::unavailable(kind, p, level);
        }
        let tau = self.tau2.sqrt();
        let z = (threshold - self.mu) / tau;
        let dens = normal::std_pdf(z);
        let grad = DVector::from_vec(vec![-dens / tau, -dens * (threshold - self.mu) / (2.0 * tau * self.tau2)]);
        let est = Estimate { value: normal::std_cdf(z), grad: Some(grad) };
        delta_ci(kind, &est, &self.vcov, level, ProbabilityScale::Identity).expect("vcov is positive definite")
    }
}

/// `−2·loglik + 4`.
pub fn normal_aic(fit: &NormalFit) -> f64 {
    fit.aic
}
