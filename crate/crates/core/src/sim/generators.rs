//! Data-generating processes and their exact target distributions.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EffectRecord};
use crate::error::{Error, Result};
use crate::normal;

/// Lognormal parameters before standardization.
const LOG_SIGMA: f64 = 0.5;

fn lognormal_mean() -> f64 {
    (LOG_SIGMA * LOG_SIGMA / 2.0).exp()
}

fn lognormal_sd() -> f64 {
    let s2 = LOG_SIGMA * LOG_SIGMA;
    ((s2.exp() - 1.0) * s2.exp()).sqrt()
}

/// Two-component normal mixture `∑ p_j N(m_j, s²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMixture {
    pub probs: [f64; 2],
    pub means: [f64; 2],
    pub sd: f64,
}

impl NormalMixture {
    /// The bimodal true-effect distribution with mean 1 and variance 1.
    pub fn bimodal() -> Self {
        let r = 2.14_f64.sqrt();
        Self { probs: [0.3, 0.7], means: [1.0 - 2.1 / r, 1.0 + 0.9 / r], sd: 0.5 / r }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (0..2).map(|j| self.probs[j] * normal::std_cdf((x - self.means[j]) / self.sd)).sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        (0..2).map(|j| self.probs[j] * normal::pdf(x, self.means[j], self.sd * self.sd)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs[0] * self.means[0] + self.probs[1] * self.means[1]
    }

    /// Inverse CDF by bisection to machine resolution.
    pub fn quantile(&self, p: f64) -> f64 {
        let span = 40.0 * self.sd + (self.means[1] - self.means[0]).abs();
        let (mut lo, mut hi) = (self.means[0].min(self.means[1]) - span, self.means[0].max(self.means[1]) + span);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Adds an independent `N(shift, var)` term.
    pub fn convolve(&self, shift: f64, var: f64) -> Self {
        Self {
            probs: self.probs,
            means: [self.means[0] + shift, self.means[1] + shift],
            sd: (self.sd * self.sd + var).sqrt(),
        }
    }

    /// Distribution of `a·X` for `a ≥ 0`.
    pub fn scale(&self, a: f64) -> Self {
        Self { probs: self.probs, means: [a * self.means[0], a * self.means[1]], sd: a * self.sd }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let j = usize::from(u >= self.probs[0]);
        let z: f64 = rng.sample(StandardNormal);
        self.means[j] + self.sd * z
    }
}

/// True-effect distribution for the single-level simulation. Each has mean
/// 1 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrueDistribution {
    Normal,
    Lognormal,
    Mixture,
}

impl TrueDistribution {
    pub fn name(&self) -> &'static str {
        match self {
            TrueDistribution::Normal => "normal",
            TrueDistribution::Lognormal => "lognormal",
            TrueDistribution::Mixture => "mixture",
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            TrueDistribution::Normal => 1.0 + rng.sample::<f64, _>(StandardNormal),
            TrueDistribution::Lognormal => {
                let x = LogNormal::new(0.0, LOG_SIGMA).expect("valid lognormal").sample(rng);
                1.0 + (x - lognormal_mean()) / lognormal_sd()
            }
            TrueDistribution::Mixture => NormalMixture::bimodal().sample(rng),
        }
    }

    pub fn cdf(&self, theta: f64) -> f64 {
        match self {
            TrueDistribution::Normal => normal::std_cdf(theta - 1.0),
            TrueDistribution::Lognormal => {
                let x = lognormal_mean() + lognormal_sd() * (theta - 1.0);
                if x <= 0.0 {
                    0.0
                } else {
                    normal::std_cdf(x.ln() / LOG_SIGMA)
                }
            }
            TrueDistribution::Mixture => NormalMixture::bimodal().cdf(theta),
        }
    }

    pub fn pdf(&self, theta: f64) -> f64 {
        match self {
            TrueDistribution::Normal => normal::pdf(theta, 1.0, 1.0),
            TrueDistribution::Lognormal => {
                let s = lognormal_sd();
                let x = lognormal_mean() + s * (theta - 1.0);
                if x <= 0.0 {
                    0.0
                } else {
                    s * normal::std_pdf(x.ln() / LOG_SIGMA) / (LOG_SIGMA * x)
                }
            }
            TrueDistribution::Mixture => NormalMixture::bimodal().pdf(theta),
        }
    }

    /// Exact `p`-quantile.
    pub fn quantile(&self, p: f64) -> f64 {
        match self {
            TrueDistribution::Normal => 1.0 + normal::std_quantile(p),
            TrueDistribution::Lognormal => {
                1.0 + ((LOG_SIGMA * normal::std_quantile(p)).exp() - lognormal_mean()) / lognormal_sd()
            }
            TrueDistribution::Mixture => NormalMixture::bimodal().quantile(p),
        }
    }
}

/// `n` independent true effects.
pub fn gen_true_effects<R: Rng + ?Sized>(dist: TrueDistribution, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Gamma scale giving harmonic-mean variance `(10 − 1)·scale` that matches
/// `I² = 1/(1 + v̄)` with unit heterogeneity.
pub fn gamma_scale(i2: f64) -> Result<f64> {
    const TABLE: [(f64, f64); 3] = [(0.2, 4.0 / 9.0), (0.5, 1.0 / 9.0), (0.8, 0.25 / 9.0)];
    TABLE
        .iter()
        .find(|(target, _)| (target - i2).abs() < 1e-9)
        .map(|&(_, s)| s)
        .ok_or_else(|| Error::Config(format!("I2 target must be one of 0.2, 0.5, 0.8, got {i2}")))
}

/// Within-study variances `v_i ~ Gamma(shape 10, scale)`.
pub fn gen_variances<R: Rng + ?Sized>(i2: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(10.0, gamma_scale(i2)?).expect("valid gamma");
    Ok((0..n).map(|_| gamma.sample(rng)).collect())
}

/// Single-level dataset: `y_i = θ_i + e_i`, `e_i ~ N(0, v_i)`.
pub fn gen_sim1<R: Rng + ?Sized>(dist: TrueDistribution, n: usize, i2: f64, rng: &mut R) -> Result<Dataset> {
    let theta = gen_true_effects(dist, n, rng);
    let v = gen_variances(i2, n, rng)?;
    let y: Vec<f64> = theta.iter().zip(&v).map(|(t, vi)| t + vi.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
    Dataset::from_effects(&y, &v)
}

/// The bimodal mixture recentered to mean 0 (variance stays 1).
pub fn cluster_effect_distribution() -> NormalMixture {
    let m = NormalMixture::bimodal();
    m.convolve(-m.mean(), 0.0)
}

/// True-effect distribution at `x = 0` in the clustered design:
/// `√r·s + √(1−r)·u`.
pub fn sim2_true_distribution(r: f64) -> NormalMixture {
    cluster_effect_distribution().scale(r.sqrt()).convolve(0.0, 1.0 - r)
}

/// Exact quantiles of `√r·s + √(1−r)·u`.
pub fn true_quantiles_sim2(r: f64, probs: &[f64]) -> Vec<f64> {
    let dist = sim2_true_distribution(r);
    probs.iter().map(|&p| dist.quantile(p)).collect()
}

/// Slope of the cluster-level covariate in the clustered design.
pub const SIM2_BETA: f64 = 1.0;

/// Clustered dataset with `m` clusters of size `1 + Poisson(3)`:
/// `y_ij = β·x_i + √r·s_i + √(1−r)·u_ij + e_ij`, covariate `x`, cluster
/// labels `1..=m`.
pub fn gen_sim2<R: Rng + ?Sized>(m: usize, r: f64, i2: f64, rng: &mut R) -> Result<Dataset> {
    if m < 2 {
        return Err(Error::Config(format!("need at least 2 clusters, got {m}")));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Config(format!("r must be in [0, 1], got {r}")));
    }
    let gamma = Gamma::new(10.0, gamma_scale(i2)?).expect("valid gamma");
    let poisson = Poisson::new(3.0).expect("valid poisson");
    let s_dist = cluster_effect_distribution();
    let mut records = Vec::new();
    for c in 0..m {
        let size = 1 + poisson.sample(rng) as usize;
        let x: f64 = rng.sample(StandardNormal);
        let s = s_dist.sample(rng);
        for _ in 0..size {
            let u: f64 = rng.sample(StandardNormal);
            let v = gamma.sample(rng);
            let e = v.sqrt() * rng.sample::<f64, _>(StandardNormal);
            let y = SIM2_BETA * x + r.sqrt() * s + (1.0 - r).sqrt() * u + e;
            records.push(EffectRecord { y, v, x: vec![x], cluster: Some((c + 1).to_string()) });
        }
    }
    Dataset::with_names(records, vec!["x".into()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixture_components_give_unit_moments() {
        let m = NormalMixture::bimodal();
        let mean = m.mean();
        let var: f64 = (0..2).map(|j| m.probs[j] * (m.sd * m.sd + m.means[j] * m.means[j])).sum::<f64>() - mean * mean;
        assert!((mean - 1.0).abs() < 1e-14);
        assert!((var - 1.0).abs() < 1e-14);
    }

    #[test]
    fn adverse_effect_probabilities() {
        assert!((TrueDistribution::Mixture.cdf(0.0) - 0.27).abs() < 0.005);
        assert!((TrueDistribution::Lognormal.cdf(0.0) - 0.10).abs() < 0.005);
    }

    #[test]
    fn quantiles_invert_cdfs() {
        for dist in [TrueDistribution::Normal, TrueDistribution::Lognormal, TrueDistribution::Mixture] {
            for &p in &[0.1, 0.25, 0.5, 0.75, 0.9] {
                let q = dist.quantile(p);
                assert!((dist.cdf(q) - p).abs() < 1e-10, "{dist:?} {p}");
            }
        }
    }

    #[test]
    fn pdfs_integrate_to_one() {
        for dist in [TrueDistribution::Normal, TrueDistribution::Lognormal, TrueDistribution::Mixture] {
            let (a, b, m) = (-9.0, 40.0, 50000);
            let h = (b - a) / m as f64;
            let total: f64 = (0..=m).map(|i| dist.pdf(a + h * i as f64)).sum::<f64>() * h;
            assert!((total - 1.0).abs() < 1e-6, "{dist:?} {total}");
        }
    }

    #[test]
    fn gamma_scales() {
        assert_eq!(gamma_scale(0.8).unwrap(), 0.25 / 9.0);
        assert_eq!(gamma_scale(0.5).unwrap(), 1.0 / 9.0);
        assert_eq!(gamma_scale(0.2).unwrap(), 4.0 / 9.0);
        assert!(gamma_scale(0.3).is_err());
    }

    #[test]
    fn variances_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gen_variances(0.2, 10_000, &mut rng).unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn sim2_quantiles() {
        let q = true_quantiles_sim2(0.0, &[0.5, 0.975]);
        assert!(q[0].abs() < 1e-12);
        assert!((q[1] - 1.959_963_984_540_054).abs() < 1e-9);
        for r in [0.0, 0.4, 0.8, 1.0] {
            let d = sim2_true_distribution(r);
            for &p in &[0.1, 0.25, 0.5, 0.75, 0.9] {
                assert!((d.cdf(d.quantile(p)) - p).abs() < 1e-10);
            }
            assert!(d.mean().abs() < 1e-14);
        }
    }

    #[test]
    fn sim2_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = gen_sim2(50, 0.4, 0.5, &mut rng).unwrap();
        assert_eq!(data.m(), 50);
        assert!(data.n() >= 50);
        for cluster in data.cluster_index() {
            let x0 = data.records()[cluster[0]].x[0];
            assert!(cluster.iter().all(|&i| data.records()[i].x[0] == x0));
        }
    }

    #[test]
    fn sim2_zero_r_has_unit_variance() {
        let d = sim2_true_distribution(0.0);
        assert_eq!(d.sd, 1.0);
        assert_eq!(d.means, [0.0, 0.0]);
    }
}
