//! Covariance estimation and delta-method inference for functionals of a
//! fitted mixture density.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mixture::MixtureWeights;
use crate::normal;
use crate::optimizer::solve_information;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceFlavor {
    ModelBased,
    ClusterRobust,
}

/// Sandwich covariance over the free parameters.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub flavor: CovarianceFlavor,
    /// Clusters used for the robust meat.
    pub clusters: Option<usize>,
}

impl CovarianceEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Standard errors of the raw parameters.
    pub fn std_errors(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// `J_p⁻¹ M J_p⁻¹` via two solves.
fn sandwich(jp: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let left = solve_information(jp, meat)?;
    let mut v = solve_information(jp, &left.transpose())?;
    crate::mixture::symmetrize(&mut v);
    Ok(v)
}

/// Model-based covariance `J_p⁻¹ J J_p⁻¹`.
///
/// The observed information `J` is evaluated at the penalized optimum, not
/// the unpenalized one, and can be indefinite there. Negative eigenvalues
/// are clipped to zero so the result is a valid covariance.
pub fn covariance_model_based(jp: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    let meat = psd_part(j);
    Ok(CovarianceEstimate { matrix: sandwich(jp, &meat)?, flavor: CovarianceFlavor::ModelBased, clusters: None })
}

/// Projection of a symmetric matrix onto the PSD cone; returned unchanged
/// when already PSD.
pub fn psd_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.clone().cholesky().is_some() {
        return a.clone();
    }
    let eig = a.clone().symmetric_eigen();
    if eig.eigenvalues.min() >= 0.0 {
        return a.clone();
    }
    log::debug!("clipping negative eigenvalues of the observed information (min {:.3e})", eig.eigenvalues.min());
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    crate::mixture::symmetrize(&mut out);
    out
}

/// Cluster-robust covariance `J_p⁻¹ J_CR J_p⁻¹` with
/// `J_CR = ∑_m s_m s_mᵀ` over cluster-summed scores. With
/// `small_sample` the meat is scaled by M/(M−1).
pub fn covariance_cluster_robust(
    scores: &DMatrix<f64>,
    clusters: &[Vec<usize>],
    jp: &DMatrix<f64>,
    small_sample: bool,
) -> Result<CovarianceEstimate> {
    let q = scores.ncols();
    if jp.nrows() != q {
        return Err(Error::Dimension(format!("scores have {q} columns, information is {}", jp.nrows())));
    }
    let m = clusters.len();
    if m < q {
        log::warn!("{m} clusters for {q} parameters: the cluster-robust meat is rank deficient");
    }
    let meat = cluster_meat(scores, clusters);
    let meat = if small_sample && m > 1 { meat * (m as f64 / (m as f64 - 1.0)) } else { meat };
    Ok(CovarianceEstimate {
        matrix: sandwich(jp, &meat)?,
        flavor: CovarianceFlavor::ClusterRobust,
        clusters: Some(m),
    })
}

/// `∑_m s_m s_mᵀ`.
pub fn cluster_meat(scores: &DMatrix<f64>, clusters: &[Vec<usize>]) -> DMatrix<f64> {
    let q = scores.ncols();
    let mut agg = DMatrix::zeros(clusters.len(), q);
    for (m, members) in clusters.iter().enumerate() {
        for &i in members {
            let mut row = agg.row_mut(m);
            row += scores.row(i);
        }
    }
    agg.tr_mul(&agg)
}

/// A scalar estimate with its gradient with respect to the free parameters.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub value: f64,
    /// `None` when the gradient does not exist (e.g. flat density at a quantile).
    pub grad: Option<DVector<f64>>,
}

/// Fitted true-effect density at one covariate setting, with the derivatives
/// of its weights and shift with respect to the free parameters.
#[derive(Debug, Clone)]
pub struct MixtureView<'a> {
    pub grid: &'a Grid,
    pub weights: MixtureWeights,
    /// Common translation of every component mean.
    pub shift: f64,
    /// K×q Jacobian of the weights.
    pub weight_jacobian: DMatrix<f64>,
    /// Gradient of the shift, length q.
    pub shift_gradient: DVector<f64>,
}

impl<'a> MixtureView<'a> {
    /// View whose weights are `softmax(C·α)` with `α` the first K−1
    /// parameters of a q-vector.
    pub fn new(grid: &'a Grid, weights: MixtureWeights, weight_jacobian: DMatrix<f64>, shift: f64, shift_gradient: DVector<f64>) -> Self {
        Self { grid, weights, shift, weight_jacobian, shift_gradient }
    }

    fn w(&self) -> &DVector<f64> {
        &self.weights.0
    }

    fn chain(&self, d_w: &DVector<f64>, d_shift: f64) -> DVector<f64> {
        self.weight_jacobian.tr_mul(d_w) + &self.shift_gradient * d_shift
    }

    /// `∑ (μ_k + shift) w_k`.
    pub fn mean(&self) -> Estimate {
        let mu = self.grid.mu();
        let value = self.shift + mu.iter().zip(self.w().iter()).map(|(m, w)| m * w).sum::<f64>();
        let d_w = DVector::from_column_slice(mu);
        Estimate { value, grad: Some(self.chain(&d_w, 1.0)) }
    }

    /// `τ_c² + ∑ μ_k² w_k − (∑ μ_k w_k)²`.
    pub fn variance(&self) -> Estimate {
        let mu = self.grid.mu();
        let w = self.w();
        let m1: f64 = mu.iter().zip(w.iter()).map(|(m, w)| m * w).sum();
        let m2: f64 = mu.iter().zip(w.iter()).map(|(m, w)| m * m * w).sum();
        let value = self.grid.tau_c().powi(2) + m2 - m1 * m1;
        let d_w = DVector::from_iterator(mu.len(), mu.iter().map(|m| m * m - 2.0 * m1 * m));
        Estimate { value, grad: Some(self.chain(&d_w, 0.0)) }
    }

    pub fn pdf(&self, theta: f64) -> Estimate {
        let phi = self.grid.pdf_vector(theta, self.shift);
        let value = phi.dot(self.w());
        let tc2 = self.grid.tau_c().powi(2);
        let slope: f64 = self
            .grid
            .mu()
            .iter()
            .zip(phi.iter().zip(self.w().iter()))
            .map(|(m, (p, w))| w * p * (theta - m - self.shift) / tc2)
            .sum();
        Estimate { value, grad: Some(self.chain(&phi, slope)) }
    }

    pub fn pdf_value(&self, theta: f64) -> f64 {
        self.grid.pdf_vector(theta, self.shift).dot(self.w())
    }

    pub fn cdf_value(&self, theta: f64) -> f64 {
        self.grid.cdf_vector(theta, self.shift).dot(self.w()).clamp(0.0, 1.0)
    }

    /// `P(θ < t)`.
    pub fn cdf(&self, theta: f64) -> Estimate {
        let big_phi = self.grid.cdf_vector(theta, self.shift);
        let value = big_phi.dot(self.w()).clamp(0.0, 1.0);
        let dens = self.pdf_value(theta);
        Estimate { value, grad: Some(self.chain(&big_phi, -dens)) }
    }

    /// Bracket searched by [`MixtureView::quantile`].
    pub fn support(&self) -> (f64, f64) {
        let pad = 6.0 * self.grid.tau_c();
        (self.grid.lower() + self.shift - pad, self.grid.upper() + self.shift + pad)
    }

    pub fn quantile_value(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = self.support();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = self.grid.cdf_vector(mid, self.shift).dot(self.w());
            if (f - p).abs() <= 1e-12 {
                return mid;
            }
            if f < p {
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

    /// Inverse CDF by bisection; gradient from the implicit function theorem.
    pub fn quantile(&self, p: f64) -> Result<Estimate> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("quantile level must be in (0, 1), got {p}")));
        }
        let q = self.quantile_value(p);
        let dens = self.pdf_value(q);
        let grad = (dens >= 1e-12).then(|| {
            let big_phi = self.grid.cdf_vector(q, self.shift);
            -self.chain(&big_phi, -dens) / dens
        });
        Ok(Estimate { value: q, grad })
    }
}

/// What a [`DerivedQuantity`] measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuantityKind {
    Mean,
    Variance,
    Pdf { theta: f64 },
    Cdf { theta: f64 },
    TailProb { threshold: f64 },
    Quantile { p: f64 },
    PredictionBound { p: f64 },
    Coefficient { index: usize },
}

impl QuantityKind {
    pub fn is_probability(&self) -> bool {
        matches!(self, QuantityKind::Cdf { .. } | QuantityKind::TailProb { .. })
    }
}

/// Scale on which CIs for probabilities are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbabilityScale {
    /// Plain delta method, clamped to [0, 1].
    #[default]
    Identity,
    /// Delta method on logit(p), back-transformed.
    Logit,
}

/// Point estimate with delta-method standard error and CI.
#[derive(Debug, Clone, Serialize)]
pub struct DerivedQuantity {
    #[serde(flatten)]
    pub kind: QuantityKind,
    pub estimate: f64,
    /// NaN when unavailable.
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    /// Covariate value the quantity is conditioned on, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at: Option<f64>,
}

impl DerivedQuantity {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lower <= truth && truth <= self.ci_upper
    }

    pub fn unavailable(kind: QuantityKind, estimate: f64, level: f64) -> Self {
        Self { kind, estimate, se: f64::NAN, ci_lower: f64::NAN, ci_upper: f64::NAN, level, at: None }
    }
}

/// `se = sqrt(gᵀVg)`; small negative quadratic forms (≥ −1e−12) are clamped
/// to zero, larger ones are an error.
pub fn delta_se(grad: &DVector<f64>, v: &DMatrix<f64>) -> Result<f64> {
    if grad.len() != v.nrows() {
        return Err(Error::Dimension(format!("gradient has {} entries, covariance is {}", grad.len(), v.nrows())));
    }
    let var = grad.dot(&(v * grad));
    if var < -1e-12 {
        return Err(Error::Numerical { iteration: 0, message: format!("negative delta-method variance {var:.3e}") });
    }
    Ok(var.max(0.0).sqrt())
}

/// Standard error and Wald CI for an estimate.
pub fn delta_ci(
    kind: QuantityKind,
    est: &Estimate,
    v: &DMatrix<f64>,
    level: f64,
    scale: ProbabilityScale,
) -> Result<DerivedQuantity> {
    let Some(grad) = &est.grad else {
        return Ok(DerivedQuantity::unavailable(kind, est.value, level));
    };
    let se = delta_se(grad, v)?;
    let z = normal::critical_value(level);
    let (mut lo, mut hi) = (est.value - z * se, est.value + z * se);
    if kind.is_probability() {
        if scale == ProbabilityScale::Logit && est.value > 0.0 && est.value < 1.0 {
            let p = est.value;
            let l = (p / (1.0 - p)).ln();
            let sl = se / (p * (1.0 - p));
            let inv = |x: f64| 1.0 / (1.0 + (-x).exp());
            lo = inv(l - z * sl);
            hi = inv(l + z * sl);
        }
        lo = lo.clamp(0.0, 1.0);
        hi = hi.clamp(0.0, 1.0);
    }
    Ok(DerivedQuantity { kind, estimate: est.value, se, ci_lower: lo, ci_upper: hi, level, at: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ConstraintMatrix, DEFAULT_C};
    use crate::mixture::softmax_weights;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn view_for<'a>(grid: &'a Grid, alpha: &[f64]) -> MixtureView<'a> {
        let c = ConstraintMatrix::new(grid.k()).unwrap();
        let w = softmax_weights(alpha, &c);
        let jac = c.reduce_cols(&w.softmax_jacobian());
        let q = c.free();
        MixtureView::new(grid, w, jac, 0.0, DVector::zeros(q))
    }

    fn spd(q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(q, q) * 0.5
    }

    #[test]
    fn model_based_reduces_to_inverse_information() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = spd(5, &mut rng);
        let inv = j.clone().try_inverse().unwrap();
        let v = covariance_model_based(&j, &j).unwrap();
        assert!((&v.matrix - &inv).amax() < 1e-10);
        let v2 = covariance_model_based(&(&j * 2.0), &j).unwrap();
        assert!((&v2.matrix - &inv / 4.0).amax() < 1e-10);
    }

    #[test]
    fn model_based_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let j = spd(6, &mut rng);
            let pen = spd(6, &mut rng);
            let jp = &j + &pen * 0.7;
            let inv = jp.clone().try_inverse().unwrap();
            let naive = &inv * &j * &inv;
            let v = covariance_model_based(&jp, &j).unwrap();
            assert!((&v.matrix - naive).amax() < 1e-10);
        }
    }

    #[test]
    fn singular_information_is_error() {
        let z = DMatrix::zeros(3, 3);
        assert!(covariance_model_based(&z, &z).is_err());
    }

    #[test]
    fn singleton_clusters_give_outer_product_meat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let parts: Vec<Vec<usize>> = (0..12).map(|i| vec![i]).collect();
        assert!((cluster_meat(&s, &parts) - s.tr_mul(&s)).amax() < 1e-14);
    }

    #[test]
    fn duplicated_records_quadruple_meat() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let doubled = DMatrix::from_fn(12, 2, |i, j| s[(i / 2, j)]);
        let single: Vec<Vec<usize>> = (0..6).map(|i| vec![i]).collect();
        let pairs: Vec<Vec<usize>> = (0..6).map(|i| vec![2 * i, 2 * i + 1]).collect();
        let a = cluster_meat(&s, &single);
        let b = cluster_meat(&doubled, &pairs);
        assert!((b - a * 4.0).amax() < 1e-12);
    }

    #[test]
    fn robust_covariance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = DMatrix::from_fn(11, 3, |_, _| rng.random_range(-1.0..1.0));
        let parts = vec![vec![0, 1, 2], vec![3], vec![4, 5], vec![6, 7, 8, 9], vec![10]];
        let jp = spd(3, &mut rng);
        let inv = jp.clone().try_inverse().unwrap();
        let mut meat = DMatrix::zeros(3, 3);
        for p in &parts {
            let mut sm = DVector::zeros(3);
            for &i in p {
                sm += s.row(i).transpose();
            }
            meat += &sm * sm.transpose();
        }
        let naive = &inv * meat * &inv;
        let v = covariance_cluster_robust(&s, &parts, &jp, false).unwrap();
        assert!((&v.matrix - &naive).amax() < 1e-10);
        assert_eq!(v.clusters, Some(5));
        let vs = covariance_cluster_robust(&s, &parts, &jp, true).unwrap();
        assert!((&vs.matrix - naive * 1.25).amax() < 1e-10);
    }

    #[test]
    fn uniform_symmetric_mean_and_median() {
        let g = Grid::from_range(-1.0, 3.0, 9, DEFAULT_C).unwrap();
        let v = view_for(&g, &[0.0; 8]);
        assert!((v.mean().value - 1.0).abs() < 1e-14);
        assert!((v.cdf(1.0).value - 0.5).abs() < 1e-14);
        assert!((v.quantile(0.5).unwrap().value - 1.0).abs() < 1e-10);
        let mu = g.mu();
        let m1 = mu.iter().sum::<f64>() / 9.0;
        let m2 = mu.iter().map(|m| m * m).sum::<f64>() / 9.0;
        assert!((v.variance().value - (g.tau_c().powi(2) + m2 - m1 * m1)).abs() < 1e-13);
    }

    #[test]
    fn single_component_moments() {
        let g = Grid::from_range(-1.0, 3.0, 9, DEFAULT_C).unwrap();
        // The reference entry is pinned at 0, so push component 7 far above it.
        let mut alpha = vec![0.0; 8];
        alpha[6] = 800.0; // full index 7
        let v = view_for(&g, &alpha);
        assert!((v.mean().value - g.mu()[7]).abs() < 1e-12);
        assert!((v.variance().value - g.tau_c().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let g = Grid::from_range(-2.0, 3.0, 10, DEFAULT_C).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let alpha: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let view = view_for(&g, &alpha);
        type F = fn(&MixtureView, f64) -> Estimate;
        let cases: Vec<(&str, F, f64)> = vec![
            ("mean", |v, _| v.mean(), 1e-7),
            ("variance", |v, _| v.variance(), 1e-7),
            ("cdf", |v, t| v.cdf(t), 1e-7),
            ("pdf", |v, t| v.pdf(t), 1e-7),
            ("quantile", |v, p| v.quantile(p).unwrap(), 1e-5),
        ];
        for (name, f, tol) in cases {
            let arg = if name == "quantile" { 0.3 } else { 0.4 };
            let est = f(&view, arg);
            let grad = est.grad.unwrap();
            let h = 1e-6;
            for j in 0..9 {
                let mut a = alpha.clone();
                a[j] += h;
                let up = f(&view_for(&g, &a), arg).value;
                a[j] -= 2.0 * h;
                let dn = f(&view_for(&g, &a), arg).value;
                let fd = (up - dn) / (2.0 * h);
                let rel = (fd - grad[j]).abs() / grad.amax().max(1e-3);
                assert!(rel < tol, "{name} j={j}: fd {fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn shift_gradient_chains_through_location() {
        let g = Grid::from_range(-2.0, 3.0, 10, DEFAULT_C).unwrap();
        let c = ConstraintMatrix::new(10).unwrap();
        let alpha = [0.1, 0.2, -0.3, 0.4, 0.0, 0.1, -0.2, 0.3, 0.2];
        let beta = 0.35;
        let xval = 1.7;
        let make = |a: &[f64], b: f64| {
            let w = softmax_weights(a, &c);
            let mut jac = DMatrix::zeros(10, 10);
            jac.view_mut((0, 0), (10, 9)).copy_from(&c.reduce_cols(&w.softmax_jacobian()));
            let mut sg = DVector::zeros(10);
            sg[9] = xval;
            MixtureView::new(&g, w, jac, b * xval, sg)
        };
        let v = make(&alpha, beta);
        let gq = v.quantile(0.7).unwrap().grad.unwrap();
        let gc = v.cdf(0.9).grad.unwrap();
        let h = 1e-6;
        let fq = (make(&alpha, beta + h).quantile_value(0.7) - make(&alpha, beta - h).quantile_value(0.7)) / (2.0 * h);
        let fc = (make(&alpha, beta + h).cdf_value(0.9) - make(&alpha, beta - h).cdf_value(0.9)) / (2.0 * h);
        assert!((fq - gq[9]).abs() < 1e-6 && (fq - xval).abs() < 1e-6);
        assert!((fc - gc[9]).abs() < 1e-7);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let g = Grid::from_range(-2.0, 3.0, 12, DEFAULT_C).unwrap();
        let alpha: Vec<f64> = (0..11).map(|j| ((j as f64) * 0.9).sin()).collect();
        let v = view_for(&g, &alpha);
        for p in [0.025, 0.1, 0.5, 0.9, 0.975] {
            let q = v.quantile(p).unwrap().value;
            assert!((v.cdf_value(q) - p).abs() < 1e-10, "p={p}");
        }
        assert!(v.quantile(0.0).is_err());
    }

    #[test]
    fn cdf_limits_and_monotone() {
        let g = Grid::from_range(-2.0, 3.0, 12, DEFAULT_C).unwrap();
        let v = view_for(&g, &[0.3; 11]);
        assert_eq!(v.cdf(f64::INFINITY).value, 1.0);
        assert_eq!(v.cdf(f64::NEG_INFINITY).value, 0.0);
        let mut last = 0.0;
        for i in 0..200 {
            let t = -5.0 + 10.0 * i as f64 / 199.0;
            let f = v.cdf_value(t);
            assert!(f >= last);
            last = f;
        }
    }

    #[test]
    fn delta_method_basics() {
        let v = DMatrix::identity(2, 2);
        let est = Estimate { value: 1.0, grad: Some(DVector::from_vec(vec![3.0, 4.0])) };
        let dq = delta_ci(QuantityKind::Mean, &est, &v, 0.95, ProbabilityScale::Identity).unwrap();
        assert_eq!(dq.se, 5.0);
        let zero = Estimate { value: 0.3, grad: Some(DVector::zeros(2)) };
        let dq = delta_ci(QuantityKind::Mean, &zero, &v, 0.95, ProbabilityScale::Identity).unwrap();
        assert_eq!((dq.se, dq.ci_lower, dq.ci_upper), (0.0, 0.3, 0.3));
    }

    #[test]
    fn indefinite_information_is_clipped() {
        let j = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -1.0]);
        let jp = DMatrix::identity(2, 2) * 4.0;
        let v = covariance_model_based(&jp, &j).unwrap();
        assert!((v.matrix[(0, 0)] - 2.0 / 16.0).abs() < 1e-15);
        assert!(v.matrix[(1, 1)].abs() < 1e-15);
        let spd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(psd_part(&spd), spd);
    }

    #[test]
    fn ci_width_uses_exact_critical_value() {
        let v = DMatrix::from_element(1, 1, 0.25);
        let est = Estimate { value: 0.0, grad: Some(DVector::from_element(1, 1.0)) };
        let dq = delta_ci(QuantityKind::Mean, &est, &v, 0.95, ProbabilityScale::Identity).unwrap();
        // Normal quantile at the f64 level 0.95, evaluated with 50 digits
        // (1.95996398454005385560...) and rounded to f64.
        assert_eq!(dq.ci_upper - dq.ci_lower, 2.0 * 1.959_963_984_540_053_8 * 0.5);
    }

    #[test]
    fn probabilities_are_clamped() {
        let v = DMatrix::identity(1, 1);
        let est = Estimate { value: 0.02, grad: Some(DVector::from_element(1, 0.1)) };
        let dq = delta_ci(QuantityKind::TailProb { threshold: 0.0 }, &est, &v, 0.95, ProbabilityScale::Identity).unwrap();
        assert_eq!(dq.ci_lower, 0.0);
        let lg = delta_ci(QuantityKind::TailProb { threshold: 0.0 }, &est, &v, 0.95, ProbabilityScale::Logit).unwrap();
        assert!(lg.ci_lower > 0.0 && lg.ci_upper < 1.0 && lg.covers(0.02));
    }

    #[test]
    fn negative_quadratic_form_is_error() {
        let v = DMatrix::from_element(1, 1, -1.0);
        assert!(delta_se(&DVector::from_element(1, 1.0), &v).is_err());
        let tiny = DMatrix::from_element(1, 1, -1e-14);
        assert_eq!(delta_se(&DVector::from_element(1, 1.0), &tiny).unwrap(), 0.0);
    }
}
