//! End-to-end PGM fitting: grid construction, smoothing-parameter search and
//! post-fit inference for the three model families.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::{
    build_grid_intercept, build_grid_regression, default_k, log_basis_matrix, ConstraintMatrix, DifferenceMatrix,
    Grid, RangeRule, DEFAULT_C, DEFAULT_ORDER,
};
use crate::inference::{
    covariance_cluster_robust, covariance_model_based, delta_ci, CovarianceEstimate, CovarianceFlavor,
    DerivedQuantity, Estimate, MixtureView, ProbabilityScale, QuantityKind,
};
use crate::mixture::{softmax, InterceptModel, MixtureWeights};
use crate::optimizer::{
    default_lambda_grid, select_lambda_1d, select_lambda_2d, FitDiagnostics, LambdaSearchResult, SearchConfig,
};
use crate::regression::{LocationModel, ShapeModel};

/// Which PGM family to fit. Covariates are referenced by column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ModelSpec {
    Intercept,
    /// Mixture translated by `xᵀβ`. Covariates enter as supplied (no
    /// intercept column, no centering).
    Location { covariates: Vec<String> },
    /// Weights tilted by one covariate `z`.
    Shape { covariate: String },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Intercept => "intercept",
            ModelSpec::Location { .. } => "location",
            ModelSpec::Shape { .. } => "shape",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Number of components; `None` uses `round(10·log10 n)` in [8, 40].
    pub k: Option<usize>,
    pub c: f64,
    /// Difference-penalty order.
    pub d: usize,
    pub lambda_alpha: Vec<f64>,
    /// Only used by the shape model.
    pub lambda_gamma: Vec<f64>,
    pub search: SearchConfig,
    pub range: RangeRule,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            k: None,
            c: DEFAULT_C,
            d: DEFAULT_ORDER,
            lambda_alpha: default_lambda_grid(),
            lambda_gamma: default_lambda_grid(),
            search: SearchConfig::default(),
            range: RangeRule::default(),
        }
    }
}

/// Summary of one fit within the smoothing-parameter search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchPoint {
    pub lambda_alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_gamma: Option<f64>,
    pub edf: f64,
    pub aic: f64,
    pub converged: bool,
}

/// A fitted PGM model at the AIC-selected smoothing parameter(s).
#[derive(Debug, Clone)]
pub struct PgmFit {
    pub spec: ModelSpec,
    pub grid: Grid,
    pub constraint: ConstraintMatrix,
    /// Free parameters: `α`, then `β` (location) or `γ` (shape).
    pub params: DVector<f64>,
    pub lambda_alpha: f64,
    pub lambda_gamma: Option<f64>,
    pub edf: f64,
    pub aic: f64,
    /// Unpenalized log-likelihood at the optimum.
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub jp: DMatrix<f64>,
    pub j: DMatrix<f64>,
    /// Per-record unpenalized scores, n×q.
    pub scores: DMatrix<f64>,
    pub diagnostics: FitDiagnostics,
    pub search: Vec<SearchPoint>,
    /// Cluster partition of the records, when the data carry labels.
    pub clusters: Option<Vec<Vec<usize>>>,
    pub n: usize,
}

fn resolve(dataset: &Dataset, name: &str) -> Result<usize> {
    dataset.covariate_index(name).ok_or_else(|| {
        Error::Config(format!("covariate '{name}' not found; available: {:?}", dataset.covariate_names()))
    })
}

impl PgmFit {
    /// Fits the model with AIC selection over the smoothing grid(s).
    pub fn fit(dataset: &Dataset, spec: &ModelSpec, options: &FitOptions) -> Result<Self> {
        dataset.require_fittable()?;
        if !(options.c > 0.0 && options.c.is_finite()) {
            return Err(Error::Config(format!("c must be positive, got {}", options.c)));
        }
        if options.lambda_alpha.is_empty() {
            return Err(Error::Config("lambda grid is empty".into()));
        }
        let n = dataset.n();
        let k = options.k.unwrap_or_else(|| default_k(n));
        let d = DifferenceMatrix::new(k, options.d)?;
        let c = ConstraintMatrix::new(k)?;
        let q = c.free();
        let y = dataset.y();
        let v = dataset.v();

        let (grid, result) = match spec {
            ModelSpec::Intercept => {
                let grid = build_grid_intercept(dataset, k, options.c, &options.range)?;
                let log_phi = log_basis_matrix(&grid, &y, &v, &vec![0.0; n]);
                let model = InterceptModel::new(log_phi, c, &d, 0.0);
                let res = select_lambda_1d(&model, &DVector::zeros(q), &options.lambda_alpha, &options.search)?;
                (grid, res)
            }
            ModelSpec::Location { covariates } => {
                if covariates.is_empty() {
                    return Err(Error::Config("location model needs at least one covariate".into()));
                }
                let cols = covariates.iter().map(|name| resolve(dataset, name)).collect::<Result<Vec<_>>>()?;
                let x = DMatrix::from_fn(n, cols.len(), |i, j| dataset.records()[i].x[cols[j]]);
                let names: Vec<String> = covariates.clone();
                let (grid, beta) = build_grid_regression_named(dataset, &x, k, options, &names)?;
                let model = LocationModel::new(grid.clone(), y, v, x, &d, 0.0)?;
                let mut init = DVector::zeros(q + cols.len());
                init.rows_mut(q, cols.len()).copy_from(&beta);
                let res = select_lambda_1d(&model, &init, &options.lambda_alpha, &options.search)?;
                (grid, res)
            }
            ModelSpec::Shape { covariate } => {
                if options.lambda_gamma.is_empty() {
                    return Err(Error::Config("lambda-gamma grid is empty".into()));
                }
                let z = dataset.covariate(resolve(dataset, covariate)?);
                let grid = build_grid_intercept(dataset, k, options.c, &options.range)?;
                let model = ShapeModel::new(&grid, &y, &v, z, &d, 0.0, 0.0)?;
                let res = select_lambda_2d(
                    &model,
                    &DVector::zeros(2 * q),
                    &options.lambda_alpha,
                    &options.lambda_gamma,
                    &options.search,
                )?;
                (grid, res)
            }
        };
        Ok(Self::assemble(spec.clone(), grid, c, result, dataset))
    }

    fn assemble(spec: ModelSpec, grid: Grid, c: ConstraintMatrix, result: LambdaSearchResult, dataset: &Dataset) -> Self {
        let shape = matches!(spec, ModelSpec::Shape { .. });
        let search = result
            .fits
            .iter()
            .map(|f| SearchPoint {
                lambda_alpha: f.lambda_alpha,
                lambda_gamma: shape.then_some(f.lambda_gamma),
                edf: f.edf,
                aic: f.aic,
                converged: f.usable(),
            })
            .collect();
        let best = result.best();
        let opt = result.best_optimum().clone();
        Self {
            spec,
            grid,
            constraint: c,
            params: opt.params,
            lambda_alpha: best.lambda_alpha,
            lambda_gamma: shape.then_some(best.lambda_gamma),
            edf: best.edf,
            aic: best.aic,
            loglik: opt.eval.loglik,
            penalized_loglik: opt.eval.penalized,
            jp: opt.eval.jp,
            j: opt.eval.j,
            scores: opt.eval.scores,
            diagnostics: opt.diagnostics,
            search,
            clusters: dataset.has_clusters().then(|| dataset.cluster_index()),
            n: dataset.n(),
        }
    }

    /// Number of free parameters.
    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.params.as_slice()[..self.constraint.free()]
    }

    /// Location coefficients `β`.
    pub fn beta(&self) -> Option<&[f64]> {
        match self.spec {
            ModelSpec::Location { .. } => Some(&self.params.as_slice()[self.constraint.free()..]),
            _ => None,
        }
    }

    /// Shape-modification parameters `γ`.
    pub fn gamma(&self) -> Option<&[f64]> {
        match self.spec {
            ModelSpec::Shape { .. } => Some(&self.params.as_slice()[self.constraint.free()..]),
            _ => None,
        }
    }

    /// Baseline weights (at `x = 0` or `z = 0`).
    pub fn weights(&self) -> MixtureWeights {
        self.weights_at(0.0)
    }

    /// Weights at shape-covariate value `z0`; other models ignore `z0`.
    pub fn weights_at(&self, z0: f64) -> MixtureWeights {
        let mut full = self.constraint.expand(self.alpha());
        if let Some(g) = self.gamma() {
            full += self.constraint.expand(g) * z0;
        }
        MixtureWeights(softmax(&full))
    }

    /// Fitted true-effect distribution at covariate value `at`: empty means
    /// the baseline; a location model takes one value per covariate, a shape
    /// model a single `z`.
    pub fn view(&self, at: &[f64]) -> Result<MixtureView<'_>> {
        let q = self.constraint.free();
        let dim = self.dim();
        let expect = match &self.spec {
            ModelSpec::Intercept => 0,
            ModelSpec::Location { covariates } => covariates.len(),
            ModelSpec::Shape { .. } => 1,
        };
        if !at.is_empty() && at.len() != expect {
            return Err(Error::Dimension(format!(
                "{} model takes {expect} covariate value(s), got {}",
                self.spec.name(),
                at.len()
            )));
        }
        let z0 = if matches!(self.spec, ModelSpec::Shape { .. }) { at.first().copied().unwrap_or(0.0) } else { 0.0 };
        let weights = self.weights_at(z0);
        let base = self.constraint.reduce_cols(&weights.softmax_jacobian());
        let mut jac = DMatrix::zeros(self.grid.k(), dim);
        jac.columns_mut(0, q).copy_from(&base);
        let mut shift = 0.0;
        let mut shift_grad = DVector::zeros(dim);
        match &self.spec {
            ModelSpec::Intercept => {}
            ModelSpec::Location { .. } => {
                let beta = self.beta().expect("location model");
                for (j, &xj) in at.iter().enumerate() {
                    shift += xj * beta[j];
                    shift_grad[q + j] = xj;
                }
            }
            ModelSpec::Shape { .. } => {
                jac.columns_mut(q, q).copy_from(&(base * z0));
            }
        }
        Ok(MixtureView::new(&self.grid, weights, jac, shift, shift_grad))
    }

    /// Model-based or cluster-robust covariance of the free parameters.
    pub fn covariance(&self, flavor: CovarianceFlavor, small_sample: bool) -> Result<CovarianceEstimate> {
        match flavor {
            CovarianceFlavor::ModelBased => covariance_model_based(&self.jp, &self.j),
            CovarianceFlavor::ClusterRobust => {
                let clusters = self
                    .clusters
                    .as_ref()
                    .ok_or_else(|| Error::Config("cluster-robust covariance needs cluster labels".into()))?;
                covariance_cluster_robust(&self.scores, clusters, &self.jp, small_sample)
            }
        }
    }

    /// Point estimate, delta-method SE and CI of a derived quantity at
    /// covariate value `at`.
    pub fn derived(
        &self,
        kind: QuantityKind,
        at: &[f64],
        cov: &CovarianceEstimate,
        level: f64,
        scale: ProbabilityScale,
    ) -> Result<DerivedQuantity> {
        if cov.dim() != self.dim() {
            return Err(Error::Dimension(format!("covariance is {}x{}, fit has {} parameters", cov.dim(), cov.dim(), self.dim())));
        }
        let est = match kind {
            QuantityKind::Coefficient { index } => {
                let q = self.constraint.free();
                if q + index >= self.dim() {
                    return Err(Error::Dimension(format!("no coefficient with index {index}")));
                }
                let mut g = DVector::zeros(self.dim());
                g[q + index] = 1.0;
                Estimate { value: self.params[q + index], grad: Some(g) }
            }
            _ => {
                let view = self.view(at)?;
                match kind {
                    QuantityKind::Mean => view.mean(),
                    QuantityKind::Variance => view.variance(),
                    QuantityKind::Pdf { theta } => view.pdf(theta),
                    QuantityKind::Cdf { theta } => view.cdf(theta),
                    QuantityKind::TailProb { threshold } => view.cdf(threshold),
                    QuantityKind::Quantile { p } | QuantityKind::PredictionBound { p } => view.quantile(p)?,
                    QuantityKind::Coefficient { .. } => unreachable!(),
                }
            }
        };
        let mut dq = delta_ci(kind, &est, &cov.matrix, level, scale)?;
        if at.len() == 1 {
            dq.at = Some(at[0]);
        }
        Ok(dq)
    }

    /// Central prediction interval of the fitted true-effect distribution.
    pub fn prediction_interval(
        &self,
        level: f64,
        at: &[f64],
        cov: &CovarianceEstimate,
        ci_level: f64,
    ) -> Result<(DerivedQuantity, DerivedQuantity)> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!("prediction level must be in (0, 1), got {level}")));
        }
        let a = (1.0 - level) / 2.0;
        let lo = self.derived(QuantityKind::PredictionBound { p: a }, at, cov, ci_level, ProbabilityScale::Identity)?;
        let hi =
            self.derived(QuantityKind::PredictionBound { p: 1.0 - a }, at, cov, ci_level, ProbabilityScale::Identity)?;
        Ok((lo, hi))
    }

    /// Fitted true-effect density at `theta` (baseline covariate setting).
    pub fn pdf(&self, theta: f64) -> f64 {
        let w = self.weights();
        self.grid.pdf_vector(theta, 0.0).dot(&w.0)
    }
}

fn build_grid_regression_named(
    dataset: &Dataset,
    x: &DMatrix<f64>,
    k: usize,
    options: &FitOptions,
    names: &[String],
) -> Result<(Grid, DVector<f64>)> {
    // The design holds only the selected columns, so report their names.
    let records = dataset.records().to_vec();
    let view = Dataset::with_names(
        records
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.x = x.row(i).iter().copied().collect();
                r
            })
            .collect(),
        names.to_vec(),
    )?;
    build_grid_regression(&view, x, k, options.c, &options.range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EffectRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_data(n: usize, seed: u64, slope: f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let x: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.random_range(0.05..0.3);
                let th: f64 = 1.0 + slope * x + rng.sample::<f64, _>(StandardNormal);
                let y = th + v.sqrt() * rng.sample::<f64, _>(StandardNormal);
                EffectRecord { y, v, x: vec![x], cluster: Some(format!("c{}", i / 3)) }
            })
            .collect();
        Dataset::with_names(records, vec!["x".into()]).unwrap()
    }

    fn small_options() -> FitOptions {
        FitOptions { lambda_alpha: vec![1.0, 10.0], lambda_gamma: vec![1.0, 10.0], ..FitOptions::default() }
    }

    #[test]
    fn intercept_fit_recovers_normal_moments() {
        let data = normal_data(300, 1, 0.0);
        let fit = PgmFit::fit(&data, &ModelSpec::Intercept, &FitOptions::default()).unwrap();
        assert!(fit.diagnostics.converged);
        assert_eq!(fit.search.len(), 11);
        let cov = fit.covariance(CovarianceFlavor::ModelBased, false).unwrap();
        let mean = fit.derived(QuantityKind::Mean, &[], &cov, 0.95, ProbabilityScale::Identity).unwrap();
        let var = fit.derived(QuantityKind::Variance, &[], &cov, 0.95, ProbabilityScale::Identity).unwrap();
        assert!((mean.estimate - 1.0).abs() < 0.25, "{}", mean.estimate);
        assert!((var.estimate - 1.0).abs() < 0.4, "{}", var.estimate);
        assert!(mean.ci_lower < mean.estimate && mean.estimate < mean.ci_upper);
        let (lo, hi) = fit.prediction_interval(0.95, &[], &cov, 0.95).unwrap();
        assert!(lo.estimate < hi.estimate);
    }

    #[test]
    fn selected_fit_minimizes_aic() {
        let data = normal_data(120, 2, 0.0);
        let fit = PgmFit::fit(&data, &ModelSpec::Intercept, &FitOptions::default()).unwrap();
        let min = fit.search.iter().filter(|s| s.converged).map(|s| s.aic).fold(f64::INFINITY, f64::min);
        assert_eq!(fit.aic, min);
        assert!(fit.edf > 0.0 && fit.edf <= (fit.grid.k() - 1) as f64 + 1e-9);
    }

    #[test]
    fn location_fit_recovers_slope() {
        let data = normal_data(300, 3, 0.7);
        let spec = ModelSpec::Location { covariates: vec!["x".into()] };
        let fit = PgmFit::fit(&data, &spec, &small_options()).unwrap();
        let beta = fit.beta().unwrap()[0];
        assert!((beta - 0.7).abs() < 0.2, "{beta}");
        let cov = fit.covariance(CovarianceFlavor::ClusterRobust, false).unwrap();
        let b = fit.derived(QuantityKind::Coefficient { index: 0 }, &[], &cov, 0.95, ProbabilityScale::Identity).unwrap();
        assert_eq!(b.estimate, beta);
        assert!(b.se > 0.0);
    }

    #[test]
    fn location_views_are_translations() {
        let data = normal_data(150, 4, 0.5);
        let spec = ModelSpec::Location { covariates: vec!["x".into()] };
        let fit = PgmFit::fit(&data, &spec, &small_options()).unwrap();
        let beta = fit.beta().unwrap()[0];
        let v0 = fit.view(&[0.0]).unwrap();
        let v1 = fit.view(&[1.3]).unwrap();
        for i in 0..50 {
            let t = -3.0 + 0.12 * i as f64;
            assert!((v1.cdf_value(t) - v0.cdf_value(t - 1.3 * beta)).abs() < 1e-10);
        }
    }

    #[test]
    fn shape_fit_reports_both_lambdas() {
        let data = normal_data(150, 5, 0.0);
        let spec = ModelSpec::Shape { covariate: "x".into() };
        let fit = PgmFit::fit(&data, &spec, &small_options()).unwrap();
        assert_eq!(fit.search.len(), 4);
        assert!(fit.lambda_gamma.is_some());
        assert_eq!(fit.dim(), 2 * (fit.grid.k() - 1));
        let cov = fit.covariance(CovarianceFlavor::ModelBased, false).unwrap();
        let p = fit.derived(QuantityKind::TailProb { threshold: 0.0 }, &[1.0], &cov, 0.95, ProbabilityScale::Identity).unwrap();
        assert_eq!(p.at, Some(1.0));
        assert!((0.0..=1.0).contains(&p.estimate));
    }

    #[test]
    fn shape_view_gradient_matches_finite_differences() {
        let data = normal_data(100, 6, 0.0);
        let spec = ModelSpec::Shape { covariate: "x".into() };
        let mut fit = PgmFit::fit(&data, &spec, &small_options()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for p in fit.params.iter_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let z0 = 0.8;
        let g = fit.view(&[z0]).unwrap().mean().grad.unwrap();
        for j in 0..fit.dim() {
            let h = 1e-6;
            let mut f = fit.clone();
            f.params[j] += h;
            let up = f.view(&[z0]).unwrap().mean().value;
            f.params[j] -= 2.0 * h;
            let dn = f.view(&[z0]).unwrap().mean().value;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7 * (1.0 + fd.abs()), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn unknown_covariate_is_config_error() {
        let data = normal_data(50, 7, 0.0);
        let spec = ModelSpec::Shape { covariate: "nope".into() };
        assert!(matches!(PgmFit::fit(&data, &spec, &small_options()), Err(Error::Config(_))));
    }

    #[test]
    fn robust_covariance_requires_clusters() {
        let data = Dataset::from_effects(&[0.1, 0.5, 0.9, 1.4, -0.2, 0.3], &[0.1; 6]).unwrap();
        let fit = PgmFit::fit(&data, &ModelSpec::Intercept, &FitOptions { k: Some(6), ..small_options() }).unwrap();
        assert!(fit.covariance(CovarianceFlavor::ClusterRobust, false).is_err());
    }

    #[test]
    fn pdf_integrates_to_one() {
        let data = normal_data(200, 8, 0.0);
        let fit = PgmFit::fit(&data, &ModelSpec::Intercept, &small_options()).unwrap();
        let (a, b) = (fit.grid.lower() - 8.0 * fit.grid.tau_c(), fit.grid.upper() + 8.0 * fit.grid.tau_c());
        let m = 4000;
        let h = (b - a) / m as f64;
        let total: f64 = (0..=m)
            .map(|i| {
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                w * fit.pdf(a + h * i as f64)
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
}
