//! Flags shared by `fit` and `density`, and the fit they describe.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use pgmeta::grid::DEFAULT_ORDER;
use pgmeta::inference::ProbabilityScale;
use pgmeta::{ColumnMapping, CovarianceEstimate, CovarianceFlavor, Dataset, FitOptions, ModelSpec, PgmFit};

use crate::error::{CliError, CliResult};
use crate::lambda::parse_grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Intercept,
    Location,
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Robust {
    /// Cluster-robust when --cluster is given.
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Identity,
    Logit,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Column holding the effect estimates.
    #[arg(long)]
    pub y: String,
    /// Column holding the within-study variances.
    #[arg(long)]
    pub v: String,
    /// Comma-separated covariate columns (location model).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Cluster label column.
    #[arg(long)]
    pub cluster: Option<String>,
    #[arg(long, value_enum)]
    pub model: ModelKind,
    /// Covariate that reshapes the weights (shape model).
    #[arg(long)]
    pub shape_covariate: Option<String>,
    /// Number of components [default: round(10·log10 n) clamped to 8..=40].
    #[arg(long)]
    pub k: Option<usize>,
    /// Component SD as a multiple of the grid spacing.
    #[arg(long, default_value_t = pgmeta::grid::DEFAULT_C)]
    pub c: f64,
    /// Difference-penalty order.
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub d: usize,
    /// Smoothing grid: `e:FROM:TO:STEP` or a comma-separated list.
    #[arg(long, default_value = "e:-5:5:1")]
    pub lambda_grid: String,
    /// Grid for the shape penalty [default: same as --lambda-grid].
    #[arg(long)]
    pub lambda_gamma_grid: Option<String>,
    #[arg(long, value_enum, default_value_t = Robust::Auto)]
    pub robust: Robust,
    /// Scale the cluster-robust meat by M/(M−1).
    #[arg(long)]
    pub small_sample: bool,
    /// Scale of confidence intervals for probabilities.
    #[arg(long, value_enum, default_value_t = Scale::Identity)]
    pub probability_scale: Scale,
    /// Recorded in the report; fitting itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub struct FittedModel {
    pub data: Dataset,
    pub fit: PgmFit,
    pub cov: CovarianceEstimate,
    pub scale: ProbabilityScale,
}

pub fn check_level(flag: &str, level: f64) -> CliResult<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::Input(format!("{flag} must lie in (0, 1), got {level}")))
    }
}

impl ModelArgs {
    pub fn spec(&self) -> CliResult<ModelSpec> {
        match self.model {
            ModelKind::Intercept => {
                if !self.covariates.is_empty() || self.shape_covariate.is_some() {
                    return Err(CliError::Input(
                        "--covariates and --shape-covariate do not apply to --model intercept".into(),
                    ));
                }
                Ok(ModelSpec::Intercept)
            }
            ModelKind::Location => {
                if self.covariates.is_empty() {
                    return Err(CliError::Input("--model location requires --covariates".into()));
                }
                if self.shape_covariate.is_some() {
                    return Err(CliError::Input("--shape-covariate only applies to --model shape".into()));
                }
                Ok(ModelSpec::Location { covariates: self.covariates.clone() })
            }
            ModelKind::Shape => {
                let Some(z) = &self.shape_covariate else {
                    return Err(CliError::Input("--model shape requires --shape-covariate".into()));
                };
                if !self.covariates.is_empty() {
                    return Err(CliError::Input("--covariates does not apply to --model shape".into()));
                }
                Ok(ModelSpec::Shape { covariate: z.clone() })
            }
        }
    }

    pub fn options(&self) -> CliResult<FitOptions> {
        let bad = |flag: &str, msg: String| CliError::Input(format!("{flag}: {msg}"));
        let lambda_alpha = parse_grid(&self.lambda_grid).map_err(|m| bad("--lambda-grid", m))?;
        let lambda_gamma = match &self.lambda_gamma_grid {
            Some(s) => parse_grid(s).map_err(|m| bad("--lambda-gamma-grid", m))?,
            None => lambda_alpha.clone(),
        };
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(bad("--c", format!("must be positive, got {}", self.c)));
        }
        if self.d == 0 {
            return Err(bad("--d", "must be at least 1".into()));
        }
        if let Some(k) = self.k {
            if k < self.d + 1 || k < 4 {
                return Err(bad("--k", format!("must be at least max(4, d + 1), got {k}")));
            }
        }
        Ok(FitOptions { k: self.k, c: self.c, d: self.d, lambda_alpha, lambda_gamma, ..FitOptions::default() })
    }

    fn mapping(&self) -> ColumnMapping {
        let mut covs = self.covariates.clone();
        if let Some(z) = &self.shape_covariate {
            covs.push(z.clone());
        }
        let mut m = ColumnMapping::new(&self.y, &self.v).with_covariates(covs);
        if let Some(c) = &self.cluster {
            m = m.with_cluster(c);
        }
        m
    }

    fn flavor(&self) -> CliResult<CovarianceFlavor> {
        match (self.robust, &self.cluster) {
            (Robust::Off, _) | (Robust::Auto, None) => Ok(CovarianceFlavor::ModelBased),
            (Robust::Auto | Robust::On, Some(_)) => Ok(CovarianceFlavor::ClusterRobust),
            (Robust::On, None) => Err(CliError::Input("--robust on requires --cluster".into())),
        }
    }

    /// Validates flags, loads the data and fits the model.
    pub fn fit(&self) -> CliResult<FittedModel> {
        let spec = self.spec()?;
        let options = self.options()?;
        let flavor = self.flavor()?;
        let data = Dataset::load_csv(&self.data, &self.mapping())
            .map_err(|e| CliError::Input(format!("{}: {e}", self.data.display())))?;
        data.require_fittable()?;
        let fit = PgmFit::fit(&data, &spec, &options)?;
        log::info!(
            "selected lambda {} (gamma {:?}), EDF {:.3}, AIC {:.3}",
            fit.lambda_alpha,
            fit.lambda_gamma,
            fit.edf,
            fit.aic
        );
        let cov = fit.covariance(flavor, self.small_sample)?;
        let scale = match self.probability_scale {
            Scale::Identity => ProbabilityScale::Identity,
            Scale::Logit => ProbabilityScale::Logit,
        };
        Ok(FittedModel { data, fit, cov, scale })
    }
}
