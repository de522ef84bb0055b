//! The `fit` command and its report.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use pgmeta::fit::SearchPoint;
use pgmeta::inference::{DerivedQuantity, ProbabilityScale, QuantityKind};
use pgmeta::{fit_ml, CovarianceEstimate, CovarianceFlavor, ModelSpec, NormalFit, PgmFit};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::model::{check_level, FittedModel, ModelArgs};
use crate::output::Output;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Report P(θ < t); repeatable.
    #[arg(long = "threshold")]
    pub thresholds: Vec<f64>,
    /// Confidence level of all intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Coverage of the prediction interval.
    #[arg(long, default_value_t = 0.95)]
    pub pi_level: f64,
    /// Points on the reported density curve.
    #[arg(long, default_value_t = 500)]
    pub points: usize,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

impl From<&DerivedQuantity> for Interval {
    fn from(q: &DerivedQuantity) -> Self {
        Self { estimate: q.estimate, se: q.se, ci_lower: q.ci_lower, ci_upper: q.ci_upper }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub threshold: f64,
    #[serde(flatten)]
    pub value: Interval,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionReport {
    pub level: f64,
    pub lower: Interval,
    pub upper: Interval,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoefficientReport {
    pub name: String,
    #[serde(flatten)]
    pub value: Interval,
}

#[derive(Debug, Clone, Serialize)]
pub struct Components {
    pub k: usize,
    pub c: f64,
    pub d: usize,
    pub tau_c: f64,
    pub means: Vec<f64>,
    /// Baseline weights (covariates at zero).
    pub weights: Vec<f64>,
    /// Shape coefficients over the free components.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalReport {
    pub mu: Interval,
    pub tau2: Interval,
    pub loglik: f64,
    pub aic: f64,
    pub boundary: bool,
    pub prob_below: Vec<TailReport>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Curve {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at: Option<Vec<f64>>,
    pub theta: Vec<f64>,
    pub f: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub condition: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub software_version: &'static str,
    pub model: &'static str,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    pub seed: u64,
    pub lambda_alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_gamma: Option<f64>,
    pub edf: f64,
    pub loglik: f64,
    pub aic_pgm: f64,
    pub aic_normal: f64,
    pub covariance: &'static str,
    pub level: f64,
    pub mu: Interval,
    pub tau2: Interval,
    pub prob_below: Vec<TailReport>,
    pub prediction_interval: PredictionReport,
    pub coefficients: Vec<CoefficientReport>,
    pub components: Components,
    pub normal: NormalReport,
    pub density: Curve,
    pub search: Vec<SearchPoint>,
    pub diagnostics: Diagnostics,
}

/// Pointwise density and CI on `points` equally spaced values in `[lo, hi]`.
pub fn density_curve(
    fit: &PgmFit,
    at: &[f64],
    cov: &CovarianceEstimate,
    level: f64,
    (lo, hi): (f64, f64),
    points: usize,
) -> CliResult<Curve> {
    let mut curve = Curve { at: (!at.is_empty()).then(|| at.to_vec()), ..Curve::default() };
    for i in 0..points {
        let theta = if points == 1 { lo } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 };
        let q = fit.derived(QuantityKind::Pdf { theta }, at, cov, level, ProbabilityScale::Identity)?;
        curve.theta.push(theta);
        curve.f.push(q.estimate);
        curve.ci_lo.push(q.ci_lower.max(0.0));
        curve.ci_hi.push(q.ci_upper);
    }
    Ok(curve)
}

fn flavor_name(cov: &CovarianceEstimate) -> &'static str {
    match cov.flavor {
        CovarianceFlavor::ModelBased => "model-based",
        CovarianceFlavor::ClusterRobust => "cluster-robust",
    }
}

fn normal_report(fit: &NormalFit, thresholds: &[f64], level: f64) -> NormalReport {
    NormalReport {
        mu: (&fit.mean_ci(level)).into(),
        tau2: (&fit.variance_ci(level)).into(),
        loglik: fit.loglik,
        aic: fit.aic,
        boundary: fit.boundary,
        prob_below: thresholds
            .iter()
            .map(|&t| TailReport { threshold: t, value: (&fit.tail_prob(t, level)).into() })
            .collect(),
    }
}

pub fn build_report(args: &FitArgs, m: &FittedModel) -> CliResult<FitReport> {
    let (fit, cov, level, scale) = (&m.fit, &m.cov, args.level, m.scale);
    let normal = fit_ml(&m.data)?;
    let derived = |kind| fit.derived(kind, &[], cov, level, scale);
    let prob_below = args
        .thresholds
        .iter()
        .map(|&t| Ok(TailReport { threshold: t, value: (&derived(QuantityKind::TailProb { threshold: t })?).into() }))
        .collect::<CliResult<Vec<_>>>()?;
    let (lo, hi) = fit.prediction_interval(args.pi_level, &[], cov, level)?;
    let coefficients = match &fit.spec {
        ModelSpec::Location { covariates } => covariates
            .iter()
            .enumerate()
            .map(|(j, name)| {
                Ok(CoefficientReport { name: name.clone(), value: (&derived(QuantityKind::Coefficient { index: j })?).into() })
            })
            .collect::<CliResult<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let pad = 5.0 * fit.grid.tau_c();
    let density = density_curve(fit, &[], cov, level, (fit.grid.lower() - pad, fit.grid.upper() + pad), args.points)?;
    let d = &fit.diagnostics;
    Ok(FitReport {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION"),
        model: fit.spec.name(),
        n: fit.n,
        clusters: fit.clusters.as_ref().map(|c| c.len()),
        seed: args.model.seed,
        lambda_alpha: fit.lambda_alpha,
        lambda_gamma: fit.lambda_gamma,
        edf: fit.edf,
        loglik: fit.loglik,
        aic_pgm: fit.aic,
        aic_normal: normal.aic,
        covariance: flavor_name(cov),
        level,
        mu: (&derived(QuantityKind::Mean)?).into(),
        tau2: (&derived(QuantityKind::Variance)?).into(),
        prob_below,
        prediction_interval: PredictionReport { level: args.pi_level, lower: (&lo).into(), upper: (&hi).into() },
        coefficients,
        components: Components {
            k: fit.grid.k(),
            c: fit.grid.c(),
            d: args.model.d,
            tau_c: fit.grid.tau_c(),
            means: fit.grid.mu().to_vec(),
            weights: fit.weights().as_slice().to_vec(),
            gamma: fit.gamma().map(<[f64]>::to_vec),
        },
        normal: normal_report(&normal, &args.thresholds, level),
        density,
        search: fit.search.clone(),
        diagnostics: Diagnostics {
            iterations: d.iterations,
            grad_norm: d.grad_norm,
            converged: d.converged,
            condition: d.condition,
        },
    })
}

fn write_csv_report<W: Write>(w: W, r: &FitReport) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["quantity", "estimate", "se", "ci_lower", "ci_upper"])?;
    let f = |x: f64| format!("{x:?}");
    let mut row = |name: String, i: &Interval| {
        out.write_record([name, f(i.estimate), f(i.se), f(i.ci_lower), f(i.ci_upper)])
    };
    row("mu".into(), &r.mu)?;
    row("tau2".into(), &r.tau2)?;
    for t in &r.prob_below {
        row(format!("prob_below[{}]", t.threshold), &t.value)?;
    }
    row("pi_lower".into(), &r.prediction_interval.lower)?;
    row("pi_upper".into(), &r.prediction_interval.upper)?;
    for c in &r.coefficients {
        row(format!("beta[{}]", c.name), &c.value)?;
    }
    row("normal_mu".into(), &r.normal.mu)?;
    row("normal_tau2".into(), &r.normal.tau2)?;
    for t in &r.normal.prob_below {
        row(format!("normal_prob_below[{}]", t.threshold), &t.value)?;
    }
    let scalar = |x: f64| Interval { estimate: x, se: f64::NAN, ci_lower: f64::NAN, ci_upper: f64::NAN };
    row("aic_pgm".into(), &scalar(r.aic_pgm))?;
    row("aic_normal".into(), &scalar(r.aic_normal))?;
    row("edf".into(), &scalar(r.edf))?;
    row("lambda_alpha".into(), &scalar(r.lambda_alpha))?;
    if let Some(g) = r.lambda_gamma {
        row("lambda_gamma".into(), &scalar(g))?;
    }
    out.flush()?;
    Ok(())
}

pub fn run(args: &FitArgs) -> CliResult<()> {
    check_level("--level", args.level)?;
    check_level("--pi-level", args.pi_level)?;
    if args.points < 2 {
        return Err(CliError::Input("--points must be at least 2".into()));
    }
    if let Some(t) = args.thresholds.iter().find(|t| !t.is_finite()) {
        return Err(CliError::Input(format!("--threshold must be finite, got {t}")));
    }
    let fitted = args.model.fit()?;
    let report = build_report(args, &fitted)?;
    let mut out = Output::open(args.out.as_deref())?;
    match args.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut out, &report).map_err(|e| CliError::write(out.name(), e))?;
            writeln!(out).map_err(|e| CliError::write(out.name(), e))?;
        }
        Format::Csv => write_csv_report(&mut out, &report).map_err(|e| CliError::write(out.name(), e))?,
    }
    out.finish()
}
