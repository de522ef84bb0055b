//! Replication loop, metrics and aggregation.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::baseline::fit_ml;
use crate::error::{Error, Result};
use crate::fit::{FitOptions, ModelSpec, PgmFit};
use crate::inference::{CovarianceFlavor, DerivedQuantity, ProbabilityScale, QuantityKind};
use crate::sim::config::{Family, Scenario};
use crate::sim::generators::{gen_sim1, gen_sim2, sim2_true_distribution, true_quantiles_sim2, SIM2_BETA};

/// Half-width of the IAE integration window around the true mean.
pub const IAE_HALF_WIDTH: f64 = 8.0;
/// Trapezoid points used for the IAE.
pub const IAE_POINTS: usize = 2000;

/// Share of failed replications above which a scenario warns.
const FAILURE_WARN: f64 = 0.05;

/// Independent stream for replication `rep`: the base seed keys the
/// generator and the replication index selects the stream, so results do not
/// depend on scheduling.
pub fn replication_rng(base_seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(rep);
    rng
}

/// `∫|f − g|` by the composite trapezoid rule with `points` nodes on `[a, b]`.
pub fn integrated_abs_error(f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64, a: f64, b: f64, points: usize) -> f64 {
    assert!(points >= 2 && b > a);
    let h = (b - a) / (points - 1) as f64;
    let mut total = 0.0;
    for i in 0..points {
        let x = a + h * i as f64;
        let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        total += w * (f(x) - g(x)).abs();
    }
    total * h
}

/// IAE over the standard window centred at `center`.
pub fn iae(fhat: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64, center: f64) -> f64 {
    integrated_abs_error(fhat, truth, center - IAE_HALF_WIDTH, center + IAE_HALF_WIDTH, IAE_POINTS)
}

/// One estimate of one target by one method.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetRecord {
    pub method: String,
    pub target: String,
    pub truth: f64,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TargetRecord {
    pub fn from_quantity(method: &str, target: &str, truth: f64, q: &DerivedQuantity) -> Self {
        Self {
            method: method.into(),
            target: target.into(),
            truth,
            estimate: q.estimate,
            lower: q.ci_lower,
            upper: q.ci_upper,
        }
    }

    /// A CI that is unavailable (NaN) counts as a miss.
    pub fn covered(&self) -> bool {
        self.lower <= self.truth && self.truth <= self.upper
    }
}

/// Everything recorded for one replication.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicationOutcome {
    pub targets: Vec<TargetRecord>,
    /// `(method, IAE)` pairs.
    pub iae: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetSummary {
    pub method: String,
    pub target: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySummary {
    pub method: String,
    /// Median IAE over replications.
    pub miae: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub scenario: String,
    pub replications: usize,
    pub failures: usize,
    pub targets: Vec<TargetSummary>,
    pub densities: Vec<DensitySummary>,
    /// First few failure messages, for diagnosis.
    pub failure_messages: Vec<String>,
}

impl SimSummary {
    pub fn target(&self, method: &str, target: &str) -> Option<&TargetSummary> {
        self.targets.iter().find(|t| t.method == method && t.target == target)
    }

    pub fn miae(&self, method: &str) -> Option<f64> {
        self.densities.iter().find(|d| d.method == method).map(|d| d.miae)
    }

    /// Average over targets whose name starts with `prefix`.
    pub fn mean_over(&self, method: &str, prefix: &str, metric: impl Fn(&TargetSummary) -> f64) -> f64 {
        let sel: Vec<f64> =
            self.targets.iter().filter(|t| t.method == method && t.target.starts_with(prefix)).map(metric).collect();
        sel.iter().sum::<f64>() / sel.len() as f64
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregates replications in index order. Failed replications are counted
/// and excluded.
pub fn aggregate(scenario: &str, outcomes: &[Result<ReplicationOutcome>]) -> SimSummary {
    let ok: Vec<&ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failure_messages: Vec<String> =
        outcomes.iter().filter_map(|o| o.as_ref().err()).take(5).map(|e| e.to_string()).collect();
    let failures = outcomes.len() - ok.len();

    // Keys in first-appearance order keep the output layout stable.
    let mut keys: Vec<(String, String)> = Vec::new();
    for o in &ok {
        for t in &o.targets {
            if !keys.iter().any(|(m, n)| *m == t.method && *n == t.target) {
                keys.push((t.method.clone(), t.target.clone()));
            }
        }
    }
    let targets = keys
        .iter()
        .map(|(method, target)| {
            let recs: Vec<&TargetRecord> = ok
                .iter()
                .flat_map(|o| o.targets.iter())
                .filter(|t| &t.method == method && &t.target == target)
                .collect();
            let count = recs.len() as f64;
            let truth = recs[0].truth;
            let mean_estimate = recs.iter().map(|t| t.estimate).sum::<f64>() / count;
            let mse = recs.iter().map(|t| (t.estimate - t.truth).powi(2)).sum::<f64>() / count;
            let coverage = recs.iter().filter(|t| t.covered()).count() as f64 / count;
            TargetSummary {
                method: method.clone(),
                target: target.clone(),
                truth,
                mean_estimate,
                bias: recs.iter().map(|t| t.estimate - t.truth).sum::<f64>() / count,
                rmse: mse.sqrt(),
                coverage,
                count: recs.len(),
            }
        })
        .collect();

    let mut methods: Vec<String> = Vec::new();
    for o in &ok {
        for (m, _) in &o.iae {
            if !methods.contains(m) {
                methods.push(m.clone());
            }
        }
    }
    let densities = methods
        .into_iter()
        .map(|method| {
            let mut vals: Vec<f64> =
                ok.iter().flat_map(|o| o.iae.iter()).filter(|(m, _)| *m == method).map(|(_, v)| *v).collect();
            let count = vals.len();
            DensitySummary { method, miae: median(&mut vals), count }
        })
        .collect();

    if failures as f64 > FAILURE_WARN * outcomes.len() as f64 {
        log::warn!("scenario '{scenario}': {failures} of {} replications failed", outcomes.len());
    }
    SimSummary { scenario: scenario.into(), replications: outcomes.len(), failures, targets, densities, failure_messages }
}

fn fit_options(scenario: &Scenario) -> FitOptions {
    FitOptions { k: scenario.k, d: scenario.d, lambda_alpha: scenario.lambda_grid(), ..FitOptions::default() }
}

fn prob_target(p: f64) -> String {
    format!("prob_{p}")
}

fn replicate_sim1(scenario: &Scenario, rep: u64) -> Result<ReplicationOutcome> {
    let dist = scenario.dist.ok_or_else(|| Error::Config("sim1 scenario without dist".into()))?;
    let mut rng = replication_rng(scenario.seed, rep);
    let data = gen_sim1(dist, scenario.size, scenario.i2, &mut rng)?;
    let level = scenario.level;
    let id = ProbabilityScale::Identity;

    let pgm = PgmFit::fit(&data, &ModelSpec::Intercept, &fit_options(scenario))?;
    let cov = pgm.covariance(CovarianceFlavor::ModelBased, false)?;
    let nml = fit_ml(&data)?;

    let mut out = ReplicationOutcome::default();
    let mean = pgm.derived(QuantityKind::Mean, &[], &cov, level, id)?;
    let var = pgm.derived(QuantityKind::Variance, &[], &cov, level, id)?;
    out.targets.push(TargetRecord::from_quantity("pgm", "mean", 1.0, &mean));
    out.targets.push(TargetRecord::from_quantity("normal", "mean", 1.0, &nml.mean_ci(level)));
    out.targets.push(TargetRecord::from_quantity("pgm", "variance", 1.0, &var));
    out.targets.push(TargetRecord::from_quantity("normal", "variance", 1.0, &nml.variance_ci(level)));
    for &p in &scenario.probs {
        let t = dist.quantile(p);
        let name = prob_target(p);
        let q = pgm.derived(QuantityKind::TailProb { threshold: t }, &[], &cov, level, id)?;
        out.targets.push(TargetRecord::from_quantity("pgm", &name, p, &q));
        out.targets.push(TargetRecord::from_quantity("normal", &name, p, &nml.tail_prob(t, level)));
    }
    out.iae.push(("pgm".into(), iae(|x| pgm.pdf(x), |x| dist.pdf(x), 1.0)));
    // A degenerate normal fit is a point mass: its L1 distance to any
    // density is 2.
    let nml_iae = if nml.tau2 > 0.0 { iae(|x| nml.pdf(x), |x| dist.pdf(x), 1.0) } else { 2.0 };
    out.iae.push(("normal".into(), nml_iae));
    Ok(out)
}

fn replicate_sim2(scenario: &Scenario, rep: u64) -> Result<ReplicationOutcome> {
    let r = scenario.r.ok_or_else(|| Error::Config("sim2 scenario without r".into()))?;
    let mut rng = replication_rng(scenario.seed, rep);
    let data = gen_sim2(scenario.size, r, scenario.i2, &mut rng)?;
    let level = scenario.level;
    let id = ProbabilityScale::Identity;

    let spec = ModelSpec::Location { covariates: vec!["x".into()] };
    let pgm = PgmFit::fit(&data, &spec, &fit_options(scenario))?;
    let truth = sim2_true_distribution(r);
    let thresholds = true_quantiles_sim2(r, &scenario.probs);

    let mut out = ReplicationOutcome::default();
    for (method, flavor) in [("pgm", CovarianceFlavor::ModelBased), ("pgm-crve", CovarianceFlavor::ClusterRobust)] {
        let cov = pgm.covariance(flavor, false)?;
        let beta = pgm.derived(QuantityKind::Coefficient { index: 0 }, &[], &cov, level, id)?;
        out.targets.push(TargetRecord::from_quantity(method, "beta", SIM2_BETA, &beta));
        for (&p, &t) in scenario.probs.iter().zip(&thresholds) {
            let q = pgm.derived(QuantityKind::TailProb { threshold: t }, &[0.0], &cov, level, id)?;
            out.targets.push(TargetRecord::from_quantity(method, &prob_target(p), p, &q));
        }
    }
    let view = pgm.view(&[0.0])?;
    out.iae.push(("pgm".into(), iae(|x| view.pdf_value(x), |x| truth.pdf(x), 0.0)));
    Ok(out)
}

/// Runs one replication of a scenario.
pub fn replicate(scenario: &Scenario, rep: u64) -> Result<ReplicationOutcome> {
    match scenario.family {
        Family::Sim1 => replicate_sim1(scenario, rep),
        Family::Sim2 => replicate_sim2(scenario, rep),
    }
}

/// Runs every replication (in parallel on the current rayon pool) and
/// aggregates.
pub fn run_scenario(scenario: &Scenario) -> Result<SimSummary> {
    scenario.validate()?;
    let outcomes: Vec<Result<ReplicationOutcome>> =
        (0..scenario.replications as u64).into_par_iter().map(|rep| replicate(scenario, rep)).collect();
    Ok(aggregate(&scenario.name, &outcomes))
}

/// Header of the results CSV.
pub const CSV_HEADER: [&str; 11] =
    ["scenario", "method", "target", "truth", "mean_estimate", "bias", "rmse", "coverage", "miae", "count", "failures"];

/// Writes one row per method×target plus one `density` row per method.
/// Floats use the shortest round-trip representation.
pub fn write_summary_csv<W: Write>(writer: W, summaries: &[SimSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    let f = |x: f64| format!("{x:?}");
    for s in summaries {
        for t in &s.targets {
            w.write_record([
                s.scenario.clone(),
                t.method.clone(),
                t.target.clone(),
                f(t.truth),
                f(t.mean_estimate),
                f(t.bias),
                f(t.rmse),
                f(t.coverage),
                String::new(),
                t.count.to_string(),
                s.failures.to_string(),
            ])?;
        }
        for d in &s.densities {
            w.write_record([
                s.scenario.clone(),
                d.method.clone(),
                "density".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                f(d.miae),
                d.count.to_string(),
                s.failures.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
