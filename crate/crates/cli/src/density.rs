//! The `density` command: pointwise density curves with CIs.

use std::path::PathBuf;

use clap::Args;
use pgmeta::ModelSpec;

use crate::error::{CliError, CliResult};
use crate::model::{check_level, ModelArgs};
use crate::output::Output;
use crate::report::{density_curve, Curve};

#[derive(Debug, Clone, Args)]
#[command(allow_negative_numbers = true)]
pub struct DensityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Covariate value(s) to condition on, one curve each. Location models
    /// with several covariates take a comma-separated vector.
    #[arg(long, allow_hyphen_values = true)]
    pub at: Vec<String>,
    #[arg(long, default_value_t = 500)]
    pub points: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Output CSV [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses the `--at` values into covariate vectors of length `p`.
pub fn parse_at(values: &[String], spec: &ModelSpec) -> CliResult<Vec<Vec<f64>>> {
    let p = match spec {
        ModelSpec::Intercept => {
            if !values.is_empty() {
                return Err(CliError::Input("--at does not apply to --model intercept".into()));
            }
            return Ok(vec![Vec::new()]);
        }
        ModelSpec::Location { covariates } => covariates.len(),
        ModelSpec::Shape { .. } => 1,
    };
    if values.is_empty() {
        return Ok(vec![vec![0.0; p]]);
    }
    values
        .iter()
        .map(|s| {
            let v = s
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::Input(format!("--at: cannot parse '{s}'")))?;
            if v.len() != p || v.iter().any(|x| !x.is_finite()) {
                return Err(CliError::Input(format!("--at: expected {p} finite value(s), got '{s}'")));
            }
            Ok(v)
        })
        .collect()
}

pub fn run(args: &DensityArgs) -> CliResult<()> {
    check_level("--level", args.level)?;
    if args.points < 2 {
        return Err(CliError::Input("--points must be at least 2".into()));
    }
    let spec = args.model.spec()?;
    let at = parse_at(&args.at, &spec)?;
    let fitted = args.model.fit()?;
    let fit = &fitted.fit;
    let pad = 3.0 * fit.grid.tau_c();
    let mut curves: Vec<Curve> = Vec::with_capacity(at.len());
    for a in &at {
        let shift = match fit.beta() {
            Some(beta) if matches!(spec, ModelSpec::Location { .. }) => a.iter().zip(beta).map(|(x, b)| x * b).sum(),
            _ => 0.0,
        };
        let range = (fit.grid.lower() + shift - pad, fit.grid.upper() + shift + pad);
        curves.push(density_curve(fit, a, &fitted.cov, args.level, range, args.points)?);
    }

    let mut out = Output::open(args.out.as_deref())?;
    let name = out.name().to_string();
    let err = |e: csv::Error| CliError::write(&name, e);
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let regression = !matches!(spec, ModelSpec::Intercept);
        let mut header = vec!["theta", "f", "ci_lo", "ci_hi"];
        if regression {
            header.insert(0, "at");
        }
        w.write_record(&header).map_err(err)?;
        let f = |x: f64| format!("{x:?}");
        for c in &curves {
            let label = c.at.as_ref().map(|a| a.iter().map(|x| f(*x)).collect::<Vec<_>>().join(";"));
            for i in 0..c.theta.len() {
                let mut row = vec![f(c.theta[i]), f(c.f[i]), f(c.ci_lo[i]), f(c.ci_hi[i])];
                if let Some(l) = &label {
                    row.insert(0, l.clone());
                }
                w.write_record(&row).map_err(err)?;
            }
        }
        w.flush().map_err(|e| CliError::write(&name, e))?;
    }
    out.finish()
}
