//! The `simulate` command.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use pgmeta::sim::run::{IAE_HALF_WIDTH, IAE_POINTS};
use pgmeta::sim::{run_scenario, write_summary_csv, Scenario, SimConfig, SimSummary};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::report::SCHEMA_VERSION;

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Scenario file (TOML, a list of [[scenario]] tables).
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Base seed for every scenario, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct IaeSettings {
    lower_offset: f64,
    upper_offset: f64,
    points: usize,
    rule: &'static str,
}

#[derive(Debug, Serialize)]
struct ScenarioEntry<'a> {
    scenario: &'a Scenario,
    output: String,
    summary: &'a SimSummary,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    software_version: &'static str,
    config: String,
    seed_override: Option<u64>,
    seeding: &'static str,
    iae: IaeSettings,
    scenarios: Vec<ScenarioEntry<'a>>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.')) && name != "manifest"
}

pub fn load(path: &Path, seed: Option<u64>) -> CliResult<SimConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut config = SimConfig::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for (i, s) in config.scenarios.iter().enumerate() {
        if !valid_name(&s.name) {
            return Err(CliError::Input(format!(
                "{}: scenario name '{}' must be nonempty and use only letters, digits, '-', '_' or '.'",
                path.display(),
                s.name
            )));
        }
        if config.scenarios[..i].iter().any(|t| t.name == s.name) {
            return Err(CliError::Input(format!("{}: duplicate scenario name '{}'", path.display(), s.name)));
        }
    }
    if let Some(seed) = seed {
        for s in &mut config.scenarios {
            s.seed = seed;
        }
    }
    Ok(config)
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let config = load(&args.config, args.seed)?;
    if args.jobs == Some(0) {
        return Err(CliError::Input("--jobs must be at least 1".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = args.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::Input(format!("--jobs: {e}")))?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::write(args.out.display(), e))?;

    let mut summaries = Vec::with_capacity(config.scenarios.len());
    for s in &config.scenarios {
        log::info!("scenario {}: {} replications", s.name, s.replications);
        let summary = pool.install(|| run_scenario(s))?;
        if summary.failures * 20 > summary.replications {
            log::warn!("scenario {}: {} of {} replications failed", s.name, summary.failures, summary.replications);
        }
        let file = args.out.join(format!("{}.csv", s.name));
        let f = fs::File::create(&file).map_err(|e| CliError::write(file.display(), e))?;
        write_summary_csv(std::io::BufWriter::new(f), std::slice::from_ref(&summary))
            .map_err(|e| CliError::write(file.display(), e))?;
        summaries.push(summary);
    }

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION"),
        config: args.config.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        seed_override: args.seed,
        seeding: "ChaCha8 seeded with the scenario seed, stream = replication index",
        iae: IaeSettings {
            lower_offset: -IAE_HALF_WIDTH,
            upper_offset: IAE_HALF_WIDTH,
            points: IAE_POINTS,
            rule: "trapezoid around the true mean",
        },
        scenarios: config
            .scenarios
            .iter()
            .zip(&summaries)
            .map(|(s, summary)| ScenarioEntry { scenario: s, output: format!("{}.csv", s.name), summary })
            .collect(),
    };
    let path = args.out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::write(path.display(), e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::write(path.display(), e))
}
