//! Monte Carlo harness for the single-level and clustered simulation designs.

pub mod config;
pub mod generators;
pub mod run;

pub use config::{Family, Scenario, SimConfig};
pub use generators::{gen_sim1, gen_sim2, gen_true_effects, gen_variances, true_quantiles_sim2, TrueDistribution};
pub use run::{aggregate, iae, replicate, replication_rng, run_scenario, write_summary_csv, SimSummary};
