//! Scenario definitions and their TOML configuration file.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DEFAULT_ORDER;
use crate::sim::generators::{gamma_scale, TrueDistribution};

/// Which simulation design a scenario follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Independent effects, PGM vs normal ML.
    Sim1,
    /// Clustered effects with one covariate, naive vs cluster-robust PGM.
    Sim2,
}

pub const DEFAULT_PROBS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

fn default_probs() -> Vec<f64> {
    DEFAULT_PROBS.to_vec()
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub family: Family,
    /// True-effect distribution (sim1 only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<TrueDistribution>,
    /// Studies (sim1) or clusters (sim2).
    pub size: usize,
    pub i2: f64,
    /// Share of cluster-level heterogeneity (sim2 only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of components; default `round(10·log10 n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Exponents `e` of the smoothing grid `exp(e)`; default -5..=5.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_lambda: Option<Vec<f64>>,
    #[serde(default = "default_order")]
    pub d: usize,
    /// Percentiles whose tail probabilities are targets.
    #[serde(default = "default_probs")]
    pub probs: Vec<f64>,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl Scenario {
    pub fn sim1(name: &str, dist: TrueDistribution, n: usize, i2: f64, replications: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            family: Family::Sim1,
            dist: Some(dist),
            size: n,
            i2,
            r: None,
            replications,
            seed,
            k: None,
            log_lambda: None,
            d: DEFAULT_ORDER,
            probs: default_probs(),
            level: 0.95,
        }
    }

    pub fn sim2(name: &str, clusters: usize, r: f64, i2: f64, replications: usize, seed: u64) -> Self {
        Self {
            name: name.into(),
            family: Family::Sim2,
            dist: None,
            size: clusters,
            i2,
            r: Some(r),
            replications,
            seed,
            k: None,
            log_lambda: None,
            d: DEFAULT_ORDER,
            probs: default_probs(),
            level: 0.95,
        }
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        match &self.log_lambda {
            Some(e) => e.iter().map(|x| x.exp()).collect(),
            None => crate::optimizer::default_lambda_grid(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scenario '{}': {msg}", self.name)));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if let Err(e) = gamma_scale(self.i2) {
            return bad(e.to_string());
        }
        if self.probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return bad(format!("probabilities must lie in (0, 1), got {:?}", self.probs));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if matches!(&self.log_lambda, Some(g) if g.is_empty() || g.iter().any(|x| !x.is_finite())) {
            return bad("log_lambda must be a nonempty list of finite numbers".into());
        }
        match self.family {
            Family::Sim1 => {
                if self.dist.is_none() {
                    return bad("sim1 needs 'dist'".into());
                }
                if self.r.is_some() {
                    return bad("'r' only applies to sim2".into());
                }
                if self.size < 3 {
                    return bad(format!("size must be at least 3, got {}", self.size));
                }
            }
            Family::Sim2 => {
                if self.dist.is_some() {
                    return bad("'dist' only applies to sim1".into());
                }
                match self.r {
                    Some(r) if (0.0..=1.0).contains(&r) => {}
                    Some(r) => return bad(format!("r must lie in [0, 1], got {r}")),
                    None => return bad("sim2 needs 'r'".into()),
                }
                if self.size < 2 {
                    return bad(format!("size must be at least 2 clusters, got {}", self.size));
                }
            }
        }
        Ok(())
    }
}

/// Top-level config: a list of `[[scenario]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
}

impl SimConfig {
    /// Parses and validates; syntax errors report the 1-based line.
    pub fn parse(text: &str) -> Result<Self> {
        let config: SimConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            match line {
                Some(line) => Error::Config(format!("line {line}: {}", e.message())),
                None => Error::Config(e.message().to_string()),
            }
        })?;
        if config.scenarios.is_empty() {
            return Err(Error::Config("config defines no scenarios".into()));
        }
        for s in &config.scenarios {
            s.validate()?;
        }
        Ok(config)
    }
}
