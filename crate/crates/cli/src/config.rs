//! The JSON config shared by every command. Every section is optional and
//! defaults to the nominal setup.

use crate::error::{input, CliResult};
use macroreal_core::analysis::AnalysisConfig;
use macroreal_core::multiphoton::FitOptions;
use macroreal_core::quantum::{SetupParams, Tolerances};
use macroreal_core::sim::{IterationCounts, SourceConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub setup: SetupParams,
    pub tolerances: Tolerances,
    pub source: SourceConfig,
    pub iterations: IterationCounts,
    pub analysis: AnalysisConfig,
    pub fit: FitConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_evals: usize,
    pub seed: u64,
    /// Known detector efficiencies; pinning both makes γ identifiable.
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        let o = FitOptions::default();
        FitConfig {
            restarts: o.restarts,
            max_evals: o.max_evals,
            seed: o.seed,
            eta1: None,
            eta2: None,
        }
    }
}

impl FitConfig {
    pub fn options(&self) -> FitOptions {
        let mut o = FitOptions {
            restarts: self.restarts,
            seed: self.seed,
            max_evals: self.max_evals,
            ..FitOptions::default()
        };
        o.fixed[5] = self.eta1;
        o.fixed[6] = self.eta2;
        o
    }
}

impl Config {
    /// Parses `text`, reporting schema violations with their field path.
    pub fn parse(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de)
            .map_err(|e| input(format!("config field `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| input(format!("cannot read config {}: {e}", p.display())))?;
                Config::parse(&text)
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let section = |name: &str, r: macroreal_core::Result<()>| {
            r.map_err(|e| input(format!("config section `{name}`: {e}")))
        };
        section("setup", self.setup.validate())?;
        section("source", self.source.validate())?;
        section("analysis", self.analysis.validate())?;
        if self.fit.restarts == 0 || self.fit.max_evals == 0 {
            return Err(input("config section `fit`: restarts and max_evals must be positive"));
        }
        Ok(())
    }

    /// Applies `--seed` to every seeded section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.source.seed = s;
            self.analysis.seed = s;
            self.fit.seed = s;
        }
        self
    }
}
