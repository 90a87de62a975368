//! Run configuration: a TOML file covering the population, seeds, trainer,
//! environment sweep, and hurdle gate.

use crate::envs::{build_env_set, EnvConfig, EnvFamily, EnvSet};
use crate::fitness::FitnessConfig;
use crate::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config field `{field}`: {msg}")]
    Field { field: &'static str, msg: String },
}

fn field_err(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        msg: msg.into(),
    }
}

/// Environment section: a base instance plus per-parameter sweep values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvSpec {
    pub family: EnvFamily,
    #[serde(default)]
    pub mass: Option<f64>,
    #[serde(default)]
    pub length: Option<f64>,
    #[serde(default)]
    pub rollout_length: Option<usize>,
    #[serde(default)]
    pub min_return: Option<f64>,
    #[serde(default)]
    pub max_return: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Parameter name -> sweep values (must include the training default).
    #[serde(default)]
    pub sweep: BTreeMap<String, Vec<f64>>,
}

impl EnvSpec {
    pub fn pendulum_desk() -> Self {
        EnvSpec {
            family: EnvFamily::Pendulum,
            mass: None,
            length: None,
            rollout_length: None,
            min_return: None,
            max_return: None,
            dt: None,
            sweep: BTreeMap::new(),
        }
    }

    pub fn base(&self) -> EnvConfig {
        let mut cfg = match self.family {
            EnvFamily::Pendulum => EnvConfig::pendulum_desk(),
            EnvFamily::PointMass => EnvConfig::pointmass_desk(),
        };
        if let Some(v) = self.mass {
            cfg.mass = v;
        }
        if let Some(v) = self.length {
            cfg.length = v;
        }
        if let Some(v) = self.rollout_length {
            cfg.rollout_length = v;
        }
        if let Some(v) = self.min_return {
            cfg.min_return = v;
        }
        if let Some(v) = self.max_return {
            cfg.max_return = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        cfg
    }

    pub fn build_set(&self) -> Result<EnvSet, ConfigError> {
        let sweeps: Vec<(String, Vec<f64>)> = self
            .sweep
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        build_env_set(self.base(), &sweeps).map_err(|e| field_err("env.sweep", e.to_string()))
    }
}

/// Cheap screening stage ahead of the full evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HurdleSpec {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Number of hurdle seeds.
    #[serde(default = "default_hurdle_seeds")]
    pub seeds: usize,
    /// Minimum mean normalized return to pass.
    #[serde(default = "default_hurdle_threshold")]
    pub threshold: f64,
    /// Training episodes on the hurdle environment.
    #[serde(default = "default_hurdle_episodes")]
    pub episodes: usize,
}

fn default_true() -> bool {
    true
}

fn default_hurdle_seeds() -> usize {
    2
}

fn default_hurdle_threshold() -> f64 {
    0.2
}

fn default_hurdle_episodes() -> usize {
    8
}

impl Default for HurdleSpec {
    fn default() -> Self {
        HurdleSpec {
            enabled: true,
            seeds: default_hurdle_seeds(),
            threshold: default_hurdle_threshold(),
            episodes: default_hurdle_episodes(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Population capacity P_max.
    pub population: usize,
    /// Generations after the initial population/offspring round.
    pub generations: usize,
    pub max_nodes: usize,
    pub master_seed: u64,
    /// Worker threads for parallel evaluation; 0 = all cores.
    #[serde(default)]
    pub workers: usize,
    pub out_dir: PathBuf,
    pub seeds_train: Vec<u64>,
    pub seeds_valid: Vec<u64>,
    pub seeds_test: Vec<u64>,
    #[serde(default)]
    pub fitness: FitnessConfig,
    pub trainer: TrainerConfig,
    pub env: EnvSpec,
    #[serde(default)]
    pub hurdle: HurdleSpec,
    /// Meta-validate only the best `validate_top` individuals by
    /// meta-training rank; absent = all.
    #[serde(default)]
    pub validate_top: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.population < 2 {
            return Err(field_err("population", "must be at least 2"));
        }
        if self.max_nodes < 33 {
            return Err(field_err("max_nodes", "must fit the 33-node warm start"));
        }
        if self.seeds_train.is_empty() {
            return Err(field_err("seeds_train", "must not be empty"));
        }
        for (field, seeds) in [
            ("seeds_valid", (&self.seeds_train, &self.seeds_valid)),
            ("seeds_test", (&self.seeds_train, &self.seeds_test)),
        ] {
            let (train, other) = seeds;
            if other.iter().any(|s| train.contains(s)) {
                return Err(field_err(field, "must be disjoint from seeds_train"));
            }
        }
        if self
            .seeds_valid
            .iter()
            .any(|s| self.seeds_test.contains(s))
        {
            return Err(field_err("seeds_test", "must be disjoint from seeds_valid"));
        }
        self.trainer
            .check()
            .map_err(|msg| field_err("trainer", msg))?;
        self.env
            .base()
            .check()
            .map_err(|e| field_err("env", e.to_string()))?;
        self.env.build_set()?;
        if !(0.0..=1.0).contains(&self.hurdle.threshold) {
            return Err(field_err("hurdle.threshold", "must lie in [0, 1]"));
        }
        if self.fitness.n_eval == 0 {
            return Err(field_err("fitness.n_eval", "must be positive"));
        }
        Ok(())
    }

    /// Hurdle environment: the cheap point-mass regulator.
    pub fn hurdle_env(&self) -> EnvConfig {
        EnvConfig::pointmass_desk()
    }

    /// Trainer configuration for hurdle runs (same settings, fewer
    /// episodes).
    pub fn hurdle_trainer(&self) -> TrainerConfig {
        TrainerConfig {
            episodes: self.hurdle.episodes,
            ..self.trainer.clone()
        }
    }

    /// A small end-to-end configuration used by tests and the bundled
    /// example config.
    pub fn desk_demo(out_dir: PathBuf) -> RunConfig {
        let mut sweep = BTreeMap::new();
        sweep.insert("mass".to_string(), vec![0.5, 0.75, 1.0, 1.5, 2.0]);
        sweep.insert("length".to_string(), vec![0.5, 0.75, 1.0, 1.5, 2.0]);
        RunConfig {
            population: 16,
            generations: 3,
            max_nodes: 60,
            master_seed: 17,
            workers: 0,
            out_dir,
            seeds_train: vec![0, 1],
            seeds_valid: vec![1000, 1001],
            seeds_test: vec![2000, 2001],
            fitness: FitnessConfig {
                kappa: 1.0,
                n_eval: 4,
            },
            trainer: TrainerConfig {
                episodes: 8,
                min_replay: 400,
                batch_size: 32,
                hidden: vec![32, 32],
                ..TrainerConfig::desk()
            },
            env: EnvSpec {
                sweep,
                ..EnvSpec::pendulum_desk()
            },
            hurdle: HurdleSpec::default(),
            validate_top: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_config_round_trips_through_toml() {
        let cfg = RunConfig::desk_demo(PathBuf::from("out"));
        cfg.check().unwrap();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let parsed: RunConfig = toml::from_str(&text).unwrap();
        parsed.check().unwrap();
        assert_eq!(parsed.population, cfg.population);
        assert_eq!(parsed.env.sweep, cfg.env.sweep);
    }

    #[test]
    fn overlapping_seed_sets_are_rejected() {
        let mut cfg = RunConfig::desk_demo(PathBuf::from("out"));
        cfg.seeds_valid = vec![0];
        let err = cfg.check().unwrap_err();
        assert!(err.to_string().contains("seeds_valid"), "{err}");
    }
}
