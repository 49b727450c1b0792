use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algos::{Algorithm, NetConfig, PpoConfig, RolloutConfig, TrainConfig, TrpoConfig};
use crate::conditioning::{CondConfig, DEFAULT_PROBES};
use crate::envs::{check_disjoint, make_levelsets, read_manifest, EnvKind, LevelSet};
use crate::{Error, Result};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Default budgets per agent: continuous tasks and the grid task.
pub const DEFAULT_CONTINUOUS_TIMESTEPS: u64 = 200_000;
pub const DEFAULT_PROCGRID_TIMESTEPS: u64 = 500_000;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CONDPOLICY_OUT";

/// Keys accepted for compatibility and otherwise ignored.
const IGNORED_KEYS: [&str; 1] = ["eta"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelsConfig {
    /// `split,seed` manifest; when absent the sets are generated from `master_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub master_seed: u64,
}

impl Default for LevelsConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            n_seen: 500,
            n_unseen: 200,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate every this many updates; 0 evaluates only the final policy.
    pub interval: usize,
    pub episodes_per_level: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 0,
            episodes_per_level: 20,
        }
    }
}

/// A named set of hyperparameter overrides for the degradation sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(flatten)]
    pub overrides: BTreeMap<String, toml::Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Absent means the built-in set; an empty list runs the base only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<Variant>>,
}

/// One experiment: a training configuration replicated over seeds and agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    /// Run directory name under the output root.
    pub name: String,
    pub algorithm: Algorithm,
    pub env: String,
    /// Per agent; defaults depend on the environment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_timesteps: Option<u64>,
    pub seeds: Vec<u64>,
    pub agents_per_seed: usize,
    pub max_parallel_agents: usize,
    pub l2_coeff: f64,
    pub metric_probes: usize,
    /// Save a checkpoint every this many updates; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub log_wall_clock: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub rollout: RolloutConfig,
    pub net: NetConfig,
    pub ppo: PpoConfig,
    pub trpo: TrpoConfig,
    pub cond: CondConfig,
    pub levels: LevelsConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            name: "run".into(),
            algorithm: Algorithm::Ppo,
            env: "pointmass".into(),
            total_timesteps: None,
            seeds: vec![0, 1, 2],
            agents_per_seed: 1,
            max_parallel_agents: 1,
            l2_coeff: 0.0,
            metric_probes: DEFAULT_PROBES,
            checkpoint_interval: 0,
            log_wall_clock: false,
            output: None,
            rollout: RolloutConfig::default(),
            net: NetConfig::default(),
            ppo: PpoConfig::default(),
            trpo: TrpoConfig::default(),
            cond: CondConfig::default(),
            levels: LevelsConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

fn strip_ignored(table: &mut toml::Table, scope: &str) {
    for key in IGNORED_KEYS {
        if table.remove(key).is_some() {
            log::warn!("config key {scope}{key} is not used by this implementation and is ignored");
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse(text, Path::new("<config>"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| perr(e.to_string()))?;
        strip_ignored(&mut table, "");
        if let Some(toml::Value::Table(ppo)) = table.get_mut("ppo") {
            strip_ignored(ppo, "ppo.");
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| perr(e.to_string()))?;
        if cfg.format_version != CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported config format_version {} (expected {CONFIG_FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.agents_per_seed == 0 || self.max_parallel_agents == 0 {
            return Err(Error::Config(
                "agents_per_seed and max_parallel_agents must be at least 1".into(),
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::Config(format!(
                "run name {:?} is not a plain directory name",
                self.name
            )));
        }
        if self.is_procgrid() {
            if self.eval.episodes_per_level == 0 {
                return Err(Error::Config("eval.episodes_per_level must be at least 1".into()));
            }
            if let Some(m) = &self.levels.manifest {
                if !m.is_file() {
                    return Err(Error::Config(format!("level manifest {} does not exist", m.display())));
                }
            }
        } else {
            EnvKind::continuous(&self.env)?;
        }
        self.train_config()?.validate()
    }

    pub fn is_procgrid(&self) -> bool {
        self.env == "procgrid"
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let default_budget = if self.is_procgrid() {
            DEFAULT_PROCGRID_TIMESTEPS
        } else {
            DEFAULT_CONTINUOUS_TIMESTEPS
        };
        Ok(TrainConfig {
            algorithm: self.algorithm,
            total_timesteps: self.total_timesteps.unwrap_or(default_budget),
            rollout: self.rollout.clone(),
            net: self.net.clone(),
            ppo: self.ppo.clone(),
            trpo: self.trpo.clone(),
            cond: self.cond.clone(),
            l2_coeff: self.l2_coeff,
            metric_probes: self.metric_probes,
            log_wall_clock: self.log_wall_clock,
        })
    }

    /// Seen and unseen level sets, checked for disjointness here rather than trusted.
    pub fn level_sets(&self) -> Result<(LevelSet, LevelSet)> {
        let (seen, unseen) = match &self.levels.manifest {
            Some(path) => read_manifest(path)?,
            None => make_levelsets(self.levels.n_seen, self.levels.n_unseen, self.levels.master_seed)?,
        };
        check_disjoint(&seen, &unseen)?;
        Ok((seen, unseen))
    }

    /// Training environment plus the level sets when the task has them.
    pub fn environment(&self) -> Result<(EnvKind, Option<(LevelSet, LevelSet)>)> {
        if self.is_procgrid() {
            let sets = self.level_sets()?;
            Ok((EnvKind::procgrid(&sets.0), Some(sets)))
        } else {
            Ok((EnvKind::continuous(&self.env)?, None))
        }
    }

    /// Explicit `output`, then `$CONDPOLICY_OUT`, then `./runs`.
    pub fn output_root(&self) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_file() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(
            cfg.train_config().unwrap().total_timesteps,
            DEFAULT_CONTINUOUS_TIMESTEPS
        );
    }

    #[test]
    fn round_trip() {
        let text = r#"
            name = "grid"
            algorithm = "trpo"
            env = "procgrid"
            total_timesteps = 4096
            seeds = [3, 4]
            agents_per_seed = 2
            l2_coeff = 1e-4
            [rollout]
            gamma = 0.9
            [ppo]
            vf_lr = 3e-5
            [cond]
            lambda_max = 10.0
            target = "action_mean"
            [levels]
            n_seen = 10
            n_unseen = 5
            [[sweep.variants]]
            name = "low_gamma"
            gamma = 0.8
            vf_epochs = 1
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.rollout.gamma, 0.9);
        assert_eq!(cfg.ppo.vf_lr, Some(3e-5));
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected_but_eta_ignored() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("[ppo]\nbogus = 1").is_err());
        let cfg = ExperimentConfig::from_toml_str("eta = 0.5\n[ppo]\neta = 0.1\nclip_eps = 0.1").unwrap();
        assert_eq!(cfg.ppo.clip_eps, 0.1);
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "seeds = []",
            "agents_per_seed = 0",
            "env = \"cartpole\"",
            "format_version = 2",
            "[ppo]\nclip_eps = 1.5",
            "env = \"procgrid\"\n[levels]\nmanifest = \"/nonexistent/levels.csv\"",
        ] {
            let r = ExperimentConfig::from_toml_str(text).and_then(|c| c.validate());
            assert!(r.is_err(), "{text}");
        }
    }
}
