use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ExperimentConfig, Variant};
use super::experiment::{run_experiment, ExperimentReport};
use super::summary::{summarize, write_summary, SummaryTable};
use crate::algos::Algorithm;
use crate::{Error, Result};

/// Fields a degraded variant may change.
pub const VARIED_FIELDS: [&str; 5] = ["lambda", "gamma", "vf_coeff", "vf_lr", "vf_epochs"];
/// Fields held fixed across variants; overriding one is an error.
pub const FIXED_FIELDS: [&str; 4] = ["minibatch_size", "steps_per_env", "epochs", "lr"];

/// Name of the unmodified run inside a sweep.
pub const BASE_RUN: &str = "base";

/// Stand-in degraded settings.
pub fn builtin_variants() -> Vec<Variant> {
    let v = |name: &str, pairs: &[(&str, toml::Value)]| Variant {
        name: name.into(),
        overrides: pairs
            .iter()
            .map(|(k, x)| (k.to_string(), x.clone()))
            .collect::<BTreeMap<_, _>>(),
    };
    vec![
        v("params1", &[("lambda", 0.8.into()), ("gamma", 0.9.into())]),
        v("params2", &[("vf_coeff", 0.05.into()), ("vf_lr", 3e-5.into())]),
        v(
            "params3",
            &[("lambda", 0.8.into()), ("gamma", 0.9.into()), ("vf_epochs", 1.into())],
        ),
    ]
}

fn float(variant: &str, field: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Config(format!("variant {variant:?}: {field} must be a number"))),
    }
}

/// `base` with the overrides of `variant` applied; the run is named after the variant.
pub fn apply_variant(base: &ExperimentConfig, variant: &Variant) -> Result<ExperimentConfig> {
    let name = &variant.name;
    if name.is_empty() || name == BASE_RUN {
        return Err(Error::Config(format!("variant name {name:?} is reserved or empty")));
    }
    let mut cfg = base.clone();
    cfg.name = name.clone();
    cfg.sweep = Default::default();
    for (field, value) in &variant.overrides {
        let field = field.as_str();
        if FIXED_FIELDS.contains(&field) {
            return Err(Error::FixedField {
                variant: name.clone(),
                field: field.into(),
            });
        }
        match field {
            "lambda" => cfg.rollout.lambda = float(name, field, value)?,
            "gamma" => cfg.rollout.gamma = float(name, field, value)?,
            "vf_coeff" => match cfg.algorithm {
                Algorithm::Ppo => cfg.ppo.vf_coeff = float(name, field, value)?,
                Algorithm::Trpo => {
                    return Err(Error::Config(format!(
                        "variant {name:?}: vf_coeff has no effect under trpo"
                    )))
                }
            },
            "vf_lr" => {
                let x = float(name, field, value)?;
                match cfg.algorithm {
                    Algorithm::Ppo => cfg.ppo.vf_lr = Some(x),
                    Algorithm::Trpo => cfg.trpo.vf_lr = x,
                }
            }
            "vf_epochs" => {
                let n = value
                    .as_integer()
                    .and_then(|i| usize::try_from(i).ok())
                    .ok_or_else(|| {
                        Error::Config(format!("variant {name:?}: vf_epochs must be a non-negative integer"))
                    })?;
                match cfg.algorithm {
                    Algorithm::Ppo => cfg.ppo.vf_epochs = Some(n),
                    Algorithm::Trpo => cfg.trpo.vf_epochs = n,
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "variant {name:?}: unknown field {other:?} (allowed: {})",
                    VARIED_FIELDS.join(", ")
                )))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug)]
pub struct SweepReport {
    pub dir: PathBuf,
    /// Base first, then variants in the given order.
    pub runs: Vec<ExperimentReport>,
    pub summary: SummaryTable,
    pub curve_files: Vec<PathBuf>,
}

impl SweepReport {
    pub fn failures(&self) -> usize {
        self.runs.iter().map(ExperimentReport::failures).sum()
    }
}

/// Runs the base configuration and each variant under `out_root/<base name>`,
/// then writes a combined summary with one curve file per run.
/// Every variant is checked before anything is trained.
pub fn sweep_degraded(base: &ExperimentConfig, variants: &[Variant], out_root: &Path) -> Result<SweepReport> {
    base.validate()?;
    let mut configs = vec![ExperimentConfig {
        name: BASE_RUN.into(),
        sweep: Default::default(),
        ..base.clone()
    }];
    for v in variants {
        let cfg = apply_variant(base, v)?;
        if configs.iter().any(|c| c.name == cfg.name) {
            return Err(Error::Config(format!("duplicate variant name {:?}", cfg.name)));
        }
        configs.push(cfg);
    }
    let dir = out_root.join(&base.name);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let runs = configs
        .iter()
        .map(|c| run_experiment(c, &dir))
        .collect::<Result<Vec<_>>>()?;
    let run_dirs: Vec<PathBuf> = runs.iter().map(|r| r.dir.clone()).collect();
    let (summary, curves) = summarize(&run_dirs)?;
    let curve_files = write_summary(&dir, &summary, &curves)?;
    Ok(SweepReport {
        dir,
        runs,
        summary,
        curve_files,
    })
}
