use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::ppo::{ppo_update, PpoConfig};
use super::trpo::{trpo_update, TrpoConfig};
use super::UpdateReport;
use crate::conditioning::{conditioning_metric, CondConfig};
use crate::envs::{ActionSpace, EnvKind, EpisodeStat, VecEnv};
use crate::harness::MetricsRow;
use crate::numkit::{derive_seed, Rng};
use crate::policy::{HeadKind, NetSpec, PolicyNetwork};
use crate::rollout::{collect, RewardScaler};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ppo,
    Trpo,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ppo => "ppo",
            Self::Trpo => "trpo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub n_envs: usize,
    pub steps_per_env: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub normalize_advantages: bool,
    /// Divide rewards by the running std of the discounted return.
    pub normalize_rewards: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            n_envs: 8,
            steps_per_env: 256,
            gamma: 0.99,
            lambda: 0.95,
            normalize_advantages: true,
            normalize_rewards: false,
        }
    }
}

impl RolloutConfig {
    pub fn batch_size(&self) -> usize {
        self.n_envs * self.steps_per_env
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.steps_per_env == 0 {
            return Err(Error::Config("n_envs and steps_per_env must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("gamma and lambda must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub shared_trunk: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            shared_trunk: false,
        }
    }
}

/// Everything one training run needs besides the environment and the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub total_timesteps: u64,
    pub rollout: RolloutConfig,
    pub net: NetConfig,
    pub ppo: PpoConfig,
    pub trpo: TrpoConfig,
    pub cond: CondConfig,
    pub l2_coeff: f64,
    /// States probed by the logged conditioning metric.
    pub metric_probes: usize,
    /// Record elapsed seconds; off keeps metrics byte-reproducible.
    pub log_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            total_timesteps: 200_000,
            rollout: RolloutConfig::default(),
            net: NetConfig::default(),
            ppo: PpoConfig::default(),
            trpo: TrpoConfig::default(),
            cond: CondConfig::default(),
            l2_coeff: 0.0,
            metric_probes: crate::conditioning::DEFAULT_PROBES,
            log_wall_clock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.rollout.validate()?;
        self.ppo.validate()?;
        self.trpo.validate()?;
        self.cond.validate()?;
        if !(self.l2_coeff >= 0.0) {
            return Err(Error::Config("l2_coeff must be non-negative".into()));
        }
        if self.metric_probes == 0 {
            return Err(Error::Config("metric_probes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_updates(&self) -> usize {
        (self.total_timesteps / self.rollout.batch_size() as u64) as usize
    }

    pub fn penalty_enabled(&self) -> bool {
        match self.algorithm {
            Algorithm::Ppo => self.ppo.penalty_enabled,
            Algorithm::Trpo => self.trpo.penalty_enabled,
        }
    }

    pub fn net_spec(&self, env: &EnvKind) -> NetSpec {
        let spec = env.spec();
        let (act_dim, head) = match spec.action {
            ActionSpace::Continuous(n) => (n, HeadKind::Gaussian),
            ActionSpace::Discrete(n) => (n, HeadKind::Categorical),
        };
        NetSpec {
            obs_dim: spec.obs_dim,
            act_dim,
            hidden: self.net.hidden.clone(),
            head,
            shared_trunk: self.net.shared_trunk,
        }
    }
}

/// Hooks called by [`train`].
pub trait TrainObserver {
    /// After every update, with the updated policy.
    fn on_update(&mut self, _row: &MetricsRow, _report: &UpdateReport, _net: &PolicyNetwork) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

pub struct TrainOutcome {
    pub net: PolicyNetwork,
    pub history: Vec<MetricsRow>,
}

// Sub-stream ids of the per-run generator family.
const STREAM_ENV: u64 = 1;
const STREAM_ACTIONS: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_COND: u64 = 4;
const STREAM_METRIC: u64 = 5;

/// Initial policy of a run; independent of every algorithm and penalty setting.
pub fn initial_policy(env: &EnvKind, cfg: &TrainConfig, seed: u64) -> Result<PolicyNetwork> {
    PolicyNetwork::init(cfg.net_spec(env), derive_seed(seed, 0))
}

/// Environment seeds of a run, one per vectorized member.
pub fn env_seeds(seed: u64, n_envs: usize) -> Vec<u64> {
    let base = derive_seed(seed, STREAM_ENV);
    (0..n_envs as u64).map(|i| derive_seed(base, i)).collect()
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn return_stats(stats: &[EpisodeStat], prev: Option<&MetricsRow>) -> (f64, f64, f64, f64, f64) {
    if stats.is_empty() {
        return prev.map_or((0.0, 0.0, 0.0, 0.0, 0.0), |p| {
            (
                p.return_mean,
                p.return_median,
                p.return_min,
                p.return_max,
                p.success_rate,
            )
        });
    }
    let mut r: Vec<f64> = stats.iter().map(|s| s.episode_return).collect();
    r.sort_by(f64::total_cmp);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    let success = stats.iter().filter(|s| s.success).count() as f64 / stats.len() as f64;
    (mean, median(&r), r[0], r[r.len() - 1], success)
}

/// Collect → update → log, for `cfg.n_updates()` updates. Deterministic in `seed`.
pub fn train(env: &EnvKind, cfg: &TrainConfig, seed: u64, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut net = initial_policy(env, cfg, seed)?;
    let n_envs = cfg.rollout.n_envs;
    let mut venv = VecEnv::new((0..n_envs).map(|_| env.build()).collect(), env_seeds(seed, n_envs))?;
    let mut action_rng = Rng::stream(seed, STREAM_ACTIONS);
    let mut shuffle_rng = Rng::stream(seed, STREAM_SHUFFLE);
    let mut cond_rng = Rng::stream(seed, STREAM_COND);
    let mut metric_rng = Rng::stream(seed, STREAM_METRIC);
    let mut scaler = cfg
        .rollout
        .normalize_rewards
        .then(|| RewardScaler::new(n_envs, cfg.rollout.gamma));
    let mut opt = Adam::new(net.params());
    let start = Instant::now();
    let mut history: Vec<MetricsRow> = Vec::with_capacity(cfg.n_updates());

    for update in 0..cfg.n_updates() {
        let at = |e: Error| Error::AtUpdate {
            update,
            source: Box::new(e),
        };
        let mut batch = collect(
            &net,
            &mut venv,
            cfg.rollout.steps_per_env,
            &mut action_rng,
            scaler.as_mut(),
        )
        .map_err(at)?;
        batch
            .compute_advantages(cfg.rollout.gamma, cfg.rollout.lambda)
            .map_err(at)?;
        if cfg.rollout.normalize_advantages {
            batch.normalize_advantages();
        }
        let report = match cfg.algorithm {
            Algorithm::Ppo => ppo_update(
                &mut net,
                &mut opt,
                &batch,
                &cfg.ppo,
                &cfg.cond,
                cfg.l2_coeff,
                &mut shuffle_rng,
                &mut cond_rng,
            ),
            Algorithm::Trpo => trpo_update(
                &mut net,
                &mut opt,
                &batch,
                &cfg.trpo,
                &cfg.cond,
                cfg.l2_coeff,
                &mut shuffle_rng,
                &mut cond_rng,
            ),
        }
        .map_err(at)?;
        let metric =
            conditioning_metric(&net, &batch.states, &cfg.cond, &mut metric_rng, cfg.metric_probes).map_err(at)?;
        let (mean, med, min, max, success) = return_stats(&batch.episode_stats, history.last());
        let row = MetricsRow {
            update,
            timesteps: ((update + 1) * cfg.rollout.batch_size()) as u64,
            return_mean: mean,
            return_median: med,
            return_min: min,
            return_max: max,
            episodes: batch.episode_stats.len(),
            psi: metric.psi,
            psi_min: metric.psi_min,
            psi_max: metric.psi_max,
            j_mean: metric.j_mean(),
            j_max: metric.j_max(),
            j_min: metric.j_min(),
            policy_loss: report.policy_loss,
            value_loss: report.value_loss,
            entropy: report.entropy,
            kl: report.kl,
            clip_fraction: report.clip_fraction,
            grad_norm: report.grad_norm,
            accepted: report.accepted,
            skipped_minibatches: report.skipped_minibatches,
            success_rate: success,
            wall_clock_s: if cfg.log_wall_clock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        if !row.all_finite() {
            return Err(at(Error::NonFinite(format!("metrics row {row:?}"))));
        }
        observer.on_update(&row, &report, &net).map_err(at)?;
        history.push(row);
    }
    Ok(TrainOutcome { net, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::make_levelsets;

    fn tiny(algorithm: Algorithm) -> TrainConfig {
        TrainConfig {
            algorithm,
            total_timesteps: 3 * 64,
            rollout: RolloutConfig {
                n_envs: 2,
                steps_per_env: 32,
                ..RolloutConfig::default()
            },
            net: NetConfig {
                hidden: vec![8],
                shared_trunk: false,
            },
            ppo: PpoConfig {
                epochs: 2,
                minibatch_size: 16,
                penalty_enabled: true,
                ..PpoConfig::default()
            },
            trpo: TrpoConfig {
                vf_epochs: 1,
                vf_minibatch_size: 32,
                ..TrpoConfig::default()
            },
            metric_probes: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn runs_and_is_deterministic() {
        let (seen, _) = make_levelsets(4, 2, 1).unwrap();
        for env in [EnvKind::PointMass, EnvKind::PendulumLite, EnvKind::procgrid(&seen)] {
            for alg in [Algorithm::Ppo, Algorithm::Trpo] {
                let cfg = tiny(alg);
                let a = train(&env, &cfg, 3, &mut ()).unwrap();
                let b = train(&env, &cfg, 3, &mut ()).unwrap();
                assert_eq!(a.history.len(), 3);
                assert_eq!(a.history, b.history);
                assert_eq!(a.net.parameter_vector(), b.net.parameter_vector());
                assert_eq!(a.history[2].timesteps, 192);
            }
        }
    }

    #[test]
    fn zero_budget_returns_initial_policy() {
        let cfg = TrainConfig {
            total_timesteps: 10,
            ..tiny(Algorithm::Ppo)
        };
        let out = train(&EnvKind::PointMass, &cfg, 4, &mut ()).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.net, initial_policy(&EnvKind::PointMass, &cfg, 4).unwrap());
    }

    #[test]
    fn initial_policy_ignores_algorithm_settings() {
        let a = initial_policy(&EnvKind::PointMass, &tiny(Algorithm::Ppo), 9).unwrap();
        let mut cfg = tiny(Algorithm::Trpo);
        cfg.ppo.penalty_enabled = false;
        cfg.trpo.penalty_enabled = true;
        assert_eq!(a, initial_policy(&EnvKind::PointMass, &cfg, 9).unwrap());
    }

    struct Failing;
    impl TrainObserver for Failing {
        fn on_update(&mut self, row: &MetricsRow, _: &UpdateReport, _: &PolicyNetwork) -> Result<()> {
            if row.update == 1 {
                return Err(Error::InvalidArgument("stop".into()));
            }
            Ok(())
        }
    }

    #[test]
    fn errors_carry_the_update_index() {
        let err = train(&EnvKind::PointMass, &tiny(Algorithm::Ppo), 5, &mut Failing)
            .err()
            .unwrap();
        assert!(matches!(err, Error::AtUpdate { update: 1, .. }), "{err}");
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = tiny(Algorithm::Ppo);
        cfg.rollout.n_envs = 0;
        assert!(train(&EnvKind::PointMass, &cfg, 1, &mut ()).is_err());
    }
}
