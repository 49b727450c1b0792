use super::{Action, Env, EnvSpec};
use crate::numkit::{derive_seed, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeStat {
    pub episode_return: f64,
    pub length: usize,
    pub success: bool,
}

/// Result of stepping every member environment once.
#[derive(Clone, Debug)]
pub struct VecStep {
    /// Observation to act on next; after an episode boundary this is the
    /// fresh reset observation.
    pub obs: Tensor,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    /// True next state for envs that just ended (before auto-reset).
    pub final_obs: Vec<Option<Vec<f64>>>,
    pub finished: Vec<Option<EpisodeStat>>,
}

/// Batch of independent environments with automatic reset.
///
/// Env `i` uses `derive_seed(seeds[i], k)` for its `k`-th episode, so the
/// batch trajectory equals running each member on its own.
pub struct VecEnv {
    envs: Vec<Box<dyn Env>>,
    seeds: Vec<u64>,
    episodes: Vec<u64>,
    obs: Vec<Vec<f64>>,
    returns: Vec<f64>,
    lengths: Vec<usize>,
}

impl VecEnv {
    pub fn new(envs: Vec<Box<dyn Env>>, seeds: Vec<u64>) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::InvalidArgument("vec_env needs at least one environment".into()));
        }
        if seeds.len() != envs.len() {
            return Err(Error::Width {
                what: "seed list",
                expected: envs.len(),
                got: seeds.len(),
            });
        }
        let n = envs.len();
        let mut v = Self {
            envs,
            seeds,
            episodes: vec![0; n],
            obs: vec![Vec::new(); n],
            returns: vec![0.0; n],
            lengths: vec![0; n],
        };
        for i in 0..n {
            v.reset_member(i);
        }
        Ok(v)
    }

    /// Builds `n` copies using `make`.
    pub fn from_fn(n: usize, seeds: Vec<u64>, make: impl Fn() -> Box<dyn Env>) -> Result<Self> {
        Self::new((0..n).map(|_| make()).collect(), seeds)
    }

    /// Seed used for episode `episode` of a member seeded with `seed`.
    pub fn episode_seed(seed: u64, episode: u64) -> u64 {
        derive_seed(seed, episode)
    }

    fn reset_member(&mut self, i: usize) {
        let seed = Self::episode_seed(self.seeds[i], self.episodes[i]);
        self.episodes[i] += 1;
        self.obs[i] = self.envs[i].reset(seed);
        self.returns[i] = 0.0;
        self.lengths[i] = 0;
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn spec(&self) -> &EnvSpec {
        self.envs[0].spec()
    }

    pub fn observations(&self) -> Result<Tensor> {
        let dim = self.spec().obs_dim;
        let data: Vec<f64> = self.obs.iter().flatten().copied().collect();
        Ok(Tensor::matrix(self.obs.len(), dim, data)?)
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<VecStep> {
        let n = self.envs.len();
        if actions.len() != n {
            return Err(Error::Width {
                what: "action batch",
                expected: n,
                got: actions.len(),
            });
        }
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        let mut truncated = Vec::with_capacity(n);
        let mut final_obs = Vec::with_capacity(n);
        let mut finished = Vec::with_capacity(n);
        for (i, action) in actions.iter().enumerate() {
            let tr = self.envs[i].step(action)?;
            self.returns[i] += tr.reward;
            self.lengths[i] += 1;
            rewards.push(tr.reward);
            dones.push(tr.done);
            truncated.push(tr.truncated && !tr.done);
            if tr.done || tr.truncated {
                finished.push(Some(EpisodeStat {
                    episode_return: self.returns[i],
                    length: self.lengths[i],
                    success: tr.success,
                }));
                final_obs.push(Some(tr.next_state));
                self.reset_member(i);
            } else {
                finished.push(None);
                final_obs.push(None);
                self.obs[i] = tr.next_state;
            }
        }
        Ok(VecStep {
            obs: self.observations()?,
            rewards,
            dones,
            truncated,
            final_obs,
            finished,
        })
    }
}
