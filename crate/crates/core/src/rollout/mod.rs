//! Trajectory collection, advantage estimation and minibatching.

mod gae;

pub use gae::{gae, normalize};

use crate::envs::{Action, EpisodeStat, VecEnv};
use crate::numkit::{Rng, Tensor};
use crate::policy::{actions_to_tensor, PolicyNetwork};
use crate::{Error, Result};

/// Transitions from `steps` steps of `n_envs` environments, stored time-major:
/// row `t * n_envs + i` is step `t` of env `i`.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub steps: usize,
    pub states: Tensor,
    pub actions: Tensor,
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub truncations: Vec<bool>,
    /// `V` of the true next state where a trajectory is cut (truncation or
    /// end of rollout), 0 elsewhere.
    pub bootstrap_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub episode_stats: Vec<EpisodeStat>,
}

/// Optimizer-ready slice of a batch.
#[derive(Clone, Debug)]
pub struct Minibatch {
    pub states: Tensor,
    pub actions: Tensor,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Scales rewards by the running standard deviation of the discounted return.
#[derive(Clone, Debug)]
pub struct RewardScaler {
    gamma: f64,
    running: Vec<f64>,
    count: f64,
    mean: f64,
    m2: f64,
}

impl RewardScaler {
    pub fn new(n_envs: usize, gamma: f64) -> Self {
        Self {
            gamma,
            running: vec![0.0; n_envs],
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    fn observe(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    pub fn std(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count).sqrt().max(1e-4)
        }
    }

    /// Scales one step of rewards; `ended[i]` restarts env `i`'s return.
    pub fn scale(&mut self, rewards: &mut [f64], ended: &[bool]) {
        for i in 0..rewards.len() {
            self.running[i] = self.running[i] * self.gamma + rewards[i];
            let r = self.running[i];
            self.observe(r);
            if ended[i] {
                self.running[i] = 0.0;
            }
        }
        let s = self.std();
        rewards.iter_mut().for_each(|r| *r /= s);
    }
}

/// Runs `net` for `steps` steps in every environment of `venv`, sampling actions.
pub fn collect(
    net: &PolicyNetwork,
    venv: &mut VecEnv,
    steps: usize,
    rng: &mut Rng,
    mut scaler: Option<&mut RewardScaler>,
) -> Result<RolloutBatch> {
    if steps == 0 {
        return Err(Error::InvalidArgument("rollout length must be at least 1".into()));
    }
    let n = venv.len();
    let obs_dim = venv.spec().obs_dim;
    let total = n * steps;
    let mut states = Vec::with_capacity(total * obs_dim);
    let mut actions: Vec<Action> = Vec::with_capacity(total);
    let mut old_log_probs = Vec::with_capacity(total);
    let mut rewards = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    let mut dones = Vec::with_capacity(total);
    let mut truncations = Vec::with_capacity(total);
    let mut bootstrap_values = vec![0.0; total];
    let mut episode_stats = Vec::new();

    let mut obs = venv.observations()?;
    for t in 0..steps {
        let (dist, v) = net.forward(&obs)?;
        let step_actions: Vec<Action> = (0..n).map(|i| dist.row(i).sample(rng)).collect();
        old_log_probs.extend(dist.log_probs(&actions_to_tensor(&step_actions)?)?);
        let step = venv.step(&step_actions)?;
        states.extend_from_slice(obs.data());
        values.extend(v);
        actions.extend(step_actions);

        let cut: Vec<usize> = (0..n).filter(|&i| step.truncated[i]).collect();
        if !cut.is_empty() {
            let rows: Vec<f64> = cut
                .iter()
                .flat_map(|&i| step.final_obs[i].clone().unwrap_or_default())
                .collect();
            let boot = net.values(&Tensor::matrix(cut.len(), obs_dim, rows)?)?;
            for (&i, b) in cut.iter().zip(boot) {
                bootstrap_values[t * n + i] = b;
            }
        }
        let mut r = step.rewards.clone();
        if let Some(s) = scaler.as_deref_mut() {
            let ended: Vec<bool> = (0..n).map(|i| step.dones[i] || step.truncated[i]).collect();
            s.scale(&mut r, &ended);
        }
        rewards.extend(r);
        dones.extend_from_slice(&step.dones);
        truncations.extend_from_slice(&step.truncated);
        episode_stats.extend(step.finished.iter().flatten().copied());
        obs = step.obs;
    }
    let last = net.values(&obs)?;
    for i in 0..n {
        let k = (steps - 1) * n + i;
        if !dones[k] && !truncations[k] {
            bootstrap_values[k] = last[i];
        }
    }

    Ok(RolloutBatch {
        n_envs: n,
        steps,
        states: Tensor::matrix(total, obs_dim, states)?,
        actions: actions_to_tensor(&actions)?,
        old_log_probs,
        rewards,
        values,
        dones,
        truncations,
        bootstrap_values,
        advantages: vec![0.0; total],
        returns: vec![0.0; total],
        episode_stats,
    })
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Fills `advantages` and `returns` by running GAE on each env's column.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let (n, steps) = (self.n_envs, self.steps);
        for i in 0..n {
            let col = |xs: &[f64]| (0..steps).map(|t| xs[t * n + i]).collect::<Vec<_>>();
            let colb = |xs: &[bool]| (0..steps).map(|t| xs[t * n + i]).collect::<Vec<_>>();
            let (adv, ret) = gae(
                &col(&self.rewards),
                &col(&self.values),
                &colb(&self.dones),
                &colb(&self.truncations),
                &col(&self.bootstrap_values),
                gamma,
                lambda,
            )?;
            for t in 0..steps {
                self.advantages[t * n + i] = adv[t];
                self.returns[t * n + i] = ret[t];
            }
        }
        if !self.advantages.iter().all(|a| a.is_finite()) {
            return Err(Error::NonFinite("advantages".into()));
        }
        Ok(())
    }

    pub fn normalize_advantages(&mut self) {
        normalize(&mut self.advantages);
    }

    pub fn select(&self, idx: &[usize]) -> Result<Minibatch> {
        let obs_dim = self.states.cols();
        let act_w = self.actions.cols();
        let mut states = Vec::with_capacity(idx.len() * obs_dim);
        let mut actions = Vec::with_capacity(idx.len() * act_w);
        for &k in idx {
            if k >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "index {k} outside batch of {}",
                    self.len()
                )));
            }
            states.extend_from_slice(self.states.row(k));
            actions.extend_from_slice(self.actions.row(k));
        }
        let pick = |xs: &[f64]| idx.iter().map(|&k| xs[k]).collect::<Vec<_>>();
        Ok(Minibatch {
            states: Tensor::matrix(idx.len(), obs_dim, states)?,
            actions: Tensor::matrix(idx.len(), act_w, actions)?,
            old_log_probs: pick(&self.old_log_probs),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
        })
    }

    pub fn full(&self) -> Minibatch {
        Minibatch {
            states: self.states.clone(),
            actions: self.actions.clone(),
            old_log_probs: self.old_log_probs.clone(),
            advantages: self.advantages.clone(),
            returns: self.returns.clone(),
        }
    }
}

/// Shuffled partition of `0..n` into chunks of `size` (the last may be short).
pub fn minibatches(n: usize, size: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if size == 0 {
        return Err(Error::InvalidArgument("minibatch size must be positive".into()));
    }
    if size > n {
        return Err(Error::InvalidArgument(format!(
            "minibatch size {size} exceeds batch of {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::new(shuffle_seed).shuffle(&mut idx);
    Ok(idx.chunks(size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{PointMass, ProcGrid};
    use crate::policy::{HeadKind, NetSpec};

    fn pointmass_venv(n: usize, seed: u64) -> VecEnv {
        VecEnv::from_fn(n, (0..n as u64).map(|i| seed + i).collect(), || {
            Box::new(PointMass::new())
        })
        .unwrap()
    }

    fn net(seed: u64) -> PolicyNetwork {
        PolicyNetwork::init(NetSpec::new(6, 2, vec![8], HeadKind::Gaussian), seed).unwrap()
    }

    #[test]
    fn collect_is_reproducible() {
        let p = net(1);
        let run = || {
            let mut venv = pointmass_venv(3, 10);
            let mut rng = Rng::new(5);
            collect(&p, &mut venv, 150, &mut rng, None).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.states, b.states);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.old_log_probs, b.old_log_probs);
        assert_eq!(a.len(), 450);
        assert_eq!(a.episode_stats.len(), 3);
    }

    #[test]
    fn one_step_advantage() {
        let p = net(2);
        let mut venv = pointmass_venv(1, 0);
        let mut rng = Rng::new(0);
        let mut b = collect(&p, &mut venv, 1, &mut rng, None).unwrap();
        b.compute_advantages(0.9, 0.37).unwrap();
        let v1 = p.values(&venv.observations().unwrap()).unwrap()[0];
        let want = b.rewards[0] + 0.9 * v1 - b.values[0];
        assert!((b.advantages[0] - want).abs() < 1e-14);
        assert_eq!(b.returns[0], b.advantages[0] + b.values[0]);
    }

    #[test]
    fn episode_returns_are_reward_sums() {
        let spec = NetSpec::new(324, 4, vec![], HeadKind::Categorical);
        let p = PolicyNetwork::init(spec, 0).unwrap();
        let mut venv = VecEnv::from_fn(2, vec![1, 2], || Box::new(ProcGrid::single(42))).unwrap();
        let mut rng = Rng::new(3);
        let b = collect(&p, &mut venv, 400, &mut rng, None).unwrap();
        // Rebuild each episode's return from the per-env reward columns.
        let mut sums = Vec::new();
        for i in 0..2 {
            let mut acc = 0.0;
            for t in 0..b.steps {
                let k = t * 2 + i;
                acc += b.rewards[k];
                if b.dones[k] || b.truncations[k] {
                    sums.push((t, i, acc));
                    acc = 0.0;
                }
            }
        }
        sums.sort_by_key(|&(t, i, _)| (t, i));
        assert_eq!(sums.len(), b.episode_stats.len());
        for ((_, _, s), stat) in sums.iter().zip(&b.episode_stats) {
            assert!((s - stat.episode_return).abs() < 1e-9);
        }
    }

    #[test]
    fn truncation_bootstrap_uses_final_state() {
        let p = net(3);
        let mut venv = pointmass_venv(2, 4);
        let mut rng = Rng::new(1);
        let b = collect(&p, &mut venv, 130, &mut rng, None).unwrap();
        for k in 0..b.len() {
            let boundary = b.truncations[k] || k / 2 == 129;
            assert_eq!(b.bootstrap_values[k] != 0.0, boundary);
        }
    }

    #[test]
    fn minibatch_partition() {
        let parts = minibatches(103, 10, 7).unwrap();
        assert_eq!(parts.len(), 11);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert_eq!(parts, minibatches(103, 10, 7).unwrap());
        assert_eq!(minibatches(5, 5, 0).unwrap().len(), 1);
        assert!(minibatches(5, 0, 0).is_err());
        assert!(minibatches(5, 6, 0).is_err());
    }

    #[test]
    fn reward_scaler_tracks_return_scale() {
        let mut s = RewardScaler::new(1, 0.99);
        for _ in 0..2000 {
            let mut r = [-10.0];
            s.scale(&mut r, &[false]);
            assert!(r[0].is_finite());
        }
        assert!(s.std() > 1.0);
    }
}
