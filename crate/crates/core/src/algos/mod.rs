//! PPO and TRPO with an optional conditioning penalty, plus the training loop.
//!
//! The penalty is added to the *minimized* loss (`+psi_coeff·psi`), equivalently
//! subtracted from the maximized surrogate, so that leaving the clamp band is
//! always penalized.

mod optim;
mod ppo;
mod train;
mod trpo;

pub use optim::{clip_grad_norm, grad_norm, Adam};
pub use ppo::{ppo_loss, ppo_update, LossParts, PpoConfig};
pub use train::{
    env_seeds, initial_policy, train, Algorithm, NetConfig, RolloutConfig, TrainConfig, TrainObserver, TrainOutcome,
};
pub use trpo::{conjugate_gradient, fisher_vector_product, trpo_update, CgResult, FisherOperator, TrpoConfig};

use crate::numkit::{Tape, Tensor, Var};
use crate::policy::{Bound, PolicyNetwork};
#[cfg(test)]
use crate::rollout::RolloutBatch;
use crate::Result;

/// Diagnostics of one policy update. Averages run over optimizer steps.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Training-time penalty (NaN when the penalty is disabled).
    pub psi: f64,
    /// Mean KL(before ‖ after) over the batch states.
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub line_search_steps: usize,
    /// False only for a TRPO step whose line search failed; the actor is then unchanged.
    pub accepted: bool,
    pub skipped_minibatches: usize,
}

/// Accumulated gradients per parameter slot; zeros where none reached.
pub(crate) fn slot_grads(tape: &Tape, net: &PolicyNetwork, bound: &Bound) -> Vec<Tensor> {
    bound
        .params
        .iter()
        .zip(net.params())
        .map(|(&v, p)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect()
}

fn weight_slots<'a>(net: &'a PolicyNetwork, slots: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    slots.iter().copied().filter(|&s| net.params()[s].shape().len() == 2)
}

/// `Σ‖W‖²` over the weight matrices among `slots` (biases and `log_std` excluded).
pub(crate) fn l2_penalty_taped(tape: &mut Tape, net: &PolicyNetwork, bound: &Bound, slots: &[usize]) -> Result<Var> {
    let mut total = tape.scalar(0.0);
    for s in weight_slots(net, slots) {
        let sq = tape.square(bound.params[s])?;
        let sum = tape.sum(sq)?;
        total = tape.add(total, sum)?;
    }
    Ok(total)
}

pub(crate) fn l2_penalty(net: &PolicyNetwork, slots: &[usize]) -> f64 {
    weight_slots(net, slots).map(|s| net.params()[s].frobenius_sq()).sum()
}

/// Batch of random states with actions drawn from `net` and random targets.
#[cfg(test)]
pub(crate) fn synthetic_batch(net: &PolicyNetwork, n: usize, seed: u64) -> RolloutBatch {
    use crate::numkit::Rng;
    use crate::policy::actions_to_tensor;
    let mut rng = Rng::new(seed);
    let obs = net.spec().obs_dim;
    let states = Tensor::matrix(n, obs, rng.normals(n * obs)).unwrap();
    let (dist, values) = net.forward(&states).unwrap();
    let actions: Vec<_> = (0..n).map(|i| dist.row(i).sample(&mut rng)).collect();
    let actions = actions_to_tensor(&actions).unwrap();
    // Stale log-probs so ratios differ from one.
    let old_log_probs = dist
        .log_probs(&actions)
        .unwrap()
        .iter()
        .map(|l| l + 0.1 * rng.normal())
        .collect();
    RolloutBatch {
        n_envs: 1,
        steps: n,
        states,
        actions,
        old_log_probs,
        rewards: vec![0.0; n],
        values,
        dones: vec![false; n],
        truncations: vec![false; n],
        bootstrap_values: vec![0.0; n],
        advantages: rng.normals(n),
        returns: rng.normals(n),
        episode_stats: Vec::new(),
    }
}
