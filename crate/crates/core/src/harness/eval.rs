use std::sync::Arc;

use crate::envs::{check_disjoint, Action, Env, Level, LevelSet, ProcGrid, Split};
use crate::numkit::Tensor;
use crate::policy::PolicyNetwork;
use crate::Result;

/// Maps a batch of observations to actions.
pub trait EvalPolicy {
    fn act(&mut self, obs: &Tensor) -> Result<Vec<Action>>;
}

/// Deterministic policy: gaussian mean or categorical argmax.
pub struct ModePolicy<'a>(pub &'a PolicyNetwork);

impl EvalPolicy for ModePolicy<'_> {
    fn act(&mut self, obs: &Tensor) -> Result<Vec<Action>> {
        let (dist, _) = self.0.forward(obs)?;
        Ok((0..dist.len()).map(|i| dist.row(i).mode()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub split: Split,
    pub levels: usize,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationReport {
    pub seen: SplitResult,
    pub unseen: SplitResult,
}

// Episodes stepped together per policy call.
const CHUNK: usize = 1024;

/// Plays every level of `set` `episodes_per_level` times.
pub fn eval_levels(policy: &mut dyn EvalPolicy, set: &LevelSet, episodes_per_level: usize) -> Result<SplitResult> {
    let levels: Arc<Vec<Level>> = Arc::new(set.seeds.iter().map(|&s| Level::generate(s)).collect());
    let total = levels.len() * episodes_per_level;
    let mut successes = 0;
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let mut envs: Vec<ProcGrid> = (start..end).map(|_| ProcGrid::with_levels(levels.clone())).collect();
        let mut obs: Vec<Vec<f64>> = envs
            .iter_mut()
            .zip(start..end)
            .map(|(e, k)| e.reset_to_level(k % levels.len()))
            .collect();
        let mut live: Vec<usize> = (0..envs.len()).collect();
        while !live.is_empty() {
            let batch = Tensor::from_rows(&live.iter().map(|&i| obs[i].clone()).collect::<Vec<_>>())?;
            let actions = policy.act(&batch)?;
            let mut still = Vec::with_capacity(live.len());
            for (&i, a) in live.iter().zip(&actions) {
                let tr = envs[i].step(a)?;
                if tr.success {
                    successes += 1;
                }
                if tr.done || tr.truncated {
                    continue;
                }
                obs[i] = tr.next_state;
                still.push(i);
            }
            live = still;
        }
        start = end;
    }
    Ok(SplitResult {
        split: set.split,
        levels: levels.len(),
        episodes: total,
        successes,
        success_rate: if total == 0 {
            0.0
        } else {
            successes as f64 / total as f64
        },
    })
}

/// Success rates on the seen and unseen sets, which must be disjoint and non-empty.
pub fn eval_generalization(
    policy: &mut dyn EvalPolicy,
    seen: &LevelSet,
    unseen: &LevelSet,
    episodes_per_level: usize,
) -> Result<GeneralizationReport> {
    check_disjoint(seen, unseen)?;
    Ok(GeneralizationReport {
        seen: eval_levels(policy, seen, episodes_per_level)?,
        unseen: eval_levels(policy, unseen, episodes_per_level)?,
    })
}
