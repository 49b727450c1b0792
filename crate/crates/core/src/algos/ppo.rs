use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, Adam};
use super::{l2_penalty_taped, slot_grads, UpdateReport};
use crate::conditioning::{estimate_j, penalty_taped, psi, CondConfig};
use crate::numkit::{Rng, Tape, Tensor, Var};
use crate::policy::{entropy_taped, log_prob_taped, HeadKind, PolicyNetwork};
use crate::rollout::{minibatches, Minibatch, RolloutBatch};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Learning rate of actor parameters (and a shared trunk).
    pub lr: f64,
    /// Learning rate of critic-only parameters; defaults to `lr`.
    pub vf_lr: Option<f64>,
    /// Epochs that include the value loss; defaults to `epochs`.
    pub vf_epochs: Option<usize>,
    /// Weight of the conditioning penalty.
    pub psi_coeff: f64,
    pub vf_coeff: f64,
    /// Entropy bonus; defaults to 0 for gaussian and 0.01 for categorical heads.
    pub ent_coeff: Option<f64>,
    pub max_grad_norm: f64,
    pub penalty_enabled: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            epochs: 10,
            minibatch_size: 64,
            lr: 3e-4,
            vf_lr: None,
            vf_epochs: None,
            psi_coeff: 0.001,
            vf_coeff: 0.5,
            ent_coeff: None,
            max_grad_norm: 0.5,
            penalty_enabled: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return bad("epochs and minibatch_size must be at least 1".into());
        }
        if !(self.psi_coeff >= 0.0) || !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("psi_coeff must be non-negative; lr and max_grad_norm positive".into());
        }
        if self.vf_lr.is_some_and(|v| !(v > 0.0)) {
            return bad("vf_lr must be positive".into());
        }
        Ok(())
    }

    pub fn entropy_coeff(&self, head: HeadKind) -> f64 {
        self.ent_coeff.unwrap_or(match head {
            HeadKind::Gaussian => 0.0,
            HeadKind::Categorical => 0.01,
        })
    }
}

/// Scalar parts of one loss evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossParts {
    /// `-L_clip`.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Conditioning penalty on the minibatch (NaN when disabled).
    pub psi: f64,
    pub clip_fraction: f64,
    pub total: f64,
}

/// Builds the minimized loss `-L_clip + psi_coeff·psi + vf_coeff·L_vf - ent·S + l2·Σ‖W‖²`
/// on `tape`. The penalty is evaluated under the parameters in `bound`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss(
    tape: &mut Tape,
    net: &PolicyNetwork,
    bound: &crate::policy::Bound,
    mb: &Minibatch,
    cfg: &PpoConfig,
    cond: &CondConfig,
    include_value: bool,
    l2_coeff: f64,
    cond_rng: &mut Rng,
) -> Result<(Var, LossParts)> {
    let rows = mb.states.rows();
    let head = net.spec().head;
    let states = tape.constant(mb.states.clone());
    let (out, values) = net.forward_taped(tape, bound, states)?;
    let log_std = net.log_std_var(bound);

    let logp = log_prob_taped(tape, head, out, log_std, &mb.actions)?;
    let old = tape.constant(Tensor::vector(mb.old_log_probs.clone()));
    let log_ratio = tape.sub(logp, old)?;
    let ratio = tape.exp(log_ratio)?;
    let adv = tape.constant(Tensor::vector(mb.advantages.clone()));
    let surr = tape.mul(ratio, adv)?;
    let clipped = tape.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)?;
    let surr_clipped = tape.mul(clipped, adv)?;
    let lower = tape.minimum(surr, surr_clipped)?;
    let l_clip = tape.mean(lower)?;
    let clip_fraction = tape
        .value(ratio)
        .data()
        .iter()
        .filter(|r| (*r - 1.0).abs() > cfg.clip_eps)
        .count() as f64
        / rows as f64;

    let mut loss = tape.neg(l_clip)?;
    let mut parts = LossParts {
        policy_loss: tape.item(loss)?,
        clip_fraction,
        psi: f64::NAN,
        ..LossParts::default()
    };

    let ret = tape.constant(Tensor::vector(mb.returns.clone()));
    let verr = tape.sub(values, ret)?;
    let vsq = tape.square(verr)?;
    let vl = tape.mean(vsq)?;
    parts.value_loss = tape.item(vl)?;
    if include_value && cfg.vf_coeff != 0.0 {
        let term = tape.scale(vl, cfg.vf_coeff)?;
        loss = tape.add(loss, term)?;
    }

    let ent = entropy_taped(tape, head, out, log_std)?;
    parts.entropy = tape.item(ent)?;
    let ent_coeff = cfg.entropy_coeff(head);
    if ent_coeff != 0.0 {
        let term = tape.scale(ent, -ent_coeff)?;
        loss = tape.add(loss, term)?;
    }

    if cfg.penalty_enabled {
        if cfg.psi_coeff > 0.0 {
            let (p, pen) = penalty_taped(tape, net, bound, &mb.states, cond, cond_rng)?;
            parts.psi = pen.psi;
            let term = tape.scale(p, cfg.psi_coeff)?;
            loss = tape.add(loss, term)?;
        } else {
            // Zero weight: report the value but keep it off the tape.
            parts.psi = psi(&estimate_j(net, &mb.states, cond, cond_rng)?, cond).psi;
        }
    }

    if l2_coeff != 0.0 {
        let l2 = l2_penalty_taped(tape, net, bound, &net.actor_param_indices())?;
        let term = tape.scale(l2, l2_coeff)?;
        loss = tape.add(loss, term)?;
    }
    parts.total = tape.item(loss)?;
    Ok((loss, parts))
}

/// Runs `cfg.epochs` passes of clipped-gradient Adam steps over `batch`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    net: &mut PolicyNetwork,
    opt: &mut Adam,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    cond: &CondConfig,
    l2_coeff: f64,
    shuffle_rng: &mut Rng,
    cond_rng: &mut Rng,
) -> Result<UpdateReport> {
    let n = batch.len();
    let (old_dist, _) = net.forward(&batch.states)?;
    let all_slots: Vec<usize> = (0..net.params().len()).collect();
    let value_slots = net.value_param_indices();
    let vf_lr = cfg.vf_lr.unwrap_or(cfg.lr);
    let lrs: Vec<f64> = all_slots
        .iter()
        .map(|s| if value_slots.contains(s) { vf_lr } else { cfg.lr })
        .collect();
    let vf_epochs = cfg.vf_epochs.unwrap_or(cfg.epochs);

    let mut acc = LossParts::default();
    let mut grad_norm_sum = 0.0;
    let (mut steps, mut skipped) = (0usize, 0usize);
    for epoch in 0..cfg.epochs {
        let include_value = epoch < vf_epochs;
        for idx in minibatches(n, cfg.minibatch_size.min(n), shuffle_rng.next_u64())? {
            let mb = batch.select(&idx)?;
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let (loss, parts) = ppo_loss(
                &mut tape,
                net,
                &bound,
                &mb,
                cfg,
                cond,
                include_value,
                l2_coeff,
                cond_rng,
            )?;
            tape.backward(loss)?;
            let mut grads = slot_grads(&tape, net, &bound);
            if !grads.iter().all(Tensor::all_finite) {
                skipped += 1;
                continue;
            }
            let gn = clip_grad_norm(&mut grads, &all_slots, cfg.max_grad_norm);
            opt.step(net.params_mut(), &grads, &all_slots, &lrs);
            net.clamp_log_std();
            grad_norm_sum += gn;
            acc.policy_loss += parts.policy_loss;
            acc.value_loss += parts.value_loss;
            acc.entropy += parts.entropy;
            acc.psi += parts.psi;
            acc.clip_fraction += parts.clip_fraction;
            steps += 1;
        }
    }
    let (new_dist, _) = net.forward(&batch.states)?;
    let denom = steps.max(1) as f64;
    Ok(UpdateReport {
        policy_loss: acc.policy_loss / denom,
        value_loss: acc.value_loss / denom,
        entropy: acc.entropy / denom,
        psi: if cfg.penalty_enabled { acc.psi / denom } else { f64::NAN },
        kl: old_dist.mean_kl(&new_dist)?,
        clip_fraction: acc.clip_fraction / denom,
        grad_norm: grad_norm_sum / denom,
        line_search_steps: 0,
        accepted: true,
        skipped_minibatches: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::synthetic_batch;
    use crate::policy::NetSpec;

    fn small_net(seed: u64) -> PolicyNetwork {
        PolicyNetwork::init(NetSpec::new(2, 2, vec![8], HeadKind::Gaussian), seed).unwrap()
    }

    fn loss_value(net: &PolicyNetwork, mb: &Minibatch, cfg: &PpoConfig, cond: &CondConfig) -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let (loss, parts) = ppo_loss(&mut tape, net, &bound, mb, cfg, cond, true, 1e-3, &mut Rng::new(11)).unwrap();
        tape.backward(loss).unwrap();
        let g = slot_grads(&tape, net, &bound)
            .iter()
            .flat_map(|t| t.data().to_vec())
            .collect();
        (parts.total, g)
    }

    #[test]
    fn clipped_objective_cases() {
        let net = small_net(1);
        let batch = synthetic_batch(&net, 1, 2);
        let mut mb = batch.full();
        let logp = net.forward(&mb.states).unwrap().0.log_probs(&mb.actions).unwrap()[0];
        let cfg = PpoConfig::default();
        // (ratio, advantage, expected clipped surrogate)
        for (r, a, want) in [
            (1.5, 1.0, 1.2),
            (0.5, -1.0, -0.8),
            (0.5, 1.0, 0.5),
            (1.5, -1.0, -1.5),
            (1.1, 2.0, 2.2),
        ] {
            mb.old_log_probs = vec![logp - f64::ln(r)];
            mb.advantages = vec![a];
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let (_, parts) = ppo_loss(
                &mut tape,
                &net,
                &bound,
                &mb,
                &cfg,
                &CondConfig::default(),
                true,
                0.0,
                &mut Rng::new(0),
            )
            .unwrap();
            assert!(
                (parts.policy_loss + want).abs() < 1e-12,
                "r={r} a={a}: {}",
                parts.policy_loss
            );
            let clipped = (r - 1.0f64).abs() > cfg.clip_eps;
            assert_eq!(parts.clip_fraction, if clipped { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn penalty_adds_weighted_psi() {
        // Linear map 25·I: every finite-difference quotient is 25, so psi = (25-20)^2.
        let mut net = PolicyNetwork::init(NetSpec::new(2, 2, vec![], HeadKind::Gaussian), 3).unwrap();
        let (w, b) = net.actor_head_mut();
        w.data_mut().copy_from_slice(&[25.0, 0.0, 0.0, 25.0]);
        b.data_mut().fill(0.0);
        let mb = synthetic_batch(&net, 16, 4).full();
        let cond = CondConfig::default();
        let mut cfg = PpoConfig {
            psi_coeff: 0.3,
            ..PpoConfig::default()
        };
        let eval = |cfg: &PpoConfig| {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            ppo_loss(&mut tape, &net, &bound, &mb, cfg, &cond, true, 0.0, &mut Rng::new(5))
                .unwrap()
                .1
        };
        let off = eval(&cfg);
        cfg.penalty_enabled = true;
        let on = eval(&cfg);
        assert!((on.psi - 25.0).abs() < 1e-8, "psi {}", on.psi);
        assert!((on.total - off.total - 0.3 * 25.0).abs() < 1e-8);
        assert!(off.psi.is_nan());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for penalty in [false, true] {
            let net = small_net(7);
            let mb = synthetic_batch(&net, 12, 8).full();
            let cfg = PpoConfig {
                penalty_enabled: penalty,
                psi_coeff: 0.5,
                ent_coeff: Some(0.02),
                ..PpoConfig::default()
            };
            // Band chosen so both clamp sides are active somewhere.
            let cond = CondConfig {
                lambda_min: 0.003,
                lambda_max: 0.005,
                ..CondConfig::default()
            };
            let j = crate::conditioning::estimate_j(&net, &mb.states, &cond, &mut Rng::new(1)).unwrap();
            assert!(
                j.iter().any(|&x| x < cond.lambda_min) && j.iter().any(|&x| x > cond.lambda_max),
                "{j:?}"
            );
            let (_, g) = loss_value(&net, &mb, &cfg, &cond);
            let theta = net.parameter_vector();
            let h = 1e-6;
            for k in 0..theta.len() {
                let mut probe = net.clone();
                let mut t = theta.clone();
                t[k] += h;
                probe.load_parameter_vector(&t).unwrap();
                let up = loss_value(&probe, &mb, &cfg, &cond).0;
                t[k] -= 2.0 * h;
                probe.load_parameter_vector(&t).unwrap();
                let down = loss_value(&probe, &mb, &cfg, &cond).0;
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "penalty={penalty} k={k}: fd {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn zero_advantages_leave_actor_unchanged() {
        let mut net = small_net(9);
        let mut batch = synthetic_batch(&net, 32, 10);
        batch.advantages.fill(0.0);
        let before = net.clone();
        let mut opt = Adam::new(net.params());
        let cfg = PpoConfig {
            minibatch_size: 8,
            epochs: 2,
            ..PpoConfig::default()
        };
        ppo_update(
            &mut net,
            &mut opt,
            &batch,
            &cfg,
            &CondConfig::default(),
            0.0,
            &mut Rng::new(1),
            &mut Rng::new(2),
        )
        .unwrap();
        for s in net.actor_param_indices() {
            assert_eq!(net.params()[s], before.params()[s]);
        }
        assert!(net
            .value_param_indices()
            .iter()
            .any(|&s| net.params()[s] != before.params()[s]));
    }

    fn run(cfg: &PpoConfig) -> (PolicyNetwork, UpdateReport) {
        let mut net = small_net(12);
        let batch = synthetic_batch(&net, 40, 13);
        let mut opt = Adam::new(net.params());
        let r = ppo_update(
            &mut net,
            &mut opt,
            &batch,
            cfg,
            &CondConfig::default(),
            0.0,
            &mut Rng::new(3),
            &mut Rng::new(4),
        )
        .unwrap();
        (net, r)
    }

    #[test]
    fn deterministic() {
        let cfg = PpoConfig {
            minibatch_size: 16,
            penalty_enabled: true,
            ..PpoConfig::default()
        };
        let (a, ra) = run(&cfg);
        let (b, rb) = run(&cfg);
        assert_eq!(a.parameter_vector(), b.parameter_vector());
        assert_eq!(ra, rb);
        assert!(ra.kl >= 0.0 && ra.kl.is_finite());
    }

    #[test]
    fn zero_weight_penalty_matches_disabled() {
        let base = PpoConfig {
            minibatch_size: 16,
            psi_coeff: 0.0,
            ..PpoConfig::default()
        };
        let (off, roff) = run(&base);
        let (on, ron) = run(&PpoConfig {
            penalty_enabled: true,
            ..base
        });
        assert_eq!(off.parameter_vector(), on.parameter_vector());
        assert!(roff.psi.is_nan());
        assert!(ron.psi.is_finite());
    }

    #[test]
    fn value_epochs_limit_critic_training() {
        let cfg = PpoConfig {
            minibatch_size: 16,
            vf_epochs: Some(0),
            ..PpoConfig::default()
        };
        let (net, _) = run(&cfg);
        let fresh = small_net(12);
        for s in net.value_param_indices() {
            assert_eq!(net.params()[s], fresh.params()[s]);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(PpoConfig {
            clip_eps: 0.0,
            ..PpoConfig::default()
        }
        .validate()
        .is_err());
        assert!(PpoConfig {
            epochs: 0,
            ..PpoConfig::default()
        }
        .validate()
        .is_err());
        assert!(PpoConfig {
            vf_lr: Some(-1.0),
            ..PpoConfig::default()
        }
        .validate()
        .is_err());
        assert!(PpoConfig::default().validate().is_ok());
    }
}
