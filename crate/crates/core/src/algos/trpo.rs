use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::{l2_penalty, l2_penalty_taped, slot_grads, UpdateReport};
use crate::conditioning::{draw_deltas, j_taped_with_deltas, j_with_deltas, psi, psi_taped, CondConfig};
use crate::numkit::{Rng, Tape, Tensor, Var};
use crate::policy::{kl_taped, log_prob_taped, DistBatch, PolicyNetwork};
use crate::rollout::{minibatches, RolloutBatch};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpoConfig {
    pub max_kl: f64,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub backtrack_coeff: f64,
    pub backtrack_iters: usize,
    pub vf_lr: f64,
    pub vf_epochs: usize,
    pub vf_minibatch_size: usize,
    /// Weight of the conditioning penalty.
    pub psi_coeff: f64,
    pub penalty_enabled: bool,
}

impl Default for TrpoConfig {
    fn default() -> Self {
        Self {
            max_kl: 0.01,
            cg_iters: 10,
            cg_damping: 0.1,
            backtrack_coeff: 0.8,
            backtrack_iters: 10,
            vf_lr: 1e-3,
            vf_epochs: 5,
            vf_minibatch_size: 64,
            psi_coeff: 0.001,
            penalty_enabled: false,
        }
    }
}

impl TrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_kl > 0.0) || self.cg_iters == 0 {
            return Err(Error::Config("max_kl must be positive and cg_iters at least 1".into()));
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) || self.backtrack_iters == 0 {
            return Err(Error::Config(
                "backtrack_coeff must lie in (0, 1) with at least one iteration".into(),
            ));
        }
        if !(self.vf_lr > 0.0) || self.vf_minibatch_size == 0 || !(self.psi_coeff >= 0.0) || !(self.cg_damping >= 0.0) {
            return Err(Error::Config(
                "vf_lr, vf_minibatch_size must be positive; psi_coeff, cg_damping non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive (semi)definite `A` given as a product.
/// Stops early on curvature `pᵀAp ≤ 0` and returns the current iterate.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    iters: usize,
    tol: f64,
) -> Result<CgResult> {
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while it < iters && rr.sqrt() > tol {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + beta * *pi);
        rr = rr_new;
        it += 1;
    }
    Ok(CgResult {
        x,
        iterations: it,
        residual_norm: rr.sqrt(),
    })
}

/// Hessian of mean KL(old ‖ new) over the actor parameters, applied to vectors.
/// The first gradient stays on the tape; each product differentiates it again.
pub struct FisherOperator {
    tape: Tape,
    vars: Vec<Var>,
    grads: Vec<Var>,
    mark: usize,
}

impl FisherOperator {
    pub fn new(net: &PolicyNetwork, states: &Tensor) -> Result<Self> {
        let (old, _) = net.forward(states)?;
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let x = tape.constant(states.clone());
        let out = net.actor_out_taped(&mut tape, &bound, x)?;
        let kl = kl_taped(&mut tape, &old, out, net.log_std_var(&bound))?;
        let vars: Vec<Var> = net.actor_param_indices().iter().map(|&s| bound.params[s]).collect();
        let grads = tape.gradients(kl, &vars)?;
        let mark = tape.len();
        Ok(Self {
            tape,
            vars,
            grads,
            mark,
        })
    }

    pub fn dim(&self) -> usize {
        self.vars.iter().map(|&v| self.tape.value(v).len()).sum()
    }

    pub fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Width {
                what: "fisher vector",
                expected: self.dim(),
                got: v.len(),
            });
        }
        let mut off = 0;
        let mut gv: Option<Var> = None;
        for (&var, &g) in self.vars.iter().zip(&self.grads) {
            let shape = self.tape.shape(var).to_vec();
            let n = self.tape.value(var).len();
            let piece = self.tape.constant(Tensor::new(shape, v[off..off + n].to_vec())?);
            off += n;
            let d = self.tape.dot(g, piece)?;
            gv = Some(match gv {
                None => d,
                Some(acc) => self.tape.add(acc, d)?,
            });
        }
        let gv = gv.ok_or_else(|| Error::InvalidArgument("no actor parameters".into()))?;
        let hv = self.tape.gradients(gv, &self.vars.clone())?;
        let out: Vec<f64> = hv.iter().flat_map(|&h| self.tape.value(h).data().to_vec()).collect();
        self.tape.truncate(self.mark);
        Ok(out)
    }
}

/// `F·v` at the current parameters, with `F` the KL Hessian on `states`.
pub fn fisher_vector_product(net: &PolicyNetwork, states: &Tensor, v: &[f64]) -> Result<Vec<f64>> {
    FisherOperator::new(net, states)?.apply(v)
}

fn actor_vector(net: &PolicyNetwork, slots: &[usize]) -> Vec<f64> {
    slots.iter().flat_map(|&s| net.params()[s].data().to_vec()).collect()
}

fn set_actor_vector(net: &mut PolicyNetwork, slots: &[usize], v: &[f64]) {
    let mut off = 0;
    for &s in slots {
        let p = &mut net.params_mut()[s];
        let n = p.len();
        p.data_mut().copy_from_slice(&v[off..off + n]);
        off += n;
    }
}

/// Penalized surrogate objective, evaluated without a tape.
struct Objective<'a> {
    batch: &'a RolloutBatch,
    deltas: Option<&'a Tensor>,
    cond: &'a CondConfig,
    psi_coeff: f64,
    l2_coeff: f64,
    actor_slots: &'a [usize],
}

impl Objective<'_> {
    fn eval(&self, net: &PolicyNetwork) -> Result<(f64, DistBatch)> {
        let (dist, _) = net.forward(&self.batch.states)?;
        let logp = dist.log_probs(&self.batch.actions)?;
        let n = logp.len() as f64;
        let surr = logp
            .iter()
            .zip(&self.batch.old_log_probs)
            .zip(&self.batch.advantages)
            .map(|((l, o), a)| (l - o).exp() * a)
            .sum::<f64>()
            / n;
        let mut obj = surr;
        if let Some(d) = self.deltas {
            let j = j_with_deltas(net, &self.batch.states, d, self.cond.delta_scale)?;
            obj -= self.psi_coeff * psi(&j, self.cond).psi;
        }
        if self.l2_coeff != 0.0 {
            obj -= self.l2_coeff * l2_penalty(net, self.actor_slots);
        }
        Ok((obj, dist))
    }
}

/// One trust-region step on the actor followed by value regression.
#[allow(clippy::too_many_arguments)]
pub fn trpo_update(
    net: &mut PolicyNetwork,
    vf_opt: &mut Adam,
    batch: &RolloutBatch,
    cfg: &TrpoConfig,
    cond: &CondConfig,
    l2_coeff: f64,
    shuffle_rng: &mut Rng,
    cond_rng: &mut Rng,
) -> Result<UpdateReport> {
    let actor_slots = net.actor_param_indices();
    let head = net.spec().head;
    let (old_dist, _) = net.forward(&batch.states)?;
    let use_penalty = cfg.penalty_enabled && cfg.psi_coeff > 0.0;
    // Directions are drawn once so the gradient and the line search see the same penalty.
    let deltas = cfg
        .penalty_enabled
        .then(|| draw_deltas(batch.states.rows(), batch.states.cols(), cond.delta_scale, cond_rng));

    // Gradient of the penalized surrogate.
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let x = tape.constant(batch.states.clone());
    let out = net.actor_out_taped(&mut tape, &bound, x)?;
    let log_std = net.log_std_var(&bound);
    let logp = log_prob_taped(&mut tape, head, out, log_std, &batch.actions)?;
    let old = tape.constant(Tensor::vector(batch.old_log_probs.clone()));
    let lr = tape.sub(logp, old)?;
    let ratio = tape.exp(lr)?;
    let adv = tape.constant(Tensor::vector(batch.advantages.clone()));
    let weighted = tape.mul(ratio, adv)?;
    let surr = tape.mean(weighted)?;
    let mut obj = surr;
    let mut psi_value = f64::NAN;
    if let Some(d) = &deltas {
        let j = j_taped_with_deltas(&mut tape, net, &bound, &batch.states, d, cond.delta_scale)?;
        let (p, _, _) = psi_taped(&mut tape, j, cond)?;
        psi_value = tape.item(p)?;
        if use_penalty {
            let term = tape.scale(p, -cfg.psi_coeff)?;
            obj = tape.add(obj, term)?;
        }
    }
    if l2_coeff != 0.0 {
        let l2 = l2_penalty_taped(&mut tape, net, &bound, &actor_slots)?;
        let term = tape.scale(l2, -l2_coeff)?;
        obj = tape.add(obj, term)?;
    }
    tape.backward(obj)?;
    let grads = slot_grads(&tape, net, &bound);
    let g: Vec<f64> = actor_slots.iter().flat_map(|&s| grads[s].data().to_vec()).collect();
    drop(tape);
    if !g.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("surrogate gradient".into()));
    }
    let grad_norm = dot(&g, &g).sqrt();

    let objective = Objective {
        batch,
        deltas: deltas.as_ref().filter(|_| use_penalty),
        cond,
        psi_coeff: cfg.psi_coeff,
        l2_coeff,
        actor_slots: &actor_slots,
    };
    let theta_old = actor_vector(net, &actor_slots);
    let (obj_old, _) = objective.eval(net)?;

    let mut accepted = true;
    let mut kl = 0.0;
    let mut line_search_steps = 0;
    if grad_norm > 0.0 {
        let mut fisher = FisherOperator::new(net, &batch.states)?;
        let damping = cfg.cg_damping;
        let mut apply = |v: &[f64]| -> Result<Vec<f64>> {
            let mut fv = fisher.apply(v)?;
            fv.iter_mut().zip(v).for_each(|(f, x)| *f += damping * x);
            Ok(fv)
        };
        let cg = conjugate_gradient(&mut apply, &g, cfg.cg_iters, 1e-10)?;
        let shs = dot(&cg.x, &apply(&cg.x)?);
        accepted = false;
        if shs > 0.0 && shs.is_finite() {
            let scale = (2.0 * cfg.max_kl / shs).sqrt();
            let mut frac = 1.0;
            for k in 0..cfg.backtrack_iters {
                let theta: Vec<f64> = theta_old.iter().zip(&cg.x).map(|(t, x)| t + frac * scale * x).collect();
                set_actor_vector(net, &actor_slots, &theta);
                let (obj_new, dist) = objective.eval(net)?;
                let step_kl = old_dist.mean_kl(&dist)?;
                if obj_new - obj_old > 0.0 && step_kl <= cfg.max_kl {
                    accepted = true;
                    line_search_steps = k + 1;
                    break;
                }
                frac *= cfg.backtrack_coeff;
            }
        }
        if accepted {
            net.clamp_log_std();
            kl = old_dist.mean_kl(&net.forward(&batch.states)?.0)?;
        } else {
            set_actor_vector(net, &actor_slots, &theta_old);
            line_search_steps = cfg.backtrack_iters;
        }
    }

    let value_loss = fit_value(net, vf_opt, batch, cfg, l2_coeff, shuffle_rng)?;
    let (dist, _) = net.forward(&batch.states)?;
    let entropy = (0..dist.len()).map(|i| dist.row(i).entropy()).sum::<f64>() / dist.len().max(1) as f64;
    let logp = dist.log_probs(&batch.actions)?;
    let surr = logp
        .iter()
        .zip(&batch.old_log_probs)
        .zip(&batch.advantages)
        .map(|((l, o), a)| (l - o).exp() * a)
        .sum::<f64>()
        / logp.len() as f64;
    Ok(UpdateReport {
        policy_loss: -surr,
        value_loss,
        entropy,
        psi: psi_value,
        kl,
        clip_fraction: 0.0,
        grad_norm,
        line_search_steps,
        accepted,
        skipped_minibatches: 0,
    })
}

/// Regresses the critic on `batch.returns`; returns the mean minibatch loss.
fn fit_value(
    net: &mut PolicyNetwork,
    opt: &mut Adam,
    batch: &RolloutBatch,
    cfg: &TrpoConfig,
    l2_coeff: f64,
    shuffle_rng: &mut Rng,
) -> Result<f64> {
    let slots = net.value_param_indices();
    let lrs = vec![cfg.vf_lr; slots.len()];
    let n = batch.len();
    let (mut total, mut count) = (0.0, 0usize);
    for _ in 0..cfg.vf_epochs {
        for idx in minibatches(n, cfg.vf_minibatch_size.min(n), shuffle_rng.next_u64())? {
            let mb = batch.select(&idx)?;
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let x = tape.constant(mb.states);
            let v = net.value_out_taped(&mut tape, &bound, x)?;
            let ret = tape.constant(Tensor::vector(mb.returns));
            let err = tape.sub(v, ret)?;
            let sq = tape.square(err)?;
            let mut loss = tape.mean(sq)?;
            total += tape.item(loss)?;
            count += 1;
            if l2_coeff != 0.0 {
                let l2 = l2_penalty_taped(&mut tape, net, &bound, &slots)?;
                let term = tape.scale(l2, l2_coeff)?;
                loss = tape.add(loss, term)?;
            }
            tape.backward(loss)?;
            let grads = slot_grads(&tape, net, &bound);
            if slots.iter().all(|&s| grads[s].all_finite()) {
                opt.step(net.params_mut(), &grads, &slots, &lrs);
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::synthetic_batch;
    use crate::policy::{HeadKind, NetSpec};

    fn dense_apply(a: &[Vec<f64>]) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + '_ {
        move |v: &[f64]| Ok(a.iter().map(|row| dot(row, v)).collect())
    }

    #[test]
    fn cg_diagonal() {
        let a = vec![vec![2.0, 0.0], vec![0.0, 1.0]];
        let r = conjugate_gradient(dense_apply(&a), &[2.0, 1.0], 10, 1e-12).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-12 && (r.x[1] - 1.0).abs() < 1e-12);
        assert!(r.iterations <= 2);
    }

    #[test]
    fn cg_random_spd() {
        let mut rng = Rng::new(5);
        let n = 6;
        let m: Vec<Vec<f64>> = (0..n).map(|_| rng.normals(n)).collect();
        // A = MᵀM + I
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + f64::from(i == j))
                    .collect()
            })
            .collect();
        let b = rng.normals(n);
        let r = conjugate_gradient(dense_apply(&a), &b, 50, 1e-12).unwrap();
        let ax: Vec<f64> = a.iter().map(|row| dot(row, &r.x)).collect();
        let res: f64 = ax.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(res < 1e-6, "residual {res}");
    }

    fn net(seed: u64, head: HeadKind) -> PolicyNetwork {
        let act = if head == HeadKind::Gaussian { 2 } else { 3 };
        PolicyNetwork::init(NetSpec::new(3, act, vec![8], head), seed).unwrap()
    }

    #[test]
    fn fisher_zero_and_nonnegative() {
        for head in [HeadKind::Gaussian, HeadKind::Categorical] {
            let p = net(1, head);
            let batch = synthetic_batch(&p, 20, 2);
            let mut f = FisherOperator::new(&p, &batch.states).unwrap();
            let d = f.dim();
            assert!(f.apply(&vec![0.0; d]).unwrap().iter().all(|x| *x == 0.0));
            let mut rng = Rng::new(3);
            for _ in 0..5 {
                let v = rng.normals(d);
                let fv = f.apply(&v).unwrap();
                assert!(dot(&v, &fv) >= -1e-12);
            }
            assert!(f.apply(&[1.0]).is_err());
        }
    }

    #[test]
    fn fisher_matches_closed_form() {
        // Linear gaussian policy mean = w·x + b, log_std = s on scalar states:
        // F = mean over x of [[x², x, 0], [x, 1, 0], [0, 0, 2σ²]] / σ².
        let mut p = PolicyNetwork::init(NetSpec::new(1, 1, vec![], HeadKind::Gaussian), 4).unwrap();
        p.set_log_std(&[-0.4]).unwrap();
        let xs = [0.3, -1.2, 2.0, 0.7];
        let states = Tensor::matrix(4, 1, xs.to_vec()).unwrap();
        let s2 = (-0.8f64).exp();
        let m1 = xs.iter().sum::<f64>() / 4.0;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        let want = [[m2 / s2, m1 / s2, 0.0], [m1 / s2, 1.0 / s2, 0.0], [0.0, 0.0, 2.0]];
        let mut f = FisherOperator::new(&p, &states).unwrap();
        assert_eq!(f.dim(), 3);
        for (k, col) in (0..3).map(|k| (k, want.map(|r| r[k]))) {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            let got = f.apply(&e).unwrap();
            for i in 0..3 {
                assert!(
                    (got[i] - col[i]).abs() < 1e-10,
                    "F[{i}][{k}] = {} want {}",
                    got[i],
                    col[i]
                );
            }
        }
    }

    fn update(p: &mut PolicyNetwork, batch: &RolloutBatch, cfg: &TrpoConfig) -> UpdateReport {
        let mut opt = Adam::new(p.params());
        trpo_update(
            p,
            &mut opt,
            batch,
            cfg,
            &CondConfig::default(),
            0.0,
            &mut Rng::new(1),
            &mut Rng::new(2),
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_zero_step() {
        let mut p = net(5, HeadKind::Gaussian);
        let mut batch = synthetic_batch(&p, 32, 6);
        batch.advantages.fill(0.0);
        let before = p.clone();
        let r = update(&mut p, &batch, &TrpoConfig::default());
        for s in p.actor_param_indices() {
            assert_eq!(p.params()[s], before.params()[s]);
        }
        assert_eq!(r.grad_norm, 0.0);
        assert_eq!(r.kl, 0.0);
    }

    #[test]
    fn accepted_step_respects_trust_region() {
        for head in [HeadKind::Gaussian, HeadKind::Categorical] {
            let mut p = net(7, head);
            let batch = synthetic_batch(&p, 64, 8);
            let cfg = TrpoConfig {
                penalty_enabled: true,
                ..TrpoConfig::default()
            };
            let objective = Objective {
                batch: &batch,
                deltas: None,
                cond: &CondConfig::default(),
                psi_coeff: 0.0,
                l2_coeff: 0.0,
                actor_slots: &p.actor_param_indices(),
            };
            let before = objective.eval(&p).unwrap().0;
            let r = update(&mut p, &batch, &cfg);
            assert!(r.accepted);
            assert!(r.kl > 0.0 && r.kl <= cfg.max_kl, "kl {}", r.kl);
            assert!(r.psi.is_finite());
            // The penalty weight is tiny, so the plain surrogate improves too.
            assert!(objective.eval(&p).unwrap().0 > before);
        }
    }

    #[test]
    fn rejected_step_restores_actor() {
        let mut p = net(9, HeadKind::Gaussian);
        let batch = synthetic_batch(&p, 32, 10);
        let before = p.clone();
        // A single, absurdly long step overflows the objective and is refused.
        let cfg = TrpoConfig {
            max_kl: 1e300,
            backtrack_iters: 1,
            ..TrpoConfig::default()
        };
        let r = update(&mut p, &batch, &cfg);
        assert!(!r.accepted);
        for s in p.actor_param_indices() {
            assert_eq!(p.params()[s].data(), before.params()[s].data());
        }
        assert!(p
            .value_param_indices()
            .iter()
            .any(|&s| p.params()[s] != before.params()[s]));
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = net(11, HeadKind::Categorical);
            let batch = synthetic_batch(&p, 48, 12);
            let r = update(
                &mut p,
                &batch,
                &TrpoConfig {
                    penalty_enabled: true,
                    ..TrpoConfig::default()
                },
            );
            (p.parameter_vector(), r)
        };
        assert_eq!(run(), run());
    }
}
