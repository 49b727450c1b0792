//! Finite-difference conditioning of the policy's state-to-action map.
//!
//! Per state `s`, `J = ‖f(s + δ) − f(s)‖ / ε` with `δ = ε·u` and `u` uniform on
//! the unit sphere, where `f` is the action mean (gaussian) or the logits
//! (categorical). The clamp penalty keeps `J` inside `[lambda_min, lambda_max]`:
//!
//! ```text
//! psi_max = (max(J, lambda_max) − lambda_max)²
//! psi_min = (min(J, lambda_min) − lambda_min)²
//! psi     = mean over states of (psi_min + psi_max)
//! ```

use serde::{Deserialize, Serialize};

use crate::numkit::{svd_values, Rng, Tape, Tensor, Var};
use crate::policy::{Bound, HeadKind, PolicyNetwork};
use crate::{Error, Result};

/// Singular values at or below this are treated as zero.
pub const SINGULAR_TOL: f64 = 1e-10;

/// States used by [`conditioning_metric`] unless configured otherwise.
pub const DEFAULT_PROBES: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondTarget {
    /// Gaussian mean or categorical logits.
    ActionMean,
    /// Reparameterized gaussian sample with the noise shared by both passes.
    /// The state-independent std makes this coincide with `ActionMean`.
    ActionSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondConfig {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Perturbation norm ε.
    pub delta_scale: f64,
    pub target: CondTarget,
}

impl Default for CondConfig {
    fn default() -> Self {
        Self {
            lambda_min: 1.0,
            lambda_max: 20.0,
            delta_scale: 0.01,
            target: CondTarget::ActionMean,
        }
    }
}

impl CondConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lambda_min && self.lambda_min < self.lambda_max && self.lambda_max.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < lambda_min < lambda_max, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if !(self.delta_scale > 0.0 && self.delta_scale.is_finite()) {
            return Err(Error::Config(format!(
                "delta_scale must be positive, got {}",
                self.delta_scale
            )));
        }
        Ok(())
    }

    fn check_target(&self, net: &PolicyNetwork) -> Result<()> {
        if self.target == CondTarget::ActionSample && net.spec().head == HeadKind::Categorical {
            return Err(Error::InvalidArgument(
                "action_sample conditioning needs a gaussian head".into(),
            ));
        }
        Ok(())
    }
}

/// Batch-reduced penalty with its per-state sensitivities.
#[derive(Clone, Debug, PartialEq)]
pub struct CondPenalty {
    pub j_values: Vec<f64>,
    pub psi_min: f64,
    pub psi_max: f64,
    pub psi: f64,
    /// Built on a gradient tape.
    pub differentiable: bool,
}

impl CondPenalty {
    pub fn j_mean(&self) -> f64 {
        self.j_values.iter().sum::<f64>() / self.j_values.len().max(1) as f64
    }

    pub fn j_max(&self) -> f64 {
        self.j_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn j_min(&self) -> f64 {
        self.j_values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Per-state clamp terms `(psi_min, psi_max)`.
pub fn psi_terms(j: f64, cfg: &CondConfig) -> (f64, f64) {
    let lo = j.min(cfg.lambda_min) - cfg.lambda_min;
    let hi = j.max(cfg.lambda_max) - cfg.lambda_max;
    (lo * lo, hi * hi)
}

/// Mean-reduced penalty over plain `J` values.
pub fn psi(j_values: &[f64], cfg: &CondConfig) -> CondPenalty {
    // Multiplying by reciprocals mirrors the taped path bit for bit.
    let inv_n = 1.0 / j_values.len().max(1) as f64;
    let (lo, hi) = j_values.iter().fold((0.0, 0.0), |(lo, hi), &j| {
        let (a, b) = psi_terms(j, cfg);
        (lo + a, hi + b)
    });
    let (psi_min, psi_max) = (lo * inv_n, hi * inv_n);
    CondPenalty {
        j_values: j_values.to_vec(),
        psi_min,
        psi_max,
        psi: psi_min + psi_max,
        differentiable: false,
    }
}

/// Taped mean penalty; returns `(psi, psi_min, psi_max)` scalars.
pub fn psi_taped(tape: &mut Tape, j: Var, cfg: &CondConfig) -> Result<(Var, Var, Var)> {
    let hi = tape.max_scalar(j, cfg.lambda_max)?;
    let hi = tape.offset(hi, -cfg.lambda_max)?;
    let hi = tape.square(hi)?;
    let hi = tape.mean(hi)?;
    let lo = tape.min_scalar(j, cfg.lambda_min)?;
    let lo = tape.offset(lo, -cfg.lambda_min)?;
    let lo = tape.square(lo)?;
    let lo = tape.mean(lo)?;
    let total = tape.add(lo, hi)?;
    Ok((total, lo, hi))
}

/// One perturbation `ε·u` per state, `u` uniform on the unit sphere.
pub fn draw_deltas(rows: usize, dim: usize, eps: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows).flat_map(|_| rng.unit_sphere(dim)).map(|x| x * eps).collect();
    Tensor::new(vec![rows, dim], data).expect("rows × dim data")
}

fn perturbed(states: &Tensor, deltas: &Tensor) -> Result<Tensor> {
    if states.shape() != deltas.shape() {
        return Err(Error::Misaligned(format!(
            "states {:?} vs perturbations {:?}",
            states.shape(),
            deltas.shape()
        )));
    }
    let data = states.data().iter().zip(deltas.data()).map(|(s, d)| s + d).collect();
    Ok(Tensor::new(states.shape().to_vec(), data)?)
}

fn row_norms_over(diff: &Tensor, eps: f64) -> Vec<f64> {
    (0..diff.rows())
        .map(|i| diff.row(i).iter().map(|x| x * x).sum::<f64>().sqrt() * (1.0 / eps))
        .collect()
}

/// `J` for explicit perturbations `deltas`, each of norm `eps`.
pub fn j_with_deltas(net: &PolicyNetwork, states: &Tensor, deltas: &Tensor, eps: f64) -> Result<Vec<f64>> {
    let base = net.actor_out(states)?;
    let moved = net.actor_out(&perturbed(states, deltas)?)?;
    let diff: Vec<f64> = moved.data().iter().zip(base.data()).map(|(a, b)| a - b).collect();
    Ok(row_norms_over(&Tensor::new(base.shape().to_vec(), diff)?, eps))
}

/// Gradient-free `J` estimate with fresh directions from `rng`.
pub fn estimate_j(net: &PolicyNetwork, states: &Tensor, cfg: &CondConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    cfg.check_target(net)?;
    let deltas = draw_deltas(states.rows(), states.cols(), cfg.delta_scale, rng);
    j_with_deltas(net, states, &deltas, cfg.delta_scale)
}

/// Taped `J` `[B]` for explicit perturbations; both passes share `bound`.
pub fn j_taped_with_deltas(
    tape: &mut Tape,
    net: &PolicyNetwork,
    bound: &Bound,
    states: &Tensor,
    deltas: &Tensor,
    eps: f64,
) -> Result<Var> {
    let moved = perturbed(states, deltas)?;
    let s = tape.constant(states.clone());
    let sm = tape.constant(moved);
    let base = net.actor_out_taped(tape, bound, s)?;
    let out = net.actor_out_taped(tape, bound, sm)?;
    let diff = tape.sub(out, base)?;
    let sq = tape.square(diff)?;
    let ss = tape.sum_cols(sq)?;
    let norm = tape.sqrt(ss)?;
    Ok(tape.scale(norm, 1.0 / eps)?)
}

/// Differentiable penalty on `states` with fresh directions.
/// Returns the taped scalar `psi` and the reduced values.
pub fn penalty_taped(
    tape: &mut Tape,
    net: &PolicyNetwork,
    bound: &Bound,
    states: &Tensor,
    cfg: &CondConfig,
    rng: &mut Rng,
) -> Result<(Var, CondPenalty)> {
    cfg.check_target(net)?;
    let deltas = draw_deltas(states.rows(), states.cols(), cfg.delta_scale, rng);
    let j = j_taped_with_deltas(tape, net, bound, states, &deltas, cfg.delta_scale)?;
    let (total, lo, hi) = psi_taped(tape, j, cfg)?;
    let pen = CondPenalty {
        j_values: tape.value(j).data().to_vec(),
        psi_min: tape.item(lo)?,
        psi_max: tape.item(hi)?,
        psi: tape.item(total)?,
        differentiable: true,
    };
    Ok((total, pen))
}

/// Logged conditioning on at most `probes` states drawn by `rng`.
pub fn conditioning_metric(
    net: &PolicyNetwork,
    states: &Tensor,
    cfg: &CondConfig,
    rng: &mut Rng,
    probes: usize,
) -> Result<CondPenalty> {
    let n = states.rows();
    let probe_states = if n <= probes {
        states.clone()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        idx.truncate(probes);
        idx.sort_unstable();
        let data: Vec<f64> = idx.iter().flat_map(|&i| states.row(i).iter().copied()).collect();
        Tensor::matrix(probes, states.cols(), data)?
    };
    let j = estimate_j(net, &probe_states, cfg, rng)?;
    Ok(psi(&j, cfg))
}

/// Dense Jacobian `[act×obs]` of the actor output at `state`, by central differences.
pub fn jacobian(net: &PolicyNetwork, state: &[f64], h: f64) -> Result<Tensor> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let d = state.len();
    let mut rows = Vec::with_capacity(2 * d * d);
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut s = state.to_vec();
            s[k] += sign * h;
            rows.extend(s);
        }
    }
    let out = net.actor_out(&Tensor::matrix(2 * d, d, rows)?)?;
    let a = out.cols();
    let mut jac = Tensor::zeros(&[a, d]);
    for k in 0..d {
        for i in 0..a {
            jac.set(i, k, (out.get(2 * k, i) - out.get(2 * k + 1, i)) / (2.0 * h));
        }
    }
    Ok(jac)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactConditioning {
    pub singular_values: Vec<f64>,
    pub sigma_max: f64,
    /// Smallest singular value above [`SINGULAR_TOL`].
    pub sigma_min_positive: f64,
    pub condition_number: f64,
}

/// Exact conditioning of the actor output at `state` via a dense Jacobian and SVD.
pub fn exact_condition_number(net: &PolicyNetwork, state: &[f64], h: f64) -> Result<ExactConditioning> {
    let sv = svd_values(&jacobian(net, state, h)?)?;
    let positive: Vec<f64> = sv.iter().copied().filter(|&s| s > SINGULAR_TOL).collect();
    let (Some(&sigma_max), Some(&sigma_min)) = (positive.first(), positive.last()) else {
        return Err(Error::DegenerateJacobian {
            threshold: SINGULAR_TOL,
        });
    };
    Ok(ExactConditioning {
        singular_values: sv,
        sigma_max,
        sigma_min_positive: sigma_min,
        condition_number: sigma_max / sigma_min,
    })
}
