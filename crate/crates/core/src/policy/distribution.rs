use std::f64::consts::{E, PI};

use crate::envs::Action;
use crate::numkit::{Rng, Tape, Tensor, Var};
use crate::{Error, Result};

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Gaussian,
    Categorical,
}

/// Action distribution for a single state.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    Categorical { probs: Vec<f64> },
}

impl ActionDistribution {
    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidDistribution(
                "gaussian std must be positive and finite".into(),
            ));
        }
        Ok(Self::Gaussian { mean, std })
    }

    pub fn categorical(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDistribution(
                "categorical probabilities must sum to 1".into(),
            ));
        }
        Ok(Self::Categorical { probs })
    }

    /// Softmax of `logits`, shifted by the max for stability.
    pub fn from_logits(logits: &[f64]) -> Self {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        Self::Categorical {
            probs: exps.into_iter().map(|e| e / z).collect(),
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Self::Gaussian { .. } => HeadKind::Gaussian,
            Self::Categorical { .. } => HeadKind::Categorical,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Categorical { probs } => probs.len(),
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (Self::Gaussian { mean, std }, Action::Continuous(a)) => {
                if a.len() != mean.len() {
                    return Err(Error::Width {
                        what: "action",
                        expected: mean.len(),
                        got: a.len(),
                    });
                }
                Ok(a.iter()
                    .zip(mean)
                    .zip(std)
                    .map(|((a, m), s)| -(a - m).powi(2) / (2.0 * s * s) - s.ln() - HALF_LOG_2PI)
                    .sum())
            }
            (Self::Categorical { probs }, Action::Discrete(i)) => {
                let p = probs.get(*i).ok_or(Error::ActionOutOfRange {
                    action: *i,
                    n: probs.len(),
                })?;
                Ok(p.ln())
            }
            _ => Err(Error::KindMismatch),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            Self::Gaussian { std, .. } => std.iter().map(|s| 0.5 * (2.0 * PI * E).ln() + s.ln()).sum(),
            Self::Categorical { probs } => -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>(),
        }
    }

    /// KL(self ‖ other).
    pub fn kl(&self, other: &Self) -> Result<f64> {
        match (self, other) {
            (Self::Gaussian { mean: mp, std: sp }, Self::Gaussian { mean: mq, std: sq }) if mp.len() == mq.len() => {
                Ok((0..mp.len())
                    .map(|i| {
                        (sq[i] / sp[i]).ln() + (sp[i].powi(2) + (mp[i] - mq[i]).powi(2)) / (2.0 * sq[i].powi(2)) - 0.5
                    })
                    .sum())
            }
            (Self::Categorical { probs: p }, Self::Categorical { probs: q }) if p.len() == q.len() => Ok(p
                .iter()
                .zip(q)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
                .sum()),
            _ => Err(Error::KindMismatch),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Action {
        match self {
            Self::Gaussian { mean, std } => {
                Action::Continuous(mean.iter().zip(std).map(|(m, s)| m + s * rng.normal()).collect())
            }
            Self::Categorical { probs } => {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(probs.len() - 1)
            }
        }
    }

    /// Most likely action: the mean, or the argmax (lowest index on ties).
    pub fn mode(&self) -> Action {
        match self {
            Self::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
            Self::Categorical { probs } => {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
        }
    }
}

/// Distribution parameters for a batch of states.
#[derive(Clone, Debug, PartialEq)]
pub enum DistBatch {
    Gaussian { mean: Tensor, log_std: Vec<f64> },
    Categorical { logits: Tensor },
}

impl DistBatch {
    pub fn len(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.rows(),
            Self::Categorical { logits } => logits.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> ActionDistribution {
        match self {
            Self::Gaussian { mean, log_std } => ActionDistribution::Gaussian {
                mean: mean.row(i).to_vec(),
                std: log_std.iter().map(|l| l.exp()).collect(),
            },
            Self::Categorical { logits } => ActionDistribution::from_logits(logits.row(i)),
        }
    }
}

impl DistBatch {
    /// Per-row log-density of an action tensor laid out as in [`actions_to_tensor`].
    pub fn log_probs(&self, actions: &Tensor) -> Result<Vec<f64>> {
        if actions.rows() != self.len() {
            return Err(Error::Misaligned(format!(
                "{} actions for {} states",
                actions.rows(),
                self.len()
            )));
        }
        match self {
            Self::Gaussian { mean, log_std } => {
                if actions.cols() != mean.cols() {
                    return Err(Error::Width {
                        what: "action",
                        expected: mean.cols(),
                        got: actions.cols(),
                    });
                }
                let ls_sum: f64 = log_std.iter().sum();
                let inv: Vec<f64> = log_std.iter().map(|l| (-l).exp()).collect();
                Ok((0..mean.rows())
                    .map(|i| {
                        let quad: f64 = (0..mean.cols())
                            .map(|j| ((actions.get(i, j) - mean.get(i, j)) * inv[j]).powi(2))
                            .sum();
                        -0.5 * quad - ls_sum - mean.cols() as f64 * HALF_LOG_2PI
                    })
                    .collect())
            }
            Self::Categorical { logits } => {
                let idx = indices(actions, logits.cols())?;
                Ok(idx
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        let row = logits.row(i);
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let lz = row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
                        row[a] - m - lz
                    })
                    .collect())
            }
        }
    }

    /// Mean over rows of KL(self ‖ other).
    pub fn mean_kl(&self, other: &Self) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Misaligned(format!("{} vs {} states", self.len(), other.len())));
        }
        let mut total = 0.0;
        for i in 0..self.len() {
            total += self.row(i).kl(&other.row(i))?;
        }
        Ok(total / self.len().max(1) as f64)
    }
}

/// Action batch as a tensor: `[B×A]` for continuous, `[B×1]` indices for discrete.
pub fn actions_to_tensor(actions: &[Action]) -> Result<Tensor> {
    let width = match actions.first() {
        Some(Action::Continuous(a)) => a.len(),
        Some(Action::Discrete(_)) | None => 1,
    };
    let mut data = Vec::with_capacity(actions.len() * width);
    for a in actions {
        match a {
            Action::Continuous(v) if v.len() == width => data.extend_from_slice(v),
            Action::Discrete(i) if width == 1 => data.push(*i as f64),
            _ => return Err(Error::KindMismatch),
        }
    }
    Ok(Tensor::matrix(actions.len(), width, data)?)
}

fn indices(actions: &Tensor, n: usize) -> Result<Vec<usize>> {
    actions
        .data()
        .iter()
        .map(|&a| {
            let i = a as usize;
            if a < 0.0 || i >= n || a.fract() != 0.0 {
                Err(Error::ActionOutOfRange { action: i, n })
            } else {
                Ok(i)
            }
        })
        .collect()
}

/// Row-wise log-softmax on the tape.
pub fn log_softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    let v = tape.value(logits);
    let cols = v.cols();
    let maxes: Vec<f64> = (0..v.rows())
        .map(|i| v.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    // The shift is a constant; log Σ exp(x − m) + m equals logsumexp for any m.
    let m = tape.constant(Tensor::vector(maxes));
    let mb = tape.broadcast_cols(m, cols)?;
    let shifted = tape.sub(logits, mb)?;
    let e = tape.exp(shifted)?;
    let z = tape.sum_cols(e)?;
    let lz = tape.log(z)?;
    let lzb = tape.broadcast_cols(lz, cols)?;
    Ok(tape.sub(shifted, lzb)?)
}

/// Per-row log-density of `actions` under the head output.
///
/// `out` is the action mean `[B×A]` (gaussian) or the logits `[B×K]`.
pub fn log_prob_taped(
    tape: &mut Tape,
    kind: HeadKind,
    out: Var,
    log_std: Option<Var>,
    actions: &Tensor,
) -> Result<Var> {
    match kind {
        HeadKind::Gaussian => {
            let log_std = log_std.ok_or(Error::KindMismatch)?;
            let (rows, dim) = tape.value(out).dims2("log_prob")?;
            if actions.shape() != [rows, dim] {
                return Err(Error::Width {
                    what: "action",
                    expected: dim,
                    got: actions.cols(),
                });
            }
            let a = tape.constant(actions.clone());
            let diff = tape.sub(a, out)?;
            let nls = tape.neg(log_std)?;
            let inv_std = tape.exp(nls)?;
            let inv_std_b = tape.broadcast_rows(inv_std, rows)?;
            let z = tape.mul(diff, inv_std_b)?;
            let z2 = tape.square(z)?;
            let quad = tape.sum_cols(z2)?;
            let quad = tape.scale(quad, -0.5)?;
            let ls_sum = tape.sum(log_std)?;
            let lp = tape.sub(quad, ls_sum)?;
            Ok(tape.offset(lp, -(dim as f64) * HALF_LOG_2PI)?)
        }
        HeadKind::Categorical => {
            let cols = tape.value(out).cols();
            let idx = indices(actions, cols)?;
            let lsm = log_softmax(tape, out)?;
            Ok(tape.select_cols(lsm, &idx)?)
        }
    }
}

/// Mean entropy over the batch, as a scalar.
pub fn entropy_taped(tape: &mut Tape, kind: HeadKind, out: Var, log_std: Option<Var>) -> Result<Var> {
    match kind {
        HeadKind::Gaussian => {
            let log_std = log_std.ok_or(Error::KindMismatch)?;
            let dim = tape.value(log_std).len();
            let s = tape.sum(log_std)?;
            Ok(tape.offset(s, dim as f64 * 0.5 * (2.0 * PI * E).ln())?)
        }
        HeadKind::Categorical => {
            let lsm = log_softmax(tape, out)?;
            let p = tape.exp(lsm)?;
            let plogp = tape.mul(p, lsm)?;
            let h = tape.sum_cols(plogp)?;
            let m = tape.mean(h)?;
            Ok(tape.neg(m)?)
        }
    }
}

/// Mean over the batch of KL(old ‖ new), where `old` is held constant.
pub fn kl_taped(tape: &mut Tape, old: &DistBatch, out: Var, log_std: Option<Var>) -> Result<Var> {
    match old {
        DistBatch::Gaussian {
            mean: old_mean,
            log_std: old_log_std,
        } => {
            let log_std = log_std.ok_or(Error::KindMismatch)?;
            let (rows, dim) = old_mean.dims2("kl")?;
            if tape.value(out).shape() != [rows, dim] {
                return Err(Error::KindMismatch);
            }
            // Σ_d [ℓn − ℓo + (σo² + (μo − μn)²) / (2σn²) − ½]
            let mo = tape.constant(old_mean.clone());
            let diff = tape.sub(mo, out)?;
            let d2 = tape.square(diff)?;
            let old_var: Vec<f64> = old_log_std.iter().map(|l| (2.0 * l).exp()).collect();
            let ov = tape.constant(Tensor::vector(old_var));
            let ovb = tape.broadcast_rows(ov, rows)?;
            let num = tape.add(d2, ovb)?;
            let m2 = tape.scale(log_std, -2.0)?;
            let inv_var = tape.exp(m2)?;
            let inv_var_b = tape.broadcast_rows(inv_var, rows)?;
            let ratio = tape.mul(num, inv_var_b)?;
            let ratio = tape.scale(ratio, 0.5)?;
            let per_row = tape.sum_cols(ratio)?;
            let mean_ratio = tape.mean(per_row)?;
            let ls_sum = tape.sum(log_std)?;
            let old_sum: f64 = old_log_std.iter().sum();
            let t = tape.add(mean_ratio, ls_sum)?;
            Ok(tape.offset(t, -old_sum - 0.5 * dim as f64)?)
        }
        DistBatch::Categorical { logits } => {
            let rows = logits.rows();
            let mut old_p = Vec::with_capacity(logits.len());
            let mut old_plogp = 0.0;
            for i in 0..rows {
                if let ActionDistribution::Categorical { probs } = ActionDistribution::from_logits(logits.row(i)) {
                    old_plogp += probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
                    old_p.extend(probs);
                }
            }
            let op = tape.constant(Tensor::new(logits.shape().to_vec(), old_p)?);
            let lsm = log_softmax(tape, out)?;
            let cross = tape.mul(op, lsm)?;
            let s = tape.sum(cross)?;
            let s = tape.scale(s, -1.0 / rows as f64)?;
            Ok(tape.offset(s, old_plogp / rows as f64)?)
        }
    }
}
