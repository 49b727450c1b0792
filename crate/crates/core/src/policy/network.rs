use serde::{Deserialize, Serialize};

use super::distribution::{DistBatch, HeadKind};
use crate::numkit::{Rng, Tape, Tensor, Var};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const TRUNK_GAIN: f64 = std::f64::consts::SQRT_2;
const ACTOR_GAIN: f64 = 0.01;
const VALUE_GAIN: f64 = 1.0;

/// Shape of an actor-critic network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub obs_dim: usize,
    /// Action dimension (gaussian) or number of actions (categorical).
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    pub head: HeadKind,
    /// Value head reads the actor trunk instead of owning one.
    pub shared_trunk: bool,
}

impl NetSpec {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: Vec<usize>, head: HeadKind) -> Self {
        Self {
            obs_dim,
            act_dim,
            hidden,
            head,
            shared_trunk: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter slots, in storage order.
#[derive(Clone, Debug)]
struct Layout {
    actor_trunk: Vec<usize>,
    actor_head: usize,
    log_std: Option<usize>,
    value_trunk: Vec<usize>,
    value_head: usize,
    len: usize,
}

impl Layout {
    fn of(spec: &NetSpec) -> Self {
        // Each layer occupies two slots: weight then bias.
        let mut next = 0;
        let mut take = |n: usize| {
            let start = next;
            next += n;
            start
        };
        let depth = spec.hidden.len();
        let actor_trunk = (0..depth).map(|_| take(2)).collect();
        let actor_head = take(2);
        let log_std = (spec.head == HeadKind::Gaussian).then(|| take(1));
        let value_trunk = if spec.shared_trunk {
            Vec::new()
        } else {
            (0..depth).map(|_| take(2)).collect()
        };
        let value_head = take(2);
        Self {
            actor_trunk,
            actor_head,
            log_std,
            value_trunk,
            value_head,
            len: next,
        }
    }
}

/// Tape handles for every parameter of a network.
#[derive(Clone, Debug)]
pub struct Bound {
    pub params: Vec<Var>,
}

/// MLP actor-critic. Layers compute `tanh(x·W + b)`, with `W` stored `[in×out]`.
///
/// Parameter order: actor trunk, actor head, `log_std` (gaussian only),
/// value trunk (unless shared), value head.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNetwork {
    spec: NetSpec,
    params: Vec<Tensor>,
}

/// `[rows×cols]` matrix with orthonormal columns (or rows, if wide) times `gain`.
pub fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Tensor {
    let (n_vec, len) = (rows.min(cols), rows.max(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while basis.len() < n_vec {
        let mut v = rng.normals(len);
        // Two Gram-Schmidt passes keep orthogonality at round-off level.
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    let mut t = Tensor::zeros(&[rows, cols]);
    for (k, b) in basis.iter().enumerate() {
        for (l, &x) in b.iter().enumerate() {
            if rows >= cols {
                t.set(l, k, gain * x);
            } else {
                t.set(k, l, gain * x);
            }
        }
    }
    t
}

impl PolicyNetwork {
    /// Orthogonal weights, zero biases, zero `log_std`.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(seed);
        let mut params = Vec::new();
        let mut mlp = |params: &mut Vec<Tensor>, out: usize, head_gain: f64| {
            let mut width = spec.obs_dim;
            for &h in &spec.hidden {
                params.push(orthogonal(width, h, TRUNK_GAIN, &mut rng));
                params.push(Tensor::zeros(&[h]));
                width = h;
            }
            params.push(orthogonal(width, out, head_gain, &mut rng));
            params.push(Tensor::zeros(&[out]));
        };
        mlp(&mut params, spec.act_dim, ACTOR_GAIN);
        if spec.head == HeadKind::Gaussian {
            params.push(Tensor::zeros(&[spec.act_dim]));
        }
        if spec.shared_trunk {
            let width = spec.hidden.last().copied().unwrap_or(spec.obs_dim);
            params.push(orthogonal(width, 1, VALUE_GAIN, &mut rng));
            params.push(Tensor::zeros(&[1]));
        } else {
            mlp(&mut params, 1, VALUE_GAIN);
        }
        debug_assert_eq!(params.len(), Layout::of(&spec).len);
        Ok(Self { spec, params })
    }

    /// All parameters zero.
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        let mut net = Self::init(spec, 0)?;
        net.params.iter_mut().for_each(|p| p.data_mut().fill(0.0));
        Ok(net)
    }

    /// Network from explicit parameter tensors in storage order.
    pub fn from_params(spec: NetSpec, params: Vec<Tensor>) -> Result<Self> {
        let template = Self::zeros(spec)?;
        if params.len() != template.params.len() {
            return Err(Error::Width {
                what: "parameter list",
                expected: template.params.len(),
                got: params.len(),
            });
        }
        for (p, t) in params.iter().zip(&template.params) {
            if p.shape() != t.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter shape {:?}, expected {:?}",
                    p.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self {
            spec: template.spec,
            params,
        })
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout::of(&self.spec)
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Slot indices of parameters that only the actor uses.
    pub fn actor_param_indices(&self) -> Vec<usize> {
        let l = self.layout();
        let mut idx: Vec<usize> = l.actor_trunk.iter().flat_map(|&i| [i, i + 1]).collect();
        idx.extend([l.actor_head, l.actor_head + 1]);
        idx.extend(l.log_std);
        idx
    }

    /// Slot indices of parameters that only the critic uses.
    pub fn value_param_indices(&self) -> Vec<usize> {
        let l = self.layout();
        let mut idx: Vec<usize> = l.value_trunk.iter().flat_map(|&i| [i, i + 1]).collect();
        idx.extend([l.value_head, l.value_head + 1]);
        idx
    }

    pub fn log_std(&self) -> Option<&[f64]> {
        self.layout().log_std.map(|i| self.params[i].data())
    }

    pub fn set_log_std(&mut self, values: &[f64]) -> Result<()> {
        let i = self.layout().log_std.ok_or(Error::KindMismatch)?;
        if values.len() != self.spec.act_dim {
            return Err(Error::Width {
                what: "log_std",
                expected: self.spec.act_dim,
                got: values.len(),
            });
        }
        self.params[i].data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn clamp_log_std(&mut self) {
        if let Some(i) = self.layout().log_std {
            for x in self.params[i].data_mut() {
                *x = x.clamp(LOG_STD_MIN, LOG_STD_MAX);
            }
        }
    }

    /// Actor head weight `[in×act]` and bias.
    pub fn actor_head_mut(&mut self) -> (&mut Tensor, &mut Tensor) {
        let i = self.layout().actor_head;
        let (w, b) = self.params[i..i + 2].split_at_mut(1);
        (&mut w[0], &mut b[0])
    }

    pub fn parameter_vector(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn load_parameter_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_scalars() {
            return Err(Error::Width {
                what: "parameter vector",
                expected: self.n_scalars(),
                got: v.len(),
            });
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.len();
            p.data_mut().copy_from_slice(&v[off..off + n]);
            off += n;
        }
        Ok(())
    }

    fn check_states(&self, states: &Tensor) -> Result<()> {
        let (_, cols) = states.dims2("forward")?;
        if cols != self.spec.obs_dim {
            return Err(Error::Width {
                what: "state",
                expected: self.spec.obs_dim,
                got: cols,
            });
        }
        if !states.all_finite() {
            return Err(Error::NonFinite("states".into()));
        }
        Ok(())
    }

    // ---------------------------------------------------------- taped path

    /// Puts parameters on the tape, as differentiable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let params = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        Bound { params }
    }

    pub fn log_std_var(&self, bound: &Bound) -> Option<Var> {
        self.layout().log_std.map(|i| bound.params[i])
    }

    fn dense_taped(tape: &mut Tape, bound: &Bound, slot: usize, x: Var, act: bool) -> Result<Var> {
        let y = tape.matmul(x, bound.params[slot])?;
        let y = tape.add_bias(y, bound.params[slot + 1])?;
        Ok(if act { tape.tanh(y)? } else { y })
    }

    fn mlp_taped(tape: &mut Tape, bound: &Bound, trunk: &[usize], x: Var) -> Result<Var> {
        trunk
            .iter()
            .try_fold(x, |h, &slot| Self::dense_taped(tape, bound, slot, h, true))
    }

    fn value_from_features(tape: &mut Tape, bound: &Bound, slot: usize, h: Var) -> Result<Var> {
        let v = Self::dense_taped(tape, bound, slot, h, false)?;
        let rows = tape.value(v).rows();
        Ok(tape.reshape(v, &[rows])?)
    }

    /// Action mean or logits, `[B×act]`.
    pub fn actor_out_taped(&self, tape: &mut Tape, bound: &Bound, states: Var) -> Result<Var> {
        self.check_states(tape.value(states))?;
        let l = self.layout();
        let h = Self::mlp_taped(tape, bound, &l.actor_trunk, states)?;
        Self::dense_taped(tape, bound, l.actor_head, h, false)
    }

    /// State values, `[B]`.
    pub fn value_out_taped(&self, tape: &mut Tape, bound: &Bound, states: Var) -> Result<Var> {
        self.check_states(tape.value(states))?;
        let l = self.layout();
        let trunk = if self.spec.shared_trunk {
            &l.actor_trunk
        } else {
            &l.value_trunk
        };
        let h = Self::mlp_taped(tape, bound, trunk, states)?;
        Self::value_from_features(tape, bound, l.value_head, h)
    }

    /// Actor output and values in one pass (the trunk is evaluated once when shared).
    pub fn forward_taped(&self, tape: &mut Tape, bound: &Bound, states: Var) -> Result<(Var, Var)> {
        if !self.spec.shared_trunk {
            return Ok((
                self.actor_out_taped(tape, bound, states)?,
                self.value_out_taped(tape, bound, states)?,
            ));
        }
        self.check_states(tape.value(states))?;
        let l = self.layout();
        let h = Self::mlp_taped(tape, bound, &l.actor_trunk, states)?;
        let out = Self::dense_taped(tape, bound, l.actor_head, h, false)?;
        let v = Self::value_from_features(tape, bound, l.value_head, h)?;
        Ok((out, v))
    }

    // ----------------------------------------------------------- plain path
    // Same kernels and operation order as the taped path, so values agree bitwise.

    fn dense(&self, slot: usize, x: &Tensor, act: bool) -> Result<Tensor> {
        let mut y = x.matmul(&self.params[slot])?;
        let b = self.params[slot + 1].data();
        let n = b.len();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += b[i % n];
            if act {
                *v = v.tanh();
            }
        }
        Ok(y)
    }

    fn mlp(&self, trunk: &[usize], x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for &slot in trunk {
            h = self.dense(slot, &h, true)?;
        }
        Ok(h)
    }

    /// Action mean or logits without a tape.
    pub fn actor_out(&self, states: &Tensor) -> Result<Tensor> {
        self.check_states(states)?;
        let l = self.layout();
        let h = self.mlp(&l.actor_trunk, states)?;
        let out = self.dense(l.actor_head, &h, false)?;
        if !out.all_finite() {
            return Err(Error::NonFinite("policy output".into()));
        }
        Ok(out)
    }

    pub fn values(&self, states: &Tensor) -> Result<Vec<f64>> {
        self.check_states(states)?;
        let l = self.layout();
        let trunk = if self.spec.shared_trunk {
            &l.actor_trunk
        } else {
            &l.value_trunk
        };
        let h = self.mlp(trunk, states)?;
        let v = self.dense(l.value_head, &h, false)?;
        if !v.all_finite() {
            return Err(Error::NonFinite("value output".into()));
        }
        Ok(v.into_data())
    }

    /// One distribution and one value per state row.
    pub fn forward(&self, states: &Tensor) -> Result<(DistBatch, Vec<f64>)> {
        let out = self.actor_out(states)?;
        let dist = match self.spec.head {
            HeadKind::Gaussian => DistBatch::Gaussian {
                mean: out,
                log_std: self.log_std().unwrap_or_default().to_vec(),
            },
            HeadKind::Categorical => DistBatch::Categorical { logits: out },
        };
        Ok((dist, self.values(states)?))
    }
}
