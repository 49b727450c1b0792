//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its value and the ids of its
//! inputs, so node order is already topological. Backward passes are
//! themselves expressed with taped operations: the gradients returned by
//! [`Tape::gradients`] are ordinary [`Var`]s and can be differentiated
//! again (Hessian-vector products need this).

use super::tensor::{gemm_nn, gemm_nt, gemm_tn};
use super::{NumError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Unary {
    Neg,
    Exp,
    Log,
    Tanh,
    Square,
    Sqrt,
    Scale(f64),
    Offset(f64),
    Clip(f64, f64),
    MaxConst(f64),
    MinConst(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    SafeDiv,
    Min,
    Max,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    Sum(Var),
    Expand(Var),
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    Reshape(Var),
    SelectCols(Var, Vec<usize>),
    ScatterCols(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Recording of operations for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn is_scalar_len(t: &Tensor) -> bool {
    t.len() == 1
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`. Variables created
    /// after that point become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Input that participates in differentiation (a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Input treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> Result<f64, NumError> {
        self.value(v).item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var, NumError> {
        if !value.all_finite() {
            return Err(NumError::NonFinite(name));
        }
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if rg { op } else { Op::Leaf };
        Ok(self.push_raw(value, op, rg))
    }

    // ---------------------------------------------------------------- ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, NumError> {
        let av = self.value(a);
        let bv = self.value(b);
        let (ar, ac) = av.dims2("matmul")?;
        let (br, bc) = bv.dims2("matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(NumError::Shape {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        match (ta, tb) {
            (false, false) => gemm_nn(av.data(), bv.data(), &mut out, m, k, n),
            (true, false) => gemm_tn(av.data(), bv.data(), &mut out, m, k, n),
            (false, true) => gemm_nt(av.data(), bv.data(), &mut out, m, k, n),
            (true, true) => {
                let at = av.transpose()?;
                gemm_nt(at.data(), bv.data(), &mut out, m, k, n)
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.push("matmul", value, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Result<Var, NumError> {
        let xv = self.value(x);
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            Unary::Neg => Box::new(|v: f64| -v),
            Unary::Exp => Box::new(f64::exp),
            Unary::Log => {
                if xv.data().iter().any(|&v| v <= 0.0) {
                    return Err(NumError::LogDomain);
                }
                Box::new(f64::ln)
            }
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Square => Box::new(|v: f64| v * v),
            Unary::Sqrt => {
                if xv.data().iter().any(|&v| v < 0.0) {
                    return Err(NumError::SqrtDomain);
                }
                Box::new(f64::sqrt)
            }
            Unary::Scale(c) => Box::new(move |v: f64| v * c),
            Unary::Offset(c) => Box::new(move |v: f64| v + c),
            Unary::Clip(lo, hi) => Box::new(move |v: f64| v.clamp(lo, hi)),
            Unary::MaxConst(c) => Box::new(move |v: f64| v.max(c)),
            Unary::MinConst(c) => Box::new(move |v: f64| v.min(c)),
        };
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let name = match kind {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Tanh => "tanh",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::Scale(_) => "scale",
            Unary::Offset(_) => "offset",
            Unary::Clip(..) => "clip",
            Unary::MaxConst(_) => "max",
            Unary::MinConst(_) => "min",
        };
        self.push(name, value, Op::Unary(kind, x), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(Unary::Neg, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(Unary::Exp, x)
    }
    /// Natural log; non-positive input is an error.
    pub fn log(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(Unary::Log, x)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(Unary::Tanh, x)
    }
    pub fn square(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(Unary::Square, x)
    }
    /// Square root; the derivative at 0 is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Result<Var, NumError> {
        self.unary(Unary::Sqrt, x)
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, NumError> {
        self.unary(Unary::Scale(c), x)
    }
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var, NumError> {
        self.unary(Unary::Offset(c), x)
    }
    /// Clamp into `[lo, hi]`; gradient 1 inside the interval, 0 outside.
    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, NumError> {
        self.unary(Unary::Clip(lo, hi), x)
    }
    pub fn max_scalar(&mut self, x: Var, c: f64) -> Result<Var, NumError> {
        self.unary(Unary::MaxConst(c), x)
    }
    pub fn min_scalar(&mut self, x: Var, c: f64) -> Result<Var, NumError> {
        self.unary(Unary::MinConst(c), x)
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, NumError> {
        let av = self.value(a);
        let bv = self.value(b);
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::SafeDiv => "div",
            Binary::Min => "min",
            Binary::Max => "max",
        };
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::SafeDiv => {
                if y == 0.0 {
                    0.0
                } else {
                    x / y
                }
            }
            Binary::Min => x.min(y),
            Binary::Max => x.max(y),
        };
        let value = if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(av.shape().to_vec(), data)?
        } else if is_scalar_len(bv) && matches!(kind, Binary::Add | Binary::Sub | Binary::Mul) {
            let y = bv.data()[0];
            Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x, y)).collect())?
        } else if is_scalar_len(av) && matches!(kind, Binary::Add | Binary::Sub | Binary::Mul) {
            let x = av.data()[0];
            Tensor::new(bv.shape().to_vec(), bv.data().iter().map(|&y| f(x, y)).collect())?
        } else {
            return Err(NumError::Shape {
                op: name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        self.push(name, value, Op::Binary(kind, a, b), &[a, b])
    }

    /// Elementwise sum; a single-element operand broadcasts.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Binary::Mul, a, b)
    }
    /// Same-shape division that yields 0 wherever the divisor is 0.
    pub fn safe_div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Binary::SafeDiv, a, b)
    }
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Binary::Min, a, b)
    }
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.binary(Binary::Max, a, b)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, NumError> {
        let s: f64 = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumError> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Repeat a single-element tensor into `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        let xv = self.value(x);
        if !is_scalar_len(xv) {
            return Err(NumError::NotScalar(xv.shape().to_vec()));
        }
        let value = Tensor::full(shape, xv.data()[0]);
        self.push("expand", value, Op::Expand(x), &[x])
    }

    /// Column-wise sum: `[B×n] -> [n]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var, NumError> {
        let xv = self.value(x);
        let (r, c) = xv.dims2("sum_rows")?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        self.push("sum_rows", Tensor::vector(out), Op::SumRows(x), &[x])
    }

    /// Stack a vector `[n]` into `rows` identical rows: `[rows×n]`.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.shape().len() != 1 {
            return Err(NumError::Rank {
                op: "broadcast_rows",
                expected: 1,
                shape: xv.shape().to_vec(),
            });
        }
        let n = xv.len();
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(xv.data());
        }
        let value = Tensor::new(vec![rows, n], data)?;
        self.push("broadcast_rows", value, Op::BroadcastRows(x), &[x])
    }

    /// Per-row sum: `[B×n] -> [B]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var, NumError> {
        let xv = self.value(x);
        let (r, _) = xv.dims2("sum_cols")?;
        let out = (0..r).map(|i| xv.row(i).iter().sum()).collect();
        self.push("sum_cols", Tensor::vector(out), Op::SumCols(x), &[x])
    }

    /// Repeat each entry of `[B]` across `cols` columns: `[B×cols]`.
    pub fn broadcast_cols(&mut self, x: Var, cols: usize) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.shape().len() != 1 {
            return Err(NumError::Rank {
                op: "broadcast_cols",
                expected: 1,
                shape: xv.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(xv.len() * cols);
        for &v in xv.data() {
            data.extend(std::iter::repeat_n(v, cols));
        }
        let value = Tensor::new(vec![xv.len(), cols], data)?;
        self.push("broadcast_cols", value, Op::BroadcastCols(x), &[x])
    }

    /// Row-wise bias add: `[B×n] + [n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let rows = self.value(x).rows();
        let b = self.broadcast_rows(bias, rows)?;
        self.add(x, b)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Picks `x[i, idx[i]]` for every row: `[B×n] -> [B]`.
    pub fn select_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var, NumError> {
        let xv = self.value(x);
        let (r, c) = xv.dims2("select_cols")?;
        if idx.len() != r || idx.iter().any(|&j| j >= c) {
            return Err(NumError::Index { op: "select_cols" });
        }
        let out = idx.iter().enumerate().map(|(i, &j)| xv.get(i, j)).collect();
        self.push(
            "select_cols",
            Tensor::vector(out),
            Op::SelectCols(x, idx.to_vec()),
            &[x],
        )
    }

    /// Inverse of [`Tape::select_cols`]: places `x[i]` at column `idx[i]`.
    pub fn scatter_cols(&mut self, x: Var, idx: &[usize], cols: usize) -> Result<Var, NumError> {
        let xv = self.value(x);
        if xv.shape().len() != 1 || idx.len() != xv.len() || idx.iter().any(|&j| j >= cols) {
            return Err(NumError::Index { op: "scatter_cols" });
        }
        let mut out = Tensor::zeros(&[xv.len(), cols]);
        for (i, &j) in idx.iter().enumerate() {
            out.set(i, j, xv.data()[i]);
        }
        self.push("scatter_cols", out, Op::ScatterCols(x, idx.to_vec()), &[x])
    }

    /// Dot product of two same-shape tensors, as a scalar.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    // ----------------------------------------------------------- backward

    /// Gradient of scalar `output` with respect to each of `wrt`.
    ///
    /// The returned variables live on this tape and are differentiable.
    /// Inputs that do not influence `output` receive a zero constant.
    pub fn gradients(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, NumError> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(NumError::NotScalar(out_val.shape().to_vec()));
        }
        let top = output.0;
        let mut adjoint: Vec<Option<Var>> = vec![None; top + 1];
        if self.nodes[top].requires_grad {
            let shape = out_val.shape().to_vec();
            adjoint[top] = Some(self.constant(Tensor::full(&shape, 1.0)));
        }
        for id in (0..=top).rev() {
            let Some(g) = adjoint[id] else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            for (input, contrib) in self.vjp(Var(id), &op, g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                adjoint[input.0] = Some(match adjoint[input.0] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }
        wrt.iter()
            .map(|v| match adjoint.get(v.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let shape = self.shape(*v).to_vec();
                    Ok(self.constant(Tensor::zeros(&shape)))
                }
            })
            .collect()
    }

    /// Accumulates `∂output/∂leaf` into every differentiable leaf's grad.
    /// Repeated calls add up until [`Tape::zero_grad`].
    pub fn backward(&mut self, output: Var) -> Result<(), NumError> {
        let leaves: Vec<Var> = self
            .nodes
            .iter()
            .enumerate()
            .take(output.0 + 1)
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(i, _)| Var(i))
            .collect();
        let grads = self.gradients(output, &leaves)?;
        for (leaf, g) in leaves.into_iter().zip(grads) {
            let gv = self.nodes[g.0].value.clone();
            let node = &mut self.nodes[leaf.0];
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(gv.data()) {
                        *a += b;
                    }
                }
                None => node.grad = Some(gv),
            }
        }
        Ok(())
    }

    /// Sum `g` down to a single element when the forward operand was broadcast.
    fn reduce_to(&mut self, g: Var, target: Var) -> Result<Var, NumError> {
        if self.value(target).shape() == self.value(g).shape() {
            return Ok(g);
        }
        let s = self.sum(g)?;
        let shape = self.shape(target).to_vec();
        self.reshape(s, &shape)
    }

    fn mask(&mut self, x: Var, keep: impl Fn(f64) -> bool) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if keep(v) { 1.0 } else { 0.0 }).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("mask shape");
        self.constant(t)
    }

    fn vjp(&mut self, y: Var, op: &Op, g: Var) -> Result<Vec<(Var, Var)>, NumError> {
        Ok(match *op {
            Op::Leaf => Vec::new(),
            Op::MatMul { a, b, ta, tb } => {
                let (da, db) = match (ta, tb) {
                    (false, false) => (self.matmul_t(g, b, false, true)?, self.matmul_t(a, g, true, false)?),
                    (true, false) => (self.matmul_t(b, g, false, true)?, self.matmul_t(a, g, false, false)?),
                    (false, true) => (self.matmul_t(g, b, false, false)?, self.matmul_t(g, a, true, false)?),
                    (true, true) => (self.matmul_t(b, g, true, true)?, self.matmul_t(g, a, true, true)?),
                };
                vec![(a, da), (b, db)]
            }
            Op::Unary(kind, x) => {
                let dx = match kind {
                    Unary::Neg => self.neg(g)?,
                    Unary::Exp => self.mul(g, y)?,
                    Unary::Log => self.safe_div(g, x)?,
                    Unary::Tanh => {
                        let yy = self.mul(y, y)?;
                        let gyy = self.mul(g, yy)?;
                        self.sub(g, gyy)?
                    }
                    Unary::Square => {
                        let gx = self.mul(g, x)?;
                        self.scale(gx, 2.0)?
                    }
                    Unary::Sqrt => {
                        let q = self.safe_div(g, y)?;
                        self.scale(q, 0.5)?
                    }
                    Unary::Scale(c) => self.scale(g, c)?,
                    Unary::Offset(_) => g,
                    Unary::Clip(lo, hi) => {
                        let m = self.mask(x, |v| v >= lo && v <= hi);
                        self.mul(g, m)?
                    }
                    Unary::MaxConst(c) => {
                        let m = self.mask(x, |v| v > c);
                        self.mul(g, m)?
                    }
                    Unary::MinConst(c) => {
                        let m = self.mask(x, |v| v < c);
                        self.mul(g, m)?
                    }
                };
                vec![(x, dx)]
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add => {
                    let da = self.reduce_to(g, a)?;
                    let db = self.reduce_to(g, b)?;
                    vec![(a, da), (b, db)]
                }
                Binary::Sub => {
                    let da = self.reduce_to(g, a)?;
                    let ng = self.neg(g)?;
                    let db = self.reduce_to(ng, b)?;
                    vec![(a, da), (b, db)]
                }
                Binary::Mul => {
                    let gb = self.mul(g, b)?;
                    let da = self.reduce_to(gb, a)?;
                    let ga = self.mul(g, a)?;
                    let db = self.reduce_to(ga, b)?;
                    vec![(a, da), (b, db)]
                }
                Binary::SafeDiv => {
                    let da = self.safe_div(g, b)?;
                    let gy = self.mul(g, y)?;
                    let q = self.safe_div(gy, b)?;
                    let db = self.neg(q)?;
                    vec![(a, da), (b, db)]
                }
                Binary::Min | Binary::Max => {
                    let (av, bv) = (self.value(a).clone(), self.value(b).clone());
                    let pick_a: Vec<f64> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&x, &z)| {
                            let take = if kind == Binary::Min { x <= z } else { x >= z };
                            if take {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let pick_b: Vec<f64> = pick_a.iter().map(|m| 1.0 - m).collect();
                    let ma = self.constant(Tensor::new(av.shape().to_vec(), pick_a)?);
                    let mb = self.constant(Tensor::new(av.shape().to_vec(), pick_b)?);
                    let da = self.mul(g, ma)?;
                    let db = self.mul(g, mb)?;
                    vec![(a, da), (b, db)]
                }
            },
            Op::Sum(x) => {
                let shape = self.shape(x).to_vec();
                vec![(x, self.expand(g, &shape)?)]
            }
            Op::Expand(x) => {
                let s = self.sum(g)?;
                let shape = self.shape(x).to_vec();
                vec![(x, self.reshape(s, &shape)?)]
            }
            Op::SumRows(x) => {
                let rows = self.value(x).rows();
                vec![(x, self.broadcast_rows(g, rows)?)]
            }
            Op::BroadcastRows(x) => vec![(x, self.sum_rows(g)?)],
            Op::SumCols(x) => {
                let cols = self.value(x).cols();
                vec![(x, self.broadcast_cols(g, cols)?)]
            }
            Op::BroadcastCols(x) => vec![(x, self.sum_cols(g)?)],
            Op::Reshape(x) => {
                let shape = self.shape(x).to_vec();
                vec![(x, self.reshape(g, &shape)?)]
            }
            Op::SelectCols(x, ref idx) => {
                let cols = self.value(x).cols();
                let idx = idx.clone();
                vec![(x, self.scatter_cols(g, &idx, cols)?)]
            }
            Op::ScatterCols(x, ref idx) => {
                let idx = idx.clone();
                vec![(x, self.select_cols(g, &idx)?)]
            }
        })
    }
}
