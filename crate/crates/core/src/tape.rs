//! Reverse-mode differentiation over a recorded computation tape.
//!
//! Forward ops append nodes eagerly; `backward` walks the tape in reverse
//! and accumulates gradients into per-parameter tensors. Tapes are
//! thread-confined; parameter values are copied into leaf nodes at bind
//! time so the tape owns everything it needs.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{shape_mismatch, Gradients, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(usize),
    MatVec(VarId, VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, VarId),
    ScaleConst(f64, VarId),
    OneMinus(VarId),
    Concat(VarId, VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    SumVec(VarId),
    Dot(VarId, VarId),
    Ln(VarId),
    MeanStack(Vec<VarId>),
    SumStack(Vec<VarId>),
    Softmax(VarId),
    LogSoftmax(VarId),
    Pick(VarId, usize),
    Stack(Vec<VarId>),
    SelectRow(VarId, usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<usize, VarId>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    pub fn value(&self, v: VarId) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(Op::Const, t)
    }

    pub fn zeros(&mut self, n: usize) -> VarId {
        self.push(Op::Const, Tensor::zeros(vec![n]))
    }

    /// Bind a store parameter as a leaf; repeated binds return the same var.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> VarId {
        let idx = store
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        if let Some(&v) = self.param_vars.get(&idx) {
            return v;
        }
        let v = self.push(Op::Param(idx), store.by_index(idx).clone());
        self.param_vars.insert(idx, v);
        v
    }

    pub fn matvec(&mut self, w: VarId, x: VarId) -> Result<VarId> {
        let (wv, xv) = (self.value(w), self.value(x));
        if wv.shape().len() != 2 || xv.shape().len() != 1 || wv.cols() != xv.len() {
            return Err(shape_mismatch("matvec", wv.shape(), xv.shape()));
        }
        let (r, c) = (wv.rows(), wv.cols());
        let mut out = vec![0.0; r];
        let wvals = wv.values();
        let xvals = xv.values();
        for i in 0..r {
            let row = &wvals[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * xvals[j];
            }
            out[i] = acc;
        }
        Ok(self.push(Op::MatVec(w, x), Tensor::vector(out)))
    }

    fn binary_elementwise(
        &mut self,
        name: &str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(VarId, VarId) -> Op,
    ) -> Result<VarId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_mismatch(name, av.shape(), bv.shape()));
        }
        let vals = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = av.shape().to_vec();
        Ok(self.push(op(a, b), Tensor::new(shape, vals)))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Multiply a vector by a `[1]` scalar variable.
    pub fn scale(&mut self, s: VarId, v: VarId) -> Result<VarId> {
        if self.value(s).len() != 1 {
            return Err(shape_mismatch("scale", &[1], self.value(s).shape()));
        }
        let sv = self.value(s).item();
        let vals = self.value(v).values().iter().map(|x| sv * x).collect();
        let shape = self.value(v).shape().to_vec();
        Ok(self.push(Op::Scale(s, v), Tensor::new(shape, vals)))
    }

    pub fn scale_const(&mut self, c: f64, x: VarId) -> VarId {
        let vals = self.value(x).values().iter().map(|v| c * v).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Op::ScaleConst(c, x), Tensor::new(shape, vals))
    }

    pub fn one_minus(&mut self, x: VarId) -> VarId {
        let vals = self.value(x).values().iter().map(|v| 1.0 - v).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(Op::OneMinus(x), Tensor::new(shape, vals))
    }

    pub fn concat(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 1 || bv.shape().len() != 1 {
            return Err(shape_mismatch("concat", av.shape(), bv.shape()));
        }
        let mut vals = av.values().to_vec();
        vals.extend_from_slice(bv.values());
        Ok(self.push(Op::Concat(a, b), Tensor::vector(vals)))
    }

    fn unary(&mut self, x: VarId, f: impl Fn(f64) -> f64, op: Op) -> VarId {
        let vals = self.value(x).values().iter().map(|v| f(*v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(op, Tensor::new(shape, vals))
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: VarId) -> VarId {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: VarId) -> VarId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn ln(&mut self, x: VarId) -> VarId {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    pub fn sum(&mut self, x: VarId) -> VarId {
        let s = self.value(x).values().iter().sum();
        self.push(Op::SumVec(x), Tensor::scalar(s))
    }

    pub fn dot(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.shape().len() != 1 {
            return Err(shape_mismatch("dot", av.shape(), bv.shape()));
        }
        let s = av.values().iter().zip(bv.values()).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot(a, b), Tensor::scalar(s)))
    }

    fn stack_like(&mut self, name: &str, xs: &[VarId]) -> Result<Vec<usize>> {
        assert!(!xs.is_empty(), "{name} needs at least one input");
        let shape = self.value(xs[0]).shape().to_vec();
        for &x in xs {
            if self.value(x).shape() != shape.as_slice() {
                return Err(shape_mismatch(name, &shape, self.value(x).shape()));
            }
        }
        Ok(shape)
    }

    /// Elementwise mean over same-shaped vectors.
    pub fn mean_stack(&mut self, xs: &[VarId]) -> Result<VarId> {
        let shape = self.stack_like("mean_stack", xs)?;
        let n = shape.iter().product();
        let mut vals = vec![0.0; n];
        for &x in xs {
            for (o, v) in vals.iter_mut().zip(self.value(x).values()) {
                *o += v;
            }
        }
        let k = xs.len() as f64;
        for o in &mut vals {
            *o /= k;
        }
        Ok(self.push(Op::MeanStack(xs.to_vec()), Tensor::new(shape, vals)))
    }

    /// Elementwise sum over same-shaped vectors.
    pub fn sum_stack(&mut self, xs: &[VarId]) -> Result<VarId> {
        let shape = self.stack_like("sum_stack", xs)?;
        let n = shape.iter().product();
        let mut vals = vec![0.0; n];
        for &x in xs {
            for (o, v) in vals.iter_mut().zip(self.value(x).values()) {
                *o += v;
            }
        }
        Ok(self.push(Op::SumStack(xs.to_vec()), Tensor::new(shape, vals)))
    }

    pub fn softmax(&mut self, x: VarId) -> VarId {
        let vals = softmax_values(self.value(x).values());
        self.push(Op::Softmax(x), Tensor::vector(vals))
    }

    pub fn log_softmax(&mut self, x: VarId) -> VarId {
        let xv = self.value(x).values();
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + xv.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let vals = xv.iter().map(|v| v - lse).collect();
        self.push(Op::LogSoftmax(x), Tensor::vector(vals))
    }

    /// Select one element of a vector as a `[1]` scalar.
    pub fn pick(&mut self, x: VarId, i: usize) -> VarId {
        let v = self.value(x).values()[i];
        self.push(Op::Pick(x, i), Tensor::scalar(v))
    }

    /// Build a vector from `[1]` scalars.
    pub fn stack(&mut self, xs: &[VarId]) -> Result<VarId> {
        let mut vals = Vec::with_capacity(xs.len());
        for &x in xs {
            if self.value(x).len() != 1 {
                return Err(shape_mismatch("stack", &[1], self.value(x).shape()));
            }
            vals.push(self.value(x).item());
        }
        Ok(self.push(Op::Stack(xs.to_vec()), Tensor::vector(vals)))
    }

    /// Select one matrix row as a vector.
    pub fn select_row(&mut self, m: VarId, row: usize) -> VarId {
        let mv = self.value(m);
        assert_eq!(mv.shape().len(), 2, "select_row requires a matrix");
        let c = mv.cols();
        let vals = mv.values()[row * c..(row + 1) * c].to_vec();
        self.push(Op::SelectRow(m, row), Tensor::vector(vals))
    }

    /// Reverse-mode gradients of a scalar loss with respect to every bound
    /// parameter. Parameters never touched by the recording get zeros.
    pub fn backward(&self, loss: VarId, store: &ParamStore) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_mismatch("backward", &[1], self.value(loss).shape()));
        }
        if !self.value(loss).item().is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = store.zero_gradients();

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const => {}
                Op::Param(pidx) => {
                    let acc = &mut out.tensors[*pidx];
                    for (o, v) in acc.values_mut().iter_mut().zip(g.values()) {
                        *o += v;
                    }
                }
                Op::MatVec(w, x) => {
                    let wv = self.value(*w);
                    let xv = self.value(*x).values().to_vec();
                    let (r, c) = (wv.rows(), wv.cols());
                    {
                        let gw = grad_slot(&mut grads, *w, &[r, c]);
                        for i in 0..r {
                            let gi = g.values()[i];
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &mut gw.values_mut()[i * c..(i + 1) * c];
                            for j in 0..c {
                                row[j] += gi * xv[j];
                            }
                        }
                    }
                    let wvals = wv.values().to_vec();
                    let gx = grad_slot(&mut grads, *x, &[c]);
                    for i in 0..r {
                        let gi = g.values()[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let row = &wvals[i * c..(i + 1) * c];
                        for j in 0..c {
                            gx.values_mut()[j] += gi * row[j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.values(), self.shape_of(*a));
                    add_grad(&mut grads, *b, g.values(), self.shape_of(*b));
                }
                Op::Sub(a, b) => {
                    add_grad(&mut grads, *a, g.values(), self.shape_of(*a));
                    let neg: Vec<f64> = g.values().iter().map(|v| -v).collect();
                    add_grad(&mut grads, *b, &neg, self.shape_of(*b));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a).values().to_vec();
                    let bv = self.value(*b).values().to_vec();
                    let ga: Vec<f64> = g.values().iter().zip(&bv).map(|(g, b)| g * b).collect();
                    let gb: Vec<f64> = g.values().iter().zip(&av).map(|(g, a)| g * a).collect();
                    add_grad(&mut grads, *a, &ga, self.shape_of(*a));
                    add_grad(&mut grads, *b, &gb, self.shape_of(*b));
                }
                Op::Scale(s, v) => {
                    let sv = self.value(*s).item();
                    let vv = self.value(*v).values().to_vec();
                    let gs: f64 = g.values().iter().zip(&vv).map(|(g, v)| g * v).sum();
                    add_grad(&mut grads, *s, &[gs], &[1]);
                    let gv: Vec<f64> = g.values().iter().map(|g| g * sv).collect();
                    add_grad(&mut grads, *v, &gv, self.shape_of(*v));
                }
                Op::ScaleConst(c, x) => {
                    let gx: Vec<f64> = g.values().iter().map(|g| g * c).collect();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::OneMinus(x) => {
                    let gx: Vec<f64> = g.values().iter().map(|g| -g).collect();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::Concat(a, b) => {
                    let na = self.value(*a).len();
                    add_grad(&mut grads, *a, &g.values()[..na], self.shape_of(*a));
                    add_grad(&mut grads, *b, &g.values()[na..], self.shape_of(*b));
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).values().to_vec();
                    let gx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(&xv)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::Sigmoid(x) => {
                    let yv = node.value.values();
                    let gx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(yv)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::Tanh(x) => {
                    let yv = node.value.values();
                    let gx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(yv)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::SumVec(x) => {
                    let n = self.value(*x).len();
                    let gx = vec![g.item(); n];
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::Dot(a, b) => {
                    let gs = g.item();
                    let av = self.value(*a).values().to_vec();
                    let bv = self.value(*b).values().to_vec();
                    let ga: Vec<f64> = bv.iter().map(|b| gs * b).collect();
                    let gb: Vec<f64> = av.iter().map(|a| gs * a).collect();
                    add_grad(&mut grads, *a, &ga, self.shape_of(*a));
                    add_grad(&mut grads, *b, &gb, self.shape_of(*b));
                }
                Op::Ln(x) => {
                    let xv = self.value(*x).values().to_vec();
                    let gx: Vec<f64> = g.values().iter().zip(&xv).map(|(g, x)| g / x).collect();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::MeanStack(xs) => {
                    let k = xs.len() as f64;
                    let gx: Vec<f64> = g.values().iter().map(|g| g / k).collect();
                    for &x in xs {
                        add_grad(&mut grads, x, &gx, self.shape_of(x));
                    }
                }
                Op::SumStack(xs) => {
                    for &x in xs {
                        add_grad(&mut grads, x, g.values(), self.shape_of(x));
                    }
                }
                Op::Softmax(x) => {
                    let yv = node.value.values();
                    let dot: f64 = g.values().iter().zip(yv).map(|(g, y)| g * y).sum();
                    let gx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(yv)
                        .map(|(g, y)| y * (g - dot))
                        .collect();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::LogSoftmax(x) => {
                    let yv = node.value.values();
                    let gsum: f64 = g.values().iter().sum();
                    let gx: Vec<f64> = g
                        .values()
                        .iter()
                        .zip(yv)
                        .map(|(g, y)| g - y.exp() * gsum)
                        .collect();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::Pick(x, i) => {
                    let n = self.value(*x).len();
                    let mut gx = vec![0.0; n];
                    gx[*i] = g.item();
                    add_grad(&mut grads, *x, &gx, self.shape_of(*x));
                }
                Op::Stack(xs) => {
                    for (i, &x) in xs.iter().enumerate() {
                        add_grad(&mut grads, x, &[g.values()[i]], &[1]);
                    }
                }
                Op::SelectRow(m, row) => {
                    let mv = self.value(*m);
                    let (r, c) = (mv.rows(), mv.cols());
                    let gm = grad_slot(&mut grads, *m, &[r, c]);
                    for (j, gv) in g.values().iter().enumerate() {
                        gm.values_mut()[row * c + j] += gv;
                    }
                }
            }
        }
        if let Some(i) = out.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {}",
                store.name(i)
            )));
        }
        Ok(out)
    }

    fn shape_of(&self, v: VarId) -> &[usize] {
        self.value(v).shape()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Tensor>], v: VarId, shape: &[usize]) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
}

fn add_grad(grads: &mut [Option<Tensor>], v: VarId, g: &[f64], shape: &[usize]) {
    let slot = grad_slot(grads, v, shape);
    for (o, x) in slot.values_mut().iter_mut().zip(g) {
        *o += x;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_values(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// GRU cell weights bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_r: VarId,
    pub u_r: VarId,
    pub b_r: VarId,
    pub w_z: VarId,
    pub u_z: VarId,
    pub b_z: VarId,
    pub w_n: VarId,
    pub u_n: VarId,
    pub b_n: VarId,
}

/// Standard GRU cell: maps (input, hidden) to a new hidden of the hidden's
/// shape with update/reset/candidate gating.
pub fn gru_cell(tape: &mut Tape, w: &GruVars, input: VarId, hidden: VarId) -> Result<VarId> {
    let rx = tape.matvec(w.w_r, input)?;
    let rh = tape.matvec(w.u_r, hidden)?;
    let r = {
        let s = tape.add(rx, rh)?;
        let s = tape.add(s, w.b_r)?;
        tape.sigmoid(s)
    };
    let zx = tape.matvec(w.w_z, input)?;
    let zh = tape.matvec(w.u_z, hidden)?;
    let z = {
        let s = tape.add(zx, zh)?;
        let s = tape.add(s, w.b_z)?;
        tape.sigmoid(s)
    };
    let nx = tape.matvec(w.w_n, input)?;
    let gated = tape.mul(r, hidden)?;
    let nh = tape.matvec(w.u_n, gated)?;
    let n = {
        let s = tape.add(nx, nh)?;
        let s = tape.add(s, w.b_n)?;
        tape.tanh(s)
    };
    // h' = (1 - z) * n + z * h
    let keep = tape.mul(z, hidden)?;
    let inv = tape.one_minus(z);
    let take = tape.mul(inv, n)?;
    tape.add(take, keep)
}

/// Two-hidden-layer ReLU MLP bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: VarId,
    pub b1: VarId,
    pub w2: VarId,
    pub b2: VarId,
    pub w3: VarId,
    pub b3: VarId,
}

pub fn mlp2(tape: &mut Tape, m: &MlpVars, x: VarId) -> Result<VarId> {
    let h1 = tape.matvec(m.w1, x)?;
    let h1 = tape.add(h1, m.b1)?;
    let h1 = tape.relu(h1);
    let h2 = tape.matvec(m.w2, h1)?;
    let h2 = tape.add(h2, m.b2)?;
    let h2 = tape.relu(h2);
    let out = tape.matvec(m.w3, h2)?;
    tape.add(out, m.b3)
}

/// A finished recording: the tape plus its scalar loss.
pub struct Recorded {
    pub tape: Tape,
    pub loss: VarId,
}

impl Recorded {
    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).item()
    }

    pub fn gradients(&self, store: &ParamStore) -> Result<Gradients> {
        self.tape.backward(self.loss, store)
    }
}

/// Central finite differences against supplied analytic gradients. Samples
/// at most `max_coords` coordinates (all of them when the store is small).
/// Returns the max over sampled coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn fd_compare<F>(
    mut f: F,
    store: &mut ParamStore,
    analytic: &Gradients,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for p in 0..store.len() {
        for i in 0..store.by_index(p).len() {
            coords.push((p, i));
        }
    }
    if coords.len() > max_coords {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        coords.shuffle(&mut rng);
        coords.truncate(max_coords);
    }

    let mut max_err = 0.0f64;
    for (p, i) in coords {
        let orig = store.by_index(p).values()[i];
        store.by_index_mut(p).values_mut()[i] = orig + epsilon;
        let plus = f(store)?;
        store.by_index_mut(p).values_mut()[i] = orig - epsilon;
        let minus = f(store)?;
        store.by_index_mut(p).values_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite-difference evaluation".into()));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.tensors[p].values()[i];
        let err = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}

/// Record `build` once for analytic gradients, then finite-difference the
/// sampled coordinates. The standard gradient-correctness oracle.
pub fn grad_check<F>(
    mut build: F,
    store: &mut ParamStore,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<Recorded>,
{
    let analytic = {
        let rec = build(store)?;
        rec.gradients(store)?
    };
    fd_compare(
        |s| build(s).map(|r| r.loss_value()),
        store,
        &analytic,
        epsilon,
        max_coords,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn rand_tensor(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
        let y = tape.softmax(x);
        for v in tape.value(y).values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let total: f64 = tape.value(y).values().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gru_zero_weights_zero_input_gives_zero_hidden() {
        let mut store = ParamStore::new();
        let d = 3;
        for n in ["w_r", "w_z", "w_n"] {
            store.add(n, Tensor::zeros(vec![d, 2 * d]));
        }
        for n in ["u_r", "u_z", "u_n"] {
            store.add(n, Tensor::zeros(vec![d, d]));
        }
        for n in ["b_r", "b_z", "b_n"] {
            store.add(n, Tensor::zeros(vec![d]));
        }
        let mut tape = Tape::new();
        let w = GruVars {
            w_r: tape.param(&store, "w_r"),
            u_r: tape.param(&store, "u_r"),
            b_r: tape.param(&store, "b_r"),
            w_z: tape.param(&store, "w_z"),
            u_z: tape.param(&store, "u_z"),
            b_z: tape.param(&store, "b_z"),
            w_n: tape.param(&store, "w_n"),
            u_n: tape.param(&store, "u_n"),
            b_n: tape.param(&store, "b_n"),
        };
        let input = tape.zeros(2 * d);
        let hidden = tape.zeros(d);
        let out = gru_cell(&mut tape, &w, input, hidden).unwrap();
        assert_eq!(tape.value(out).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_stack_averages_vectors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 3.0]));
        let b = tape.constant(Tensor::vector(vec![3.0, 1.0]));
        let m = tape.mean_stack(&[a, b]).unwrap();
        assert_eq!(tape.value(m).values(), &[2.0, 2.0]);
    }

    #[test]
    fn sum_of_matrix_param_has_all_ones_gradient() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 4.0, 0.0, 3.0]));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w");
        let r0 = tape.select_row(w, 0);
        let r1 = tape.select_row(w, 1);
        let all = tape.concat(r0, r1).unwrap();
        let loss = tape.sum(all);
        let grads = tape.backward(loss, &store).unwrap();
        assert_eq!(grads.tensors[0].values(), &[1.0; 6]);
    }

    #[test]
    fn quadratic_norm_gradient_matches_closed_form_and_fd() {
        // loss = ||W x||^2 at x = e1: dL/dW[r][c] = 2 (W x)_r x_c.
        let mut store = ParamStore::new();
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        store.add("w", rand_tensor(&mut rng, vec![3, 2]));

        let build = |s: &ParamStore| -> Result<Recorded> {
            let mut tape = Tape::new();
            let w = tape.param(s, "w");
            let x = tape.constant(Tensor::vector(vec![1.0, 0.0]));
            let y = tape.matvec(w, x)?;
            let loss = tape.dot(y, y)?;
            Ok(Recorded { tape, loss })
        };

        let rec = build(&store).unwrap();
        let grads = rec.gradients(&store).unwrap();
        let w = store.get("w").values();
        for r in 0..3 {
            let expect0 = 2.0 * w[r * 2]; // column 0 entry
            assert!((grads.tensors[0].values()[r * 2] - expect0).abs() < 1e-12);
            assert_eq!(grads.tensors[0].values()[r * 2 + 1], 0.0);
        }

        let err = grad_check(build, &mut store, 1e-5, 200, 1).unwrap();
        assert!(err < 1e-7, "max relative error {err}");
    }

    #[test]
    fn grad_check_exact_for_quadratics() {
        let mut store = ParamStore::new();
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        store.add("a", rand_tensor(&mut rng, vec![5]));
        let err = grad_check(
            |s| {
                let mut tape = Tape::new();
                let a = tape.param(s, "a");
                let loss = tape.dot(a, a)?;
                Ok(Recorded { tape, loss })
            },
            &mut store,
            1e-5,
            200,
            1,
        )
        .unwrap();
        assert!(err < 1e-7, "max relative error {err}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut store = ParamStore::new();
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        store.add("a", rand_tensor(&mut rng, vec![4]));
        let build = |s: &ParamStore| -> Result<Recorded> {
            let mut tape = Tape::new();
            let a = tape.param(s, "a");
            let loss = tape.dot(a, a)?;
            Ok(Recorded { tape, loss })
        };
        let mut analytic = build(&store).unwrap().gradients(&store).unwrap();
        analytic.tensors[0].values_mut()[2] = 0.0;
        let err = fd_compare(
            |s| build(s).map(|r| r.loss_value()),
            &mut store,
            &analytic,
            1e-5,
            200,
            1,
        )
        .unwrap();
        assert!(err > 1e-2, "corruption must be detected, got {err}");
    }

    #[test]
    fn every_op_composite_passes_grad_check() {
        // One recording that routes through every differentiable op.
        let mut store = ParamStore::new();
        let mut rng = rand::rngs::StdRng::seed_from_u64(42);
        store.add("w", rand_tensor(&mut rng, vec![3, 4]));
        store.add("m", rand_tensor(&mut rng, vec![2, 3]));
        store.add("v", rand_tensor(&mut rng, vec![4]));
        store.add("u", rand_tensor(&mut rng, vec![4]));
        store.add("s", rand_tensor(&mut rng, vec![3]));

        let build = |s: &ParamStore| -> Result<Recorded> {
            let mut tape = Tape::new();
            let w = tape.param(s, "w");
            let m = tape.param(s, "m");
            let v = tape.param(s, "v");
            let u = tape.param(s, "u");
            let sv = tape.param(s, "s");

            let wv = tape.matvec(w, v)?; // [3]
            let row = tape.select_row(m, 1); // [3]
            let a = tape.add(wv, row)?;
            let b = tape.sub(a, sv)?;
            let c = tape.mul(b, sv)?;
            let t = tape.tanh(c);
            let sg = tape.sigmoid(t);
            let r = tape.relu(b);
            let mean = tape.mean_stack(&[t, sg, r])?;
            let sum = tape.sum_stack(&[mean, sg])?;
            let sm = tape.softmax(sum);
            let lsm = tape.log_softmax(sum);
            let p0 = tape.pick(sm, 0);
            let p1 = tape.pick(lsm, 2);
            let d = tape.dot(u, u)?;
            let e = tape.ln(d);
            let st = tape.stack(&[p0, p1, e])?;
            let om = tape.one_minus(p0);
            let sc = tape.scale(om, st)?;
            let k = tape.scale_const(0.5, sc);
            let uv = tape.concat(k, sv)?;
            let loss = tape.sum(uv);
            Ok(Recorded { tape, loss })
        };

        let err = grad_check(build, &mut store, 1e-6, 500, 5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        match tape.add(a, b) {
            Err(Error::ShapeMismatch { expected, got, .. }) => {
                assert_eq!(expected, vec![2]);
                assert_eq!(got, vec![3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }
}
