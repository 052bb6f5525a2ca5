//! Tape-free reverse-mode automatic differentiation.
//!
//! Every [`Var`] keeps references to the values it was computed from. Backward
//! rules are themselves written with `Var` operations, so asking [`grad`] for
//! `create_graph = true` yields gradients that can be differentiated again.
//! The WGAN-GP critic loss relies on this.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::tensor::{self, ConvGeom, Tensor};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

/// Runs `f` without recording operations.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

#[derive(Clone)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Tanh,
    Scale(f64),
    /// Multiplication by a constant (non-differentiated) tensor.
    MulConst(Tensor),
    SumTo(Vec<usize>),
    BroadcastTo(Vec<usize>),
    Reshape(Vec<usize>),
    MatMul { ta: bool, tb: bool },
    Conv2d(ConvGeom),
    ConvInputGrad(ConvGeom),
    ConvWeightGrad(ConvGeom),
    Gather(Arc<Vec<usize>>),
    Scatter(Arc<Vec<usize>>),
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    op: Option<Op>,
    parents: Vec<Var>,
}

/// A differentiable value.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({:?}, grad={})", self.0.value, self.0.requires_grad)
    }
}

impl Var {
    /// A value gradients are never taken through.
    pub fn constant(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            op: None,
            parents: Vec::new(),
        }))
    }

    /// A leaf whose gradient can be requested from [`grad`].
    pub fn leaf(value: Tensor) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            op: None,
            parents: Vec::new(),
        }))
    }

    fn from_op(value: Tensor, op: Op, parents: Vec<Var>) -> Var {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Var::constant(value);
        }
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            op: Some(op),
            parents,
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.value().clone())
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn add(&self, o: &Var) -> Var {
        let v = self.value().zip_with(o.value(), |a, b| a + b);
        Var::from_op(v, Op::Add, vec![self.clone(), o.clone()])
    }

    pub fn sub(&self, o: &Var) -> Var {
        let v = self.value().zip_with(o.value(), |a, b| a - b);
        Var::from_op(v, Op::Sub, vec![self.clone(), o.clone()])
    }

    pub fn mul(&self, o: &Var) -> Var {
        let v = self.value().zip_with(o.value(), |a, b| a * b);
        Var::from_op(v, Op::Mul, vec![self.clone(), o.clone()])
    }

    pub fn div(&self, o: &Var) -> Var {
        let v = self.value().zip_with(o.value(), |a, b| a / b);
        Var::from_op(v, Op::Div, vec![self.clone(), o.clone()])
    }

    pub fn neg(&self) -> Var {
        Var::from_op(self.value().map(|v| -v), Op::Neg, vec![self.clone()])
    }

    pub fn exp(&self) -> Var {
        Var::from_op(self.value().map(f64::exp), Op::Exp, vec![self.clone()])
    }

    pub fn log(&self) -> Var {
        Var::from_op(self.value().map(f64::ln), Op::Log, vec![self.clone()])
    }

    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().map(f64::sqrt), Op::Sqrt, vec![self.clone()])
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().map(f64::tanh), Op::Tanh, vec![self.clone()])
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value().map(|v| v * c), Op::Scale(c), vec![self.clone()])
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.add(&Var::constant(Tensor::scalar(c)))
    }

    /// Multiplies by a tensor that is treated as a constant.
    pub fn mul_const(&self, c: &Tensor) -> Var {
        let v = self.value().zip_with(c, |a, b| a * b);
        Var::from_op(v, Op::MulConst(c.clone()), vec![self.clone()])
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let mask = self.value().map(|v| if v > 0.0 { 1.0 } else { slope });
        self.mul_const(&mask)
    }

    pub fn sum_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self.value().sum_to(shape);
        Var::from_op(v, Op::SumTo(self.shape().to_vec()), vec![self.clone()])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self.value().broadcast_to(shape);
        Var::from_op(v, Op::BroadcastTo(self.shape().to_vec()), vec![self.clone()])
    }

    pub fn sum(&self) -> Var {
        self.sum_to(&[]).reshape(&[])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean over the axes that `shape` collapses to 1.
    pub fn mean_to(&self, shape: &[usize]) -> Var {
        let n = self.value().numel() / shape.iter().product::<usize>();
        self.sum_to(shape).scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self.value().reshape(shape);
        Var::from_op(v, Op::Reshape(self.shape().to_vec()), vec![self.clone()])
    }

    pub fn matmul(&self, o: &Var, ta: bool, tb: bool) -> Var {
        let v = self.value().matmul(o.value(), ta, tb);
        Var::from_op(v, Op::MatMul { ta, tb }, vec![self.clone(), o.clone()])
    }

    pub fn conv2d(&self, w: &Var, geom: ConvGeom) -> Var {
        let v = tensor::conv2d(self.value(), w.value(), geom);
        Var::from_op(v, Op::Conv2d(geom), vec![self.clone(), w.clone()])
    }

    /// Transposed convolution of `self [N,O,h,w]` with `w [O,C,k,k]`,
    /// producing `[N,C,H,W]` with `H, W = out_hw`.
    pub fn conv_transpose2d(&self, w: &Var, geom: ConvGeom, out_hw: (usize, usize)) -> Var {
        let v = tensor::conv2d_input_grad(self.value(), w.value(), geom, out_hw);
        Var::from_op(v, Op::ConvInputGrad(geom), vec![self.clone(), w.clone()])
    }

    fn conv_weight_grad(&self, g: &Var, geom: ConvGeom, k: (usize, usize)) -> Var {
        let v = tensor::conv2d_weight_grad(self.value(), g.value(), geom, k);
        Var::from_op(v, Op::ConvWeightGrad(geom), vec![self.clone(), g.clone()])
    }

    pub fn gather(&self, idx: Arc<Vec<usize>>, shape: &[usize]) -> Var {
        let v = self.value().gather(&idx, shape);
        Var::from_op(v, Op::Gather(idx), vec![self.clone()])
    }

    fn scatter(&self, idx: Arc<Vec<usize>>, shape: &[usize]) -> Var {
        let v = self.value().scatter_add(&idx, shape);
        Var::from_op(v, Op::Scatter(idx), vec![self.clone()])
    }

    /// Non-overlapping `size × size` max pooling.
    pub fn max_pool2d(&self, size: usize) -> Var {
        let (idx, shape) = tensor::max_pool2d_indices(self.value(), size);
        self.gather(Arc::new(idx), &shape)
    }

    /// Row-wise log-softmax of a `[N, K]` tensor.
    pub fn log_softmax(&self) -> Var {
        let [n, k] = match self.shape() {
            &[n, k] => [n, k],
            s => panic!("log_softmax expects [N, K], got {s:?}"),
        };
        let maxes: Vec<f64> = self
            .value()
            .data()
            .chunks(k)
            .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let shift = Var::constant(Tensor::from_vec(&[n, 1], maxes));
        let z = self.sub(&shift);
        let lse = z.exp().sum_to(&[n, 1]).log();
        z.sub(&lse)
    }
}

impl Op {
    /// Gradients for each parent given the gradient of the output. Entries
    /// are `None` where `needs` is false.
    fn backward(&self, g: &Var, parents: &[Var], out: &Var, needs: &[bool]) -> Vec<Option<Var>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        let reduce = |v: Var, p: &Var| v.sum_to(p.shape());
        match self {
            Op::Add => vec![
                want(0).then(|| reduce(g.clone(), &parents[0])),
                want(1).then(|| reduce(g.clone(), &parents[1])),
            ],
            Op::Sub => vec![
                want(0).then(|| reduce(g.clone(), &parents[0])),
                want(1).then(|| reduce(g.neg(), &parents[1])),
            ],
            Op::Mul => vec![
                want(0).then(|| reduce(g.mul(&parents[1]), &parents[0])),
                want(1).then(|| reduce(g.mul(&parents[0]), &parents[1])),
            ],
            Op::Div => {
                let (a, b) = (&parents[0], &parents[1]);
                vec![
                    want(0).then(|| reduce(g.div(b), a)),
                    want(1).then(|| reduce(g.mul(a).div(&b.square()).neg(), b)),
                ]
            }
            Op::Neg => vec![Some(g.neg())],
            Op::Exp => vec![Some(g.mul(out))],
            Op::Log => vec![Some(g.div(&parents[0]))],
            Op::Sqrt => vec![Some(g.div(out).scale(0.5))],
            Op::Tanh => {
                let one_minus = out.square().neg().add_scalar(1.0);
                vec![Some(g.mul(&one_minus))]
            }
            Op::Scale(c) => vec![Some(g.scale(*c))],
            Op::MulConst(c) => vec![Some(g.mul_const(c).sum_to(parents[0].shape()))],
            Op::SumTo(orig) => vec![Some(g.broadcast_to(orig))],
            Op::BroadcastTo(orig) => vec![Some(g.sum_to(orig))],
            Op::Reshape(orig) => vec![Some(g.reshape(orig))],
            Op::MatMul { ta, tb } => {
                let (a, b) = (&parents[0], &parents[1]);
                let (ta, tb) = (*ta, *tb);
                vec![
                    want(0).then(|| {
                        if ta {
                            b.matmul(g, tb, true)
                        } else {
                            g.matmul(b, false, !tb)
                        }
                    }),
                    want(1).then(|| {
                        if tb {
                            g.matmul(a, true, ta)
                        } else {
                            a.matmul(g, !ta, false)
                        }
                    }),
                ]
            }
            Op::Conv2d(geom) => {
                let (x, w) = (&parents[0], &parents[1]);
                let s = x.shape();
                let k = w.shape();
                vec![
                    want(0).then(|| g.conv_transpose2d(w, *geom, (s[2], s[3]))),
                    want(1).then(|| x.conv_weight_grad(g, *geom, (k[2], k[3]))),
                ]
            }
            Op::ConvInputGrad(geom) => {
                // out = convT(a, w); adjoint in a is conv2d, in w the weight gradient
                let (a, w) = (&parents[0], &parents[1]);
                let k = w.shape();
                vec![
                    want(0).then(|| g.conv2d(w, *geom)),
                    want(1).then(|| g.conv_weight_grad(a, *geom, (k[2], k[3]))),
                ]
            }
            Op::ConvWeightGrad(geom) => {
                // out = W(x, gy); adjoint in x is convT(gy, ·), in gy is conv2d(x, ·)
                let (x, gy) = (&parents[0], &parents[1]);
                let s = x.shape();
                vec![
                    want(0).then(|| gy.conv_transpose2d(g, *geom, (s[2], s[3]))),
                    want(1).then(|| x.conv2d(g, *geom)),
                ]
            }
            Op::Gather(idx) => vec![Some(g.scatter(Arc::clone(idx), parents[0].shape()))],
            Op::Scatter(idx) => vec![Some(g.gather(Arc::clone(idx), parents[0].shape()))],
        }
    }
}

/// Gradients of the scalar `output` with respect to each of `inputs`.
///
/// Inputs that `output` does not depend on receive zeros. With
/// `create_graph` the returned values are themselves differentiable.
pub fn grad(output: &Var, inputs: &[&Var], create_graph: bool) -> Vec<Var> {
    assert_eq!(
        output.value().numel(),
        1,
        "grad() needs a scalar output, got {:?}",
        output.shape()
    );
    let run = || backward_pass(output, inputs);
    if create_graph {
        run()
    } else {
        no_grad(run)
    }
}

fn backward_pass(output: &Var, inputs: &[&Var]) -> Vec<Var> {
    let zeros = |v: &Var| Var::constant(Tensor::zeros(v.shape()));
    if !output.requires_grad() {
        return inputs.iter().map(|v| zeros(v)).collect();
    }
    // Collect the reachable differentiable subgraph. Ids grow with creation
    // order, so descending ids is a valid reverse topological order.
    let mut nodes: HashMap<u64, Var> = HashMap::new();
    let mut stack = vec![output.clone()];
    while let Some(v) = stack.pop() {
        if nodes.contains_key(&v.0.id) {
            continue;
        }
        for p in &v.0.parents {
            if p.requires_grad() && !nodes.contains_key(&p.0.id) {
                stack.push(p.clone());
            }
        }
        nodes.insert(v.0.id, v);
    }
    let mut order: Vec<u64> = nodes.keys().copied().collect();
    order.sort_unstable_by(|a, b| b.cmp(a));

    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(
        output.0.id,
        Var::constant(Tensor::ones(output.shape())),
    );
    let wanted: Vec<u64> = inputs.iter().map(|v| v.0.id).collect();
    let mut found: HashMap<u64, Var> = HashMap::new();
    for id in order {
        let node = &nodes[&id];
        let Some(g) = grads.remove(&id) else { continue };
        if wanted.contains(&id) {
            found.insert(id, g.clone());
        }
        let Some(op) = &node.0.op else { continue };
        let needs: Vec<bool> = node.0.parents.iter().map(|p| p.requires_grad()).collect();
        let parent_grads = op.backward(&g, &node.0.parents, node, &needs);
        for (p, pg) in node.0.parents.iter().zip(parent_grads) {
            let Some(pg) = pg else { continue };
            if !p.requires_grad() {
                continue;
            }
            let acc = match grads.remove(&p.0.id) {
                Some(prev) => prev.add(&pg),
                None => pg,
            };
            grads.insert(p.0.id, acc);
        }
    }
    inputs
        .iter()
        .map(|v| found.get(&v.0.id).cloned().unwrap_or_else(|| zeros(v)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec())
    }

    fn fd_check(f: impl Fn(&Var) -> Var, x0: Tensor) {
        let x = Var::leaf(x0.clone());
        let g = grad(&f(&x), &[&x], false).remove(0);
        let h = 1e-6;
        for i in 0..x0.numel() {
            let mut up = x0.to_vec();
            up[i] += h;
            let mut dn = x0.to_vec();
            dn[i] -= h;
            let fu = f(&Var::constant(t(x0.shape(), &up))).item();
            let fd = f(&Var::constant(t(x0.shape(), &dn))).item();
            let num = (fu - fd) / (2.0 * h);
            let ana = g.value().data()[i];
            assert!(
                (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                "coordinate {i}: numeric {num} analytic {ana}"
            );
        }
    }

    #[test]
    fn elementwise_gradients() {
        let x0 = t(&[2, 3], &[0.3, -0.7, 1.2, 0.5, 2.0, -1.5]);
        fd_check(|x| x.exp().mul(&x.tanh()).sum(), x0.clone());
        fd_check(|x| x.square().add_scalar(1.0).sqrt().log().sum(), x0.clone());
        fd_check(|x| x.div(&x.square().add_scalar(2.0)).sum(), x0.clone());
        fd_check(|x| x.log_softmax().sum_to(&[2, 1]).square().sum(), x0);
    }

    #[test]
    fn broadcast_and_matmul_gradients() {
        let x0 = t(&[2, 3], &[0.3, -0.7, 1.2, 0.5, 2.0, -1.5]);
        let w = Var::constant(t(&[4, 3], &[0.1, 0.2, -0.3, 0.4, 0.5, 0.6, -0.7, 0.8, 0.9, 1.0, -1.1, 1.2]));
        let b = Var::constant(t(&[1, 4], &[0.1, -0.2, 0.3, -0.4]));
        fd_check(
            move |x| x.matmul(&w, false, true).add(&b).tanh().sum(),
            x0.clone(),
        );
        fd_check(|x| x.mul(&x.mean_to(&[1, 3])).sum(), x0);
    }

    #[test]
    fn conv_and_pool_gradients() {
        let n = 2 * 2 * 6 * 6;
        let x0 = Tensor::from_vec(&[2, 2, 6, 6], (0..n).map(|i| ((i * 7 % 13) as f64) * 0.1 - 0.6).collect());
        let w = Var::constant(Tensor::from_vec(&[3, 2, 3, 3], (0..54).map(|i| ((i * 5 % 11) as f64) * 0.05 - 0.25).collect()));
        let w2 = w.clone();
        fd_check(move |x| x.conv2d(&w, ConvGeom::new(1, 1)).tanh().max_pool2d(2).sum(), x0.clone());
        let wt = Var::constant(Tensor::from_vec(&[3, 2, 4, 4], (0..96).map(|i| ((i * 3 % 7) as f64) * 0.05 - 0.15).collect()));
        fd_check(
            move |x| {
                x.conv2d(&w2, ConvGeom::new(1, 1))
                    .conv_transpose2d(&wt, ConvGeom::new(2, 1), (12, 12))
                    .square()
                    .sum()
            },
            x0,
        );
    }

    #[test]
    fn second_order_through_conv() {
        // d/dw of ||d/dx sum(tanh(conv(x, w)))||² checked by finite differences in w
        let x = Tensor::from_vec(&[1, 2, 5, 5], (0..50).map(|i| ((i * 7 % 13) as f64) * 0.1 - 0.6).collect());
        let w0 = Tensor::from_vec(&[2, 2, 3, 3], (0..36).map(|i| ((i * 5 % 11) as f64) * 0.05 - 0.25).collect());
        let penalty = |w: &Var| {
            let xv = Var::leaf(x.clone());
            let y = xv.conv2d(w, ConvGeom::new(2, 1)).tanh().sum();
            let gx = grad(&y, &[&xv], true).remove(0);
            gx.square().sum()
        };
        let w = Var::leaf(w0.clone());
        let ana = grad(&penalty(&w), &[&w], false).remove(0);
        let h = 1e-6;
        for i in 0..w0.numel() {
            let mut up = w0.to_vec();
            up[i] += h;
            let mut dn = w0.to_vec();
            dn[i] -= h;
            let num = (penalty(&Var::leaf(t(w0.shape(), &up))).item()
                - penalty(&Var::leaf(t(w0.shape(), &dn))).item())
                / (2.0 * h);
            let a = ana.value().data()[i];
            assert!((num - a).abs() <= 1e-6 * (1.0 + num.abs()), "w[{i}]: {num} vs {a}");
        }
    }

    #[test]
    fn no_grad_records_nothing() {
        let x = Var::leaf(Tensor::scalar(2.0));
        let y = no_grad(|| x.square());
        assert!(!y.requires_grad());
        assert!(x.square().requires_grad());
    }

    #[test]
    fn unreachable_inputs_get_zero_gradients() {
        let x = Var::leaf(Tensor::scalar(2.0));
        let y = Var::leaf(Tensor::from_vec(&[2], vec![1.0, 1.0]));
        let g = grad(&x.square(), &[&x, &y], false);
        assert_eq!(g[0].item(), 4.0);
        assert_eq!(g[1].value().data(), &[0.0, 0.0]);
    }
}
