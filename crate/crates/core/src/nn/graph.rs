//! Recording tape over the primitive kernels.
//!
//! A [`Graph`] records every operation applied to its variables; calling
//! [`Graph::backward`] on a scalar node runs the matching backward kernels in
//! reverse order. Only the operations needed by the fusion cells and the
//! segmentation network are supported.

use std::rc::Rc;

use super::ops;
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::warp::ScatterPlan;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var> },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Var, Var),
    Hadamard(Var, Var),
    Add(Var, Var),
    Affine(Var, f64),
    AvgPool(Var),
    Upsample(Var),
    Scatter { x: Var, plan: Rc<ScatterPlan> },
    CrossEntropy { logits: Var, labels: Rc<Vec<u8>>, weights: Rc<Vec<f64>> },
    Dot { x: Var, probe: Rc<Vec<f64>> },
}

#[derive(Debug)]
struct Node {
    value: Tensor4,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor4>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor4> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor4> {
        self.grads[v.0].take()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor4, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor4) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor4 {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Conv { x, w, b }))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = ops::tanh(self.value(x));
        self.push(out, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// `s·x + offset`.
    pub fn affine(&mut self, x: Var, s: f64, offset: f64) -> Var {
        let out = ops::affine(self.value(x), s, offset);
        self.push(out, Op::Affine(x, s))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = ops::avg_pool2(self.value(x))?;
        Ok(self.push(out, Op::AvgPool(x)))
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let out = ops::upsample2(self.value(x));
        self.push(out, Op::Upsample(x))
    }

    /// Registers every batch item of `x` through `plan`; unhit pixels take `fill`.
    pub fn scatter(&mut self, x: Var, plan: Rc<ScatterPlan>, fill: f64) -> Result<Var> {
        let src = self.value(x);
        let [b, c, h, w] = src.shape();
        if plan.height() != h || plan.width() != w {
            return Err(Error::Shape(format!(
                "scatter plan {}x{} for map {w}x{h}",
                plan.width(),
                plan.height()
            )));
        }
        let mut out = Tensor4::zeros([b, c, h, w]);
        let n = src.item_len();
        for bi in 0..b {
            plan.apply(
                &src.data()[bi * n..(bi + 1) * n],
                c,
                fill,
                &mut out.data_mut()[bi * n..(bi + 1) * n],
            );
        }
        Ok(self.push(out, Op::Scatter { x, plan }))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: Rc<Vec<u8>>, weights: Rc<Vec<f64>>) -> Result<Var> {
        let loss = ops::weighted_cross_entropy(self.value(logits), &labels, &weights)?;
        let out = Tensor4::from_vec([1, 1, 1, 1], vec![loss])?;
        Ok(self.push(out, Op::CrossEntropy { logits, labels, weights }))
    }

    /// `Σ x ⊙ probe`, reducing a tensor to a scalar.
    pub fn dot(&mut self, x: Var, probe: Rc<Vec<f64>>) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != probe.len() {
            return Err(Error::Shape("probe length".into()));
        }
        let s = xv.data().iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
        let out = Tensor4::from_vec([1, 1, 1, 1], vec![s])?;
        Ok(self.push(out, Op::Dot { x, probe }))
    }

    /// Backpropagates from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape("backward root must be a scalar".into()));
        }
        let mut grads: Vec<Option<Tensor4>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor4::filled(self.value(root).shape(), 1.0));

        fn acc(grads: &mut [Option<Tensor4>], v: Var, g: Tensor4) {
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Conv { x, w, b } => {
                    let (gx, gw, gb) =
                        ops::conv2d_backward(self.value(*x), self.value(*w), b.is_some(), &g)?;
                    acc(&mut grads, *x, gx);
                    acc(&mut grads, *w, gw);
                    if let (Some(b), Some(gb)) = (b, gb) {
                        acc(&mut grads, *b, gb);
                    }
                }
                Op::Sigmoid(x) => acc(&mut grads, *x, ops::sigmoid_backward(&node.value, &g)),
                Op::Tanh(x) => acc(&mut grads, *x, ops::tanh_backward(&node.value, &g)),
                Op::Relu(x) => acc(&mut grads, *x, ops::relu_backward(self.value(*x), &g)),
                Op::Concat(a, b) => {
                    let (ga, gb) = ops::concat_backward(&g, self.value(*a).channels());
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Hadamard(a, b) => {
                    let (ga, gb) = ops::hadamard_backward(self.value(*a), self.value(*b), &g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Affine(x, s) => acc(&mut grads, *x, ops::scale_backward(&g, *s)),
                Op::AvgPool(x) => acc(&mut grads, *x, ops::avg_pool2_backward(&g)),
                Op::Upsample(x) => acc(&mut grads, *x, ops::upsample2_backward(&g)),
                Op::Scatter { x, plan } => {
                    let shape = self.value(*x).shape();
                    let mut gx = Tensor4::zeros(shape);
                    let n = gx.item_len();
                    for bi in 0..shape[0] {
                        plan.apply_transpose(
                            &g.data()[bi * n..(bi + 1) * n],
                            shape[1],
                            &mut gx.data_mut()[bi * n..(bi + 1) * n],
                        );
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::CrossEntropy { logits, labels, weights } => {
                    let gl = ops::weighted_cross_entropy_backward(
                        self.value(*logits),
                        labels,
                        weights,
                        g.data()[0],
                    )?;
                    acc(&mut grads, *logits, gl);
                }
                Op::Dot { x, probe } => {
                    let s = g.data()[0];
                    let gx = Tensor4::from_vec(
                        self.value(*x).shape(),
                        probe.iter().map(|p| p * s).collect(),
                    )?;
                    acc(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { grads })
    }
}
