//! Minimal dense-tensor compute layer with analytic backward passes.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod tensor;

use rand::Rng;

pub use checkpoint::{Checkpoint, ParamEntry, Precision};
pub use gradcheck::{grad_check, grad_check_fn, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::Adam;
pub use tensor::Tensor4;

use crate::error::{Error, Result};

/// Parameters of a same-size 3×3 convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// `out × in × 3 × 3`.
    pub weight: Tensor4,
    /// `1 × out × 1 × 1`.
    pub bias: Option<Tensor4>,
}

/// Graph handles of a bound [`ConvParams`].
#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl ConvParams {
    pub fn zeros(in_channels: usize, out_channels: usize, with_bias: bool) -> Self {
        Self {
            weight: Tensor4::zeros([out_channels, in_channels, 3, 3]),
            bias: with_bias.then(|| Tensor4::zeros([1, out_channels, 1, 1])),
        }
    }

    /// Uniform weights in `±sqrt(6 / fan_in)`, zero bias.
    pub fn init(in_channels: usize, out_channels: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (in_channels * 9) as f64).sqrt();
        let mut p = Self::zeros(in_channels, out_channels, with_bias);
        for v in p.weight.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        p
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor4::len)
    }

    pub fn validate(&self) -> Result<()> {
        let [o, _, kh, kw] = self.weight.shape();
        if kh != 3 || kw != 3 {
            return Err(Error::Shape("convolution kernels are 3x3".into()));
        }
        if let Some(b) = &self.bias {
            if b.shape() != [1, o, 1, 1] {
                return Err(Error::Shape("bias shape".into()));
            }
        }
        Ok(())
    }

    /// Adds the tensors to `g` as leaves, recording them in `vars`.
    pub fn bind(&self, g: &mut Graph, vars: &mut Vec<Var>) -> ConvVars {
        let weight = g.leaf(self.weight.clone());
        vars.push(weight);
        let bias = self.bias.as_ref().map(|b| {
            let v = g.leaf(b.clone());
            vars.push(v);
            v
        });
        ConvVars { weight, bias }
    }

    /// Visits `(suffix, tensor)` pairs in binding order.
    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor4)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(format!("{prefix}.bias"), b);
        }
    }

    pub fn for_each(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor4)) {
        f(format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(format!("{prefix}.bias"), b);
        }
    }
}

impl ConvVars {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.conv2d(x, self.weight, self.bias)
    }
}
