use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{join, BlockRef, Parameterized};
use super::{glorot_uniform, matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply(self, x: &mut [f64]) {
        match self {
            Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => x.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Linear => {}
        }
    }

    /// Multiplies `grad` (w.r.t. the activation output `y`) by `dy/dx`.
    pub fn backprop(self, y: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => grad.iter_mut().zip(y).for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => grad
                .iter_mut()
                .zip(y)
                .for_each(|(g, &y)| *g *= y * (1.0 - y)),
            Activation::Tanh => grad.iter_mut().zip(y).for_each(|(g, &y)| *g *= 1.0 - y * y),
            Activation::Linear => {}
        }
    }
}

/// Fully connected layer `y = W x + b`, `W` row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn init<R: Rng>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: glorot_uniform(rng, in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let out_dim = weight.len();
        let in_dim = weight.first().map_or(0, Vec::len);
        if weight.iter().any(|r| r.len() != in_dim) || bias.len() != out_dim {
            return Err(Error::shape("ragged weight rows or bias length mismatch"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight: weight.concat(),
            bias,
        })
    }

    /// Pre-activation `W x + b`. Panics on shape mismatch.
    pub fn linear(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "dense input length");
        let mut out = self.bias.clone();
        matvec_acc(&self.weight, x, &mut out);
        out
    }

    /// `activation(W x + b)` with shape checking.
    pub fn apply(&self, x: &[f64], activation: Activation) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::shape(format!(
                "dense layer expects input of length {}, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut y = self.linear(x);
        activation.apply(&mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients for pre-activation gradient `d_pre`
    /// and, when given, adds `Wᵀ d_pre` into `d_x`.
    pub fn backward(&self, x: &[f64], d_pre: &[f64], grads: &mut Dense, d_x: Option<&mut [f64]>) {
        outer_acc(&mut grads.weight, d_pre, x);
        for (b, g) in grads.bias.iter_mut().zip(d_pre) {
            *b += g;
        }
        if let Some(d_x) = d_x {
            matvec_t_acc(&self.weight, d_pre, d_x);
        }
    }
}

impl Parameterized for Dense {
    fn collect_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<BlockRef<'a>>) {
        out.push(BlockRef {
            name: join(prefix, "weight"),
            shape: vec![self.out_dim, self.in_dim],
            values: &self.weight,
        });
        out.push(BlockRef {
            name: join(prefix, "bias"),
            shape: vec![self.out_dim],
            values: &self.bias,
        });
    }

    fn collect_blocks_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }
}

/// Stack of dense layers: hidden layers share one activation, the last
/// layer has its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Forward intermediates of an [`Mlp`]: post-activation output of every
/// layer, plus the inverted-dropout mask applied after each hidden layer.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace {
    pub outputs: Vec<Vec<f64>>,
    pub dropout_masks: Vec<Option<Vec<f64>>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("non-empty mlp")
    }
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn init<R: Rng>(
        rng: &mut R,
        dims: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        assert!(
            dims.len() >= 2,
            "an mlp needs at least input and output dims"
        );
        Self {
            layers: dims
                .windows(2)
                .map(|w| Dense::init(rng, w[0], w[1]))
                .collect(),
            hidden_activation: hidden,
            output_activation: output,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
            ..*self
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn forward(&self, x: &[f64]) -> MlpTrace {
        self.forward_from_preact(
            self.layers[0].linear(x),
            None::<&mut rand::rngs::ThreadRng>,
            0.0,
        )
    }

    /// Training-mode forward with inverted dropout on hidden outputs.
    pub fn forward_dropout<R: Rng>(&self, x: &[f64], rng: &mut R, rate: f64) -> MlpTrace {
        self.forward_from_preact(self.layers[0].linear(x), Some(rng), rate)
    }

    /// Forward pass starting from an already computed first-layer
    /// pre-activation. Lets callers share `W x` across several inputs that
    /// differ in a few columns.
    pub fn forward_from_preact<R: Rng>(
        &self,
        pre0: Vec<f64>,
        mut rng: Option<&mut R>,
        rate: f64,
    ) -> MlpTrace {
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut dropout_masks = Vec::with_capacity(self.layers.len());
        let mut h = pre0;
        for i in 0..self.layers.len() {
            if i > 0 {
                h = self.layers[i].linear(outputs.last().unwrap());
            }
            self.activation_of(i).apply(&mut h);
            let mask = match rng.as_deref_mut() {
                Some(rng) if rate > 0.0 && i + 1 < self.layers.len() => {
                    let keep = 1.0 - rate;
                    let m: Vec<f64> = (0..h.len())
                        .map(|_| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    h.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    Some(m)
                }
                _ => None,
            };
            dropout_masks.push(mask);
            outputs.push(h.clone());
        }
        MlpTrace {
            outputs,
            dropout_masks,
        }
    }

    /// Backward pass down to the first layer's pre-activation. Accumulates
    /// gradients of every layer except the first.
    pub fn backward_to_preact(&self, trace: &MlpTrace, d_out: &[f64], grads: &mut Mlp) -> Vec<f64> {
        let n = self.layers.len();
        let mut g = d_out.to_vec();
        for i in (0..n).rev() {
            if let Some(mask) = &trace.dropout_masks[i] {
                g.iter_mut().zip(mask).for_each(|(v, k)| *v *= k);
            }
            // Dropout zeroes are also zero in the stored output; for ReLU
            // this keeps the derivative at zero either way.
            let y = &trace.outputs[i];
            let y_pre_mask: Vec<f64>;
            let y_act = match &trace.dropout_masks[i] {
                Some(mask) if self.activation_of(i) != Activation::Relu => {
                    y_pre_mask = y
                        .iter()
                        .zip(mask)
                        .map(|(v, k)| if *k == 0.0 { 0.0 } else { v / k })
                        .collect();
                    &y_pre_mask
                }
                _ => y,
            };
            self.activation_of(i).backprop(y_act, &mut g);
            if i == 0 {
                return g;
            }
            let x = &trace.outputs[i - 1];
            let mut d_x = vec![0.0; x.len()];
            self.layers[i].backward(x, &g, &mut grads.layers[i], Some(&mut d_x));
            g = d_x;
        }
        unreachable!("mlp has at least one layer")
    }

    /// Full backward pass; returns the gradient with respect to `x`.
    pub fn backward(
        &self,
        x: &[f64],
        trace: &MlpTrace,
        d_out: &[f64],
        grads: &mut Mlp,
    ) -> Vec<f64> {
        let d_pre0 = self.backward_to_preact(trace, d_out, grads);
        let mut d_x = vec![0.0; x.len()];
        self.layers[0].backward(x, &d_pre0, &mut grads.layers[0], Some(&mut d_x));
        d_x
    }
}

impl Parameterized for Mlp {
    fn collect_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<BlockRef<'a>>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_blocks(&join(prefix, &format!("layer{i}")), out);
        }
    }

    fn collect_blocks_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.layers {
            l.collect_blocks_mut(out);
        }
    }
}
