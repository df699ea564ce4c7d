//! Fully connected layers on top of the tape.

use rand::Rng;

use crate::error::Result;
use crate::tape::{matmul_raw, Tape, Var};
use crate::tensor::Tensor;

/// Anything that owns trainable tensors in a fixed order.
pub trait Params {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// `(name, tensor)` pairs in the same order as [`Params::params`].
    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)>;

    fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` init for weight and bias.
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[n_in, n_out], bound, rng).requires_grad(),
            bias: Tensor::uniform(&[n_out], bound, rng).requires_grad(),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Self {
        Linear {
            weight: weight.requires_grad(),
            bias: bias.requires_grad(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }

    /// Forward with the weights read as constants: no gradient reaches them.
    pub fn forward_frozen(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.constant(&self.weight);
        let b = tape.constant(&self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }

    /// Tape-free forward for a single row.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let w = self.weight.data();
        let mut y = matmul_raw(&x[..n_in], w, 1, n_in, n_out);
        y.iter_mut().zip(self.bias.data()).for_each(|(y, b)| *y += b);
        y
    }

    pub fn detached_copy(&self) -> Self {
        Linear {
            weight: self.weight.detached_copy(),
            bias: self.bias.detached_copy(),
        }
    }
}

impl Params for Linear {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.weight"), &self.weight),
            (format!("{prefix}.bias"), &self.bias),
        ]
    }
}

/// Stack of [`Linear`] layers with an activation between them and a linear
/// output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "mlp needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map(Linear::n_out).unwrap_or(0)
    }

    fn act(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        match self.activation {
            Activation::Relu => tape.relu(h),
            Activation::Tanh => tape.tanh(h),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.run(tape, x, false)
    }

    /// Like [`Mlp::forward`] but every weight enters the tape as a constant.
    pub fn forward_frozen(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.run(tape, x, true)
    }

    fn run(&self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = if frozen {
                layer.forward_frozen(tape, h)?
            } else {
                layer.forward(tape, h)?
            };
            if i < last {
                h = self.act(tape, h)?;
            }
        }
        Ok(h)
    }

    /// Tape-free forward for a single row; used on the acting path.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i < last {
                match self.activation {
                    Activation::Relu => h.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Tanh => h.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
        }
        h
    }

    pub fn detached_copy(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Linear::detached_copy).collect(),
            activation: self.activation,
        }
    }
}

impl Params for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.named_params(&format!("{prefix}.{i}")))
            .collect()
    }
}
