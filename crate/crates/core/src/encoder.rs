//! Per-transition context encoder with a Gaussian posterior, and the
//! transition decoder that grounds its latent space.

use rand::Rng;
use wisdom_tensor::{Activation, Mlp, Params, Tape, Tensor, Var};

use crate::envs::Transition;
use crate::error::{param_err, Result};
use crate::norm::RunningNorm;

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Encoder features of one transition: `(s, a, s' - s, r)`.
pub fn encoder_input(tr: &Transition) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * tr.s.len() + tr.a.len() + 1);
    x.extend_from_slice(&tr.s);
    x.extend_from_slice(&tr.a);
    x.extend(tr.s_next.iter().zip(&tr.s).map(|(n, s)| n - s));
    x.push(tr.r);
    x
}

#[derive(Clone, Debug)]
pub struct LatentSequence {
    pub mean: Tensor,
    pub log_std: Tensor,
    pub sample: Tensor,
}

impl LatentSequence {
    pub fn latent_dim(&self) -> usize {
        self.mean.shape()[1]
    }
}

#[derive(Clone, Debug)]
pub struct ContextEncoder {
    pub net: Mlp,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub latent_dim: usize,
}

impl ContextEncoder {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![2 * obs_dim + act_dim + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * latent_dim);
        ContextEncoder {
            net: Mlp::new(&sizes, Activation::Relu, rng),
            obs_dim,
            act_dim,
            latent_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        2 * self.obs_dim + self.act_dim + 1
    }

    /// `x: [N, input_dim]` to `(mean, log_std)`, each `[N, D]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let out = self.net.forward(tape, x)?;
        let d = self.latent_dim;
        let mean = tape.slice(out, 1, 0, d)?;
        let raw = tape.slice(out, 1, d, 2 * d)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok((mean, log_std))
    }

    /// Normalised feature matrix `[L, input_dim]` for a window.
    pub fn features(&self, window: &[Transition], norm: &RunningNorm) -> Result<Tensor> {
        let mut data = Vec::with_capacity(window.len() * self.input_dim());
        for tr in window {
            let x = encoder_input(tr);
            if x.len() != self.input_dim() {
                return param_err(format!(
                    "transition has {} encoder features, encoder expects {}",
                    x.len(),
                    self.input_dim()
                ));
            }
            data.extend(norm.apply(&x));
        }
        Ok(Tensor::new(&[window.len(), self.input_dim()], data)?)
    }

    /// Posterior over one `z` per transition, sampled with `noise` (`[L, D]`).
    pub fn encode(
        &self,
        window: &[Transition],
        norm: &RunningNorm,
        noise: &Tensor,
    ) -> Result<LatentSequence> {
        if window.is_empty() {
            return param_err("empty window");
        }
        let x = self.features(window, norm)?;
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let (m, s) = self.forward(&mut tape, xv)?;
        let z = tape.gaussian_rsample(m, s, noise)?;
        Ok(LatentSequence {
            mean: tape.to_tensor(m),
            log_std: tape.to_tensor(s),
            sample: tape.to_tensor(z),
        })
    }

    /// Posterior mean for one normalised feature row, without a tape.
    pub fn mean_row(&self, features: &[f64]) -> Vec<f64> {
        let mut out = self.net.apply(features);
        out.truncate(self.latent_dim);
        out
    }

    pub fn detached_copy(&self) -> Self {
        ContextEncoder {
            net: self.net.detached_copy(),
            ..self.clone()
        }
    }
}

impl Params for ContextEncoder {
    fn params(&self) -> Vec<&Tensor> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.net.named_params(prefix)
    }
}

/// Mean over rows of `KL(N(mean, exp(log_std)^2) || N(0, I))`, summed over
/// latent dimensions. With `row_mask` (`[N, 1]`, 0/1) only masked-in rows
/// count.
pub fn kl_loss(tape: &mut Tape, mean: Var, log_std: Var, row_mask: Option<Var>) -> Result<Var> {
    let m2 = tape.square(mean)?;
    let two_s = tape.scale(log_std, 2.0)?;
    let var = tape.exp(two_s)?;
    let a = tape.add(m2, var)?;
    let b = tape.sub(a, two_s)?;
    let c = tape.add_scalar(b, -1.0)?;
    let per_row = tape.sum_last(c)?;
    let per_row = tape.scale(per_row, 0.5)?;
    masked_mean(tape, per_row, row_mask)
}

/// Mean of an `[N, 1]` column, optionally over masked-in rows only.
pub fn masked_mean(tape: &mut Tape, col: Var, row_mask: Option<Var>) -> Result<Var> {
    match row_mask {
        None => Ok(tape.mean(col)?),
        Some(mask) => {
            let count: f64 = tape.value(mask).iter().sum();
            let kept = tape.mul(col, mask)?;
            let total = tape.sum(kept)?;
            Ok(tape.scale(total, 1.0 / count.max(1.0))?)
        }
    }
}

/// KL of a finished [`LatentSequence`].
pub fn kl_value(latent: &LatentSequence) -> Result<f64> {
    let mut tape = Tape::new();
    let m = tape.constant(&latent.mean);
    let s = tape.constant(&latent.log_std);
    let kl = kl_loss(&mut tape, m, s, None)?;
    Ok(tape.item(kl))
}

/// Predicts the normalised `(s' - s, r)` of a transition from its `(s, a)`
/// and a context.
#[derive(Clone, Debug)]
pub struct TransitionDecoder {
    pub net: Mlp,
}

impl TransitionDecoder {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim + act_dim + latent_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(obs_dim + 1);
        TransitionDecoder {
            net: Mlp::new(&sizes, Activation::Relu, rng),
        }
    }

    /// `sa: [N, obs + act]`, `ctx: [N, D]` to `[N, obs + 1]`.
    pub fn forward(&self, tape: &mut Tape, sa: Var, ctx: Var) -> Result<Var> {
        let x = tape.concat(&[sa, ctx], 1)?;
        Ok(self.net.forward(tape, x)?)
    }
}

impl Params for TransitionDecoder {
    fn params(&self) -> Vec<&Tensor> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.net.named_params(prefix)
    }
}
