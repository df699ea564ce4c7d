//! Soft actor-critic conditioned on the task representation.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use wisdom_tensor::{soft_update, Activation, Adam, AdamConfig, Mlp, Params, Tape, Tensor, Var};

use crate::error::{param_err, Result};

pub const POLICY_LOG_STD_MIN: f64 = -5.0;
pub const POLICY_LOG_STD_MAX: f64 = 2.0;

/// `log(1 - tanh(u)^2)` without cancellation.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Density of `a = tanh(u)`, `u ~ N(mean, exp(log_std)^2)`, one dimension.
pub fn squashed_log_prob(a: f64, mean: f64, log_std: f64) -> f64 {
    let u = a.atanh();
    let eps = (u - mean) / log_std.exp();
    -0.5 * eps * eps - log_std - 0.5 * (2.0 * PI).ln() - log_tanh_jacobian(u)
}

/// Training batch. Every per-row tensor is `[N, k]`; `done` and `r` are
/// `[N, 1]`.
#[derive(Clone, Debug)]
pub struct SacBatch {
    pub s: Tensor,
    pub a: Tensor,
    pub r: Tensor,
    pub s_next: Tensor,
    pub done: Tensor,
    pub zhat: Tensor,
    pub zhat_next: Tensor,
}

impl SacBatch {
    pub fn len(&self) -> usize {
        self.s.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        let all = [
            &self.s,
            &self.a,
            &self.r,
            &self.s_next,
            &self.done,
            &self.zhat,
            &self.zhat_next,
        ];
        if all.iter().any(|t| t.shape().len() != 2 || t.shape()[0] != n) {
            return param_err("batch tensors must all be [N, k] with the same N");
        }
        if self.s.shape() != self.s_next.shape()
            || self.zhat.shape() != self.zhat_next.shape()
            || self.r.shape()[1] != 1
            || self.done.shape()[1] != 1
        {
            return param_err("inconsistent batch shapes");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

fn row_input(tape: &mut Tape, parts: &[&Tensor]) -> Result<Var> {
    let vars: Vec<Var> = parts.iter().map(|t| tape.constant(t)).collect();
    Ok(tape.concat(&vars, 1)?)
}

/// Tanh-squashed Gaussian policy over `(s, zhat)`.
#[derive(Clone, Debug)]
pub struct Policy {
    pub net: Mlp,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub ctx_dim: usize,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        ctx_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim + ctx_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim);
        Policy {
            net: Mlp::new(&sizes, Activation::Relu, rng),
            obs_dim,
            act_dim,
            ctx_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        let out = self.net.forward(tape, x)?;
        let k = self.act_dim;
        let mean = tape.slice(out, 1, 0, k)?;
        let raw = tape.slice(out, 1, k, 2 * k)?;
        let log_std = tape.clamp(raw, POLICY_LOG_STD_MIN, POLICY_LOG_STD_MAX)?;
        Ok((mean, log_std))
    }

    /// Reparameterised sample: actions `[N, A]` and log-probabilities `[N, 1]`.
    pub fn sample(&self, tape: &mut Tape, x: Var, noise: &Tensor) -> Result<(Var, Var)> {
        let (mean, log_std) = self.forward(tape, x)?;
        let u = tape.gaussian_rsample(mean, log_std, noise)?;
        let a = tape.tanh(u)?;
        // (u - mean) / std is the noise itself.
        let half_eps2: Vec<f64> = noise
            .data()
            .iter()
            .map(|e| -0.5 * e * e - 0.5 * (2.0 * PI).ln())
            .collect();
        let base = tape.input(noise.shape(), half_eps2)?;
        let gauss = tape.sub(base, log_std)?;
        // log(1 - tanh^2 u) = 2 (ln2 - u - softplus(-2u))
        let m2u = tape.scale(u, -2.0)?;
        let sp = tape.softplus(m2u)?;
        let t = tape.add(u, sp)?;
        let t = tape.neg(t)?;
        let t = tape.add_scalar(t, LN_2)?;
        let jac = tape.scale(t, 2.0)?;
        let per = tape.sub(gauss, jac)?;
        let logp = tape.sum_last(per)?;
        Ok((a, logp))
    }

    /// Single-row action without a tape. `noise` has `act_dim` entries and
    /// is ignored in deterministic mode. Returns `(action, log_prob)`.
    pub fn act(&self, s: &[f64], zhat: &[f64], mode: ActMode, noise: &[f64]) -> (Vec<f64>, f64) {
        let mut x = Vec::with_capacity(s.len() + zhat.len());
        x.extend_from_slice(s);
        x.extend_from_slice(zhat);
        let out = self.net.apply(&x);
        let k = self.act_dim;
        let mut action = Vec::with_capacity(k);
        let mut logp = 0.0;
        for i in 0..k {
            let mean = out[i];
            let ls = out[k + i].clamp(POLICY_LOG_STD_MIN, POLICY_LOG_STD_MAX);
            let eps = match mode {
                ActMode::Stochastic => noise[i],
                ActMode::Deterministic => 0.0,
            };
            let u = mean + ls.exp() * eps;
            action.push(u.tanh());
            logp += -0.5 * eps * eps - ls - 0.5 * (2.0 * PI).ln() - log_tanh_jacobian(u);
        }
        (action, logp)
    }

    pub fn detached_copy(&self) -> Self {
        Policy {
            net: self.net.detached_copy(),
            ..self.clone()
        }
    }
}

impl Params for Policy {
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

/// Q networks `(s, a, zhat) -> R`, twin online copies and their targets.
#[derive(Clone, Debug)]
pub struct TwinCritic {
    pub q1: Mlp,
    pub q2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
}

fn frozen(net: &Mlp) -> Mlp {
    let mut t = net.detached_copy();
    for p in t.params_mut() {
        p.set_requires_grad(false);
    }
    t
}

impl TwinCritic {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        ctx_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![obs_dim + act_dim + ctx_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, Activation::Relu, rng);
        let q2 = Mlp::new(&sizes, Activation::Relu, rng);
        TwinCritic {
            target1: frozen(&q1),
            target2: frozen(&q2),
            q1,
            q2,
        }
    }

    /// `target <- tau * online + (1 - tau) * target` for both pairs.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        for (t, q) in [(&mut self.target1, &self.q1), (&mut self.target2, &self.q2)] {
            soft_update(&mut t.params_mut(), &q.params(), tau)?;
        }
        Ok(())
    }

    pub fn target_params(&self) -> Vec<&Tensor> {
        let mut out = self.target1.params();
        out.extend(self.target2.params());
        out
    }

    pub fn target_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.target1.params_mut();
        out.extend(self.target2.params_mut());
        out
    }

    /// Online then target parameters.
    pub fn all_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.q1.params_mut();
        out.extend(self.q2.params_mut());
        out.extend(self.target1.params_mut());
        out.extend(self.target2.params_mut());
        out
    }

    /// Swaps the two online networks and the two targets.
    pub fn swapped(&self) -> Self {
        TwinCritic {
            q1: self.q2.clone(),
            q2: self.q1.clone(),
            target1: self.target2.clone(),
            target2: self.target1.clone(),
        }
    }
}

impl Params for TwinCritic {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = self.q1.params();
        out.extend(self.q2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.q1.params_mut();
        out.extend(self.q2.params_mut());
        out
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = self.q1.named_params(&format!("{prefix}.q1"));
        out.extend(self.q2.named_params(&format!("{prefix}.q2")));
        out
    }
}

#[derive(Clone, Debug)]
pub struct Temperature {
    /// `[1]`.
    pub log_alpha: Tensor,
    pub target_entropy: f64,
}

impl Temperature {
    pub fn new(act_dim: usize, entropy_factor: f64, initial_alpha: f64) -> Self {
        Temperature {
            log_alpha: Tensor::full(&[1], initial_alpha.ln()).requires_grad(),
            target_entropy: -(act_dim as f64) * entropy_factor,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.data()[0].exp()
    }
}

/// Bootstrapped regression target
/// `r + gamma * (1 - done) * (min_l Q_target_l(s', a') - alpha * log pi(a'|s'))`
/// with `a' ~ pi(.|s', zhat')` drawn from `noise_next` (`[N, A]`).
pub fn critic_target(
    policy: &Policy,
    critics: &TwinCritic,
    batch: &SacBatch,
    alpha: f64,
    gamma: f64,
    noise_next: &Tensor,
) -> Result<Tensor> {
    batch.validate()?;
    let mut tape = Tape::new();
    let x = row_input(&mut tape, &[&batch.s_next, &batch.zhat_next])?;
    let (a2, logp) = policy.sample(&mut tape, x, noise_next)?;
    let s2 = tape.constant(&batch.s_next);
    let z2 = tape.constant(&batch.zhat_next);
    let qin = tape.concat(&[s2, a2, z2], 1)?;
    let t1 = critics.target1.forward_frozen(&mut tape, qin)?;
    let t2 = critics.target2.forward_frozen(&mut tape, qin)?;
    let q = tape.minimum(t1, t2)?;
    let (q, logp) = (tape.value(q), tape.value(logp));
    let data = (0..batch.len())
        .map(|i| {
            let r = batch.r.data()[i];
            let alive = 1.0 - batch.done.data()[i];
            if alive == 0.0 || gamma == 0.0 {
                r
            } else {
                r + gamma * alive * (q[i] - alpha * logp[i])
            }
        })
        .collect();
    Ok(Tensor::new(&[batch.len(), 1], data)?)
}

/// `sum_l 0.5 * mean (Q_l(s, a, zhat) - target)^2`.
pub fn critic_loss(tape: &mut Tape, critics: &TwinCritic, batch: &SacBatch, target: &Tensor) -> Result<Var> {
    batch.validate()?;
    let x = row_input(tape, &[&batch.s, &batch.a, &batch.zhat])?;
    let y = tape.constant(target);
    let mut total = None;
    for q in [&critics.q1, &critics.q2] {
        let out = q.forward(tape, x)?;
        let d = tape.sub(out, y)?;
        let sq = tape.square(d)?;
        let m = tape.mean(sq)?;
        let l = tape.scale(m, 0.5)?;
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    Ok(total.expect("two critics"))
}

/// `mean(alpha * log pi(a|s) - min_l Q_l(s, a))` with critics frozen.
/// Returns the loss and the detached log-probabilities `[N, 1]`.
pub fn actor_loss(
    tape: &mut Tape,
    policy: &Policy,
    critics: &TwinCritic,
    batch: &SacBatch,
    alpha: f64,
    noise: &Tensor,
) -> Result<(Var, Tensor)> {
    batch.validate()?;
    let x = row_input(tape, &[&batch.s, &batch.zhat])?;
    let (a, logp) = policy.sample(tape, x, noise)?;
    let s = tape.constant(&batch.s);
    let z = tape.constant(&batch.zhat);
    let qin = tape.concat(&[s, a, z], 1)?;
    let q1 = critics.q1.forward_frozen(tape, qin)?;
    let q2 = critics.q2.forward_frozen(tape, qin)?;
    let q = tape.minimum(q1, q2)?;
    let ent = tape.scale(logp, alpha)?;
    let d = tape.sub(ent, q)?;
    let loss = tape.mean(d)?;
    Ok((loss, tape.to_tensor(logp)))
}

/// `mean(-exp(log_alpha) * (log_probs + target_entropy))`.
pub fn temperature_loss(tape: &mut Tape, log_alpha: Var, log_probs: &Tensor, target_entropy: f64) -> Result<Var> {
    if log_probs.numel() == 0 {
        return param_err("no log-probabilities");
    }
    let gap = log_probs.data().iter().map(|l| l + target_entropy).sum::<f64>() / log_probs.numel() as f64;
    let alpha = tape.exp(log_alpha)?;
    let s = tape.sum(alpha)?;
    Ok(tape.scale(s, -gap)?)
}

#[derive(Clone, Copy, Debug)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub entropy_factor: f64,
    pub initial_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: 0.99,
            tau: 5e-3,
            lr: 3e-4,
            entropy_factor: 1.0,
            initial_alpha: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

/// Policy, critics, temperature and their optimisers.
#[derive(Clone, Debug)]
pub struct SacAgent {
    pub policy: Policy,
    pub critics: TwinCritic,
    pub temperature: Temperature,
    pub config: SacConfig,
    pub policy_opt: Adam,
    pub critic_opt: Adam,
    pub alpha_opt: Adam,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        ctx_dim: usize,
        hidden: &[usize],
        config: SacConfig,
        rng: &mut R,
    ) -> Self {
        let adam = || {
            Adam::new(AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            })
        };
        SacAgent {
            policy: Policy::new(obs_dim, act_dim, ctx_dim, hidden, rng),
            critics: TwinCritic::new(obs_dim, act_dim, ctx_dim, hidden, rng),
            temperature: Temperature::new(act_dim, config.entropy_factor, config.initial_alpha),
            config,
            policy_opt: adam(),
            critic_opt: adam(),
            alpha_opt: adam(),
        }
    }

    /// One critic, actor and temperature step followed by the target update.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &SacBatch, rng: &mut R) -> Result<SacStats> {
        let n = batch.len();
        let k = self.policy.act_dim;
        let normal = |rng: &mut R| {
            let data = (0..n * k).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::new(&[n, k], data)
        };
        let alpha = self.temperature.alpha();

        let target = critic_target(
            &self.policy,
            &self.critics,
            batch,
            alpha,
            self.config.gamma,
            &normal(rng)?,
        )?;
        let mut tape = Tape::new();
        let closs = critic_loss(&mut tape, &self.critics, batch, &target)?;
        let grads = tape.backward(closs)?;
        self.critics.zero_grad();
        grads.accumulate(self.critics.params_mut());
        self.critic_opt.step(&mut self.critics.params_mut())?;
        let critic_value = tape.item(closs);

        let mut tape = Tape::new();
        let (aloss, logp) = actor_loss(&mut tape, &self.policy, &self.critics, batch, alpha, &normal(rng)?)?;
        let grads = tape.backward(aloss)?;
        self.policy.zero_grad();
        grads.accumulate(self.policy.params_mut());
        self.policy_opt.step(&mut self.policy.params_mut())?;
        let actor_value = tape.item(aloss);

        let mut tape = Tape::new();
        let la = tape.param(&self.temperature.log_alpha);
        let tloss = temperature_loss(&mut tape, la, &logp, self.temperature.target_entropy)?;
        let grads = tape.backward(tloss)?;
        self.temperature.log_alpha.zero_grad();
        grads.accumulate([&mut self.temperature.log_alpha]);
        self.alpha_opt.step(&mut [&mut self.temperature.log_alpha])?;

        self.critics.soft_update(self.config.tau)?;
        Ok(SacStats {
            critic_loss: critic_value,
            actor_loss: actor_value,
            alpha: self.temperature.alpha(),
        })
    }
}
