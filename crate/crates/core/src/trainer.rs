//! The training loop: collection, representation phase, policy phase and
//! evaluation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wisdom_tensor::{Adam, AdamConfig, Params, Tape, Tensor};

use crate::buffer::EpisodeBuffer;
use crate::config::{Ablation, ExperimentConfig};
use crate::encoder::{encoder_input, kl_loss, ContextEncoder, TransitionDecoder};
use crate::envs::{make_env, nonstationarity_degree, Env, Transition};
use crate::error::{Error, Result};
use crate::metrics::{MetricsRecord, METRICS_SCHEMA_VERSION};
use crate::norm::RunningNorm;
use crate::repr::{ar_loss, half_mean_sq, wavelet_td_loss, Fir, WNetwork, WaveletReprNet};
use crate::rng::{mix, stream, Stream};
use crate::sac::{ActMode, SacAgent, SacBatch, SacConfig, SacStats};

/// Every learnable component plus the input normaliser.
#[derive(Clone, Debug)]
pub struct Agent {
    pub encoder: ContextEncoder,
    pub decoder: TransitionDecoder,
    pub repr: WaveletReprNet,
    pub w: WNetwork,
    pub w_target: WNetwork,
    pub repr_opt: Adam,
    pub sac: SacAgent,
    pub norm: RunningNorm,
    /// Standardises the policy context; refitted before each policy phase.
    pub ctx_norm: RunningNorm,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        cfg: &ExperimentConfig,
        obs_dim: usize,
        act_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let m = &cfg.model;
        let t = &cfg.train;
        let d = m.latent_dim;
        let encoder = ContextEncoder::new(obs_dim, act_dim, &m.encoder_hidden, d, rng);
        let decoder = TransitionDecoder::new(obs_dim, act_dim, d, &m.decoder_hidden, rng);
        let repr = WaveletReprNet::new(
            m.window,
            d,
            m.levels,
            m.keep_fraction,
            m.filter_taps,
            m.trainable_filters,
        )?;
        let w = WNetwork::new(m.window, d, m.levels, &repr.bank, rng)?;
        let w_target = w.target_copy();
        let sac = SacAgent::new(
            obs_dim,
            act_dim,
            d,
            &m.rl_hidden,
            SacConfig {
                gamma: t.gamma,
                tau: t.tau,
                lr: t.lr,
                entropy_factor: t.entropy_factor,
                initial_alpha: t.initial_alpha,
            },
            rng,
        );
        let norm = RunningNorm::new(encoder.input_dim(), t.normalize_inputs);
        let ctx_norm = RunningNorm::new(d, t.normalize_inputs);
        Ok(Agent {
            encoder,
            decoder,
            repr,
            w,
            w_target,
            repr_opt: Adam::new(AdamConfig {
                lr: t.lr,
                ..AdamConfig::default()
            }),
            sac,
            norm,
            ctx_norm,
        })
    }

    /// Representation-phase parameters in optimiser order.
    pub fn repr_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.repr_params_and_opt().0
    }

    fn repr_params_and_opt(&mut self) -> (Vec<&mut Tensor>, &mut Adam) {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out.extend(self.repr.params_mut());
        out.extend(self.w.params_mut());
        (out, &mut self.repr_opt)
    }

    /// Names of every stored tensor, matching [`Agent::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut add = |v: Vec<(String, &Tensor)>| out.extend(v.into_iter().map(|(n, _)| n));
        add(self.encoder.named_params("encoder"));
        add(self.decoder.named_params("decoder"));
        out.extend(["repr.y0", "repr.y1"].map(String::from));
        let mut add = |v: Vec<(String, &Tensor)>| out.extend(v.into_iter().map(|(n, _)| n));
        add(self.repr.recon.named_params("repr.recon"));
        add(self.w.named_params("w"));
        add(self.w_target.named_params("w_target"));
        add(self.sac.policy.named_params("policy"));
        add(self.sac.critics.named_params("critic"));
        add(self.sac.critics.target1.named_params("critic.target1"));
        add(self.sac.critics.target2.named_params("critic.target2"));
        out.push("log_alpha".into());
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.encoder.params();
        out.extend(self.decoder.params());
        out.extend([&self.repr.bank.y0, &self.repr.bank.y1]);
        out.extend(self.repr.recon.params());
        out.extend([&self.w.y0, &self.w.head.weight, &self.w.head.bias]);
        out.extend([
            &self.w_target.y0,
            &self.w_target.head.weight,
            &self.w_target.head.bias,
        ]);
        out.extend(self.sac.policy.params());
        out.extend(self.sac.critics.params());
        out.extend(self.sac.critics.target_params());
        out.push(&self.sac.temperature.log_alpha);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out.extend([&mut self.repr.bank.y0, &mut self.repr.bank.y1]);
        out.extend(self.repr.recon.params_mut());
        out.extend([
            &mut self.w.y0,
            &mut self.w.head.weight,
            &mut self.w.head.bias,
        ]);
        out.extend([
            &mut self.w_target.y0,
            &mut self.w_target.head.weight,
            &mut self.w_target.head.bias,
        ]);
        out.extend(self.sac.policy.params_mut());
        out.extend(self.sac.critics.all_params_mut());
        out.push(&mut self.sac.temperature.log_alpha);
        out
    }

    /// How the policy sees the task under `ablation`.
    pub fn context_mode(&self, ablation: Ablation) -> Result<ContextMode> {
        Ok(match ablation {
            Ablation::Full | Ablation::NoWaveletTd => ContextMode::Wavelet(self.repr.fir()?),
            Ablation::NoYNet => ContextMode::EncoderMean,
            Ablation::PlainSac => ContextMode::Zero,
        })
    }

    /// Per-step context before every transition of `episode` and after the
    /// last one (`len + 1` rows).
    pub fn episode_contexts(&self, mode: &ContextMode, episode: &[Transition]) -> Vec<Vec<f64>> {
        let mut rows = self.raw_episode_contexts(mode, episode);
        if !matches!(mode, ContextMode::Zero) {
            for r in &mut rows {
                *r = self.ctx_norm.apply(r);
            }
        }
        rows
    }

    fn raw_episode_contexts(&self, mode: &ContextMode, episode: &[Transition]) -> Vec<Vec<f64>> {
        let mut tracker = ContextTracker::new(self, mode);
        let mut out = Vec::with_capacity(episode.len() + 1);
        out.push(tracker.raw());
        for tr in episode {
            tracker.push(tr);
            out.push(tracker.raw());
        }
        out
    }

    /// Contexts of every stored episode, after refitting the context
    /// normaliser on them.
    pub fn refit_contexts(&mut self, mode: &ContextMode, buffer: &EpisodeBuffer) -> Vec<Vec<Vec<f64>>> {
        let mut all: Vec<Vec<Vec<f64>>> = buffer
            .episodes()
            .map(|e| self.raw_episode_contexts(mode, e))
            .collect();
        if matches!(mode, ContextMode::Zero) {
            return all;
        }
        let mut norm = RunningNorm::new(self.ctx_norm.dim(), self.ctx_norm.enabled);
        all.iter().flatten().for_each(|r| norm.update(r));
        for r in all.iter_mut().flatten() {
            *r = norm.apply(r);
        }
        self.ctx_norm = norm;
        all
    }
}

#[derive(Clone, Debug)]
pub enum ContextMode {
    Wavelet(Fir),
    EncoderMean,
    Zero,
}

/// Streams transitions into the representation the policy conditions on.
/// `current()` only reflects transitions already pushed.
pub struct ContextTracker<'a> {
    agent: &'a Agent,
    mode: &'a ContextMode,
    history: Vec<Vec<f64>>,
}

impl<'a> ContextTracker<'a> {
    pub fn new(agent: &'a Agent, mode: &'a ContextMode) -> Self {
        ContextTracker {
            agent,
            mode,
            history: Vec::new(),
        }
    }

    pub fn push(&mut self, tr: &Transition) {
        if matches!(self.mode, ContextMode::Zero) {
            return;
        }
        let x = self.agent.norm.apply(&encoder_input(tr));
        self.history.push(self.agent.encoder.mean_row(&x));
        let keep = self.agent.repr.window;
        if self.history.len() > 2 * keep {
            self.history.drain(..self.history.len() - keep);
        }
    }

    pub fn latest_latent(&self) -> Option<&[f64]> {
        self.history.last().map(Vec::as_slice)
    }

    pub fn current(&self) -> Vec<f64> {
        match self.mode {
            ContextMode::Zero => self.raw(),
            _ => self.agent.ctx_norm.apply(&self.raw()),
        }
    }

    /// Context before standardisation.
    pub fn raw(&self) -> Vec<f64> {
        let d = self.agent.encoder.latent_dim;
        match self.mode {
            ContextMode::Wavelet(fir) => fir.apply(&self.history),
            ContextMode::EncoderMean => self
                .history
                .last()
                .cloned()
                .unwrap_or_else(|| vec![0.0; d]),
            ContextMode::Zero => vec![0.0; d],
        }
    }
}

/// Averages of the representation losses over one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReprStats {
    pub kl: f64,
    pub wavelet_td: f64,
    pub ar: f64,
    pub decoder: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalStats {
    pub mean_return: f64,
    pub std_return: f64,
    pub degree: f64,
}

fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::new(shape, data)?)
}

/// Training state for one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: ExperimentConfig,
    pub agent: Agent,
    pub buffer: EpisodeBuffer,
    pub env_rng: ChaCha8Rng,
    pub sample_rng: ChaCha8Rng,
    pub noise_rng: ChaCha8Rng,
    pub epoch: usize,
    pub env_steps: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub metrics: Vec<MetricsRecord>,
}

impl Trainer {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let probe = make_env(&cfg.env, 0)?;
        let (obs_dim, act_dim) = (probe.obs_dim(), probe.action_dim());
        let mut init = stream(cfg.seed, Stream::Init);
        let agent = Agent::new(&cfg, obs_dim, act_dim, &mut init)?;
        Ok(Trainer {
            buffer: EpisodeBuffer::new(cfg.train.buffer_capacity),
            env_rng: stream(cfg.seed, Stream::Env),
            sample_rng: stream(cfg.seed, Stream::Sampling),
            noise_rng: stream(cfg.seed, Stream::Noise),
            cfg,
            agent,
            epoch: 0,
            env_steps: 0,
            obs_dim,
            act_dim,
            metrics: Vec::new(),
        })
    }

    /// Runs `n_steps` environment steps from a fresh episode and stores the
    /// transitions. `random` uses uniform actions instead of the policy.
    pub fn collect(&mut self, n_steps: usize, random: bool) -> Result<()> {
        if random {
            let k = self.act_dim;
            let mut uniform =
                |_: &[f64], rng: &mut ChaCha8Rng| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            self.collect_with(n_steps, Some(&mut uniform))
        } else {
            self.collect_with(n_steps, None)
        }
    }

    /// Like [`Trainer::collect`], acting with `behaviour(obs, noise_rng)`
    /// when given and with the stochastic policy otherwise.
    pub fn collect_with(
        &mut self,
        n_steps: usize,
        mut behaviour: Option<&mut dyn FnMut(&[f64], &mut ChaCha8Rng) -> Vec<f64>>,
    ) -> Result<()> {
        if n_steps == 0 {
            return Ok(());
        }
        let seed = self.env_rng.random::<u64>();
        let mut env = make_env(&self.cfg.env, seed)?;
        let mode = self.agent.context_mode(self.cfg.ablation)?;
        let agent = &self.agent;
        let rng = &mut self.noise_rng;
        let mut tracker = ContextTracker::new(agent, &mode);
        let mut s = env.reset();
        let mut episodes = Vec::new();
        let mut episode = Vec::new();
        for _ in 0..n_steps {
            let action: Vec<f64> = match behaviour.as_deref_mut() {
                Some(f) => f(&s, rng),
                None => {
                    let noise: Vec<f64> =
                        (0..self.act_dim).map(|_| rng.sample(StandardNormal)).collect();
                    agent
                        .sac
                        .policy
                        .act(&s, &tracker.current(), ActMode::Stochastic, &noise)
                        .0
                }
            };
        let tr = env.step(&action);
            tracker.push(&tr);
            s = tr.s_next.clone();
            let end = tr.ends_episode();
            episode.push(tr);
            if end {
                episodes.push(std::mem::take(&mut episode));
                tracker = ContextTracker::new(agent, &mode);
                s = env.reset();
            }
        }
        episodes.push(episode);
        // The normaliser is frozen while collecting so that features stay
        // consistent within an episode.
        for e in episodes {
            if self.agent.norm.enabled {
                for tr in &e {
                    self.agent.norm.update(&encoder_input(tr));
                }
            }
            self.env_steps += e.len();
            self.buffer.push_episode(e);
        }
        Ok(())
    }

    /// One gradient step of the encoder, decoder, `Y` and `W`.
    pub fn repr_step(&mut self) -> Result<Option<ReprStats>> {
        let cfg = &self.cfg;
        let seq = cfg.model.window + 1;
        let b = cfg.train.repr_batch;
        let starts = self.buffer.sample_windows(seq, b, &mut self.sample_rng);
        if starts.is_empty() {
            return Ok(None);
        }
        let agent = &self.agent;
        let (obs, act, d) = (self.obs_dim, self.act_dim, cfg.model.latent_dim);
        let in_dim = agent.encoder.input_dim();

        let mut feats = Vec::with_capacity(b * seq * in_dim);
        let mut dec_in = Vec::with_capacity(b * seq * (obs + act));
        let mut dec_target = Vec::with_capacity(b * seq * (obs + 1));
        for &(ep, start) in &starts {
            for tr in &self.buffer.episode(ep)[start..start + seq] {
                let x = agent.norm.apply(&encoder_input(tr));
                dec_in.extend_from_slice(&x[..obs + act]);
                dec_target.extend_from_slice(&x[obs + act..]);
                feats.extend(x);
            }
        }
        let rows = b * seq;
        let noise = standard_normal(&[rows, d], &mut self.noise_rng)?;

        let mut tape = Tape::new();
        let x = tape.input(&[rows, in_dim], feats)?;
        let (mean, log_std) = agent.encoder.forward(&mut tape, x)?;
        let z = tape.gaussian_rsample(mean, log_std, &noise)?;
        let kl = kl_loss(&mut tape, mean, log_std, None)?;

        let z3 = tape.reshape(z, &[b, seq, d])?;
        let z_in = tape.slice(z3, 1, 0, seq - 1)?;
        let use_y = cfg.ablation != Ablation::NoYNet;
        // The decoder reads the same context the policy will see.
        let ctx = if use_y {
            agent.repr.forward_tape(&mut tape, z_in)?
        } else {
            z_in
        };
        let sa_all = tape.input(&[b, seq, obs + act], dec_in)?;
        let target_all = tape.input(&[b, seq, obs + 1], dec_target)?;
        let mut dec = None;
        for &h in &cfg.train.decoder_horizons {
            // Context row p has seen transitions 0..=p and predicts p + h.
            let n = seq - h;
            let c = tape.slice(ctx, 1, 0, n)?;
            let c = tape.reshape(c, &[b * n, d])?;
            let sa = tape.slice(sa_all, 1, h, seq)?;
            let sa = tape.reshape(sa, &[b * n, obs + act])?;
            let target = tape.slice(target_all, 1, h, seq)?;
            let target = tape.reshape(target, &[b * n, obs + 1])?;
            let pred = agent.decoder.forward(&mut tape, sa, c)?;
            let mut diff = tape.sub(pred, target)?;
            if cfg.train.decoder_reward_weight != 1.0 {
                let w = cfg.train.decoder_reward_weight.sqrt();
                let mask: Vec<f64> = (0..b * n)
                    .flat_map(|_| (0..=obs).map(move |k| if k == obs { w } else { 1.0 }))
                    .collect();
                let mask = tape.input(&[b * n, obs + 1], mask)?;
                diff = tape.mul(diff, mask)?;
            }
            let term = half_mean_sq(&mut tape, diff)?;
            dec = Some(match dec {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        let dec = dec.expect("validated non-empty horizons");
        let dec = tape.scale(dec, 1.0 / cfg.train.decoder_horizons.len() as f64)?;

        let mut total = tape.scale(kl, cfg.train.kl_weight)?;
        let dec_w = tape.scale(dec, cfg.train.decoder_weight)?;
        total = tape.add(total, dec_w)?;

        let mut stats = ReprStats::default();
        if use_y {
            // AR and TD run on the posterior means, the same statistic the
            // policy reads; sampling noise there only pushes the std to zero.
            let m3 = tape.reshape(mean, &[b, seq, d])?;
            let m3 = if cfg.train.encoder_from_repr_losses {
                m3
            } else {
                tape.detach(m3)
            };
            let z_in = tape.slice(m3, 1, 0, seq - 1)?;
            let z_next = tape.slice(m3, 1, 1, seq)?;
            let zhat = agent.repr.forward_tape(&mut tape, z_in)?;
            let ar = ar_loss(&mut tape, zhat, z_next)?;
            // The TD target grows with the scale of z, so letting TD reach the
            // encoder feeds back into ever larger latents.
            let (w_in, w_next_in) = (tape.detach(z_in), tape.detach(z_next));
            let y0 = tape.param(&agent.repr.bank.y0);
            let w_zt = agent.w.forward_with(&mut tape, y0, w_in)?;
            let w_next = agent.w_target.forward(&mut tape, w_next_in)?;
            let td = wavelet_td_loss(&mut tape, w_zt, w_in, w_next, cfg.train.wavelet_gamma)?;
            let td_w = tape.scale(td, cfg.alpha_y())?;
            total = tape.add(total, td_w)?;
            total = tape.add(total, ar)?;
            stats.wavelet_td = tape.item(td);
            stats.ar = tape.item(ar);
        }
        stats.kl = tape.item(kl);
        stats.decoder = tape.item(dec);
        stats.total = tape.item(total);

        let grads = tape.backward(total)?;
        let tau = cfg.train.tau;
        let agent = &mut self.agent;
        let (mut params, opt) = agent.repr_params_and_opt();
        params.iter_mut().for_each(|p| p.zero_grad());
        grads.accumulate(params.iter_mut().map(|p| &mut **p));
        opt.step(&mut params)?;
        agent.w.sync_low_pass(&agent.repr.bank);
        agent.w_target.soft_update_from(&agent.w, tau)?;
        Ok(Some(stats))
    }

    pub fn train_representation_phase(&mut self, steps: usize) -> Result<ReprStats> {
        if self.cfg.ablation == Ablation::PlainSac {
            return Ok(ReprStats::default());
        }
        let mut acc = ReprStats::default();
        let mut n = 0;
        for _ in 0..steps {
            match self.repr_step()? {
                Some(s) => {
                    acc.kl += s.kl;
                    acc.wavelet_td += s.wavelet_td;
                    acc.ar += s.ar;
                    acc.decoder += s.decoder;
                    acc.total += s.total;
                    n += 1;
                }
                None => {
                    log::warn!("no full window in the buffer; representation phase skipped");
                    break;
                }
            }
        }
        if n > 0 {
            let k = n as f64;
            acc.kl /= k;
            acc.wavelet_td /= k;
            acc.ar /= k;
            acc.decoder /= k;
            acc.total /= k;
        }
        Ok(acc)
    }

    pub fn train_policy_phase(&mut self, steps: usize) -> Result<SacStats> {
        if self.buffer.is_empty() || steps == 0 {
            return Ok(SacStats {
                alpha: self.agent.sac.temperature.alpha(),
                ..SacStats::default()
            });
        }
        let mode = self.agent.context_mode(self.cfg.ablation)?;
        let contexts = self.agent.refit_contexts(&mode, &self.buffer);
        let (obs, act, d) = (self.obs_dim, self.act_dim, self.cfg.model.latent_dim);
        let n = self.cfg.train.policy_batch;
        let mut acc = SacStats::default();
        for _ in 0..steps {
            let picks = self.buffer.sample_transitions(n, &mut self.sample_rng);
            let mut cols: [Vec<f64>; 7] = Default::default();
            for &(ep, i) in &picks {
                let tr = &self.buffer.episode(ep)[i];
                cols[0].extend_from_slice(&tr.s);
                cols[1].extend_from_slice(&tr.a);
                cols[2].push(tr.r);
                cols[3].extend_from_slice(&tr.s_next);
                cols[4].push(if tr.done { 1.0 } else { 0.0 });
                cols[5].extend_from_slice(&contexts[ep][i]);
                cols[6].extend_from_slice(&contexts[ep][i + 1]);
            }
            let [s, a, r, s2, done, z, z2] = cols;
            let batch = SacBatch {
                s: Tensor::new(&[n, obs], s)?,
                a: Tensor::new(&[n, act], a)?,
                r: Tensor::new(&[n, 1], r)?,
                s_next: Tensor::new(&[n, obs], s2)?,
                done: Tensor::new(&[n, 1], done)?,
                zhat: Tensor::new(&[n, d], z)?,
                zhat_next: Tensor::new(&[n, d], z2)?,
            };
            let st = self.agent.sac.update(&batch, &mut self.noise_rng)?;
            acc.critic_loss += st.critic_loss;
            acc.actor_loss += st.actor_loss;
            acc.alpha = st.alpha;
        }
        acc.critic_loss /= steps as f64;
        acc.actor_loss /= steps as f64;
        Ok(acc)
    }

    /// Deterministic rollouts on held-out schedules. Never touches the buffer
    /// or any training stream.
    pub fn evaluate(&self, n_trajectories: usize) -> Result<EvalStats> {
        evaluate_agent(&self.agent, &self.cfg, n_trajectories)
    }

    /// Uniform-random warm start, done once before the first epoch.
    pub fn warm_start(&mut self) -> Result<()> {
        if self.env_steps == 0 {
            self.collect(self.cfg.train.initial_transitions, true)?;
        }
        Ok(())
    }

    /// Collect, both training phases and (on schedule) evaluation.
    pub fn run_epoch(&mut self) -> Result<Option<MetricsRecord>> {
        let t = self.cfg.train.clone();
        self.collect(t.collect_steps, false)?;
        let repr = self.train_representation_phase(t.repr_steps)?;
        let sac = self.train_policy_phase(t.policy_steps)?;
        let epoch = self.epoch;
        self.epoch += 1;
        if (epoch + 1) % t.eval_every != 0 && self.epoch != t.epochs {
            return Ok(None);
        }
        let ev = self.evaluate(t.eval_trajectories)?;
        let rec = MetricsRecord {
            schema_version: METRICS_SCHEMA_VERSION,
            epoch,
            env_steps: self.env_steps,
            mean_eval_return: ev.mean_return,
            std_eval_return: ev.std_return,
            encoder_kl: repr.kl,
            wavelet_td: repr.wavelet_td,
            ar_loss: repr.ar,
            critic_loss: sac.critic_loss,
            actor_loss: sac.actor_loss,
            alpha: sac.alpha,
            nonstationarity_degree: ev.degree,
        };
        self.metrics.push(rec.clone());
        Ok(Some(rec))
    }

    /// Wraps an epoch failure with its index.
    pub fn epoch_error(&self, e: Error) -> Error {
        Error::Epoch {
            epoch: self.epoch,
            source: Box::new(e),
        }
    }
}

/// Seed of the `j`-th evaluation schedule; disjoint from training seeds,
/// which come from a ChaCha stream.
pub fn eval_seed(master: u64, j: usize) -> u64 {
    mix(mix(master ^ 0x6576_616c) ^ j as u64)
}

pub fn evaluate_agent(agent: &Agent, cfg: &ExperimentConfig, n_trajectories: usize) -> Result<EvalStats> {
    if n_trajectories == 0 {
        return Ok(EvalStats::default());
    }
    let mode = agent.context_mode(cfg.ablation)?;
    let mut returns = Vec::with_capacity(n_trajectories);
    let mut degrees = Vec::with_capacity(n_trajectories);
    for j in 0..n_trajectories {
        let mut env = make_env(&cfg.env, eval_seed(cfg.seed, j))?;
        let (ret, _) = rollout(agent, &mode, env.as_mut(), ActMode::Deterministic, None)?;
        returns.push(ret);
        degrees.push(nonstationarity_degree(env.schedule())?);
    }
    Ok(EvalStats {
        mean_return: crate::signals::mean(&returns),
        std_return: crate::signals::std_dev(&returns),
        degree: crate::signals::mean(&degrees),
    })
}

/// One episode from `reset`. Returns the undiscounted return and the
/// transitions.
pub fn rollout(
    agent: &Agent,
    mode: &ContextMode,
    env: &mut dyn Env,
    act_mode: ActMode,
    mut noise: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Transition>)> {
    let mut s = env.reset();
    let mut tracker = ContextTracker::new(agent, mode);
    let mut ret = 0.0;
    let mut out = Vec::new();
    let k = env.action_dim();
    loop {
        let ctx = tracker.current();
        let eps: Vec<f64> = match noise.as_deref_mut() {
            Some(r) => (0..k).map(|_| r.sample(StandardNormal)).collect(),
            None => vec![0.0; k],
        };
        let (a, _) = agent.sac.policy.act(&s, &ctx, act_mode, &eps);
        let tr = env.step(&a);
        ret += tr.r;
        tracker.push(&tr);
        s = tr.s_next.clone();
        let end = tr.ends_episode();
        out.push(tr);
        if end {
            return Ok((ret, out));
        }
    }
}
