//! Wavelet representation network `Y`, the low-pass `W` network with its
//! target copy, and their losses.
//!
//! `Y` is evaluated as a streaming filter: `zhat_t` is a linear read-out of
//! the selected wavelet coefficients of the `L` most recent latents ending at
//! `t` (zero before the start of the sequence). The read-out starts as the
//! inverse-transform row that recovers the newest sample, so an untrained
//! network is the identity, and `zhat_t` never sees `z_{>t}`.

use wisdom_tensor::{soft_update, Linear, Params, Tape, Tensor, Var};

use crate::error::{param_err, Error, Result};
use crate::wavelet::{detail_mask, dwt_full, dwt_full_tape, level_lengths, FilterBank, WaveletStack};

#[derive(Clone, Debug)]
pub struct WaveletReprNet {
    pub bank: FilterBank,
    pub levels: usize,
    pub keep_fraction: f64,
    pub window: usize,
    pub dim: usize,
    /// `[coeff_rows * D] -> [D]`.
    pub recon: Linear,
}

impl WaveletReprNet {
    pub fn new(
        window: usize,
        dim: usize,
        levels: usize,
        keep_fraction: f64,
        taps: usize,
        trainable_bank: bool,
    ) -> Result<Self> {
        if levels == 0 {
            return param_err("levels must be >= 1");
        }
        if window < 1 << levels {
            return Err(Error::Decomposition(format!(
                "window {window} is shorter than 2^{levels}"
            )));
        }
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return param_err(format!("keep fraction must be in (0, 1], got {keep_fraction}"));
        }
        let bank = FilterBank::haar_with_taps(taps, trainable_bank)?;
        let lens = level_lengths(window, levels);
        let rows: usize = lens[1..].iter().sum::<usize>() + lens[levels];
        let mut w = vec![0.0; rows * dim * dim];
        // The newest sample is the later half of the newest pair at every
        // level, so only the last coefficient of each band contributes.
        let mut offset = 0;
        let mut gain = 1.0;
        for &len in &lens[1..] {
            gain *= std::f64::consts::FRAC_1_SQRT_2;
            let r = offset + len - 1;
            for c in 0..dim {
                w[(r * dim + c) * dim + c] = gain;
            }
            offset += len;
        }
        let r = offset + lens[levels] - 1;
        for c in 0..dim {
            w[(r * dim + c) * dim + c] = gain;
        }
        let recon = Linear::from_parts(
            Tensor::new(&[rows * dim, dim], w)?,
            Tensor::zeros(&[dim]),
        );
        Ok(WaveletReprNet {
            bank,
            levels,
            keep_fraction,
            window,
            dim,
            recon,
        })
    }

    pub fn coeff_rows(&self) -> usize {
        self.recon.n_in() / self.dim
    }

    /// Selected coefficients of `[N, L, D]` windows, stacked along time as
    /// `[g_1, .., g_M, u_M]`: `[N, rows, D]`.
    fn window_coeffs(&self, tape: &mut Tape, windows: Var, y0: Var, y1: Var) -> Result<Var> {
        let (u, details) = dwt_full_tape(tape, windows, y0, y1, self.levels)?;
        let mut parts = Vec::with_capacity(self.levels + 1);
        for g in details {
            let len = tape.shape(g)[1];
            if self.keep_fraction < 1.0 {
                let n = tape.shape(g)[0];
                let row: Vec<f64> = detail_mask(len, self.keep_fraction)
                    .into_iter()
                    .flat_map(|m| std::iter::repeat_n(m, self.dim))
                    .collect();
                let mask: Vec<f64> = std::iter::repeat_n(row, n).flatten().collect();
                let mask = tape.input(&[n, len, self.dim], mask)?;
                parts.push(tape.mul(g, mask)?);
            } else {
                parts.push(g);
            }
        }
        parts.push(u);
        Ok(tape.concat(&parts, 1)?)
    }

    /// Read-out of `[N, L, D]` windows: `[N, D]`.
    pub fn readout(&self, tape: &mut Tape, windows: Var, y0: Var, y1: Var) -> Result<Var> {
        let n = tape.shape(windows)[0];
        let coeffs = self.window_coeffs(tape, windows, y0, y1)?;
        let flat = tape.reshape(coeffs, &[n, self.coeff_rows() * self.dim])?;
        Ok(self.recon.forward(tape, flat)?)
    }

    /// `z: [B, T, D]` to `zhat: [B, T, D]`.
    pub fn forward_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        let (b, t) = match shape.as_slice() {
            [b, t, d] if *d == self.dim => (*b, *t),
            _ => {
                return param_err(format!("expected [B, T, {}], got {shape:?}", self.dim));
            }
        };
        let windows = tape.causal_unfold(z, self.window)?;
        let y0 = tape.param(&self.bank.y0);
        let y1 = tape.param(&self.bank.y1);
        let out = self.readout(tape, windows, y0, y1)?;
        Ok(tape.reshape(out, &[b, t, self.dim])?)
    }

    /// `zhat` for one `[L, D]` sequence, and the wavelet stack of the whole
    /// sequence (for inspection).
    pub fn forward_zhat(&self, z: &Tensor) -> Result<(Tensor, WaveletStack)> {
        if z.shape().len() != 2 || z.shape()[1] != self.dim {
            return param_err(format!("expected [L, {}], got {:?}", self.dim, z.shape()));
        }
        let len = z.shape()[0];
        if len < 1 << self.levels {
            return Err(Error::Decomposition(format!(
                "length {len} is shorter than 2^{}",
                self.levels
            )));
        }
        let stack = dwt_full(z, &self.bank, self.levels)?;
        let mut tape = Tape::new();
        let zv = tape.constant(&z.clone().reshape(&[1, len, self.dim])?);
        let out = self.forward_tape(&mut tape, zv)?;
        let zhat = tape.to_tensor(out).reshape(&[len, self.dim])?;
        Ok((zhat, stack))
    }

    /// The network is linear in `z`; this collapses it to an FIR filter.
    pub fn fir(&self) -> Result<Fir> {
        let (l, d) = (self.window, self.dim);
        let mut tape = Tape::new();
        let mut impulses = vec![0.0; l * d * l * d];
        for k in 0..l * d {
            impulses[k * l * d + k] = 1.0;
        }
        let x = tape.input(&[l * d, l, d], impulses)?;
        let zeros = tape.input(&[1, l, d], vec![0.0; l * d])?;
        let y0 = tape.constant(&self.bank.y0);
        let y1 = tape.constant(&self.bank.y1);
        let resp = self.readout(&mut tape, x, y0, y1)?;
        let base = self.readout(&mut tape, zeros, y0, y1)?;
        let bias = tape.value(base).to_vec();
        let resp = tape.value(resp);
        // impulse k = (p, c) at window position p; lag j = l - 1 - p.
        let mut taps = vec![0.0; l * d * d];
        for p in 0..l {
            let j = l - 1 - p;
            for c in 0..d {
                let row = &resp[(p * d + c) * d..(p * d + c + 1) * d];
                for o in 0..d {
                    taps[(j * d + c) * d + o] = row[o] - bias[o];
                }
            }
        }
        Ok(Fir { taps, bias, window: l, dim: d })
    }

    pub fn detached_copy(&self) -> Self {
        WaveletReprNet {
            bank: self.bank.detached_copy(),
            recon: self.recon.detached_copy(),
            ..self.clone()
        }
    }
}

impl Params for WaveletReprNet {
    fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if self.bank.trainable {
            out.push(&self.bank.y0);
            out.push(&self.bank.y1);
        }
        out.extend(self.recon.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if self.bank.trainable {
            out.push(&mut self.bank.y0);
            out.push(&mut self.bank.y1);
        }
        out.extend(self.recon.params_mut());
        out
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if self.bank.trainable {
            out.push((format!("{prefix}.y0"), &self.bank.y0));
            out.push((format!("{prefix}.y1"), &self.bank.y1));
        }
        out.extend(self.recon.named_params(&format!("{prefix}.recon")));
        out
    }
}

/// `zhat_t = bias + sum_j taps[j]^T z_{t-j}` over the last `window` latents.
#[derive(Clone, Debug, PartialEq)]
pub struct Fir {
    /// `[lag][c_in][c_out]`, flattened.
    pub taps: Vec<f64>,
    pub bias: Vec<f64>,
    pub window: usize,
    pub dim: usize,
}

impl Fir {
    /// `history` is oldest first; only its last `window` rows are used.
    pub fn apply(&self, history: &[Vec<f64>]) -> Vec<f64> {
        let d = self.dim;
        let mut out = self.bias.clone();
        for (j, z) in history.iter().rev().take(self.window).enumerate() {
            for c in 0..d {
                let zc = z[c];
                if zc == 0.0 {
                    continue;
                }
                let row = &self.taps[(j * d + c) * d..(j * d + c + 1) * d];
                out.iter_mut().zip(row).for_each(|(o, w)| *o += zc * w);
            }
        }
        out
    }

    /// `zhat` at every position of `z`.
    pub fn stream(&self, z: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..z.len()).map(|t| self.apply(&z[..=t])).collect()
    }
}

/// Low-pass path of `M` levels followed by a linear head back to `[L, D]`.
///
/// The online network borrows its low-pass filter from the representation
/// network's bank; `y0` here is a frozen copy used by target and standalone
/// evaluation.
#[derive(Clone, Debug)]
pub struct WNetwork {
    pub y0: Tensor,
    pub head: Linear,
    pub levels: usize,
    pub window: usize,
    pub dim: usize,
}

impl WNetwork {
    pub fn new<R: rand::Rng + ?Sized>(
        window: usize,
        dim: usize,
        levels: usize,
        bank: &FilterBank,
        rng: &mut R,
    ) -> Result<Self> {
        if window < 1 << levels {
            return Err(Error::Decomposition(format!(
                "window {window} is shorter than 2^{levels}"
            )));
        }
        let approx = level_lengths(window, levels)[levels];
        let mut y0 = bank.y0.detached_copy();
        y0.set_requires_grad(false);
        Ok(WNetwork {
            y0,
            head: Linear::new(approx * dim, window * dim, rng),
            levels,
            window,
            dim,
        })
    }

    /// `windows: [N, L, D]` to `[N, L, D]` with the given low-pass filter.
    pub fn forward_with(&self, tape: &mut Tape, y0: Var, windows: Var) -> Result<Var> {
        let n = tape.shape(windows)[0];
        let mut u = windows;
        for _ in 0..self.levels {
            let len = tape.shape(u)[1];
            let offset = 1 - len % 2;
            u = tape.depthwise_conv1d(u, y0, 2, 1, offset)?;
        }
        let flat_len = tape.shape(u)[1] * self.dim;
        let flat = tape.reshape(u, &[n, flat_len])?;
        let out = self.head.forward(tape, flat)?;
        Ok(tape.reshape(out, &[n, self.window, self.dim])?)
    }

    /// Forward with the stored low-pass filter.
    pub fn forward(&self, tape: &mut Tape, windows: Var) -> Result<Var> {
        let y0 = tape.param(&self.y0);
        self.forward_with(tape, y0, windows)
    }

    pub fn apply(&self, windows: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(windows);
        let y = self.forward(&mut tape, x)?;
        Ok(tape.to_tensor(y))
    }

    /// Frozen copy for use as a target network.
    pub fn target_copy(&self) -> Self {
        let mut t = WNetwork {
            y0: self.y0.detached_copy(),
            head: self.head.detached_copy(),
            ..*self
        };
        for p in t.all_tensors_mut() {
            p.set_requires_grad(false);
        }
        t
    }

    fn all_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.y0, &mut self.head.weight, &mut self.head.bias]
    }

    /// Copies the low-pass filter values from `bank`.
    pub fn sync_low_pass(&mut self, bank: &FilterBank) {
        self.y0.data_mut().copy_from_slice(bank.y0.data());
    }

    /// `self <- tau * online + (1 - tau) * self` over filter and head.
    pub fn soft_update_from(&mut self, online: &WNetwork, tau: f64) -> Result<()> {
        let src = [&online.y0, &online.head.weight, &online.head.bias];
        soft_update(&mut self.all_tensors_mut(), &src, tau)?;
        Ok(())
    }
}

/// Trainable part of the online `W` network (the head; the filter belongs to
/// the representation network).
impl Params for WNetwork {
    fn params(&self) -> Vec<&Tensor> {
        self.head.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.head.params_mut()
    }

    fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![(format!("{prefix}.y0"), &self.y0)];
        out.extend(self.head.named_params(&format!("{prefix}.head")));
        out
    }
}

/// `0.5 * mean_rows ||x||^2` where rows run over every leading index and the
/// norm over the last axis.
pub fn half_mean_sq(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let sq = tape.square(x)?;
    let total = tape.sum(sq)?;
    Ok(tape.scale(total, 0.5 / rows as f64)?)
}

/// Wavelet TD loss `0.5 * mean ||W(z_t) - (z_t + gamma * W_target(z_t1))||^2`
/// from precomputed network outputs. Gradients reach `w_zt` only.
pub fn wavelet_td_loss(
    tape: &mut Tape,
    w_zt: Var,
    z_t: Var,
    w_target_zt1: Var,
    gamma: f64,
) -> Result<Var> {
    if !(0.0..1.0).contains(&gamma) {
        return param_err(format!("gamma must be in [0, 1), got {gamma}"));
    }
    let zt = tape.detach(z_t);
    let wt = tape.detach(w_target_zt1);
    let disc = tape.scale(wt, gamma)?;
    let target = tape.add(zt, disc)?;
    let diff = tape.sub(w_zt, target)?;
    half_mean_sq(tape, diff)
}

/// One-step-ahead loss `0.5 * mean ||zhat_t - target_t||^2`, where `zhat_t`
/// was computed from inputs up to the step before `target_t`. The target is
/// treated as data.
pub fn ar_loss(tape: &mut Tape, zhat: Var, target: Var) -> Result<Var> {
    if tape.shape(zhat) != tape.shape(target) {
        return Err(wisdom_tensor::TensorError::Dimension {
            op: "ar_loss",
            lhs: tape.shape(zhat).to_vec(),
            rhs: tape.shape(target).to_vec(),
        }
        .into());
    }
    let t = tape.detach(target);
    let diff = tape.sub(zhat, t)?;
    half_mean_sq(tape, diff)
}

/// `alpha_y * td + ar`.
pub fn joint_loss(tape: &mut Tape, td: Var, ar: Var, alpha_y: f64) -> Result<Var> {
    if !(alpha_y >= 0.0) {
        return param_err(format!("alpha_y must be >= 0, got {alpha_y}"));
    }
    let w = tape.scale(td, alpha_y)?;
    Ok(tape.add(w, ar)?)
}

/// Outcome of [`contraction_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contraction {
    pub ratio: f64,
    pub pass: bool,
}

/// Sup-norm contraction ratio of `F W = z_t + gamma W(z_t1)` between two
/// networks over a dataset of `(z_t, z_t1)` windows.
pub fn contraction_check(
    w1: &WNetwork,
    w2: &WNetwork,
    dataset: &[(Tensor, Tensor)],
    gamma: f64,
) -> Result<Contraction> {
    let outputs = ContractionOutputs::new(w1, w2, dataset)?;
    outputs.check(gamma)
}

/// Network outputs on a dataset, reusable across several discounts.
pub struct ContractionOutputs {
    /// `W1 - W2` on every `z_t` window, flattened.
    diff_t: Vec<f64>,
    /// `W1 - W2` on every `z_t1` window, flattened.
    diff_t1: Vec<f64>,
}

impl ContractionOutputs {
    pub fn new(w1: &WNetwork, w2: &WNetwork, dataset: &[(Tensor, Tensor)]) -> Result<Self> {
        if dataset.is_empty() {
            return param_err("empty contraction dataset");
        }
        let shape = dataset[0].0.shape().to_vec();
        let stack = |pick: fn(&(Tensor, Tensor)) -> &Tensor| -> Result<Tensor> {
            let mut data = Vec::new();
            for pair in dataset {
                let t = pick(pair);
                if t.shape() != shape.as_slice() {
                    return param_err("contraction windows differ in shape");
                }
                data.extend_from_slice(t.data());
            }
            let mut full = vec![dataset.len()];
            full.extend_from_slice(&shape);
            Ok(Tensor::new(&full, data)?)
        };
        let zt = stack(|p| &p.0)?;
        let zt1 = stack(|p| &p.1)?;
        let diff = |x: &Tensor| -> Result<Vec<f64>> {
            let (a, b) = (w1.apply(x)?, w2.apply(x)?);
            Ok(a.data().iter().zip(b.data()).map(|(p, q)| p - q).collect())
        };
        Ok(ContractionOutputs {
            diff_t: diff(&zt)?,
            diff_t1: diff(&zt1)?,
        })
    }

    pub fn check(&self, gamma: f64) -> Result<Contraction> {
        if !(0.0..1.0).contains(&gamma) {
            return param_err(format!("gamma must be in [0, 1), got {gamma}"));
        }
        // F W1 - F W2 = gamma * (W1 - W2)(z_t1); the z_t terms cancel.
        let numer = self
            .diff_t1
            .iter()
            .map(|d| (gamma * d).abs())
            .fold(0.0, f64::max);
        let denom = self
            .diff_t
            .iter()
            .chain(&self.diff_t1)
            .map(|d| d.abs())
            .fold(0.0, f64::max);
        if denom == 0.0 {
            return Ok(Contraction {
                ratio: 0.0,
                pass: true,
            });
        }
        let ratio = numer / denom;
        Ok(Contraction {
            ratio,
            pass: ratio <= gamma + 1e-9,
        })
    }
}
