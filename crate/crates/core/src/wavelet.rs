//! Causal discrete wavelet transform built on strided convolutions.
//!
//! Level `m` pairs neighbouring samples from the end of the sequence:
//! coefficient `n` of an even-length input combines `x[2n]` (earlier) and
//! `x[2n+1]` (later). Odd lengths get one implicit zero on the left, so the
//! newest sample always closes a pair and coefficient `n` never reads past
//! index `2n+1`.
//!
//! Filters are applied as `c(n) = sum_k y(k) * x(anchor(n) - k)`, so `y(0)`
//! weights the later sample. Haar is `y0 = [1, 1]/sqrt2`, `y1 = [1, -1]/sqrt2`.

use std::f64::consts::FRAC_1_SQRT_2;

use wisdom_tensor::{Tape, Tensor, Var};

use crate::error::{param_err, Error, Result};

#[derive(Clone, Debug)]
pub struct FilterBank {
    pub y0: Tensor,
    pub y1: Tensor,
    pub trainable: bool,
}

impl FilterBank {
    /// Fixed orthonormal Haar pair.
    pub fn haar() -> Self {
        Self::haar_with_taps(2, false).expect("two taps is valid")
    }

    /// Haar values zero-extended to `taps` entries.
    pub fn haar_with_taps(taps: usize, trainable: bool) -> Result<Self> {
        if taps < 2 || taps % 2 != 0 {
            return param_err(format!("filter length must be even and >= 2, got {taps}"));
        }
        let mut lo = vec![0.0; taps];
        let mut hi = vec![0.0; taps];
        lo[0] = FRAC_1_SQRT_2;
        lo[1] = FRAC_1_SQRT_2;
        hi[0] = FRAC_1_SQRT_2;
        hi[1] = -FRAC_1_SQRT_2;
        let mut y0 = Tensor::new(&[taps], lo)?;
        let mut y1 = Tensor::new(&[taps], hi)?;
        y0.set_requires_grad(trainable);
        y1.set_requires_grad(trainable);
        Ok(FilterBank { y0, y1, trainable })
    }

    pub fn taps(&self) -> usize {
        self.y0.numel()
    }

    /// Unit norms and orthogonality, to within `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (a, b) = (self.y0.data(), self.y1.data());
        (dot(a, a) - 1.0).abs() <= tol && (dot(b, b) - 1.0).abs() <= tol && dot(a, b).abs() <= tol
    }

    pub fn detached_copy(&self) -> Self {
        let mut y0 = self.y0.detached_copy();
        let mut y1 = self.y1.detached_copy();
        y0.set_requires_grad(false);
        y1.set_requires_grad(false);
        FilterBank {
            y0,
            y1,
            trainable: false,
        }
    }
}

/// Coefficients of an `M`-level decomposition of a `[T, D]` signal.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletStack {
    /// `u_M`, `[ceil(T/2^M), D]`.
    pub approximation: Tensor,
    /// `g_1..g_M`; `details[m-1]` is `[ceil(T/2^m), D]`.
    pub details: Vec<Tensor>,
    pub levels: usize,
    pub original_length: usize,
}

/// Per-level input lengths `T, ceil(T/2), ...` for `levels + 1` entries.
pub fn level_lengths(len: usize, levels: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(levels + 1);
    let mut n = len;
    out.push(n);
    for _ in 0..levels {
        n = n.div_ceil(2);
        out.push(n);
    }
    out
}

/// Number of entries kept from a detail band of length `len`.
pub fn kept_len(len: usize, keep_fraction: f64) -> usize {
    // The epsilon absorbs products like 0.3 * 10 landing just above 3.
    (((keep_fraction * len as f64) - 1e-9).ceil() as usize).clamp(1, len)
}

/// One analysis level on the tape. `signal` is `[T, D]` or `[B, T, D]`;
/// every channel is filtered independently with the same pair.
pub fn dwt_level_tape(tape: &mut Tape, signal: Var, y0: Var, y1: Var) -> Result<(Var, Var)> {
    let shape = tape.shape(signal);
    let len = shape[shape.len() - 2];
    if len < 2 {
        return Err(Error::Decomposition(format!(
            "sequence too short: length {len}"
        )));
    }
    let offset = 1 - len % 2;
    let u = tape.depthwise_conv1d(signal, y0, 2, 1, offset)?;
    let g = tape.depthwise_conv1d(signal, y1, 2, 1, offset)?;
    Ok((u, g))
}

/// `levels` analysis steps on the tape: `(u_M, [g_1..g_M])`.
pub fn dwt_full_tape(
    tape: &mut Tape,
    signal: Var,
    y0: Var,
    y1: Var,
    levels: usize,
) -> Result<(Var, Vec<Var>)> {
    if levels == 0 {
        return param_err("levels must be >= 1");
    }
    let shape = tape.shape(signal);
    let len = shape[shape.len() - 2];
    if len < 1 << levels {
        return Err(Error::Decomposition(format!(
            "length {len} is shorter than 2^{levels}"
        )));
    }
    let mut u = signal;
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (next, g) = dwt_level_tape(tape, u, y0, y1)?;
        details.push(g);
        u = next;
    }
    Ok((u, details))
}

fn check_signal(z: &Tensor) -> Result<()> {
    if z.shape().len() != 2 {
        return param_err(format!("signal must be [T, D], got {:?}", z.shape()));
    }
    Ok(())
}

pub fn dwt_level(u_prev: &Tensor, bank: &FilterBank) -> Result<(Tensor, Tensor)> {
    check_signal(u_prev)?;
    let mut tape = Tape::new();
    let x = tape.constant(u_prev);
    let y0 = tape.constant(&bank.y0);
    let y1 = tape.constant(&bank.y1);
    let (u, g) = dwt_level_tape(&mut tape, x, y0, y1)?;
    Ok((tape.to_tensor(u), tape.to_tensor(g)))
}

pub fn dwt_full(z: &Tensor, bank: &FilterBank, levels: usize) -> Result<WaveletStack> {
    check_signal(z)?;
    let mut tape = Tape::new();
    let x = tape.constant(z);
    let y0 = tape.constant(&bank.y0);
    let y1 = tape.constant(&bank.y1);
    let (u, details) = dwt_full_tape(&mut tape, x, y0, y1, levels)?;
    Ok(WaveletStack {
        approximation: tape.to_tensor(u),
        details: details.into_iter().map(|g| tape.to_tensor(g)).collect(),
        levels,
        original_length: z.shape()[0],
    })
}

/// Inverts [`dwt_full`] for a two-tap orthonormal bank.
pub fn idwt_full(stack: &WaveletStack, bank: &FilterBank) -> Result<Tensor> {
    if bank.taps() != 2 || !bank.is_orthonormal(1e-12) {
        return Err(Error::Reconstruction(
            "inverse needs a two-tap orthonormal bank".into(),
        ));
    }
    if stack.details.len() != stack.levels || stack.levels == 0 {
        return Err(Error::Reconstruction(format!(
            "{} detail bands for {} levels",
            stack.details.len(),
            stack.levels
        )));
    }
    let lens = level_lengths(stack.original_length, stack.levels);
    let dim = stack.approximation.shape()[1];
    let check = |t: &Tensor, want: usize, what: &str| -> Result<()> {
        if t.shape() != [want, dim] {
            return Err(Error::Reconstruction(format!(
                "{what} has shape {:?}, expected [{want}, {dim}]",
                t.shape()
            )));
        }
        Ok(())
    };
    check(&stack.approximation, lens[stack.levels], "approximation")?;
    let (a, b) = (bank.y0.data(), bank.y1.data());
    let mut u = stack.approximation.data().to_vec();
    for m in (0..stack.levels).rev() {
        let g = &stack.details[m];
        check(g, lens[m + 1], "detail band")?;
        let n = lens[m + 1];
        let mut x = vec![0.0; 2 * n * dim];
        for i in 0..n {
            for d in 0..dim {
                let (ui, gi) = (u[i * dim + d], g.data()[i * dim + d]);
                x[(2 * i) * dim + d] = a[1] * ui + b[1] * gi;
                x[(2 * i + 1) * dim + d] = a[0] * ui + b[0] * gi;
            }
        }
        let skip = 2 * n - lens[m];
        u = x.split_off(skip * dim);
    }
    Ok(Tensor::new(&[stack.original_length, dim], u)?)
}

/// Keeps the trailing `ceil(rho * len)` rows of every detail band and zeroes
/// the rest.
pub fn select_details(stack: &WaveletStack, keep_fraction: f64) -> Result<WaveletStack> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return param_err(format!("keep fraction must be in (0, 1], got {keep_fraction}"));
    }
    let details = stack
        .details
        .iter()
        .map(|g| {
            let (len, dim) = (g.shape()[0], g.shape()[1]);
            let drop = len - kept_len(len, keep_fraction);
            let mut out = g.clone();
            out.data_mut()[..drop * dim].fill(0.0);
            out
        })
        .collect();
    Ok(WaveletStack {
        details,
        ..stack.clone()
    })
}

/// Row mask (`len` entries, 1 for kept) matching [`select_details`].
pub fn detail_mask(len: usize, keep_fraction: f64) -> Vec<f64> {
    let keep = kept_len(len, keep_fraction);
    (0..len).map(|i| if i + keep >= len { 1.0 } else { 0.0 }).collect()
}
