use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with per-position moment slots.
///
/// Slot `i` belongs to the `i`-th tensor passed to [`Adam::step`], so callers
/// must hand over parameters in the same order every time.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn with_lr(lr: f64) -> Self {
        Adam::new(AdamConfig {
            lr,
            ..AdamConfig::default()
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update from the accumulated `grad` of each parameter. Tensors
    /// without a gradient are left untouched. Gradients are not cleared.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "adam built for {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            if self.m[i].len() != p.numel() {
                return Err(TensorError::Contract(format!(
                    "adam slot {i} holds {} values, tensor has {}",
                    self.m[i].len(),
                    p.numel()
                )));
            }
            let Some(g) = p.grad().map(<[f64]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Step count and flattened first/second moments, for checkpoints.
    pub fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(TensorError::Contract("adam moment shapes disagree".into()));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

pub fn zero_grad(params: &mut [&mut Tensor]) {
    params.iter_mut().for_each(|p| p.zero_grad());
}

/// `target <- tau * source + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut [&mut Tensor], source: &[&Tensor], tau: f64) -> Result<()> {
    if target.len() != source.len() {
        return Err(TensorError::Contract(format!(
            "soft update over {} targets and {} sources",
            target.len(),
            source.len()
        )));
    }
    for (t, s) in target.iter_mut().zip(source) {
        if t.shape() != s.shape() {
            return Err(TensorError::dim("soft_update", t.shape(), s.shape()));
        }
        t.data_mut()
            .iter_mut()
            .zip(s.data())
            .for_each(|(t, s)| *t = tau * s + (1.0 - tau) * *t);
    }
    Ok(())
}
