use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Result, TensorError};

static NEXT_KEY: AtomicU64 = AtomicU64::new(1);

/// Identity of a parameter tensor across tapes.
///
/// Keys only link tape leaves back to the tensor they were read from; they
/// never influence numeric results.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey(u64);

impl ParamKey {
    fn fresh() -> Self {
        ParamKey(NEXT_KEY.fetch_add(1, Ordering::Relaxed))
    }
}

/// Dense row-major array of `f64` with an optional gradient buffer.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    key: ParamKey,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::param("tensor", "zero-sized dimension"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::dim("tensor", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
            key: ParamKey::fresh(),
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(&[1], vec![value]).expect("scalar shape")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n]).expect("zeros shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n]).expect("full shape")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::param("from_rows", "ragged rows"));
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor::new(shape, data).expect("uniform shape")
    }

    pub fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        // Box-Muller
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let u1: f64 = rng.random();
            let u2: f64 = rng.random();
            let r = (-2.0 * (1.0 - u1).ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            out.push(r * theta.cos());
            if out.len() < n {
                out.push(r * theta.sin());
            }
        }
        Tensor::new(shape, out).expect("normal shape")
    }

    /// Marks the tensor as a trainable parameter.
    pub fn requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn is_trainable(&self) -> bool {
        self.requires_grad
    }

    pub fn key(&self) -> ParamKey {
        self.key
    }

    /// Copy of the values under a new identity and without gradient state.
    ///
    /// Target networks are built from these so that nothing keyed on the
    /// source parameter can ever reach them.
    pub fn detached_copy(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: self.requires_grad,
            grad: None,
            key: ParamKey::fresh(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.data.len());
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::dim("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
