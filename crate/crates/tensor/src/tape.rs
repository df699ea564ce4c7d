//! Operation recording and reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Leaves are either
//! constants or parameters read from a [`Tensor`]; every operation appends a
//! node whose inputs were recorded earlier, so walking the node list
//! backwards from the loss is a valid reverse topological order.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::tensor::{ParamKey, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Tanh,
    Relu,
    Softplus,
    Exp,
    Log,
    Square,
    Neg,
    Scale(f64),
    AddScalar(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Min,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Unary(Var, Unary),
    Binary(Var, Var, Binary),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Sum(Var),
    SumLast(Var),
    Reshape(Var),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Conv1d {
        signal: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    CausalUnfold {
        input: Var,
        window: usize,
    },
    Rsample {
        mean: Var,
        log_std: Var,
        noise: Vec<f64>,
    },
}

/// Resolved geometry of a strided causal convolution.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    len: usize,
    c_in: usize,
    c_out: usize,
    taps: usize,
    len_out: usize,
    stride: usize,
    dilation: usize,
    offset: usize,
    depthwise: bool,
}

impl ConvGeom {
    /// Input index read by output `t` through tap `j`, if inside the signal.
    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let anchor = t * self.stride + self.offset;
        let back = j * self.dilation;
        if back > anchor || anchor - back >= self.len {
            None
        } else {
            Some(anchor - back)
        }
    }
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    tracked: bool,
}

/// Linear record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamKey, Var)>,
    param_lookup: HashMap<ParamKey, Var>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamKey, Var>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was tracked and
    /// reachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for the parameter tensor `t`, if it was read on the tape.
    pub fn for_param(&self, t: &Tensor) -> Option<&[f64]> {
        self.params.get(&t.key()).and_then(|&v| self.wrt(v))
    }

    /// Adds the gradient of every listed parameter into its `grad` buffer.
    pub fn accumulate<'a, I>(&self, params: I)
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        for p in params {
            if let Some(g) = self.for_param(p) {
                let g = g.to_vec();
                p.accumulate_grad(&g);
            }
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, tracked: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn item(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.node(v).tracked
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("tape node shape")
    }

    /// Untracked leaf holding a copy of `t`.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn input(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(TensorError::dim("input", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(vec![1], vec![value], Op::Leaf, false)
    }

    /// Leaf read from a parameter; tracked when the tensor requires grad.
    /// Reading the same tensor twice returns the same handle so that
    /// contributions from every use meet in one gradient slot.
    pub fn param(&mut self, t: &Tensor) -> Var {
        if let Some(&v) = self.param_lookup.get(&t.key()) {
            return v;
        }
        let v = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.is_trainable(),
        );
        if t.is_trainable() {
            self.params.push((t.key(), v));
            self.param_lookup.insert(t.key(), v);
        }
        v
    }

    /// Untracked copy of `v`: gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = self.node(v);
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    // ---- elementwise -------------------------------------------------

    pub fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let n = self.node(a);
        if kind == Unary::Log {
            if let Some(bad) = n.value.iter().find(|&&x| x <= 0.0) {
                return Err(TensorError::Domain {
                    op: "log",
                    msg: format!("non-positive input {bad}"),
                });
            }
        }
        let f: Box<dyn Fn(f64) -> f64> = match kind {
            Unary::Tanh => Box::new(f64::tanh),
            Unary::Relu => Box::new(|x: f64| x.max(0.0)),
            Unary::Softplus => Box::new(softplus),
            Unary::Exp => Box::new(f64::exp),
            Unary::Log => Box::new(f64::ln),
            Unary::Square => Box::new(|x: f64| x * x),
            Unary::Neg => Box::new(|x: f64| -x),
            Unary::Scale(c) => Box::new(move |x: f64| c * x),
            Unary::AddScalar(c) => Box::new(move |x: f64| x + c),
            Unary::Clamp(lo, hi) => Box::new(move |x: f64| x.clamp(lo, hi)),
        };
        let value = n.value.iter().map(|&x| f(x)).collect();
        let (shape, tracked) = (n.shape.clone(), n.tracked);
        Ok(self.push(shape, value, Op::Unary(a, kind), tracked))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Square)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Neg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Unary::Scale(c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Unary::AddScalar(c))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(TensorError::param("clamp", format!("lo {lo} > hi {hi}")));
        }
        self.unary(a, Unary::Clamp(lo, hi))
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary, name: &'static str) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Min => x.min(y),
        };
        let (shape, value) = if na.shape == nb.shape {
            let v = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
            (na.shape.clone(), v)
        } else if nb.value.len() == 1 {
            let y = nb.value[0];
            (na.shape.clone(), na.value.iter().map(|&x| f(x, y)).collect())
        } else if na.value.len() == 1 {
            let x = na.value[0];
            (nb.shape.clone(), nb.value.iter().map(|&y| f(x, y)).collect())
        } else {
            return Err(TensorError::dim(name, &na.shape, &nb.shape));
        };
        let tracked = na.tracked || nb.tracked;
        Ok(self.push(shape, value, Op::Binary(a, b, kind), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, "mul")
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Min, "minimum")
    }

    /// Adds a vector of length `shape[-1]` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(bias));
        let cols = *na.shape.last().unwrap_or(&0);
        if nb.value.len() != cols {
            return Err(TensorError::dim("add_row", &na.shape, &nb.shape));
        }
        let value = na
            .value
            .chunks(cols)
            .flat_map(|row| row.iter().zip(&nb.value).map(|(x, b)| x + b))
            .collect();
        let (shape, tracked) = (na.shape.clone(), na.tracked || nb.tracked);
        Ok(self.push(shape, value, Op::AddRow(a, bias), tracked))
    }

    // ---- linear algebra and reductions -------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
            return Err(TensorError::dim("matmul", &na.shape, &nb.shape));
        }
        let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
        let value = matmul_raw(&na.value, &nb.value, m, k, n);
        let tracked = na.tracked || nb.tracked;
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a);
        let s = n.value.iter().sum();
        let tracked = n.tracked;
        Ok(self.push(vec![1], vec![s], Op::Sum(a), tracked))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let count = self.node(a).value.len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / count)
    }

    /// Sums over the last axis, keeping it with length 1.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a);
        let cols = *n.shape.last().unwrap_or(&1);
        let value = n.value.chunks(cols).map(|c| c.iter().sum()).collect();
        let mut shape = n.shape.clone();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        }
        let tracked = n.tracked;
        Ok(self.push(shape, value, Op::SumLast(a), tracked))
    }

    // ---- shape manipulation ------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n = self.node(a);
        if numel(shape) != n.value.len() || shape.contains(&0) {
            return Err(TensorError::dim("reshape", &n.shape, shape));
        }
        let (value, tracked) = (n.value.clone(), n.tracked);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), tracked))
    }

    /// Half-open slice `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let n = self.node(a);
        if axis >= n.shape.len() || start >= end || end > n.shape[axis] {
            return Err(TensorError::param(
                "slice",
                format!("axis {axis} range {start}..{end} on shape {:?}", n.shape),
            ));
        }
        let (outer, len, inner) = split_axis(&n.shape, axis);
        let width = end - start;
        let mut value = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            value.extend_from_slice(&n.value[base + start * inner..base + end * inner]);
        }
        let mut shape = n.shape.clone();
        shape[axis] = width;
        let tracked = n.tracked;
        Ok(self.push(
            shape,
            value,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            tracked,
        ))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::param("concat", "no inputs"))?;
        let ref_shape = self.node(*first).shape.clone();
        if axis >= ref_shape.len() {
            return Err(TensorError::param("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = &self.node(v).shape;
            let same_rank = s.len() == ref_shape.len();
            let compatible = same_rank
                && s.iter()
                    .zip(&ref_shape)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(TensorError::dim("concat", &ref_shape, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&ref_shape, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.node(v);
                let len = n.shape[axis];
                value.extend_from_slice(&n.value[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let tracked = inputs.iter().any(|&v| self.node(v).tracked);
        Ok(self.push(
            shape,
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    // ---- convolution -------------------------------------------------

    /// Causal 1-D convolution over `[T, C_in]` or `[B, T, C_in]` with a
    /// `[K, C_in, C_out]` kernel. Output `t` reads input `t*stride - j*dilation`
    /// for tap `j`, treating negative indices as zero, so it depends only on
    /// inputs at indices `<= t*stride`.
    pub fn conv1d_causal(
        &mut self,
        signal: Var,
        kernel: Var,
        stride: usize,
        dilation: usize,
    ) -> Result<Var> {
        self.conv1d(signal, kernel, stride, dilation, 0, false)
    }

    /// Same as [`Tape::conv1d_causal`] but output `t` is anchored at input
    /// `t*stride + offset` (`offset < stride`), i.e. at a later phase within
    /// each stride block.
    pub fn conv1d_causal_offset(
        &mut self,
        signal: Var,
        kernel: Var,
        stride: usize,
        dilation: usize,
        offset: usize,
    ) -> Result<Var> {
        self.conv1d(signal, kernel, stride, dilation, offset, false)
    }

    /// Causal convolution with one `[K]` kernel shared by every channel, each
    /// channel filtered independently.
    pub fn depthwise_conv1d(
        &mut self,
        signal: Var,
        kernel: Var,
        stride: usize,
        dilation: usize,
        offset: usize,
    ) -> Result<Var> {
        self.conv1d(signal, kernel, stride, dilation, offset, true)
    }

    fn conv1d(
        &mut self,
        signal: Var,
        kernel: Var,
        stride: usize,
        dilation: usize,
        offset: usize,
        depthwise: bool,
    ) -> Result<Var> {
        if stride == 0 || dilation == 0 {
            return Err(TensorError::param(
                "conv1d",
                format!("stride {stride} and dilation {dilation} must be positive"),
            ));
        }
        if offset >= stride {
            return Err(TensorError::param(
                "conv1d",
                format!("offset {offset} must be below stride {stride}"),
            ));
        }
        let (ns, nk) = (self.node(signal), self.node(kernel));
        let (batch, len, c_in) = match ns.shape.as_slice() {
            [t, c] => (1, *t, *c),
            [b, t, c] => (*b, *t, *c),
            _ => return Err(TensorError::dim("conv1d", &ns.shape, &nk.shape)),
        };
        let (taps, c_out) = match (depthwise, nk.shape.as_slice()) {
            (true, [k]) => (*k, c_in),
            (false, [k, ci, co]) if *ci == c_in => (*k, *co),
            _ => return Err(TensorError::dim("conv1d", &ns.shape, &nk.shape)),
        };
        let geom = ConvGeom {
            batch,
            len,
            c_in,
            c_out,
            taps,
            len_out: len.div_ceil(stride),
            stride,
            dilation,
            offset,
            depthwise,
        };
        let x = &ns.value;
        let k = &nk.value;
        let mut out = vec![0.0; batch * geom.len_out * c_out];
        for b in 0..batch {
            for t in 0..geom.len_out {
                let orow = (b * geom.len_out + t) * c_out;
                for j in 0..taps {
                    let Some(src) = geom.source(t, j) else { continue };
                    let irow = (b * len + src) * c_in;
                    if depthwise {
                        for c in 0..c_in {
                            out[orow + c] += k[j] * x[irow + c];
                        }
                    } else {
                        for ci in 0..c_in {
                            let xv = x[irow + ci];
                            let krow = (j * c_in + ci) * c_out;
                            for co in 0..c_out {
                                out[orow + co] += k[krow + co] * xv;
                            }
                        }
                    }
                }
            }
        }
        let mut shape = ns.shape.clone();
        let rank = shape.len();
        shape[rank - 2] = geom.len_out;
        shape[rank - 1] = c_out;
        let tracked = ns.tracked || nk.tracked;
        Ok(self.push(
            shape,
            out,
            Op::Conv1d {
                signal,
                kernel,
                geom,
            },
            tracked,
        ))
    }

    /// For every position `t` of a `[B, T, D]` (or `[T, D]`) sequence, the
    /// trailing window `t-W+1..=t`, zero-filled before the start:
    /// output `[B*T, W, D]`.
    pub fn causal_unfold(&mut self, a: Var, window: usize) -> Result<Var> {
        if window == 0 {
            return Err(TensorError::param("causal_unfold", "window must be positive"));
        }
        let n = self.node(a);
        let (batch, len, dim) = match n.shape.as_slice() {
            [t, d] => (1, *t, *d),
            [b, t, d] => (*b, *t, *d),
            s => return Err(TensorError::dim("causal_unfold", s, &[window])),
        };
        let mut value = vec![0.0; batch * len * window * dim];
        for b in 0..batch {
            for t in 0..len {
                let orow = (b * len + t) * window;
                for j in 0..window {
                    let back = window - 1 - j;
                    if back > t {
                        continue;
                    }
                    let src = (b * len + t - back) * dim;
                    let dst = (orow + j) * dim;
                    value[dst..dst + dim].copy_from_slice(&n.value[src..src + dim]);
                }
            }
        }
        let tracked = n.tracked;
        Ok(self.push(
            vec![batch * len, window, dim],
            value,
            Op::CausalUnfold { input: a, window },
            tracked,
        ))
    }

    // ---- sampling ----------------------------------------------------

    /// Reparameterised Gaussian draw `mean + exp(log_std) * noise`; the noise
    /// is data, so gradients reach only `mean` and `log_std`.
    pub fn gaussian_rsample(&mut self, mean: Var, log_std: Var, noise: &Tensor) -> Result<Var> {
        let (nm, ns) = (self.node(mean), self.node(log_std));
        if nm.shape != ns.shape {
            return Err(TensorError::dim("gaussian_rsample", &nm.shape, &ns.shape));
        }
        if nm.shape != noise.shape() {
            return Err(TensorError::dim("gaussian_rsample", &nm.shape, noise.shape()));
        }
        let value = nm
            .value
            .iter()
            .zip(&ns.value)
            .zip(noise.data())
            .map(|((m, s), e)| m + s.exp() * e)
            .collect();
        let (shape, tracked) = (nm.shape.clone(), nm.tracked || ns.tracked);
        Ok(self.push(
            shape,
            value,
            Op::Rsample {
                mean,
                log_std,
                noise: noise.data().to_vec(),
            },
            tracked,
        ))
    }

    // ---- backward ----------------------------------------------------

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            params: self.params.iter().copied().collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let tracked = |v: Var| self.nodes[v.0].tracked;
        match &node.op {
            Op::Leaf => {}
            Op::Unary(a, kind) => {
                if !tracked(*a) {
                    return;
                }
                let x = &self.nodes[a.0].value;
                let y = &node.value;
                let da: Vec<f64> = match *kind {
                    Unary::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Unary::Relu => g
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Unary::Softplus => g.iter().zip(x).map(|(g, x)| g * sigmoid(*x)).collect(),
                    Unary::Exp => g.iter().zip(y).map(|(g, y)| g * y).collect(),
                    Unary::Log => g.iter().zip(x).map(|(g, x)| g / x).collect(),
                    Unary::Square => g.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect(),
                    Unary::Neg => g.iter().map(|g| -g).collect(),
                    Unary::Scale(c) => g.iter().map(|g| c * g).collect(),
                    Unary::AddScalar(_) => g.to_vec(),
                    Unary::Clamp(lo, hi) => g
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                        .collect(),
                };
                add_into(&mut grads[a.0], &da);
            }
            Op::Binary(a, b, kind) => {
                let (xa, xb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let n = g.len();
                let at = |i: usize, v: &Vec<f64>| if v.len() == 1 { v[0] } else { v[i] };
                let mut da = vec![0.0; xa.len()];
                let mut db = vec![0.0; xb.len()];
                for i in 0..n {
                    let (x, y) = (at(i, xa), at(i, xb));
                    let (ga, gb) = match kind {
                        Binary::Add => (g[i], g[i]),
                        Binary::Sub => (g[i], -g[i]),
                        Binary::Mul => (g[i] * y, g[i] * x),
                        Binary::Min => {
                            if x <= y {
                                (g[i], 0.0)
                            } else {
                                (0.0, g[i])
                            }
                        }
                    };
                    da[if xa.len() == 1 { 0 } else { i }] += ga;
                    db[if xb.len() == 1 { 0 } else { i }] += gb;
                }
                if tracked(*a) {
                    add_into(&mut grads[a.0], &da);
                }
                if tracked(*b) {
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::AddRow(a, bias) => {
                if tracked(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if tracked(*bias) {
                    let cols = self.nodes[bias.0].value.len();
                    let mut db = vec![0.0; cols];
                    for row in g.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    add_into(&mut grads[bias.0], &db);
                }
            }
            Op::MatMul(a, b) => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
                if tracked(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &nb.value[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    add_into(&mut grads[a.0], &da);
                }
                if tracked(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = na.value[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            drow.iter_mut().zip(grow).for_each(|(d, x)| *d += av * x);
                        }
                    }
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Sum(a) => {
                if tracked(*a) {
                    let len = self.nodes[a.0].value.len();
                    add_into(&mut grads[a.0], &vec![g[0]; len]);
                }
            }
            Op::SumLast(a) => {
                if tracked(*a) {
                    let na = &self.nodes[a.0];
                    let cols = *na.shape.last().unwrap_or(&1);
                    let da: Vec<f64> = g
                        .iter()
                        .flat_map(|&x| std::iter::repeat_n(x, cols))
                        .collect();
                    add_into(&mut grads[a.0], &da);
                }
            }
            Op::Reshape(a) => {
                if tracked(*a) {
                    add_into(&mut grads[a.0], g);
                }
            }
            Op::Slice { input, axis, start } => {
                if !tracked(*input) {
                    return;
                }
                let ni = &self.nodes[input.0];
                let (outer, len, inner) = split_axis(&ni.shape, *axis);
                let width = node.shape[*axis];
                let mut da = vec![0.0; ni.value.len()];
                for o in 0..outer {
                    let src = &g[o * width * inner..(o + 1) * width * inner];
                    let base = o * len * inner + start * inner;
                    da[base..base + width * inner].copy_from_slice(src);
                }
                add_into(&mut grads[input.0], &da);
            }
            Op::Concat { inputs, axis } => {
                let total = node.shape[*axis];
                let (outer, _, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let nv = &self.nodes[v.0];
                    let len = nv.shape[*axis];
                    if tracked(v) {
                        let mut dv = Vec::with_capacity(nv.value.len());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            dv.extend_from_slice(&g[base..base + len * inner]);
                        }
                        add_into(&mut grads[v.0], &dv);
                    }
                    offset += len;
                }
            }
            Op::Conv1d {
                signal,
                kernel,
                geom,
            } => {
                let x = &self.nodes[signal.0].value;
                let k = &self.nodes[kernel.0].value;
                let (ts, tk) = (tracked(*signal), tracked(*kernel));
                let mut dx = if ts { vec![0.0; x.len()] } else { Vec::new() };
                let mut dk = if tk { vec![0.0; k.len()] } else { Vec::new() };
                let (c_in, c_out) = (geom.c_in, geom.c_out);
                for b in 0..geom.batch {
                    for t in 0..geom.len_out {
                        let orow = (b * geom.len_out + t) * c_out;
                        let gout = &g[orow..orow + c_out];
                        for j in 0..geom.taps {
                            let Some(src) = geom.source(t, j) else { continue };
                            let irow = (b * geom.len + src) * c_in;
                            if geom.depthwise {
                                for c in 0..c_in {
                                    if ts {
                                        dx[irow + c] += gout[c] * k[j];
                                    }
                                    if tk {
                                        dk[j] += gout[c] * x[irow + c];
                                    }
                                }
                            } else {
                                for ci in 0..c_in {
                                    let krow = (j * c_in + ci) * c_out;
                                    let xv = x[irow + ci];
                                    let mut acc = 0.0;
                                    for co in 0..c_out {
                                        acc += gout[co] * k[krow + co];
                                        if tk {
                                            dk[krow + co] += gout[co] * xv;
                                        }
                                    }
                                    if ts {
                                        dx[irow + ci] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
                if ts {
                    add_into(&mut grads[signal.0], &dx);
                }
                if tk {
                    add_into(&mut grads[kernel.0], &dk);
                }
            }
            Op::CausalUnfold { input, window } => {
                if !tracked(*input) {
                    return;
                }
                let ni = &self.nodes[input.0];
                let (batch, len, dim) = match ni.shape.as_slice() {
                    [t, d] => (1, *t, *d),
                    [b, t, d] => (*b, *t, *d),
                    _ => unreachable!("validated in forward"),
                };
                let mut da = vec![0.0; ni.value.len()];
                for b in 0..batch {
                    for t in 0..len {
                        let orow = (b * len + t) * window;
                        for j in 0..*window {
                            let back = window - 1 - j;
                            if back > t {
                                continue;
                            }
                            let dst = (b * len + t - back) * dim;
                            let src = (orow + j) * dim;
                            for d in 0..dim {
                                da[dst + d] += g[src + d];
                            }
                        }
                    }
                }
                add_into(&mut grads[input.0], &da);
            }
            Op::Rsample {
                mean,
                log_std,
                noise,
            } => {
                if tracked(*mean) {
                    add_into(&mut grads[mean.0], g);
                }
                if tracked(*log_std) {
                    let s = &self.nodes[log_std.0].value;
                    let d: Vec<f64> = g
                        .iter()
                        .zip(s)
                        .zip(noise)
                        .map(|((g, s), e)| g * s.exp() * e)
                        .collect();
                    add_into(&mut grads[log_std.0], &d);
                }
            }
        }
    }
}

/// Plain `[m,k] x [k,n]` product.
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            crow.iter_mut().zip(brow).for_each(|(c, b)| *c += av * b);
        }
    }
    c
}
