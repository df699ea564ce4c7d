//! Tape gradients against central differences, plus causality and
//! determinism properties.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wisdom_tensor::check::gradcheck;
use wisdom_tensor::{Activation, Mlp, Params, Tape, Tensor};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values kept at least `gap` away from zero, for ops with a kink
/// at the origin.
fn away_from_zero(shape: &[usize], gap: f64, r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = r.random_range(gap..1.5);
            if r.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn weights(r: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::uniform(&[n], 1.0, r)
}

/// Reduces to a scalar through fixed random weights so every output entry
/// gets a distinct cotangent.
fn weighted_sum(tape: &mut Tape, y: wisdom_tensor::Var, w: &Tensor) -> wisdom_tensor::Result<wisdom_tensor::Var> {
    let shape = tape.shape(y).to_vec();
    let wv = tape.constant(&w.clone().reshape(&shape)?);
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_grad(seed in any::<u64>(), m in 1usize..4, k in 1usize..5, n in 1usize..4) {
        let mut r = rng(seed);
        let a = Tensor::uniform(&[m, k], 1.0, &mut r);
        let b = Tensor::uniform(&[k, n], 1.0, &mut r);
        let w = weights(&mut r, m * n);
        let err = gradcheck(&[a, b], H, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, &w)
        }).unwrap();
        prop_assert!(err < TOL, "rel err {err}");
    }

    #[test]
    fn unary_grads(seed in any::<u64>(), len in 1usize..8) {
        let mut r = rng(seed);
        let x = away_from_zero(&[len], 1e-3, &mut r);
        let pos = Tensor::new(&[len], x.data().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
        let w = weights(&mut r, len);
        type OpFn = fn(&mut Tape, wisdom_tensor::Var) -> wisdom_tensor::Result<wisdom_tensor::Var>;
        let ops: [(&str, OpFn); 9] = [
            ("tanh", |t, v| t.tanh(v)),
            ("relu", |t, v| t.relu(v)),
            ("softplus", |t, v| t.softplus(v)),
            ("exp", |t, v| t.exp(v)),
            ("square", |t, v| t.square(v)),
            ("neg", |t, v| t.neg(v)),
            ("scale", |t, v| t.scale(v, -2.5)),
            ("add_scalar", |t, v| t.add_scalar(v, 0.75)),
            ("clamp", |t, v| t.clamp(v, -0.5, 0.5)),
        ];
        for (name, op) in ops {
            let err = gradcheck(std::slice::from_ref(&x), H, |t, v| {
                let y = op(t, v[0])?;
                weighted_sum(t, y, &w)
            }).unwrap();
            prop_assert!(err < TOL, "{name}: rel err {err}");
        }
        let err = gradcheck(&[pos], H, |t, v| {
            let y = t.log(v[0])?;
            weighted_sum(t, y, &w)
        }).unwrap();
        prop_assert!(err < TOL, "log: rel err {err}");
    }

    #[test]
    fn binary_grads(seed in any::<u64>(), len in 1usize..8, scalar_rhs in any::<bool>()) {
        let mut r = rng(seed);
        let a = Tensor::uniform(&[len], 1.0, &mut r);
        let b = if scalar_rhs {
            Tensor::uniform(&[1], 1.0, &mut r)
        } else {
            Tensor::uniform(&[len], 1.0, &mut r)
        };
        let w = weights(&mut r, len);
        for kind in 0..4 {
            let err = gradcheck(&[a.clone(), b.clone()], H, |t, v| {
                let y = match kind {
                    0 => t.add(v[0], v[1])?,
                    1 => t.sub(v[0], v[1])?,
                    2 => t.mul(v[0], v[1])?,
                    _ => t.minimum(v[0], v[1])?,
                };
                weighted_sum(t, y, &w)
            }).unwrap();
            prop_assert!(err < TOL, "binary kind {kind}: rel err {err}");
        }
    }

    #[test]
    fn reduction_and_shape_grads(seed in any::<u64>(), rows in 1usize..4, cols in 2usize..5) {
        let mut r = rng(seed);
        let x = Tensor::uniform(&[rows, cols], 1.0, &mut r);
        let bias = Tensor::uniform(&[cols], 1.0, &mut r);
        let w_rows = weights(&mut r, rows);
        let w_full = weights(&mut r, rows * cols);
        let err = gradcheck(&[x.clone(), bias], H, |t, v| {
            let y = t.add_row(v[0], v[1])?;
            let s = t.sum_last(y)?;
            weighted_sum(t, s, &w_rows)
        }).unwrap();
        prop_assert!(err < TOL, "add_row/sum_last: {err}");

        let err = gradcheck(std::slice::from_ref(&x), H, |t, v| {
            let a = t.slice(v[0], 1, 0, 1)?;
            let b = t.slice(v[0], 1, 1, cols)?;
            let y = t.concat(&[b, a], 1)?;
            let y = t.reshape(y, &[rows * cols])?;
            let y = weighted_sum(t, y, &w_full)?;
            let sq = t.square(y)?;
            t.mean(sq)
        }).unwrap();
        prop_assert!(err < TOL, "slice/concat/reshape: {err}");
    }

    #[test]
    fn conv_grads(
        seed in any::<u64>(),
        len in 1usize..10,
        c_in in 1usize..3,
        c_out in 1usize..3,
        taps in 1usize..4,
        stride in 1usize..4,
        dilation in 1usize..3,
        batched in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let offset = r.random_range(0..stride);
        let shape: Vec<usize> = if batched { vec![2, len, c_in] } else { vec![len, c_in] };
        let x = Tensor::uniform(&shape, 1.0, &mut r);
        let k = Tensor::uniform(&[taps, c_in, c_out], 1.0, &mut r);
        let kd = Tensor::uniform(&[taps], 1.0, &mut r);
        let batch = if batched { 2 } else { 1 };
        let out_n = batch * len.div_ceil(stride);
        let w = weights(&mut r, out_n * c_out);
        let err = gradcheck(&[x.clone(), k], H, |t, v| {
            let y = t.conv1d_causal_offset(v[0], v[1], stride, dilation, offset)?;
            weighted_sum(t, y, &w)
        }).unwrap();
        prop_assert!(err < TOL, "conv1d: {err}");
        let wd = weights(&mut r, out_n * c_in);
        let err = gradcheck(&[x, kd], H, |t, v| {
            let y = t.depthwise_conv1d(v[0], v[1], stride, dilation, offset)?;
            weighted_sum(t, y, &wd)
        }).unwrap();
        prop_assert!(err < TOL, "depthwise: {err}");
    }

    #[test]
    fn unfold_grad(seed in any::<u64>(), len in 1usize..7, dim in 1usize..3, window in 1usize..5) {
        let mut r = rng(seed);
        let x = Tensor::uniform(&[2, len, dim], 1.0, &mut r);
        let w = weights(&mut r, 2 * len * window * dim);
        let err = gradcheck(&[x], H, |t, v| {
            let y = t.causal_unfold(v[0], window)?;
            weighted_sum(t, y, &w)
        }).unwrap();
        prop_assert!(err < TOL, "causal_unfold: {err}");
    }

    #[test]
    fn rsample_grad(seed in any::<u64>(), len in 1usize..6) {
        let mut r = rng(seed);
        let m = Tensor::uniform(&[len], 1.0, &mut r);
        let s = Tensor::uniform(&[len], 1.0, &mut r);
        let noise = Tensor::standard_normal(&[len], &mut r);
        let w = weights(&mut r, len);
        let err = gradcheck(&[m, s], H, |t, v| {
            let y = t.gaussian_rsample(v[0], v[1], &noise)?;
            weighted_sum(t, y, &w)
        }).unwrap();
        prop_assert!(err < TOL, "rsample: {err}");
    }

    #[test]
    fn composite_conv_tanh_linear_mse(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Tensor::uniform(&[8, 2], 1.0, &mut r);
        let k = Tensor::uniform(&[2, 2, 3], 1.0, &mut r);
        let w = Tensor::uniform(&[3, 1], 1.0, &mut r);
        let b = Tensor::uniform(&[1], 1.0, &mut r);
        let target = Tensor::uniform(&[4, 1], 1.0, &mut r);
        let err = gradcheck(&[x, k, w, b], H, |t, v| {
            let h = t.conv1d_causal(v[0], v[1], 2, 1)?;
            let h = t.tanh(h)?;
            let y = t.matmul(h, v[2])?;
            let y = t.add_row(y, v[3])?;
            let tv = t.constant(&target);
            let d = t.sub(y, tv)?;
            let sq = t.square(d)?;
            t.mean(sq)
        }).unwrap();
        prop_assert!(err < TOL, "composite: {err}");
    }

    #[test]
    fn conv_is_causal(
        seed in any::<u64>(),
        len in 2usize..16,
        stride in 1usize..4,
        dilation in 1usize..3,
        taps in 1usize..4,
    ) {
        let mut r = rng(seed);
        let x = Tensor::uniform(&[len, 2], 1.0, &mut r);
        let k = Tensor::uniform(&[taps, 2, 2], 1.0, &mut r);
        let pos = r.random_range(0..len);
        let mut x2 = x.clone();
        for c in 0..2 {
            x2.data_mut()[pos * 2 + c] += 10.0;
        }
        let mut tape = Tape::new();
        let kv = tape.constant(&k);
        let xa = tape.constant(&x);
        let xb = tape.constant(&x2);
        let ya = tape.conv1d_causal(xa, kv, stride, dilation).unwrap();
        let yb = tape.conv1d_causal(xb, kv, stride, dilation).unwrap();
        for t in 0..len.div_ceil(stride) {
            if t * stride < pos {
                prop_assert_eq!(&tape.value(ya)[t * 2..t * 2 + 2], &tape.value(yb)[t * 2..t * 2 + 2]);
            }
        }
    }

    #[test]
    fn forward_stays_finite(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Tensor::uniform(&[5, 3], 50.0, &mut r);
        let net = Mlp::new(&[3, 8, 2], Activation::Tanh, &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let y = net.forward(&mut tape, xv).unwrap();
        let sp = tape.softplus(y).unwrap();
        let e = tape.clamp(sp, -10.0, 2.0).unwrap();
        let e = tape.exp(e).unwrap();
        prop_assert!(tape.value(e).iter().all(|v| v.is_finite()));
    }
}

#[test]
fn identical_passes_give_identical_grads() {
    let run = || {
        let mut r = rng(7);
        let mut net = Mlp::new(&[4, 16, 16, 1], Activation::Relu, &mut r);
        let x = Tensor::standard_normal(&[32, 4], &mut r);
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let y = net.forward(&mut tape, xv).unwrap();
        let sq = tape.square(y).unwrap();
        let loss = tape.mean(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        g.accumulate(net.params_mut());
        net.params()
            .iter()
            .flat_map(|p| p.grad().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect::<Vec<u64>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn mlp_apply_matches_tape() {
    let mut r = rng(3);
    let net = Mlp::new(&[3, 5, 5, 2], Activation::Relu, &mut r);
    let x = Tensor::uniform(&[1, 3], 1.0, &mut r);
    let mut tape = Tape::new();
    let xv = tape.constant(&x);
    let y = net.forward(&mut tape, xv).unwrap();
    assert_eq!(tape.value(y), net.apply(x.data()).as_slice());
}
