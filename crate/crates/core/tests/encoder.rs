use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wisdom::encoder::{encoder_input, kl_loss, kl_value, ContextEncoder, LatentSequence};
use wisdom::envs::Transition;
use wisdom::norm::RunningNorm;
use wisdom_tensor::check::gradcheck;
use wisdom_tensor::{Tape, Tensor};

fn transition(seed: u64) -> Transition {
    let x = seed as f64;
    Transition {
        s: vec![x.sin(), x.cos()],
        a: vec![(0.3 * x).sin()],
        s_next: vec![(x + 1.0).sin(), (x + 1.0).cos()],
        r: -x.sin().abs(),
        done: false,
        truncated: false,
        omega: vec![1.0],
        step: seed as usize,
        segment: 0,
    }
}

fn encoder(seed: u64) -> ContextEncoder {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    ContextEncoder::new(2, 1, &[32, 32], 5, &mut r)
}

#[test]
fn input_layout() {
    let tr = transition(3);
    let x = encoder_input(&tr);
    assert_eq!(x.len(), 2 * 2 + 1 + 1);
    assert_eq!(x[3], tr.s_next[0] - tr.s[0]);
    assert_eq!(x[5], tr.r);
}

#[test]
fn zero_noise_sample_is_mean_and_shape_is_l_by_5() {
    let enc = encoder(0);
    let window: Vec<Transition> = (0..64).map(transition).collect();
    let norm = RunningNorm::new(enc.input_dim(), false);
    let z = enc.encode(&window, &norm, &Tensor::zeros(&[64, 5])).unwrap();
    assert_eq!(z.sample, z.mean);
    assert_eq!(z.mean.shape(), &[64, 5]);
    assert!(z.log_std.data().iter().all(|v| (-10.0..=2.0).contains(v)));
}

#[test]
fn identical_transitions_give_identical_rows() {
    let enc = encoder(1);
    let window = vec![transition(7), transition(2), transition(7)];
    let norm = RunningNorm::new(enc.input_dim(), false);
    let z = enc.encode(&window, &norm, &Tensor::zeros(&[3, 5])).unwrap();
    assert_eq!(z.mean.row(0), z.mean.row(2));
    assert_eq!(z.log_std.row(0), z.log_std.row(2));
}

#[test]
fn mismatched_transition_dims_fail() {
    let enc = encoder(1);
    let mut bad = transition(0);
    bad.s.push(0.0);
    bad.s_next.push(0.0);
    let norm = RunningNorm::new(enc.input_dim(), false);
    assert!(enc.encode(&[bad], &norm, &Tensor::zeros(&[1, 5])).is_err());
}

#[test]
fn tape_free_mean_matches_encode() {
    let enc = encoder(4);
    let window: Vec<Transition> = (0..5).map(transition).collect();
    let norm = RunningNorm::new(enc.input_dim(), false);
    let z = enc.encode(&window, &norm, &Tensor::zeros(&[5, 5])).unwrap();
    for (i, tr) in window.iter().enumerate() {
        assert_eq!(enc.mean_row(&encoder_input(tr)), z.mean.row(i));
    }
}

fn latent(mean: f64, log_std: f64, rows: usize) -> LatentSequence {
    let m = Tensor::full(&[rows, 5], mean);
    LatentSequence {
        sample: m.clone(),
        mean: m,
        log_std: Tensor::full(&[rows, 5], log_std),
    }
}

#[test]
fn kl_examples() {
    assert_eq!(kl_value(&latent(0.0, 0.0, 4)).unwrap(), 0.0);
    assert!((kl_value(&latent(1.0, 0.0, 4)).unwrap() - 2.5).abs() < 1e-12);
}

#[test]
fn kl_row_mask_ignores_masked_rows() {
    let mut mean = Tensor::zeros(&[2, 5]);
    mean.data_mut()[5..].fill(3.0);
    let mut tape = Tape::new();
    let m = tape.constant(&mean);
    let s = tape.constant(&Tensor::zeros(&[2, 5]));
    let mask = tape.input(&[2, 1], vec![1.0, 0.0]).unwrap();
    let kl = kl_loss(&mut tape, m, s, Some(mask)).unwrap();
    assert_eq!(tape.item(kl), 0.0);
}

#[test]
fn running_norm_standardises() {
    let mut n = RunningNorm::new(1, true);
    for v in [1.0, 2.0, 3.0, 4.0] {
        n.update(&[v]);
    }
    let out = n.apply(&[2.5]);
    assert!(out[0].abs() < 1e-12);
    let off = RunningNorm::new(1, false);
    assert_eq!(off.apply(&[7.0]), vec![7.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kl_gradient(seed in any::<u64>(), rows in 1usize..5) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = Tensor::uniform(&[rows, 5], 1.5, &mut r);
        let s = Tensor::uniform(&[rows, 5], 1.0, &mut r);
        let err = gradcheck(&[m, s], 1e-5, |t, v| Ok(kl_loss(t, v[0], v[1], None).unwrap())).unwrap();
        prop_assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn kl_non_negative(seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let l = LatentSequence {
            mean: Tensor::uniform(&[3, 5], 3.0, &mut r),
            log_std: Tensor::uniform(&[3, 5], 3.0, &mut r),
            sample: Tensor::zeros(&[3, 5]),
        };
        prop_assert!(kl_value(&l).unwrap() >= 0.0);
    }

    #[test]
    fn encoding_is_permutation_equivariant(seed in any::<u64>()) {
        let enc = encoder(seed);
        let window: Vec<Transition> = (0..6).map(|i| transition(seed.wrapping_add(i) % 1000)).collect();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let shuffled: Vec<Transition> = perm.iter().map(|&i| window[i].clone()).collect();
        let norm = RunningNorm::new(enc.input_dim(), false);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let noise = Tensor::standard_normal(&[6, 5], &mut r);
        let noise_perm = Tensor::from_rows(&perm.iter().map(|&i| noise.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let a = enc.encode(&window, &norm, &noise).unwrap();
        let b = enc.encode(&shuffled, &norm, &noise_perm).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(a.sample.row(i), b.sample.row(k));
        }
    }
}
