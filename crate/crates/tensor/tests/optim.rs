use wisdom_tensor::{soft_update, Adam, AdamConfig, Tensor};

#[test]
fn first_adam_step_moves_by_lr_against_gradient_sign() {
    let mut w = Tensor::new(&[3], vec![1.0, 1.0, 1.0]).unwrap().requires_grad();
    w.accumulate_grad(&[0.5, -2.0, 0.0]);
    let mut opt = Adam::new(AdamConfig::default());
    opt.step(&mut [&mut w]).unwrap();
    let d = w.data();
    assert!((d[0] - (1.0 - 3e-4)).abs() < 1e-10);
    assert!((d[1] - (1.0 + 3e-4)).abs() < 1e-10);
    assert_eq!(d[2], 1.0);
}

#[test]
fn adam_minimises_quadratic() {
    let mut w = Tensor::new(&[2], vec![3.0, -4.0]).unwrap().requires_grad();
    let mut opt = Adam::with_lr(0.05);
    for _ in 0..2000 {
        w.zero_grad();
        let g: Vec<f64> = w.data().iter().map(|x| 2.0 * x).collect();
        w.accumulate_grad(&g);
        opt.step(&mut [&mut w]).unwrap();
    }
    assert!(w.data().iter().all(|x| x.abs() < 1e-2), "{:?}", w.data());
}

#[test]
fn adam_rejects_changed_parameter_list() {
    let mut a = Tensor::zeros(&[2]).requires_grad();
    let mut b = Tensor::zeros(&[2]).requires_grad();
    let mut opt = Adam::with_lr(0.1);
    opt.step(&mut [&mut a]).unwrap();
    assert!(opt.step(&mut [&mut a, &mut b]).is_err());
}

#[test]
fn adam_state_restores_exactly() {
    let mut w1 = Tensor::new(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
    let mut opt1 = Adam::with_lr(0.1);
    w1.accumulate_grad(&[1.0, -1.0]);
    opt1.step(&mut [&mut w1]).unwrap();

    let (t, m, v) = opt1.state();
    let mut opt2 = Adam::with_lr(0.1);
    opt2.restore(t, m.to_vec(), v.to_vec()).unwrap();
    let mut w2 = w1.clone();
    opt1.step(&mut [&mut w1]).unwrap();
    opt2.step(&mut [&mut w2]).unwrap();
    assert_eq!(w1.data(), w2.data());
}

#[test]
fn soft_update_is_exact_convex_combination() {
    let src = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    let mut tgt = Tensor::new(&[3], vec![4.0, 0.0, -1.0]).unwrap();
    let old = tgt.clone();
    let tau = 5e-3;
    soft_update(&mut [&mut tgt], &[&src], tau).unwrap();
    for i in 0..3 {
        assert_eq!(tgt.data()[i], tau * src.data()[i] + (1.0 - tau) * old.data()[i]);
    }
}
