use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wisdom::envs::{
    glucose_reward, make_env, make_schedule, nonstationarity_degree, sample_duration, Env,
    EnvConfig, EnvKind, GlucoSim, MealVariant, ObservationNoise, OscDamp, Patient,
    ScheduleParams, Segment, TaskSchedule, VelTrack,
};
use wisdom::signals::{mean, std_dev};
use wisdom::Error;

fn params(mean_period: f64, period_std: f64) -> ScheduleParams {
    ScheduleParams {
        mean_period,
        period_std,
        min_period: 10,
    }
}

fn constant_omega(_: &[Vec<f64>], _: &mut ChaCha8Rng) -> Vec<f64> {
    vec![1.0]
}

fn equal_segments(k: usize, d: usize) -> TaskSchedule {
    TaskSchedule::from_segments(
        (0..k)
            .map(|_| Segment {
                omega: vec![0.0],
                duration: d,
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn degenerate_schedule_has_equal_segments() {
    let s = make_schedule(180, &params(60.0, 0.0), constant_omega, 3).unwrap();
    assert_eq!(s.durations(), vec![60, 60, 60]);
}

#[test]
fn schedule_is_deterministic_per_seed() {
    let sampler = |_: &[Vec<f64>], r: &mut ChaCha8Rng| vec![r.random::<f64>()];
    let a = make_schedule(1000, &ScheduleParams::default(), sampler, 42).unwrap();
    let b = make_schedule(1000, &ScheduleParams::default(), sampler, 42).unwrap();
    let c = make_schedule(1000, &ScheduleParams::default(), sampler, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.total_steps() >= 1000);
}

#[test]
fn schedule_rejects_bad_params() {
    assert!(matches!(
        make_schedule(10, &params(0.0, 0.0), constant_omega, 0),
        Err(Error::Parameter(_))
    ));
    assert!(make_schedule(10, &params(60.0, 70.0), constant_omega, 0).is_err());
    assert!(make_schedule(0, &params(60.0, 20.0), constant_omega, 0).is_err());
}

#[test]
fn sampler_sees_history() {
    let sampler = |h: &[Vec<f64>], _: &mut ChaCha8Rng| vec![h.len() as f64];
    let s = make_schedule(500, &params(60.0, 0.0), sampler, 0).unwrap();
    for (i, seg) in s.segments.iter().enumerate() {
        assert_eq!(seg.omega, vec![i as f64]);
    }
}

#[test]
fn duration_statistics() {
    let p = ScheduleParams::default();
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let d: Vec<f64> = (0..10_000).map(|_| sample_duration(&p, &mut r) as f64).collect();
    assert!((mean(&d) - 60.0).abs() <= 1.0, "mean {}", mean(&d));
    assert!((std_dev(&d) - 20.0).abs() <= 1.0, "std {}", std_dev(&d));
    assert!(d.iter().all(|&x| x >= 10.0));
}

#[test]
fn degree_values() {
    assert_eq!(nonstationarity_degree(&equal_segments(1, 60)).unwrap(), 0.0);
    assert_eq!(nonstationarity_degree(&equal_segments(100, 60)).unwrap(), 0.99);
    let uneven = TaskSchedule::from_segments(vec![
        Segment {
            omega: vec![0.0],
            duration: 30,
        },
        Segment {
            omega: vec![0.0],
            duration: 90,
        },
    ])
    .unwrap();
    assert_eq!(nonstationarity_degree(&uneven).unwrap(), 0.5);
    let empty = TaskSchedule {
        segments: vec![],
        seed: 0,
    };
    assert!(nonstationarity_degree(&empty).is_err());
}

proptest! {
    #[test]
    fn degree_of_equal_segments(k in 1usize..200, d in 1usize..500) {
        let deg = nonstationarity_degree(&equal_segments(k, d)).unwrap();
        prop_assert_eq!(deg, (k as f64 - 1.0) / k as f64);
    }
}

#[test]
fn veltrack_rewards() {
    let mut env = VelTrack::new(100, params(60.0, 0.0), 0);
    let omega = env.state().true_omega[0];
    env.set_velocity(omega);
    assert_eq!(env.step(&[0.0]).r, 0.0);

    let sched = TaskSchedule::from_segments(vec![Segment {
        omega: vec![3.0],
        duration: 100,
    }])
    .unwrap();
    env.reset_with(sched);
    env.set_velocity(1.0);
    let tr = env.step(&[0.0]);
    assert_eq!(tr.r, -2.0);
    assert_eq!(tr.s, vec![1.0]);
}

#[test]
fn veltrack_clamps_and_counts() {
    let mut env = VelTrack::new(100, params(60.0, 20.0), 0);
    let tr = env.step(&[3.0]);
    assert_eq!(tr.a, vec![1.0]);
    assert!((tr.s_next[0] - 0.2).abs() < 1e-15);
    assert_eq!(env.clamp_warnings(), 1);
    for _ in 0..60 {
        env.step(&[1.0]);
    }
    assert_eq!(env.state().observation, vec![5.0]);
}

#[test]
fn veltrack_greedy_oracle_tracks_target() {
    let mut env = VelTrack::new(800, ScheduleParams::default(), 9);
    env.reset();
    let mut settled = Vec::new();
    let mut since_change = 0;
    let mut last_seg = usize::MAX;
    for _ in 0..800 {
        let st = env.state();
        if st.current_segment != last_seg {
            since_change = 0;
            last_seg = st.current_segment;
        }
        let a = ((st.true_omega[0] - st.observation[0]) / 0.2).clamp(-1.0, 1.0);
        let tr = env.step(&[a]);
        if since_change >= 10 {
            settled.push(tr.r);
        }
        since_change += 1;
    }
    assert!(mean(&settled) > -0.2, "{}", mean(&settled));
}

#[test]
fn oscdamp_examples() {
    let mut env = OscDamp::new(800, ScheduleParams::default(), 0);
    env.set_state(0.0, 0.0);
    let tr = env.step(&[0.0]);
    assert_eq!(tr.r, 0.0);
    assert_eq!(tr.s_next, vec![0.0, 0.0]);

    env.set_state(1.0, 0.0);
    assert_eq!(env.step(&[0.0]).r, -1.0);
}

#[test]
fn oscdamp_decays_for_every_damping() {
    for w in [0.85, 0.9, 0.95, 1.0] {
        let mut env = OscDamp::new(400, ScheduleParams::default(), 0);
        let sched = TaskSchedule::from_segments(vec![Segment {
            omega: vec![w],
            duration: 400,
        }])
        .unwrap();
        env.reset_with(sched);
        env.set_state(1.0, 0.0);
        for _ in 0..200 {
            env.step(&[0.0]);
        }
        assert!(env.state().observation[0].abs() < 1.0, "damping {w}");
    }
}

#[test]
fn oscdamp_segments_always_change() {
    let env = OscDamp::new(5000, ScheduleParams::default(), 4);
    let s = env.schedule();
    for pair in s.segments.windows(2) {
        assert_ne!(pair[0].omega, pair[1].omega);
    }
}

#[test]
fn glucose_reward_table() {
    assert_eq!(glucose_reward(120.0, 0.0), (50.0, false));
    assert_eq!(glucose_reward(60.0, 0.0), (-20.0, true));
    assert_eq!(glucose_reward(160.0, 1.0), (-1.0, false));
}

#[test]
fn glucose_rejects_bad_dose() {
    let mut env = GlucoSim::new(200, ScheduleParams::default(), Patient::Adult, MealVariant::Two, 0);
    assert!(matches!(env.step_dose(6), Err(Error::Parameter(_))));
    assert!(env.step_dose(5).is_ok());
}

#[test]
fn glucose_meals_follow_patient_range() {
    for (patient, lo) in [(Patient::Adult, 60.0), (Patient::Adolescent, 50.0)] {
        let env = GlucoSim::new(2000, ScheduleParams::default(), patient, MealVariant::One, 1);
        for seg in &env.schedule().segments {
            assert!(seg.omega[0] >= lo && seg.omega[0] <= 80.0);
            assert_eq!(seg.omega[1], 80.0);
        }
    }
}

#[test]
fn glucose_simple_controller_survives_a_day() {
    let mut env = GlucoSim::new(200, ScheduleParams::default(), Patient::Adult, MealVariant::Two, 5);
    let mut steps = 0;
    loop {
        let g = env.glucose();
        let dose = if g > 135.0 { 1 } else { 0 };
        let tr = env.step_dose(dose).unwrap();
        steps += 1;
        if tr.ends_episode() {
            assert!(!tr.done, "terminated at step {steps} with G {}", env.glucose());
            break;
        }
    }
    assert_eq!(steps, 200);
}

#[test]
fn noise_wrapper() {
    let base = || VelTrack::new(200, ScheduleParams::default(), 8);
    let mut plain = base();
    let mut zero = ObservationNoise::new(base(), 0.0, 1).unwrap();
    assert_eq!(plain.reset(), zero.reset());
    for i in 0..50 {
        let a = [((i as f64) * 0.37).sin()];
        assert_eq!(plain.step(&a), zero.step(&a));
    }
    assert!(ObservationNoise::new(base(), -1.0, 1).is_err());

    let mut plain = base();
    let mut noisy = ObservationNoise::new(base(), 1.0, 3).unwrap();
    let mut resid = Vec::new();
    let mut prev_next: Option<Vec<f64>> = None;
    for _ in 0..50 {
        plain.reset();
        noisy.reset();
        for _ in 0..200 {
            let a = [0.3];
            let (tp, tn) = (plain.step(&a), noisy.step(&a));
            resid.push(tn.s_next[0] - tp.s_next[0]);
            assert_eq!(tp.omega, tn.omega);
            assert_eq!(tp.r, tn.r);
            if let Some(p) = &prev_next {
                if tn.step > 0 {
                    assert_eq!(&tn.s, p);
                }
            }
            prev_next = Some(tn.s_next.clone());
        }
    }
    assert_eq!(resid.len(), 10_000);
    assert!((std_dev(&resid) - 1.0).abs() < 0.05);
}

#[test]
fn transitions_match_schedule_and_are_deterministic() {
    for kind in [EnvKind::VelTrack, EnvKind::OscDamp, EnvKind::GlucoSim] {
        let cfg = EnvConfig {
            kind,
            episode_len: kind.default_episode_len(),
            ..EnvConfig::default()
        };
        let roll = || {
            let mut env = make_env(&cfg, 77).unwrap();
            let mut out = Vec::new();
            let mut r = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..2 {
                env.reset();
                loop {
                    let a = [r.random_range(-1.0..1.0)];
                    let tr = env.step(&a);
                    let sched = env.schedule();
                    assert_eq!(tr.omega.as_slice(), sched.omega_at(tr.step));
                    assert_eq!(tr.segment, sched.segment_at(tr.step));
                    assert!(tr.r.is_finite());
                    let end = tr.ends_episode();
                    out.push(tr);
                    if end {
                        break;
                    }
                }
            }
            out
        };
        assert_eq!(roll(), roll(), "{kind:?}");
    }
}
