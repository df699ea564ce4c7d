use wisdom::config::{Ablation, ExperimentConfig};
use wisdom::envs::EnvKind;
use wisdom::metrics::{read_metrics, read_table, write_metrics, write_table, MetricsRecord};
use wisdom::Error;

#[test]
fn defaults_validate_and_round_trip() {
    let cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    let text = cfg.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
}

#[test]
fn partial_toml_fills_defaults() {
    let cfg = ExperimentConfig::from_toml(
        r#"
seed = 7
ablation = "no-wavelet-td"
[env]
kind = "oscdamp"
[train]
epochs = 3
"#,
    )
    .unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.ablation, Ablation::NoWaveletTd);
    assert_eq!(cfg.env.kind, EnvKind::OscDamp);
    assert_eq!(cfg.train.epochs, 3);
    assert_eq!(cfg.train.lr, 3e-4);
    assert_eq!(cfg.alpha_y(), 0.0);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(matches!(
        ExperimentConfig::from_toml("[train]\nepochz = 3\n"),
        Err(Error::Config(_))
    ));
}

#[test]
fn invalid_values_are_rejected() {
    let cases = [
        "[model]\nwindow = 3\nlevels = 2\n",
        "[model]\nlevels = 0\n",
        "[model]\nkeep_fraction = 0.0\n",
        "[model]\nfilter_taps = 3\n",
        "[train]\nlr = 0.0\n",
        "[train]\ntau = -1.0\n",
        "[train]\ngamma = 1.0\n",
        "[train]\nwavelet_gamma = -0.1\n",
        "[train]\nalpha_y = -1.0\n",
        "[train]\npolicy_batch = 0\n",
        "[train]\ndecoder_horizons = []\n",
        "[train]\ndecoder_horizons = [0]\n",
        "[train]\ndecoder_horizons = [17]\n",
        "[train]\ndecoder_reward_weight = -1.0\n",
        "[env.schedule]\nmean_period = 0.0\n",
    ];
    for c in cases {
        assert!(ExperimentConfig::from_toml(c).is_err(), "accepted {c:?}");
    }
}

#[test]
fn window_equal_to_two_pow_levels_is_allowed() {
    ExperimentConfig::from_toml("[model]\nwindow = 8\nlevels = 3\n").unwrap();
}

#[test]
fn paper_scale_restores_full_sizes() {
    let p = ExperimentConfig::default().paper_scale();
    assert_eq!(p.model.rl_hidden, vec![300, 300, 300]);
    assert_eq!(p.model.encoder_hidden, vec![200, 200, 200]);
    assert_eq!(p.train.repr_steps, 200);
    assert_eq!(p.train.policy_batch, 256);
    assert_eq!(p.train.buffer_capacity, 10_000_000);
    assert_eq!(p.train.lr, 3e-4);
    assert_eq!(p.train.tau, 5e-3);
    assert_eq!(p.model.latent_dim, 5);
    p.validate().unwrap();
}

#[test]
fn alpha_y_defaults_per_env() {
    let mut c = ExperimentConfig::default();
    assert_eq!(c.alpha_y(), 0.9);
    c.env.kind = EnvKind::GlucoSim;
    assert_eq!(c.alpha_y(), 0.1);
    c.train.alpha_y = Some(0.4);
    assert_eq!(c.alpha_y(), 0.4);
}

#[test]
fn ablation_names_parse_back() {
    for a in Ablation::ALL {
        assert_eq!(Ablation::parse(a.name()).unwrap(), a);
    }
    assert!(Ablation::parse("nope").is_err());
}

fn record(epoch: usize) -> MetricsRecord {
    MetricsRecord {
        schema_version: wisdom::metrics::METRICS_SCHEMA_VERSION,
        epoch,
        env_steps: 800 * (epoch + 1),
        mean_eval_return: -1.0 / (epoch as f64 + 3.0),
        std_eval_return: 0.1,
        encoder_kl: 0.2,
        wavelet_td: 0.3,
        ar_loss: 0.4,
        critic_loss: 0.5,
        actor_loss: -0.6,
        alpha: 0.7,
        nonstationarity_degree: 0.9,
    }
}

#[test]
fn metrics_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let rows: Vec<_> = (0..4).map(record).collect();
    write_metrics(&path, &rows).unwrap();
    assert_eq!(read_metrics(&path).unwrap(), rows);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("schema_version,epoch,env_steps,mean_eval_return"));
}

#[test]
fn empty_metrics_still_have_a_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics(&path, &[]).unwrap();
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("schema_version"));
    assert!(read_metrics(&path).unwrap().is_empty());
}

#[test]
fn metrics_with_other_schema_version_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let mut r = record(0);
    r.schema_version = 99;
    write_metrics(&path, &[r]).unwrap();
    assert!(read_metrics(&path).is_err());
}

#[test]
fn table_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let header = vec!["step".to_string(), "x".to_string()];
    let rows = vec![vec![0.0, 0.1], vec![1.0, -2.5e-17]];
    write_table(&path, &header, &rows).unwrap();
    let (h, r) = read_table(&path).unwrap();
    assert_eq!(h, header);
    assert_eq!(r, rows);
}
