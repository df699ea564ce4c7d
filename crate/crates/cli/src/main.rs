use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use wisdom::case_study::{run_case_study, write_case_study, CaseStudySetup};
use wisdom::checkpoint;
use wisdom::config::{Ablation, ExperimentConfig};
use wisdom::envs::{make_env, EnvKind};
use wisdom::experiment::{resume_experiment, run_ablation_matrix, run_experiment};
use wisdom::metrics::write_transitions;
use wisdom::motivating::{decompose_csv, run_chirp, write_chirp, ChirpSetup};
use wisdom::sac::ActMode;
use wisdom::trainer::{eval_seed, evaluate_agent, rollout};
use wisdom::wavelet::FilterBank;

#[derive(Parser)]
#[command(name = "wisdom", version, about = "Wavelet task representations for non-stationary RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent from a TOML config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Full-size networks, batches and step counts.
        #[arg(long)]
        paper_scale: bool,
        /// full, no-wavelet-td, no-y-net, plain-sac, or `all` for the matrix.
        #[arg(long)]
        ablation: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Continue from `<out>/checkpoint`.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on held-out schedules.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        env: Option<String>,
        /// Comma-separated master seeds for the evaluation schedules.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 2)]
        trajectories: usize,
        /// Also write every evaluation transition to this CSV.
        #[arg(long)]
        transitions: Option<PathBuf>,
    },
    /// Wavelet coefficients of every column of a CSV file.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        /// Use the learned filters of a checkpoint instead of Haar.
        #[arg(long, conflicts_with = "haar_fixed")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        haar_fixed: bool,
        #[arg(long, default_value = "runs/decompose")]
        out: PathBuf,
    },
    /// Representation-only run on a scripted damping schedule.
    CaseStudy {
        #[arg(long, default_value = "runs/case_study")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Noisy staged chirp and its level-M Haar approximation.
    MotivatingExample {
        #[arg(long, default_value = "runs/motivating")]
        out: PathBuf,
    },
}

fn train(
    config: Option<PathBuf>,
    paper_scale: bool,
    ablation: Option<String>,
    seed: Option<u64>,
    out: PathBuf,
    resume: bool,
) -> Result<()> {
    if resume {
        let s = resume_experiment(&out).with_context(|| format!("resuming {}", out.display()))?;
        println!("{}", serde_json::to_string_pretty(&s)?);
        return Ok(());
    }
    let mut cfg = match &config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match ablation.as_deref() {
        Some("all") => {
            cfg.validate()?;
            for (a, s) in run_ablation_matrix(&cfg, &out)? {
                println!("{:<14} final {:.4}", a.name(), s.final_mean_eval_return);
            }
            return Ok(());
        }
        Some(name) => cfg.ablation = Ablation::parse(name)?,
        None => {}
    }
    cfg.validate()?;
    let s = run_experiment(cfg, &out)?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

fn eval(
    dir: PathBuf,
    env: Option<String>,
    seeds: Vec<u64>,
    n: usize,
    transitions: Option<PathBuf>,
) -> Result<()> {
    let trainer = checkpoint::load(&dir).with_context(|| format!("loading {}", dir.display()))?;
    let mut cfg = trainer.cfg.clone();
    if let Some(name) = env {
        let kind = EnvKind::parse(&name)?;
        if kind != cfg.env.kind {
            bail!("checkpoint was trained on {:?}, not {kind:?}", cfg.env.kind);
        }
    }
    println!("seed,mean_return,std_return,nonstationarity_degree");
    let mut episodes = Vec::new();
    for s in seeds {
        cfg.seed = s;
        let ev = evaluate_agent(&trainer.agent, &cfg, n)?;
        println!("{s},{},{},{}", ev.mean_return, ev.std_return, ev.degree);
        if transitions.is_some() {
            let mode = trainer.agent.context_mode(cfg.ablation)?;
            for j in 0..n {
                let mut env = make_env(&cfg.env, eval_seed(s, j))?;
                let (_, trs) = rollout(&trainer.agent, &mode, env.as_mut(), ActMode::Deterministic, None)?;
                episodes.push(trs);
            }
        }
    }
    if let Some(path) = transitions {
        write_transitions(&path, &episodes)?;
    }
    Ok(())
}

fn decompose(
    input: PathBuf,
    levels: usize,
    checkpoint_dir: Option<PathBuf>,
    out: PathBuf,
) -> Result<()> {
    let bank = match &checkpoint_dir {
        Some(dir) => {
            let t = checkpoint::load(dir).with_context(|| format!("loading {}", dir.display()))?;
            t.agent.repr.bank.clone()
        }
        None => FilterBank::haar(),
    };
    let stack = decompose_csv(&input, levels, &bank, &out)
        .with_context(|| format!("decomposing {}", input.display()))?;
    log::info!(
        "{} levels of {} samples written to {}",
        stack.levels,
        stack.original_length,
        out.display()
    );
    Ok(())
}

fn case_study(out: PathBuf, seeds: Vec<u64>) -> Result<()> {
    println!("seed,best_abs_corr");
    let mut total = 0.0;
    for &seed in &seeds {
        let setup = CaseStudySetup {
            seed,
            ..CaseStudySetup::default()
        };
        let run = run_case_study(&setup)?;
        write_case_study(&out.join(format!("seed{seed}")), &run)?;
        println!("{seed},{}", run.report.best_abs_corr);
        total += run.report.best_abs_corr;
    }
    if !seeds.is_empty() {
        println!("mean,{}", total / seeds.len() as f64);
    }
    Ok(())
}

fn motivating(out: PathBuf) -> Result<()> {
    let run = run_chirp(&ChirpSetup::default())?;
    write_chirp(&out, &run)?;
    println!("{}", serde_json::to_string_pretty(&run.report)?);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            paper_scale,
            ablation,
            seed,
            out,
            resume,
        } => train(config, paper_scale, ablation, seed, out, resume),
        Command::Eval {
            checkpoint,
            env,
            seeds,
            trajectories,
            transitions,
        } => eval(checkpoint, env, seeds, trajectories, transitions),
        Command::Decompose {
            input,
            levels,
            checkpoint,
            haar_fixed: _,
            out,
        } => decompose(input, levels, checkpoint, out),
        Command::CaseStudy { out, seeds } => case_study(out, seeds),
        Command::MotivatingExample { out } => motivating(out),
    }
}
