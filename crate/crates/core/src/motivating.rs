//! Chirp denoising demo and CSV decomposition helpers.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wisdom_tensor::Tensor;

use crate::error::{param_err, Result};
use crate::metrics::{read_table, write_table};
use crate::signals::{add_gaussian_noise, pearson, staged_chirp, upsample_hold};
use crate::wavelet::{dwt_full, FilterBank, WaveletStack};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChirpSetup {
    pub periods: Vec<f64>,
    pub stage_len: usize,
    pub amplitude: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_std: f64,
    pub levels: usize,
    pub seed: u64,
}

impl Default for ChirpSetup {
    fn default() -> Self {
        ChirpSetup {
            periods: vec![256.0, 128.0, 64.0],
            stage_len: 1024,
            amplitude: 2.0,
            noise_std: 2.0,
            levels: 2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChirpReport {
    pub corr_raw: f64,
    pub corr_approximation: f64,
    pub gain: f64,
    /// Per-stage (mean, variance) of the noise-free signal.
    pub stage_moments: Vec<(f64, f64)>,
}

pub struct ChirpRun {
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub stack: WaveletStack,
    /// `u_M` held over its support, aligned with the input.
    pub trend: Vec<f64>,
    pub report: ChirpReport,
}

pub fn run_chirp(setup: &ChirpSetup) -> Result<ChirpRun> {
    if setup.noise_std < 0.0 || setup.periods.is_empty() || setup.stage_len == 0 {
        return param_err("chirp needs stages, a positive stage length and noise std >= 0");
    }
    let clean = staged_chirp(&setup.periods, setup.stage_len, setup.amplitude);
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let noisy = add_gaussian_noise(&clean, setup.noise_std, &mut rng);
    let stack = dwt_full(&column(&noisy)?, &FilterBank::haar(), setup.levels)?;
    let trend = upsample_hold(stack.approximation.data(), 1 << setup.levels, clean.len());
    let corr_raw = pearson(&noisy, &clean);
    let corr_approximation = pearson(&trend, &clean);
    let stage_moments = clean
        .chunks(setup.stage_len)
        .map(|s| {
            let m = crate::signals::mean(s);
            (m, crate::signals::std_dev(s).powi(2))
        })
        .collect();
    Ok(ChirpRun {
        clean,
        noisy,
        stack,
        trend,
        report: ChirpReport {
            corr_raw,
            corr_approximation,
            gain: corr_approximation - corr_raw,
            stage_moments,
        },
    })
}

fn column(x: &[f64]) -> Result<Tensor> {
    Ok(Tensor::new(&[x.len(), 1], x.to_vec())?)
}

/// Time index of the last input sample under each coefficient of a level
/// with `count` coefficients and stride `2^level`.
pub fn coefficient_end_steps(original_len: usize, level: usize, count: usize) -> Vec<usize> {
    let stride = 1usize << level;
    (0..count)
        .map(|n| (original_len - 1).saturating_sub((count - 1 - n) * stride))
        .collect()
}

/// Writes `coeffs_level{m}.csv` for every level: end step, detail columns,
/// and for the last level the approximation columns too.
pub fn write_stack(dir: &Path, stack: &WaveletStack, names: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dim = stack.approximation.shape()[1];
    for (m, g) in stack.details.iter().enumerate() {
        let level = m + 1;
        let count = g.shape()[0];
        let steps = coefficient_end_steps(stack.original_length, level, count);
        let last = level == stack.levels;
        let mut header = vec!["step".to_string()];
        header.extend(names.iter().map(|n| format!("g{level}_{n}")));
        if last {
            header.extend(names.iter().map(|n| format!("u{level}_{n}")));
        }
        let rows: Vec<Vec<f64>> = (0..count)
            .map(|n| {
                let mut r = vec![steps[n] as f64];
                r.extend_from_slice(&g.data()[n * dim..(n + 1) * dim]);
                if last {
                    r.extend_from_slice(&stack.approximation.data()[n * dim..(n + 1) * dim]);
                }
                r
            })
            .collect();
        write_table(&dir.join(format!("coeffs_level{level}.csv")), &header, &rows)?;
    }
    Ok(())
}

/// Writes `signal.csv`, the coefficient files and `report.json`.
pub fn write_chirp(dir: &Path, run: &ChirpRun) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let header = ["step", "clean", "noisy", "trend"].map(String::from);
    let rows: Vec<Vec<f64>> = (0..run.clean.len())
        .map(|i| vec![i as f64, run.clean[i], run.noisy[i], run.trend[i]])
        .collect();
    write_table(&dir.join("signal.csv"), &header, &rows)?;
    write_stack(dir, &run.stack, &["x".to_string()])?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&run.report)?,
    )?;
    Ok(())
}

/// Decomposes every column of a CSV file; a leading `step` column is
/// carried through rather than transformed.
pub fn decompose_csv(input: &Path, levels: usize, bank: &FilterBank, out: &Path) -> Result<WaveletStack> {
    let (header, rows) = read_table(input)?;
    if rows.is_empty() {
        return param_err(format!("{} has no rows", input.display()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return param_err(format!("{} has ragged rows", input.display()));
    }
    let header = if header.is_empty() {
        (0..width).map(|i| format!("c{i}")).collect()
    } else {
        header
    };
    let skip = usize::from(header.first().is_some_and(|h| h == "step"));
    let names: Vec<String> = header[skip..].to_vec();
    let dim = names.len();
    if dim == 0 {
        return param_err("no signal columns to decompose");
    }
    let data: Vec<f64> = rows.iter().flat_map(|r| r[skip..].iter().copied()).collect();
    let z = Tensor::new(&[rows.len(), dim], data)?;
    let stack = dwt_full(&z, bank, levels)?;
    write_stack(out, &stack, &names)?;
    Ok(stack)
}
