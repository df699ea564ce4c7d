//! Versioned CSV outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bumped whenever a column is added, removed or renamed.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// One evaluation epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub epoch: usize,
    pub env_steps: usize,
    pub mean_eval_return: f64,
    pub std_eval_return: f64,
    pub encoder_kl: f64,
    pub wavelet_td: f64,
    pub ar_loss: f64,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub nonstationarity_degree: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record([
            "schema_version",
            "epoch",
            "env_steps",
            "mean_eval_return",
            "std_eval_return",
            "encoder_kl",
            "wavelet_td",
            "ar_loss",
            "critic_loss",
            "actor_loss",
            "alpha",
            "nonstationarity_degree",
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: MetricsRecord = row.map_err(csv_err)?;
        if row.schema_version != METRICS_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "metrics schema {} (expected {METRICS_SCHEMA_VERSION})",
                row.schema_version
            )));
        }
        out.push(row);
    }
    Ok(out)
}

/// Writes a table with a header row.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric table; the first row is taken as a header when any of
/// its fields fails to parse as a number.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => header = rec.iter().map(str::to_string).collect(),
            Err(e) => {
                return Err(Error::Config(format!("row {i} of {}: {e}", path.display())));
            }
        }
    }
    Ok((header, rows))
}

/// Writes one row per transition: `episode, step, s.., a.., r, omega.., segment`.
pub fn write_transitions(path: &Path, episodes: &[Vec<crate::envs::Transition>]) -> Result<()> {
    let Some(first) = episodes.iter().flatten().next() else {
        return write_table(path, &["episode".to_string(), "step".to_string()], &[]);
    };
    let mut header = vec!["episode".to_string(), "step".to_string()];
    header.extend((0..first.s.len()).map(|k| format!("s{k}")));
    header.extend((0..first.a.len()).map(|k| format!("a{k}")));
    header.push("r".to_string());
    header.extend((0..first.omega.len()).map(|k| format!("omega{k}")));
    header.push("segment".to_string());
    let rows: Vec<Vec<f64>> = episodes
        .iter()
        .enumerate()
        .flat_map(|(e, ep)| {
            ep.iter().map(move |t| {
                let mut r = vec![e as f64, t.step as f64];
                r.extend(&t.s);
                r.extend(&t.a);
                r.push(t.r);
                r.extend(&t.omega);
                r.push(t.segment as f64);
                r
            })
        })
        .collect();
    write_table(path, &header, &rows)
}
