//! File formats: dataset JSON, result CSV, JSON-lines progress events.

use std::fs;
use std::io::Write;
use std::path::Path;

use batchreg::model::{CovariateKind, Dataset, ProblemParams};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::experiment::{TrialOutput, TrialRow};

/// What `generate` writes and `run --dataset` / `reduce --dataset` read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub params: ProblemParams,
    pub covariates: CovariateKind,
    pub beta_star: Vec<f64>,
    pub adversary: String,
    pub dataset: Dataset,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

pub fn csv_bytes(rows: &[TrialRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn write_csv(path: &Path, rows: &[TrialRow]) -> Result<()> {
    fs::write(path, csv_bytes(rows)?).map_err(|e| io_err(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().collect::<std::result::Result<Vec<TrialRow>, _>>().map_err(|e| io_err(path, e))
}

/// CSV text with the `wall_ms` column removed; equal across reruns of one config.
pub fn strip_timing(csv_text: &[u8]) -> Result<Vec<u8>> {
    let mut r = csv::Reader::from_reader(csv_text);
    let header = r.headers()?.clone();
    let skip = header.iter().position(|h| h == "wall_ms");
    let keep = |rec: &csv::StringRecord| -> csv::StringRecord {
        rec.iter().enumerate().filter(|(i, _)| Some(*i) != skip).map(|(_, v)| v).collect()
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&keep(&header))?;
    for rec in r.records() {
        w.write_record(&keep(&rec?))?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}

/// One line per progress event, tagged with its cell and trial.
pub fn write_events(path: &Path, outputs: &[TrialOutput]) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        d: usize,
        n: usize,
        alpha: f64,
        k: usize,
        m: usize,
        trial: usize,
        event: &'a batchreg::driver::ProgressEvent,
    }
    let mut buf = Vec::new();
    for o in outputs {
        for e in &o.events {
            let r = &o.row;
            let line = Line { d: r.d, n: r.n, alpha: r.alpha, k: r.k, m: r.m, trial: r.trial, event: e };
            serde_json::to_writer(&mut buf, &line).map_err(|e| io_err(path, e))?;
            buf.write_all(b"\n")?;
        }
    }
    fs::write(path, buf).map_err(|e| io_err(path, e))
}

/// Final candidate lists, one entry per trial. Holds no timing, so reruns of
/// one config produce identical bytes.
pub fn write_candidates(path: &Path, outputs: &[TrialOutput]) -> Result<()> {
    #[derive(Serialize)]
    struct Entry<'a> {
        d: usize,
        n: usize,
        alpha: f64,
        k: usize,
        m: usize,
        trial: usize,
        seed: u64,
        min_error: f64,
        beta_star: &'a [f64],
        list: &'a batchreg::driver::CandidateList,
        warnings: &'a [String],
    }
    let entries: Vec<Entry> = outputs
        .iter()
        .map(|o| {
            let r = &o.row;
            Entry {
                d: r.d,
                n: r.n,
                alpha: r.alpha,
                k: r.k,
                m: r.m,
                trial: r.trial,
                seed: r.seed,
                min_error: r.min_error,
                beta_star: &o.beta_star,
                list: &o.list,
                warnings: &o.warnings,
            }
        })
        .collect();
    write_json(path, &entries)
}
