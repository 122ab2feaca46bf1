//! Per-run records and the files they are written to.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlap::OverlapSet;
use crate::phase::{InitRegime, MeansRow, ShapeRow};
use crate::priors::PriorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Amp,
    Als,
    Se,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Amp => "amp",
            Method::Als => "als",
            Method::Se => "se",
        }
    }
}

/// One seed (or, for state evolution, one Δ and start) of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    /// `None` for state evolution, which involves no sampled instance.
    pub seed: Option<u64>,
    pub delta: f64,
    pub init: InitRegime,
    pub dims: Vec<usize>,
    pub rank: usize,
    pub priors: Vec<PriorSpec>,
    /// Overlaps `M_α` of the aligned estimate with the truth.
    pub overlaps: Option<OverlapSet>,
    pub factor_mse: Option<f64>,
    pub direct_mse: Option<f64>,
    pub tensor_mse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub success: Option<bool>,
    /// Omitted in deterministic mode so that output files are reproducible.
    pub wall_time_s: Option<f64>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

pub fn to_json_line(record: &RunRecord) -> Result<String> {
    serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))
}

pub fn from_json_line(line: &str) -> Result<RunRecord> {
    serde_json::from_str(line).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_jsonl(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        writeln!(out, "{}", to_json_line(r)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RunRecord>> {
    let input = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(from_json_line(&line)?);
        }
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

/// Flat per-record table; overlaps are reported as `tr(M_α)/r`.
pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let order = records.iter().map(|r| r.dims.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = [
        "method", "seed", "delta", "init", "factor_mse", "direct_mse", "tensor_mse", "iterations", "converged",
        "success", "error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=order).map(|a| format!("m{a}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.method.as_str().to_string(),
            r.seed.map_or_else(String::new, |s| s.to_string()),
            format!("{:e}", r.delta),
            match r.init {
                InitRegime::Informed => "informed".into(),
                InitRegime::Uninformed => "uninformed".into(),
            },
            opt(r.factor_mse),
            opt(r.direct_mse),
            opt(r.tensor_mse),
            r.iterations.to_string(),
            r.converged.to_string(),
            r.success.map_or_else(String::new, |s| s.to_string()),
            r.error.clone().unwrap_or_default(),
        ];
        for a in 0..order {
            row.push(match &r.overlaps {
                Some(m) if a < m.order() => format!("{:e}", m.mode(a).trace() / m.rank() as f64),
                _ => String::new(),
            });
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One Δ of an AMP-versus-ALS comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub delta: f64,
    pub amp_success_rate: f64,
    pub als_success_rate: f64,
    /// Mean aligned factor MSE over the runs that finished; NaN if none did.
    pub amp_mean_mse: f64,
    pub als_mean_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    /// State-evolution prediction of the algorithmic transition, if it
    /// could be bracketed.
    pub delta_alg: Option<f64>,
    pub rows: Vec<CompareRow>,
}

pub fn write_serialized_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_compare_csv(path: &Path, table: &CompareTable) -> Result<()> {
    write_serialized_csv(path, &table.rows)
}

pub fn write_shape_csv(path: &Path, rows: &[ShapeRow]) -> Result<()> {
    write_serialized_csv(path, rows)
}

pub fn write_means_csv(path: &Path, rows: &[MeansRow]) -> Result<()> {
    write_serialized_csv(path, rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
