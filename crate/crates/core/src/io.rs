//! Tensor and factor files.
//!
//! Tensor file: 16 magic bytes (`TAMPDT01` padded with NUL), a one-line JSON
//! header `{"dims":[..],"dtype":"f64le","delta":..}`, then the values as
//! little-endian f64 in row-major order.
//!
//! Factors: one headerless CSV per mode, `factors_mode<α>.csv` with α
//! counted from 1, one row per index and one column per component.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, FactorSet, TensorShape};

pub const MAGIC: [u8; 16] = *b"TAMPDT01\0\0\0\0\0\0\0\0";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: Vec<usize>,
    dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    delta: Option<f64>,
}

pub fn write_tensor(path: &Path, tensor: &DenseTensor, delta: Option<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    let header = Header {
        dims: tensor.shape().dims().to_vec(),
        dtype: "f64le".into(),
        delta,
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    for v in tensor.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(DenseTensor, Option<f64>)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 16];
    input.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("{} is not a tensor file", path.display())));
    }
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    if header.dtype != "f64le" {
        return Err(Error::Format(format!("unsupported dtype {}", header.dtype)));
    }
    let shape = TensorShape::new(&header.dims)?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != shape.len() * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            shape.len() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((DenseTensor::new(shape, values)?, header.delta))
}

pub fn factor_path(dir: &Path, mode: usize) -> PathBuf {
    dir.join(format!("factors_mode{}.csv", mode + 1))
}

pub fn write_factors(dir: &Path, factors: &FactorSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (a, m) in factors.modes().iter().enumerate() {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(factor_path(dir, a))
            .map_err(csv_err)?;
        for i in 0..m.nrows() {
            w.write_record(m.row(i).iter().map(|v| format!("{v:e}"))).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Reads `factors_mode1.csv`, `factors_mode2.csv`, … until the next file is
/// missing; dims and rank come from the files.
pub fn read_factors(dir: &Path) -> Result<FactorSet> {
    let mut mats = Vec::new();
    while factor_path(dir, mats.len()).exists() {
        let path = factor_path(dir, mats.len());
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(&path)
            .map_err(csv_err)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Format(format!("bad number `{f}` in {}", path.display()))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let r = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || r == 0 || rows.iter().any(|row| row.len() != r) {
            return Err(Error::Format(format!("{} is empty or ragged", path.display())));
        }
        mats.push(DMatrix::from_row_iterator(rows.len(), r, rows.into_iter().flatten()));
    }
    if mats.is_empty() {
        return Err(Error::Format(format!("no factor files in {}", dir.display())));
    }
    let dims: Vec<usize> = mats.iter().map(DMatrix::nrows).collect();
    FactorSet::new(TensorShape::new(&dims)?, mats)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
