//! File formats.
//!
//! - Covariance set (JSON): `{"dim": k, "matrices": [[k² row-major], ...]}`.
//! - Codebook (JSON): `{"dim", "size", "model_tag", "steps", "dead_zones",
//!   "matrices"}` with row-major matrices; re-validated on load.
//! - Design report (JSON): `{"objective_trace", "cell_sizes", "iterations",
//!   "converged"}`.
//! - Mixture spec (JSON): `{"weights", "matrices"}`.
//! - Rate points (CSV): `rate_bps,psnr_db,snr_db,mse`.
//! - Codeword usage (CSV): `codeword_index,count`.
//! - Vectors (binary): magic `TCBVEC01`, `u32` dimension, `u64` count, then
//!   `count·dim` little-endian `f64` values, row-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::RatePoint;
use crate::data::GaussianMixtureSpec;
use crate::designer::DesignReport;
use crate::error::{Error, Result};
use crate::types::{CovarianceMatrix, ModelTag, QuantizerSpec, TransformCodebook, TransformMatrix};

pub const VECTOR_MAGIC: &[u8; 8] = b"TCBVEC01";
pub const RATE_CSV_HEADER: &str = "rate_bps,psnr_db,snr_db,mse";
pub const USAGE_CSV_HEADER: &str = "codeword_index,count";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[derive(Serialize, Deserialize)]
struct CovarianceSetFile {
    dim: usize,
    matrices: Vec<Vec<f64>>,
}

pub fn covariance_set_to_json(covs: &[CovarianceMatrix]) -> Result<String> {
    let dim = covs.first().ok_or(Error::EmptyInput("covariance set"))?.dim();
    let file = CovarianceSetFile {
        dim,
        matrices: covs.iter().map(CovarianceMatrix::to_row_major).collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn covariance_set_from_json(text: &str) -> Result<Vec<CovarianceMatrix>> {
    let file: CovarianceSetFile = serde_json::from_str(text)?;
    parse_covariance_set(file)
}

fn parse_covariance_set(file: CovarianceSetFile) -> Result<Vec<CovarianceMatrix>> {
    if file.matrices.is_empty() {
        return Err(Error::Format("covariance set has no matrices".into()));
    }
    file.matrices
        .iter()
        .map(|m| CovarianceMatrix::from_row_major(file.dim, m))
        .collect()
}

pub fn write_covariance_set(path: impl AsRef<Path>, covs: &[CovarianceMatrix]) -> Result<()> {
    let dim = covs.first().ok_or(Error::EmptyInput("covariance set"))?.dim();
    write_json(
        path.as_ref(),
        &CovarianceSetFile {
            dim,
            matrices: covs.iter().map(CovarianceMatrix::to_row_major).collect(),
        },
    )
}

pub fn read_covariance_set(path: impl AsRef<Path>) -> Result<Vec<CovarianceMatrix>> {
    parse_covariance_set(read_json(path.as_ref())?)
}

#[derive(Serialize, Deserialize)]
struct CodebookFile {
    dim: usize,
    size: usize,
    model_tag: ModelTag,
    steps: Vec<f64>,
    dead_zones: Vec<f64>,
    matrices: Vec<Vec<f64>>,
}

impl From<&TransformCodebook> for CodebookFile {
    fn from(cb: &TransformCodebook) -> Self {
        CodebookFile {
            dim: cb.dim(),
            size: cb.size(),
            model_tag: cb.model_tag(),
            steps: cb.quantizer().steps().to_vec(),
            dead_zones: cb.quantizer().dead_zones().to_vec(),
            matrices: cb.matrices().iter().map(TransformMatrix::to_row_major).collect(),
        }
    }
}

fn parse_codebook(file: CodebookFile) -> Result<TransformCodebook> {
    if file.matrices.len() != file.size {
        return Err(Error::Format(format!(
            "codebook declares {} matrices but holds {}",
            file.size,
            file.matrices.len()
        )));
    }
    let matrices = file
        .matrices
        .iter()
        .map(|m| TransformMatrix::from_row_major(file.dim, m))
        .collect::<Result<Vec<_>>>()?;
    TransformCodebook::new(
        matrices,
        QuantizerSpec::new(file.steps, file.dead_zones)?,
        file.model_tag,
    )
}

pub fn codebook_to_json(cb: &TransformCodebook) -> Result<String> {
    Ok(serde_json::to_string(&CodebookFile::from(cb))?)
}

pub fn codebook_from_json(text: &str) -> Result<TransformCodebook> {
    parse_codebook(serde_json::from_str(text)?)
}

pub fn write_codebook(path: impl AsRef<Path>, cb: &TransformCodebook) -> Result<()> {
    write_json(path.as_ref(), &CodebookFile::from(cb))
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<TransformCodebook> {
    parse_codebook(read_json(path.as_ref())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReportFile {
    pub objective_trace: Vec<f64>,
    pub cell_sizes: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&DesignReport> for DesignReportFile {
    fn from(r: &DesignReport) -> Self {
        DesignReportFile {
            objective_trace: r.objective_trace.clone(),
            cell_sizes: r.final_partition.cell_sizes.clone(),
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

pub fn write_design_report(path: impl AsRef<Path>, report: &DesignReport) -> Result<()> {
    write_json(path.as_ref(), &DesignReportFile::from(report))
}

pub fn read_design_report(path: impl AsRef<Path>) -> Result<DesignReportFile> {
    read_json(path.as_ref())
}

#[derive(Serialize, Deserialize)]
struct MixtureFile {
    weights: Vec<f64>,
    matrices: Vec<Vec<f64>>,
}

pub fn write_mixture_spec(path: impl AsRef<Path>, spec: &GaussianMixtureSpec) -> Result<()> {
    write_json(
        path.as_ref(),
        &MixtureFile {
            weights: spec.weights().to_vec(),
            matrices: spec.components().iter().map(CovarianceMatrix::to_row_major).collect(),
        },
    )
}

pub fn read_mixture_spec(path: impl AsRef<Path>) -> Result<GaussianMixtureSpec> {
    let file: MixtureFile = read_json(path.as_ref())?;
    let comps = file
        .matrices
        .iter()
        .map(|m| {
            let k = (m.len() as f64).sqrt().round() as usize;
            CovarianceMatrix::from_row_major(k, m)
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixtureSpec::new(file.weights, comps)
}

/// Writes `data` (row-major, `dim` columns) in the binary vector format.
pub fn write_vectors(path: impl AsRef<Path>, dim: usize, data: &[f64]) -> Result<()> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: data.len(),
        });
    }
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidParameter("dimension too large".into()))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(VECTOR_MAGIC)?;
    w.write_all(&dim32.to_le_bytes())?;
    w.write_all(&((data.len() / dim) as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary vector file, returning the dimension and row-major data.
pub fn read_vectors(path: impl AsRef<Path>) -> Result<(usize, Vec<f64>)> {
    let path = path.as_ref();
    let len = std::fs::metadata(path)?.len();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("vector file too short".into()))?;
    if &magic != VECTOR_MAGIC {
        return Err(Error::Format("not a vector file".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)
        .map_err(|_| Error::Format("truncated header".into()))?;
    r.read_exact(&mut b8)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let dim = u32::from_le_bytes(b4) as u64;
    let count = u64::from_le_bytes(b8);
    if dim == 0 {
        return Err(Error::Format("vector dimension is zero".into()));
    }
    let expected = dim
        .checked_mul(count)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(20))
        .ok_or_else(|| Error::Format("vector count overflows".into()))?;
    if expected != len {
        return Err(Error::SizeMismatch { expected, found: len });
    }
    let mut data = Vec::with_capacity((dim * count) as usize);
    for _ in 0..dim * count {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok((dim as usize, data))
}

/// Full-precision decimal (shortest round-trip representation).
fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:?}")
    }
}

fn parse_num(s: &str, line: usize) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse()
            .map_err(|_| Error::Format(format!("line {line}: bad number {t:?}"))),
    }
}

pub fn rate_points_to_csv(points: &[RatePoint]) -> String {
    let mut s = String::from(RATE_CSV_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            num(p.rate),
            num(p.psnr_db),
            num(p.snr_db),
            num(p.mse)
        ));
    }
    s
}

pub fn rate_points_from_csv(text: &str) -> Result<Vec<RatePoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RATE_CSV_HEADER => {}
        _ => return Err(Error::Format(format!("expected header {RATE_CSV_HEADER:?}"))),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Format(format!("line {}: expected 4 fields", i + 1)));
            }
            Ok(RatePoint {
                rate: parse_num(f[0], i + 1)?,
                psnr_db: parse_num(f[1], i + 1)?,
                snr_db: parse_num(f[2], i + 1)?,
                mse: parse_num(f[3], i + 1)?,
            })
        })
        .collect()
}

pub fn write_rate_points(path: impl AsRef<Path>, points: &[RatePoint]) -> Result<()> {
    std::fs::write(path, rate_points_to_csv(points))?;
    Ok(())
}

pub fn read_rate_points(path: impl AsRef<Path>) -> Result<Vec<RatePoint>> {
    rate_points_from_csv(&std::fs::read_to_string(path)?)
}

pub fn write_usage(path: impl AsRef<Path>, usage: &[u64]) -> Result<()> {
    let mut s = String::from(USAGE_CSV_HEADER);
    s.push('\n');
    for (i, c) in usage.iter().enumerate() {
        s.push_str(&format!("{i},{c}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_usage(path: impl AsRef<Path>) -> Result<Vec<u64>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != USAGE_CSV_HEADER {
                return Err(Error::Format(format!("expected header {USAGE_CSV_HEADER:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (idx, count) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("line {}: expected 2 fields", i + 1)))?;
        let bad = || Error::Format(format!("line {}: bad integer", i + 1));
        if idx.trim().parse::<usize>().map_err(|_| bad())? != out.len() {
            return Err(Error::Format(format!("line {}: indices must be consecutive", i + 1)));
        }
        out.push(count.trim().parse().map_err(|_| bad())?);
    }
    Ok(out)
}
