//! CSV and metadata files.
//!
//! Operator files have a header `t,R_0_0,R_0_1,…` and one row per grid time
//! with the matrix flattened row-major. Numbers are written in shortest
//! round-trip form, so reading a file back reproduces the values exactly.
//! Each CSV may have a `<stem>.meta.json` sidecar.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::response::{Algorithm, IntegratedResponse, ResponseGrid};
use crate::{Error, Matrix, Result, Scalar};

/// Sidecar written next to every CSV.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub file: String,
    pub algorithm: Option<String>,
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
    /// Free-form run details (model parameters, averaging, cutoff, ...).
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    csv.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_metadata(csv: &Path, meta: &Metadata) -> Result<()> {
    let f = BufWriter::new(File::create(sidecar_path(csv))?);
    serde_json::to_writer_pretty(f, meta)?;
    Ok(())
}

pub fn read_metadata(csv: &Path) -> Result<Metadata> {
    let f = File::open(sidecar_path(csv))?;
    Ok(serde_json::from_reader(f)?)
}

fn fmt<S: Scalar>(v: S) -> String {
    format!("{v}")
}

fn parse_num<S: Scalar>(field: &str) -> Result<S> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("not a number: {field:?}")))?;
    Ok(S::lit(v))
}

/// Writes matrices, one row per time.
pub fn write_matrix_series<S: Scalar>(path: &Path, times: &[S], matrices: &[Matrix<S>]) -> Result<()> {
    let (rows, cols) = matrices.first().map(|m| m.shape()).unwrap_or((0, 0));
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["t".to_string()];
    for i in 0..rows {
        for j in 0..cols {
            header.push(format!("R_{i}_{j}"));
        }
    }
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for (t, m) in times.iter().zip(matrices) {
        rec.clear();
        rec.push(fmt(*t));
        for i in 0..rows {
            for j in 0..cols {
                rec.push(fmt(m[(i, j)]));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_matrix_series`].
pub fn read_matrix_series<S: Scalar>(path: &Path) -> Result<(Vec<S>, Vec<Matrix<S>>)> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let header = r.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Parse(format!("{}: first column must be t", path.display())));
    }
    let mut rows = 0;
    let mut cols = 0;
    let mut index = Vec::new();
    for h in header.iter().skip(1) {
        let parts: Vec<&str> = h.split('_').collect();
        let (i, j) = match parts.as_slice() {
            ["R", i, j] => (
                i.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad column {h}")))?,
                j.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad column {h}")))?,
            ),
            _ => return Err(Error::Parse(format!("{}: bad column {h:?}", path.display()))),
        };
        rows = rows.max(i + 1);
        cols = cols.max(j + 1);
        index.push((i, j));
    }
    if index.len() != rows * cols {
        return Err(Error::Parse(format!("{}: incomplete matrix columns", path.display())));
    }
    let mut times = Vec::new();
    let mut mats = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        times.push(parse_num(&rec[0])?);
        let mut m = Matrix::zeros(rows, cols);
        for (field, (i, j)) in rec.iter().skip(1).zip(&index) {
            m[(*i, *j)] = parse_num(field)?;
        }
        mats.push(m);
    }
    Ok((times, mats))
}

pub fn write_integrated<S: Scalar>(path: &Path, r: &IntegratedResponse<S>) -> Result<()> {
    let times = r.grid.times();
    write_matrix_series(path, &times[..r.matrices.len()], &r.matrices)
}

/// Reads an integrated response. A truncated file keeps the grid implied
/// by the metadata's `grid_points`/`t_max` when present.
pub fn read_integrated<S: Scalar>(path: &Path, algorithm: Algorithm) -> Result<IntegratedResponse<S>> {
    let (times, matrices) = read_matrix_series::<S>(path)?;
    let grid = match read_metadata(path).ok().and_then(|m| grid_from_details(&m.details)) {
        Some((t_max, n)) => ResponseGrid::new(S::lit(t_max), n)?,
        None => ResponseGrid::from_times(&times)?,
    };
    Ok(IntegratedResponse {
        grid,
        algorithm,
        matrices,
        std_errors: None,
    })
}

fn grid_from_details(d: &BTreeMap<String, serde_json::Value>) -> Option<(f64, usize)> {
    Some((d.get("t_max")?.as_f64()?, d.get("grid_points")?.as_u64()? as usize))
}

/// Writes named scalar columns against time; `None` becomes an empty field.
pub fn write_scalar_series<S: Scalar>(path: &Path, times: &[S], columns: &[(&str, Vec<Option<S>>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "t")?;
    for (name, _) in columns {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for (i, t) in times.iter().enumerate() {
        write!(w, "{}", fmt(*t))?;
        for (_, col) in columns {
            match col.get(i).copied().flatten() {
                Some(v) => write!(w, ",{}", fmt(v))?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Column names, times, and one column of optional values per name.
pub type ScalarSeries = (Vec<String>, Vec<f64>, Vec<Vec<Option<f64>>>);

/// Reads a file written by [`write_scalar_series`].
pub fn read_scalar_series(path: &Path) -> Result<ScalarSeries> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let names: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let mut times = Vec::new();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        times.push(parse_num(&rec[0])?);
        for (c, field) in cols.iter_mut().zip(rec.iter().skip(1)) {
            c.push(if field.trim().is_empty() {
                None
            } else {
                Some(parse_num(field)?)
            });
        }
    }
    Ok((names, times, cols))
}

/// Writes diagonal-averaged profiles: one row per offset `d`.
pub fn write_profiles<S: Scalar>(path: &Path, columns: &[(&str, Vec<S>)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "d")?;
    for (name, _) in columns {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    let len = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for d in 0..len {
        write!(w, "{d}")?;
        for (_, c) in columns {
            match c.get(d) {
                Some(v) => write!(w, ",{}", fmt(*v))?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
