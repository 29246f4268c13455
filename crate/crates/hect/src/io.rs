//! Flat-file ingestion shared with the CLI.
//!
//! Three formats:
//! - CSV: header row of variable names, one row per run, '.' decimal,
//!   scientific notation accepted.
//! - RAWF64: little-endian binary — magic "HECT", u32 version 1, u64 run
//!   count, u64 feature count, then row-major IEEE f64 values; variable names
//!   live in a `<path>.names.csv` sidecar holding the header row.
//! - RAW4D: one file per run — magic "HEC4", u32 version 1, the four u64
//!   dimensions (variable, time, level, cell), a weights flag byte, optional
//!   cell weights, then values in (variable, time, level, cell) order. A run
//!   directory pairs `*.raw4d` files with a `variables.csv` name sidecar.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dataset::{Ensemble, Role, Run};
use crate::error::{HectError, Result};
use crate::preprocess::{RawDims, RawRun};

const CSV_MAGIC_DOC: &str = "header row of variable names";
const RAWF64_MAGIC: &[u8; 4] = b"HECT";
const RAW4D_MAGIC: &[u8; 4] = b"HEC4";
const FORMAT_VERSION: u32 = 1;

/// Shortest-round-trip float formatting, switching to exponent notation for
/// extreme magnitudes.
pub fn fmt_f64(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e16) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

fn parse_header(line: &str, line_no: usize) -> Result<Vec<String>> {
    let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
    if names.iter().any(|n| n.is_empty()) {
        return Err(HectError::Parse {
            line: line_no,
            reason: format!("empty variable name in header ({CSV_MAGIC_DOC})"),
        });
    }
    Ok(names)
}

fn parse_row(line: &str, line_no: usize, expected: usize) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(expected);
    for field in line.split(',') {
        let v: f64 = field.trim().parse().map_err(|_| HectError::Parse {
            line: line_no,
            reason: format!("'{}' is not a number", field.trim()),
        })?;
        if !v.is_finite() {
            return Err(HectError::Parse {
                line: line_no,
                reason: format!("non-finite value '{}'", field.trim()),
            });
        }
        values.push(v);
    }
    if values.len() != expected {
        return Err(HectError::Parse {
            line: line_no,
            reason: format!("{} fields, expected {expected}", values.len()),
        });
    }
    Ok(values)
}

/// Parses a run-per-row CSV from any reader; run ids are `<prefix>:<row>`.
pub fn parse_ensemble_csv(reader: impl BufRead, role: Role, id_prefix: &str) -> Result<Ensemble> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(HectError::Parse {
        line: 1,
        reason: "empty file".into(),
    })?;
    let names: std::sync::Arc<[String]> = parse_header(&header?, 1)?.into();

    let mut runs = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values = parse_row(&line, line_no, names.len())?;
        runs.push(Run::new(
            format!("{id_prefix}:{}", runs.len()),
            values,
            names.clone(),
        )?);
    }
    Ensemble::new(runs, role)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "runs".into())
}

/// Reads an ensemble from a CSV file.
pub fn read_ensemble_csv(path: impl AsRef<Path>, role: Role) -> Result<Ensemble> {
    let path = path.as_ref();
    let file = File::open(path)?;
    parse_ensemble_csv(BufReader::new(file), role, &stem_of(path))
}

/// Writes an ensemble as CSV (header row, one row per run).
pub fn write_ensemble_csv(path: impl AsRef<Path>, e: &Ensemble) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", e.variable_names().join(","))?;
    for run in e.runs() {
        let row: Vec<String> = run.features().iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".names.csv");
    s.into()
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Reads a RAWF64 matrix with its name sidecar.
pub fn read_ensemble_rawf64(path: impl AsRef<Path>, role: Role) -> Result<Ensemble> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RAWF64_MAGIC {
        return Err(HectError::Parse {
            line: 0,
            reason: "bad magic bytes, expected HECT".into(),
        });
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(HectError::Parse {
            line: 0,
            reason: format!("unsupported version {version}"),
        });
    }
    let n_runs = read_u64(&mut r)? as usize;
    let n_features = read_u64(&mut r)? as usize;
    if n_runs == 0 || n_features == 0 {
        return Err(HectError::Parse {
            line: 0,
            reason: "empty matrix".into(),
        });
    }

    let sidecar = sidecar_path(path);
    let header = fs::read_to_string(&sidecar).map_err(|e| HectError::Parse {
        line: 0,
        reason: format!("cannot read name sidecar {}: {e}", sidecar.display()),
    })?;
    let names: std::sync::Arc<[String]> =
        parse_header(header.lines().next().unwrap_or(""), 1)?.into();
    if names.len() != n_features {
        return Err(HectError::SchemaMismatch(format!(
            "sidecar has {} names for {} features",
            names.len(),
            n_features
        )));
    }

    let stem = stem_of(path);
    let mut runs = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let values = read_f64s(&mut r, n_features)?;
        runs.push(Run::new(format!("{stem}:{i}"), values, names.clone()).map_err(|e| {
            HectError::Parse {
                line: 0,
                reason: format!("row {i}: {e}"),
            }
        })?);
    }
    Ensemble::new(runs, role)
}

/// Writes a RAWF64 matrix and its name sidecar.
pub fn write_ensemble_rawf64(path: impl AsRef<Path>, e: &Ensemble) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RAWF64_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(e.len() as u64).to_le_bytes())?;
    w.write_all(&(e.feature_count() as u64).to_le_bytes())?;
    for run in e.runs() {
        for v in run.features() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    fs::write(
        sidecar_path(path),
        format!("{}\n", e.variable_names().join(",")),
    )?;
    Ok(())
}

/// Reads one RAW4D run file; names come from the directory sidecar.
pub fn read_raw4d_file(path: impl AsRef<Path>, variable_names: &[String]) -> Result<RawRun> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != RAW4D_MAGIC {
        return Err(HectError::Parse {
            line: 0,
            reason: "bad magic bytes, expected HEC4".into(),
        });
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(HectError::Parse {
            line: 0,
            reason: format!("unsupported version {version}"),
        });
    }
    let dims = RawDims {
        n_var: read_u64(&mut r)? as usize,
        n_time: read_u64(&mut r)? as usize,
        n_level: read_u64(&mut r)? as usize,
        n_cell: read_u64(&mut r)? as usize,
    };
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let weights = if flag[0] != 0 {
        Some(read_f64s(&mut r, dims.n_cell)?)
    } else {
        None
    };
    let values = read_f64s(&mut r, dims.len())?;
    RawRun::new(
        stem_of(path),
        values,
        dims,
        weights,
        variable_names.to_vec(),
    )
}

/// Writes one RAW4D run file.
pub fn write_raw4d_file(path: impl AsRef<Path>, raw: &RawRun) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(RAW4D_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let d = raw.dims();
    for dim in [d.n_var, d.n_time, d.n_level, d.n_cell] {
        w.write_all(&(dim as u64).to_le_bytes())?;
    }
    match raw.cell_weights() {
        Some(weights) => {
            w.write_all(&[1u8])?;
            for v in weights {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    for v in raw.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a RAW4D run directory: `variables.csv` plus every `*.raw4d` file in
/// filename order.
pub fn read_raw4d_dir(dir: impl AsRef<Path>) -> Result<Vec<RawRun>> {
    let dir = dir.as_ref();
    let header = fs::read_to_string(dir.join("variables.csv")).map_err(|e| HectError::Parse {
        line: 0,
        reason: format!("cannot read {}: {e}", dir.join("variables.csv").display()),
    })?;
    let names = parse_header(header.lines().next().unwrap_or(""), 1)?;

    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |e| e == "raw4d"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HectError::Parse {
            line: 0,
            reason: format!("no .raw4d files in {}", dir.display()),
        });
    }
    paths.iter().map(|p| read_raw4d_file(p, &names)).collect()
}
