//! File formats for every artifact: long-format surface CSV, lag-function
//! CSV, threshold curve, seasonal means, optimizer traces, study tables,
//! sparse-operator triplets, and JSON reports.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so write/read round-trips are exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::core::{CoefficientSurface, CoreError, LagFunction, PanelSpec, SparseOperator};
use crate::hyperopt::TraceEntry;
use crate::sparsity::ThresholdCurve;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| IoError::io(path, e))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| IoError::io(path, e))?,
    ))
}

/// Long-format surface: one `(s, t, beta)` row per grid cell, 0-indexed.
pub fn write_surface_csv(path: &Path, surface: &CoefficientSurface) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "s,t,beta").map_err(|e| IoError::io(path, e))?;
    let d = surface.spec.max_lag_count;
    for (k, &v) in surface.b.iter().enumerate() {
        writeln!(w, "{},{},{}", k % d, k / d, v).map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Reads a surface back; grid dimensions are inferred and every cell must
/// be present exactly once.
pub fn read_surface_csv(path: &Path) -> Result<CoefficientSurface, IoError> {
    let reader = open(path)?;
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    let mut max_s = 0usize;
    let mut max_t = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if i == 0 {
            if line.trim() != "s,t,beta" {
                return Err(IoError::parse(path, 1, "expected header \"s,t,beta\""));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse_err = |m: &str| IoError::parse(path, i + 1, m);
        let s: usize = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| parse_err("bad s"))?;
        let t: usize = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| parse_err("bad t"))?;
        let beta: f64 = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| parse_err("bad beta"))?;
        max_s = max_s.max(s);
        max_t = max_t.max(t);
        cells.push((s, t, beta));
    }
    let d = max_s + 1;
    let t_len = max_t + 1;
    if cells.is_empty() {
        return Err(IoError::format(path, "no surface cells"));
    }
    if cells.len() != d * t_len {
        return Err(IoError::format(
            path,
            format!("expected {} cells for a {d}x{t_len} grid, got {}", d * t_len, cells.len()),
        ));
    }
    let mut b = vec![f64::NAN; d * t_len];
    for (s, t, v) in cells {
        let k = t * d + s;
        if !b[k].is_nan() {
            return Err(IoError::format(path, format!("duplicate cell (s={s}, t={t})")));
        }
        b[k] = v;
    }
    if b.iter().any(|v| v.is_nan()) {
        return Err(IoError::format(path, "missing cells"));
    }
    // replicate count is not part of the file; pick the smallest that
    // satisfies the lag-window constraint
    let n = d.div_ceil(t_len);
    let spec = PanelSpec::new(t_len, d, n)?;
    Ok(CoefficientSurface::new(spec, b)?)
}

pub fn write_delta_csv(path: &Path, lag: &LagFunction) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "t,delta").map_err(|e| IoError::io(path, e))?;
    for (t, &d) in lag.delta.iter().enumerate() {
        writeln!(w, "{t},{d}").map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_delta_csv(path: &Path) -> Result<LagFunction, IoError> {
    let reader = open(path)?;
    let mut delta = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if i == 0 {
            if line.trim() != "t,delta" {
                return Err(IoError::parse(path, 1, "expected header \"t,delta\""));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse_err = |m: &str| IoError::parse(path, i + 1, m);
        let t: usize = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| parse_err("bad t"))?;
        if t != delta.len() {
            return Err(parse_err("days out of order"));
        }
        let d: i32 = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| parse_err("bad delta"))?;
        delta.push(d);
    }
    if delta.is_empty() {
        return Err(IoError::format(path, "empty lag function"));
    }
    let t_len = delta.len();
    let d_max = delta.iter().cloned().max().unwrap_or(0).max(0) as usize + 1;
    let n = d_max.div_ceil(t_len);
    let spec = PanelSpec::new(t_len, d_max, n)?;
    Ok(LagFunction::new(spec, delta)?)
}

pub fn write_curve_csv(path: &Path, curve: &ThresholdCurve) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "q,r2,support_size").map_err(|e| IoError::io(path, e))?;
    for i in 0..curve.q_grid.len() {
        writeln!(w, "{},{},{}", curve.q_grid[i], curve.r2[i], curve.support_sizes[i])
            .map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Seasonal means removed during preprocessing; re-seasonalizes predictions.
pub fn write_means_csv(path: &Path, mean_x: &[f64], mean_y: &[f64]) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "day_of_year,mean_x,mean_y").map_err(|e| IoError::io(path, e))?;
    for (t, (mx, my)) in mean_x.iter().zip(mean_y).enumerate() {
        writeln!(w, "{t},{mx},{my}").map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_trace_csv(path: &Path, trace: &[TraceEntry]) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "iteration,w_h,w_v,r2_val,best_so_far").map_err(|e| IoError::io(path, e))?;
    for e in trace {
        writeln!(w, "{},{},{},{},{}", e.iteration, e.w_h, e.w_v, e.r2_val, e.best_so_far)
            .map_err(|err| IoError::io(path, err))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Debug export of any sparse operator as `(row, col, value)` triplets.
pub fn write_triplets_csv(path: &Path, op: &SparseOperator) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "row,col,value").map_err(|e| IoError::io(path, e))?;
    for (r, c, v) in op.triplets() {
        writeln!(w, "{r},{c},{v}").map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| IoError::io(path, e))?;
    w.flush().map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::NO_LAG;

    #[test]
    fn surface_round_trips_bit_exactly() {
        let spec = PanelSpec::new(5, 3, 2).unwrap();
        let b: Vec<f64> = (0..15)
            .map(|i| (i as f64 * 0.123456789).sin() * 1e-3)
            .collect();
        let surface = CoefficientSurface::new(spec, b).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surface.csv");
        write_surface_csv(&path, &surface).unwrap();
        let back = read_surface_csv(&path).unwrap();
        assert_eq!(back.spec.max_lag_count, 3);
        assert_eq!(back.spec.period_length, 5);
        for (a, b) in surface.b.iter().zip(&back.b) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn surface_row_count_is_grid_size() {
        let spec = PanelSpec::new(4, 2, 1).unwrap();
        let surface = CoefficientSurface::zeros(spec);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surface.csv");
        write_surface_csv(&path, &surface).unwrap();
        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines.lines().count(), 1 + 8);
    }

    #[test]
    fn delta_round_trips() {
        let spec = PanelSpec::new(4, 3, 2).unwrap();
        let lag = LagFunction::new(spec, vec![0, 2, NO_LAG, 1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("delta.csv");
        write_delta_csv(&path, &lag).unwrap();
        let back = read_delta_csv(&path).unwrap();
        assert_eq!(back.delta, lag.delta);
    }

    #[test]
    fn missing_surface_file_is_io_error() {
        assert!(matches!(
            read_surface_csv(Path::new("/nonexistent/surface.csv")),
            Err(IoError::Io { .. })
        ));
    }
}
