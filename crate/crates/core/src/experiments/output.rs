use std::fs;
use std::path::Path;

use super::{ConvergenceTable, RunRecord, SummaryRow};
use crate::error::{Error, Result};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv { path: path.display().to_string(), source }
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn num(x: f64) -> String {
    if x.is_nan() { String::new() } else { format!("{x:e}") }
}

pub const DATA_HEADER: [&str; 12] = [
    "method",
    "variable",
    "value",
    "realization",
    "seed",
    "channel_hash",
    "total_power_w",
    "required_power_w",
    "feasible",
    "outer_iters",
    "inner_iters",
    "error",
];

pub const SUMMARY_HEADER: [&str; 10] = [
    "method",
    "variable",
    "value",
    "runs",
    "feasible_runs",
    "feasibility_rate",
    "mean_total_power_w",
    "std_error_w",
    "mean_outer_iters",
    "mean_inner_iters",
];

/// Writes `data.csv` (one row per run) and `summary.csv` into `dir`.
pub fn write_sweep(dir: &Path, records: &[RunRecord], summary: &[SummaryRow]) -> Result<()> {
    write_rows(
        &dir.join("data.csv"),
        &DATA_HEADER,
        records.iter().map(|r| {
            vec![
                r.method.to_string(),
                r.variable.to_string(),
                format!("{:?}", r.value),
                r.realization.to_string(),
                r.seed.to_string(),
                format!("{:016x}", r.channel_hash),
                num(r.total_power_w),
                num(r.required_power_w),
                r.feasible.to_string(),
                r.outer_iters.to_string(),
                r.inner_iters.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )?;
    write_rows(
        &dir.join("summary.csv"),
        &SUMMARY_HEADER,
        summary.iter().map(|s| {
            vec![
                s.method.to_string(),
                s.variable.to_string(),
                format!("{:?}", s.value),
                s.runs.to_string(),
                s.feasible_runs.to_string(),
                format!("{}", s.feasibility_rate),
                num(s.mean_total_power_w),
                num(s.std_error_w),
                num(s.mean_outer_iters),
                num(s.mean_inner_iters),
            ]
        }),
    )
}

/// Writes the outer and inner CDFs as `(loop, iterations, fraction_le)` rows.
pub fn write_convergence(path: &Path, table: &ConvergenceTable) -> Result<()> {
    let rows = table
        .outer
        .iter()
        .map(|&(n, f)| ("outer", n, f))
        .chain(table.inner.iter().map(|&(n, f)| ("inner", n, f)))
        .map(|(l, n, f)| vec![l.to_string(), n.to_string(), format!("{f}")]);
    write_rows(path, &["loop", "iterations", "fraction_le"], rows)
}

/// Writes `(method, k, m, n, flops)` rows.
pub fn write_complexity(path: &Path, rows: &[(&str, usize, usize, usize, f64)]) -> Result<()> {
    write_rows(
        path,
        &["method", "k", "m", "n", "flops"],
        rows.iter()
            .map(|&(name, k, m, n, f)| vec![name.to_string(), k.to_string(), m.to_string(), n.to_string(), format!("{f}")]),
    )
}

/// Writes `meta.txt`: the run's config, seed, crate version and wall time.
pub fn write_meta(dir: &Path, config_text: &str, seed: u64, wall_seconds: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join("meta.txt");
    let text = format!(
        "version = \"{}\"\nseed = {seed}\nwall_time_s = {wall_seconds:.3}\n\n# config\n{config_text}",
        env!("CARGO_PKG_VERSION"),
    );
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}
