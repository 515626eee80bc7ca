//! CSV schema for training traces, and median/std aggregation across runs.

use std::collections::BTreeMap;
use std::path::Path;

use subspace_gd_core::trainer::{RunStatus, TrainTrace};

use crate::{CliError, Result};

pub const TRACE_HEADER: [&str; 7] = ["t", "loss", "recon_norm", "recon_restricted", "off_sub", "oracle_dist", "status"];

/// 17 significant digits, enough to reproduce every `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

/// Writes one row per record. A diverged run gets a final all-NaN row at the
/// step where the loss blew up, with status `diverged`.
pub fn write_trace(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        let m = &r.metrics;
        w.write_record([
            m.t.to_string(),
            fmt_f64(r.loss),
            fmt_f64(m.recon_norm),
            fmt_f64(m.recon_restricted),
            fmt_f64(opt(m.off_sub)),
            fmt_f64(opt(m.oracle_dist)),
            RunStatus::Completed.as_str().to_string(),
        ])?;
    }
    if trace.status == RunStatus::Diverged {
        let nan = fmt_f64(f64::NAN);
        let t = trace.step_errors.len().to_string();
        w.write_record([t.as_str(), &nan, &nan, &nan, &nan, &nan, RunStatus::Diverged.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub loss: f64,
    pub recon_norm: f64,
    pub recon_restricted: f64,
    pub off_sub: f64,
    pub oracle_dist: f64,
    pub status: String,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let table = Table::read(path)?;
    if table.header != TRACE_HEADER {
        return Err(CliError::Data(format!("{} is not a trace CSV", path.display())));
    }
    table
        .rows
        .iter()
        .map(|r| {
            Ok(TraceRow {
                t: parse(&r[0])? as usize,
                loss: parse(&r[1])?,
                recon_norm: parse(&r[2])?,
                recon_restricted: parse(&r[3])?,
                off_sub: parse(&r[4])?,
                oracle_dist: parse(&r[5])?,
                status: r[6].clone(),
            })
        })
        .collect()
}

pub fn parse(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| CliError::Data(format!("not a number: '{s}'")))
}

/// A CSV file held as strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Table { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_to(&mut w)?;
        Ok(())
    }

    pub fn write_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name).ok_or_else(|| CliError::Data(format!("no column '{name}'")))?;
        self.rows.iter().map(|r| parse(&r[j])).collect()
    }
}

/// Median of the non-NaN values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Sample standard deviation (divisor `n - 1`) of the non-NaN values; zero for a single value.
pub fn std_dev(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    match v.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let mean = v.iter().sum::<f64>() / n as f64;
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

/// Per-`t` median and standard deviation of every numeric column across runs.
///
/// All inputs must share one header whose first column is `t`. String columns
/// (`status`) are dropped; `runs` counts the runs with a completed row at `t`.
pub fn aggregate_tables(tables: &[Table]) -> Result<Table> {
    let first = tables.first().ok_or_else(|| CliError::Data("nothing to aggregate".into()))?;
    if first.header.first().map(String::as_str) != Some("t") {
        return Err(CliError::Data("aggregation needs 't' as the first column".into()));
    }
    if let Some(bad) = tables.iter().position(|t| t.header != first.header) {
        return Err(CliError::Data(format!(
            "schema mismatch: input {bad} has columns [{}], expected [{}]",
            tables[bad].header.join(","),
            first.header.join(",")
        )));
    }
    let status = first.column_index("status");
    let numeric: Vec<usize> = (1..first.header.len()).filter(|&j| Some(j) != status).collect();
    let mut by_t: BTreeMap<u64, Vec<Vec<f64>>> = BTreeMap::new();
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for table in tables {
        for row in &table.rows {
            let t = parse(&row[0])?;
            if !(t >= 0.0 && t.fract() == 0.0) {
                return Err(CliError::Data(format!("bad iteration index '{}'", row[0])));
            }
            let t = t as u64;
            let ok = status.is_none_or(|j| row[j] == RunStatus::Completed.as_str());
            let cols = by_t.entry(t).or_insert_with(|| vec![Vec::new(); numeric.len()]);
            for (c, &j) in numeric.iter().enumerate() {
                cols[c].push(parse(&row[j])?);
            }
            *counts.entry(t).or_insert(0) += ok as usize;
        }
    }
    let mut header = vec!["t".to_string()];
    for &j in &numeric {
        header.push(format!("{}_median", first.header[j]));
        header.push(format!("{}_std", first.header[j]));
    }
    header.push("runs".into());
    let rows = by_t
        .into_iter()
        .map(|(t, cols)| {
            let mut row = vec![t.to_string()];
            for c in &cols {
                row.push(fmt_f64(median(c)));
                row.push(fmt_f64(std_dev(c)));
            }
            row.push(counts[&t].to_string());
            row
        })
        .collect();
    Ok(Table { header, rows })
}

pub fn aggregate_files<P: AsRef<Path>>(paths: &[P]) -> Result<Table> {
    let tables = paths.iter().map(|p| Table::read(p.as_ref())).collect::<Result<Vec<_>>>()?;
    aggregate_tables(&tables)
}
