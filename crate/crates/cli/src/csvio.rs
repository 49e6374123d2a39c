//! CSV tables in and out. Floats are written in the shortest form that
//! parses back to the same value.

use std::fs;
use std::path::Path;

use cellflux_core::inference::uniform_spacing;
use cellflux_core::sim::EventRecord;
use cellflux_core::{convert_units, CellState, FullScale, IsolatedSpace, Prediction, TimeSeries};
use serde::Deserialize;

use crate::error::{CliError, Result};

/// Shortest round-trip decimal form of `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Serializes a header and rows to CSV bytes.
pub fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Reads a CSV file into its header and rows of strings.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    Ok((header, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        CliError::data(path, e.to_string())
    }
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    t: f64,
    nadh: f64,
    atp: f64,
}

/// Raw samples of a `t,nadh,atp` file, checked for order, sign and uniform
/// spacing. Row numbers in errors count the header as line 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub times: Vec<f64>,
    /// `(NADH fluorescence ×10⁻⁶, ATP mM)`.
    pub values: Vec<[f64; 2]>,
}

pub fn read_raw_series(path: &Path) -> Result<RawSeries> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != ["t", "nadh", "atp"] {
        return Err(CliError::data(
            path,
            format!("header must be `t,nadh,atp`, found `{}`", header.join(",")),
        ));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in r.deserialize::<SampleRow>().enumerate() {
        let line = k + 2;
        let row = rec.map_err(|e| CliError::data(path, format!("line {line}: {e}")))?;
        for (name, v) in [("t", row.t), ("nadh", row.nadh), ("atp", row.atp)] {
            if !v.is_finite() {
                return Err(CliError::data(
                    path,
                    format!("line {line}: {name} is not finite"),
                ));
            }
        }
        if row.nadh < 0.0 || row.atp < 0.0 {
            return Err(CliError::data(
                path,
                format!(
                    "line {line}: negative concentration ({}, {})",
                    row.nadh, row.atp
                ),
            ));
        }
        if let Some(&prev) = times.last() {
            if !(row.t > prev) {
                return Err(CliError::data(
                    path,
                    format!("line {line}: t = {} does not increase", row.t),
                ));
            }
        }
        times.push(row.t);
        values.push([row.nadh, row.atp]);
    }
    if times.is_empty() {
        return Err(CliError::data(path, "no samples"));
    }
    if times.len() > 2 {
        let spacing = times[1] - times[0];
        for k in 2..times.len() {
            let d = times[k] - times[k - 1];
            if (d - spacing).abs() > 1e-9 * spacing {
                return Err(CliError::data(
                    path,
                    format!(
                        "line {}: spacing {d} differs from {spacing}; samples must be uniformly spaced",
                        k + 2
                    ),
                ));
            }
        }
    }
    uniform_spacing(&times).map_err(|e| CliError::data(path, e.to_string()))?;
    Ok(RawSeries { times, values })
}

/// Reads a `t,nadh,atp` file and converts it to model units.
pub fn load_timeseries(
    path: &Path,
    full: FullScale,
    caps: &cellflux_core::Capacities,
) -> Result<(RawSeries, TimeSeries)> {
    let raw = read_raw_series(path)?;
    let series = convert_units(&raw.times, &raw.values, full, caps)
        .map_err(|e| CliError::data(path, e.to_string()))?;
    Ok((raw, series))
}

pub fn prediction_csv(p: &Prediction) -> Vec<u8> {
    to_csv(
        &Prediction::COLUMNS,
        (0..p.len()).map(|k| p.row(k).iter().map(|v| fmt_f64(*v)).collect()),
    )
}

pub fn lifetime_csv(grid: &[f64], pdf: &[f64]) -> Vec<u8> {
    to_csv(
        &["t", "pdf"],
        grid.iter()
            .zip(pdf)
            .map(|(t, f)| vec![fmt_f64(*t), fmt_f64(*f)]),
    )
}

pub const EVENT_COLUMNS: [&str; 8] = ["k", "t", "event", "cell", "m_ch", "n_atp", "q_l", "q_h"];

/// Event log; the post-state columns are empty after a death.
pub fn events_csv(events: &[EventRecord]) -> Vec<u8> {
    to_csv(
        &EVENT_COLUMNS,
        events.iter().enumerate().map(|(k, e)| {
            let mut row = vec![
                (k + 1).to_string(),
                fmt_f64(e.time),
                e.kind.name().to_owned(),
                e.cell.to_string(),
            ];
            match e.state {
                CellState::Alive(p) => row.extend(
                    [p.m_ch, p.n_atp, p.q_l, p.q_h]
                        .iter()
                        .map(|v| v.to_string()),
                ),
                CellState::Dead => row.extend(std::iter::repeat(String::new()).take(4)),
            }
            row
        }),
    )
}

pub const PI0_COLUMNS: [&str; 4] = ["index", "m_ch", "n_atp", "p"];

pub fn pi0_csv(space: &IsolatedSpace, pi0: &[f64]) -> Vec<u8> {
    to_csv(
        &PI0_COLUMNS,
        pi0.iter().enumerate().map(|(i, p)| {
            let (m, n) = space.levels(i);
            vec![i.to_string(), m.to_string(), n.to_string(), fmt_f64(*p)]
        }),
    )
}

/// Reads a distribution written by [`pi0_csv`].
pub fn read_pi0(path: &Path, space: &IsolatedSpace) -> Result<Vec<f64>> {
    let (header, rows) = read_table(path)?;
    if header != PI0_COLUMNS {
        return Err(CliError::data(path, "header must be `index,m_ch,n_atp,p`"));
    }
    let mut pi0 = vec![0.0; space.len()];
    for (k, row) in rows.iter().enumerate() {
        let line = k + 2;
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| CliError::data(path, format!("line {line}: `{s}` is not a number")))
        };
        let (m, n) = (parse(&row[1])? as u32, parse(&row[2])? as u32);
        let i = space.index_of(m, n).ok_or_else(|| {
            CliError::data(
                path,
                format!("line {line}: state ({m}, {n}) is outside the capacities"),
            )
        })?;
        pi0[i] = parse(&row[3])?;
    }
    Ok(pi0)
}

/// Writes bytes, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
