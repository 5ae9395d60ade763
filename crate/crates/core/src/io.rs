//! File formats.
//!
//! Field dumps are a plain-text header followed by raw little-endian `f64`
//! values, cell order as in [`crate::grid`], snapshots back to back:
//!
//! ```text
//! kscontrol-field 1
//! dim 2
//! cells 8 8
//! spacing 0.125 0.125
//! time_index 0
//! count 11
//! data
//! <count * num_cells * 8 bytes>
//! ```
//!
//! `time_index` is the time node of the first snapshot.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::DiagnosticsReport;
use crate::grid::{Grid, ScalarField};
use crate::optimize::IterationRecord;

const MAGIC: &str = "kscontrol-field 1";

/// Writes `series` as one dump whose first snapshot is node `time_index`.
pub fn write_field_dump<W: Write>(mut out: W, series: &[ScalarField], time_index: usize) -> Result<()> {
    let grid = match series.first() {
        Some(f) => f.grid(),
        None => return Err(Error::invalid("cannot dump an empty series")),
    };
    let join = |xs: Vec<String>| xs.join(" ");
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "dim {}", grid.dim())?;
    writeln!(out, "cells {}", join(grid.cells().iter().map(|c| c.to_string()).collect()))?;
    writeln!(out, "spacing {}", join(grid.spacing().iter().map(|h| format!("{h:?}")).collect()))?;
    writeln!(out, "time_index {time_index}")?;
    writeln!(out, "count {}", series.len())?;
    writeln!(out, "data")?;
    let mut buf = Vec::with_capacity(series.len() * grid.num_cells() * 8);
    for field in series {
        if field.grid() != grid {
            return Err(Error::invalid("dump series mixes grids"));
        }
        for x in field.values() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Parsed dump contents, not yet bound to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub cells: Vec<usize>,
    pub spacing: Vec<f64>,
    pub time_index: usize,
    pub snapshots: Vec<Vec<f64>>,
}

fn header_value<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Io(format!("malformed dump header: expected '{key}', got '{line}'")))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Io(format!("bad {what} value '{t}' in dump header"))))
        .collect()
}

pub fn read_field_dump<R: BufRead>(mut input: R) -> Result<FieldDump> {
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> Result<String> {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(Error::Io("truncated dump header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(&mut input)? != MAGIC {
        return Err(Error::Io("not a kscontrol field dump".into()));
    }
    let dim: usize = parse_list(header_value(&next_line(&mut input)?, "dim")?, "dim")?
        .first()
        .copied()
        .ok_or_else(|| Error::Io("missing dim".into()))?;
    let cells: Vec<usize> = parse_list(header_value(&next_line(&mut input)?, "cells")?, "cells")?;
    let spacing: Vec<f64> = parse_list(header_value(&next_line(&mut input)?, "spacing")?, "spacing")?;
    let time_index: usize = header_value(&next_line(&mut input)?, "time_index")?
        .trim()
        .parse()
        .map_err(|_| Error::Io("bad time_index".into()))?;
    let count: usize = header_value(&next_line(&mut input)?, "count")?
        .trim()
        .parse()
        .map_err(|_| Error::Io("bad count".into()))?;
    if next_line(&mut input)? != "data" {
        return Err(Error::Io("missing data marker".into()));
    }
    if cells.len() != dim || spacing.len() != dim {
        return Err(Error::Io("dump header dimension mismatch".into()));
    }
    let n: usize = cells.iter().product();
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * n * 8 {
        return Err(Error::Io(format!(
            "dump payload has {} bytes, expected {}",
            bytes.len(),
            count * n * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let snapshots = values.chunks(n.max(1)).take(count).map(|c| c.to_vec()).collect();
    Ok(FieldDump {
        cells,
        spacing,
        time_index,
        snapshots,
    })
}

impl FieldDump {
    /// Binds the snapshots to `grid`, checking shape and spacing.
    pub fn into_fields(self, grid: &Arc<Grid>) -> Result<Vec<ScalarField>> {
        if self.cells != grid.cells() {
            return Err(Error::invalid(format!(
                "dump cells {:?} do not match grid {:?}",
                self.cells,
                grid.cells()
            )));
        }
        for (a, b) in self.spacing.iter().zip(grid.spacing()) {
            if (a - b).abs() > 1e-12 * b.abs() {
                return Err(Error::invalid(format!("dump spacing {a} does not match grid spacing {b}")));
            }
        }
        self.snapshots.into_iter().map(|s| ScalarField::new(grid, s)).collect()
    }
}

#[derive(Serialize)]
struct DiagnosticsRow {
    time: f64,
    mass: f64,
    min_u: f64,
    max_u: f64,
    min_v: f64,
    max_v: f64,
    energy: f64,
    grad_z_sq: f64,
    criterion_cum: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Per-node summary columns
/// `time,mass,min_u,max_u,min_v,max_v,energy,grad_z_sq,criterion_cum`.
pub fn write_diagnostics_csv<W: Write>(out: W, report: &DiagnosticsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.records {
        w.serialize(DiagnosticsRow {
            time: r.time,
            mass: r.mass,
            min_u: r.min_u,
            max_u: r.max_u,
            min_v: r.min_v,
            max_v: r.max_v,
            energy: r.energy,
            grad_z_sq: r.grad_z_sq,
            criterion_cum: r.criterion_cum,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Every diagnostic, including the energy-inequality ingredients.
pub fn write_energy_csv<W: Write>(out: W, report: &DiagnosticsReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct IterationRow {
    iter: usize,
    #[serde(rename = "J")]
    cost: f64,
    residual: f64,
    step: f64,
    criterion: f64,
}

/// Columns `iter,J,residual,step,criterion`.
pub fn write_iterations_csv<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(IterationRow {
            iter: r.iter,
            cost: r.cost,
            residual: r.residual,
            step: r.step,
            criterion: r.criterion,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
