//! Numeric CSV tables: rows are time points, columns are channels.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::systems::Trajectory;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    #[default]
    None,
    ZscorePerChannel,
}

impl Preprocess {
    pub fn apply(self, traj: Trajectory) -> Trajectory {
        match self {
            Preprocess::None => traj,
            Preprocess::ZscorePerChannel => traj.zscored(),
        }
    }
}

/// Reads a rectangular numeric table into a `rows × columns` matrix.
///
/// Parse errors carry the 1-based line and column of the offending cell.
/// Non-finite values (`nan`, `inf`) are rejected.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Matrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, has_header)
}

pub fn read_csv<R: std::io::Read>(reader: R, has_header: bool) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    column: record.len().min(w) + 1,
                    message: format!("expected {w} fields, found {}", record.len()),
                });
            }
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: j + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(value);
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    Ok(Matrix::from_row_iterator(rows, cols, values))
}

fn csv_error(e: csv::Error) -> Error {
    let (line, message) = match e.kind() {
        csv::ErrorKind::UnequalLengths {
            pos,
            expected_len,
            len,
        } => (
            pos.as_ref().map_or(0, |p| p.line()),
            format!("expected {expected_len} fields, found {len}"),
        ),
        _ => (e.position().map_or(0, |p| p.line()), e.to_string()),
    };
    Error::Parse {
        line,
        column: 0,
        message,
    }
}

/// Loads a trajectory (rows = time) and applies the preprocessing step.
pub fn load_trajectory(path: &Path, has_header: bool, dt: f64, preprocess: Preprocess) -> Result<Trajectory> {
    let table = load_csv(path, has_header)?;
    if table.nrows() < 2 {
        return Err(Error::domain(format!(
            "{} has {} rows; a trajectory needs at least 2",
            path.display(),
            table.nrows()
        )));
    }
    Ok(preprocess.apply(Trajectory::new(table.transpose(), dt)?))
}

/// Writes `rows` (one row per record) under an optional header line.
pub fn write_csv(path: &Path, header: Option<&[String]>, rows: &Matrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    if let Some(h) = header {
        writeln!(w, "{}", h.join(",")).map_err(io_err)?;
    }
    for row in rows.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Writes a trajectory with one row per time point.
pub fn save_trajectory(path: &Path, traj: &Trajectory, header: bool) -> Result<()> {
    let names: Vec<String> = (0..traj.dim()).map(|i| format!("y{i}")).collect();
    write_csv(path, header.then_some(names.as_slice()), &traj.data().transpose())
}
