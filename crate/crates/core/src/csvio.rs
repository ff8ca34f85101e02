//! CSV import and export of pipeline artifacts.
//!
//! Every file starts with a header row. Numbers use the shortest decimal form
//! that parses back to the same `f64`, so a written file reads back
//! bit-identical.
//!
//! | file              | columns                                                      |
//! |-------------------|--------------------------------------------------------------|
//! | field / estimate  | `t`, then one column per size node headed by its `x`         |
//! | output            | `t`, `y`, `y_noisy`, `c_s`                                   |
//! | observers         | `t`, then one column per gain headed by its `lambda`         |
//! | metrics           | `k`, `t_k`, `residual`, `norm`, `solve_iterations`, `wall_time_ms`, `rel_l2_error` |
//! | checks            | `quantity`, `value`, `tolerance`, `pass`                     |

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, Signal};
use crate::observer::{LambdaBank, ObserverBank};
use crate::process::NdfField;

fn num(v: f64) -> String {
    // Debug formatting is the shortest round-trip form and switches to
    // exponent notation for very small and very large magnitudes.
    format!("{v:?}")
}

fn parse(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("{what}: cannot read `{s}` as a number")))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let what = path.display().to_string();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| parse(s, &what)).collect::<Result<Vec<_>>>()?);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{what}: no data rows")));
    }
    Ok((header, rows))
}

fn column(rows: &[Vec<f64>], c: usize) -> Vec<f64> {
    rows.iter().map(|r| r[c]).collect()
}

/// Writes a field with one row per time node.
pub fn write_field(path: impl AsRef<Path>, field: &NdfField) -> Result<()> {
    let grid = field.grid();
    let mut w = writer(path.as_ref())?;
    let mut header = vec!["t".to_owned()];
    header.extend((0..grid.n_x).map(|j| num(grid.x(j))));
    w.write_record(&header)?;
    for (k, row) in field.rows().enumerate() {
        let mut rec = vec![num(grid.t(k))];
        rec.extend(row.iter().map(|&v| num(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field`]; the grid is rebuilt from the
/// coordinates.
pub fn read_field(path: impl AsRef<Path>) -> Result<NdfField> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    let what = path.display().to_string();
    if header.len() < 3 || rows.len() < 2 {
        return Err(Error::Parse(format!("{what}: a field needs at least 2 x 2 samples")));
    }
    let xs = header[1..].iter().map(|s| parse(s, &what)).collect::<Result<Vec<_>>>()?;
    let ts = column(&rows, 0);
    let grid = Grid::new(xs[0], xs[xs.len() - 1], xs.len(), ts[0], ts[ts.len() - 1], ts.len())?;
    let mut values = Vec::with_capacity(grid.n_t * grid.n_x);
    for row in &rows {
        if row.len() != grid.n_x + 1 {
            return Err(Error::Parse(format!("{what}: ragged row")));
        }
        values.extend_from_slice(&row[1..]);
    }
    NdfField::new(grid, values)
}

/// Output file: clean third moment, the measured (noisy) one and the
/// corresponding solid concentration.
pub fn write_output(path: impl AsRef<Path>, y: &Signal, y_noisy: &Signal, c_s: &Signal) -> Result<()> {
    if y_noisy.len() != y.len() || c_s.len() != y.len() {
        return Err(Error::Shape("output columns have different lengths".into()));
    }
    let mut w = writer(path.as_ref())?;
    w.write_record(["t", "y", "y_noisy", "c_s"])?;
    for k in 0..y.len() {
        w.write_record([num(y.times()[k]), num(y.values()[k]), num(y_noisy.values()[k]), num(c_s.values()[k])])?;
    }
    w.flush()?;
    Ok(())
}

/// Clean and noisy outputs read back from an output file.
pub fn read_output(path: impl AsRef<Path>) -> Result<(Signal, Signal)> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    if header.len() < 3 || header[1] != "y" || header[2] != "y_noisy" {
        return Err(Error::Parse(format!("{}: expected columns t, y, y_noisy", path.display())));
    }
    let ts = column(&rows, 0);
    Ok((Signal::new(ts.clone(), column(&rows, 1))?, Signal::new(ts, column(&rows, 2))?))
}

/// A single named signal.
pub fn write_signal(path: impl AsRef<Path>, name: &str, signal: &Signal) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["t", name])?;
    for (t, v) in signal.times().iter().zip(signal.values()) {
        w.write_record([num(*t), num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observers(path: impl AsRef<Path>, bank: &ObserverBank) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    let mut header = vec!["t".to_owned()];
    header.extend(bank.lambdas().values().iter().map(|&l| num(l)));
    w.write_record(&header)?;
    for (k, t) in bank.times().iter().enumerate() {
        let mut rec = vec![num(*t)];
        rec.extend(bank.snapshot(k).into_iter().map(num));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observers(path: impl AsRef<Path>) -> Result<ObserverBank> {
    let path = path.as_ref();
    let (header, rows) = read_table(path)?;
    let what = path.display().to_string();
    let lambdas = header[1..].iter().map(|s| parse(s, &what)).collect::<Result<Vec<_>>>()?;
    let p = lambdas.len();
    if rows.iter().any(|r| r.len() != p + 1) {
        return Err(Error::Parse(format!("{what}: ragged row")));
    }
    let trajectories = (0..p).map(|i| column(&rows, i + 1)).collect();
    ObserverBank::from_trajectories(LambdaBank::new(lambdas)?, column(&rows, 0), trajectories)
}

/// One line of the per-step metrics file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub k: usize,
    pub t: f64,
    pub residual: f64,
    pub norm: f64,
    pub iterations: usize,
    pub wall_time_ms: f64,
    /// `NaN` when no reference is available or the reference vanishes.
    pub rel_l2_error: f64,
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["k", "t_k", "residual", "norm", "solve_iterations", "wall_time_ms", "rel_l2_error"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            num(r.t),
            num(r.residual),
            num(r.norm),
            r.iterations.to_string(),
            num(r.wall_time_ms),
            num(r.rel_l2_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one analysis check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub quantity: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn write_checks(path: impl AsRef<Path>, rows: &[CheckRow]) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["quantity", "value", "tolerance", "pass"])?;
    for r in rows {
        w.write_record([r.quantity.clone(), num(r.value), num(r.tolerance), r.pass.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{run_observer_bank, ObserverScheme};

    #[test]
    fn field_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(0.0, 10.0, 7, 0.0, 3.0, 5).unwrap();
        let values = (0..35).map(|i| (i as f64 * 0.37).sin() / 3.0).collect();
        let field = NdfField::new(grid, values).unwrap();
        let path = dir.path().join("f.csv");
        write_field(&path, &field).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.values(), field.values());
        assert_eq!(back.grid().n_x, 7);
        assert_eq!(back.grid().dx(), grid.dx());
    }

    #[test]
    fn observers_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(0.0, 1.0, 2, 0.0, 2.0, 21).unwrap();
        let y = Signal::from_fn(&grid, |t| t.exp() / 7.0).unwrap();
        let bank = LambdaBank::new(vec![-0.3, -7.0]).unwrap();
        let obs = run_observer_bank(&bank, &y, &[0.1, 0.2], ObserverScheme::Exponential).unwrap();
        let path = dir.path().join("o.csv");
        write_observers(&path, &obs).unwrap();
        assert_eq!(read_observers(&path).unwrap(), obs);
    }

    #[test]
    fn output_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(0.0, 1.0, 2, 0.0, 1.0, 11).unwrap();
        let y = Signal::from_fn(&grid, |t| t * t / 3.0).unwrap();
        let noisy = y.map(|v| v + 1e-3).unwrap();
        let path = dir.path().join("out.csv");
        write_output(&path, &y, &noisy, &y).unwrap();
        let (a, b) = read_output(&path).unwrap();
        assert_eq!((a, b), (y, noisy));
    }

    #[test]
    fn bad_numbers_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,y,y_noisy,c_s\n0,1,oops,1\n").unwrap();
        assert!(matches!(read_output(&path), Err(Error::Parse(_))));
    }
}
