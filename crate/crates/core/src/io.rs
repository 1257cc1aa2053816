//! CSV input and output. Floats use the shortest representation that parses
//! back to the same bits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodValue;
use crate::path::Path;

/// Relative tolerance on the time column of a path file.
const TIME_TOL: f64 = 1e-9;

pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_path_csv<W: Write>(path: &Path, mut out: W) -> Result<()> {
    writeln!(out, "t,x")?;
    for (k, x) in path.values().iter().enumerate() {
        writeln!(out, "{},{}", format_f64(path.time(k)), format_f64(*x))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_path(path: &Path, file: &std::path::Path) -> Result<()> {
    write_path_csv(path, BufWriter::new(File::create(file)?))
}

fn csv_err(line: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        line,
        message: message.into(),
    }
}

fn parse_field(field: Option<&str>, line: usize, name: &str) -> Result<f64> {
    let s = field.ok_or_else(|| csv_err(line, format!("missing column '{name}'")))?;
    s.trim()
        .parse::<f64>()
        .map_err(|e| csv_err(line, format!("bad {name} value '{s}': {e}")))
}

/// Reads a `t,x` file with uniformly spaced times.
pub fn read_path_csv<R: Read>(input: R) -> Result<Path> {
    let reader = BufReader::new(input);
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim() != "t,x" {
                return Err(csv_err(lineno, format!("expected header 't,x', found '{}'", line.trim())));
            }
            saw_header = true;
            continue;
        }
        let mut fields = line.split(',');
        let t = parse_field(fields.next(), lineno, "t")?;
        let x = parse_field(fields.next(), lineno, "x")?;
        if fields.next().is_some() {
            return Err(csv_err(lineno, "too many columns"));
        }
        times.push(t);
        values.push(x);
    }
    if !saw_header {
        return Err(csv_err(1, "empty path file"));
    }
    if times.len() < 3 {
        return Err(csv_err(times.len() + 1, "a path needs at least 3 rows"));
    }
    let step = times[1] - times[0];
    if !(step > 0.0) {
        return Err(csv_err(3, "times must increase"));
    }
    for (k, &t) in times.iter().enumerate() {
        let expected = times[0] + k as f64 * step;
        if (t - expected).abs() > TIME_TOL * expected.abs().max(1.0) {
            return Err(csv_err(k + 2, format!("time {t} breaks the uniform step {step}")));
        }
    }
    Path::new(step, values)
}

pub fn load_path(file: &std::path::Path) -> Result<Path> {
    read_path_csv(File::open(file)?)
}

/// Writes `header` followed by `rows`.
pub fn write_csv(file: &std::path::Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = BufWriter::new(File::create(file)?);
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()?;
    Ok(())
}

/// `y,value` dump of a function sampled on torus nodes.
pub fn write_grid_csv(file: &std::path::Path, nodes: &[f64], values: &[f64]) -> Result<()> {
    write_csv(
        file,
        "y,value",
        nodes
            .iter()
            .zip(values)
            .map(|(y, v)| format!("{},{}", format_f64(*y), format_f64(*v))),
    )
}

/// `theta,value,kind` likelihood profile.
pub fn write_profile_csv(file: &std::path::Path, values: &[LikelihoodValue]) -> Result<()> {
    write_csv(
        file,
        "theta,value,kind",
        values
            .iter()
            .map(|v| format!("{},{},{}", format_f64(v.theta), format_f64(v.value), v.kind)),
    )
}
