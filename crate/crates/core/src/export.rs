//! Plot-ready CSV output.
//!
//! Every file starts with a `# schema: <name> v<version>` comment line,
//! followed by a header row. Floats are written with 17 significant digits.

use std::io::{self, Write};

use serde::Serialize;

use crate::ensemble::Ensemble;
use crate::error::Result;
use crate::metrics::moment;

pub const PATHS_SCHEMA: &str = "svsd-paths v1";
pub const MOMENTS_SCHEMA: &str = "svsd-moments v1";
pub const SWEEP_SCHEMA: &str = "svsd-w1-sweep v1";

#[derive(Debug, Clone, Copy)]
pub enum Field<'a> {
    Str(&'a str),
    Int(u64),
    Float(f64),
}

impl std::fmt::Display for Field<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field::Str(s) => f.write_str(s),
            Field::Int(i) => write!(f, "{i}"),
            Field::Float(v) => write!(f, "{v:.16e}"),
        }
    }
}

/// Row writer that enforces the column count given by the header.
pub struct CsvWriter<W: Write> {
    w: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new<S: AsRef<str>>(mut w: W, schema: &str, header: &[S]) -> io::Result<Self> {
        writeln!(w, "# schema: {schema}")?;
        let names: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
        writeln!(w, "{}", names.join(","))?;
        Ok(Self { w, columns: header.len() })
    }

    pub fn row(&mut self, fields: &[Field<'_>]) -> io::Result<()> {
        if fields.len() != self.columns {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("row has {} fields, header has {}", fields.len(), self.columns),
            ));
        }
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.w.write_all(b",")?;
            }
            write!(self.w, "{f}")?;
        }
        self.w.write_all(b"\n")
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.w.flush()?;
        Ok(self.w)
    }
}

/// Columns `component, replica, s, x_1..x_d`, one row per epoch state.
pub fn write_paths<W: Write>(w: W, ensembles: &[&Ensemble]) -> io::Result<W> {
    let d = ensembles.first().map_or(1, |e| e.dim);
    let mut header: Vec<String> = vec!["component".into(), "replica".into(), "s".into()];
    header.extend((1..=d).map(|j| format!("x_{j}")));
    let mut csv = CsvWriter::new(w, PATHS_SCHEMA, &header)?;
    let mut fields = Vec::with_capacity(3 + d);
    for e in ensembles {
        for (r, path) in e.paths.iter().enumerate() {
            for s in 0..=path.epochs() {
                fields.clear();
                fields.push(Field::Str(e.component.as_str()));
                fields.push(Field::Int(r as u64));
                fields.push(Field::Int(s as u64));
                fields.extend(path.state(s).iter().map(|&v| Field::Float(v)));
                csv.row(&fields)?;
            }
        }
    }
    csv.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub component: &'static str,
    pub s: usize,
    pub m1: f64,
    pub m2: f64,
    pub m4: f64,
    pub m8: f64,
}

/// Ensemble moments `(1/R) Σ |x|^p`, `p ∈ {1, 2, 4, 8}`, at every epoch.
pub fn moment_rows(e: &Ensemble) -> Result<Vec<MomentRow>> {
    (0..=e.epochs())
        .map(|s| {
            let m = e.measure(s);
            Ok(MomentRow {
                component: e.component.as_str(),
                s,
                m1: moment(&m, 1)?,
                m2: moment(&m, 2)?,
                m4: moment(&m, 4)?,
                m8: moment(&m, 8)?,
            })
        })
        .collect()
}

pub fn write_moments<W: Write>(w: W, rows: &[MomentRow]) -> io::Result<W> {
    let mut csv = CsvWriter::new(w, MOMENTS_SCHEMA, &["component", "s", "m1", "m2", "m4", "m8"])?;
    for r in rows {
        csv.row(&[
            Field::Str(r.component),
            Field::Int(r.s as u64),
            Field::Float(r.m1),
            Field::Float(r.m2),
            Field::Float(r.m4),
            Field::Float(r.m8),
        ])?;
    }
    csv.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub eta: f64,
    pub delta: f64,
    pub s: usize,
    pub w1: f64,
    pub stderr: f64,
}

impl SweepRow {
    pub fn sqrt_eta_delta(&self) -> f64 {
        (self.eta * self.delta).sqrt()
    }
}

/// Columns `eta, delta, s, w1, stderr, sqrt_eta_delta`.
pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> io::Result<W> {
    let mut csv = CsvWriter::new(w, SWEEP_SCHEMA, &["eta", "delta", "s", "w1", "stderr", "sqrt_eta_delta"])?;
    for r in rows {
        csv.row(&[
            Field::Float(r.eta),
            Field::Float(r.delta),
            Field::Int(r.s as u64),
            Field::Float(r.w1),
            Field::Float(r.stderr),
            Field::Float(r.sqrt_eta_delta()),
        ])?;
    }
    csv.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let x = 0.1 + 0.2;
        let s = Field::Float(x).to_string();
        assert_eq!(s.parse::<f64>().unwrap(), x);
        assert_eq!(s, "3.0000000000000004e-1");
    }

    #[test]
    fn sweep_layout() {
        let rows = [SweepRow { eta: 0.01, delta: 0.04, s: 3, w1: 0.5, stderr: 0.01 }];
        let out = String::from_utf8(write_sweep(Vec::new(), &rows).unwrap()).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "# schema: svsd-w1-sweep v1");
        assert_eq!(lines[1], "eta,delta,s,w1,stderr,sqrt_eta_delta");
        assert!(lines[2].starts_with("1.0000000000000000e-2,4.0000000000000001e-2,3,"));
        assert!(lines[2].ends_with(",2.0000000000000000e-2"));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let mut csv = CsvWriter::new(Vec::new(), "t v1", &["a", "b"]).unwrap();
        assert!(csv.row(&[Field::Int(1)]).is_err());
    }
}
