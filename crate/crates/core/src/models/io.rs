//! Model files.
//!
//! Binary: the 8-byte magic `SVSDMODL`, a little-endian `u32` version, a `u8`
//! type tag, `u64` d, n, seed, then the raw arrays as little-endian `f64`.
//! Text: a header line `svsd-model 1 <kind> <d> <n> <seed>` followed by one
//! named line per array with shortest round-trip decimals.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{LogisticModel, Model, QuadraticModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SVSDMODL";
const TEXT_MAGIC: &str = "svsd-model";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFormat {
    Binary,
    Text,
}

pub fn write_model<W: Write>(model: &Model, mut w: W, format: ModelFormat) -> std::io::Result<()> {
    match format {
        ModelFormat::Binary => write_binary(model, &mut w),
        ModelFormat::Text => write_text(model, &mut w),
    }
}

/// Reads either format, detected from the leading bytes.
pub fn read_model<R: Read>(r: R) -> Result<Model> {
    let mut r = BufReader::new(r);
    let head = r.fill_buf().map_err(|e| Error::io("reading model header", e))?;
    if head.starts_with(MAGIC) {
        read_binary(&mut r)
    } else if head.starts_with(TEXT_MAGIC.as_bytes()) {
        read_text(&mut r)
    } else {
        Err(Error::invalid("unrecognised model file header"))
    }
}

impl Model {
    pub fn save(&self, path: &Path, format: ModelFormat) -> Result<()> {
        let ctx = || format!("writing model to {}", path.display());
        let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut w = std::io::BufWriter::new(file);
        write_model(self, &mut w, format).map_err(|e| Error::io(ctx(), e))?;
        w.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening model {}", path.display()), e))?;
        read_model(file)
    }
}

fn tag(model: &Model) -> u8 {
    match model {
        Model::Quadratic(_) => 0,
        Model::Logistic(_) => 1,
    }
}

/// The arrays of a model in file order.
fn arrays(model: &Model) -> Vec<(&'static str, Vec<f64>)> {
    match model {
        Model::Quadratic(m) => vec![
            ("eigenvalues", m.eigenvalues().to_vec()),
            ("qmat", m.qmat().to_vec()),
            ("samples", m.samples().to_vec()),
        ],
        Model::Logistic(m) => vec![
            ("lambda", vec![m.lambda()]),
            ("true_param", m.true_param().to_vec()),
            ("features", m.features().to_vec()),
            ("labels", m.labels().to_vec()),
        ],
    }
}

fn array_lengths(tag: u8, d: usize, n: usize) -> Result<Vec<(&'static str, usize)>> {
    match tag {
        0 => Ok(vec![("eigenvalues", d), ("qmat", d * d), ("samples", n * d)]),
        1 => Ok(vec![("lambda", 1), ("true_param", d), ("features", n * d), ("labels", n)]),
        t => Err(Error::invalid(format!("unknown model type tag {t}"))),
    }
}

fn assemble(tag: u8, d: usize, n: usize, seed: u64, mut parts: Vec<Vec<f64>>) -> Result<Model> {
    let mut take = || parts.remove(0);
    match tag {
        0 => {
            let (eig, q, s) = (take(), take(), take());
            Ok(Model::Quadratic(QuadraticModel::from_parts(d, n, seed, q, eig, s)?))
        }
        _ => {
            let (lambda, tp, f, l) = (take(), take(), take(), take());
            Ok(Model::Logistic(LogisticModel::from_parts(d, n, seed, lambda[0], tp, f, l)?))
        }
    }
}

fn header(model: &Model) -> (usize, usize, u64) {
    use super::ObjectiveModel;
    (model.dim(), model.n_components(), model.seed())
}

fn write_binary<W: Write>(model: &Model, w: &mut W) -> std::io::Result<()> {
    let (d, n, seed) = header(model);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[tag(model)])?;
    for v in [d as u64, n as u64, seed] {
        w.write_all(&v.to_le_bytes())?;
    }
    for (_, arr) in arrays(model) {
        for v in arr {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_binary<R: Read>(r: &mut R) -> Result<Model> {
    let ctx = "reading binary model";
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(ctx, e))?;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(|e| Error::io(ctx, e))?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(Error::invalid(format!("unsupported model file version {version}")));
    }
    let mut b1 = [0u8; 1];
    r.read_exact(&mut b1).map_err(|e| Error::io(ctx, e))?;
    let read_u64 = |r: &mut R| -> Result<u64> {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(|e| Error::io(ctx, e))?;
        Ok(u64::from_le_bytes(b8))
    };
    let d = read_u64(r)? as usize;
    let n = read_u64(r)? as usize;
    let seed = read_u64(r)?;
    let mut parts = Vec::new();
    for (_, len) in array_lengths(b1[0], d, n)? {
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes).map_err(|e| Error::io(ctx, e))?;
        parts.push(
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        );
    }
    assemble(b1[0], d, n, seed, parts)
}

fn write_text<W: Write>(model: &Model, w: &mut W) -> std::io::Result<()> {
    let (d, n, seed) = header(model);
    let kind = match model {
        Model::Quadratic(_) => "quadratic",
        Model::Logistic(_) => "logistic",
    };
    writeln!(w, "{TEXT_MAGIC} {VERSION} {kind} {d} {n} {seed}")?;
    for (name, arr) in arrays(model) {
        write!(w, "{name}")?;
        for v in arr {
            // `{:e}` is the shortest representation that parses back exactly
            write!(w, " {v:e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn read_text<R: BufRead>(r: &mut R) -> Result<Model> {
    let mut lines = r.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::invalid("model file truncated"))?
            .map_err(|e| Error::io("reading text model", e))
    };
    let head = next()?;
    let f: Vec<&str> = head.split_whitespace().collect();
    if f.len() != 6 || f[0] != TEXT_MAGIC {
        return Err(Error::invalid("malformed text model header"));
    }
    if f[1].parse::<u32>().ok() != Some(VERSION) {
        return Err(Error::invalid(format!("unsupported model file version {}", f[1])));
    }
    let tag = match f[2] {
        "quadratic" => 0,
        "logistic" => 1,
        k => return Err(Error::invalid(format!("unknown model kind {k}"))),
    };
    let parse_usize =
        |s: &str| s.parse::<usize>().map_err(|_| Error::invalid(format!("bad integer {s}")));
    let d = parse_usize(f[3])?;
    let n = parse_usize(f[4])?;
    let seed = f[5].parse::<u64>().map_err(|_| Error::invalid("bad seed"))?;
    let mut parts = Vec::new();
    for (name, len) in array_lengths(tag, d, n)? {
        let line = next()?;
        let mut it = line.split_whitespace();
        if it.next() != Some(name) {
            return Err(Error::invalid(format!("expected array `{name}`")));
        }
        let vals = it
            .map(|s| s.parse::<f64>().map_err(|_| Error::invalid(format!("bad number {s}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != len {
            return Err(Error::invalid(format!("array `{name}` has {} values, expected {len}", vals.len())));
        }
        parts.push(vals);
    }
    assemble(tag, d, n, seed, parts)
}
