//! Text formats: FROSTT-style `.tns` tensors and Kruskal model files.
//!
//! A `.tns` line holds `N` 1-based coordinates and a value separated by
//! whitespace. Lines starting with `#` are comments, except an optional
//! `# dims: I_1 ... I_N` header. Without a header the dimensions are the
//! largest coordinate seen per mode.
//!
//! A model file is
//!
//! ```text
//! sigma s_1 ... s_R
//! factor I_1 R
//! <I_1 rows of R values>
//! factor I_2 R
//! ...
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::tensor::{KruskalTensor, SparseTensorCoo};

#[derive(Clone, Debug, Default)]
pub struct TnsOptions {
    /// Overrides the header and the inferred dimensions.
    pub dims: Option<Vec<usize>>,
    /// Apply `x -> log(1 + x)` to every value after deduplication.
    pub log1p: bool,
}

pub fn parse_tns(path: impl AsRef<Path>, opts: &TnsOptions) -> Result<SparseTensorCoo> {
    read_tns(File::open(path)?, opts)
}

pub fn read_tns(reader: impl Read, opts: &TnsOptions) -> Result<SparseTensorCoo> {
    let mut header: Option<Vec<usize>> = None;
    let mut order: Option<usize> = None;
    let mut entries = Vec::new();
    let mut seen_max: Vec<usize> = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(comment) = text.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("dims:") {
                let dims = rest
                    .split_whitespace()
                    .map(|t| t.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse { line: lineno, msg: format!("bad dims header: {e}") })?;
                header = Some(dims);
            }
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: "expected coordinates followed by a value".into(),
            });
        }
        let n = fields.len() - 1;
        match order {
            None => {
                order = Some(n);
                seen_max = vec![0; n];
            }
            Some(o) if o != n => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("{n} coordinates, earlier lines have {o}"),
                })
            }
            _ => {}
        }
        let mut coords = Vec::with_capacity(n);
        for (k, f) in fields[..n].iter().enumerate() {
            let c: i64 = f.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("coordinate {f:?} is not an integer"),
            })?;
            if c <= 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("coordinate {c} must be at least 1"),
                });
            }
            let c = c as usize;
            seen_max[k] = seen_max[k].max(c);
            coords.push(c - 1);
        }
        let v: f64 = fields[n].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("value {:?} is not a number", fields[n]),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: lineno,
                msg: "value is not finite".into(),
            });
        }
        entries.push((coords, v));
    }

    let dims = match (&opts.dims, header) {
        (Some(d), _) => d.clone(),
        (None, Some(h)) => h,
        (None, None) => seen_max,
    };
    if order.is_some_and(|o| o != dims.len()) {
        return Err(Error::Shape(format!(
            "{} dims given for an order-{} tensor",
            dims.len(),
            order.unwrap_or(0)
        )));
    }
    if dims.is_empty() {
        return Err(Error::Parse { line: 0, msg: "no entries and no dims".into() });
    }
    let mut t = SparseTensorCoo::from_entries(dims, entries)?;
    if opts.log1p {
        t.map_values(f64::ln_1p);
    }
    Ok(t)
}

/// Writes 1-based coordinates with a dims header; values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_tns(t: &SparseTensorCoo, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let dims: Vec<String> = t.dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "# dims: {}", dims.join(" "))?;
    for (c, v) in t.entries() {
        for i in c {
            write!(w, "{} ", i + 1)?;
        }
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_model(model: &KruskalTensor, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    write!(w, "sigma")?;
    for s in &model.sigma {
        write!(w, " {s}")?;
    }
    writeln!(w)?;
    for u in &model.factors {
        writeln!(w, "factor {} {}", u.rows(), u.cols())?;
        for i in 0..u.rows() {
            let row: Vec<String> = u.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_model(reader: impl Read) -> Result<KruskalTensor> {
    let mut lines = BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|l| l.as_ref().map_or(true, |(_, s)| !s.trim().is_empty()));
    let bad = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
    let numbers = |line: usize, s: &str| -> Result<Vec<f64>> {
        s.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(line, &format!("bad number {t:?}"))))
            .collect()
    };

    let (ln, first) = lines.next().ok_or_else(|| bad(1, "empty model file"))??;
    let sigma = match first.trim().strip_prefix("sigma") {
        Some(rest) => numbers(ln, rest)?,
        None => return Err(bad(ln, "expected a sigma line")),
    };
    let mut factors = Vec::new();
    while let Some(next) = lines.next() {
        let (ln, head) = next?;
        let dims: Vec<usize> = match head.trim().strip_prefix("factor") {
            Some(rest) => rest
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| bad(ln, "bad factor header")))
                .collect::<Result<_>>()?,
            None => return Err(bad(ln, "expected a factor header")),
        };
        let [rows, cols] = dims[..] else {
            return Err(bad(ln, "factor header needs rows and columns"));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, row) = lines.next().ok_or_else(|| bad(ln, "factor ends early"))??;
            let vals = numbers(ln, &row)?;
            if vals.len() != cols {
                return Err(bad(ln, &format!("expected {cols} values")));
            }
            data.extend(vals);
        }
        factors.push(Matrix::from_vec(rows, cols, data)?);
    }
    KruskalTensor::new(sigma, factors)
}

pub fn save_model(model: &KruskalTensor, path: impl AsRef<Path>) -> Result<()> {
    write_model(model, File::create(path)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<KruskalTensor> {
    read_model(File::open(path)?)
}
