//! Plain-text matrix format: a header line `m n` followed by `m*n`
//! whitespace-delimited values in row-major order. Lines starting with `#`
//! are comments.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Parse one matrix from text.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut header: Option<(usize, usize, usize)> = None;
    let mut values = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        if header.is_none() {
            let m = parse_dim(toks.next(), line_no)?;
            let n = parse_dim(toks.next(), line_no)?;
            if toks.next().is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "header must be exactly `m n`".into(),
                });
            }
            header = Some((m, n, line_no));
            continue;
        }
        for tok in toks {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("not a number: {tok:?}"),
            })?;
            values.push(v);
        }
    }
    let (m, n, line) = header.ok_or(Error::Parse {
        line: 0,
        msg: "missing header".into(),
    })?;
    if values.len() != m * n {
        return Err(Error::Parse {
            line,
            msg: format!("expected {} values for a {m}x{n} matrix, found {}", m * n, values.len()),
        });
    }
    Ok(DMatrix::from_row_slice(m, n, &values))
}

fn parse_dim(tok: Option<&str>, line: usize) -> Result<usize> {
    tok.ok_or_else(|| Error::Parse {
        line,
        msg: "header must be `m n`".into(),
    })?
    .parse()
    .map_err(|_| Error::Parse {
        line,
        msg: "matrix dimensions must be non-negative integers".into(),
    })
}

/// Shortest decimal text that parses back to the same `f64`.
pub fn fmt_exact(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Render a matrix in the text format (round-trips exactly).
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| fmt_exact(m[(i, j)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}
