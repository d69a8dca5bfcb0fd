//! Text document for a decomposition.
//!
//! ```text
//! # daekit decomposition
//! [meta]
//! m = 3
//! n = 3
//! x_dims = 1 1 0 1
//! y_dims = 1 1 0 1
//! regular_index = 1
//!
//! [matrix S1]
//! 3 3
//! 1 0 -1
//! ...
//! ```
//!
//! Every matrix of [`PencilDecomposition`] appears in its own `[matrix NAME]`
//! section using the plain matrix format. Values are written with the
//! shortest representation that parses back to the same `f64`, so a
//! document round-trips exactly.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::PencilDecomposition;
use crate::error::{Error, Result};
use crate::matio;

const NAMES: [&str; 26] = [
    "x_basis", "x_coords", "y_basis", "y_coords", "S", "P", "S1", "S2", "P1", "P2", "F", "Q", "F1", "F2",
    "Q1", "Q2", "A_gen", "B_gen", "B_und", "B_ov", "A_1", "B_1", "B_2", "A_gen_inv", "A_1_inv", "B_2_inv",
];

fn matrices(dec: &PencilDecomposition) -> [&DMatrix<f64>; 26] {
    [
        &dec.x_basis,
        &dec.x_coords,
        &dec.y_basis,
        &dec.y_coords,
        &dec.s,
        &dec.p,
        &dec.s1,
        &dec.s2,
        &dec.p1,
        &dec.p2,
        &dec.f,
        &dec.q,
        &dec.f1,
        &dec.f2,
        &dec.q1,
        &dec.q2,
        &dec.a_gen,
        &dec.b_gen,
        &dec.b_und,
        &dec.b_ov,
        &dec.a_1,
        &dec.b_1,
        &dec.b_2,
        &dec.a_gen_inv,
        &dec.a_1_inv,
        &dec.b_2_inv,
    ]
}

fn join(d: &[usize; 4]) -> String {
    d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Render a decomposition document.
pub fn to_text(dec: &PencilDecomposition) -> String {
    let mut s = String::from("# daekit decomposition\n[meta]\n");
    s.push_str(&format!("m = {}\nn = {}\n", dec.m(), dec.n()));
    s.push_str(&format!("x_dims = {}\n", join(&dec.x_dims)));
    s.push_str(&format!("y_dims = {}\n", join(&dec.y_dims)));
    s.push_str(&format!("regular_index = {}\n", dec.regular_index));
    for (name, mat) in NAMES.iter().zip(matrices(dec)) {
        s.push_str(&format!("\n[matrix {name}]\n"));
        s.push_str(&matio::format_matrix(mat));
    }
    s
}

fn parse_dims(v: &str, line: usize) -> Result<[usize; 4]> {
    let parts: Vec<usize> = v
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line,
            msg: "dims must be four integers".into(),
        })?;
    parts.try_into().map_err(|_| Error::Parse {
        line,
        msg: "dims must be four integers".into(),
    })
}

/// Parse a decomposition document.
pub fn from_text(text: &str) -> Result<PencilDecomposition> {
    let mut meta: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut mats: BTreeMap<String, DMatrix<f64>> = BTreeMap::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut i = 0;
    let mut section: Option<String> = None;
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() || line.starts_with('#') {
            i += 1;
            continue;
        }
        if line.starts_with('[') {
            let inner = line.trim_start_matches('[').trim_end_matches(']').trim();
            if inner == "meta" {
                section = Some("meta".into());
                i += 1;
                continue;
            }
            let name = inner.strip_prefix("matrix").map(str::trim).ok_or(Error::Parse {
                line: i + 1,
                msg: format!("unknown section {inner:?}"),
            })?;
            // Matrix body runs until the next section header.
            let start = i + 1;
            let mut end = start;
            while end < lines.len() && !lines[end].trim_start().starts_with('[') {
                end += 1;
            }
            let body = lines[start..end].join("\n");
            let m = matio::parse_matrix(&body).map_err(|e| match e {
                Error::Parse { line, msg } => Error::Parse {
                    line: start + line,
                    msg,
                },
                other => other,
            })?;
            mats.insert(name.to_string(), m);
            section = None;
            i = end;
            continue;
        }
        if section.as_deref() != Some("meta") {
            return Err(Error::Parse {
                line: i + 1,
                msg: "content outside a section".into(),
            });
        }
        let (k, v) = line.split_once('=').ok_or(Error::Parse {
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        meta.insert(k.trim().to_string(), (v.trim().to_string(), i + 1));
        i += 1;
    }
    let get = |k: &str| {
        meta.get(k).ok_or(Error::Parse {
            line: 0,
            msg: format!("missing meta key {k}"),
        })
    };
    let (xd, xl) = get("x_dims")?;
    let (yd, yl) = get("y_dims")?;
    let x_dims = parse_dims(xd, *xl)?;
    let y_dims = parse_dims(yd, *yl)?;
    let (ri, rl) = get("regular_index")?;
    let regular_index: u8 = ri.parse().map_err(|_| Error::Parse {
        line: *rl,
        msg: "regular_index must be an integer".into(),
    })?;
    let mut take = |k: &str| {
        mats.remove(k).ok_or(Error::Parse {
            line: 0,
            msg: format!("missing matrix {k}"),
        })
    };
    Ok(PencilDecomposition {
        x_dims,
        y_dims,
        x_basis: take("x_basis")?,
        x_coords: take("x_coords")?,
        y_basis: take("y_basis")?,
        y_coords: take("y_coords")?,
        s: take("S")?,
        p: take("P")?,
        s1: take("S1")?,
        s2: take("S2")?,
        p1: take("P1")?,
        p2: take("P2")?,
        f: take("F")?,
        q: take("Q")?,
        f1: take("F1")?,
        f2: take("F2")?,
        q1: take("Q1")?,
        q2: take("Q2")?,
        a_gen: take("A_gen")?,
        b_gen: take("B_gen")?,
        b_und: take("B_und")?,
        b_ov: take("B_ov")?,
        a_1: take("A_1")?,
        b_1: take("B_1")?,
        b_2: take("B_2")?,
        a_gen_inv: take("A_gen_inv")?,
        a_1_inv: take("A_1_inv")?,
        b_2_inv: take("B_2_inv")?,
        regular_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{decompose, validate_decomposition};
    use crate::fixtures;

    #[test]
    fn document_round_trips_exactly() {
        let p = fixtures::example_pencil();
        let dec = decompose(&p, 1e-10).unwrap();
        let text = to_text(&dec);
        let back = from_text(&text).unwrap();
        assert_eq!(to_text(&back), text);
        assert_eq!(back.s1, dec.s1);
        assert!(validate_decomposition(&p, &back, 1e-10).passed());
    }

    #[test]
    fn missing_section_is_reported() {
        let p = fixtures::example_pencil();
        let text = to_text(&decompose(&p, 1e-10).unwrap());
        let cut = text.replace("[matrix B_2_inv]", "[matrix unused]");
        assert!(matches!(from_text(&cut), Err(Error::Parse { .. })));
    }
}
