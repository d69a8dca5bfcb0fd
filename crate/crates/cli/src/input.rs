//! DAE problems: builtin fixtures or JSON spec files.
//!
//! Spec file layout (unknown keys are rejected):
//!
//! ```json
//! {
//!   "description": "optional text",
//!   "A": [[1, 0, -1], [0, 0, 0], [0, 0, 0]],
//!   "B": [[1, -1, -1], [1, 1, -1], [0, 2, 0]],
//!   "f": ["0", "x1 - x3", "0"],
//!   "phi_s2": ["sin(t)", "0", "sin(t)"],
//!   "x0": [1, 0, 0],
//!   "t0": 0,
//!   "horizon": 10
//! }
//! ```
//!
//! `f` and `phi_s2` are expressions in `t, x1..xn` (see [`crate::expr`]).
//! `phi_s2` defaults to zero and is projected onto X_s2. The start point is
//! completed to the consistency manifold from `S1 x0`, `phi_s2(t0)` and
//! `P1 x0`, with `P2 x0` as the Newton guess. The projectors come from the
//! computed decomposition, so `S2 x0` is replaced by `phi_s2(t0)` whenever the
//! two differ; a warning is logged in that case.

use std::path::Path;

use daekit::decomp::decompose;
use daekit::fixtures;
use daekit::integrate::FreeComponent;
use daekit::pencil::Pencil;
use daekit::reduce::{build_reduced_system, NewtonOptions, ReducedSystem, SemilinearDAE};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{read_file, CliError, Result};
use crate::expr::{Expr, Vars};

pub struct Problem {
    pub name: String,
    pub rs: ReducedSystem,
    pub phi: FreeComponent,
    pub x0: DVector<f64>,
    pub t0: f64,
    /// Default horizon length.
    pub horizon: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DaeFile {
    description: Option<String>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    f: Vec<String>,
    phi_s2: Option<Vec<String>>,
    x0: Vec<f64>,
    #[serde(default)]
    t0: f64,
    horizon: Option<f64>,
}

fn matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Input(format!("{name}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

fn expressions(texts: &[String], what: &str, n: usize) -> Result<Vec<Expr>> {
    texts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let e = Expr::parse(s).map_err(|e| CliError::Input(format!("{what}[{}]: {e}", i + 1)))?;
            if e.max_x() > n || e.max_w() > 0 || e.uses_v() {
                return Err(CliError::Input(format!(
                    "{what}[{}]: only t and x1..x{n} may appear",
                    i + 1
                )));
            }
            Ok(e)
        })
        .collect()
}

fn eval_all(exprs: &[Expr], t: f64, x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        exprs.len(),
        exprs.iter().map(|e| e.eval(&Vars { t, x, ..Vars::default() })),
    )
}

pub fn parse_problem(text: &str, name: &str, rank_tol: f64, newton: &NewtonOptions) -> Result<Problem> {
    let file: DaeFile = serde_json::from_str(text).map_err(|e| CliError::Input(format!("{name}: {e}")))?;
    let pencil = Pencil::new(matrix(&file.a, "A")?, matrix(&file.b, "B")?)?;
    let (m, n) = (pencil.m(), pencil.n());
    if file.f.len() != m {
        return Err(CliError::Input(format!("f has {} entries, expected m = {m}", file.f.len())));
    }
    if file.x0.len() != n {
        return Err(CliError::Input(format!("x0 has {} entries, expected n = {n}", file.x0.len())));
    }
    let f = expressions(&file.f, "f", n)?;
    let phi_exprs = match &file.phi_s2 {
        Some(p) if p.len() != n => {
            return Err(CliError::Input(format!("phi_s2 has {} entries, expected n = {n}", p.len())))
        }
        Some(p) => expressions(p, "phi_s2", 0)?,
        None => Vec::new(),
    };
    let dec = decompose(&pencil, rank_tol)?;
    let s2 = dec.s2.clone();
    let dae = SemilinearDAE::new(pencil, move |t, x| eval_all(&f, t, x.as_slice()));
    let rs = build_reduced_system(dae, dec)?;
    let desc = file.description.clone().unwrap_or_else(|| name.to_string());
    let phi = if phi_exprs.is_empty() {
        FreeComponent::zero(n)
    } else {
        FreeComponent::new(desc.clone(), move |t| &s2 * eval_all(&phi_exprs, t, &[]))
    };
    let x0 = complete_start(&rs, &phi, file.t0, &DVector::from_vec(file.x0), newton)?;
    Ok(Problem {
        name: desc,
        rs,
        phi,
        x0,
        t0: file.t0,
        horizon: file.horizon.unwrap_or(10.0),
    })
}

fn complete_start(
    rs: &ReducedSystem,
    phi: &FreeComponent,
    t0: f64,
    x0: &DVector<f64>,
    newton: &NewtonOptions,
) -> Result<DVector<f64>> {
    let c = rs.split(x0);
    let free = phi.eval(t0);
    let gap = (&c.x_s2 - &free).amax();
    if gap > 1e-12 * x0.amax().max(1.0) {
        log::warn!("x0 has S2 component {:?}, replaced by phi_s2(t0) (gap {gap:.3e})", c.x_s2.as_slice());
    }
    Ok(rs.consistent_initialization_from(t0, &c.x_s1, &free, &c.x_p1, &c.x_p2, newton)?)
}

/// Resolve a builtin name or load a spec file.
pub fn load_problem(target: &str, rank_tol: f64, newton: &NewtonOptions) -> Result<Problem> {
    let (name, fixture, horizon) = match target {
        "example-analytic" => (target, fixtures::example_analytic(), 10.0),
        "example-blowup" => (target, fixtures::example_blowup(), 2.0),
        _ => {
            let text = read_file(Path::new(target))?;
            return parse_problem(&text, target, rank_tol, newton);
        }
    };
    let (rs, phi, x0) = fixture;
    let x0 = complete_start(&rs, &phi, 0.0, &x0, newton)?;
    Ok(Problem {
        name: name.to_string(),
        rs,
        phi,
        x0,
        t0: 0.0,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "A": [[1, 0, -1], [0, 0, 0], [0, 0, 0]],
        "B": [[1, -1, -1], [1, 1, -1], [0, 2, 0]],
        "f": ["0", "x1 - x3", "0"],
        "phi_s2": ["sin(t)", "0", "sin(t)"],
        "x0": [1, 0, 0]
    }"#;

    #[test]
    fn spec_file_matches_builtin() {
        let p = parse_problem(EXAMPLE, "example.json", 1e-10, &NewtonOptions::default()).unwrap();
        assert_eq!(p.rs.dec.x_dims, [1, 1, 0, 1]);
        // The computed splitting differs from the hand-picked one, so only
        // splitting-independent quantities are compared.
        assert!((p.x0[0] - p.x0[2] - 1.0).abs() < 1e-12 && p.x0[1].abs() < 1e-12, "{}", p.x0);
        assert!(p.rs.consistency_residual(0.0, &p.x0).r_p2 <= 1e-10);
        assert!((&p.rs.dec.s2 * &p.x0).amax() < 1e-12);
        let s = p.phi.eval(1.0);
        assert!((s[0] - 1f64.sin()).abs() < 1e-12 && (s[2] - 1f64.sin()).abs() < 1e-12);
        assert_eq!(p.horizon, 10.0);
    }

    #[test]
    fn malformed_specs_are_input_errors() {
        let cases = [
            EXAMPLE.replace("\"x1 - x3\"", "\"x1 - \""),
            EXAMPLE.replace("\"x1 - x3\"", "\"x7\""),
            EXAMPLE.replace("[1, 0, 0]", "[1, 0]"),
            EXAMPLE.replace("\"A\"", "\"AA\""),
            EXAMPLE.replace("[0, 2, 0]]", "[0, 2]]"),
        ];
        for c in &cases {
            let err = parse_problem(c, "bad", 1e-10, &NewtonOptions::default()).err().unwrap();
            assert_eq!(err.exit_code(), crate::error::code::INPUT, "{err}");
        }
    }

    #[test]
    fn builtins_are_consistent() {
        for b in ["example-analytic", "example-blowup"] {
            let p = load_problem(b, 1e-10, &NewtonOptions::default()).unwrap();
            assert!(p.rs.consistency_residual(0.0, &p.x0).r_p2 <= 1e-10);
        }
    }
}
