//! Matrix pencils `lambda*A + B`, their rank and regular/singular classification.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default relative rank tolerance.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Fixed, well-separated real sampling points for lambda.
pub const LAMBDA_SAMPLES: [f64; 8] = [1.0, -1.0, 2.0, -3.0, 5.0, 7.5, -11.0, 13.0];

/// A pair of real m x n matrices defining `lambda*A + B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pencil {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Pencil {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidInput("pencil dimensions must be positive".into()));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("A"));
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("B"));
        }
        Ok(Pencil { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Number of rows (equations).
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    /// Number of columns (unknowns).
    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// `lambda*A + B`.
    pub fn at(&self, lambda: f64) -> DMatrix<f64> {
        &self.a * lambda + &self.b
    }

    /// The pencil `lambda*A^T + B^T`.
    pub fn transpose(&self) -> Pencil {
        Pencil {
            a: self.a.transpose(),
            b: self.b.transpose(),
        }
    }
}

/// Regular or singular.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PencilTag {
    Regular,
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PencilClass {
    pub tag: PencilTag,
    pub rank: usize,
}

/// The k-th lambda sample. The fixed list is extended deterministically.
pub fn lambda_sample(k: usize) -> f64 {
    if k < LAMBDA_SAMPLES.len() {
        LAMBDA_SAMPLES[k]
    } else {
        let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * (1.7 * k as f64 + 0.31)
    }
}

/// Maximum numerical rank of `lambda*A + B` over `samples` sampled lambdas.
pub fn pencil_rank(p: &Pencil, samples: usize, tol: f64) -> Result<usize> {
    if samples < 3 {
        return Err(Error::InvalidInput("pencil_rank needs at least 3 samples".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("rank tolerance must be positive".into()));
    }
    let cap = p.m().min(p.n());
    let mut best = 0;
    for k in 0..samples {
        let r = linalg::numerical_rank(&p.at(lambda_sample(k)), tol);
        best = best.max(r);
        if best == cap {
            break;
        }
    }
    Ok(best)
}

/// Regular iff square with full rank.
pub fn classify_pencil(p: &Pencil, rank: usize) -> PencilClass {
    let tag = if p.m() == p.n() && rank == p.n() {
        PencilTag::Regular
    } else {
        PencilTag::Singular
    };
    PencilClass { tag, rank }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> Pencil {
        Pencil::new(
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 0.0, 2.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn worked_example_rank_two_singular() {
        let p = example();
        let r = pencil_rank(&p, 8, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r, 2);
        assert_eq!(classify_pencil(&p, r).tag, PencilTag::Singular);
    }

    #[test]
    fn identity_and_zero() {
        let p = Pencil::new(DMatrix::identity(3, 3), DMatrix::zeros(3, 3)).unwrap();
        let r = pencil_rank(&p, 8, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r, 3);
        assert_eq!(classify_pencil(&p, r).tag, PencilTag::Regular);
        let z = Pencil::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(pencil_rank(&z, 3, DEFAULT_RANK_TOL).unwrap(), 0);
    }

    #[test]
    fn rectangular_is_singular() {
        let p = Pencil::new(DMatrix::identity(2, 3), DMatrix::zeros(2, 3)).unwrap();
        let r = pencil_rank(&p, 8, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(r, 2);
        assert_eq!(classify_pencil(&p, r).tag, PencilTag::Singular);
    }

    #[test]
    fn construction_guards() {
        assert!(matches!(
            Pencil::new(DMatrix::zeros(2, 3), DMatrix::zeros(3, 2)),
            Err(Error::ShapeMismatch(_))
        ));
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(Pencil::new(a, DMatrix::zeros(2, 2)), Err(Error::NonFinite("A"))));
        assert!(Pencil::new(DMatrix::zeros(0, 2), DMatrix::zeros(0, 2)).is_err());
        assert!(pencil_rank(&example(), 2, 1e-10).is_err());
        assert!(pencil_rank(&example(), 3, 0.0).is_err());
    }

    #[test]
    fn samples_are_distinct() {
        let v: Vec<f64> = (0..20).map(lambda_sample).collect();
        for i in 0..v.len() {
            for j in 0..i {
                assert!(v[i] != v[j]);
            }
        }
    }
}
