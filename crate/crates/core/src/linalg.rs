//! Dense linear-algebra helpers: nalgebra matrices, LAPACK SVD, nalgebra LU.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use ndarray_linalg::SVD;

use crate::error::{Error, Result};

/// Thin SVD with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Thin SVD `m = u diag(sigma) v^T`, sorted so that `sigma` is non-increasing.
///
/// Computed by LAPACK (`gesvd`). nalgebra's own bidiagonal SVD returns
/// inaccurate factors for some rank-deficient inputs, so it is only used when
/// the LAPACK factors fail [`factors_ok`]. Some OpenBLAS builds select CPU
/// kernels that corrupt larger factorizations; `OPENBLAS_CORETYPE` overrides
/// the selection.
pub fn svd_sorted(m: &DMatrix<f64>) -> SortedSvd {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return SortedSvd {
            u: DMatrix::zeros(r, 0),
            sigma: Vec::new(),
            v: DMatrix::zeros(c, 0),
        };
    }
    match lapack_svd(m) {
        Some(svd) if factors_ok(m, &svd) => svd,
        _ => {
            log::warn!("LAPACK SVD of a {r}x{c} matrix failed its residual check; using nalgebra");
            nalgebra_svd(m)
        }
    }
}

fn lapack_svd(m: &DMatrix<f64>) -> Option<SortedSvd> {
    let (r, c) = m.shape();
    let k = r.min(c);
    let (u, s, vt) = to_array(m).svd(true, true).ok()?;
    let (u, vt) = (u?, vt?);
    // LAPACK already sorts descending.
    Some(SortedSvd {
        u: DMatrix::from_fn(r, k, |i, j| u[[i, j]]),
        sigma: s.to_vec(),
        v: DMatrix::from_fn(c, k, |i, j| vt[[j, i]]),
    })
}

/// nalgebra SVD, reordered to descending `sigma`.
pub fn nalgebra_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    SortedSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]),
        sigma: order.iter().map(|&j| svd.singular_values[j]).collect(),
        v: DMatrix::from_fn(vt.ncols(), order.len(), |i, j| vt[(order[j], i)]),
    }
}

/// Backward-error check of a thin SVD: orthonormal factors, sorted
/// non-negative `sigma` and a reconstruction residual near roundoff.
pub fn factors_ok(m: &DMatrix<f64>, svd: &SortedSvd) -> bool {
    let (r, c) = m.shape();
    let k = svd.sigma.len();
    let tol = 1e3 * f64::EPSILON * (r.max(c) as f64);
    let eye = DMatrix::<f64>::identity(k, k);
    let sorted = svd.sigma.windows(2).all(|w| w[0] >= w[1]) && svd.sigma.iter().all(|&s| s >= 0.0);
    if !sorted || !svd.sigma.iter().all(|s| s.is_finite()) {
        return false;
    }
    let scale = svd.sigma.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let mut us = svd.u.clone();
    for (j, &s) in svd.sigma.iter().enumerate() {
        us.column_mut(j).scale_mut(s);
    }
    max_abs(&(svd.u.tr_mul(&svd.u) - &eye)) <= tol
        && max_abs(&(svd.v.tr_mul(&svd.v) - &eye)) <= tol
        && max_abs(&(us * svd.v.transpose() - m)) <= tol * scale
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    svd_sorted(m).sigma
}

fn to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn(m.shape(), |(i, j)| m[(i, j)])
}

/// Rank decision with an ambiguity band `(tol*scale, 10*tol*scale)`.
#[derive(Clone, Copy, Debug)]
pub struct RankGate {
    pub tol: f64,
    pub scale: f64,
    pub strict: bool,
}

impl RankGate {
    pub fn new(tol: f64, scale: f64) -> Self {
        RankGate {
            tol,
            scale,
            strict: true,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.tol * self.scale
    }

    /// Number of singular values above threshold; errors on a value inside the band.
    pub fn count(&self, sigma: &[f64]) -> Result<usize> {
        let lo = self.threshold();
        let hi = 10.0 * lo;
        let mut r = 0;
        for &s in sigma {
            if s > lo {
                if self.strict && s < hi {
                    return Err(Error::NumericalRankAmbiguous { sigma: s, lo, hi });
                }
                r += 1;
            }
        }
        Ok(r)
    }
}

/// Numerical rank with relative threshold `tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        None => 0,
        Some(0.0) => 0,
        Some(&smax) => s.iter().filter(|&&v| v > tol * smax).count(),
    }
}

/// Orthonormal basis of the column space.
pub fn orth(m: &DMatrix<f64>, gate: &RankGate) -> Result<DMatrix<f64>> {
    let rows = m.nrows();
    if m.ncols() == 0 || rows == 0 {
        return Ok(DMatrix::zeros(rows, 0));
    }
    let svd = svd_sorted(m);
    let r = gate.count(&svd.sigma)?;
    Ok(svd.u.columns(0, r).into_owned())
}

/// Orthonormal basis of the null space (n x k).
pub fn null_space(m: &DMatrix<f64>, gate: &RankGate) -> Result<DMatrix<f64>> {
    let (r, c) = m.shape();
    if c == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if r == 0 {
        return Ok(DMatrix::identity(c, c));
    }
    // Pad with zero rows so that the thin SVD carries a full right basis.
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.rows_mut(0, r).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = svd_sorted(&padded);
    let rank = gate.count(&svd.sigma)?;
    Ok(svd.v.columns(rank, c - rank).into_owned())
}

/// Orthonormal basis of the part of `big` orthogonal to the orthonormal `sub`.
pub fn complement_in(sub: &DMatrix<f64>, big: &DMatrix<f64>, gate: &RankGate) -> Result<DMatrix<f64>> {
    if big.ncols() == 0 {
        return Ok(big.clone());
    }
    let proj = if sub.ncols() == 0 {
        big.clone()
    } else {
        big - sub * (sub.transpose() * big)
    };
    orth(&proj, gate)
}

/// Orthonormal basis of the intersection of two column spans.
pub fn intersect(s1: &DMatrix<f64>, s2: &DMatrix<f64>, gate: &RankGate) -> Result<DMatrix<f64>> {
    let n = s1.nrows();
    if s1.ncols() == 0 || s2.ncols() == 0 {
        return Ok(DMatrix::zeros(n, 0));
    }
    let k1 = s1.ncols();
    let stacked = hcat(&[s1, &(-s2)]);
    let ns = null_space(&stacked, gate)?;
    let coeffs = ns.rows(0, k1).into_owned();
    orth(&(s1 * coeffs), gate)
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of matrices with equal column counts.
pub fn vcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
            }
        }
    }
    out
}

/// Minimum-norm least-squares solution with relative cutoff `rcond * sigma_max`.
pub fn lstsq_min_norm(k: &DMatrix<f64>, rhs: &DVector<f64>, rcond: f64) -> DVector<f64> {
    let svd = svd_sorted(k);
    let mut x = DVector::zeros(k.ncols());
    let smax = svd.sigma.first().copied().unwrap_or(0.0);
    for (i, &s) in svd.sigma.iter().enumerate() {
        if s > rcond * smax && s > 0.0 {
            let coef = svd.u.column(i).dot(rhs) / s;
            x += svd.v.column(i) * coef;
        }
    }
    x
}

/// Inverse of a square matrix; fails on exact or numerical singularity.
pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "inverse of non-square {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("matrix is singular".into()))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::InvalidInput("matrix is singular".into()))
    }
}

/// Largest absolute entry (0 for empty matrices).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest singular value (infinity for an empty matrix).
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(f64::INFINITY)
}

/// 2-norm condition number.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&a), Some(&b)) if b > 0.0 => a / b,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn null_space_of_wide_matrix_is_complete() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let ns = null_space(&m, &RankGate::new(1e-10, 1.0)).unwrap();
        assert_eq!(ns.ncols(), 2);
        assert!(max_abs(&(&m * &ns)) < 1e-14);
    }

    #[test]
    fn intersection_of_planes_is_a_line() {
        let s1 = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let s2 = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let i = intersect(&s1, &s2, &RankGate::new(1e-10, 1.0)).unwrap();
        assert_eq!(i.ncols(), 1);
        assert!((i[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn band_raises_ambiguity() {
        let g = RankGate::new(1e-10, 1.0);
        assert!(matches!(
            g.count(&[1.0, 5e-10]),
            Err(Error::NumericalRankAmbiguous { .. })
        ));
        assert_eq!(g.count(&[1.0, 1e-12]).unwrap(), 1);
    }

    #[test]
    fn svd_routes_agree_on_rank_deficient_input() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for (r, c, rank) in [(5, 5, 3), (12, 7, 4), (40, 60, 25), (160, 160, 90)] {
            let m = crate::synth::gaussian(&mut rng, r, rank) * crate::synth::gaussian(&mut rng, rank, c);
            let a = svd_sorted(&m);
            let b = nalgebra_svd(&m);
            assert!(factors_ok(&m, &a), "{r}x{c}");
            let top = a.sigma[0];
            for (x, y) in a.sigma.iter().zip(&b.sigma) {
                assert!((x - y).abs() <= 1e-10 * top, "{r}x{c}: {x} vs {y}");
            }
            assert!(a.sigma[rank - 1] > 1e-6 * top && a.sigma[rank] < 1e-12 * top);
        }
    }

    #[test]
    fn corrupted_factors_fail_the_check() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let m = crate::synth::gaussian(&mut rng, 6, 4);
        let mut svd = svd_sorted(&m);
        svd.u[(2, 1)] += 1e-6;
        assert!(!factors_ok(&m, &svd));
    }

    #[test]
    fn kron_matches_definition() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let k = kron(&a, &b);
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 6.0, 8.0]));
    }
}
