//! Block decomposition of a (possibly singular) pencil into a purely singular
//! part and a regular part of index at most one, expressed through the
//! projectors S, P, F, Q and their refinements, the extended operators and
//! their semi-inverses.
//!
//! Construction: Wong sequences give the maximal subspaces `V*` (finite and
//! underdetermined structure) and `W*` (infinite and underdetermined
//! structure). Their intersection carries the underdetermined blocks, the
//! complements carry the finite and infinite regular blocks, and the rest
//! carries the overdetermined blocks. Orthonormal bases make the transformed
//! pencil block upper triangular; generalized Sylvester equations then remove
//! the coupling blocks so that the spaces split into deflating pairs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, RankGate};
use crate::pencil::Pencil;

pub mod export;

/// The four parts of the domain and codomain splits, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    /// X_s1 / Y_s1
    S1 = 0,
    /// X_s2 / Y_s2
    S2 = 1,
    /// X_1 / Y_1 (finite regular part)
    R1 = 2,
    /// X_2 / Y_2 (infinite regular part)
    R2 = 3,
}

/// Projectors, bases, extended operators and semi-inverses of a pencil split.
///
/// `x_basis` holds the columns of bases for X_s1, X_s2, X_1, X_2 (in that
/// order); `x_coords` is its inverse. `y_basis`/`y_coords` do the same for
/// Y_s1, Y_s2, Y_1, Y_2.
#[derive(Clone, Debug)]
pub struct PencilDecomposition {
    pub x_dims: [usize; 4],
    pub y_dims: [usize; 4],
    pub x_basis: DMatrix<f64>,
    pub x_coords: DMatrix<f64>,
    pub y_basis: DMatrix<f64>,
    pub y_coords: DMatrix<f64>,

    pub s: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,

    pub f: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub f1: DMatrix<f64>,
    pub f2: DMatrix<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,

    pub a_gen: DMatrix<f64>,
    pub b_gen: DMatrix<f64>,
    pub b_und: DMatrix<f64>,
    pub b_ov: DMatrix<f64>,
    pub a_1: DMatrix<f64>,
    pub b_1: DMatrix<f64>,
    pub b_2: DMatrix<f64>,

    pub a_gen_inv: DMatrix<f64>,
    pub a_1_inv: DMatrix<f64>,
    pub b_2_inv: DMatrix<f64>,

    pub regular_index: u8,
}

fn offset(dims: &[usize; 4], part: Part) -> usize {
    dims[..part as usize].iter().sum()
}

fn column_block(m: &DMatrix<f64>, dims: &[usize; 4], part: Part) -> DMatrix<f64> {
    m.columns(offset(dims, part), dims[part as usize]).into_owned()
}

fn row_block(m: &DMatrix<f64>, dims: &[usize; 4], part: Part) -> DMatrix<f64> {
    m.rows(offset(dims, part), dims[part as usize]).into_owned()
}

impl PencilDecomposition {
    /// Dimension of the domain `n`.
    pub fn n(&self) -> usize {
        self.x_basis.nrows()
    }

    /// Dimension of the codomain `m`.
    pub fn m(&self) -> usize {
        self.y_basis.nrows()
    }

    /// Basis (n x dim) of one domain part.
    pub fn x_basis_of(&self, part: Part) -> DMatrix<f64> {
        column_block(&self.x_basis, &self.x_dims, part)
    }

    /// Coordinate map (dim x n) of one domain part.
    pub fn x_coords_of(&self, part: Part) -> DMatrix<f64> {
        row_block(&self.x_coords, &self.x_dims, part)
    }

    /// Basis (m x dim) of one codomain part.
    pub fn y_basis_of(&self, part: Part) -> DMatrix<f64> {
        column_block(&self.y_basis, &self.y_dims, part)
    }

    /// Coordinate map (dim x m) of one codomain part.
    pub fn y_coords_of(&self, part: Part) -> DMatrix<f64> {
        row_block(&self.y_coords, &self.y_dims, part)
    }

    /// `(b, l, a, d)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let d = self.x_dims;
        (d[0], d[1], d[2], d[3])
    }

    /// Build every derived quantity from bases of the eight subspaces.
    ///
    /// The bases must split the pencil: A and B map X_s into Y_s, X_1 into
    /// Y_1 and X_2 into Y_2. That is not checked here; use
    /// [`validate_decomposition`].
    pub fn from_bases(
        pencil: &Pencil,
        x_parts: [&DMatrix<f64>; 4],
        y_parts: [&DMatrix<f64>; 4],
        tol: f64,
    ) -> Result<Self> {
        let (m, n) = (pencil.m(), pencil.n());
        let x_dims = x_parts.map(|b| b.ncols());
        let y_dims = y_parts.map(|b| b.ncols());
        for b in x_parts {
            if b.nrows() != n {
                return Err(Error::ShapeMismatch("domain basis rows must equal n".into()));
            }
        }
        for b in y_parts {
            if b.nrows() != m {
                return Err(Error::ShapeMismatch("codomain basis rows must equal m".into()));
            }
        }
        if x_dims.iter().sum::<usize>() != n || y_dims.iter().sum::<usize>() != m {
            return Err(Error::ShapeMismatch("basis blocks must fill the spaces".into()));
        }
        if x_dims[0] != y_dims[0] || x_dims[2] != y_dims[2] || x_dims[3] != y_dims[3] {
            return Err(Error::ShapeMismatch(
                "dim X_s1, X_1, X_2 must equal dim Y_s1, Y_1, Y_2".into(),
            ));
        }
        let x_basis = linalg::hcat(&x_parts);
        let y_basis = linalg::hcat(&y_parts);
        let x_coords = linalg::inverse(&x_basis)
            .map_err(|_| Error::InvalidInput("domain bases are linearly dependent".into()))?;
        let y_coords = linalg::inverse(&y_basis)
            .map_err(|_| Error::InvalidInput("codomain bases are linearly dependent".into()))?;

        let proj = |basis: &DMatrix<f64>, coords: &DMatrix<f64>, dims: &[usize; 4], part: Part| {
            column_block(basis, dims, part) * row_block(coords, dims, part)
        };
        let s1 = proj(&x_basis, &x_coords, &x_dims, Part::S1);
        let s2 = proj(&x_basis, &x_coords, &x_dims, Part::S2);
        let p1 = proj(&x_basis, &x_coords, &x_dims, Part::R1);
        let p2 = proj(&x_basis, &x_coords, &x_dims, Part::R2);
        let f1 = proj(&y_basis, &y_coords, &y_dims, Part::S1);
        let f2 = proj(&y_basis, &y_coords, &y_dims, Part::S2);
        let q1 = proj(&y_basis, &y_coords, &y_dims, Part::R1);
        let q2 = proj(&y_basis, &y_coords, &y_dims, Part::R2);

        let a = pencil.a();
        let b = pencil.b();
        let a_gen = &f1 * a;
        let b_gen = &f1 * b * &s1;
        let b_und = &f1 * b * &s2;
        let b_ov = &f2 * b * &s1;
        let a_1 = &q1 * a;
        let b_1 = &q1 * b;
        let b_2 = &q2 * b;

        let semi = |mat: &DMatrix<f64>, part: Part, what: &str| -> Result<DMatrix<f64>> {
            let tx = column_block(&x_basis, &x_dims, part);
            let uy = row_block(&y_coords, &y_dims, part);
            let restricted = &uy * mat * &tx;
            let inv = linalg::inverse(&restricted)
                .map_err(|_| Error::InvalidInput(format!("{what} restricted to its subspaces is singular")))?;
            Ok(tx * inv * uy)
        };
        let a_gen_inv = semi(a, Part::S1, "A_gen")?;
        let a_1_inv = semi(a, Part::R1, "A_1")?;
        let b_2_inv = semi(b, Part::R2, "B_2")?;

        let (a_r, b_r) = regular_restriction(a, b, &x_basis, &y_coords, &x_dims, &y_dims);
        let regular_index = block_index_scaled(&a_r, &b_r, tol, pencil.a().norm(), pencil.b().norm())?;

        Ok(PencilDecomposition {
            x_dims,
            y_dims,
            s: &s1 + &s2,
            p: &p1 + &p2,
            f: &f1 + &f2,
            q: &q1 + &q2,
            x_basis,
            x_coords,
            y_basis,
            y_coords,
            s1,
            s2,
            p1,
            p2,
            f1,
            f2,
            q1,
            q2,
            a_gen,
            b_gen,
            b_und,
            b_ov,
            a_1,
            b_1,
            b_2,
            a_gen_inv,
            a_1_inv,
            b_2_inv,
            regular_index,
        })
    }
}

/// Coordinate matrices of A and B restricted to X_r = X_1 + X_2 -> Y_r.
fn regular_restriction(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    x_basis: &DMatrix<f64>,
    y_coords: &DMatrix<f64>,
    x_dims: &[usize; 4],
    y_dims: &[usize; 4],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let xo = x_dims[0] + x_dims[1];
    let yo = y_dims[0] + y_dims[1];
    let k = x_dims[2] + x_dims[3];
    let tr = x_basis.columns(xo, k).into_owned();
    let ur = y_coords.rows(yo, y_dims[2] + y_dims[3]).into_owned();
    (&ur * a * &tr, &ur * b * &tr)
}

// ---------------------------------------------------------------------------
// Construction

fn normalized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let nrm = m.norm();
    if nrm > 0.0 {
        m / nrm
    } else {
        m.clone()
    }
}

/// `{x : M x in span(range)}` for an orthonormal `range`.
fn preimage(m: &DMatrix<f64>, range: &DMatrix<f64>, gate: &RankGate) -> Result<DMatrix<f64>> {
    let residual = if range.ncols() == 0 {
        m.clone()
    } else {
        m - range * (range.transpose() * m)
    };
    linalg::null_space(&residual, gate)
}

/// Limits of the Wong sequences `V_{i+1} = B^-1(A V_i)`, `W_{i+1} = A^-1(B W_i)`.
fn wong_limits(a: &DMatrix<f64>, b: &DMatrix<f64>, gate: &RankGate) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..=n {
        let av = linalg::orth(&(a * &v), gate)?;
        let next = preimage(b, &av, gate)?;
        let done = next.ncols() == v.ncols();
        v = next;
        if done {
            break;
        }
    }
    let mut w = linalg::null_space(a, gate)?;
    for _ in 0..=n {
        let bw = linalg::orth(&(b * &w), gate)?;
        let next = preimage(a, &bw, gate)?;
        let done = next.ncols() == w.ncols();
        w = next;
        if done {
            break;
        }
    }
    Ok((v, w))
}

/// Solve `P11 X + Y P22 = -P12` simultaneously for the A and B blocks.
#[allow(clippy::too_many_arguments)]
fn coupled_sylvester(
    a11: &DMatrix<f64>,
    b11: &DMatrix<f64>,
    a22: &DMatrix<f64>,
    b22: &DMatrix<f64>,
    a12: &DMatrix<f64>,
    b12: &DMatrix<f64>,
    tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (r, c) = a11.shape();
    let (mr, nc) = a22.shape();
    if r * nc == 0 {
        return Ok((DMatrix::zeros(c, nc), DMatrix::zeros(r, mr)));
    }
    let ia = DMatrix::identity(nc, nc);
    let ir = DMatrix::identity(r, r);
    let ka = linalg::hcat(&[&linalg::kron(&ia, a11), &linalg::kron(&a22.transpose(), &ir)]);
    let kb = linalg::hcat(&[&linalg::kron(&ia, b11), &linalg::kron(&b22.transpose(), &ir)]);
    let k = linalg::vcat(&[&ka, &kb]);
    let mut rhs = nalgebra::DVector::zeros(2 * r * nc);
    rhs.rows_mut(0, r * nc).copy_from_slice(a12.as_slice());
    rhs.rows_mut(r * nc, r * nc).copy_from_slice(b12.as_slice());
    rhs = -rhs;
    let sol = linalg::lstsq_min_norm(&k, &rhs, 1e-13);
    let res = (&k * &sol - &rhs).amax();
    let scale = (k.amax() * sol.amax()).max(rhs.amax()).max(1.0);
    if res > 1e3 * tol.max(1e-13) * scale {
        return Err(Error::InvalidInput(format!(
            "coupling equations not solvable (residual {res:.3e})"
        )));
    }
    let x = DMatrix::from_column_slice(c, nc, &sol.as_slice()[..c * nc]);
    let y = DMatrix::from_column_slice(r, mr, &sol.as_slice()[c * nc..]);
    Ok((x, y))
}

fn embed(block: &DMatrix<f64>, at: usize, size: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(size, block.ncols());
    z.rows_mut(at, block.nrows()).copy_from(block);
    z
}

/// Decompose a pencil. `tol` is the relative rank tolerance.
pub fn decompose(pencil: &Pencil, tol: f64) -> Result<PencilDecomposition> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tol must be positive".into()));
    }
    let (m, n) = (pencil.m(), pencil.n());
    // Separate scaling of A and B leaves every subspace unchanged.
    let a = normalized(pencil.a());
    let b = normalized(pencil.b());
    let gate = RankGate::new(tol, 1.0);

    let (v, w) = wong_limits(&a, &b, &gate)?;
    let x_und = linalg::intersect(&v, &w, &gate)?;
    let x_fin = linalg::complement_in(&x_und, &v, &gate)?;
    let x_inf = linalg::complement_in(&x_und, &w, &gate)?;
    let vw = linalg::orth(&linalg::hcat(&[&v, &w]), &gate)?;
    let x_ovd = linalg::complement_in(&vw, &DMatrix::identity(n, n), &gate)?;
    let cols = [x_und.ncols(), x_fin.ncols(), x_inf.ncols(), x_ovd.ncols()];
    if cols.iter().sum::<usize>() != n {
        return Err(Error::InvalidInput("subspace dimensions do not add up".into()));
    }
    let mut t = linalg::hcat(&[&x_und, &x_fin, &x_inf, &x_ovd]);

    // Left basis: successive images of the accumulated right blocks.
    let mut u_blocks = Vec::with_capacity(4);
    let mut current = DMatrix::zeros(m, 0);
    let mut acc = DMatrix::zeros(n, 0);
    for blk in [&x_und, &x_fin, &x_inf] {
        acc = linalg::hcat(&[&acc, blk]);
        let image = linalg::orth(&linalg::hcat(&[&(&a * &acc), &(&b * &acc)]), &gate)?;
        let fresh = linalg::complement_in(&current, &image, &gate)?;
        current = linalg::hcat(&[&current, &fresh]);
        u_blocks.push(fresh);
    }
    u_blocks.push(linalg::complement_in(&current, &DMatrix::identity(m, m), &gate)?);
    let rows = [
        u_blocks[0].ncols(),
        u_blocks[1].ncols(),
        u_blocks[2].ncols(),
        u_blocks[3].ncols(),
    ];
    if rows.iter().sum::<usize>() != m || rows[1] != cols[1] || rows[2] != cols[2] {
        return Err(Error::InvalidInput(
            "staircase produced inconsistent block sizes; adjust tol".into(),
        ));
    }
    let u = linalg::hcat(&[&u_blocks[0], &u_blocks[1], &u_blocks[2], &u_blocks[3]]);
    let mut u_inv = u.transpose();
    let mut at = &u_inv * &a * &t;
    let mut bt = &u_inv * &b * &t;

    // Remove the coupling blocks above the diagonal, one split at a time.
    for k in 1..4 {
        let c: usize = cols[..k].iter().sum();
        let r: usize = rows[..k].iter().sum();
        let (x, y) = coupled_sylvester(
            &at.view((0, 0), (r, c)).into_owned(),
            &bt.view((0, 0), (r, c)).into_owned(),
            &at.view((r, c), (m - r, n - c)).into_owned(),
            &bt.view((r, c), (m - r, n - c)).into_owned(),
            &at.view((0, c), (r, n - c)).into_owned(),
            &bt.view((0, c), (r, n - c)).into_owned(),
            tol,
        )?;
        let mut rm = DMatrix::identity(n, n);
        rm.view_mut((0, c), (c, n - c)).copy_from(&x);
        let mut lm = DMatrix::identity(m, m);
        lm.view_mut((0, r), (r, m - r)).copy_from(&y);
        at = &lm * at * &rm;
        bt = &lm * bt * &rm;
        t *= rm;
        u_inv = lm * u_inv;
    }

    let [cp, cj, cn, cq] = cols;
    let [rp, rj, rn, rq] = rows;
    // Index one: A vanishes on the infinite block.
    let a_inf = at.view((rp + rj, cp + cj), (rn, cn)).into_owned();
    if linalg::max_abs(&a_inf) > 100.0 * tol {
        return Err(Error::IndexTooHigh);
    }

    // Underdetermined block: kernel of A goes to X_s2, row space to X_s1.
    let a_und = at.view((0, 0), (rp, cp)).into_owned();
    let ker = linalg::null_space(&a_und, &gate)?;
    let rowsp = linalg::orth(&a_und.transpose(), &gate)?;
    if rowsp.ncols() != rp || ker.ncols() + rowsp.ncols() != cp {
        return Err(Error::InvalidInput("underdetermined block is not of full row rank".into()));
    }
    // Overdetermined block: range of A goes to Y_s1, its complement to Y_s2.
    let a_ovd = at.view((rp + rj + rn, cp + cj + cn), (rq, cq)).into_owned();
    let range = linalg::orth(&a_ovd, &gate)?;
    if range.ncols() != cq {
        return Err(Error::InvalidInput("overdetermined block is not of full column rank".into()));
    }
    let corange = linalg::complement_in(&range, &DMatrix::identity(rq, rq), &gate)?;

    let xs1 = linalg::hcat(&[&embed(&rowsp, 0, n), &embed(&DMatrix::identity(cq, cq), cp + cj + cn, n)]);
    let xs2 = embed(&ker, 0, n);
    let x1 = embed(&DMatrix::identity(cj, cj), cp, n);
    let x2 = embed(&DMatrix::identity(cn, cn), cp + cj, n);
    let ys1 = linalg::hcat(&[&embed(&DMatrix::identity(rp, rp), 0, m), &embed(&range, rp + rj + rn, m)]);
    let ys2 = embed(&corange, rp + rj + rn, m);
    let y1 = embed(&DMatrix::identity(rj, rj), rp, m);
    let y2 = embed(&DMatrix::identity(rn, rn), rp + rj, m);

    let u_cur = linalg::inverse(&u_inv)?;
    let xb = [&t * xs1, &t * xs2, &t * x1, &t * x2];
    let yb = [&u_cur * ys1, &u_cur * ys2, &u_cur * y1, &u_cur * y2];
    PencilDecomposition::from_bases(
        pencil,
        [&xb[0], &xb[1], &xb[2], &xb[3]],
        [&yb[0], &yb[1], &yb[2], &yb[3]],
        tol,
    )
}

// ---------------------------------------------------------------------------
// Regular block

/// Index (0 or 1) of the regular pencil `lambda*A_r + B_r`.
pub fn regular_block_index(a_r: &DMatrix<f64>, b_r: &DMatrix<f64>, tol: f64) -> Result<u8> {
    block_index_scaled(a_r, b_r, tol, a_r.norm(), b_r.norm())
}

/// Index test with rank decisions relative to the given norms of A and B.
fn block_index_scaled(a_r: &DMatrix<f64>, b_r: &DMatrix<f64>, tol: f64, sa: f64, sb: f64) -> Result<u8> {
    let k = a_r.nrows();
    if a_r.ncols() != k || b_r.shape() != (k, k) {
        return Err(Error::ShapeMismatch("regular block must be square".into()));
    }
    if k == 0 {
        return Ok(0);
    }
    let a = a_r / if sa > 0.0 { sa } else { 1.0 };
    let b = b_r / if sb > 0.0 { sb } else { 1.0 };
    let gate = RankGate {
        tol,
        scale: 1.0,
        strict: false,
    };
    let full = (0..8).any(|i| {
        let s = linalg::singular_values(&(&a * crate::pencil::lambda_sample(i) + &b));
        gate.count(&s).map(|r| r == k).unwrap_or(false)
    });
    if !full {
        return Err(Error::SingularPencilInput);
    }
    let ker = linalg::null_space(&a, &gate)?;
    if ker.ncols() == 0 {
        return Ok(0);
    }
    let rowsp = linalg::orth(&a.transpose(), &gate)?;
    let m = linalg::hcat(&[&(&a * rowsp), &(&b * ker)]);
    if m.ncols() == k && gate.count(&linalg::singular_values(&m))? == k {
        Ok(1)
    } else {
        Err(Error::IndexTooHigh)
    }
}

/// Spectral projectors `(P~1, Q~1)` of a regular pencil of index at most one:
/// onto the finite deflating subspace along `ker A_r`, and onto `range A_r`
/// along `B_r ker A_r`.
pub fn residue_projectors(a_r: &DMatrix<f64>, b_r: &DMatrix<f64>, tol: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let k = a_r.nrows();
    if regular_block_index(a_r, b_r, tol)? == 0 {
        return Ok((DMatrix::identity(k, k), DMatrix::identity(k, k)));
    }
    let a = normalized(a_r);
    let b = normalized(b_r);
    let gate = RankGate {
        tol,
        scale: 1.0,
        strict: false,
    };
    let ker = linalg::null_space(&a, &gate)?;
    let range = linalg::orth(&a, &gate)?;
    let finite = preimage(&b, &range, &gate)?;
    let y2 = &b * &ker;
    let split = |first: &DMatrix<f64>, second: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let basis = linalg::hcat(&[first, second]);
        let coords = linalg::inverse(&basis)?;
        Ok(first * coords.rows(0, first.ncols()))
    };
    Ok((split(&finite, &ker)?, split(&range, &y2)?))
}

// ---------------------------------------------------------------------------
// Validation

/// One checked identity with its max-norm residual.
#[derive(Clone, Debug)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
}

/// Residuals of all decomposition identities.
#[derive(Clone, Debug)]
pub struct ValidationReport {
    pub tol: f64,
    pub checks: Vec<IdentityCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.residual <= self.tol)
    }

    pub fn max_residual(&self) -> f64 {
        self.checks.iter().fold(0.0, |a, c| a.max(c.residual))
    }

    pub fn failures(&self) -> Vec<&IdentityCheck> {
        self.checks.iter().filter(|c| c.residual > self.tol).collect()
    }

    /// `name: residual` lines followed by the verdict.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let flag = if c.residual <= self.tol { "ok" } else { "FAIL" };
            s.push_str(&format!("{:<24} {:.3e} {flag}\n", c.name, c.residual));
        }
        s.push_str(&format!(
            "verdict: {} (tol {:.1e}, max residual {:.3e})\n",
            if self.passed() { "pass" } else { "fail" },
            self.tol,
            self.max_residual()
        ));
        s
    }
}

/// Check every projector, intertwining and semi-inverse identity.
pub fn validate_decomposition(pencil: &Pencil, dec: &PencilDecomposition, tol: f64) -> ValidationReport {
    let mut checks = Vec::new();
    let (m, n) = (pencil.m(), pencil.n());
    let shapes_ok = dec.s.shape() == (n, n) && dec.f.shape() == (m, m) && dec.a_gen_inv.shape() == (n, m);
    let [b, l, a, d] = dec.x_dims;
    let [yb, yl, ya, yd] = dec.y_dims;
    let dims_ok = b + l + a + d == n && yb + yl + ya + yd == m && b == yb && a == ya && d == yd;
    checks.push(IdentityCheck {
        name: "dims".into(),
        residual: if shapes_ok && dims_ok { 0.0 } else { f64::INFINITY },
    });
    if !shapes_ok {
        return ValidationReport { tol, checks };
    }
    let mut push = |name: &str, r: DMatrix<f64>| {
        checks.push(IdentityCheck {
            name: name.into(),
            residual: linalg::max_abs(&r),
        })
    };
    let a_ = pencil.a();
    let b_ = pencil.b();
    let idn = DMatrix::<f64>::identity(n, n);
    let idm = DMatrix::<f64>::identity(m, m);

    let pair = |push: &mut dyn FnMut(&str, DMatrix<f64>), names: [&str; 5], x: &DMatrix<f64>, y: &DMatrix<f64>, id: &DMatrix<f64>| {
        push(names[0], x * x - x);
        push(names[1], y * y - y);
        push(names[2], x + y - id);
        push(names[3], x * y);
        push(names[4], y * x);
    };
    pair(&mut push, ["S^2=S", "P^2=P", "S+P=I", "SP=0", "PS=0"], &dec.s, &dec.p, &idn);
    pair(&mut push, ["F^2=F", "Q^2=Q", "F+Q=I", "FQ=0", "QF=0"], &dec.f, &dec.q, &idm);
    pair(&mut push, ["S1^2=S1", "S2^2=S2", "S1+S2=S", "S1S2=0", "S2S1=0"], &dec.s1, &dec.s2, &dec.s);
    pair(&mut push, ["F1^2=F1", "F2^2=F2", "F1+F2=F", "F1F2=0", "F2F1=0"], &dec.f1, &dec.f2, &dec.f);
    pair(&mut push, ["P1^2=P1", "P2^2=P2", "P1+P2=P", "P1P2=0", "P2P1=0"], &dec.p1, &dec.p2, &dec.p);
    pair(&mut push, ["Q1^2=Q1", "Q2^2=Q2", "Q1+Q2=Q", "Q1Q2=0", "Q2Q1=0"], &dec.q1, &dec.q2, &dec.q);

    push("FA=AS", &dec.f * a_ - a_ * &dec.s);
    push("FB=BS", &dec.f * b_ - b_ * &dec.s);
    push("QA=AP", &dec.q * a_ - a_ * &dec.p);
    push("QB=BP", &dec.q * b_ - b_ * &dec.p);
    push("Q1A=AP1", &dec.q1 * a_ - a_ * &dec.p1);
    push("Q1B=BP1", &dec.q1 * b_ - b_ * &dec.p1);
    push("Q2B=BP2", &dec.q2 * b_ - b_ * &dec.p2);
    push("AS2=0", a_ * &dec.s2);
    push("F2A=0", &dec.f2 * a_);
    push("F2BS2=0", &dec.f2 * b_ * &dec.s2);
    push("Q2A=0", &dec.q2 * a_);

    push("Agen=F1A", &dec.a_gen - &dec.f1 * a_);
    push("AgenS1=AS1", &dec.a_gen * &dec.s1 - a_ * &dec.s1);
    push("Bgen=F1BS1", &dec.b_gen - &dec.f1 * b_ * &dec.s1);
    push("Bund=F1BS2", &dec.b_und - &dec.f1 * b_ * &dec.s2);
    push("Bov=F2BS1", &dec.b_ov - &dec.f2 * b_ * &dec.s1);
    push("A1=Q1A", &dec.a_1 - &dec.q1 * a_);
    push("B1=Q1B", &dec.b_1 - &dec.q1 * b_);
    push("B2=Q2B", &dec.b_2 - &dec.q2 * b_);

    push("Agen^-Agen=S1", &dec.a_gen_inv * &dec.a_gen - &dec.s1);
    push("AgenAgen^-=F1", &dec.a_gen * &dec.a_gen_inv - &dec.f1);
    push("Agen^-=S1Agen^-", &dec.a_gen_inv - &dec.s1 * &dec.a_gen_inv);
    push("A1^-A1=P1", &dec.a_1_inv * &dec.a_1 - &dec.p1);
    push("A1A1^-=Q1", &dec.a_1 * &dec.a_1_inv - &dec.q1);
    push("B2^-B2=P2", &dec.b_2_inv * &dec.b_2 - &dec.p2);
    push("B2B2^-=Q2", &dec.b_2 * &dec.b_2_inv - &dec.q2);
    push(
        "index<=1",
        DMatrix::from_element(1, 1, if dec.regular_index <= 1 { 0.0 } else { f64::INFINITY }),
    );
    ValidationReport { tol, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn worked_example_dims_and_index() {
        let p = fixtures::example_pencil();
        let dec = decompose(&p, 1e-10).unwrap();
        assert_eq!(dec.x_dims, [1, 1, 0, 1]);
        assert_eq!(dec.y_dims, [1, 1, 0, 1]);
        assert_eq!(dec.regular_index, 1);
        let rep = validate_decomposition(&p, &dec, 1e-10);
        assert!(rep.passed(), "{}", rep.render());
    }

    #[test]
    fn invertible_a_is_all_finite() {
        let b = DMatrix::from_row_slice(3, 3, &[0.3, -1.0, 2.0, 0.0, 0.5, 1.0, 4.0, 0.0, -2.0]);
        let p = Pencil::new(DMatrix::identity(3, 3), b).unwrap();
        let dec = decompose(&p, 1e-10).unwrap();
        assert_eq!(dec.x_dims, [0, 0, 3, 0]);
        assert_eq!(dec.regular_index, 0);
        assert!(linalg::max_abs(&dec.s) < 1e-12 && linalg::max_abs(&dec.f) < 1e-12);
        assert!(linalg::max_abs(&(&dec.p1 - DMatrix::identity(3, 3))) < 1e-12);
        assert!(linalg::max_abs(&(&dec.q1 - DMatrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn zero_a_is_all_infinite() {
        let p = Pencil::new(DMatrix::zeros(3, 3), DMatrix::identity(3, 3)).unwrap();
        let dec = decompose(&p, 1e-10).unwrap();
        assert_eq!(dec.x_dims, [0, 0, 0, 3]);
        assert_eq!(dec.regular_index, 1);
        assert!(linalg::max_abs(&(&dec.p2 - DMatrix::identity(3, 3))) < 1e-12);
        assert!(linalg::max_abs(&(&dec.q2 - DMatrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn nilpotent_block_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let p = Pencil::new(a.clone(), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(decompose(&p, 1e-10), Err(Error::IndexTooHigh)));
        assert!(matches!(
            regular_block_index(&a, &DMatrix::identity(2, 2), 1e-10),
            Err(Error::IndexTooHigh)
        ));
    }

    #[test]
    fn regular_index_examples() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        assert_eq!(regular_block_index(&one(0.0), &one(2.0), 1e-10).unwrap(), 1);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(regular_block_index(&DMatrix::identity(2, 2), &b, 1e-10).unwrap(), 0);
        assert!(matches!(
            regular_block_index(&DMatrix::zeros(2, 2), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), 1e-10),
            Err(Error::SingularPencilInput)
        ));
    }

    #[test]
    fn residue_projector_examples() {
        let (p, q) = residue_projectors(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), 1e-10).unwrap();
        assert!(linalg::max_abs(&p) < 1e-15 && linalg::max_abs(&q) < 1e-15);
        let (p, q) = residue_projectors(&DMatrix::identity(2, 2), &DMatrix::zeros(2, 2), 1e-10).unwrap();
        assert_eq!(p, DMatrix::identity(2, 2));
        assert_eq!(q, DMatrix::identity(2, 2));
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (p, q) = residue_projectors(&diag, &DMatrix::identity(2, 2), 1e-10).unwrap();
        assert!(linalg::max_abs(&(&p - &diag)) < 1e-14);
        assert!(linalg::max_abs(&(&q - &diag)) < 1e-14);
    }

    #[test]
    fn perturbed_projector_fails_validation() {
        let p = fixtures::example_pencil();
        let mut dec = fixtures::example_decomposition();
        assert!(validate_decomposition(&p, &dec, 1e-12).passed());
        dec.s1[(0, 0)] += 0.1;
        let rep = validate_decomposition(&p, &dec, 1e-12);
        assert!(!rep.passed());
        let idem = rep.checks.iter().find(|c| c.name == "S1^2=S1").unwrap();
        assert!((idem.residual - 0.11).abs() < 1e-12);
    }
}
