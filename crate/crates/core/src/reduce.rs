//! Reduction of `d/dt[A x] + B x = f(t, x)` to differential equations for
//! `x_s1`, `x_p1` and algebraic equations for `x_p2` (solved) and the
//! overdetermined part (monitored).
//!
//! With the decomposition's extended operators and semi-inverses:
//!
//! ```text
//! d/dt x_s1 = A_gen^(-1) (F1 f - B_gen x_s1 - B_und x_s2)
//! d/dt x_p1 = A_1^(-1) (Q1 f - B_1 x_p1)
//!      x_p2 = B_2^(-1) Q2 f
//!         0 = F2 f - B_ov x_s1
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decomp::{Part, PencilDecomposition};
use crate::error::{Error, Result};
use crate::linalg;
use crate::pencil::Pencil;

/// `f(t, x)`.
pub type VecFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
/// `df/dx(t, x)`.
pub type JacFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Default absolute consistency tolerance.
pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-10;

/// A semilinear DAE `d/dt[A x] + B x = f(t, x)` on `t >= t_plus`.
#[derive(Clone)]
pub struct SemilinearDAE {
    pub pencil: Pencil,
    f: VecFn,
    df_dx: Option<JacFn>,
    pub t_plus: f64,
}

impl std::fmt::Debug for SemilinearDAE {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("SemilinearDAE")
            .field("pencil", &self.pencil)
            .field("analytic_jacobian", &self.df_dx.is_some())
            .field("t_plus", &self.t_plus)
            .finish()
    }
}

impl SemilinearDAE {
    pub fn new<F>(pencil: Pencil, f: F) -> Self
    where
        F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        SemilinearDAE {
            pencil,
            f: Arc::new(f),
            df_dx: None,
            t_plus: 0.0,
        }
    }

    /// Supply an analytic Jacobian.
    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.df_dx = Some(Arc::new(j));
        self
    }

    pub fn with_t_plus(mut self, t_plus: f64) -> Self {
        self.t_plus = t_plus;
        self
    }

    pub fn n(&self) -> usize {
        self.pencil.n()
    }

    pub fn m(&self) -> usize {
        self.pencil.m()
    }

    pub fn has_jacobian(&self) -> bool {
        self.df_dx.is_some()
    }

    pub fn f(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(t, x)
    }

    /// Analytic Jacobian if supplied, else forward differences with
    /// `h = sqrt(eps) * (1 + |x_i|)`.
    pub fn df_dx(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        if let Some(j) = &self.df_dx {
            return j(t, x);
        }
        let f0 = self.f(t, x);
        let mut jac = DMatrix::zeros(f0.len(), x.len());
        let mut xh = x.clone();
        for i in 0..x.len() {
            let h = f64::EPSILON.sqrt() * (1.0 + x[i].abs());
            xh[i] = x[i] + h;
            let col = (self.f(t, &xh) - &f0) / h;
            jac.set_column(i, &col);
            xh[i] = x[i];
        }
        jac
    }

    /// `dax + B x - f(t, x)` where `dax` approximates `d/dt[A x]`.
    pub fn residual(&self, t: f64, x: &DVector<f64>, dax: &DVector<f64>) -> DVector<f64> {
        dax + self.pencil.b() * x - self.f(t, x)
    }
}

/// Norms of the two algebraic residuals at a point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub r_p2: f64,
    pub r_ov: f64,
}

impl ConsistencyPoint {
    pub fn max_residual(&self) -> f64 {
        self.r_p2.max(self.r_ov)
    }

    pub fn is_consistent(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }

    /// One CSV row `t,x1..xn,r_p2,r_ov`.
    pub fn csv_row(&self) -> String {
        let mut parts = vec![format!("{:.16e}", self.t)];
        parts.extend(self.x.iter().map(|v| format!("{v:.16e}")));
        parts.push(format!("{:.16e}", self.r_p2));
        parts.push(format!("{:.16e}", self.r_ov));
        parts.join(",")
    }
}

/// Newton settings for the `x_p2` solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Absolute tolerance on `||alg_p2||`.
    pub tol: f64,
    /// Added relative tolerance, scaled by `max(||x_p2||, ||B_2^(-1) Q2 f||)`.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: DEFAULT_CONSISTENCY_TOL,
            rel_tol: 0.0,
            max_iter: 50,
        }
    }
}

/// Result of a converged `x_p2` solve.
#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    /// Element of X_2 (n-vector).
    pub x_p2: DVector<f64>,
    pub iterations: usize,
    /// `||alg_p2||` at the returned point.
    pub residual: f64,
    /// Condition number of Phi at the returned point (1 when `d = 0`).
    pub phi_cond: f64,
}

/// Coordinate matrix of Phi on X_2 -> Y_2.
#[derive(Clone, Debug)]
pub struct PhiOperator {
    pub matrix: DMatrix<f64>,
    pub cond: f64,
    pub sigma_min: f64,
}

/// The four components of a point.
#[derive(Clone, Debug, PartialEq)]
pub struct Components {
    pub x_s1: DVector<f64>,
    pub x_s2: DVector<f64>,
    pub x_p1: DVector<f64>,
    pub x_p2: DVector<f64>,
}

impl Components {
    pub fn sum(&self) -> DVector<f64> {
        &self.x_s1 + &self.x_s2 + &self.x_p1 + &self.x_p2
    }
}

/// Coordinates of the reduced equations at a point given by block coordinates.
#[derive(Clone, Debug)]
pub struct CoordinateEval {
    pub dz_s1: DVector<f64>,
    pub dz_1: DVector<f64>,
    /// Coordinates of `alg_p2` in the X_2 basis.
    pub r_2: DVector<f64>,
    /// Coordinates of `alg_ov` in the Y_s2 basis.
    pub r_ov: DVector<f64>,
}

/// The reduced system with cached coordinate blocks.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub dae: SemilinearDAE,
    pub dec: PencilDecomposition,
    t_s1: DMatrix<f64>,
    t_1: DMatrix<f64>,
    t_2: DMatrix<f64>,
    xc_s1: DMatrix<f64>,
    xc_1: DMatrix<f64>,
    xc_2: DMatrix<f64>,
    yc_2: DMatrix<f64>,
    b2c: DMatrix<f64>,
    b2c_inv: DMatrix<f64>,
}

/// Pair a DAE with a decomposition of its pencil.
pub fn build_reduced_system(dae: SemilinearDAE, dec: PencilDecomposition) -> Result<ReducedSystem> {
    if dec.n() != dae.n() || dec.m() != dae.m() {
        return Err(Error::ShapeMismatch(format!(
            "decomposition is for {}x{}, DAE is {}x{}",
            dec.m(),
            dec.n(),
            dae.m(),
            dae.n()
        )));
    }
    let t_2 = dec.x_basis_of(Part::R2);
    let yc_2 = dec.y_coords_of(Part::R2);
    let b2c = &yc_2 * dae.pencil.b() * &t_2;
    let b2c_inv = if b2c.nrows() == 0 {
        b2c.clone()
    } else {
        linalg::inverse(&b2c)?
    };
    Ok(ReducedSystem {
        t_s1: dec.x_basis_of(Part::S1),
        t_1: dec.x_basis_of(Part::R1),
        xc_s1: dec.x_coords_of(Part::S1),
        xc_1: dec.x_coords_of(Part::R1),
        xc_2: dec.x_coords_of(Part::R2),
        t_2,
        yc_2,
        b2c,
        b2c_inv,
        dae,
        dec,
    })
}

impl ReducedSystem {
    pub fn n(&self) -> usize {
        self.dae.n()
    }

    /// Dimension of ω = (z_s1, z_1).
    pub fn omega_dim(&self) -> usize {
        self.t_s1.ncols() + self.t_1.ncols()
    }

    /// Dimension of X_2.
    pub fn d(&self) -> usize {
        self.t_2.ncols()
    }

    /// Largest entry of the X_2 block of B, used as the scale for singularity tests.
    pub fn b2c_norm(&self) -> f64 {
        linalg::max_abs(&self.b2c)
    }

    pub fn split(&self, x: &DVector<f64>) -> Components {
        Components {
            x_s1: &self.dec.s1 * x,
            x_s2: &self.dec.s2 * x,
            x_p1: &self.dec.p1 * x,
            x_p2: &self.dec.p2 * x,
        }
    }

    pub fn rhs_s1(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let f = self.dae.f(t, x);
        let d = &self.dec;
        &d.a_gen_inv * (&d.f1 * f - &d.b_gen * x - &d.b_und * x)
    }

    pub fn rhs_p1(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let f = self.dae.f(t, x);
        let d = &self.dec;
        &d.a_1_inv * (&d.q1 * f - &d.b_1 * (&d.p1 * x))
    }

    pub fn alg_p2(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let f = self.dae.f(t, x);
        let d = &self.dec;
        &d.b_2_inv * (&d.q2 * f) - &d.p2 * x
    }

    pub fn alg_ov(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let f = self.dae.f(t, x);
        let d = &self.dec;
        &d.f2 * f - &d.b_ov * x
    }

    /// `(B x - f) + A_gen rhs_s1 + A_1 rhs_p1 + B_2 alg_p2 + alg_ov`, which
    /// vanishes identically when the four equations split `B x - f` exactly.
    /// Returns the absolute norm and the rounding scale of the sum,
    /// `max(1, ||B x||, ||f||, norms of the four terms)`.
    pub fn reconstruction_residual(&self, t: f64, x: &DVector<f64>) -> (f64, f64) {
        let d = &self.dec;
        let f = self.dae.f(t, x);
        let bx = self.dae.pencil.b() * x;
        let terms = [
            &d.a_gen * self.rhs_s1(t, x),
            &d.a_1 * self.rhs_p1(t, x),
            &d.b_2 * self.alg_p2(t, x),
            self.alg_ov(t, x),
        ];
        let mut sum = &bx - &f;
        let mut scale = 1f64.max(bx.norm()).max(f.norm());
        for term in &terms {
            sum += term;
            scale = scale.max(term.norm());
        }
        (sum.norm(), scale)
    }

    pub fn consistency_residual(&self, t: f64, x: &DVector<f64>) -> ConsistencyPoint {
        ConsistencyPoint {
            t,
            x: x.iter().copied().collect(),
            r_p2: self.alg_p2(t, x).norm(),
            r_ov: self.alg_ov(t, x).norm(),
        }
    }

    /// ω = (z_s1, z_1), coordinates of `S1 x` and `P1 x`.
    pub fn omega(&self, x: &DVector<f64>) -> DVector<f64> {
        linalg::vcat(&[&self.xc_s1, &self.xc_1]) * x
    }

    /// `S1 x + P1 x` rebuilt from ω.
    pub fn omega_to_x(&self, omega: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let b = self.t_s1.ncols();
        let z_s1 = omega.rows(0, b).into_owned();
        let z_1 = omega.rows(b, omega.len() - b).into_owned();
        (&self.t_s1 * z_s1, &self.t_1 * z_1)
    }

    /// Υ(t, x): the ω-coordinates of `(rhs_s1, rhs_p1)`.
    pub fn upsilon(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let a = &self.xc_s1 * self.rhs_s1(t, x);
        let b = &self.xc_1 * self.rhs_p1(t, x);
        let mut out = DVector::zeros(a.len() + b.len());
        out.rows_mut(0, a.len()).copy_from(&a);
        out.rows_mut(a.len(), b.len()).copy_from(&b);
        out
    }

    /// Reduced equations evaluated directly from the block coordinates
    /// `z = (z_s1, z_s2, z_1, z_2)` and the restricted blocks of A, B.
    pub fn coordinate_form(&self, t: f64, z: &DVector<f64>) -> Result<CoordinateEval> {
        let dec = &self.dec;
        let [b, l, a, d] = dec.x_dims;
        if z.len() != b + l + a + d {
            return Err(Error::ShapeMismatch("coordinate vector length".into()));
        }
        let x = &dec.x_basis * z;
        let f = self.dae.f(t, &x);
        let (pa, pb) = (self.dae.pencil.a(), self.dae.pencil.b());
        let yc_s1 = dec.y_coords_of(Part::S1);
        let yc_s2 = dec.y_coords_of(Part::S2);
        let yc_1 = dec.y_coords_of(Part::R1);
        let t_s2 = dec.x_basis_of(Part::S2);
        let z_s1 = z.rows(0, b).into_owned();
        let z_s2 = z.rows(b, l).into_owned();
        let z_1 = z.rows(b + l, a).into_owned();
        let z_2 = z.rows(b + l + a, d).into_owned();

        let solve = |m: DMatrix<f64>, rhs: DVector<f64>| -> Result<DVector<f64>> {
            if m.nrows() == 0 {
                return Ok(rhs);
            }
            Ok(linalg::inverse(&m)? * rhs)
        };
        let dz_s1 = solve(
            &yc_s1 * pa * &self.t_s1,
            &yc_s1 * &f - &yc_s1 * pb * &self.t_s1 * &z_s1 - &yc_s1 * pb * &t_s2 * &z_s2,
        )?;
        let dz_1 = solve(&yc_1 * pa * &self.t_1, &yc_1 * &f - &yc_1 * pb * &self.t_1 * &z_1)?;
        let r_2 = &self.b2c_inv * (&self.yc_2 * &f) - z_2;
        let r_ov = &yc_s2 * &f - &yc_s2 * pb * &self.t_s1 * z_s1;
        Ok(CoordinateEval { dz_s1, dz_1, r_2, r_ov })
    }

    /// Coordinates of Phi = [d(Q2 f)/dx - B] P2 as a map X_2 -> Y_2.
    pub fn phi_operator(&self, t: f64, x: &DVector<f64>) -> PhiOperator {
        self.phi_from_jac(&self.dae.df_dx(t, x))
    }

    fn phi_from_jac(&self, jac: &DMatrix<f64>) -> PhiOperator {
        let matrix = &self.yc_2 * jac * &self.t_2 - &self.b2c;
        if matrix.nrows() == 0 {
            return PhiOperator {
                matrix,
                cond: 1.0,
                sigma_min: f64::INFINITY,
            };
        }
        let sv = linalg::singular_values(&matrix);
        let smin = *sv.last().unwrap();
        let cond = if smin > 0.0 { sv[0] / smin } else { f64::INFINITY };
        PhiOperator {
            matrix,
            cond,
            sigma_min: smin,
        }
    }

    /// Solve `x_p2 = B_2^(-1) Q2 f(t, x_s1 + x_s2 + x_p1 + x_p2)` by damped Newton
    /// with Jacobian `W = B_2^(-1) Phi`. At least one step is always taken.
    pub fn solve_consistent_p2(
        &self,
        t: f64,
        x_s1: &DVector<f64>,
        x_s2: &DVector<f64>,
        x_p1: &DVector<f64>,
        guess: &DVector<f64>,
        opts: &NewtonOptions,
    ) -> Result<NewtonOutcome> {
        if opts.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !guess.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Newton guess"));
        }
        let base = x_s1 + x_s2 + x_p1;
        if self.d() == 0 {
            return Ok(NewtonOutcome {
                x_p2: DVector::zeros(self.n()),
                iterations: 0,
                residual: 0.0,
                phi_cond: 1.0,
            });
        }
        // psi(u) = coords of B_2^(-1) Q2 f - u
        let psi = |u: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
            let x = &base + &self.t_2 * u;
            let g = &self.b2c_inv * (&self.yc_2 * self.dae.f(t, &x));
            (&g - u, g)
        };
        let converged = |r: &DVector<f64>, u: &DVector<f64>, g: &DVector<f64>| -> (bool, f64) {
            let res = (&self.t_2 * r).norm();
            let scale = (&self.t_2 * u).norm().max((&self.t_2 * g).norm());
            (res <= opts.tol + opts.rel_tol * scale, res)
        };

        let mut u = &self.xc_2 * guess;
        let (mut r, _) = psi(&u);
        let mut last_res = f64::INFINITY;
        for iter in 1..=opts.max_iter {
            let x = &base + &self.t_2 * &u;
            let phi = self.phi_operator(t, &x);
            let scale = linalg::max_abs(&phi.matrix).max(linalg::max_abs(&self.b2c)).max(f64::MIN_POSITIVE);
            if !(phi.sigma_min > 1e-12 * scale) {
                return Err(Error::SingularPhi {
                    sigma_min: phi.sigma_min,
                    iterate: &self.t_2 * &u,
                });
            }
            // W = B2c^(-1) Phi_c; Newton step solves W du = -r.
            let w = &self.b2c_inv * &phi.matrix;
            let du = match w.clone().lu().solve(&(-&r)) {
                Some(v) => v,
                None => {
                    return Err(Error::SingularPhi {
                        sigma_min: phi.sigma_min,
                        iterate: &self.t_2 * &u,
                    })
                }
            };
            let merit0 = r.norm_squared();
            let mut alpha = 1.0;
            let (mut u_new, mut r_new, mut g_new);
            loop {
                u_new = &u + &du * alpha;
                (r_new, g_new) = psi(&u_new);
                let merit = r_new.norm_squared();
                if merit.is_finite() && merit <= (1.0 - 1e-4 * alpha) * merit0 {
                    break;
                }
                if alpha <= 2f64.powi(-20) {
                    break;
                }
                alpha *= 0.5;
            }
            if !r_new.iter().all(|v| v.is_finite()) {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: f64::INFINITY,
                    iterate: &self.t_2 * &u,
                });
            }
            u = u_new;
            r = r_new;
            let (ok, res) = converged(&r, &u, &g_new);
            last_res = res;
            if ok {
                let x = &base + &self.t_2 * &u;
                return Ok(NewtonOutcome {
                    x_p2: &self.t_2 * &u,
                    iterations: iter,
                    residual: res,
                    phi_cond: self.phi_operator(t, &x).cond,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: last_res,
            iterate: &self.t_2 * &u,
        })
    }

    /// Complete `(x_s1, x_s2, x_p1)` to a point of the consistency manifold.
    pub fn consistent_initialization(
        &self,
        t0: f64,
        x_s1: &DVector<f64>,
        x_s2: &DVector<f64>,
        x_p1: &DVector<f64>,
        opts: &NewtonOptions,
    ) -> Result<DVector<f64>> {
        self.consistent_initialization_from(t0, x_s1, x_s2, x_p1, &DVector::zeros(self.n()), opts)
    }

    /// As [`Self::consistent_initialization`] with an explicit Newton guess.
    pub fn consistent_initialization_from(
        &self,
        t0: f64,
        x_s1: &DVector<f64>,
        x_s2: &DVector<f64>,
        x_p1: &DVector<f64>,
        guess: &DVector<f64>,
        opts: &NewtonOptions,
    ) -> Result<DVector<f64>> {
        if t0 < self.dae.t_plus {
            return Err(Error::InvalidInput(format!("t0 = {t0} precedes t_plus = {}", self.dae.t_plus)));
        }
        let out = self.solve_consistent_p2(t0, x_s1, x_s2, x_p1, guess, opts)?;
        let x = x_s1 + x_s2 + x_p1 + &out.x_p2;
        let r_ov = self.alg_ov(t0, &x).norm();
        let scale = (&self.dec.f2 * self.dae.f(t0, &x)).norm();
        if r_ov > opts.tol + opts.rel_tol * scale {
            return Err(Error::InconsistentOverdetermined { r_ov });
        }
        Ok(x)
    }

    /// Derivative of the full state along the flow: `(rhs_s1, d/dt x_s2, rhs_p1, d/dt x_p2)`,
    /// with `d/dt x_p2` from implicit differentiation of the algebraic equation.
    /// `dx_s2` is the derivative of the free component (zero if unknown).
    pub fn state_derivative(&self, t: f64, x: &DVector<f64>, dx_s2: &DVector<f64>) -> Result<DVector<f64>> {
        let ds1 = self.rhs_s1(t, x);
        let dp1 = self.rhs_p1(t, x);
        let known = &ds1 + dx_s2 + &dp1;
        if self.d() == 0 {
            return Ok(known);
        }
        // u = g(t, x) with g = B2c^(-1) Yc2 f; du/dt = W^(-1)-type solve:
        // (I - G_u) du = G_x known + G_t.
        let jac = self.dae.df_dx(t, x);
        let g_x = &self.b2c_inv * &self.yc_2 * &jac;
        let g_u = &g_x * &self.t_2;
        let h = f64::EPSILON.sqrt() * (1.0 + t.abs());
        let g_t = &self.b2c_inv * &self.yc_2 * ((self.dae.f(t + h, x) - self.dae.f(t, x)) / h);
        let lhs = DMatrix::identity(self.d(), self.d()) - g_u;
        let rhs = &g_x * &known + g_t;
        let du = lhs.lu().solve(&rhs).ok_or(Error::SingularPhi {
            sigma_min: 0.0,
            iterate: &self.dec.p2 * x,
        })?;
        Ok(known + &self.t_2 * du)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::decompose;
    use crate::fixtures;

    fn example_rs(f: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> ReducedSystem {
        let dae = SemilinearDAE::new(fixtures::example_pencil(), f);
        build_reduced_system(dae, fixtures::example_decomposition()).unwrap()
    }

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    #[test]
    fn worked_example_equations_in_new_variables() {
        let f = |t: f64, x: &DVector<f64>| v3(x[0] * x[1] + t, (x[2]).sin() - x[1], x[0] * x[0] - 0.5 * x[2]);
        let rs = example_rs(f);
        for k in 0..20 {
            let (w, xi, u, t) = (0.3 * k as f64 - 2.0, 1.0 - 0.11 * k as f64, 0.05 * k as f64, 0.1 * k as f64);
            let x = v3(w + xi, u, xi);
            let fx = f(t, &x);
            assert!((rs.rhs_s1(t, &x) - v3(-w + fx[0] + 0.5 * fx[2], 0.0, 0.0)).amax() < 1e-13);
            assert!((rs.alg_p2(t, &x) - v3(0.0, 0.5 * fx[2] - u, 0.0)).amax() < 1e-13);
            // alg_ov lies along (0,1,0) and vanishes iff w = f2 - f3/2.
            let ov = rs.alg_ov(t, &x);
            assert!((ov - v3(0.0, fx[1] - 0.5 * fx[2] - w, 0.0)).amax() < 1e-13);
            assert!(rs.rhs_p1(t, &x).amax() < 1e-15);
            let (r, scale) = rs.reconstruction_residual(t, &x);
            assert!(r <= 1e-12 * scale);
        }
    }

    #[test]
    fn consistency_residual_examples() {
        let rs = example_rs(|_, x| v3(0.0, x[0] - x[2], 0.0));
        let c = rs.consistency_residual(0.0, &v3(1.0, 0.0, 0.0));
        assert!(c.r_p2 < 1e-14 && c.r_ov < 1e-14);
        let c = rs.consistency_residual(0.0, &v3(1.0, 1.0, 0.0));
        assert!((c.r_p2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn phi_is_c_minus_two_in_hand_bases() {
        let c = 0.7;
        let rs = example_rs(move |_, x| v3(0.0, 0.0, c * x[1]));
        let phi = rs.phi_operator(0.0, &v3(0.3, 0.2, 0.1));
        assert!((phi.matrix[(0, 0)] - (c - 2.0)).abs() < 1e-7);
        let rs0 = example_rs(|_, _| v3(0.0, 0.0, 0.0));
        let phi0 = rs0.phi_operator(0.0, &v3(0.0, 0.0, 0.0));
        assert!((phi0.matrix[(0, 0)] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn newton_examples() {
        let opts = NewtonOptions::default();
        let z = DVector::zeros(3);
        let rs = example_rs(|_, _| v3(0.0, 0.0, 6.0));
        let out = rs
            .solve_consistent_p2(0.0, &v3(1.0, 0.0, 0.0), &z, &z, &v3(0.0, -4.0, 0.0), &opts)
            .unwrap();
        assert!((out.x_p2[1] - 3.0).abs() < 1e-12);
        assert_eq!(out.iterations, 1);

        let rs = example_rs(|_, x| v3(0.0, 0.0, 2.0 * x[1]));
        let err = rs
            .solve_consistent_p2(0.0, &z, &z, &z, &v3(0.0, 1.0, 0.0), &opts)
            .unwrap_err();
        assert!(matches!(err, Error::SingularPhi { .. }));

        let rs = example_rs(|_, x| v3(0.0, 0.0, (x[1]).sin() + 1.0));
        let out = rs.solve_consistent_p2(0.0, &z, &z, &z, &z, &opts).unwrap();
        let u = out.x_p2[1];
        assert!((u - 0.5 * (u.sin() + 1.0)).abs() < 1e-10);
    }

    #[test]
    fn consistent_initialization_examples() {
        let opts = NewtonOptions::default();
        let z = DVector::zeros(3);
        let rs = example_rs(|_, x| v3(0.0, x[0] - x[2], 0.0));
        let x0 = rs
            .consistent_initialization(0.0, &v3(1.0, 0.0, 0.0), &v3(0.5, 0.0, 0.5), &z, &opts)
            .unwrap();
        assert!((x0 - v3(1.5, 0.0, 0.5)).amax() < 1e-12);

        let rs = example_rs(|_, _| v3(0.0, 0.0, 0.0));
        let err = rs
            .consistent_initialization(0.0, &v3(1.0, 0.0, 0.0), &z, &z, &opts)
            .unwrap_err();
        assert!(matches!(err, Error::InconsistentOverdetermined { .. }));
    }

    #[test]
    fn regular_index_zero_reduces_to_ode() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, -1.0]);
        let p = Pencil::new(a.clone(), b.clone()).unwrap();
        let dec = decompose(&p, 1e-10).unwrap();
        let dae = SemilinearDAE::new(p, |t, x: &DVector<f64>| DVector::from_vec(vec![t.sin(), x[0] * x[1]]));
        let rs = build_reduced_system(dae, dec).unwrap();
        let x = DVector::from_vec(vec![0.4, -1.2]);
        let expect = a.clone().try_inverse().unwrap() * (rs.dae.f(0.3, &x) - &b * &x);
        assert!((rs.rhs_p1(0.3, &x) - expect).amax() < 1e-12);
        assert!(rs.rhs_s1(0.3, &x).amax() < 1e-14);
        assert!(rs.alg_p2(0.3, &x).amax() < 1e-14);
        assert!(rs.alg_ov(0.3, &x).amax() < 1e-14);
        let opts = NewtonOptions::default();
        let z = DVector::zeros(2);
        let x0 = rs.consistent_initialization(0.0, &z, &z, &x, &opts).unwrap();
        assert_eq!(x0, x);
    }

    #[test]
    fn zero_data_vanishes() {
        let p = fixtures::example_pencil();
        let p0 = Pencil::new(p.a().clone(), DMatrix::zeros(3, 3)).unwrap();
        // With B = 0 the split differs, so decompose the zero-B pencil itself.
        let dec = decompose(&p0, 1e-10).unwrap();
        let rs = build_reduced_system(SemilinearDAE::new(p0, |_, _| DVector::zeros(3)), dec).unwrap();
        let z = DVector::zeros(3);
        assert_eq!(rs.rhs_s1(0.0, &z).amax(), 0.0);
        assert_eq!(rs.rhs_p1(0.0, &z).amax(), 0.0);
        assert_eq!(rs.alg_p2(0.0, &z).amax(), 0.0);
        assert_eq!(rs.alg_ov(0.0, &z).amax(), 0.0);
    }

    #[test]
    fn fd_jacobian_matches_analytic() {
        let dae = SemilinearDAE::new(fixtures::example_pencil(), |t, x| v3(x[0] * x[1], t * x[2].sin(), x[0].exp()));
        let x = v3(0.3, -0.7, 1.1);
        let j = dae.df_dx(0.5, &x);
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[x[1], x[0], 0.0, 0.0, 0.0, 0.5 * x[2].cos(), x[0].exp(), 0.0, 0.0],
        );
        assert!((j - expect).amax() < 1e-6);
    }
}
