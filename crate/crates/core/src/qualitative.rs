//! Sampled checks of the Lyapunov-type hypotheses: derivative of a quadratic
//! `V` along the reduced flow, inequalities `V' <= chi(t, V)` (or `>=`) on the
//! consistency manifold, scalar comparison inequalities, dissipativity and
//! basis invertibility of Phi.
//!
//! Every outcome is sampled evidence. Nothing here proves a hypothesis that
//! quantifies over an unbounded set.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::reduce::{NewtonOptions, ReducedSystem};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MatFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type OmegaPredicate = Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>;

/// Relative slack when comparing `V'` against `chi`; covers rounding only.
pub const COMPARE_SLACK: f64 = 1e-9;

/// `V(t, ω) = ωᵀ H(t) ω` with `H = diag(H_s1, H_1)` in ω coordinates.
#[derive(Clone)]
pub struct QuadraticLyapunov {
    h_s1: MatFn,
    h_1: MatFn,
    dh_s1: MatFn,
    dh_1: MatFn,
    pub sup_norm_bound: Option<f64>,
}

impl std::fmt::Debug for QuadraticLyapunov {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("QuadraticLyapunov")
            .field("H(0)", &self.h(0.0))
            .field("sup_norm_bound", &self.sup_norm_bound)
            .finish()
    }
}

impl QuadraticLyapunov {
    /// Time-dependent blocks with their derivatives.
    pub fn new<A, B, C, D>(h_s1: A, h_1: B, dh_s1: C, dh_1: D) -> Self
    where
        A: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        B: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        C: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        D: Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        QuadraticLyapunov {
            h_s1: Arc::new(h_s1),
            h_1: Arc::new(h_1),
            dh_s1: Arc::new(dh_s1),
            dh_1: Arc::new(dh_1),
            sup_norm_bound: None,
        }
    }

    /// Constant blocks.
    pub fn constant(h_s1: DMatrix<f64>, h_1: DMatrix<f64>) -> Self {
        let (b, a) = (h_s1.nrows(), h_1.nrows());
        let bound = linalg::singular_values(&h_s1)
            .first()
            .copied()
            .unwrap_or(0.0)
            .max(linalg::singular_values(&h_1).first().copied().unwrap_or(0.0));
        let mut v = Self::new(
            move |_| h_s1.clone(),
            move |_| h_1.clone(),
            move |_| DMatrix::zeros(b, b),
            move |_| DMatrix::zeros(a, a),
        );
        v.sup_norm_bound = Some(bound);
        v
    }

    /// `H = c I` on a system with ω-block sizes `(b, a)`.
    pub fn scaled_identity(c: f64, b: usize, a: usize) -> Self {
        Self::constant(DMatrix::identity(b, b) * c, DMatrix::identity(a, a) * c)
    }

    pub fn h(&self, t: f64) -> DMatrix<f64> {
        block_diag(&(self.h_s1)(t), &(self.h_1)(t))
    }

    pub fn dh_dt(&self, t: f64) -> DMatrix<f64> {
        block_diag(&(self.dh_s1)(t), &(self.dh_1)(t))
    }

    pub fn value(&self, t: f64, omega: &DVector<f64>) -> f64 {
        omega.dot(&(self.h(t) * omega))
    }

    /// Symmetry and positive definiteness of `H(t)` at the given times.
    pub fn check(&self, times: &[f64]) -> Result<f64> {
        let mut lo = f64::INFINITY;
        for &t in times {
            let h = self.h(t);
            if (&h - h.transpose()).amax() > 1e-12 * (1.0 + h.amax()) {
                return Err(Error::InvalidInput(format!("H({t}) is not symmetric")));
            }
            if h.nrows() == 0 {
                continue;
            }
            let e = h.symmetric_eigenvalues().min();
            if !(e > 0.0) {
                return Err(Error::InvalidInput(format!("H({t}) is not positive definite")));
            }
            lo = lo.min(e);
        }
        Ok(lo)
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() + b.nrows();
    let mut m = DMatrix::zeros(n, n);
    m.view_mut((0, 0), a.shape()).copy_from(a);
    m.view_mut((a.nrows(), a.nrows()), b.shape()).copy_from(b);
    m
}

/// `V'` along the reduced flow: `ωᵀ H'(t) ω + 2 (H(t) ω, Υ(t, x))`.
pub fn lyapunov_derivative(rs: &ReducedSystem, v: &QuadraticLyapunov, t: f64, x: &DVector<f64>) -> f64 {
    let omega = rs.omega(x);
    let ups = rs.upsilon(t, x);
    omega.dot(&(v.dh_dt(t) * &omega)) + 2.0 * (v.h(t) * &omega).dot(&ups)
}

/// `chi(t, v) = k(t) U(v)`.
#[derive(Clone)]
pub struct ComparisonInequality {
    k: ScalarFn,
    u: ScalarFn,
    pub v_max: f64,
    pub t_max: f64,
    /// Optional truncation horizon for `f`; carried for reporting only.
    pub truncation: Option<f64>,
    pub description: String,
}

impl std::fmt::Debug for ComparisonInequality {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(fm, "ComparisonInequality({})", self.description)
    }
}

impl ComparisonInequality {
    pub fn new<K, U>(description: impl Into<String>, k: K, u: U) -> Self
    where
        K: Fn(f64) -> f64 + Send + Sync + 'static,
        U: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ComparisonInequality {
            k: Arc::new(k),
            u: Arc::new(u),
            v_max: 1e12,
            t_max: 1e6,
            truncation: None,
            description: description.into(),
        }
    }

    /// `k` constant and `U(v) = v^p`.
    pub fn power(k: f64, p: f64) -> Self {
        Self::new(format!("k={k},U=v^{p}"), move |_| k, move |v: f64| v.powf(p))
    }

    pub fn k(&self, t: f64) -> f64 {
        (self.k)(t)
    }

    pub fn u(&self, v: f64) -> f64 {
        (self.u)(v)
    }

    pub fn chi(&self, t: f64, v: f64) -> f64 {
        self.k(t) * self.u(v)
    }
}

/// Outcome of the scalar comparison analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComparisonVerdict {
    NoFiniteEscape,
    BoundedForAllTime,
    FiniteEscapeCriterion,
    Inconclusive,
}

/// Behaviour of an improper integral `∫^∞`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tail {
    /// Finite (or `-∞`).
    BelowInfinity,
    /// `+∞`.
    PlusInfinity,
    Unknown,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub verdict: ComparisonVerdict,
    /// `∫_{v0}^∞ dv / U(v)`.
    pub u_tail: Tail,
    pub u_exponent: f64,
    /// `∫_{t0}^∞ k(t) dt`.
    pub k_tail: Tail,
    pub k_exponent: f64,
}

const PER_DECADE: usize = 16;

/// Classify `∫_{s0}^{s_max} g(s) ds` for `g >= 0` (callers guarantee the sign)
/// via the log-log tail slope over the last two decades. Slopes within 0.05
/// of `-1` are resolved by the per-decade increment ratio.
fn positive_tail(g: impl Fn(f64) -> f64, s0: f64, s_max: f64) -> (Tail, f64) {
    let decades = (s_max / s0).log10();
    if !(decades >= 3.0) {
        return (Tail::Unknown, f64::NAN);
    }
    let npts = (decades * PER_DECADE as f64).ceil() as usize;
    let ratio = (s_max / s0).powf(1.0 / npts as f64);
    let s: Vec<f64> = (0..=npts).map(|i| s0 * ratio.powi(i as i32)).collect();
    let gv: Vec<f64> = s.iter().map(|&x| g(x)).collect();
    if gv.iter().any(|v| !v.is_finite()) {
        return (Tail::Unknown, f64::NAN);
    }
    // Per-decade increments by trapezoid in log space: ∫ g ds = ∫ g s dln(s).
    let dl = ratio.ln();
    let inc: Vec<f64> = (0..npts).map(|i| 0.5 * dl * (gv[i] * s[i] + gv[i + 1] * s[i + 1])).collect();
    let tail_pts = 2 * PER_DECADE;
    let first = npts.saturating_sub(tail_pts);
    if gv[first..].iter().all(|&v| v == 0.0) {
        return (Tail::BelowInfinity, f64::NEG_INFINITY);
    }
    if gv[first..].iter().any(|&v| v <= 0.0) {
        return (Tail::Unknown, f64::NAN);
    }
    let xs: Vec<f64> = s[first..].iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = gv[first..].iter().map(|v| v.ln()).collect();
    let slope = regression_slope(&xs, &ys);
    if slope < -1.05 {
        return (Tail::BelowInfinity, slope);
    }
    if slope > -0.95 {
        return (Tail::PlusInfinity, slope);
    }
    let d_last: f64 = inc[npts - PER_DECADE..].iter().sum();
    let d_prev: f64 = inc[npts - 2 * PER_DECADE..npts - PER_DECADE].iter().sum();
    let r = d_last / d_prev;
    if r >= 0.98 {
        (Tail::PlusInfinity, slope)
    } else if r <= 0.9 {
        (Tail::BelowInfinity, slope)
    } else {
        (Tail::Unknown, slope)
    }
}

fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Decide the divergence dichotomy of `∫ dv/U` and `∫ k dt` numerically.
pub fn comparison_classify(chi: &ComparisonInequality, t0: f64, v0: f64) -> ComparisonReport {
    let (u_tail, u_exponent) = if v0 > 0.0 && chi.v_max > v0 {
        positive_tail(
            |v| {
                let u = chi.u(v);
                if u > 0.0 {
                    1.0 / u
                } else {
                    f64::NAN
                }
            },
            v0,
            chi.v_max,
        )
    } else {
        (Tail::Unknown, f64::NAN)
    };
    // k on a geometric grid in s = 1 + (t - t0). Non-positive tails give
    // ∫ k < ∞ directly.
    let s_max = 1.0 + (chi.t_max - t0);
    let (k_tail, k_exponent) = {
        let probe: Vec<f64> = (0..=2 * PER_DECADE)
            .map(|i| {
                let s = s_max * 10f64.powf(-2.0 + i as f64 / PER_DECADE as f64);
                chi.k(t0 + s - 1.0)
            })
            .collect();
        if probe.iter().any(|v| !v.is_finite()) {
            (Tail::Unknown, f64::NAN)
        } else if probe.iter().all(|&v| v <= 0.0) {
            (Tail::BelowInfinity, f64::NAN)
        } else if probe.iter().all(|&v| v >= 0.0) {
            positive_tail(|s| chi.k(t0 + s - 1.0), 1.0, s_max)
        } else {
            (Tail::Unknown, f64::NAN)
        }
    };
    let verdict = match (u_tail, k_tail) {
        (Tail::PlusInfinity, Tail::BelowInfinity) => ComparisonVerdict::BoundedForAllTime,
        (Tail::PlusInfinity, _) => ComparisonVerdict::NoFiniteEscape,
        (Tail::BelowInfinity, Tail::PlusInfinity) => ComparisonVerdict::FiniteEscapeCriterion,
        _ => ComparisonVerdict::Inconclusive,
    };
    ComparisonReport {
        verdict,
        u_tail,
        u_exponent,
        k_tail,
        k_exponent,
    }
}

/// Random points of the consistency manifold, drawn in block coordinates.
#[derive(Clone)]
pub struct ManifoldSampler {
    /// Box for each coordinate of X_s1, X_s2 and X_1.
    pub s1_range: (f64, f64),
    pub s2_range: (f64, f64),
    pub p1_range: (f64, f64),
    pub t_range: (f64, f64),
    /// Admissible `x_s2` (the set D_s2); `None` admits all.
    pub d_s2: Option<Arc<dyn Fn(&DVector<f64>) -> bool + Send + Sync>>,
    /// Inner radius for upper-bound checks.
    pub r_inner: f64,
    /// Region Ω of ω for lower-bound checks; `None` means everything.
    pub omega_region: Option<OmegaPredicate>,
    pub count: usize,
    pub seed: u64,
    pub tol: f64,
    pub newton: NewtonOptions,
}

impl std::fmt::Debug for ManifoldSampler {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("ManifoldSampler")
            .field("s1_range", &self.s1_range)
            .field("s2_range", &self.s2_range)
            .field("p1_range", &self.p1_range)
            .field("t_range", &self.t_range)
            .field("r_inner", &self.r_inner)
            .field("count", &self.count)
            .field("seed", &self.seed)
            .finish()
    }
}

impl ManifoldSampler {
    pub fn new(range: f64, count: usize, seed: u64) -> Self {
        ManifoldSampler {
            s1_range: (-range, range),
            s2_range: (-range, range),
            p1_range: (-range, range),
            t_range: (0.0, 10.0),
            d_s2: None,
            r_inner: 1.0,
            omega_region: None,
            count,
            seed,
            tol: 1e-10,
            newton: NewtonOptions::default(),
        }
    }
}

/// A completed manifold point.
#[derive(Clone, Debug)]
pub struct ManifoldPoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub omega: DVector<f64>,
    pub phi_cond: f64,
}

/// Points together with rejection statistics.
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    pub points: Vec<ManifoldPoint>,
    pub drawn: usize,
    /// Rejected because the overdetermined residual exceeded `tol`.
    pub rejected_ov: usize,
    /// Rejected because `x_s2` fell outside D_s2 or ω outside the region.
    pub rejected_region: usize,
    /// Newton failures (Phi singular or no convergence).
    pub newton_failures: usize,
}

/// Where samples must lie for the inequality to be checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `V' <= chi` for `‖ω‖ >= R`.
    UpperBound,
    /// `V' >= chi` for ω in Ω.
    LowerBound,
}

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64), k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| {
        if range.1 > range.0 {
            rng.random_range(range.0..range.1)
        } else {
            range.0
        }
    })
}

/// Draw `count` accepted points for the given direction.
pub fn sample_manifold(rs: &ReducedSystem, sampler: &ManifoldSampler, direction: Direction) -> Result<SampleSet> {
    let dec = &rs.dec;
    let [b, l, a, _] = dec.x_dims;
    let t_s1 = dec.x_basis_of(crate::decomp::Part::S1);
    let t_s2 = dec.x_basis_of(crate::decomp::Part::S2);
    let t_1 = dec.x_basis_of(crate::decomp::Part::R1);
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut set = SampleSet::default();
    let budget = sampler.count.saturating_mul(20).max(100);
    while set.points.len() < sampler.count && set.drawn < budget {
        set.drawn += 1;
        let t = if sampler.t_range.1 > sampler.t_range.0 {
            rng.random_range(sampler.t_range.0..sampler.t_range.1)
        } else {
            sampler.t_range.0
        };
        let z_s1 = draw(&mut rng, sampler.s1_range, b);
        let z_s2 = draw(&mut rng, sampler.s2_range, l);
        let z_1 = draw(&mut rng, sampler.p1_range, a);
        let x_s1 = &t_s1 * &z_s1;
        let x_s2 = &t_s2 * &z_s2;
        let x_p1 = &t_1 * &z_1;
        if let Some(pred) = &sampler.d_s2 {
            if !pred(&x_s2) {
                set.rejected_region += 1;
                continue;
            }
        }
        let omega = rs.omega(&(&x_s1 + &x_p1));
        let in_region = match direction {
            Direction::UpperBound => omega.norm() >= sampler.r_inner,
            Direction::LowerBound => sampler.omega_region.as_ref().is_none_or(|p| p(&omega)),
        };
        if !in_region {
            set.rejected_region += 1;
            continue;
        }
        let guess = DVector::zeros(rs.n());
        let out = match rs.solve_consistent_p2(t, &x_s1, &x_s2, &x_p1, &guess, &sampler.newton) {
            Ok(o) => o,
            Err(Error::SingularPhi { .. }) | Err(Error::NoConvergence { .. }) => {
                set.newton_failures += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let x = &x_s1 + &x_s2 + &x_p1 + &out.x_p2;
        if rs.alg_ov(t, &x).norm() > sampler.tol {
            set.rejected_ov += 1;
            continue;
        }
        set.points.push(ManifoldPoint {
            t,
            x,
            omega,
            phi_cond: out.phi_cond,
        });
    }
    if set.points.is_empty() {
        return Err(Error::SamplerEmpty);
    }
    Ok(set)
}

/// One failed comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: f64,
    pub v_prime: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityReport {
    pub direction: Direction,
    pub checked: usize,
    pub rejected_ov: usize,
    pub newton_failures: usize,
    /// Smallest `chi - V'` (upper) or `V' - chi` (lower); negative means a violation.
    pub worst_margin: f64,
    pub violations: Vec<Violation>,
}

impl InequalityReport {
    pub fn satisfied(&self) -> bool {
        self.violations.is_empty() && self.checked > 0
    }
}

fn margin_ok(margin: f64, a: f64, b: f64) -> bool {
    margin >= -COMPARE_SLACK * (1.0 + a.abs() + b.abs())
}

/// Sampled check of `V' <= chi(t, V)` or `V' >= chi(t, V)`.
pub fn check_inequality_on_manifold(
    rs: &ReducedSystem,
    v: &QuadraticLyapunov,
    chi: &ComparisonInequality,
    sampler: &ManifoldSampler,
    direction: Direction,
) -> Result<InequalityReport> {
    let set = sample_manifold(rs, sampler, direction)?;
    let mut worst = f64::INFINITY;
    let mut violations = Vec::new();
    for p in &set.points {
        let val = v.value(p.t, &p.omega);
        let vp = lyapunov_derivative(rs, v, p.t, &p.x);
        let bound = chi.chi(p.t, val);
        let margin = match direction {
            Direction::UpperBound => bound - vp,
            Direction::LowerBound => vp - bound,
        };
        worst = worst.min(margin);
        if !margin_ok(margin, vp, bound) {
            violations.push(Violation {
                t: p.t,
                x: p.x.iter().copied().collect(),
                v: val,
                v_prime: vp,
                bound,
            });
        }
    }
    Ok(InequalityReport {
        direction,
        checked: set.points.len(),
        rejected_ov: set.rejected_ov,
        newton_failures: set.newton_failures,
        worst_margin: worst,
        violations,
    })
}

/// Decay inequality variants for dissipativity.
#[derive(Clone)]
pub enum DecayVariant {
    /// `V' <= -U2(‖ω‖)`.
    A(ScalarFn),
    /// `V' <= -U2((ω, ω)_H)`.
    B(ScalarFn),
    /// `V' <= -alpha V`.
    C(f64),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub checked: usize,
    pub decay_worst_margin: f64,
    pub decay_violations: usize,
    /// Largest `‖Q2 f‖ / ‖ω‖` seen.
    pub growth_worst_ratio: f64,
    pub growth_violations: usize,
    pub beta: f64,
}

impl DissipativityReport {
    pub fn satisfied(&self) -> bool {
        self.checked > 0 && self.decay_violations == 0 && self.growth_violations == 0
    }
}

/// Sampled decay inequality plus the bound `‖Q2 f‖ <= beta ‖(x_s1, x_p1)‖`.
pub fn dissipativity_check(
    rs: &ReducedSystem,
    v: &QuadraticLyapunov,
    sampler: &ManifoldSampler,
    variant: &DecayVariant,
    beta: f64,
) -> Result<DissipativityReport> {
    if let DecayVariant::C(alpha) = variant {
        if !(*alpha > 0.0) {
            return Err(Error::InvalidInput("alpha must be positive".into()));
        }
    }
    let set = sample_manifold(rs, sampler, Direction::UpperBound)?;
    let mut rep = DissipativityReport {
        checked: set.points.len(),
        decay_worst_margin: f64::INFINITY,
        decay_violations: 0,
        growth_worst_ratio: 0.0,
        growth_violations: 0,
        beta,
    };
    for p in &set.points {
        let val = v.value(p.t, &p.omega);
        let vp = lyapunov_derivative(rs, v, p.t, &p.x);
        let bound = match variant {
            DecayVariant::A(u2) => -u2(p.omega.norm()),
            DecayVariant::B(u2) => -u2(val),
            DecayVariant::C(alpha) => -alpha * val,
        };
        let margin = bound - vp;
        rep.decay_worst_margin = rep.decay_worst_margin.min(margin);
        if !margin_ok(margin, vp, bound) {
            rep.decay_violations += 1;
        }
        let q2f = (&rs.dec.q2 * rs.dae.f(p.t, &p.x)).norm();
        let on = p.omega.norm();
        let ratio = q2f / on.max(f64::MIN_POSITIVE);
        rep.growth_worst_ratio = rep.growth_worst_ratio.max(ratio);
        if q2f > beta * on * (1.0 + COMPARE_SLACK) + COMPARE_SLACK {
            rep.growth_violations += 1;
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisInvertibilityReport {
    pub trials: usize,
    /// Trials whose Λ was numerically singular.
    pub failures: usize,
    pub min_sigma: f64,
    /// `det Λ` took both signs, so some tuple on the segment makes Λ singular.
    pub sign_change: bool,
    /// Per-trial invertibility flags.
    pub invertible: Vec<bool>,
    /// Per-trial positions `s_i` in `[0, 1]` of the points `w1 + s_i (w2 - w1)`.
    pub params: Vec<Vec<f64>>,
}

impl BasisInvertibilityReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && !self.sign_change
    }
}

/// Sample Λ = Σ Θ_i Φ(w^i) for random tuples on the segment `[w1, w2]` in X_2,
/// with Θ_i the coordinate projectors of Y_2. For `d = 1` this is pointwise
/// invertibility of Phi.
#[allow(clippy::too_many_arguments)]
pub fn basis_invertibility_sample(
    rs: &ReducedSystem,
    t: f64,
    x_s1: &DVector<f64>,
    x_s2: &DVector<f64>,
    x_p1: &DVector<f64>,
    interval: (&DVector<f64>, &DVector<f64>),
    trials: usize,
    seed: u64,
) -> Result<BasisInvertibilityReport> {
    let d = rs.d();
    if d == 0 {
        return Err(Error::InvalidInput("X_2 is trivial".into()));
    }
    let base = x_s1 + x_s2 + x_p1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = BasisInvertibilityReport {
        trials,
        failures: 0,
        min_sigma: f64::INFINITY,
        sign_change: false,
        invertible: Vec::with_capacity(trials),
        params: Vec::with_capacity(trials),
    };
    let mut signs = (false, false);
    for _ in 0..trials {
        let mut lambda = DMatrix::zeros(d, d);
        let mut scale: f64 = 0.0;
        let mut ss = Vec::with_capacity(d);
        for i in 0..d {
            let s: f64 = rng.random_range(0.0..=1.0);
            ss.push(s);
            let w = interval.0 + (interval.1 - interval.0) * s;
            let phi = rs.phi_operator(t, &(&base + w));
            lambda.set_row(i, &phi.matrix.row(i));
            scale = scale.max(linalg::max_abs(&phi.matrix));
        }
        rep.params.push(ss);
        let sv = linalg::singular_values(&lambda);
        let smin = *sv.last().unwrap();
        rep.min_sigma = rep.min_sigma.min(smin);
        let ok = smin > 1e-12 * scale.max(rs.b2c_norm()).max(f64::MIN_POSITIVE);
        rep.invertible.push(ok);
        if !ok {
            rep.failures += 1;
        }
        let det = lambda.determinant();
        if det > 0.0 {
            signs.0 = true;
        } else if det < 0.0 {
            signs.1 = true;
        }
    }
    rep.sign_change = signs.0 && signs.1;
    Ok(rep)
}

/// Final classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    GlobalExistenceEvidence,
    LagrangeStabilityEvidence,
    BlowUpEvidence,
    UniformDissipativityEvidence,
    Inconclusive,
}

/// Settings for [`classify_dae`].
#[derive(Clone)]
pub struct ClassifyOptions {
    /// Start point for the comparison integrals.
    pub t0: f64,
    pub v0: f64,
    /// Optional dissipativity check `(variant, beta)`.
    pub dissipativity: Option<(DecayVariant, f64)>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            t0: 0.0,
            v0: 1.0,
            dissipativity: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Verdict {
    pub kind: VerdictKind,
    pub comparison: Option<ComparisonReport>,
    pub inequality: Option<InequalityReport>,
    pub dissipativity: Option<DissipativityReport>,
    pub details: Vec<String>,
}

impl Verdict {
    /// `key: value` lines followed by a violation table.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "verdict: {:?}", self.kind);
        let _ = writeln!(s, "note: sampled evidence, not a proof");
        if let Some(c) = &self.comparison {
            let _ = writeln!(s, "comparison: {:?}", c.verdict);
            let _ = writeln!(s, "integral_dv_over_U: {:?} (tail exponent {:.4})", c.u_tail, c.u_exponent);
            let _ = writeln!(s, "integral_k_dt: {:?} (tail exponent {:.4})", c.k_tail, c.k_exponent);
        }
        if let Some(r) = &self.inequality {
            let _ = writeln!(s, "direction: {:?}", r.direction);
            let _ = writeln!(s, "samples: {}", r.checked);
            let _ = writeln!(s, "rejected_overdetermined: {}", r.rejected_ov);
            let _ = writeln!(s, "newton_failures: {}", r.newton_failures);
            let _ = writeln!(s, "worst_margin: {:.6e}", r.worst_margin);
            let _ = writeln!(s, "violations: {}", r.violations.len());
        }
        if let Some(d) = &self.dissipativity {
            let _ = writeln!(s, "dissipativity_samples: {}", d.checked);
            let _ = writeln!(s, "decay_violations: {}", d.decay_violations);
            let _ = writeln!(s, "growth_worst_ratio: {:.6e}", d.growth_worst_ratio);
        }
        for d in &self.details {
            let _ = writeln!(s, "detail: {d}");
        }
        if let Some(r) = &self.inequality {
            if !r.violations.is_empty() {
                let _ = writeln!(s, "\n{:>14} {:>14} {:>14} {:>14}", "t", "V", "V'", "chi");
                for v in r.violations.iter().take(20) {
                    let _ = writeln!(s, "{:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}", v.t, v.v, v.v_prime, v.bound);
                }
            }
        }
        s
    }
}

/// Map sampled hypothesis checks to the matching conclusion.
///
/// * `∫dv/U = ∞` and `∫k < ∞` with `V' <= chi` outside a ball: Lagrange stability.
/// * `∫dv/U = ∞` with `V' <= chi` outside a ball: global existence.
/// * `∫dv/U < ∞`, `∫k = ∞` with `V' >= chi` on Ω: blow-up.
/// * optional decay plus growth bound: uniform dissipativity.
pub fn classify_dae(
    rs: &ReducedSystem,
    v: Option<&QuadraticLyapunov>,
    chi: &ComparisonInequality,
    sampler: &ManifoldSampler,
    opts: &ClassifyOptions,
) -> Result<Verdict> {
    let mut verdict = Verdict {
        kind: VerdictKind::Inconclusive,
        comparison: None,
        inequality: None,
        dissipativity: None,
        details: Vec::new(),
    };
    let Some(v) = v else {
        verdict.details.push("no Lyapunov function configured".into());
        return Ok(verdict);
    };
    let lo = v.check(&[sampler.t_range.0, 0.5 * (sampler.t_range.0 + sampler.t_range.1), sampler.t_range.1])?;
    verdict.details.push(format!("min eigenvalue of H on sampled times: {lo:.6e}"));
    let cmp = comparison_classify(chi, opts.t0, opts.v0);
    verdict.comparison = Some(cmp.clone());

    if let Some((variant, beta)) = &opts.dissipativity {
        let rep = dissipativity_check(rs, v, sampler, variant, *beta)?;
        let ok = rep.satisfied() && rep.checked > 0;
        verdict.dissipativity = Some(rep);
        if ok {
            verdict.kind = VerdictKind::UniformDissipativityEvidence;
            return Ok(verdict);
        }
    }

    let direction = match cmp.verdict {
        ComparisonVerdict::FiniteEscapeCriterion => Direction::LowerBound,
        ComparisonVerdict::NoFiniteEscape | ComparisonVerdict::BoundedForAllTime => Direction::UpperBound,
        ComparisonVerdict::Inconclusive => {
            verdict.details.push("comparison integrals are inconclusive".into());
            return Ok(verdict);
        }
    };
    if direction == Direction::LowerBound && sampler.omega_region.is_none() {
        verdict.details.push("blow-up check needs a region Omega".into());
        return Ok(verdict);
    }
    let rep = check_inequality_on_manifold(rs, v, chi, sampler, direction)?;
    let ok = rep.satisfied();
    if rep.newton_failures > 0 {
        verdict
            .details
            .push(format!("{} samples could not be completed (Phi singular or Newton failed)", rep.newton_failures));
    }
    let clean = ok && rep.newton_failures == 0;
    verdict.inequality = Some(rep);
    if !clean {
        verdict.details.push("sampled inequality failed".into());
        return Ok(verdict);
    }
    verdict.kind = match cmp.verdict {
        ComparisonVerdict::BoundedForAllTime => VerdictKind::LagrangeStabilityEvidence,
        ComparisonVerdict::NoFiniteEscape => VerdictKind::GlobalExistenceEvidence,
        ComparisonVerdict::FiniteEscapeCriterion => VerdictKind::BlowUpEvidence,
        ComparisonVerdict::Inconclusive => VerdictKind::Inconclusive,
    };
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::integrate::{integrate, StepOptions};

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    fn w2() -> QuadraticLyapunov {
        QuadraticLyapunov::scaled_identity(1.0, 1, 0)
    }

    #[test]
    fn derivative_on_analytic_example() {
        let (rs, _, _) = fixtures::example_analytic();
        assert!((lyapunov_derivative(&rs, &w2(), 0.0, &v3(2.0, 0.0, 0.0)) + 8.0).abs() < 1e-12);
        // S1 x = 0 gives zero.
        assert_eq!(lyapunov_derivative(&rs, &w2(), 0.3, &v3(1.0, 0.0, 1.0)), 0.0);
    }

    #[test]
    fn derivative_matches_trajectory_differences() {
        let (rs, phi, x0) = fixtures::example_blowup();
        let x0 = x0 * 0.25;
        let v = QuadraticLyapunov::new(
            |t: f64| DMatrix::from_element(1, 1, 1.0 + 0.5 * t.sin()),
            |_| DMatrix::zeros(0, 0),
            |t: f64| DMatrix::from_element(1, 1, 0.5 * t.cos()),
            |_| DMatrix::zeros(0, 0),
        );
        let dt = 1e-3;
        let opts = StepOptions {
            sample_every: Some(dt),
            rtol: 1e-12,
            atol: 1e-14,
            ..StepOptions::default()
        };
        let traj = integrate(&rs, 0.0, &x0, &phi, 0.5, &opts).unwrap();
        for i in (1..traj.times.len() - 1).step_by(50) {
            let vm = v.value(traj.times[i - 1], &rs.omega(&traj.states[i - 1]));
            let vp = v.value(traj.times[i + 1], &rs.omega(&traj.states[i + 1]));
            let fd = (vp - vm) / (2.0 * dt);
            let an = lyapunov_derivative(&rs, &v, traj.times[i], &traj.states[i]);
            assert!((fd - an).abs() < 1e-5, "{fd} vs {an}");
        }
    }

    #[test]
    fn comparison_examples() {
        use ComparisonVerdict::*;
        let v = |c: &ComparisonInequality| comparison_classify(c, 0.0, 1.0).verdict;
        assert_eq!(v(&ComparisonInequality::power(1.0, 1.0)), NoFiniteEscape);
        let decaying = ComparisonInequality::new("k=exp(-t),U=v", |t: f64| (-t).exp(), |v| v);
        assert_eq!(v(&decaying), BoundedForAllTime);
        assert_eq!(v(&ComparisonInequality::power(1.0, 2.0)), FiniteEscapeCriterion);
        assert_eq!(v(&ComparisonInequality::power(1.0, 0.5)), NoFiniteEscape);
        assert_eq!(v(&ComparisonInequality::power(1.0, 1.5)), FiniteEscapeCriterion);
        assert_eq!(v(&ComparisonInequality::power(-2.0, 1.0)), BoundedForAllTime);
        // ∫ dv/(v ln v) diverges like ln ln v, too slowly to separate on a finite grid.
        let log = ComparisonInequality::new("k=1,U=v ln v", |_| 1.0, |v: f64| v * (1.0 + v.ln()));
        assert_eq!(v(&log), Inconclusive);
        let bad = ComparisonInequality::new("U<0", |_| 1.0, |v: f64| -v);
        assert_eq!(v(&bad), Inconclusive);
    }

    fn sampler(count: usize) -> ManifoldSampler {
        let mut s = ManifoldSampler::new(10.0, count, 7);
        s.r_inner = 1.0;
        s
    }

    #[test]
    fn upper_bound_on_analytic_example() {
        let (rs, _, _) = fixtures::example_analytic();
        // V' = -2 w^2 = -2 V, an equality case.
        let chi = ComparisonInequality::new("k=-2,U=v", |_| -2.0, |v: f64| v);
        let rep = check_inequality_on_manifold(&rs, &w2(), &chi, &sampler(500), Direction::UpperBound).unwrap();
        assert!(rep.satisfied(), "{:?}", rep.worst_margin);
        assert_eq!(rep.checked, 500);
    }

    #[test]
    fn lower_bound_on_blowup_example() {
        let (rs, _, _) = fixtures::example_blowup();
        let mut s = sampler(500);
        s.omega_region = Some(Arc::new(|w: &DVector<f64>| w[0] >= 2.0));
        let chi = ComparisonInequality::power(1.0, 1.5);
        let rep = check_inequality_on_manifold(&rs, &w2(), &chi, &s, Direction::LowerBound).unwrap();
        assert!(rep.satisfied());
        // Below w = 2 the inequality fails.
        s.omega_region = Some(Arc::new(|w: &DVector<f64>| w[0] > 0.5 && w[0] < 1.9));
        let rep = check_inequality_on_manifold(&rs, &w2(), &chi, &s, Direction::LowerBound).unwrap();
        assert!(!rep.satisfied());
    }

    #[test]
    fn equilibrium_with_zero_chi() {
        let rs = fixtures::example_reduced(|_, x| v3(x[0] - x[2], x[0] - x[2], 0.0));
        let chi = ComparisonInequality::power(0.0, 0.0);
        let rep = check_inequality_on_manifold(&rs, &w2(), &chi, &sampler(200), Direction::UpperBound).unwrap();
        assert!(rep.satisfied());
    }

    #[test]
    fn dissipativity_examples() {
        let (rs, _, _) = fixtures::example_analytic();
        let rep = dissipativity_check(&rs, &w2(), &sampler(300), &DecayVariant::C(2.0), 1.0).unwrap();
        assert!(rep.satisfied(), "{rep:?}");
        let rep = dissipativity_check(&rs, &w2(), &sampler(300), &DecayVariant::C(2.5), 1.0).unwrap();
        assert!(rep.decay_violations > 0);

        // f3 = w sin w with w = x1 - x3. Q2 f = f3 (-1/2, 1/2, 1), so ‖Q2 f‖ <= sqrt(3/2) |w|.
        let rs = fixtures::example_reduced(|_, x| {
            let w = x[0] - x[2];
            v3(0.0, w + 0.5 * w * w.sin(), w * w.sin())
        });
        let rep = dissipativity_check(&rs, &w2(), &sampler(300), &DecayVariant::C(2.0), 1.5f64.sqrt()).unwrap();
        assert_eq!(rep.growth_violations, 0, "{rep:?}");
        assert!(rep.growth_worst_ratio <= 1.5f64.sqrt() + 1e-12);
        let rep = dissipativity_check(&rs, &w2(), &sampler(300), &DecayVariant::C(2.0), 1.0).unwrap();
        assert!(rep.growth_violations > 0);

        // A = B = I, f = 0: V' = -2V.
        let p = crate::pencil::Pencil::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let dec = crate::decomp::decompose(&p, 1e-10).unwrap();
        let dae = crate::reduce::SemilinearDAE::new(p, |_, _| DVector::zeros(2));
        let rs = crate::reduce::build_reduced_system(dae, dec).unwrap();
        let v = QuadraticLyapunov::scaled_identity(1.0, 0, 2);
        for alpha in [0.5, 1.0, 2.0] {
            let rep = dissipativity_check(&rs, &v, &sampler(100), &DecayVariant::C(alpha), 1.0).unwrap();
            assert!(rep.satisfied());
        }
    }

    #[test]
    fn basis_invertibility_examples() {
        let z = DVector::zeros(3);
        // df3/dx2 = x2 < 2 on [-1, 1].
        let rs = fixtures::example_reduced(|_, x| v3(0.0, 0.0, 0.5 * x[1] * x[1]));
        let rep =
            basis_invertibility_sample(&rs, 0.0, &z, &z, &z, (&v3(0.0, -1.0, 0.0), &v3(0.0, 1.0, 0.0)), 200, 1)
                .unwrap();
        assert!(rep.passed());
        // df3/dx2 = 2 x2 crosses 2 at x2 = 1.
        let rs = fixtures::example_reduced(|_, x| v3(0.0, 0.0, x[1] * x[1]));
        let rep =
            basis_invertibility_sample(&rs, 0.0, &z, &z, &z, (&v3(0.0, 0.0, 0.0), &v3(0.0, 2.0, 0.0)), 200, 1)
                .unwrap();
        assert!(!rep.passed());
        // Phi constant.
        let rs = fixtures::example_reduced(|_, x| v3(0.0, 0.0, 0.5 * x[1]));
        let rep =
            basis_invertibility_sample(&rs, 0.0, &z, &z, &z, (&v3(0.0, -5.0, 0.0), &v3(0.0, 5.0, 0.0)), 50, 1)
                .unwrap();
        assert!(rep.passed() && rep.invertible.iter().all(|&b| b));
    }

    #[test]
    fn d1_agrees_with_pointwise_phi() {
        // Phi = x2 - 2 changes sign at x2 = 2.
        let rs = fixtures::example_reduced(|_, x| v3(0.0, 0.0, 0.5 * x[1] * x[1]));
        let z = DVector::zeros(3);
        let (a, b) = (v3(0.0, 1.0, 0.0), v3(0.0, 3.0, 0.0));
        let rep = basis_invertibility_sample(&rs, 0.0, &z, &z, &z, (&a, &b), 300, 5).unwrap();
        for (s, flag) in rep.params.iter().zip(&rep.invertible) {
            let x = &a + (&b - &a) * s[0];
            let phi = rs.phi_operator(0.0, &x);
            let scale = phi.matrix.amax().max(rs.b2c_norm());
            assert_eq!(*flag, phi.sigma_min > 1e-12 * scale);
        }
        assert!(rep.sign_change);
    }

    #[test]
    fn comparison_lemma_spot_check() {
        let (rs, phi, x0) = fixtures::example_analytic();
        let v = w2();
        let alpha = 2.0;
        let chi = ComparisonInequality::new("k=-2,U=v", move |_| -alpha, |v: f64| v);
        let rep = check_inequality_on_manifold(&rs, &v, &chi, &sampler(500), Direction::UpperBound).unwrap();
        assert!(rep.satisfied());
        let x0 = x0 * 3.0;
        let opts = StepOptions {
            sample_every: Some(0.05),
            ..StepOptions::default()
        };
        let traj = integrate(&rs, 0.0, &x0, &phi, 5.0, &opts).unwrap();
        let v0 = v.value(0.0, &rs.omega(&x0));
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let bound = v0 * (-alpha * t).exp() * (1.0 + 1e-6);
            assert!(v.value(*t, &rs.omega(x)) <= bound, "t = {t}");
        }
    }

    #[test]
    fn classify_examples() {
        let (rs, _, _) = fixtures::example_analytic();
        let chi = ComparisonInequality::power(-2.0, 1.0);
        let v = w2();
        let verdict = classify_dae(&rs, Some(&v), &chi, &sampler(1000), &ClassifyOptions::default()).unwrap();
        assert_eq!(verdict.kind, VerdictKind::LagrangeStabilityEvidence, "{}", verdict.render());

        let (rs, _, _) = fixtures::example_blowup();
        let mut s = sampler(1000);
        s.omega_region = Some(Arc::new(|w: &DVector<f64>| w[0] >= 2.0));
        let verdict =
            classify_dae(&rs, Some(&v), &ComparisonInequality::power(1.0, 1.5), &s, &ClassifyOptions::default())
                .unwrap();
        assert_eq!(verdict.kind, VerdictKind::BlowUpEvidence, "{}", verdict.render());

        let verdict = classify_dae(&rs, None, &chi, &s, &ClassifyOptions::default()).unwrap();
        assert_eq!(verdict.kind, VerdictKind::Inconclusive);
        assert!(verdict.render().contains("Inconclusive"));
    }

    #[test]
    fn sampler_rejects_overdetermined_points() {
        // With f = 0 the overdetermined equation demands w = 0.
        let rs = fixtures::example_reduced(|_, _| v3(0.0, 0.0, 0.0));
        let s = sampler(50);
        assert!(matches!(sample_manifold(&rs, &s, Direction::UpperBound), Err(Error::SamplerEmpty)));
    }
}
