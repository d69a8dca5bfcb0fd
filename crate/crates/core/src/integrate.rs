//! Adaptive Runge-Kutta-Fehlberg 4(5) integration of the reduced system.
//!
//! The state is ω = (z_s1, z_1). At every stage the free component is set to
//! `x_s2 = phi_s2(t)` and `x_p2` is recomputed by Newton, seeded with the last
//! accepted value. The overdetermined residual is monitored after each
//! accepted step.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduce::{NewtonOptions, ReducedSystem, SemilinearDAE};

/// The free function fixing `S2 x(t)`.
#[derive(Clone)]
pub struct FreeComponent {
    phi_s2: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    pub description: String,
}

impl std::fmt::Debug for FreeComponent {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(fm, "FreeComponent({})", self.description)
    }
}

impl FreeComponent {
    pub fn new<F>(description: impl Into<String>, phi_s2: F) -> Self
    where
        F: Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    {
        FreeComponent {
            phi_s2: Arc::new(phi_s2),
            description: description.into(),
        }
    }

    /// `phi_s2 = 0`.
    pub fn zero(n: usize) -> Self {
        Self::new("zero", move |_| DVector::zeros(n))
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        (self.phi_s2)(t)
    }
}

/// Step control and monitoring settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; `None` picks `(t_end - t0) * 1e-3`.
    pub h0: Option<f64>,
    pub h_max: f64,
    /// Steps below this size count as collapsed for escape detection.
    pub dt_min: f64,
    /// ‖ω‖ threshold for escape detection.
    pub escape_norm: f64,
    /// Consistency tolerance checked at the start point.
    pub tol: f64,
    /// Bound on the overdetermined residual along the trajectory.
    pub constraint_tol: f64,
    pub newton: NewtonOptions,
    pub max_steps: usize,
    /// Take steps of exactly this size instead of adapting.
    pub fixed_step: Option<f64>,
    /// Record only at multiples of this spacing (steps are clipped to the grid).
    pub sample_every: Option<f64>,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            rtol: 1e-9,
            atol: 1e-11,
            h0: None,
            h_max: f64::INFINITY,
            dt_min: 1e-6,
            escape_norm: 1e8,
            tol: 1e-10,
            constraint_tol: 1e-8,
            newton: NewtonOptions::default(),
            max_steps: 2_000_000,
            fixed_step: None,
            sample_every: None,
        }
    }
}

/// How an integration ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TrajStatus {
    CompletedHorizon,
    EscapeDetected { t_escape: f64, bracket: (f64, f64) },
    ConstraintViolation { t: f64, r_ov: f64 },
    SolverFailure { t: f64, reason: String },
}

impl TrajStatus {
    pub fn label(&self) -> String {
        match self {
            TrajStatus::CompletedHorizon => "CompletedHorizon".into(),
            TrajStatus::EscapeDetected { t_escape, bracket } => format!(
                "EscapeDetected t_escape={t_escape:.16e} bracket=[{:.16e},{:.16e}]",
                bracket.0, bracket.1
            ),
            TrajStatus::ConstraintViolation { t, r_ov } => {
                format!("ConstraintViolation t={t:.16e} r_ov={r_ov:.16e}")
            }
            TrajStatus::SolverFailure { t, reason } => format!("SolverFailure t={t:.16e} reason={reason}"),
        }
    }
}

/// Recorded samples of an integration.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub r_p2: Vec<f64>,
    pub r_ov: Vec<f64>,
    pub status: TrajStatus,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds the start point")
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds the start point")
    }

    /// CSV with header `t,x1..xn,r_p2,r_ov` and a `# status:` footer.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut s = String::from("t");
        for i in 1..=n {
            let _ = write!(s, ",x{i}");
        }
        s.push_str(",r_p2,r_ov\n");
        for k in 0..self.times.len() {
            let _ = write!(s, "{:.16e}", self.times[k]);
            for v in self.states[k].iter() {
                let _ = write!(s, ",{v:.16e}");
            }
            let _ = writeln!(s, ",{:.16e},{:.16e}", self.r_p2[k], self.r_ov[k]);
        }
        let _ = writeln!(s, "# status: {}", self.status.label());
        s
    }
}

// Fehlberg 4(5) tableau.
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const A: [[f64; 5]; 6] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
const B4: [f64; 6] = [25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0];
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];

struct Stepper<'a> {
    rs: &'a ReducedSystem,
    phi: &'a FreeComponent,
    newton: NewtonOptions,
}

impl Stepper<'_> {
    /// Full state and ω' at `(t, ω)`.
    fn eval(&self, t: f64, omega: &DVector<f64>, guess: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let (x_s1, x_p1) = self.rs.omega_to_x(omega);
        let x_s2 = self.phi.eval(t);
        let out = self.rs.solve_consistent_p2(t, &x_s1, &x_s2, &x_p1, guess, &self.newton)?;
        let x = x_s1 + x_s2 + x_p1 + out.x_p2;
        let d = self.rs.upsilon(t, &x);
        if !d.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("right-hand side"));
        }
        Ok((x, d))
    }

    /// One RKF45 step. Returns (ω_new, x_new, error estimate vector).
    fn step(
        &self,
        t: f64,
        h: f64,
        omega: &DVector<f64>,
        k1: &DVector<f64>,
        guess: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(6);
        k.push(k1.clone());
        for s in 1..6 {
            let mut y = omega.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    y += kj * (h * A[s][j]);
                }
            }
            let (_, d) = self.eval(t + C[s] * h, &y, guess)?;
            k.push(d);
        }
        let mut y4 = omega.clone();
        let mut err = DVector::zeros(omega.len());
        for s in 0..6 {
            y4 += &k[s] * (h * B4[s]);
            err += &k[s] * (h * (B5[s] - B4[s]));
        }
        let (x_new, _) = self.eval(t + h, &y4, guess)?;
        Ok((y4, x_new, err))
    }
}

fn err_norm(err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>, opts: &StepOptions) -> f64 {
    let mut e: f64 = 0.0;
    for i in 0..err.len() {
        let sc = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
        e = e.max(err[i].abs() / sc);
    }
    e
}

/// Integrate from a consistent `x0` over `[t0, t_end]`.
pub fn integrate(
    rs: &ReducedSystem,
    t0: f64,
    x0: &DVector<f64>,
    phi: &FreeComponent,
    t_end: f64,
    opts: &StepOptions,
) -> Result<Trajectory> {
    if !(t_end > t0) {
        return Err(Error::InvalidInput("horizon must exceed t0".into()));
    }
    if x0.len() != rs.n() {
        return Err(Error::ShapeMismatch("x0 length".into()));
    }
    let c0 = rs.consistency_residual(t0, x0);
    let scale = 1.0 + x0.norm();
    if c0.r_p2 > opts.tol + opts.newton.rel_tol * scale || c0.r_ov > opts.constraint_tol {
        return Err(Error::InconsistentStart(format!(
            "r_p2 = {:.3e}, r_ov = {:.3e}",
            c0.r_p2, c0.r_ov
        )));
    }
    let s2 = &rs.dec.s2 * x0;
    if (phi.eval(t0) - &s2).norm() > opts.tol * scale.max(1.0) * 10.0 {
        return Err(Error::InconsistentStart("phi_s2(t0) differs from S2 x0".into()));
    }

    let stepper = Stepper {
        rs,
        phi,
        newton: opts.newton,
    };
    let mut t = t0;
    let mut omega = rs.omega(x0);
    let mut x = x0.clone();
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![x0.clone()],
        r_p2: vec![c0.r_p2],
        r_ov: vec![c0.r_ov],
        status: TrajStatus::CompletedHorizon,
        accepted: 0,
        rejected: 0,
    };
    let (_, mut k1) = stepper.eval(t, &omega, &(&rs.dec.p2 * x0))?;
    let span = t_end - t0;
    let mut h = opts.fixed_step.or(opts.h0).unwrap_or(span * 1e-3).min(opts.h_max);
    let mut err_prev: f64 = 1e-4;
    let mut recent: Vec<f64> = vec![t0];
    let mut next_sample = opts.sample_every.map(|dt| t0 + dt);
    let mut sample_idx = 1usize;
    let h_floor = |t: f64| 1e-14 * t.abs().max(span).max(1.0);

    while t < t_end {
        if traj.accepted + traj.rejected >= opts.max_steps {
            traj.status = TrajStatus::SolverFailure {
                t,
                reason: "step budget exhausted".into(),
            };
            break;
        }
        let mut h_try = h.min(t_end - t);
        if let Some(ns) = next_sample {
            h_try = h_try.min(ns - t);
        }
        // Snap to the target when the leftover would be a sliver.
        let target = next_sample.map_or(t_end, |ns| ns.min(t_end));
        if target - (t + h_try) < 1e-12 * span {
            h_try = target - t;
        }
        let guess = &rs.dec.p2 * &x;
        let attempt = stepper.step(t, h_try, &omega, &k1, &guess);
        let (omega_new, x_new, err) = match attempt {
            Ok(v) => v,
            Err(e) => {
                traj.rejected += 1;
                h = h_try * 0.25;
                if opts.fixed_step.is_some() || h < h_floor(t) {
                    traj.status = escape_or_failure(rs, &stepper, t, &omega, &x, &recent, opts, format!("{e}"));
                    break;
                }
                continue;
            }
        };
        let e = if opts.fixed_step.is_some() {
            0.0
        } else {
            err_norm(&err, &omega, &omega_new, opts)
        };
        if !(e <= 1.0) {
            traj.rejected += 1;
            let fac = if e.is_finite() { (0.9 * e.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h = h_try * fac;
            if h < h_floor(t) {
                traj.status = escape_or_failure(rs, &stepper, t, &omega, &x, &recent, opts, "step size underflow".into());
                break;
            }
            continue;
        }
        // accepted
        traj.accepted += 1;
        t += h_try;
        if (t - t_end).abs() <= 1e-12 * span {
            t = t_end;
        }
        omega = omega_new;
        x = x_new;
        let (_, k_new) = match stepper.eval(t, &omega, &(&rs.dec.p2 * &x)) {
            Ok(v) => v,
            Err(e) => {
                traj.status = TrajStatus::SolverFailure {
                    t,
                    reason: format!("{e}"),
                };
                break;
            }
        };
        k1 = k_new;
        recent.push(t);
        if recent.len() > 3 {
            recent.remove(0);
        }
        let cp = rs.consistency_residual(t, &x);
        let on_grid = match next_sample {
            Some(ns) => {
                if (t - ns).abs() <= 1e-12 * span || t >= t_end {
                    sample_idx += 1;
                    next_sample = opts.sample_every.map(|dt| t0 + dt * sample_idx as f64);
                    true
                } else {
                    false
                }
            }
            None => true,
        };
        if on_grid || t >= t_end {
            traj.times.push(t);
            traj.states.push(x.clone());
            traj.r_p2.push(cp.r_p2);
            traj.r_ov.push(cp.r_ov);
        }
        if cp.r_ov > opts.constraint_tol {
            traj.status = TrajStatus::ConstraintViolation { t, r_ov: cp.r_ov };
            break;
        }
        if omega.norm() >= opts.escape_norm && h_try < opts.dt_min {
            traj.status = escape_status(t, &omega, &k1, &recent);
            break;
        }
        if opts.fixed_step.is_none() {
            let fac = 0.9 * e.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            h = (h_try * fac.clamp(0.2, 5.0)).min(opts.h_max);
            // Steps clipped by the sampling grid should not shrink the controller.
            if h < h_try && e < 0.5 {
                h = h_try;
            }
            err_prev = e.max(1e-4);
        }
    }
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn escape_or_failure(
    rs: &ReducedSystem,
    stepper: &Stepper<'_>,
    t: f64,
    omega: &DVector<f64>,
    x: &DVector<f64>,
    recent: &[f64],
    opts: &StepOptions,
    reason: String,
) -> TrajStatus {
    if omega.norm() >= opts.escape_norm {
        if let Ok((_, d)) = stepper.eval(t, omega, &(&rs.dec.p2 * x)) {
            return escape_status(t, omega, &d, recent);
        }
    }
    TrajStatus::SolverFailure { t, reason }
}

/// Bracket `[t, t + 2 max(tau_aitken - t, ‖ω‖/‖ω'‖)]` for the escape time.
fn escape_status(t: f64, omega: &DVector<f64>, d_omega: &DVector<f64>, recent: &[f64]) -> TrajStatus {
    let ratio = omega.norm() / d_omega.norm().max(f64::MIN_POSITIVE);
    let mut est = t + ratio;
    if recent.len() == 3 {
        let d1 = recent[1] - recent[0];
        let d2 = recent[2] - recent[1];
        if d1 > d2 && d2 > 0.0 {
            est = t + d2 * d2 / (d1 - d2);
        }
    }
    let half = (est - t).max(ratio);
    TrajStatus::EscapeDetected {
        t_escape: est,
        bracket: (t, t + 2.0 * half),
    }
}

/// Finite-difference check of `d/dt[A x] + B x = f(t, x)` along a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_residual: f64,
    pub at_time: f64,
    pub samples: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Three-point (nonuniform) central differences of `A x` at interior samples.
pub fn verify_solution_residual(dae: &SemilinearDAE, traj: &Trajectory, tol: f64) -> ResidualReport {
    let a = dae.pencil.a();
    let mut worst: f64 = 0.0;
    let mut at_time = f64::NAN;
    let n = traj.times.len();
    for i in 1..n.saturating_sub(1) {
        let (t0, t1, t2) = (traj.times[i - 1], traj.times[i], traj.times[i + 1]);
        let (h1, h2) = (t1 - t0, t2 - t1);
        let y0 = a * &traj.states[i - 1];
        let y1 = a * &traj.states[i];
        let y2 = a * &traj.states[i + 1];
        let dax = y0 * (-h2 / (h1 * (h1 + h2))) + y1 * ((h2 - h1) / (h1 * h2)) + y2 * (h1 / (h2 * (h1 + h2)));
        let r = dae.residual(t1, &traj.states[i], &dax).amax();
        if r > worst || !r.is_finite() {
            worst = r;
            at_time = t1;
        }
    }
    ResidualReport {
        max_residual: worst,
        at_time,
        samples: n.saturating_sub(2),
        tol,
        passed: worst <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn v3(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    fn exact(t: f64) -> DVector<f64> {
        v3((-t).exp() + t.sin(), 0.0, t.sin())
    }

    #[test]
    fn analytic_solution_at_one() {
        let (rs, phi, x0) = fixtures::example_analytic();
        let traj = integrate(&rs, 0.0, &x0, &phi, 1.0, &StepOptions::default()).unwrap();
        assert_eq!(traj.status, TrajStatus::CompletedHorizon);
        let x = traj.last_state();
        assert!((x - exact(1.0)).amax() < 1e-7, "{x}");
        assert!((x[0] - 1.2093).abs() < 1e-4 && (x[2] - 0.8415).abs() < 1e-4);
        assert!(traj.r_p2.iter().all(|&r| r <= 1e-10));
    }

    #[test]
    fn fixed_step_order_is_four() {
        let (rs, phi, x0) = fixtures::example_analytic();
        let mut errs = Vec::new();
        for h in [0.1, 0.05] {
            let opts = StepOptions {
                fixed_step: Some(h),
                ..StepOptions::default()
            };
            let traj = integrate(&rs, 0.0, &x0, &phi, 1.0, &opts).unwrap();
            errs.push((traj.last_state() - exact(1.0)).amax());
        }
        let p = (errs[0] / errs[1]).log2();
        assert!((p - 4.0).abs() < 0.3, "order {p}");
    }

    #[test]
    fn blow_up_bracket_contains_ln2() {
        let (rs, phi, x0) = fixtures::example_blowup();
        let traj = integrate(&rs, 0.0, &x0, &phi, 2.0, &StepOptions::default()).unwrap();
        match traj.status {
            TrajStatus::EscapeDetected { bracket, .. } => {
                let ln2 = 2f64.ln();
                assert!(bracket.0 <= ln2 && ln2 <= bracket.1, "{bracket:?}");
                assert!(bracket.1 - bracket.0 <= 0.05);
            }
            ref s => panic!("unexpected status {s:?}"),
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let rs = fixtures::example_reduced(|_, x| v3(x[0] - x[2], x[0] - x[2], 0.0));
        let x0 = v3(1.0, 0.0, 0.0);
        let traj = integrate(&rs, 0.0, &x0, &FreeComponent::zero(3), 3.0, &StepOptions::default()).unwrap();
        for s in &traj.states {
            assert!((s - &x0).amax() < 1e-14);
        }
        let rep = verify_solution_residual(&rs.dae, &traj, 1e-12);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn residual_check_detects_corruption() {
        let (rs, phi, x0) = fixtures::example_analytic();
        let opts = StepOptions {
            sample_every: Some(1e-3),
            ..StepOptions::default()
        };
        let mut traj = integrate(&rs, 0.0, &x0, &phi, 1.0, &opts).unwrap();
        assert_eq!(traj.times.len(), 1001);
        let rep = verify_solution_residual(&rs.dae, &traj, 1e-4);
        assert!(rep.passed, "{rep:?}");
        traj.states[500][1] += 1.0;
        let rep = verify_solution_residual(&rs.dae, &traj, 1e-4);
        assert!(!rep.passed && rep.max_residual > 0.5);
    }

    #[test]
    fn restart_matches_one_shot() {
        let (rs, phi, x0) = fixtures::example_analytic();
        let opts = StepOptions {
            fixed_step: Some(0.01),
            ..StepOptions::default()
        };
        let whole = integrate(&rs, 0.0, &x0, &phi, 2.0, &opts).unwrap();
        let first = integrate(&rs, 0.0, &x0, &phi, 1.0, &opts).unwrap();
        let second = integrate(&rs, 1.0, first.last_state(), &phi, 2.0, &opts).unwrap();
        assert!((whole.last_state() - second.last_state()).amax() <= 10.0 * opts.tol);
    }

    #[test]
    fn inconsistent_start_is_rejected() {
        let (rs, phi, _) = fixtures::example_analytic();
        let bad = v3(1.0, 1.0, 0.0);
        assert!(matches!(
            integrate(&rs, 0.0, &bad, &phi, 1.0, &StepOptions::default()),
            Err(Error::InconsistentStart(_))
        ));
    }

    #[test]
    fn csv_has_header_and_footer() {
        let (rs, phi, x0) = fixtures::example_analytic();
        let traj = integrate(&rs, 0.0, &x0, &phi, 0.1, &StepOptions::default()).unwrap();
        let csv = traj.to_csv();
        assert!(csv.starts_with("t,x1,x2,x3,r_p2,r_ov\n"));
        assert!(csv.trim_end().ends_with("# status: CompletedHorizon"));
    }
}
