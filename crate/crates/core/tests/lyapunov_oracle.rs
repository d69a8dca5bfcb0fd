//! `lyapunov_derivative` against central differences of `V` along integrated
//! trajectories of random systems.

use daekit::decomp::decompose;
use daekit::integrate::{integrate, FreeComponent, StepOptions};
use daekit::qualitative::{lyapunov_derivative, QuadraticLyapunov};
use daekit::reduce::{build_reduced_system, NewtonOptions, ReducedSystem, SemilinearDAE};
use daekit::synth::{gaussian, random_spec, synthesize};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn symmetric(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let g = gaussian(rng, k, k);
    (&g + g.transpose()) * 0.5
}

/// Random system without overdetermined blocks and a time-dependent `H`.
fn random_case(seed: u64) -> (ReducedSystem, QuadraticLyapunov, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (p, dec) = loop {
        let mut spec = random_spec(&mut rng, 8, 9);
        spec.etas.clear();
        if spec.shape().0 == 0 {
            continue;
        }
        let p = synthesize(&spec, &mut rng);
        let dec = decompose(&p, 1e-10).unwrap();
        if dec.x_dims[0] + dec.x_dims[2] > 0 {
            break (p, dec);
        }
    };
    let (m, n) = (p.m(), p.n());
    let w0 = gaussian(&mut rng, m, n);
    let lip = dec.b_2_inv.norm() * w0.norm() * dec.p2.norm();
    let w = &w0 * (0.5 / (lip + w0.norm()));
    let wj = w.clone();
    let c = gaussian(&mut rng, m, 1).column(0).into_owned();
    let f = move |t: f64, x: &DVector<f64>| &c * t.cos() + (&w * x).map(|v| v.sin());
    let jac = move |_t: f64, x: &DVector<f64>| {
        let d = (&wj * x).map(|v| v.cos());
        DMatrix::from_fn(m, n, |i, j| d[i] * wj[(i, j)])
    };
    let rs = build_reduced_system(SemilinearDAE::new(p, f).with_jacobian(jac), dec).unwrap();

    let (b, a) = (rs.dec.x_dims[0], rs.dec.x_dims[2]);
    let (s0, s1) = (symmetric(&mut rng, b) * 0.2, symmetric(&mut rng, a) * 0.2);
    let (s0b, s1b) = (s0.clone(), s1.clone());
    let v = QuadraticLyapunov::new(
        move |t: f64| DMatrix::identity(b, b) + &s0 * t.sin(),
        move |t: f64| DMatrix::identity(a, a) * (1.0 + 0.5 * t) + &s1 * t.sin(),
        move |t: f64| &s0b * t.cos(),
        move |t: f64| DMatrix::identity(a, a) * 0.5 + &s1b * t.cos(),
    );

    // Consistent start with S2 x0 = 0 so that phi_s2 = 0 fits.
    let x = gaussian(&mut rng, rs.n(), 1).column(0).into_owned();
    let cpt = rs.split(&x);
    let zero = DVector::zeros(rs.n());
    let x0 = rs
        .consistent_initialization(0.0, &cpt.x_s1, &zero, &cpt.x_p1, &NewtonOptions::default())
        .unwrap();
    (rs, v, x0)
}

fn fd_error(rs: &ReducedSystem, v: &QuadraticLyapunov, x0: &DVector<f64>, dt: f64) -> f64 {
    let opts = StepOptions {
        rtol: 1e-12,
        atol: 1e-14,
        sample_every: Some(dt),
        max_steps: 200_000,
        ..StepOptions::default()
    };
    let traj = integrate(rs, 0.0, x0, &FreeComponent::zero(rs.n()), 0.4, &opts).unwrap();
    let vals: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| v.value(*t, &rs.omega(x)))
        .collect();
    let mut worst: f64 = 0.0;
    for i in 1..vals.len() - 1 {
        let h = traj.times[i + 1] - traj.times[i - 1];
        let fd = (vals[i + 1] - vals[i - 1]) / h;
        let an = lyapunov_derivative(rs, v, traj.times[i], &traj.states[i]);
        worst = worst.max((fd - an).abs());
    }
    worst
}

#[test]
fn derivative_matches_central_differences_with_order_two() {
    for seed in 0..10u64 {
        let (rs, v, x0) = random_case(seed);
        let e1 = fd_error(&rs, &v, &x0, 0.02);
        let e2 = fd_error(&rs, &v, &x0, 0.01);
        let order = (e1 / e2).log2();
        assert!(order >= 1.7, "seed {seed}: errors {e1:.3e} {e2:.3e}, order {order:.2}");
    }
}
