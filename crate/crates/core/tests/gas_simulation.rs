use daekit::gasnet::{
    build_network_with, build_single_pipe, gas_newton_options, parse_network, EosForm, GasState, PipeParams,
    TimeSeries, Y_NETWORK_JSON,
};
use daekit::integrate::{integrate, FreeComponent, StepOptions, TrajStatus};
use daekit::decomp::decompose;
use daekit::reduce::build_reduced_system;
use nalgebra::DVector;

fn gas_opts() -> StepOptions {
    StepOptions {
        newton: gas_newton_options(),
        escape_norm: 1e12,
        ..StepOptions::default()
    }
}

#[test]
fn single_pipe_relaxes_to_steady_state() {
    let pp = PipeParams::new(1000.0, 0.5, 0.011, 0.01);
    let gs = GasState::natural_gas();
    let (q_r, p_l) = (150.0, 5e6);
    let dae = build_single_pipe(&pp, &gs, TimeSeries::Constant(q_r), TimeSeries::Constant(p_l)).unwrap();
    let dec = decompose(&dae.pencil, 1e-10).unwrap();
    let rs = build_reduced_system(dae, dec).unwrap();
    // Start away from equilibrium: flow 10 % high, density of the inlet pressure.
    let rho0 = gs.density(p_l);
    let guess = DVector::from_vec(vec![rho0, 1.1 * q_r, p_l]);
    let c = rs.split(&guess);
    let x0 = rs
        .consistent_initialization_from(0.0, &c.x_s1, &c.x_s2, &c.x_p1, &c.x_p2, &gas_newton_options())
        .unwrap();
    // Cap the step so the damped acoustic mode stays inside the RK stability region.
    let opts = StepOptions {
        h_max: 1.0,
        ..gas_opts()
    };
    let traj = integrate(&rs, 0.0, &x0, &FreeComponent::zero(3), 3600.0, &opts).unwrap();
    assert_eq!(traj.status, TrajStatus::CompletedHorizon);
    let x = traj.last_state();
    let dx = rs.state_derivative(3600.0, x, &DVector::zeros(3)).unwrap();
    assert!(dx.norm() <= 1e-8, "{}", dx.norm());
}

#[test]
fn y_network_keeps_kirchhoff_balance() {
    let loaded = parse_network(Y_NETWORK_JSON).unwrap();
    let m = build_network_with(&loaded.network, &loaded.gas, EosForm::Split).unwrap();
    let rs = m.reduced(1e-10).unwrap();
    let x0 = m.steady_state(0.0, &m.initial_guess(0.0, 5.5e6)).unwrap();
    let (traj, rep) = m.simulate(&rs, 0.0, &x0, 3600.0, &gas_opts()).unwrap();
    assert_eq!(traj.status, TrajStatus::CompletedHorizon);
    assert!(rep.max_residual <= 1e-8, "{rep:?}");
}
