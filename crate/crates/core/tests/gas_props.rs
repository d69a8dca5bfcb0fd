use daekit::gasnet::{
    build_network_with, incidence_matrices, segment_pipes, EdgeKind, EosForm, GasNetwork, GasState, NodeKind,
    PipeParams, TimeSeries, G,
};
use proptest::prelude::*;

const P_IN: f64 = 5e6;
const Q: f64 = 60.0;

fn pipe() -> PipeParams {
    PipeParams::new(20e3, 0.5, 0.011, 0.02)
}

fn outlet_pressure(segments: usize) -> f64 {
    let mut net = GasNetwork::default();
    let a = net.add_node("in", NodeKind::PressureSet(TimeSeries::Constant(P_IN)));
    let b = net.add_node("out", NodeKind::FlowSet(TimeSeries::Constant(Q)));
    let pp = pipe();
    net.add_edge("P", a, b, EdgeKind::Pipe(pp.clone()));
    let net = segment_pipes(&net, pp.length / segments as f64).unwrap();
    let m = build_network_with(&net, &GasState::natural_gas(), EosForm::Split).unwrap();
    let x = m.steady_state(0.0, &m.initial_guess(0.0, P_IN)).unwrap();
    let out = m.network.node_index("out").unwrap();
    let k = m.network.qset_nodes().iter().position(|&i| i == out).unwrap();
    x[m.layout.p() + k]
}

/// Steady momentum balance `dp/dx = -(g sin(theta) rho + lambda q|q| / (2 D S^2 rho))`
/// integrated with classical RK4 on a fine grid.
fn continuous_outlet_pressure() -> f64 {
    let (pp, gs) = (pipe(), GasState::natural_gas());
    let rhs = |p: f64| {
        let rho = gs.density(p);
        -(G * pp.theta.sin() * rho + pp.lambda_fr * Q * Q.abs() / (2.0 * pp.diameter * pp.area * pp.area * rho))
    };
    let steps = 20_000;
    let h = pp.length / steps as f64;
    let mut p = P_IN;
    for _ in 0..steps {
        let k1 = rhs(p);
        let k2 = rhs(p + 0.5 * h * k1);
        let k3 = rhs(p + 0.5 * h * k2);
        let k4 = rhs(p + h * k3);
        p += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    p
}

#[test]
fn segmented_steady_state_converges_first_order() {
    let exact = continuous_outlet_pressure();
    let errs: Vec<f64> = [2, 4, 8, 16].iter().map(|&k| (outlet_pressure(k) - exact).abs()).collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((order - 1.0).abs() < 0.2, "errors {errs:?}");
    }
    assert!(errs[3] < 1e-2 * (P_IN - exact), "errors {errs:?}");
}

proptest! {
    #[test]
    fn segmentation_preserves_length(len in 1.0f64..5e4, dx in 10.0f64..2e4) {
        let mut net = GasNetwork::default();
        let a = net.add_node("a", NodeKind::PressureSet(TimeSeries::Constant(P_IN)));
        let b = net.add_node("b", NodeKind::FlowSet(TimeSeries::Constant(Q)));
        net.add_edge("P", a, b, EdgeKind::Pipe(PipeParams::new(len, 0.5, 0.01, 0.0)));
        let s = segment_pipes(&net, dx).unwrap();
        let lens: Vec<f64> = s.edges.iter().map(|e| match &e.kind {
            EdgeKind::Pipe(p) => p.length,
            _ => unreachable!(),
        }).collect();
        let total: f64 = lens.iter().sum();
        prop_assert!((total - len).abs() <= 1e-12 * len, "{total} vs {len}");
        prop_assert!(lens.iter().all(|&l| l <= dx * (1.0 + 1e-9)));
        prop_assert_eq!(s.edges.len(), (len / dx * (1.0 - 1e-12)).ceil().max(1.0) as usize);
        prop_assert!(s.validate().is_ok());
    }

    /// Random trees: a pipe column sums to 0 when both ends carry flow sets and
    /// to -1 or +1 when only the left or right end does.
    #[test]
    fn incidence_column_sums(kinds in prop::collection::vec(any::<bool>(), 2..9),
                             parents in prop::collection::vec(any::<u32>(), 8),
                             flips in prop::collection::vec(any::<bool>(), 8)) {
        let mut net = GasNetwork::default();
        for (i, &pressure) in kinds.iter().enumerate() {
            let kind = if pressure {
                NodeKind::PressureSet(TimeSeries::Constant(P_IN))
            } else {
                NodeKind::FlowSet(TimeSeries::Constant(0.0))
            };
            net.add_node(format!("n{i}"), kind);
        }
        for i in 1..kinds.len() {
            let parent = parents[i - 1] as usize % i;
            let (l, r) = if flips[i - 1] { (i, parent) } else { (parent, i) };
            net.add_edge(format!("e{i}"), l, r, EdgeKind::Pipe(PipeParams::new(100.0, 0.5, 0.01, 0.0)));
        }
        let inc = incidence_matrices(&net);
        let sum = &inc.pip_l + &inc.pip_r;
        for (j, &e) in net.pipes().iter().enumerate() {
            let edge = &net.edges[e];
            let flow = |n: usize| matches!(net.nodes[n].kind, NodeKind::FlowSet(_));
            let expected = match (flow(edge.left), flow(edge.right)) {
                (true, true) | (false, false) => 0.0,
                (true, false) => -1.0,
                (false, true) => 1.0,
            };
            prop_assert_eq!(sum.column(j).sum(), expected);
        }
    }
}
