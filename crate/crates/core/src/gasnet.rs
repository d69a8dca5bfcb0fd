//! Isothermal gas transport: the discretized single pipe and the network model
//! assembled from graph topology, incidence matrices and the equation of state
//! `z(p) = 1 + alpha p`, `phi(p) = p / z(p)`.
//!
//! Network state `x = (rho, q_pip_l, q_val, q_reg, q_pip_r, p)` where `rho`
//! and `p` range over the flow-set nodes. Rows are ordered as continuity,
//! momentum, valve, regulator, Kirchhoff, state equation, then the optional
//! coupling rows `f_pb`, `f_qb`.
//!
//! The functions `f_pip`, `f_val`, `f_reg` are defaults chosen here:
//!
//! * pipe: `S g sin(theta) rho + lambda q |q| / (2 D S rho)` with `rho` the
//!   mass density at the right node,
//! * valve: `-f_val = open(t) (p_l - p_r) - r q`,
//! * regulator: `f_reg = gain (dp_set(t) - (p_l - p_r))`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::decomp::decompose;
use crate::error::{Error, Result};
use crate::integrate::{integrate, FreeComponent, StepOptions, Trajectory};
use crate::linalg;
use crate::pencil::Pencil;
use crate::reduce::{build_reduced_system, NewtonOptions, ReducedSystem, SemilinearDAE};

/// Gravitational acceleration [m/s²].
pub const G: f64 = 9.80665;

/// Geometry and friction of one pipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipeParams {
    /// Length [m].
    pub length: f64,
    /// Diameter [m].
    pub diameter: f64,
    /// Cross-sectional area [m²].
    pub area: f64,
    pub lambda_fr: f64,
    /// Slope angle [rad].
    pub theta: f64,
    pub segments: usize,
}

impl PipeParams {
    /// Circular cross-section, one segment.
    pub fn new(length: f64, diameter: f64, lambda_fr: f64, theta: f64) -> Self {
        PipeParams {
            length,
            diameter,
            area: PI * diameter * diameter / 4.0,
            lambda_fr,
            theta,
            segments: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.diameter > 0.0 && self.area > 0.0) {
            return Err(Error::InvalidInput("pipe L, D and S must be positive".into()));
        }
        if !(self.lambda_fr >= 0.0) || !self.theta.is_finite() {
            return Err(Error::InvalidInput("pipe friction must be non-negative".into()));
        }
        if self.segments == 0 {
            return Err(Error::InvalidInput("pipe needs at least one segment".into()));
        }
        Ok(())
    }

    /// `kappa = R_s T0 / S`.
    pub fn kappa(&self, gs: &GasState) -> f64 {
        gs.r_s * gs.t0 / self.area
    }
}

/// Gas constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasState {
    /// Specific gas constant [J/(kg K)].
    #[serde(rename = "R_s")]
    pub r_s: f64,
    /// Temperature [K].
    #[serde(rename = "T0")]
    pub t0: f64,
    /// Compressibility coefficient [1/Pa].
    pub alpha: f64,
}

impl GasState {
    /// Methane-like gas at 15 °C.
    pub fn natural_gas() -> Self {
        GasState {
            r_s: 518.28,
            t0: 288.15,
            alpha: -1.5e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_s > 0.0 && self.t0 > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput("R_s and T0 must be positive".into()));
        }
        Ok(())
    }

    pub fn z(&self, p: f64) -> f64 {
        1.0 + self.alpha * p
    }

    /// `p / z(p)`, NaN outside the domain.
    pub fn phi(&self, p: f64) -> f64 {
        let z = self.z(p);
        if z > 0.0 {
            p / z
        } else {
            f64::NAN
        }
    }

    /// `phi'(p) = 1 / z(p)^2`.
    pub fn dphi(&self, p: f64) -> f64 {
        let z = self.z(p);
        if z > 0.0 {
            1.0 / (z * z)
        } else {
            f64::NAN
        }
    }

    /// Mass density from `phi(p) = R_s T0 rho`.
    pub fn density(&self, p: f64) -> f64 {
        self.phi(p) / (self.r_s * self.t0)
    }
}

/// `(z, phi)` at pressure `p`.
pub fn equation_of_state(gs: &GasState, p: f64) -> Result<(f64, f64)> {
    let z = gs.z(p);
    if !(z > 0.0) {
        return Err(Error::StateEquationDomain { p });
    }
    Ok((z, p / z))
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Boundary data as a function of time.
#[derive(Clone)]
pub enum TimeSeries {
    Constant(f64),
    /// Breakpoints `(t, v)` sorted by `t`; constant outside the range.
    PiecewiseLinear(Vec<(f64, f64)>),
    Function(ScalarFn),
}

impl std::fmt::Debug for TimeSeries {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TimeSeries::Constant(v) => write!(fm, "Constant({v})"),
            TimeSeries::PiecewiseLinear(p) => write!(fm, "PiecewiseLinear({p:?})"),
            TimeSeries::Function(_) => write!(fm, "Function"),
        }
    }
}

impl TimeSeries {
    pub fn function<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        TimeSeries::Function(Arc::new(f))
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeSeries::Constant(v) => *v,
            TimeSeries::Function(f) => f(t),
            TimeSeries::PiecewiseLinear(pts) => {
                let Some(first) = pts.first() else { return 0.0 };
                if t <= first.0 {
                    return first.1;
                }
                for w in pts.windows(2) {
                    let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                    if t <= t1 {
                        return if t1 > t0 { v0 + (v1 - v0) * (t - t0) / (t1 - t0) } else { v1 };
                    }
                }
                pts.last().unwrap().1
            }
        }
    }

    fn scaled(self, c: f64) -> Self {
        match self {
            TimeSeries::Constant(v) => TimeSeries::Constant(c * v),
            TimeSeries::PiecewiseLinear(p) => TimeSeries::PiecewiseLinear(p.into_iter().map(|(t, v)| (t, c * v)).collect()),
            TimeSeries::Function(f) => TimeSeries::Function(Arc::new(move |t| c * f(t))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum SeriesRepr {
    Constant(f64),
    Points(Vec<(f64, f64)>),
}

impl From<SeriesRepr> for TimeSeries {
    fn from(r: SeriesRepr) -> Self {
        match r {
            SeriesRepr::Constant(v) => TimeSeries::Constant(v),
            SeriesRepr::Points(mut p) => {
                p.sort_by(|a, b| a.0.total_cmp(&b.0));
                TimeSeries::PiecewiseLinear(p)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum NodeKind {
    /// Pressure prescribed by `p_set(t)`.
    PressureSet(TimeSeries),
    /// Net withdrawal `q_set(t)` in the Kirchhoff balance.
    FlowSet(TimeSeries),
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Clone, Debug)]
pub struct ValveParams {
    pub mu: f64,
    /// Linear resistance `r`.
    pub resistance: f64,
    /// Opening in `[0, 1]`.
    pub opening: TimeSeries,
}

#[derive(Clone, Debug)]
pub struct RegulatorParams {
    pub mu: f64,
    pub gain: f64,
    /// Target pressure drop `p_l - p_r`.
    pub dp_set: TimeSeries,
}

#[derive(Clone, Debug)]
pub enum EdgeKind {
    Pipe(PipeParams),
    Valve(ValveParams),
    Regulator(RegulatorParams),
}

/// Edge oriented from `left` to `right` (node indices).
#[derive(Clone, Debug)]
pub struct Edge {
    pub id: String,
    pub left: usize,
    pub right: usize,
    pub kind: EdgeKind,
}

pub type CouplingFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Extra algebraic rows `0 = f(t, arg)`.
#[derive(Clone)]
pub struct Coupling {
    pub rows: usize,
    pub f: CouplingFn,
}

impl std::fmt::Debug for Coupling {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(fm, "Coupling({} rows)", self.rows)
    }
}

#[derive(Clone, Debug, Default)]
pub struct GasNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// `f_pb(p)` over the flow-set pressures.
    pub f_pb: Option<Coupling>,
    /// `f_qb` over `(q_pip_l, q_pip_r, q_val, q_reg)`.
    pub f_qb: Option<Coupling>,
}

/// Location of an edge endpoint in the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum End {
    /// Index into the flow-set nodes.
    Free(usize),
    /// Node index of a pressure node.
    Fixed(usize),
}

impl GasNetwork {
    pub fn add_node(&mut self, id: impl Into<String>, kind: NodeKind) -> usize {
        self.nodes.push(Node { id: id.into(), kind });
        self.nodes.len() - 1
    }

    pub fn add_edge(&mut self, id: impl Into<String>, left: usize, right: usize, kind: EdgeKind) -> usize {
        self.edges.push(Edge {
            id: id.into(),
            left,
            right,
            kind,
        });
        self.edges.len() - 1
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    /// Node indices of the flow-set nodes in state order.
    pub fn qset_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].kind, NodeKind::FlowSet(_)))
            .collect()
    }

    pub fn pset_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].kind, NodeKind::PressureSet(_)))
            .collect()
    }

    fn edges_of(&self, pred: impl Fn(&EdgeKind) -> bool) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| pred(&self.edges[i].kind)).collect()
    }

    pub fn pipes(&self) -> Vec<usize> {
        self.edges_of(|k| matches!(k, EdgeKind::Pipe(_)))
    }

    pub fn valves(&self) -> Vec<usize> {
        self.edges_of(|k| matches!(k, EdgeKind::Valve(_)))
    }

    pub fn regulators(&self) -> Vec<usize> {
        self.edges_of(|k| matches!(k, EdgeKind::Regulator(_)))
    }

    /// Unique ids, valid endpoints, no self-loops, valid parameters, connected.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate node id {}", n.id)));
            }
        }
        for e in &self.edges {
            if e.left >= self.nodes.len() || e.right >= self.nodes.len() {
                return Err(Error::InvalidInput(format!("edge {} references a missing node", e.id)));
            }
            if e.left == e.right {
                return Err(Error::InvalidInput(format!("edge {} is a self-loop", e.id)));
            }
            match &e.kind {
                EdgeKind::Pipe(pp) => pp.validate()?,
                EdgeKind::Valve(v) if !(v.mu >= 0.0 && v.resistance > 0.0) => {
                    return Err(Error::InvalidInput(format!("valve {} needs mu >= 0, r > 0", e.id)));
                }
                EdgeKind::Regulator(r) if !(r.mu >= 0.0) => {
                    return Err(Error::InvalidInput(format!("regulator {} needs mu >= 0", e.id)));
                }
                _ => {}
            }
        }
        if self.nodes.is_empty() {
            return Err(Error::InvalidInput("network has no nodes".into()));
        }
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.left].push(e.right);
            adj[e.right].push(e.left);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DisconnectedGraph);
        }
        Ok(())
    }

    fn end(&self, node: usize, qpos: &HashMap<usize, usize>) -> End {
        match qpos.get(&node) {
            Some(&k) => End::Free(k),
            None => End::Fixed(node),
        }
    }

    fn p_set(&self, node: usize, t: f64) -> f64 {
        match &self.nodes[node].kind {
            NodeKind::PressureSet(s) => s.eval(t),
            NodeKind::FlowSet(_) => f64::NAN,
        }
    }
}

/// Incidence matrices over the flow-set nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Incidence {
    pub pip_l: DMatrix<f64>,
    pub pip_r: DMatrix<f64>,
    pub val: DMatrix<f64>,
    pub reg: DMatrix<f64>,
}

pub fn incidence_matrices(net: &GasNetwork) -> Incidence {
    let q = net.qset_nodes();
    let fill = |edges: &[usize], left: f64, right: f64| {
        DMatrix::from_fn(q.len(), edges.len(), |i, j| {
            let e = &net.edges[edges[j]];
            if e.left == q[i] {
                left
            } else if e.right == q[i] {
                right
            } else {
                0.0
            }
        })
    };
    Incidence {
        pip_l: fill(&net.pipes(), -1.0, 0.0),
        pip_r: fill(&net.pipes(), 0.0, 1.0),
        val: fill(&net.valves(), -1.0, 1.0),
        reg: fill(&net.regulators(), -1.0, 1.0),
    }
}

fn split_pipe(out: &mut GasNetwork, e: &Edge, pp: &PipeParams, k: usize) {
    if k <= 1 {
        let mut pp = pp.clone();
        pp.segments = 1;
        out.edges.push(Edge {
            kind: EdgeKind::Pipe(pp),
            ..e.clone()
        });
        return;
    }
    let piece = pp.length / k as f64;
    let mut prev = e.left;
    for s in 0..k {
        let right = if s + 1 == k {
            e.right
        } else {
            out.add_node(format!("{}#{}", e.id, s + 1), NodeKind::FlowSet(TimeSeries::Constant(0.0)))
        };
        let mut sub = pp.clone();
        sub.segments = 1;
        sub.length = if s + 1 == k { pp.length - piece * (k - 1) as f64 } else { piece };
        out.add_edge(format!("{}/{}", e.id, s + 1), prev, right, EdgeKind::Pipe(sub));
        prev = right;
    }
}

/// Split every pipe into `ceil(L / dx_max)` equal subpipes joined by
/// artificial junctions with zero withdrawal.
pub fn segment_pipes(net: &GasNetwork, dx_max: f64) -> Result<GasNetwork> {
    if !(dx_max > 0.0) {
        return Err(Error::InvalidInput("dx_max must be positive".into()));
    }
    let mut out = GasNetwork {
        nodes: net.nodes.clone(),
        edges: Vec::new(),
        f_pb: net.f_pb.clone(),
        f_qb: net.f_qb.clone(),
    };
    for e in &net.edges {
        match &e.kind {
            EdgeKind::Pipe(pp) => {
                let k = ((pp.length / dx_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
                split_pipe(&mut out, e, pp, k);
            }
            _ => out.edges.push(e.clone()),
        }
    }
    Ok(out)
}

/// Expand pipes whose `segments` field exceeds one.
pub fn expand_segments(net: &GasNetwork) -> GasNetwork {
    let mut out = GasNetwork {
        nodes: net.nodes.clone(),
        edges: Vec::new(),
        f_pb: net.f_pb.clone(),
        f_qb: net.f_qb.clone(),
    };
    for e in &net.edges {
        match &e.kind {
            EdgeKind::Pipe(pp) => split_pipe(&mut out, e, pp, pp.segments),
            _ => out.edges.push(e.clone()),
        }
    }
    out
}

/// Discretized pipe `x = (rho_r, q_l, p_r)` with `q = rho v`.
pub fn build_single_pipe(pp: &PipeParams, gs: &GasState, q_r: TimeSeries, p_l: TimeSeries) -> Result<SemilinearDAE> {
    pp.validate()?;
    gs.validate()?;
    let l = pp.length;
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let b = DMatrix::from_row_slice(
        3,
        3,
        &[0.0, -1.0 / l, 0.0, G * pp.theta.sin(), 0.0, 1.0 / l, 0.0, 0.0, 1.0],
    );
    let (lam, d) = (pp.lambda_fr, pp.diameter);
    let gs = *gs;
    let rt = gs.r_s * gs.t0;
    let f = move |t: f64, x: &DVector<f64>| {
        let (rho, q, p) = (x[0], x[1], x[2]);
        DVector::from_vec(vec![
            -q_r.eval(t) / l,
            p_l.eval(t) / l - 0.5 * lam / d * q * q / rho,
            rt * rho * gs.z(p),
        ])
    };
    let jac = move |_t: f64, x: &DVector<f64>| {
        let (rho, q, p) = (x[0], x[1], x[2]);
        DMatrix::from_row_slice(
            3,
            3,
            &[
                0.0,
                0.0,
                0.0,
                0.5 * lam / d * q * q / (rho * rho),
                -lam / d * q / rho,
                0.0,
                rt * gs.z(p),
                0.0,
                rt * rho * gs.alpha,
            ],
        )
    };
    Ok(SemilinearDAE::new(Pencil::new(a, b)?, f).with_jacobian(jac))
}

/// The single pipe with the outflow `q_r` left unspecified and appended to the
/// state, `x = (rho_r, q_l, p_r, q_r)`: three equations, four unknowns.
pub fn build_single_pipe_free_outflow(pp: &PipeParams, gs: &GasState, p_l: TimeSeries) -> Result<SemilinearDAE> {
    let closed = build_single_pipe(pp, gs, TimeSeries::Constant(0.0), p_l)?;
    let mut a = DMatrix::zeros(3, 4);
    a.view_mut((0, 0), (3, 3)).copy_from(closed.pencil.a());
    let mut b = DMatrix::zeros(3, 4);
    b.view_mut((0, 0), (3, 3)).copy_from(closed.pencil.b());
    b[(0, 3)] = 1.0 / pp.length;
    let f = move |t: f64, x: &DVector<f64>| closed.f(t, &x.rows(0, 3).into_owned());
    Ok(SemilinearDAE::new(Pencil::new(a, b)?, f))
}

/// How the state equation `rho = phi(p)` enters the pencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EosForm {
    /// `B` row `(I, 0, .., 0)` and `f = phi(p)`, the literal block layout.
    /// The linear pencil then has index 2 whenever pipes are present.
    #[default]
    Literal,
    /// `B` row `(I, 0, .., -I)` and `f = phi(p) - p`. Same equations, and the
    /// pencil has index 1 for tree networks oriented away from pressure nodes.
    Split,
}

/// Offsets of the state and row blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub nq: usize,
    pub np: usize,
    pub nv: usize,
    pub nr: usize,
    pub n_pb: usize,
    pub n_qb: usize,
}

impl Layout {
    pub fn n(&self) -> usize {
        2 * self.nq + 2 * self.np + self.nv + self.nr
    }

    pub fn m(&self) -> usize {
        2 * self.np + self.nv + self.nr + 2 * self.nq + self.n_pb + self.n_qb
    }

    pub fn rho(&self) -> usize {
        0
    }

    pub fn q_l(&self) -> usize {
        self.nq
    }

    pub fn q_val(&self) -> usize {
        self.nq + self.np
    }

    pub fn q_reg(&self) -> usize {
        self.q_val() + self.nv
    }

    pub fn q_r(&self) -> usize {
        self.q_reg() + self.nr
    }

    pub fn p(&self) -> usize {
        self.q_r() + self.np
    }

    pub fn row_momentum(&self) -> usize {
        self.np
    }

    pub fn row_valve(&self) -> usize {
        2 * self.np
    }

    pub fn row_regulator(&self) -> usize {
        self.row_valve() + self.nv
    }

    pub fn row_kirchhoff(&self) -> usize {
        self.row_regulator() + self.nr
    }

    pub fn row_eos(&self) -> usize {
        self.row_kirchhoff() + self.nq
    }

    pub fn row_pb(&self) -> usize {
        self.row_eos() + self.nq
    }

    pub fn row_qb(&self) -> usize {
        self.row_pb() + self.n_pb
    }
}

struct PipeTerm {
    params: PipeParams,
    left: End,
    right: End,
}

struct ValveTerm {
    params: ValveParams,
    left: End,
    right: End,
}

struct RegTerm {
    params: RegulatorParams,
    left: End,
    right: End,
}

/// Everything `f` and its Jacobian need.
struct Assembly {
    net: GasNetwork,
    gas: GasState,
    eos: EosForm,
    layout: Layout,
    qset: Vec<usize>,
    pipes: Vec<PipeTerm>,
    valves: Vec<ValveTerm>,
    regs: Vec<RegTerm>,
}

impl Assembly {
    fn pressure(&self, end: End, t: f64, x: &DVector<f64>) -> f64 {
        match end {
            End::Free(k) => x[self.layout.p() + k],
            End::Fixed(node) => self.net.p_set(node, t),
        }
    }

    fn flows(&self, x: &DVector<f64>) -> DVector<f64> {
        let ly = &self.layout;
        let mut v = Vec::with_capacity(2 * ly.np + ly.nv + ly.nr);
        v.extend(x.rows(ly.q_l(), ly.np).iter());
        v.extend(x.rows(ly.q_r(), ly.np).iter());
        v.extend(x.rows(ly.q_val(), ly.nv).iter());
        v.extend(x.rows(ly.q_reg(), ly.nr).iter());
        DVector::from_vec(v)
    }

    fn f(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let ly = &self.layout;
        let rt = self.gas.r_s * self.gas.t0;
        let mut out = DVector::zeros(ly.m());
        for (j, pt) in self.pipes.iter().enumerate() {
            let pp = &pt.params;
            let q = x[ly.q_l() + j];
            let rho = match pt.right {
                End::Free(k) => x[ly.rho() + k] / rt,
                End::Fixed(node) => self.gas.density(self.net.p_set(node, t)),
            };
            let f_pip = pp.area * G * pp.theta.sin() * rho
                + pp.lambda_fr * q * q.abs() / (2.0 * pp.diameter * pp.area * rho);
            let dp = pp.area / pp.length;
            let mut v = -f_pip;
            if let End::Fixed(node) = pt.right {
                v -= dp * self.net.p_set(node, t);
            }
            if let End::Fixed(node) = pt.left {
                v += dp * self.net.p_set(node, t);
            }
            out[ly.row_momentum() + j] = v;
        }
        for (j, vt) in self.valves.iter().enumerate() {
            let q = x[ly.q_val() + j];
            let drop = self.pressure(vt.left, t, x) - self.pressure(vt.right, t, x);
            out[ly.row_valve() + j] = vt.params.opening.eval(t) * drop - vt.params.resistance * q;
        }
        for (j, rt_) in self.regs.iter().enumerate() {
            let drop = self.pressure(rt_.left, t, x) - self.pressure(rt_.right, t, x);
            out[ly.row_regulator() + j] = rt_.params.gain * (rt_.params.dp_set.eval(t) - drop);
        }
        for (k, &node) in self.qset.iter().enumerate() {
            if let NodeKind::FlowSet(s) = &self.net.nodes[node].kind {
                out[ly.row_kirchhoff() + k] = s.eval(t);
            }
            let p = x[ly.p() + k];
            out[ly.row_eos() + k] = match self.eos {
                EosForm::Literal => self.gas.phi(p),
                EosForm::Split => self.gas.phi(p) - p,
            };
        }
        if let Some(c) = &self.net.f_pb {
            let v = (c.f)(t, &x.rows(ly.p(), ly.nq).into_owned());
            out.rows_mut(ly.row_pb(), c.rows).copy_from(&v);
        }
        if let Some(c) = &self.net.f_qb {
            let v = (c.f)(t, &self.flows(x));
            out.rows_mut(ly.row_qb(), c.rows).copy_from(&v);
        }
        out
    }

    fn jacobian(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        let ly = &self.layout;
        let rt = self.gas.r_s * self.gas.t0;
        let mut jac = DMatrix::zeros(ly.m(), ly.n());
        for (j, pt) in self.pipes.iter().enumerate() {
            let pp = &pt.params;
            let row = ly.row_momentum() + j;
            let q = x[ly.q_l() + j];
            let rho = match pt.right {
                End::Free(k) => x[ly.rho() + k] / rt,
                End::Fixed(node) => self.gas.density(self.net.p_set(node, t)),
            };
            let c = pp.lambda_fr / (2.0 * pp.diameter * pp.area);
            jac[(row, ly.q_l() + j)] = -2.0 * c * q.abs() / rho;
            if let End::Free(k) = pt.right {
                let d_rho = pp.area * G * pp.theta.sin() - c * q * q.abs() / (rho * rho);
                jac[(row, ly.rho() + k)] = -d_rho / rt;
            }
        }
        for (j, vt) in self.valves.iter().enumerate() {
            let row = ly.row_valve() + j;
            let open = vt.params.opening.eval(t);
            jac[(row, ly.q_val() + j)] = -vt.params.resistance;
            if let End::Free(k) = vt.left {
                jac[(row, ly.p() + k)] += open;
            }
            if let End::Free(k) = vt.right {
                jac[(row, ly.p() + k)] -= open;
            }
        }
        for (j, rg) in self.regs.iter().enumerate() {
            let row = ly.row_regulator() + j;
            if let End::Free(k) = rg.left {
                jac[(row, ly.p() + k)] -= rg.params.gain;
            }
            if let End::Free(k) = rg.right {
                jac[(row, ly.p() + k)] += rg.params.gain;
            }
        }
        for k in 0..ly.nq {
            let d = self.gas.dphi(x[ly.p() + k]);
            jac[(ly.row_eos() + k, ly.p() + k)] = match self.eos {
                EosForm::Literal => d,
                EosForm::Split => d - 1.0,
            };
        }
        if ly.n_pb + ly.n_qb > 0 {
            // Coupling rows by central differences.
            let rows = ly.row_pb()..ly.m();
            for c in 0..ly.n() {
                let h = f64::EPSILON.cbrt() * (1.0 + x[c].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let (fp, fm) = (self.f(t, &xp), self.f(t, &xm));
                for r in rows.clone() {
                    jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
        }
        jac
    }
}

/// An assembled network DAE.
#[derive(Clone)]
pub struct GasModel {
    pub dae: SemilinearDAE,
    pub layout: Layout,
    /// Network after segment expansion.
    pub network: GasNetwork,
    pub gas: GasState,
    pub eos: EosForm,
    pub incidence: Incidence,
}

impl std::fmt::Debug for GasModel {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("GasModel")
            .field("layout", &self.layout)
            .field("eos", &self.eos)
            .finish()
    }
}

/// Network DAE with the literal state-equation row.
pub fn build_network(net: &GasNetwork, gs: &GasState) -> Result<GasModel> {
    build_network_with(net, gs, EosForm::Literal)
}

pub fn build_network_with(net: &GasNetwork, gs: &GasState, eos: EosForm) -> Result<GasModel> {
    gs.validate()?;
    net.validate()?;
    let net = expand_segments(net);
    let qset = net.qset_nodes();
    let qpos: HashMap<usize, usize> = qset.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let (pipes, valves, regs) = (net.pipes(), net.valves(), net.regulators());
    let layout = Layout {
        nq: qset.len(),
        np: pipes.len(),
        nv: valves.len(),
        nr: regs.len(),
        n_pb: net.f_pb.as_ref().map_or(0, |c| c.rows),
        n_qb: net.f_qb.as_ref().map_or(0, |c| c.rows),
    };
    let inc = incidence_matrices(&net);
    let ly = layout;
    let (n, m) = (ly.n(), ly.m());
    let mut a = DMatrix::zeros(m, n);
    let mut b = DMatrix::zeros(m, n);

    let mut d_q = DMatrix::zeros(ly.np, ly.np);
    let mut d_p = DMatrix::zeros(ly.np, ly.np);
    let mut pipe_terms = Vec::new();
    for (j, &e) in pipes.iter().enumerate() {
        let edge = &net.edges[e];
        let EdgeKind::Pipe(pp) = &edge.kind else { unreachable!() };
        d_q[(j, j)] = pp.kappa(gs) / pp.length;
        d_p[(j, j)] = pp.area / pp.length;
        pipe_terms.push(PipeTerm {
            params: pp.clone(),
            left: net.end(edge.left, &qpos),
            right: net.end(edge.right, &qpos),
        });
    }
    let mut valve_terms = Vec::new();
    for (j, &e) in valves.iter().enumerate() {
        let edge = &net.edges[e];
        let EdgeKind::Valve(vp) = &edge.kind else { unreachable!() };
        a[(ly.row_valve() + j, ly.q_val() + j)] = vp.mu;
        valve_terms.push(ValveTerm {
            params: vp.clone(),
            left: net.end(edge.left, &qpos),
            right: net.end(edge.right, &qpos),
        });
    }
    let mut reg_terms = Vec::new();
    for (j, &e) in regs.iter().enumerate() {
        let edge = &net.edges[e];
        let EdgeKind::Regulator(rp) = &edge.kind else { unreachable!() };
        a[(ly.row_regulator() + j, ly.q_reg() + j)] = rp.mu;
        reg_terms.push(RegTerm {
            params: rp.clone(),
            left: net.end(edge.left, &qpos),
            right: net.end(edge.right, &qpos),
        });
    }
    for node in net.pset_nodes() {
        if let NodeKind::PressureSet(s) = &net.nodes[node].kind {
            if !s.eval(0.0).is_finite() {
                return Err(Error::MissingBoundaryData(net.nodes[node].id.clone()));
            }
        }
    }

    // Continuity rows.
    a.view_mut((0, ly.rho()), (ly.np, ly.nq)).copy_from(&inc.pip_r.transpose());
    b.view_mut((0, ly.q_l()), (ly.np, ly.np)).copy_from(&(-&d_q));
    b.view_mut((0, ly.q_r()), (ly.np, ly.np)).copy_from(&d_q);
    // Momentum rows.
    a.view_mut((ly.row_momentum(), ly.q_l()), (ly.np, ly.np))
        .copy_from(&DMatrix::identity(ly.np, ly.np));
    b.view_mut((ly.row_momentum(), ly.p()), (ly.np, ly.nq))
        .copy_from(&(&d_p * (inc.pip_r.transpose() + inc.pip_l.transpose())));
    // Kirchhoff rows.
    let rk = ly.row_kirchhoff();
    b.view_mut((rk, ly.q_l()), (ly.nq, ly.np)).copy_from(&inc.pip_l);
    b.view_mut((rk, ly.q_val()), (ly.nq, ly.nv)).copy_from(&inc.val);
    b.view_mut((rk, ly.q_reg()), (ly.nq, ly.nr)).copy_from(&inc.reg);
    b.view_mut((rk, ly.q_r()), (ly.nq, ly.np)).copy_from(&inc.pip_r);
    // State equation rows.
    b.view_mut((ly.row_eos(), ly.rho()), (ly.nq, ly.nq))
        .copy_from(&DMatrix::identity(ly.nq, ly.nq));
    if eos == EosForm::Split {
        b.view_mut((ly.row_eos(), ly.p()), (ly.nq, ly.nq))
            .copy_from(&(-DMatrix::identity(ly.nq, ly.nq)));
    }

    let asm = Arc::new(Assembly {
        net: net.clone(),
        gas: *gs,
        eos,
        layout,
        qset,
        pipes: pipe_terms,
        valves: valve_terms,
        regs: reg_terms,
    });
    let (fa, ja) = (asm.clone(), asm);
    let dae = SemilinearDAE::new(Pencil::new(a, b)?, move |t, x| fa.f(t, x)).with_jacobian(move |t, x| ja.jacobian(t, x));
    Ok(GasModel {
        dae,
        layout,
        network: net,
        gas: *gs,
        eos,
        incidence: inc,
    })
}

/// Largest Kirchhoff residual seen along a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KirchhoffReport {
    pub max_residual: f64,
    pub at_time: f64,
    pub steps: usize,
}

impl GasModel {
    /// `A_pip_l q_l + A_val q_val + A_reg q_reg + A_pip_r q_r - q_set(t)`.
    pub fn kirchhoff_residual(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let ly = &self.layout;
        let rows = ly.row_kirchhoff()..ly.row_kirchhoff() + ly.nq;
        let bx = self.dae.pencil.b() * x;
        let f = self.dae.f(t, x);
        DVector::from_iterator(ly.nq, rows.map(|r| bx[r] - f[r]))
    }

    /// Initial guess: pressure `p0` at every flow node, `rho = phi(p0)` and
    /// minimum-norm flows satisfying Kirchhoff with `q_l = q_r`.
    pub fn initial_guess(&self, t: f64, p0: f64) -> DVector<f64> {
        let ly = &self.layout;
        let inc = &self.incidence;
        let mut x = DVector::zeros(ly.n());
        for k in 0..ly.nq {
            x[ly.rho() + k] = self.gas.phi(p0);
            x[ly.p() + k] = p0;
        }
        let k = linalg::hcat(&[&(&inc.pip_l + &inc.pip_r), &inc.val, &inc.reg]);
        let qset = DVector::from_iterator(
            ly.nq,
            self.network.qset_nodes().into_iter().map(|node| match &self.network.nodes[node].kind {
                NodeKind::FlowSet(s) => s.eval(t),
                NodeKind::PressureSet(_) => 0.0,
            }),
        );
        let q = linalg::lstsq_min_norm(&k, &qset, 1e-12);
        for j in 0..ly.np {
            x[ly.q_l() + j] = q[j];
            x[ly.q_r() + j] = q[j];
        }
        for j in 0..ly.nv {
            x[ly.q_val() + j] = q[ly.np + j];
        }
        for j in 0..ly.nr {
            x[ly.q_reg() + j] = q[ly.np + ly.nv + j];
        }
        x
    }

    /// Stationary point `B x = f(t, x)` by Newton from `guess`.
    pub fn steady_state(&self, t: f64, guess: &DVector<f64>) -> Result<DVector<f64>> {
        let (m, n) = (self.layout.m(), self.layout.n());
        if m != n {
            return Err(Error::InvalidInput("steady state needs as many equations as unknowns".into()));
        }
        let b = self.dae.pencil.b();
        let res = |x: &DVector<f64>| b * x - self.dae.f(t, x);
        let mut x = guess.clone();
        let mut r = res(&x);
        for it in 0..100 {
            let jac = b - self.dae.df_dx(t, &x);
            let lu = jac.clone().lu();
            let Some(dx) = lu.solve(&(-&r)) else {
                return Err(Error::SingularPhi {
                    sigma_min: linalg::sigma_min(&jac),
                    iterate: x,
                });
            };
            // Full steps; the residual mixes units, so no norm-based line search.
            let mut step = 1.0;
            let mut xn = &x + &dx;
            while !res(&xn).iter().all(|v| v.is_finite()) && step > 1e-6 {
                step *= 0.5;
                xn = &x + &dx * step;
            }
            x = xn;
            r = res(&x);
            if dx.iter().zip(x.iter()).all(|(d, v)| d.abs() <= 1e-12 * (1.0 + v.abs())) {
                return Ok(x);
            }
            if it == 99 {
                break;
            }
        }
        Err(Error::NoConvergence {
            iterations: 100,
            residual: r.norm(),
            iterate: x,
        })
    }

    /// Decompose the pencil and build the reduced system.
    pub fn reduced(&self, rank_tol: f64) -> Result<ReducedSystem> {
        let dec = decompose(&self.dae.pencil, rank_tol)?;
        build_reduced_system(self.dae.clone(), dec)
    }

    /// Integrate from a consistent start, completing `x0` on the manifold
    /// first, and track the Kirchhoff residual at every accepted step.
    pub fn simulate(
        &self,
        rs: &ReducedSystem,
        t0: f64,
        x0: &DVector<f64>,
        t_end: f64,
        opts: &StepOptions,
    ) -> Result<(Trajectory, KirchhoffReport)> {
        let c = rs.split(x0);
        let x0 = rs.consistent_initialization_from(t0, &c.x_s1, &c.x_s2, &c.x_p1, &c.x_p2, &opts.newton)?;
        let s2 = &rs.dec.s2 * &x0;
        let phi = FreeComponent::new("constant", move |_| s2.clone());
        let traj = integrate(rs, t0, &x0, &phi, t_end, opts)?;
        let mut rep = KirchhoffReport {
            max_residual: 0.0,
            at_time: t0,
            steps: traj.times.len(),
        };
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let r = self.kirchhoff_residual(*t, x).amax();
            if r > rep.max_residual {
                rep.max_residual = r;
                rep.at_time = *t;
            }
        }
        Ok((traj, rep))
    }
}

/// Newton settings suited to SI-scaled gas states (pressures near 1e6 Pa).
pub fn gas_newton_options() -> NewtonOptions {
    NewtonOptions {
        tol: 1e-10,
        rel_tol: 1e-13,
        max_iter: 50,
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UnitsFile {
    #[serde(default)]
    length: Option<String>,
    #[serde(default)]
    pressure: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: String,
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    p_set: Option<SeriesRepr>,
    #[serde(default)]
    q_set: Option<SeriesRepr>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeFile {
    id: String,
    #[serde(rename = "type")]
    kind: String,
    from: String,
    to: String,
    #[serde(default)]
    params: serde_json::Map<String, serde_json::Value>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundaryFile {
    #[serde(default)]
    p_set: HashMap<String, SeriesRepr>,
    #[serde(default)]
    q_set: HashMap<String, SeriesRepr>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    units: UnitsFile,
    gas: GasState,
    nodes: Vec<NodeFile>,
    edges: Vec<EdgeFile>,
    #[serde(default)]
    boundary: BoundaryFile,
    #[serde(default)]
    dx_max: Option<f64>,
    #[serde(default)]
    horizon: Option<f64>,
}

/// A network read from a file, converted to SI.
#[derive(Clone, Debug)]
pub struct LoadedNetwork {
    pub description: Option<String>,
    pub network: GasNetwork,
    pub gas: GasState,
    /// Maximal segment length [m], if the file requests segmentation.
    pub dx_max: Option<f64>,
    /// Suggested horizon [s].
    pub horizon: Option<f64>,
}

fn unit_factor(name: Option<&str>, table: &[(&str, f64)], what: &str) -> Result<f64> {
    let Some(name) = name else { return Ok(1.0) };
    table
        .iter()
        .find(|(u, _)| *u == name)
        .map(|(_, f)| *f)
        .ok_or_else(|| Error::InvalidInput(format!("unknown {what} unit {name}")))
}

fn param(map: &serde_json::Map<String, serde_json::Value>, key: &str, edge: &str) -> Result<Option<f64>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::InvalidInput(format!("edge {edge}: {key} must be a number"))),
    }
}

fn required(map: &serde_json::Map<String, serde_json::Value>, key: &str, edge: &str) -> Result<f64> {
    param(map, key, edge)?.ok_or_else(|| Error::InvalidInput(format!("edge {edge}: missing {key}")))
}

fn series_param(map: &serde_json::Map<String, serde_json::Value>, key: &str, default: f64) -> Result<TimeSeries> {
    match map.get(key) {
        None => Ok(TimeSeries::Constant(default)),
        Some(v) => Ok(serde_json::from_value::<SeriesRepr>(v.clone())?.into()),
    }
}

/// Parse the JSON network format.
///
/// Top-level keys: `gas` (`R_s`, `T0`, `alpha` per pressure unit), `nodes`
/// (`id`, `type` = `pressure` | `flow`, optional `p_set` / `q_set`), `edges`
/// (`id`, `type` = `pipe` | `valve` | `regulator`, `from`, `to`, `params`),
/// `boundary` (`p_set` / `q_set` maps from node id to series) and the
/// optional `units` (`length`: `m` | `km`; `pressure`: `Pa` | `kPa` | `bar`
/// | `MPa`), `dx_max`, `horizon`, `description`. A series is a number or a
/// list of `[t, value]` breakpoints. Times are in seconds and flows in kg/s.
pub fn parse_network(text: &str) -> Result<LoadedNetwork> {
    let file: NetworkFile = serde_json::from_str(text)?;
    let lf = unit_factor(file.units.length.as_deref(), &[("m", 1.0), ("km", 1e3)], "length")?;
    let pf = unit_factor(
        file.units.pressure.as_deref(),
        &[("Pa", 1.0), ("kPa", 1e3), ("bar", 1e5), ("MPa", 1e6)],
        "pressure",
    )?;
    let mut gas = file.gas;
    gas.alpha /= pf;
    let mut net = GasNetwork::default();
    let mut boundary = file.boundary;
    for n in &file.nodes {
        let kind = match n.kind.as_str() {
            "pressure" => {
                let s = boundary
                    .p_set
                    .remove(&n.id)
                    .or_else(|| n.p_set.clone())
                    .ok_or_else(|| Error::MissingBoundaryData(format!("p_set for node {}", n.id)))?;
                NodeKind::PressureSet(TimeSeries::from(s).scaled(pf))
            }
            "flow" => {
                let s = boundary
                    .q_set
                    .remove(&n.id)
                    .or_else(|| n.q_set.clone())
                    .unwrap_or(SeriesRepr::Constant(0.0));
                NodeKind::FlowSet(s.into())
            }
            other => return Err(Error::InvalidInput(format!("node {}: unknown type {other}", n.id))),
        };
        if net.node_index(&n.id).is_some() {
            return Err(Error::InvalidInput(format!("duplicate node id {}", n.id)));
        }
        net.add_node(n.id.clone(), kind);
    }
    if let Some(id) = boundary.p_set.keys().chain(boundary.q_set.keys()).next() {
        return Err(Error::InvalidInput(format!("boundary data for unknown node {id}")));
    }
    for e in &file.edges {
        let left = net
            .node_index(&e.from)
            .ok_or_else(|| Error::InvalidInput(format!("edge {}: unknown node {}", e.id, e.from)))?;
        let right = net
            .node_index(&e.to)
            .ok_or_else(|| Error::InvalidInput(format!("edge {}: unknown node {}", e.id, e.to)))?;
        let p = &e.params;
        let kind = match e.kind.as_str() {
            "pipe" => {
                let length = required(p, "L", &e.id)? * lf;
                let diameter = required(p, "D", &e.id)?;
                let mut pp = PipeParams::new(
                    length,
                    diameter,
                    required(p, "lambda_fr", &e.id)?,
                    param(p, "theta", &e.id)?.unwrap_or(0.0),
                );
                if let Some(s) = param(p, "S", &e.id)? {
                    pp.area = s;
                }
                if let Some(k) = param(p, "segments", &e.id)? {
                    if k < 1.0 || k.fract() != 0.0 {
                        return Err(Error::InvalidInput(format!("edge {}: segments must be a positive integer", e.id)));
                    }
                    pp.segments = k as usize;
                }
                EdgeKind::Pipe(pp)
            }
            "valve" => EdgeKind::Valve(ValveParams {
                mu: param(p, "mu", &e.id)?.unwrap_or(0.0),
                resistance: param(p, "resistance", &e.id)?.unwrap_or(1.0),
                opening: series_param(p, "open", 1.0)?,
            }),
            "regulator" => EdgeKind::Regulator(RegulatorParams {
                mu: param(p, "mu", &e.id)?.unwrap_or(0.0),
                gain: param(p, "gain", &e.id)?.unwrap_or(1.0),
                dp_set: series_param(p, "dp_set", 0.0)?.scaled(pf),
            }),
            other => return Err(Error::InvalidInput(format!("edge {}: unknown type {other}", e.id))),
        };
        net.add_edge(e.id.clone(), left, right, kind);
    }
    net.validate()?;
    Ok(LoadedNetwork {
        description: file.description,
        network: net,
        gas,
        dx_max: file.dx_max.map(|d| d * lf),
        horizon: file.horizon,
    })
}

pub fn load_network(path: impl AsRef<Path>) -> Result<LoadedNetwork> {
    parse_network(&std::fs::read_to_string(path)?)
}

/// Golden network files shipped with the crate.
pub const SINGLE_PIPE_JSON: &str = include_str!("../fixtures/single-pipe.json");
pub const Y_NETWORK_JSON: &str = include_str!("../fixtures/y-network.json");
