use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use daekit::decomp::{decompose, validate_decomposition};
use daekit::gasnet::{
    build_network_with, gas_newton_options, load_network, parse_network, segment_pipes, EosForm, LoadedNetwork,
    NodeKind, SINGLE_PIPE_JSON, Y_NETWORK_JSON,
};
use daekit::integrate::{integrate, StepOptions, TrajStatus, Trajectory};
use daekit::matio::{format_matrix, parse_matrix};
use daekit::pencil::{pencil_rank, Pencil};
use daekit::qualitative::{classify_dae, ClassifyOptions, ComparisonInequality, ManifoldSampler, QuadraticLyapunov};
use daekit::reduce::{NewtonOptions, DEFAULT_CONSISTENCY_TOL};
use log::info;
use nalgebra::DVector;

use crate::error::{code, read_file, CliError, Result};
use crate::expr::{Expr, Vars};
use crate::input::load_problem;

/// Values of the shared flags after validation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub rank_tol: f64,
    pub newton_tol: Option<f64>,
    pub constraint_tol: f64,
    pub atol: f64,
    pub rtol: f64,
    pub horizon: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let tols = [
            ("--tol-rank", Some(self.rank_tol)),
            ("--tol-newton", self.newton_tol),
            ("--tol-constraint", Some(self.constraint_tol)),
            ("--atol", Some(self.atol)),
            ("--rtol", Some(self.rtol)),
        ];
        for (flag, v) in tols {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Usage(format!("{flag} must be a positive number, got {v}")));
                }
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::Usage(format!("--horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }

    fn newton(&self, base: NewtonOptions) -> NewtonOptions {
        match self.newton_tol {
            Some(tol) => NewtonOptions { tol, ..base },
            None => base,
        }
    }

    fn step_options(&self, newton: NewtonOptions, sample_every: Option<f64>, h_max: Option<f64>) -> StepOptions {
        StepOptions {
            rtol: self.rtol,
            atol: self.atol,
            tol: newton.tol.max(DEFAULT_CONSISTENCY_TOL),
            constraint_tol: self.constraint_tol,
            newton,
            sample_every,
            h_max: h_max.unwrap_or(f64::INFINITY),
            ..StepOptions::default()
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let io = |path: &Path| {
            let p = path.display().to_string();
            move |source| CliError::Io { path: p, source }
        };
        fs::create_dir_all(&self.out).map_err(io(&self.out))?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(io(&path))?;
        info!("wrote {}", path.display());
        Ok(path)
    }
}

fn positive(flag: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(v) if !(v > 0.0 && v.is_finite()) => Err(CliError::Usage(format!("{flag} must be positive, got {v}"))),
        _ => Ok(()),
    }
}

fn status_code(status: &TrajStatus) -> i32 {
    match status {
        TrajStatus::CompletedHorizon => code::OK,
        TrajStatus::EscapeDetected { .. } => code::ESCAPE,
        TrajStatus::ConstraintViolation { .. } => code::CONSTRAINT,
        TrajStatus::SolverFailure { .. } => code::FAILURE,
    }
}

fn report_status(traj: &Trajectory) {
    match &traj.status {
        TrajStatus::EscapeDetected { t_escape, bracket } => {
            eprintln!(
                "escape detected: tau in [{:.10}, {:.10}], estimate {t_escape:.10}",
                bracket.0, bracket.1
            );
        }
        TrajStatus::ConstraintViolation { t, r_ov } => {
            eprintln!("constraint violated at t = {t}: r_ov = {r_ov:.3e}");
        }
        TrajStatus::SolverFailure { t, reason } => eprintln!("solver failure at t = {t}: {reason}"),
        TrajStatus::CompletedHorizon => {}
    }
}

pub fn decompose_cmd(cfg: &RunConfig, a_path: &Path, b_path: &Path) -> Result<i32> {
    let a = parse_matrix(&read_file(a_path)?)?;
    let b = parse_matrix(&read_file(b_path)?)?;
    let pencil = Pencil::new(a, b)?;
    let rank = pencil_rank(&pencil, 8, cfg.rank_tol)?;
    let dec = decompose(&pencil, cfg.rank_tol)?;
    let rep = validate_decomposition(&pencil, &dec, 1e-9f64.max(cfg.rank_tol));

    let mut text = String::new();
    let _ = writeln!(text, "# x_dims {:?} y_dims {:?} index {}", dec.x_dims, dec.y_dims, dec.regular_index);
    let blocks = [
        ("S1", &dec.s1),
        ("S2", &dec.s2),
        ("P1", &dec.p1),
        ("P2", &dec.p2),
        ("F1", &dec.f1),
        ("F2", &dec.f2),
        ("Q1", &dec.q1),
        ("Q2", &dec.q2),
        ("Agen", &dec.a_gen),
        ("Bgen", &dec.b_gen),
        ("Bund", &dec.b_und),
        ("Bov", &dec.b_ov),
        ("A1", &dec.a_1),
        ("B1", &dec.b_1),
        ("B2", &dec.b_2),
        ("Agen^(-1)", &dec.a_gen_inv),
        ("A1^(-1)", &dec.a_1_inv),
        ("B2^(-1)", &dec.b_2_inv),
    ];
    for (name, m) in blocks {
        let _ = write!(text, "## {name}\n{}", format_matrix(m));
    }
    cfg.write("decomposition.txt", &text)?;
    cfg.write("validation.txt", &rep.render())?;

    let [b_, l, a_, d] = dec.x_dims;
    println!("rank={rank} dims=({b_},{l},{a_},{d}) index={}", dec.regular_index);
    println!(
        "validation: {} (max residual {:.3e})",
        if rep.passed() { "pass" } else { "fail" },
        rep.max_residual()
    );
    Ok(if rep.passed() { code::OK } else { code::FAILURE })
}

pub fn simulate_cmd(cfg: &RunConfig, target: &str, sample_every: Option<f64>, h_max: Option<f64>) -> Result<i32> {
    positive("--sample-every", sample_every)?;
    positive("--h-max", h_max)?;
    let newton = cfg.newton(NewtonOptions::default());
    let prob = load_problem(target, cfg.rank_tol, &newton)?;
    let horizon = cfg.horizon.unwrap_or(prob.horizon);
    let opts = cfg.step_options(newton, sample_every, h_max);
    info!("simulating {} on [{}, {}]", prob.name, prob.t0, prob.t0 + horizon);
    let traj = integrate(&prob.rs, prob.t0, &prob.x0, &prob.phi, prob.t0 + horizon, &opts)?;
    cfg.write("trajectory.csv", &traj.to_csv())?;
    let x = traj.last_state();
    let state: Vec<String> = x.iter().map(|v| format!("{v:.10e}")).collect();
    println!("status: {}", traj.status.label());
    println!("t_final={:.10} x=({})", traj.last_time(), state.join(", "));
    println!("steps: {} accepted, {} rejected", traj.accepted, traj.rejected);
    report_status(&traj);
    Ok(status_code(&traj.status))
}

fn parse_chi(spec: &str) -> Result<ComparisonInequality> {
    let mut k = None;
    let mut u = None;
    for part in spec.split(',') {
        let (key, val) = part
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--chi expects k=<expr>,U=<expr>, got {part:?}")))?;
        let e = Expr::parse(val).map_err(|e| CliError::Usage(format!("--chi {key}: {e}")))?;
        match key.trim() {
            "k" if e.max_x() == 0 && e.max_w() == 0 && !e.uses_v() => k = Some(e),
            "U" if e.max_x() == 0 && e.max_w() == 0 => u = Some(e),
            other => {
                return Err(CliError::Usage(format!(
                    "--chi: {other:?} is not k=<expr in t> or U=<expr in v>"
                )))
            }
        }
    }
    let (k, u) = match (k, u) {
        (Some(k), Some(u)) => (k, u),
        _ => return Err(CliError::Usage("--chi needs both k and U".into())),
    };
    Ok(ComparisonInequality::new(
        format!("k={},U={}", k.text().trim(), u.text().trim()),
        move |t| k.eval(&Vars { t, ..Vars::default() }),
        move |v| u.eval(&Vars { v, ..Vars::default() }),
    ))
}

fn parse_v(spec: &str, b: usize, a: usize) -> Result<QuadraticLyapunov> {
    let c = match spec.split_once(':') {
        None if spec == "quadratic" => 1.0,
        Some(("quadratic", c)) => c
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("--V quadratic:<c> needs a number, got {c:?}")))?,
        _ => return Err(CliError::Usage(format!("--V must be quadratic[:c], got {spec:?}"))),
    };
    if !(c > 0.0) {
        return Err(CliError::Usage("--V quadratic:<c> needs c > 0".into()));
    }
    Ok(QuadraticLyapunov::scaled_identity(c, b, a))
}

pub struct ClassifyArgs<'a> {
    pub target: &'a str,
    pub v: &'a str,
    pub chi: &'a str,
    pub samples: usize,
    pub range: f64,
    pub region: Option<&'a str>,
}

pub fn classify_cmd(cfg: &RunConfig, args: &ClassifyArgs<'_>) -> Result<i32> {
    positive("--range", Some(args.range))?;
    if args.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let chi = parse_chi(args.chi)?;
    let newton = cfg.newton(NewtonOptions::default());
    let prob = load_problem(args.target, cfg.rank_tol, &newton)?;
    let dims = prob.rs.dec.x_dims;
    let v = parse_v(args.v, dims[0], dims[2])?;
    let mut sampler = ManifoldSampler::new(args.range, args.samples, cfg.seed);
    sampler.newton = newton;
    sampler.tol = newton.tol;
    if let Some(r) = args.region {
        let e = Expr::parse(r).map_err(|e| CliError::Usage(format!("--region: {e}")))?;
        let k = dims[0] + dims[2];
        if e.max_x() > 0 || e.uses_v() || e.uses_t() || e.max_w() > k {
            return Err(CliError::Usage(format!(
                "--region may only use the free coordinates w1..w{k} and constants"
            )));
        }
        sampler.omega_region = Some(Arc::new(move |w: &DVector<f64>| {
            e.eval(&Vars {
                w: w.as_slice(),
                ..Vars::default()
            }) >= 0.0
        }));
    }
    info!("classifying {} with {} samples", prob.name, args.samples);
    let verdict = classify_dae(&prob.rs, Some(&v), &chi, &sampler, &ClassifyOptions::default())?;
    let text = verdict.render();
    cfg.write("verdict.txt", &text)?;
    print!("{text}");
    Ok(code::OK)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EosArg {
    Split,
    Literal,
}

pub struct GasArgs<'a> {
    pub target: &'a str,
    pub dx_max: Option<f64>,
    pub eos: EosArg,
    pub h_max: Option<f64>,
    pub sample_every: Option<f64>,
}

fn load_gas(target: &str) -> Result<LoadedNetwork> {
    Ok(match target {
        "single-pipe" => parse_network(SINGLE_PIPE_JSON)?,
        "y-network" => parse_network(Y_NETWORK_JSON)?,
        path => {
            if !Path::new(path).exists() {
                return Err(CliError::Io {
                    path: path.into(),
                    source: std::io::Error::from(std::io::ErrorKind::NotFound),
                });
            }
            load_network(path)?
        }
    })
}

pub fn gasnet_simulate_cmd(cfg: &RunConfig, args: &GasArgs<'_>) -> Result<i32> {
    positive("--dx-max", args.dx_max)?;
    positive("--h-max", args.h_max)?;
    positive("--sample-every", args.sample_every)?;
    let loaded = load_gas(args.target)?;
    let mut net = loaded.network;
    if let Some(dx) = args.dx_max.or(loaded.dx_max) {
        net = segment_pipes(&net, dx)?;
    }
    let eos = match args.eos {
        EosArg::Split => EosForm::Split,
        EosArg::Literal => EosForm::Literal,
    };
    let model = build_network_with(&net, &loaded.gas, eos)?;
    let rs = model.reduced(cfg.rank_tol)?;
    let p_ref = model
        .network
        .nodes
        .iter()
        .filter_map(|n| match &n.kind {
            NodeKind::PressureSet(s) => Some(s.eval(0.0)),
            NodeKind::FlowSet(_) => None,
        })
        .fold(f64::NAN, f64::max);
    let p0 = if p_ref.is_finite() { 0.95 * p_ref } else { 5e6 };
    let x0 = model.steady_state(0.0, &model.initial_guess(0.0, p0))?;
    let horizon = cfg.horizon.or(loaded.horizon).unwrap_or(3600.0);
    // Unbounded steps let the explicit integrator ride its stability limit
    // around the steady state.
    let h_max = args.h_max.unwrap_or(horizon / 100.0);
    let mut opts = cfg.step_options(cfg.newton(gas_newton_options()), args.sample_every, Some(h_max));
    opts.escape_norm = 1e12;
    info!("gas network: n = {}, horizon {horizon} s", model.layout.n());
    let (traj, rep) = model.simulate(&rs, 0.0, &x0, horizon, &opts)?;
    let dx = rs
        .state_derivative(traj.last_time(), traj.last_state(), &DVector::zeros(rs.n()))?
        .norm();
    cfg.write("trajectory.csv", &traj.to_csv())?;
    let mut text = String::new();
    let _ = writeln!(text, "status: {}", traj.status.label());
    let _ = writeln!(text, "unknowns: {}", model.layout.n());
    let _ = writeln!(
        text,
        "kirchhoff_max: {:.6e} at t = {} over {} steps",
        rep.max_residual, rep.at_time, rep.steps
    );
    let _ = writeln!(text, "final_derivative_norm: {dx:.6e}");
    let _ = writeln!(text, "steady: {}", if dx <= 1e-8 { "yes" } else { "no" });
    cfg.write("report.txt", &text)?;
    print!("{text}");
    report_status(&traj);
    let exit = status_code(&traj.status);
    if exit == code::OK && rep.max_residual > cfg.constraint_tol {
        eprintln!(
            "Kirchhoff residual {:.3e} exceeds --tol-constraint {:.1e}",
            rep.max_residual, cfg.constraint_tol
        );
        return Ok(code::CONSTRAINT);
    }
    Ok(exit)
}
