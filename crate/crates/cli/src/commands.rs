//! Subcommand drivers. Each writes its artifacts into `out` and returns the
//! JSON summary it also wrote to `out/summary.json`.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use osl_core::evolve::{evolve, EvolveConfig};
use osl_core::fit::exp_decay;
use osl_core::fixedpoint::{make_sources, picard, FixedPointConfig};
use osl_core::grid::{CutoffProfile, CutoffPsi, Field, Grid, Obstacle};
use osl_core::ground_state::GroundState;
use osl_core::linearized::{coercivity_certificate, coercivity_probes, solve_unstable_pair, LinearizedPair};
use osl_core::modulation::{
    alpha_minus_monitor, backward_shoot, deviation_growth, lyapunov_drift, shoot_search, uniform_constant, ShootLog,
    ShootSetup,
};
use osl_core::soliton::{functionals, soliton_field, threshold_report, SolitonParams};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug)]
pub enum CliError {
    Precondition(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Precondition(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            CliError::Precondition(_) => "precondition",
            CliError::Numerical(_) => "numerical",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Precondition(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<osl_core::Error> for CliError {
    fn from(e: osl_core::Error) -> Self {
        if e.is_precondition() {
            CliError::Precondition(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Precondition(format!("precondition: {}", e.0))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Numerical(format!("io: {}: {e}", path.display()))
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GroundState,
    Spectrum,
    Functionals,
    Evolve,
    FixedPoint,
    Shoot,
    Sweep,
}

impl Command {
    pub fn from_name(s: &str) -> Option<Command> {
        Some(match s {
            "ground-state" => Command::GroundState,
            "spectrum" => Command::Spectrum,
            "functionals" => Command::Functionals,
            "evolve" => Command::Evolve,
            "fixed-point" => Command::FixedPoint,
            "shoot" => Command::Shoot,
            "sweep" => Command::Sweep,
            _ => return None,
        })
    }
}

pub struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: PathBuf,
    pub input: Option<PathBuf>,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> CliResult<BufWriter<fs::File>> {
        let p = self.path(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        fs::File::create(&p).map(BufWriter::new).map_err(|e| io_err(&p, e))
    }

    /// CSV with a config-hash comment line and a header row.
    fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let p = self.path(name);
        let mut w = self.create(name)?;
        let go = || -> std::io::Result<()> {
            writeln!(w, "# config_hash = {}", self.cfg.hash())?;
            writeln!(w, "{}", header.join(","))?;
            for r in rows {
                writeln!(w, "{}", r.join(","))?;
            }
            w.flush()
        };
        go().map_err(|e| io_err(&p, e))
    }

    fn field(&self, name: &str, f: &Field, psi: Option<&CutoffPsi>) -> CliResult<()> {
        let mut w = self.create(name)?;
        f.write_to(&mut w, psi)?;
        w.flush().map_err(|e| io_err(&self.path(name), e))
    }

    fn summary(&self, mut v: Value) -> CliResult<Value> {
        if let Value::Object(m) = &mut v {
            m.insert("config_hash".into(), Value::String(self.cfg.hash()));
        }
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Numerical(e.to_string()))?;
        let mut w = self.create("summary.json")?;
        writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| io_err(&self.path("summary.json"), e))?;
        Ok(v)
    }
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable report")
}

fn ground_state(cfg: &ExperimentConfig) -> CliResult<GroundState> {
    Ok(GroundState::solve(cfg.p, cfg.omega, cfg.dim, cfg.tol)?)
}

fn lattice_points(half_width: f64, h: f64) -> usize {
    ((2.0 * half_width / h).round() as usize) | 1
}

fn obstacle_grid(cfg: &ExperimentConfig, auto_l: f64) -> CliResult<Arc<Grid>> {
    let l = cfg.l.unwrap_or(auto_l);
    let n = cfg.n.unwrap_or_else(|| lattice_points(l, cfg.h));
    let obstacle = if cfg.a > 0.0 { Obstacle::Ball { a: cfg.a } } else { Obstacle::None };
    Ok(Grid::new(cfg.dim, l, n, obstacle)?)
}

fn cutoff(cfg: &ExperimentConfig, g: &Grid) -> CliResult<Option<CutoffPsi>> {
    if cfg.a <= 0.0 {
        return Ok(None);
    }
    let profile = if cfg.cutoff == "septic" { CutoffProfile::Septic } else { CutoffProfile::Quintic };
    Ok(Some(CutoffPsi::with_profile(g, cfg.r1, cfg.r2, profile)?))
}

pub fn run(cmd: Command, r: &Run) -> CliResult<Value> {
    match cmd {
        Command::GroundState => run_ground_state(r),
        Command::Spectrum => run_spectrum(r),
        Command::Functionals => run_functionals(r),
        Command::Evolve => run_evolve(r),
        Command::FixedPoint => run_fixed_point(r),
        Command::Shoot => run_shoot(r),
        Command::Sweep => run_sweep(r),
    }
}

fn run_ground_state(r: &Run) -> CliResult<Value> {
    let gs = ground_state(r.cfg)?;
    let rows = (0..gs.r_samples.len()).map(|i| vec![f(gs.r_samples[i]), f(gs.q_samples[i]), f(gs.dq_samples[i])]);
    r.csv("ground_state.csv", &["r", "Q", "dQ"], rows)?;
    r.summary(json!({
        "p": gs.p, "omega": gs.omega, "dim": gs.dim,
        "q0": gs.q0, "delta_fit": gs.delta_fit, "residual": gs.residual,
    }))
}

fn run_spectrum(r: &Run) -> CliResult<Value> {
    let cfg = r.cfg;
    let gs = ground_state(cfg)?;
    let g = Grid::new(cfg.dim, cfg.l.unwrap_or(cfg.mode_l), cfg.n.unwrap_or(cfg.mode_n), Obstacle::None)?;
    let pair = LinearizedPair::assemble(&gs, &g)?;
    let modes = solve_unstable_pair(&pair)?;
    let coer = coercivity_certificate(&pair, &modes)?;
    let probes = coercivity_probes(&pair, &modes, cfg.probes, cfg.seed);
    r.field("y_plus.bin", &modes.field(1.0), None)?;
    r.field("y_minus.bin", &modes.field(-1.0), None)?;
    r.summary(json!({
        "e0": modes.e0,
        "lambda_min": coer.lambda_min,
        "unconstrained_min": coer.unconstrained_plus,
        "probe_min": probes.iter().cloned().fold(f64::INFINITY, f64::min),
        "kernel_residuals": to_value(&pair.kernel_residuals()),
        "eigen_residuals": to_value(&modes.residuals(&pair)),
        "pairing": modes.pairing,
        "raw_pairing": modes.raw_pairing,
    }))
}

fn read_input(r: &Run) -> CliResult<Option<Field>> {
    let Some(p) = &r.input else { return Ok(None) };
    let file = fs::File::open(p).map_err(|e| CliError::Precondition(format!("precondition: {}: {e}", p.display())))?;
    Ok(Some(Field::read_from(&mut BufReader::new(file))?.0))
}

fn run_functionals(r: &Run) -> CliResult<Value> {
    let u = read_input(r)?.ok_or_else(|| CliError::Precondition("precondition: functionals needs --in field.bin".into()))?;
    let cfg = ExperimentConfig { dim: u.grid().dim(), ..r.cfg.clone() };
    let gs = ground_state(&cfg)?;
    let params = SolitonParams::new(cfg.p, cfg.omega, cfg.velocity());
    let fu = functionals(&u, &params);
    let th = threshold_report(&u, cfg.p, &gs);
    r.summary(json!({
        "M": fu.mass, "E": fu.energy, "P": fu.momentum, "lyapunov": fu.lyapunov,
        "s": th.s, "thresholds": to_value(&th),
    }))
}

fn run_evolve(r: &Run) -> CliResult<Value> {
    let cfg = r.cfg;
    let params = SolitonParams::new(cfg.p, cfg.omega, cfg.velocity());
    let (u0, psi) = match read_input(r)? {
        Some(u) => (u, None),
        None => {
            let gs = ground_state(cfg)?;
            let span = cfg.t0.abs().max(cfg.t1.abs());
            let g = obstacle_grid(cfg, params.speed() * span + 10.0 / gs.delta_fit + 2.0)?;
            let psi = cutoff(cfg, &g)?;
            (soliton_field(&params, &gs, cfg.t0, &g, psi.as_ref())?, psi)
        }
    };
    let ecfg = EvolveConfig {
        lin_tol: cfg.lin_tol,
        snapshot_every: cfg.snapshot_every,
        blowup_factor: cfg.blowup_factor,
        params: Some(params),
        ..EvolveConfig::new(cfg.dt, cfg.t0, cfg.t1)
    };
    let traj = evolve(&u0, &ecfg, cfg.p)?;
    for (i, s) in traj.snapshots.iter().enumerate() {
        r.field(&format!("trajectory/snap_{i:05}.bin"), s, psi.as_ref())?;
    }
    let rows = traj.log.iter().map(|c| vec![f(c.t), f(c.mass), f(c.energy), f(c.lyapunov), f(c.h1)]);
    r.csv("trajectory/conservation.csv", &["t", "M", "E", "lyapunov", "H1norm"], rows)?;
    let first = traj.log[0];
    let last = *traj.log.last().expect("nonempty log");
    r.summary(json!({
        "t0": cfg.t0, "t1": cfg.t1, "snapshots": traj.snapshots.len(),
        "mass_drift": (last.mass - first.mass).abs() / first.mass.max(f64::MIN_POSITIVE),
        "energy_drift": (last.energy - first.energy).abs(),
        "lyapunov_drift": (last.lyapunov - first.lyapunov).abs(),
    }))
}

fn run_fixed_point(r: &Run) -> CliResult<Value> {
    let cfg = r.cfg;
    let gs = ground_state(cfg)?;
    let params = SolitonParams::new(cfg.p, cfg.omega, cfg.velocity());
    if params.speed() == 0.0 {
        return Err(CliError::Precondition("precondition: fixed-point needs v != 0".into()));
    }
    let delta = cfg.delta.unwrap_or(0.8 * gs.delta_fit);
    let mut fp = FixedPointConfig::suggest(&params, delta, cfg.big_t0, cfg.horizon_k, cfg.dt_scale);
    if let Some(tmax) = cfg.tmax {
        let n = ((tmax - cfg.big_t0) / fp.duhamel.dt).ceil().max(1.0);
        fp.duhamel.tmax = tmax;
        fp.duhamel.dt = (tmax - cfg.big_t0) / n;
    }
    fp.max_iters = cfg.iters;
    fp.duhamel.lin_tol = cfg.lin_tol;
    let tmax = fp.duhamel.tmax;
    let g = obstacle_grid(cfg, params.speed() * tmax + 10.0 / (gs.delta_fit * cfg.omega.sqrt()) + 4.0)?;
    let psi = cutoff(cfg, &g)?.unwrap_or_else(|| CutoffPsi::identity(&g));
    let src = make_sources(&params, &gs, &psi, &g, cfg.big_t0, tmax)?;
    let out = picard(&src, &fp)?;
    let path = &out.r;
    let rows = (0..=path.steps()).map(|j| {
        let v = &path.values[j];
        vec![f(path.time(j)), f(g.l2(v)), f(g.h1(v))]
    });
    r.csv("r_trajectory.csv", &["t", "r_l2", "r_h1"], rows)?;
    r.field("r_T0.bin", &path.field(0), Some(&psi))?;
    r.summary(to_value(&out.report))
}

fn shoot_setup(cfg: &ExperimentConfig) -> ShootSetup {
    ShootSetup {
        p: cfg.p,
        omega: cfg.omega,
        dim: cfg.dim,
        v: cfg.v.first().copied().unwrap_or(0.0),
        a: cfg.a,
        r1: cfg.r1,
        r2: cfg.r2,
        h: cfg.h,
        t0: cfg.big_t0,
        tn: cfg.tn,
        dt: cfg.dt,
        delta: cfg.delta.unwrap_or(0.3),
        log_every: cfg.log_every,
        m: cfg.m,
        m_prime: cfg.m_prime,
        eps: cfg.eps,
        mode_half_width: cfg.mode_l,
        mode_n: cfg.mode_n,
    }
}

fn shoot_rows(log: &ShootLog) -> impl Iterator<Item = Vec<String>> {
    log.ascending().into_iter().map(|w| {
        vec![f(w.t), f(w.r_l2), f(w.r_h1), f(w.y), f(w.mu), f(w.alpha_plus), f(w.alpha_minus), f(w.lyapunov), f(w.n_cal), f(w.dist_h1)]
    })
}

const SHOOT_HEADER: &[&str] =
    &["t", "r_l2", "r_h1", "y", "mu", "alpha_plus", "alpha_minus", "lyapunov", "N", "dist_h1"];

/// Backward growth rate of |α⁺| where it exceeds ten times its final value.
fn alpha_growth(log: &ShootLog) -> Option<f64> {
    let a0 = log.rows[0].alpha_plus.abs();
    let (ts, ys): (Vec<f64>, Vec<f64>) =
        log.rows.iter().filter(|w| w.alpha_plus.abs() > 10.0 * a0).map(|w| (w.t, w.alpha_plus.abs())).unzip();
    (ts.len() >= 3).then(|| exp_decay(&ts, &ys, 0.0).0)
}

fn run_shoot(r: &Run) -> CliResult<Value> {
    let setup = shoot_setup(r.cfg);
    let (ctx, scfg) = setup.build()?;
    let rate = scfg.rate(&ctx.params);
    let (log, alpha_star, growth, extra) = if r.cfg.search {
        let sr = shoot_search(&ctx, &scfg)?;
        let eps = 10.0 * sr.resolution.max(1e-14 * sr.bound);
        let mut rates = Vec::new();
        let mut mis = Vec::new();
        for s in [1.0, -1.0] {
            let m = backward_shoot(sr.alpha_star + s * eps, &ctx, &scfg)?;
            let g = deviation_growth(&m, &sr.log, 10.0);
            rates.push(g.rate);
            mis.push(json!({ "alpha_plus": m.alpha_target, "exit_time": m.exit_time,
                "exit_reason": m.exit_reason.as_str(), "growth_rate": g.rate, "growth_r2": g.r2 }));
        }
        let evals = sr.evaluations.iter().map(|e| {
            vec![f(e.alpha_plus), f(e.exit_time), e.exit_reason.as_str().to_string(), f(e.exit_sign)]
        });
        r.csv("evaluations.csv", &["alpha_plus", "exit_time", "exit_reason", "exit_sign"], evals)?;
        let extra = json!({ "resolution": sr.resolution, "bracket": sr.bound,
            "evaluations": sr.evaluations.len(), "mistuned": mis });
        (sr.log, sr.alpha_star, Some(0.5 * (rates[0] + rates[1])), extra)
    } else {
        let a = r.cfg.alpha_plus.unwrap_or(0.0);
        let log = backward_shoot(a, &ctx, &scfg)?;
        let g = alpha_growth(&log);
        (log, a, g, json!({}))
    };
    r.csv("shoot_log.csv", SHOOT_HEADER, shoot_rows(&log))?;
    let (drift, _) = lyapunov_drift(&log, 1.0, scfg.tn - 3.0 / ctx.modes.e0);
    let mut v = json!({
        "alpha_star": alpha_star,
        "exit_time": log.exit_time,
        "exit_reason": log.exit_reason.as_str(),
        "fitted_C": uniform_constant(&log, rate),
        "fitted_growth_rate": growth,
        "e0": ctx.modes.e0,
        "lambda": log.lambda,
        "M": scfg.m,
        "Mprime": scfg.m_prime,
        "eps": scfg.eps,
        "alpha_minus_max_ratio": alpha_minus_monitor(&log, rate).max_ratio,
        "lyapunov_drift": to_value(&drift),
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    r.summary(v)
}

fn thread_count() -> usize {
    std::env::var("OSL_THREADS").ok().and_then(|s| s.parse().ok()).filter(|&n| n > 0).unwrap_or(0)
}

fn run_sweep(r: &Run) -> CliResult<Value> {
    let cfg = r.cfg;
    let cmd = Command::from_name(&cfg.sweep_command)
        .filter(|c| *c != Command::Sweep)
        .ok_or_else(|| CliError::Precondition(format!("precondition: invalid sweep_command '{}'", cfg.sweep_command)))?;
    if cfg.sweep_values.is_empty() {
        return Err(CliError::Precondition("precondition: sweep_values is empty".into()));
    }
    let mut runs = Vec::new();
    for val in &cfg.sweep_values {
        let mut c = cfg.clone();
        c.set(&cfg.sweep_key, val)?;
        runs.push(c);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let results: Vec<CliResult<Value>> = pool.install(|| {
        runs.par_iter()
            .enumerate()
            .map(|(i, c)| run(cmd, &Run { cfg: c, out: r.out.join(format!("run_{i:03}")), input: r.input.clone() }))
            .collect()
    });
    let mut columns: Vec<String> = Vec::new();
    for res in results.iter().flatten() {
        if let Value::Object(m) = res {
            for (k, v) in m {
                if (v.is_number() || v.is_boolean()) && !columns.contains(k) {
                    columns.push(k.clone());
                }
            }
        }
    }
    columns.sort();
    let mut header = vec!["run", "value", "status", "message"];
    header.extend(columns.iter().map(|s| s.as_str()));
    let mut rows = Vec::new();
    let mut statuses = Vec::new();
    for (i, (val, res)) in cfg.sweep_values.iter().zip(&results).enumerate() {
        let mut row = vec![i.to_string(), val.clone()];
        match res {
            Ok(Value::Object(m)) => {
                row.push("ok".into());
                row.push(String::new());
                row.extend(columns.iter().map(|k| m.get(k).map_or(String::new(), |v| v.to_string())));
                statuses.push(json!("ok"));
            }
            Ok(_) => unreachable!("summaries are objects"),
            Err(e) => {
                row.push(e.status().into());
                row.push(format!("\"{}\"", e.to_string().replace('"', "'")));
                row.extend(columns.iter().map(|_| String::new()));
                statuses.push(json!(e.status()));
            }
        }
        rows.push(row);
    }
    r.csv("sweep.csv", &header, rows)?;
    let mut m = Map::new();
    m.insert("command".into(), json!(cfg.sweep_command));
    m.insert("key".into(), json!(cfg.sweep_key));
    m.insert("values".into(), json!(cfg.sweep_values));
    m.insert("status".into(), Value::Array(statuses));
    r.summary(Value::Object(m))
}
