//! Strang splitting with Crank–Nicolson for i u_t + Δ_Ω u = −|u|^{p−1}u.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{num, pre, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{bicgstab, BandLu};
use crate::soliton::{functionals, SolitonParams};
use crate::C64;

/// Band storage above this many entries switches the linear solve to BiCGStab.
const DIRECT_LIMIT: usize = 40_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LinearSolver {
    Auto,
    Direct,
    BiCgStab,
}

#[derive(Clone, Debug)]
pub struct EvolveConfig {
    /// Step magnitude; the direction follows the sign of t1 − t0.
    pub dt: f64,
    pub t0: f64,
    pub t1: f64,
    pub lin_tol: f64,
    pub snapshot_every: usize,
    /// If set, rejects |dt| > c_stab h².
    pub c_stab: Option<f64>,
    pub solver: LinearSolver,
    /// Disables the nonlinear substeps (linear Schrödinger flow).
    pub linear_only: bool,
    /// Parameters for the logged Lyapunov combination (energy is logged
    /// in its place when absent).
    pub params: Option<SolitonParams>,
    /// Abort once ‖u‖_{H¹} exceeds this multiple of its initial value.
    pub blowup_factor: f64,
}

impl EvolveConfig {
    pub fn new(dt: f64, t0: f64, t1: f64) -> EvolveConfig {
        EvolveConfig {
            dt,
            t0,
            t1,
            lin_tol: 1e-12,
            snapshot_every: 1,
            c_stab: None,
            solver: LinearSolver::Auto,
            linear_only: false,
            params: None,
            blowup_factor: 1e3,
        }
    }

    /// Number of steps and the signed step that lands exactly on t1.
    pub fn steps(&self) -> Result<(usize, f64)> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(pre(format!("time step must be positive (got {})", self.dt)));
        }
        let span = self.t1 - self.t0;
        let n = (span.abs() / self.dt).round() as usize;
        if n == 0 {
            return Ok((0, 0.0));
        }
        if ((n as f64 * self.dt - span.abs()) / self.dt).abs() > 1e-6 {
            return Err(pre(format!("span {span} is not a whole number of steps dt = {}", self.dt)));
        }
        Ok((n, span / n as f64))
    }
}

/// One Crank–Nicolson factorization (I − i dt/2 Δ) for a fixed signed dt.
pub struct CrankNicolson {
    grid: Arc<Grid>,
    dt: f64,
    lu: Option<BandLu<C64>>,
    tol: f64,
}

impl CrankNicolson {
    pub fn new(grid: &Arc<Grid>, dt: f64, solver: LinearSolver, tol: f64) -> Result<CrankNicolson> {
        let bw = grid.bandwidth().max(1);
        let direct = match solver {
            LinearSolver::Direct => true,
            LinearSolver::BiCgStab => false,
            LinearSolver::Auto => grid.len() * (3 * bw + 1) <= DIRECT_LIMIT,
        };
        let lu = if direct {
            let a = grid.band_operator(C64::new(1.0, 0.0), C64::new(0.0, -0.5 * dt), None);
            Some(a.factor()?)
        } else {
            None
        };
        Ok(CrankNicolson { grid: grid.clone(), dt, lu, tol })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// (I + i dt/2 Δ) u
    pub fn explicit_half(&self, u: &[C64]) -> Vec<C64> {
        let mut lap = self.grid.laplacian_vec(u);
        let c = C64::new(0.0, 0.5 * self.dt);
        for (l, v) in lap.iter_mut().zip(u) {
            *l = v + c * *l;
        }
        lap
    }

    /// Solves (I − i dt/2 Δ) x = rhs, writing x into `rhs`; `guess` warm-starts
    /// the iterative path.
    pub fn solve(&self, rhs: &mut Vec<C64>, guess: &[C64]) -> Result<()> {
        match &self.lu {
            Some(lu) => {
                lu.solve_in_place(rhs);
                Ok(())
            }
            None => {
                let g = &self.grid;
                let c = C64::new(0.0, -0.5 * self.dt);
                let apply = |x: &[C64], y: &mut [C64]| {
                    g.laplacian(x, y);
                    for (yi, xi) in y.iter_mut().zip(x) {
                        *yi = xi + c * *yi;
                    }
                };
                let mut x = guess.to_vec();
                bicgstab(apply, rhs, &mut x, self.tol, 2000)?;
                *rhs = x;
                Ok(())
            }
        }
    }

    /// Linear CN step u ↦ (I − i dt/2 Δ)⁻¹(I + i dt/2 Δ)u.
    pub fn step(&self, u: &mut Vec<C64>) -> Result<()> {
        let mut rhs = self.explicit_half(u);
        self.solve(&mut rhs, u)?;
        *u = rhs;
        Ok(())
    }
}

/// u ← u exp(iτ|u|^{p−1})
pub fn nonlinear_phase(u: &mut [C64], tau: f64, p: f64) {
    let e = 0.5 * (p - 1.0);
    for z in u.iter_mut() {
        let a = z.norm_sqr();
        if a > 0.0 {
            *z *= C64::from_polar(1.0, tau * a.powf(e));
        }
    }
}

/// Stateful stepper for repeated Strang steps with a fixed signed dt.
pub struct Stepper {
    cn: CrankNicolson,
    p: f64,
    linear_only: bool,
}

impl Stepper {
    pub fn new(grid: &Arc<Grid>, dt: f64, p: f64, cfg: &EvolveConfig) -> Result<Stepper> {
        if let Some(c) = cfg.c_stab {
            if dt.abs() > c * grid.h() * grid.h() {
                return Err(pre(format!("|dt| = {} exceeds c_stab h^2 = {}", dt.abs(), c * grid.h() * grid.h())));
            }
        }
        Ok(Stepper { cn: CrankNicolson::new(grid, dt, cfg.solver, cfg.lin_tol)?, p, linear_only: cfg.linear_only })
    }

    pub fn dt(&self) -> f64 {
        self.cn.dt
    }

    pub fn step(&self, u: &mut Vec<C64>) -> Result<()> {
        let half = 0.5 * self.cn.dt;
        if !self.linear_only {
            nonlinear_phase(u, half, self.p);
        }
        self.cn.step(u)?;
        if !self.linear_only {
            nonlinear_phase(u, half, self.p);
        }
        if u.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(num("non-finite values after a time step"));
        }
        Ok(())
    }
}

/// One Strang step of size dt (sign gives the direction).
pub fn step(u: &Field, dt: f64, p: f64, cfg: &EvolveConfig) -> Result<Field> {
    let st = Stepper::new(u.grid(), dt, p, cfg)?;
    let mut v = u.values.clone();
    st.step(&mut v)?;
    Field::from_values(u.grid(), v)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConservationRow {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub lyapunov: f64,
    pub h1: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<Field>,
    pub log: Vec<ConservationRow>,
}

impl Trajectory {
    /// Wraps given snapshots (for instance analytically sampled fields).
    pub fn from_snapshots(times: Vec<f64>, snapshots: Vec<Field>, p: f64) -> Trajectory {
        let log = snapshots.iter().zip(&times).map(|(u, &t)| row(u, t, p, None)).collect();
        Trajectory { times, snapshots, log }
    }

    pub fn last(&self) -> &Field {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }
}

fn row(u: &Field, t: f64, p: f64, params: Option<&SolitonParams>) -> ConservationRow {
    let prm = params.copied().unwrap_or(SolitonParams { omega: 0.0, v: [0.0; 3], theta0: 0.0, x0: [0.0; 3], p });
    let f = functionals(u, &SolitonParams { p, ..prm });
    ConservationRow { t, mass: f.mass, energy: f.energy, lyapunov: f.lyapunov, h1: u.norm_h1() }
}

/// Repeated Strang steps from t0 to t1 with snapshots every `snapshot_every`
/// steps (the endpoints are always kept).
pub fn evolve(u0: &Field, cfg: &EvolveConfig, p: f64) -> Result<Trajectory> {
    let (n, dt) = cfg.steps()?;
    let grid = u0.grid().clone();
    let every = cfg.snapshot_every.max(1);
    let mut traj = Trajectory { times: vec![cfg.t0], snapshots: vec![u0.clone()], log: vec![row(u0, cfg.t0, p, cfg.params.as_ref())] };
    if n == 0 {
        return Ok(traj);
    }
    let st = Stepper::new(&grid, dt, p, cfg)?;
    let h1_0 = u0.norm_h1();
    let mut u = u0.values.clone();
    for k in 1..=n {
        st.step(&mut u)?;
        let h1 = grid.h1(&u);
        if h1_0 > 0.0 && h1 > cfg.blowup_factor * h1_0 {
            return Err(num(format!(
                "blow-up suspected at t = {}: H1 norm grew from {h1_0:.3e} to {h1:.3e}",
                cfg.t0 + k as f64 * dt
            )));
        }
        if k % every == 0 || k == n {
            let t = if k == n { cfg.t1 } else { cfg.t0 + k as f64 * dt };
            let f = Field::from_values(&grid, u.clone())?;
            traj.log.push(row(&f, t, p, cfg.params.as_ref()));
            traj.times.push(t);
            traj.snapshots.push(f);
        }
    }
    Ok(traj)
}

/// ‖i∂_t u + Δu + |u|^{p−1}u‖_{L²} at each interior snapshot, with the time
/// derivative from centered differences.
pub fn nls_residual(traj: &Trajectory, p: f64) -> Result<Vec<f64>> {
    let s = &traj.snapshots;
    if s.len() < 3 {
        return Err(pre("nls_residual needs at least three snapshots"));
    }
    let g = s[0].grid();
    let e = 0.5 * (p - 1.0);
    let mut out = Vec::with_capacity(s.len() - 2);
    for k in 1..s.len() - 1 {
        let dt = traj.times[k + 1] - traj.times[k - 1];
        let lap = g.laplacian_vec(&s[k].values);
        let r: Vec<C64> = (0..g.len())
            .map(|j| {
                let u = s[k].values[j];
                let ut = (s[k + 1].values[j] - s[k - 1].values[j]) / dt;
                C64::new(0.0, 1.0) * ut + lap[j] + u * u.norm_sqr().powf(e)
            })
            .collect();
        out.push(g.l2(&r));
    }
    Ok(out)
}
