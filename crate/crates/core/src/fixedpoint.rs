//! High-velocity construction: u = R + r with r the fixed point of the
//! Duhamel map r ↦ i∫_t^{Tmax} S(t−τ) F(r)(τ) dτ, computed by solving
//! i w_t + Δw = F backward from w(Tmax) = 0.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{num, pre, Result};
use crate::evolve::{nls_residual, CrankNicolson, LinearSolver, Trajectory};
use crate::fit::exp_decay;
use crate::grid::{CutoffPsi, Field, Grid};
use crate::ground_state::GroundState;
use crate::soliton::SolitonParams;
use crate::C64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Cutoff soliton data and the source terms of the remainder equation
/// i r_t + Δr = A₀ + A₁(r) + N(r).
#[derive(Debug)]
pub struct SourceSet {
    grid: Arc<Grid>,
    params: SolitonParams,
    gs: GroundState,
    psi: CutoffPsi,
}

/// Moving soliton H and its gradient at one time, with R = ΨH.
pub struct SolitonSlice {
    pub h: Vec<C64>,
    pub grad_h: Vec<Vec<C64>>,
    pub r: Vec<C64>,
}

/// Builds the sources; errors if the soliton comes within ten decay lengths
/// of the box edge on [t0, tmax].
pub fn make_sources(
    params: &SolitonParams,
    gs: &GroundState,
    psi: &CutoffPsi,
    grid: &Arc<Grid>,
    t0: f64,
    tmax: f64,
) -> Result<SourceSet> {
    if (gs.omega - params.omega).abs() > 1e-12 * params.omega || gs.p != params.p || gs.dim != grid.dim() {
        return Err(pre("ground state does not match (p, omega, dim) of the soliton"));
    }
    if psi.psi.len() != grid.len() {
        return Err(pre("cutoff was built on a different grid"));
    }
    let margin = 10.0 / (gs.delta_fit * params.omega.sqrt());
    for t in [t0, tmax] {
        let c = params.center(t);
        for cj in c.iter().take(grid.dim()) {
            if cj.abs() + margin > grid.half_width() {
                return Err(pre(format!(
                    "soliton leaves the box before t = {t} (center {cj:.2}, margin {margin:.2}, L = {})",
                    grid.half_width()
                )));
            }
        }
    }
    Ok(SourceSet { grid: grid.clone(), params: *params, gs: gs.clone(), psi: psi.clone() })
}

impl SourceSet {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn params(&self) -> &SolitonParams {
        &self.params
    }

    pub fn p(&self) -> f64 {
        self.params.p
    }

    pub fn slice(&self, t: f64) -> SolitonSlice {
        let g = &self.grid;
        let d = g.dim();
        let c = self.params.center(t);
        let tp = self.params.time_phase(t);
        let v = self.params.v;
        let mut h = Vec::with_capacity(g.len());
        let mut grad_h = vec![Vec::with_capacity(g.len()); d];
        let mut r = Vec::with_capacity(g.len());
        for k in 0..g.len() {
            let x = g.point(k);
            let rel = [x[0] - c[0], x[1] - c[1], x[2] - c[2]];
            let rho = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
            let (q, dq, _) = self.gs.eval(rho);
            let xv = 0.5 * (x[0] * v[0] + x[1] * v[1] + x[2] * v[2]);
            let e = C64::from_polar(1.0, xv.rem_euclid(std::f64::consts::TAU) + tp);
            let hk = e * q;
            for (j, gj) in grad_h.iter_mut().enumerate() {
                let radial = if rho > 0.0 { dq * rel[j] / rho } else { 0.0 };
                gj.push(e * C64::new(radial, 0.5 * v[j] * q));
            }
            h.push(hk);
            r.push(hk * self.psi.psi[k]);
        }
        SolitonSlice { h, grad_h, r }
    }

    /// A₀ = Ψ(1 − Ψ^{p−1})|H|^{p−1}H − 2∇Ψ·∇H − ΔΨ H
    pub fn a0_from(&self, s: &SolitonSlice) -> Vec<C64> {
        let p = self.params.p;
        let e = 0.5 * (p - 1.0);
        (0..self.grid.len())
            .map(|k| {
                let ps = self.psi.psi[k];
                let hk = s.h[k];
                let mut a = hk * (ps * (1.0 - ps.powf(p - 1.0)) * hk.norm_sqr().powf(e));
                for (j, gp) in self.psi.grad.iter().enumerate() {
                    a -= s.grad_h[j][k] * (2.0 * gp[k]);
                }
                a - hk * self.psi.lap[k]
            })
            .collect()
    }

    pub fn a0(&self, t: f64) -> Field {
        Field::from_values(&self.grid, self.a0_from(&self.slice(t))).expect("length matches grid")
    }

    /// Linear part −[(p+1)/2 |R|^{p−1} r + (p−1)/2 |R|^{p−3}R² r̄].
    pub fn a1_from(&self, rr: &[C64], r: &[C64]) -> Vec<C64> {
        let p = self.params.p;
        rr.iter()
            .zip(r)
            .map(|(&big, &z)| {
                let m = big.norm_sqr();
                if m == 0.0 {
                    return C64::new(0.0, 0.0);
                }
                let a = m.powf(0.5 * (p - 1.0));
                let rot = big * big / m;
                -(z * (0.5 * (p + 1.0) * a) + rot * z.conj() * (0.5 * (p - 1.0) * a))
            })
            .collect()
    }

    /// A₂ = −R̄r² − 2R|r|² (p = 3 only).
    pub fn a2_from(&self, rr: &[C64], r: &[C64]) -> Result<Vec<C64>> {
        self.require_cubic()?;
        Ok(rr.iter().zip(r).map(|(&big, &z)| -(big.conj() * z * z + big * (2.0 * z.norm_sqr()))).collect())
    }

    /// A₃ = −|r|²r (p = 3 only).
    pub fn a3_from(&self, r: &[C64]) -> Result<Vec<C64>> {
        self.require_cubic()?;
        Ok(r.iter().map(|&z| -z * z.norm_sqr()).collect())
    }

    /// Nonlinear remainder N(r) = −(|R+r|^{p−1}(R+r) − |R|^{p−1}R) − A₁(r);
    /// equals A₂ + A₃ for p = 3, where that split is used.
    pub fn remainder_from(&self, rr: &[C64], r: &[C64]) -> Vec<C64> {
        if self.params.p == 3.0 {
            return rr
                .iter()
                .zip(r)
                .map(|(&big, &z)| -(big.conj() * z * z + big * (2.0 * z.norm_sqr())) - z * z.norm_sqr())
                .collect();
        }
        let e = 0.5 * (self.params.p - 1.0);
        let lin = self.a1_from(rr, r);
        rr.iter()
            .zip(r)
            .zip(lin)
            .map(|((&big, &z), l)| {
                let u = big + z;
                -(u * u.norm_sqr().powf(e) - big * big.norm_sqr().powf(e)) - l
            })
            .collect()
    }

    /// F(r)(t) = A₀(t) + A₁(r) + N(r)
    pub fn total_from(&self, s: &SolitonSlice, r: Option<&[C64]>) -> Vec<C64> {
        let mut f = self.a0_from(s);
        if let Some(r) = r {
            for (fk, a) in f.iter_mut().zip(self.a1_from(&s.r, r)) {
                *fk += a;
            }
            for (fk, a) in f.iter_mut().zip(self.remainder_from(&s.r, r)) {
                *fk += a;
            }
        }
        f
    }

    fn require_cubic(&self) -> Result<()> {
        if self.params.p != 3.0 {
            return Err(pre("the quadratic/cubic source split is defined for p = 3 only"));
        }
        Ok(())
    }
}

/// Values of a field on the uniform time grid t0 + j dt, j = 0..=steps.
#[derive(Clone, Debug)]
pub struct Path {
    pub grid: Arc<Grid>,
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<Vec<C64>>,
}

impl Path {
    pub fn zeros(grid: &Arc<Grid>, t0: f64, dt: f64, steps: usize) -> Path {
        Path { grid: grid.clone(), t0, dt, values: vec![vec![C64::new(0.0, 0.0); grid.len()]; steps + 1] }
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + j as f64 * self.dt
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn field(&self, j: usize) -> Field {
        Field::from_values(&self.grid, self.values[j].clone()).expect("length matches grid")
    }

    pub fn l2_norms(&self) -> Vec<f64> {
        self.values.iter().map(|v| self.grid.l2(v)).collect()
    }

    pub fn sub(&self, other: &Path) -> Path {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Path { grid: self.grid.clone(), t0: self.t0, dt: self.dt, values }
    }

    /// Snapshots every `stride` steps (and the last one).
    pub fn to_trajectory(&self, stride: usize, p: f64) -> Trajectory {
        let stride = stride.max(1);
        let mut idx: Vec<usize> = (0..self.values.len()).step_by(stride).collect();
        if *idx.last().unwrap() != self.steps() {
            idx.push(self.steps());
        }
        Trajectory::from_snapshots(idx.iter().map(|&j| self.time(j)).collect(), idx.iter().map(|&j| self.field(j)).collect(), p)
    }

    pub fn e_norm(&self, cfg: &ENorm) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(j, v)| cfg.weight(self.time(j), self.grid.l2(v), self.grid.h2(v)))
            .fold(0.0, f64::max)
    }
}

/// sup_t e^{δ√ω|v|t}(|v|⁻³‖r‖_{H²} + ‖r‖_{L²})
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ENorm {
    pub delta: f64,
    pub omega: f64,
    pub speed: f64,
}

impl ENorm {
    pub fn rate(&self) -> f64 {
        self.delta * self.omega.sqrt() * self.speed
    }

    fn weight(&self, t: f64, l2: f64, h2: f64) -> f64 {
        if l2 == 0.0 && h2 == 0.0 {
            return 0.0;
        }
        (self.rate() * t).exp() * (h2 / self.speed.powi(3) + l2)
    }
}

/// Discrete sup of the weighted norm over the snapshots of `traj`.
pub fn e_norm(traj: &Trajectory, cfg: &ENorm) -> f64 {
    traj.snapshots
        .iter()
        .zip(&traj.times)
        .map(|(u, &t)| cfg.weight(t, u.norm_l2(), u.norm_h2()))
        .fold(0.0, f64::max)
}

/// ‖∇f‖² ≤ ‖Δf‖‖f‖ for the discrete operators; returns (holds, lhs, rhs).
pub fn interpolation_check(f: &Field) -> (bool, f64, f64) {
    let g = f.grid();
    let lhs = g.grad_sq(&f.values).sqrt();
    let lap = g.laplacian_vec(&f.values);
    let rhs = (g.l2(&lap) * f.norm_l2()).sqrt();
    (lhs <= rhs * (1.0 + 1e-12), lhs, rhs)
}

#[derive(Clone, Debug)]
pub struct DuhamelConfig {
    pub t0: f64,
    pub tmax: f64,
    pub dt: f64,
    pub solver: LinearSolver,
    pub lin_tol: f64,
}

impl DuhamelConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.tmax > self.t0) {
            return Err(pre(format!("need dt > 0 and tmax > t0 (dt = {}, [{}, {}])", self.dt, self.t0, self.tmax)));
        }
        let n = ((self.tmax - self.t0) / self.dt).round() as usize;
        if n == 0 || ((n as f64 * self.dt - (self.tmax - self.t0)) / self.dt).abs() > 1e-6 {
            return Err(pre("tmax − t0 must be a whole number of steps dt"));
        }
        Ok(n)
    }
}

/// Solves i w_t + Δw = F(t) backward from w(tmax) = 0 with Crank–Nicolson
/// and trapezoidal source; `source(j, t)` returns F at t0 + j dt.
pub fn duhamel(
    grid: &Arc<Grid>,
    cfg: &DuhamelConfig,
    mut source: impl FnMut(usize, f64) -> Result<Vec<C64>>,
) -> Result<Path> {
    let n = cfg.steps()?;
    let dt = (cfg.tmax - cfg.t0) / n as f64;
    let cn = CrankNicolson::new(grid, -dt, cfg.solver, cfg.lin_tol)?;
    let mut path = Path::zeros(grid, cfg.t0, dt, n);
    let mut f_next = source(n, cfg.tmax)?;
    for j in (0..n).rev() {
        let f = source(j, cfg.t0 + j as f64 * dt)?;
        let mut rhs = cn.explicit_half(&path.values[j + 1]);
        let c = I * (0.5 * dt);
        for ((x, a), b) in rhs.iter_mut().zip(&f).zip(&f_next) {
            *x += c * (a + b);
        }
        let guess = path.values[j + 1].clone();
        cn.solve(&mut rhs, &guess)?;
        if rhs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(num("non-finite values in the Duhamel sweep"));
        }
        path.values[j] = rhs;
        f_next = f;
    }
    Ok(path)
}

/// One application of the Duhamel map to the remainder path `r`
/// (None stands for r ≡ 0).
pub fn duhamel_apply(sources: &SourceSet, r: Option<&Path>, cfg: &DuhamelConfig) -> Result<Path> {
    duhamel(sources.grid(), cfg, |j, t| {
        let s = sources.slice(t);
        Ok(sources.total_from(&s, r.map(|p| p.values[j].as_slice())))
    })
}

#[derive(Clone, Debug)]
pub struct FixedPointConfig {
    pub duhamel: DuhamelConfig,
    pub enorm: ENorm,
    pub max_iters: usize,
    /// Stop once the increment E-norm drops below tol times ‖r‖_E.
    pub tol: f64,
    /// Measure J₀..J₃ at the final iterate.
    pub diagnostics: bool,
    /// Number of interior times at which the NLS residual of R + r is sampled.
    pub residual_samples: usize,
}

impl FixedPointConfig {
    /// Horizon with e^{−δ√ω|v|(Tmax−T0)} = e^{−horizon_k}; dt resolves the
    /// carrier frequency ω + |v|²/4 and lands on Tmax.
    pub fn suggest(params: &SolitonParams, delta: f64, t0: f64, horizon_k: f64, dt_scale: f64) -> FixedPointConfig {
        let speed = params.speed();
        let enorm = ENorm { delta, omega: params.omega, speed };
        let tmax = t0 + horizon_k / enorm.rate();
        let dt_max = (0.05 / (params.omega + 0.25 * speed * speed)).min(0.01) * dt_scale;
        let n = ((tmax - t0) / dt_max).ceil();
        FixedPointConfig {
            duhamel: DuhamelConfig { t0, tmax, dt: (tmax - t0) / n, solver: LinearSolver::Auto, lin_tol: 1e-12 },
            enorm,
            max_iters: 30,
            tol: 1e-10,
            diagnostics: true,
            residual_samples: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct JNorms {
    pub j0: f64,
    /// ‖J₁(r)‖_E / ‖r‖_E
    pub j1: f64,
    /// ‖J₂(r)‖_E / ‖r‖²_E (p = 3)
    pub j2: Option<f64>,
    /// ‖J₃(r)‖_E / ‖r‖³_E (p = 3)
    pub j3: Option<f64>,
    /// ‖∫S N(r)‖_E for the full nonlinear remainder
    pub j_remainder: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PicardReport {
    pub speed: f64,
    pub delta: f64,
    pub t0: f64,
    pub tmax: f64,
    pub dt: f64,
    /// ‖r^k‖_E for k = 1, 2, ...
    pub iterates: Vec<f64>,
    /// ‖r^{k+1} − r^k‖_E for k = 0, 1, ...
    pub increments: Vec<f64>,
    /// ‖r^{k+1} − r^k‖_E / ‖r^k − r^{k−1}‖_E
    pub contraction_ratios: Vec<f64>,
    /// Largest ratio among increments above the round-off floor.
    pub contraction: f64,
    pub converged: bool,
    pub diverged: bool,
    pub j_norms: Option<JNorms>,
    /// Max over sampled times of ‖i∂_t u + Δu + |u|^{p−1}u‖ for u = R + r.
    pub final_residual: f64,
    /// Exponential rate of ‖r(t)‖_{L²} on the first half of the horizon.
    pub decay_rate: f64,
    pub decay_r2: f64,
    pub r_enorm: f64,
}

#[derive(Debug)]
pub struct PicardOutcome {
    pub report: PicardReport,
    pub r: Path,
}

/// Picard iteration r⁰ = 0, r^{k+1} = Φ(r^k). Divergence (increments growing
/// three times in a row) ends the run and is reported, not raised.
pub fn picard(sources: &SourceSet, cfg: &FixedPointConfig) -> Result<PicardOutcome> {
    if cfg.max_iters < 3 {
        return Err(pre("picard needs at least three iterations"));
    }
    if !(cfg.enorm.speed > 0.0) {
        return Err(pre("picard needs a nonzero velocity"));
    }
    let en = &cfg.enorm;
    let mut r = duhamel_apply(sources, None, &cfg.duhamel)?;
    let mut iterates = vec![r.e_norm(en)];
    let mut increments = vec![iterates[0]];
    let mut ratios = Vec::new();
    let (mut converged, mut diverged) = (false, false);
    let mut growth = 0;
    for _ in 1..cfg.max_iters {
        let next = duhamel_apply(sources, Some(&r), &cfg.duhamel)?;
        let inc = next.sub(&r).e_norm(en);
        let norm = next.e_norm(en);
        let prev = *increments.last().unwrap();
        ratios.push(if prev > 0.0 { inc / prev } else { 0.0 });
        growth = if inc > prev { growth + 1 } else { 0 };
        increments.push(inc);
        iterates.push(norm);
        r = next;
        if !norm.is_finite() || growth >= 3 {
            diverged = true;
            break;
        }
        if inc <= cfg.tol * norm {
            converged = true;
            break;
        }
    }
    let floor = 1e-11 * iterates.iter().fold(0.0f64, |m, x| m.max(*x));
    let contraction = ratios
        .iter()
        .zip(&increments[1..])
        .filter(|(_, inc)| **inc > floor)
        .map(|(q, _)| *q)
        .fold(0.0, f64::max);
    let j_norms = if cfg.diagnostics && !diverged { Some(j_norms(sources, &r, cfg)?) } else { None };
    let final_residual = residual_of(sources, &r, cfg.residual_samples)?;
    let half = r.steps() / 2;
    let ts: Vec<f64> = (0..=half).map(|j| r.time(j)).collect();
    let norms: Vec<f64> = r.values[..=half].iter().map(|v| r.grid.l2(v)).collect();
    let (decay_rate, _, decay_r2) = exp_decay(&ts, &norms, 0.0);
    Ok(PicardOutcome {
        report: PicardReport {
            speed: en.speed,
            delta: en.delta,
            t0: cfg.duhamel.t0,
            tmax: cfg.duhamel.tmax,
            dt: r.dt,
            r_enorm: *iterates.last().unwrap(),
            iterates,
            increments,
            contraction_ratios: ratios,
            contraction,
            converged,
            diverged,
            j_norms,
            final_residual,
            decay_rate,
            decay_r2,
        },
        r,
    })
}

fn j_norms(sources: &SourceSet, r: &Path, cfg: &FixedPointConfig) -> Result<JNorms> {
    let en = &cfg.enorm;
    let dc = &cfg.duhamel;
    let rn = r.e_norm(en);
    let ratio = |x: f64, k: i32| if rn > 0.0 { x / rn.powi(k) } else { 0.0 };
    let j0 = duhamel(sources.grid(), dc, |_, t| Ok(sources.a0_from(&sources.slice(t))))?.e_norm(en);
    let j1 = duhamel(sources.grid(), dc, |j, t| Ok(sources.a1_from(&sources.slice(t).r, &r.values[j])))?.e_norm(en);
    let jr = duhamel(sources.grid(), dc, |j, t| Ok(sources.remainder_from(&sources.slice(t).r, &r.values[j])))?.e_norm(en);
    let (j2, j3) = if sources.p() == 3.0 {
        let j2 = duhamel(sources.grid(), dc, |j, t| sources.a2_from(&sources.slice(t).r, &r.values[j]))?.e_norm(en);
        let j3 = duhamel(sources.grid(), dc, |j, _| sources.a3_from(&r.values[j]))?.e_norm(en);
        (Some(ratio(j2, 2)), Some(ratio(j3, 3)))
    } else {
        (None, None)
    };
    Ok(JNorms { j0, j1: ratio(j1, 1), j2, j3, j_remainder: jr })
}

/// Max NLS residual of R + r over `samples` interior times, using the three
/// neighbouring steps at each.
pub fn residual_of(sources: &SourceSet, r: &Path, samples: usize) -> Result<f64> {
    let n = r.steps();
    if n < 2 || samples == 0 {
        return Ok(0.0);
    }
    let mut worst = 0.0f64;
    for s in 0..samples {
        let j = 1 + s * (n - 2) / samples.max(1);
        let snaps: Vec<Field> = (j - 1..=j + 1)
            .map(|i| {
                let sl = sources.slice(r.time(i));
                let v = sl.r.iter().zip(&r.values[i]).map(|(a, b)| a + b).collect();
                Field::from_values(&r.grid, v)
            })
            .collect::<Result<_>>()?;
        let tr = Trajectory::from_snapshots((j - 1..=j + 1).map(|i| r.time(i)).collect(), snaps, sources.p());
        worst = worst.max(nls_residual(&tr, sources.p())?[0]);
    }
    Ok(worst)
}

