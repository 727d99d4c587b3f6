//! Modulation around the cutoff soliton and backward shooting on the
//! unstable direction.
//!
//! With φ̃ = ½x·v + θ(t) + μ and Q̃ = Q_ω(x − c(t) − y), a state is written
//! u = ΨQ̃e^{iφ̃} + r with r ⊥ ∂_jQ̃Ψe^{iφ̃} (real part) and r ⊥ iR̃, and
//! α^± = Im∫Ỹ_∓ r̄ with Ỹ_± = Ψ𝒴^±(x − c − y)e^{iφ̃}.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{num, pre, Error, Result};
use crate::evolve::{EvolveConfig, LinearSolver, Stepper};
use crate::fit::{exp_decay, linear};
use crate::grid::{CutoffPsi, Field, Grid, Obstacle};
use crate::ground_state::GroundState;
use crate::linearized::{solve_unstable_pair, EigenModes, LinearizedPair};
use crate::soliton::{functionals, soliton_field, SolitonParams};
use crate::C64;

/// Everything the decomposition needs about the reference soliton.
#[derive(Clone, Debug)]
pub struct Context {
    pub grid: Arc<Grid>,
    pub params: SolitonParams,
    pub gs: GroundState,
    pub modes: EigenModes,
    pub psi: CutoffPsi,
    /// ‖Q_ω‖_{L²}
    pub q_norm: f64,
}

/// Q̃ and its first and second derivatives at the lattice points.
struct Profile {
    q: Vec<f64>,
    dq: Vec<[f64; 3]>,
    ddq: Vec<[[f64; 3]; 3]>,
}

impl Context {
    pub fn new(params: SolitonParams, gs: GroundState, modes: EigenModes, psi: CutoffPsi, grid: &Arc<Grid>) -> Result<Context> {
        if (gs.omega - params.omega).abs() > 1e-12 * params.omega || gs.p != params.p {
            return Err(pre("ground state does not match (p, omega) of the soliton"));
        }
        if (modes.omega - params.omega).abs() > 1e-12 * params.omega || modes.p != params.p {
            return Err(pre("eigenmodes do not match (p, omega) of the soliton"));
        }
        if gs.dim != grid.dim() || psi.psi.len() != grid.len() {
            return Err(pre("ground state or cutoff built for a different grid"));
        }
        let q_norm = gs.radial_mass().sqrt();
        Ok(Context { grid: grid.clone(), params, gs, modes, psi, q_norm })
    }

    fn shift(&self, t: f64, y: [f64; 3]) -> [f64; 3] {
        let c = self.params.center(t);
        [c[0] + y[0], c[1] + y[1], c[2] + y[2]]
    }

    fn rel(&self, k: usize, s: [f64; 3]) -> ([f64; 3], f64) {
        let x = self.grid.point(k);
        let z = [x[0] - s[0], x[1] - s[1], x[2] - s[2]];
        (z, (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]).sqrt())
    }

    fn profile(&self, t: f64, y: [f64; 3]) -> Profile {
        let d = self.grid.dim();
        let s = self.shift(t, y);
        let n = self.grid.len();
        let (mut q, mut dq, mut ddq) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for k in 0..n {
            let (z, rho) = self.rel(k, s);
            let (v, dv, ddv) = self.gs.eval(rho);
            let mut g = [0.0; 3];
            let mut hm = [[0.0; 3]; 3];
            for j in 0..d {
                let uj = if rho > 0.0 { z[j] / rho } else { 0.0 };
                g[j] = dv * uj;
                for l in 0..d {
                    let ul = if rho > 0.0 { z[l] / rho } else { 0.0 };
                    let delta = if j == l { 1.0 } else { 0.0 };
                    hm[j][l] = if rho > 0.0 { ddv * uj * ul + dv / rho * (delta - uj * ul) } else { ddv * delta };
                }
            }
            q.push(v);
            dq.push(g);
            ddq.push(hm);
        }
        Profile { q, dq, ddq }
    }

    /// e^{iφ̃} at the lattice points.
    fn carrier(&self, t: f64, mu: f64) -> Vec<C64> {
        let v = self.params.v;
        let tp = self.params.time_phase(t) + mu;
        (0..self.grid.len())
            .map(|k| {
                let x = self.grid.point(k);
                let xv = 0.5 * (x[0] * v[0] + x[1] * v[1] + x[2] * v[2]);
                C64::from_polar(1.0, xv.rem_euclid(TAU) + tp)
            })
            .collect()
    }

    /// R̃(y, μ) = ΨQ̃e^{iφ̃}
    pub fn tilde_r(&self, t: f64, y: [f64; 3], mu: f64) -> Field {
        let s = self.shift(t, y);
        let e = self.carrier(t, mu);
        let v = (0..self.grid.len())
            .map(|k| e[k] * (self.gs.eval(self.rel(k, s).1).0 * self.psi.psi[k]))
            .collect();
        Field::from_values(&self.grid, v).expect("length matches grid")
    }

    /// Ỹ_± = Ψ𝒴^±(x − c − y)e^{iφ̃}; `sign` > 0 selects 𝒴⁺ = y₁ + iy₂.
    pub fn tilde_y(&self, t: f64, y: [f64; 3], mu: f64, sign: f64) -> Field {
        let s = self.shift(t, y);
        let e = self.carrier(t, mu);
        let sg = sign.signum();
        let v = (0..self.grid.len())
            .map(|k| {
                let (a, b) = self.modes.eval(self.rel(k, s).1);
                e[k] * C64::new(a, sg * b) * self.psi.psi[k]
            })
            .collect();
        Field::from_values(&self.grid, v).expect("length matches grid")
    }

    /// Cutoff soliton R(t) = R̃(0, 0).
    pub fn soliton(&self, t: f64) -> Result<Field> {
        soliton_field(&self.params, &self.gs, t, &self.grid, Some(&self.psi))
    }

    /// (α⁺, α⁻) = (Im∫Ỹ₋r̄, Im∫Ỹ₊r̄)
    pub fn alphas(&self, t: f64, y: [f64; 3], mu: f64, r: &Field) -> (f64, f64) {
        let s = self.shift(t, y);
        let e = self.carrier(t, mu);
        let (mut ap, mut am) = (0.0, 0.0);
        for k in 0..self.grid.len() {
            let (a, b) = self.modes.eval(self.rel(k, s).1);
            let h = r.values[k] * e[k].conj() * self.psi.psi[k];
            // Im[(a ∓ ib) h̄] = −a h₂ ∓ b h₁
            ap += -a * h.im - b * h.re;
            am += -a * h.im + b * h.re;
        }
        let c = self.grid.cell();
        (ap * c, am * c)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModulationState {
    pub t: f64,
    pub y: [f64; 3],
    pub mu: f64,
    #[serde(skip)]
    pub r: Field,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub iterations: usize,
    /// Largest orthogonality functional at exit.
    pub residual: f64,
}

impl ModulationState {
    /// h = e^{−iφ̃}r
    pub fn h(&self, ctx: &Context) -> Field {
        let e = ctx.carrier(self.t, self.mu);
        let v = self.r.values.iter().zip(&e).map(|(a, b)| a * b.conj()).collect();
        Field::from_values(&ctx.grid, v).expect("length matches grid")
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecomposeConfig {
    /// Orthogonality functionals below tol × ‖r‖ × (norm of the direction).
    pub tol: f64,
    /// Largest admissible ‖u − R‖_{L²}.
    pub eps_mod: f64,
    pub max_iter: usize,
}

impl DecomposeConfig {
    /// eps_mod = 0.1 ‖Q_ω‖_{L²}
    pub fn for_ground_state(gs: &GroundState) -> DecomposeConfig {
        DecomposeConfig { tol: 1e-12, eps_mod: 0.1 * gs.radial_mass().sqrt(), max_iter: 50 }
    }
}

/// Newton on (y, μ) for the d + 1 orthogonality conditions with the exact
/// Jacobian.
pub fn decompose(
    u: &Field,
    t: f64,
    ctx: &Context,
    guess: ([f64; 3], f64),
    cfg: &DecomposeConfig,
) -> Result<ModulationState> {
    if !u.grid().same(&ctx.grid) {
        return Err(Error::GridMismatch);
    }
    let dist = u.sub(&ctx.soliton(t)?)?.norm_l2();
    if dist > cfg.eps_mod {
        return Err(pre(format!("‖u − R‖ = {dist:.3e} exceeds the modulation radius {:.3e}", cfg.eps_mod)));
    }
    let d = ctx.grid.dim();
    let cell = ctx.grid.cell();
    let psi = &ctx.psi.psi;
    let (mut y, mut mu) = guess;
    let qn = ctx.q_norm;
    for it in 0..cfg.max_iter {
        let pr = ctx.profile(t, y);
        let e = ctx.carrier(t, mu);
        let mut g = DVector::<f64>::zeros(d + 1);
        let mut jac = DMatrix::<f64>::zeros(d + 1, d + 1);
        let mut rn = 0.0;
        let mut dqn = 0.0;
        for k in 0..ctx.grid.len() {
            let w = u.values[k] * e[k].conj();
            let (ps, q) = (psi[k], pr.q[k]);
            rn += (w - ps * q).norm_sqr();
            for j in 0..d {
                let dj = pr.dq[k][j];
                dqn += (dj * ps).powi(2);
                g[j] += w.re * dj * ps - ps * ps * q * dj;
                for l in 0..d {
                    jac[(j, l)] += -w.re * pr.ddq[k][j][l] * ps + ps * ps * (pr.dq[k][l] * dj + q * pr.ddq[k][j][l]);
                }
                jac[(j, d)] += w.im * dj * ps;
                jac[(d, j)] += -w.im * ps * dj;
            }
            g[d] += w.im * ps * q;
            jac[(d, d)] += -w.re * ps * q;
        }
        g *= cell;
        jac *= cell;
        let rn = (rn * cell).sqrt();
        let dqn = (dqn * cell / d as f64).sqrt();
        let res = (0..=d).map(|i| g[i].abs()).fold(0.0, f64::max);
        let scale = rn * dqn.max(qn);
        let floor = 1e-15 * qn * qn;
        let finish = |y: [f64; 3], mu: f64, it: usize| -> Result<ModulationState> {
            let r = u.sub(&ctx.tilde_r(t, y, mu))?;
            let (ap, am) = ctx.alphas(t, y, mu, &r);
            Ok(ModulationState { t, y, mu, r, alpha_plus: ap, alpha_minus: am, iterations: it, residual: res })
        };
        if res <= cfg.tol * scale || res <= floor {
            return finish(y, mu, it);
        }
        let step = jac.lu().solve(&(-g)).ok_or_else(|| num("singular modulation Jacobian"))?;
        for j in 0..d {
            y[j] += step[j];
        }
        mu += step[d];
        if (0..=d).map(|i| step[i].abs()).fold(0.0, f64::max) < 1e-15 * (1.0 + mu.abs()) {
            return finish(y, mu, it + 1);
        }
    }
    Err(num(format!("modulation Newton did not converge in {} iterations", cfg.max_iter)))
}

/// u(Tn) = R(Tn) + iλ⁺Y₊(Tn) + iλ⁻Y₋(Tn); |λ^±| must not exceed
/// 10 e^{−δ√ω|v|Tn}.
pub fn final_data(tn: f64, lambda: [f64; 2], delta: f64, ctx: &Context) -> Result<Field> {
    let bound = 10.0 * (-delta * ctx.params.omega.sqrt() * ctx.params.speed() * tn).exp();
    if lambda[0].abs() > bound || lambda[1].abs() > bound {
        return Err(pre(format!("|lambda| = {:?} exceeds 10 e^(-delta sqrt(omega) |v| Tn) = {bound:.3e}", lambda)));
    }
    let mut u = ctx.soliton(tn)?;
    if lambda != [0.0, 0.0] {
        u.axpy(C64::new(0.0, lambda[0]), &ctx.tilde_y(tn, [0.0; 3], 0.0, 1.0))?;
        u.axpy(C64::new(0.0, lambda[1]), &ctx.tilde_y(tn, [0.0; 3], 0.0, -1.0))?;
    }
    Ok(u)
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalData {
    pub lambda: [f64; 2],
    /// |λ| / |α⁺|
    pub ratio: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub state: ModulationState,
    #[serde(skip)]
    pub u: Field,
}

/// λ with α⁺(Tn) = target and α⁻(Tn) = 0, by Newton with a central
/// difference Jacobian of λ ↦ (α⁺, α⁻).
pub fn solve_modulated_final_data(
    tn: f64,
    alpha_target: f64,
    delta: f64,
    ctx: &Context,
    dcfg: &DecomposeConfig,
) -> Result<FinalData> {
    let b = (-delta * ctx.params.omega.sqrt() * ctx.params.speed() * tn).exp();
    if alpha_target.abs() > b * (1.0 + 1e-12) {
        return Err(pre(format!("|alpha+| = {alpha_target:.3e} exceeds e^(-delta sqrt(omega) |v| Tn) = {b:.3e}")));
    }
    let eval = |l: [f64; 2]| -> Result<(ModulationState, Field)> {
        let u = final_data(tn, l, delta, ctx)?;
        Ok((decompose(&u, tn, ctx, ([0.0; 3], 0.0), dcfg)?, u))
    };
    let (s0, u0) = eval([0.0, 0.0])?;
    if alpha_target == 0.0 {
        return Ok(FinalData { lambda: [0.0, 0.0], ratio: 0.0, alpha_plus: s0.alpha_plus, alpha_minus: s0.alpha_minus, iterations: 0, state: s0, u: u0 });
    }
    let hstep = 1e-3 * b;
    let mut jac = DMatrix::<f64>::zeros(2, 2);
    for c in 0..2 {
        let mut lp = [0.0; 2];
        let mut lm = [0.0; 2];
        lp[c] = hstep;
        lm[c] = -hstep;
        let (sp, _) = eval(lp)?;
        let (sm, _) = eval(lm)?;
        jac[(0, c)] = (sp.alpha_plus - sm.alpha_plus) / (2.0 * hstep);
        jac[(1, c)] = (sp.alpha_minus - sm.alpha_minus) / (2.0 * hstep);
    }
    let jn = jac.norm_squared();
    let lu = jac.lu();
    if lu.determinant().abs() < 1e-12 * jn {
        return Err(num("degenerate pairing: λ ↦ (α⁺, α⁻) has a singular Jacobian"));
    }
    let mut lambda = [0.0, 0.0];
    let mut state = s0;
    for it in 1..=30 {
        let f = DVector::from_vec(vec![state.alpha_plus - alpha_target, state.alpha_minus]);
        let step = lu.solve(&(-f)).ok_or_else(|| num("degenerate pairing in final-data Newton"))?;
        lambda[0] += step[0];
        lambda[1] += step[1];
        let (s, u) = eval(lambda)?;
        state = s;
        let err = (state.alpha_plus - alpha_target).abs().max(state.alpha_minus.abs());
        if err <= 1e-14 * b || step.amax() <= 1e-16 * b {
            let ratio = lambda[0].hypot(lambda[1]) / alpha_target.abs();
            return Ok(FinalData { lambda, ratio, alpha_plus: state.alpha_plus, alpha_minus: state.alpha_minus, iterations: it, state, u });
        }
    }
    Err(num("final-data Newton did not reach the alpha targets"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    ReachedT0,
    RBound,
    YMuBound,
    AlphaBound,
    ModulationFailure,
}

impl ExitReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExitReason::ReachedT0 => "reached_T0",
            ExitReason::RBound => "r_bound",
            ExitReason::YMuBound => "y_mu_bound",
            ExitReason::AlphaBound => "alpha_bound",
            ExitReason::ModulationFailure => "modulation_failure",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ShootConfig {
    pub t0: f64,
    pub tn: f64,
    pub dt: f64,
    pub delta: f64,
    /// ‖r‖_{H¹} ≤ M e^{−δ√ω|v|t}
    pub m: f64,
    /// |y|, |μ| ≤ M′ e^{−δ√ω|v|t}
    pub m_prime: f64,
    /// ‖u − R‖_{H¹} ≤ eps (modulation validity)
    pub eps: f64,
    /// Decompose and test the bounds every this many steps.
    pub log_every: usize,
    pub decompose: DecomposeConfig,
    pub solver: LinearSolver,
    pub keep_snapshots: bool,
}

impl ShootConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tn > self.t0 && self.t0 > 0.0) {
            return Err(pre(format!("need Tn > T0 > 0 (T0 = {}, Tn = {})", self.t0, self.tn)));
        }
        if !(self.m > 0.0 && self.m_prime > 0.0 && self.delta > 0.0 && self.eps > 0.0) {
            return Err(pre("M, M', delta and eps must be positive"));
        }
        if self.log_every == 0 {
            return Err(pre("log_every must be at least 1"));
        }
        EvolveConfig::new(self.dt, self.tn, self.t0).steps().map(|_| ())
    }

    pub fn rate(&self, params: &SolitonParams) -> f64 {
        self.delta * params.omega.sqrt() * params.speed()
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ShootRow {
    pub t: f64,
    pub r_l2: f64,
    pub r_h1: f64,
    pub y: f64,
    pub mu: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub lyapunov: f64,
    /// 𝒩 = |e^{δ√ω|v|t}α⁺|²
    pub n_cal: f64,
    /// ‖u − R‖_{H¹}
    pub dist_h1: f64,
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub y: [f64; 3],
    pub mu: f64,
    pub r: Field,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShootLog {
    pub alpha_target: f64,
    pub lambda: [f64; 2],
    /// Rows from Tn backward to the exit time.
    pub rows: Vec<ShootRow>,
    pub exit_time: f64,
    pub exit_reason: ExitReason,
    /// Sign of α⁺ at the exit row.
    pub exit_sign: f64,
    #[serde(skip)]
    pub snapshots: Vec<Snapshot>,
    pub message: Option<String>,
}

impl ShootLog {
    /// Rows in increasing time.
    pub fn ascending(&self) -> Vec<ShootRow> {
        let mut r = self.rows.clone();
        r.reverse();
        r
    }
}

/// Integrates backward from the modulated final data with α⁺(Tn) = alpha_plus
/// and decomposes every `log_every` steps until T0 or a violated bound.
pub fn backward_shoot(alpha_plus: f64, ctx: &Context, cfg: &ShootConfig) -> Result<ShootLog> {
    cfg.validate()?;
    let fd = solve_modulated_final_data(cfg.tn, alpha_plus, cfg.delta, ctx, &cfg.decompose)?;
    let (n, dt) = EvolveConfig::new(cfg.dt, cfg.tn, cfg.t0).steps()?;
    let ecfg = EvolveConfig { solver: cfg.solver, ..EvolveConfig::new(cfg.dt, cfg.tn, cfg.t0) };
    let stepper = Stepper::new(&ctx.grid, dt, ctx.params.p, &ecfg)?;
    let rate = cfg.rate(&ctx.params);
    let mut log = ShootLog {
        alpha_target: alpha_plus,
        lambda: fd.lambda,
        rows: Vec::new(),
        exit_time: cfg.tn,
        exit_reason: ExitReason::ReachedT0,
        exit_sign: 0.0,
        snapshots: Vec::new(),
        message: None,
    };
    let mut u = fd.u.values.clone();
    let mut state = fd.state;
    let mut k = 0usize;
    loop {
        let t = if k == n { cfg.t0 } else { cfg.tn + k as f64 * dt };
        if k > 0 {
            let uf = Field::from_values(&ctx.grid, u.clone())?;
            match decompose(&uf, t, ctx, (state.y, state.mu), &cfg.decompose) {
                Ok(s) => state = s,
                Err(e) => {
                    log.exit_time = t;
                    log.exit_reason = ExitReason::ModulationFailure;
                    log.exit_sign = log.rows.last().map_or(0.0, |r| r.alpha_plus.signum());
                    log.message = Some(e.to_string());
                    return Ok(log);
                }
            }
        }
        let uf = Field::from_values(&ctx.grid, u.clone())?;
        let dist = uf.sub(&ctx.soliton(t)?)?.norm_h1();
        let bound = (-rate * t).exp();
        let row = ShootRow {
            t,
            r_l2: state.r.norm_l2(),
            r_h1: state.r.norm_h1(),
            y: state.y.iter().map(|a| a * a).sum::<f64>().sqrt(),
            mu: state.mu,
            alpha_plus: state.alpha_plus,
            alpha_minus: state.alpha_minus,
            lyapunov: functionals(&uf, &ctx.params).lyapunov,
            n_cal: (state.alpha_plus / bound).powi(2),
            dist_h1: dist,
        };
        log.rows.push(row);
        if cfg.keep_snapshots {
            log.snapshots.push(Snapshot { t, y: state.y, mu: state.mu, r: state.r.clone() });
        }
        let reason = if dist > cfg.eps {
            Some(ExitReason::ModulationFailure)
        } else if row.r_h1 > cfg.m * bound {
            Some(ExitReason::RBound)
        } else if row.y > cfg.m_prime * bound || row.mu.abs() > cfg.m_prime * bound {
            Some(ExitReason::YMuBound)
        } else if row.alpha_plus.abs() > bound || row.alpha_minus.abs() > bound {
            Some(ExitReason::AlphaBound)
        } else {
            None
        };
        if let Some(reason) = reason {
            log.exit_time = t;
            log.exit_reason = reason;
            log.exit_sign = row.alpha_plus.signum();
            return Ok(log);
        }
        if k == n {
            log.exit_time = cfg.t0;
            return Ok(log);
        }
        let steps = cfg.log_every.min(n - k);
        for _ in 0..steps {
            stepper.step(&mut u)?;
        }
        k += steps;
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub alpha_plus: f64,
    pub exit_time: f64,
    pub exit_reason: ExitReason,
    pub exit_sign: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchResult {
    pub alpha_star: f64,
    /// Final bracket width.
    pub resolution: f64,
    pub bound: f64,
    pub evaluations: Vec<Evaluation>,
    pub log: ShootLog,
}

/// Sign bisection of α⁺ ↦ sign α⁺(T(α⁺)) on [−e^{−δ√ω|v|Tn}, e^{−δ√ω|v|Tn}].
pub fn shoot_search(ctx: &Context, cfg: &ShootConfig) -> Result<SearchResult> {
    let b = (-cfg.rate(&ctx.params) * cfg.tn).exp();
    let mut evals = Vec::new();
    let run = |a: f64, evals: &mut Vec<Evaluation>| -> Result<ShootLog> {
        let log = backward_shoot(a, ctx, cfg)?;
        evals.push(Evaluation { alpha_plus: a, exit_time: log.exit_time, exit_reason: log.exit_reason, exit_sign: log.exit_sign });
        Ok(log)
    };
    let lo_log = run(-b, &mut evals)?;
    let hi_log = run(b, &mut evals)?;
    let (s_lo, s_hi) = (lo_log.exit_sign, hi_log.exit_sign);
    if lo_log.exit_reason == ExitReason::ReachedT0 || hi_log.exit_reason == ExitReason::ReachedT0 || s_lo == s_hi || s_lo == 0.0 {
        return Err(num(format!(
            "no unstable crossing detected: bracket ends exit via {} (sign {s_lo}) and {} (sign {s_hi})",
            lo_log.exit_reason.as_str(),
            hi_log.exit_reason.as_str()
        )));
    }
    let (mut lo, mut hi) = (-b, b);
    let mut best = if lo_log.exit_time <= hi_log.exit_time { lo_log } else { hi_log };
    while hi - lo >= 1e-14 * b {
        let mid = 0.5 * (lo + hi);
        let log = run(mid, &mut evals)?;
        let reached = log.exit_reason == ExitReason::ReachedT0;
        let sign = log.exit_sign;
        if log.exit_time <= best.exit_time {
            best = log;
        }
        if reached {
            break;
        }
        if sign == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SearchResult { alpha_star: best.alpha_target, resolution: hi - lo, bound: b, evaluations: evals, log: best })
}

#[derive(Clone, Debug, Serialize)]
pub struct AlphaMinusReport {
    /// max_t |α⁻(t)| / (½e^{−δ√ω|v|t})
    pub max_ratio: f64,
    pub ratios: Vec<f64>,
}

pub fn alpha_minus_monitor(log: &ShootLog, rate: f64) -> AlphaMinusReport {
    let ratios: Vec<f64> = log.rows.iter().map(|r| r.alpha_minus.abs() / (0.5 * (-rate * r.t).exp())).collect();
    AlphaMinusReport { max_ratio: ratios.iter().cloned().fold(0.0, f64::max), ratios }
}

#[derive(Clone, Debug, Serialize)]
pub struct Fit {
    pub rate: f64,
    pub constant: f64,
    pub r2: f64,
    pub points: usize,
}

/// Backward growth rate of the deviation |α⁺_a(t) − α⁺_b(t)| between two
/// logs, fitted where it exceeds `lift` times its value at Tn.
pub fn deviation_growth(a: &ShootLog, b: &ShootLog, lift: f64) -> Fit {
    let m = a.rows.len().min(b.rows.len());
    let d0 = (a.rows[0].alpha_plus - b.rows[0].alpha_plus).abs();
    let (ts, ys): (Vec<f64>, Vec<f64>) = (0..m)
        .map(|i| (a.rows[i].t, (a.rows[i].alpha_plus - b.rows[i].alpha_plus).abs()))
        .filter(|(_, d)| *d > lift * d0)
        .unzip();
    let (k, c, r2) = exp_decay(&ts, &ys, 0.0);
    Fit { rate: k, constant: c, r2, points: ts.len() }
}

/// ‖u(t) − R(t)‖_{H¹} ≤ C e^{−δ√ω|v|t}: returns the smallest such C.
pub fn uniform_constant(log: &ShootLog, rate: f64) -> f64 {
    log.rows.iter().map(|r| r.dist_h1 * (rate * r.t).exp()).fold(0.0, f64::max)
}

/// Drift of the Lyapunov functional per unit time over windows of length
/// `span`, fitted as C₁e^{−k t}. Windows ending after `t_max` are dropped.
pub fn lyapunov_drift(log: &ShootLog, span: f64, t_max: f64) -> (Fit, Vec<(f64, f64)>) {
    let rows: Vec<ShootRow> = log.ascending().into_iter().filter(|r| r.t <= t_max + 1e-9).collect();
    let mut pts = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let Some(j) = (i + 1..rows.len()).find(|&j| rows[j].t - rows[i].t >= span * (1.0 - 1e-9)) else { break };
        let dt = rows[j].t - rows[i].t;
        pts.push((0.5 * (rows[i].t + rows[j].t), ((rows[j].lyapunov - rows[i].lyapunov) / dt).abs()));
        i = j;
    }
    let ts: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (k, c, r2) = exp_decay(&ts, &ys, 0.0);
    (Fit { rate: k, constant: c, r2, points: ts.len() }, pts)
}

/// |Δμ/Δt| + |Δy/Δt| ≤ C(‖h‖²_{H¹} + e^{−2δ√ω|v|t}); returns the fitted C.
pub fn modulation_rates(log: &ShootLog, rate: f64) -> f64 {
    let rows = log.ascending();
    rows.windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            let slope = ((w[1].mu - w[0].mu) / dt).abs() + ((w[1].y - w[0].y) / dt).abs();
            let tm = 0.5 * (w[0].t + w[1].t);
            let h1 = 0.5 * (w[0].r_h1 + w[1].r_h1);
            slope / (h1 * h1 + (-2.0 * rate * tm).exp())
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct CoercivityRow {
    pub t: f64,
    pub h_h1_sq: f64,
    pub phi: f64,
    pub alpha_sq: f64,
    pub tail: f64,
    /// ‖h‖²_{H¹} / (Φ̃(h) + (α⁺)² + (α⁻)² + M²e^{−4δ√ω|v|t})
    pub ratio: f64,
}

/// Φ̃(h) = ‖∇h‖² + ω‖h‖² − ∫(ΨQ̃)^{p−1}(p h₁² + h₂²)
pub fn translated_form(ctx: &Context, t: f64, y: [f64; 3], h: &Field) -> f64 {
    let g = &ctx.grid;
    let s = ctx.shift(t, y);
    let p = ctx.params.p;
    let pot: f64 = (0..g.len())
        .map(|k| {
            let q = ctx.gs.eval(ctx.rel(k, s).1).0 * ctx.psi.psi[k];
            let z = h.values[k];
            q.powf(p - 1.0) * (p * z.re * z.re + z.im * z.im)
        })
        .sum::<f64>()
        * g.cell();
    g.grad_sq(&h.values) + ctx.params.omega * h.norm_l2().powi(2) - pot
}

/// Translated coercivity along a logged run (needs snapshots).
pub fn coercivity_along_trajectory(ctx: &Context, log: &ShootLog, m: f64, rate: f64) -> Result<Vec<CoercivityRow>> {
    if log.snapshots.len() != log.rows.len() {
        return Err(pre("coercivity check needs a log with snapshots"));
    }
    Ok(log
        .snapshots
        .iter()
        .zip(&log.rows)
        .map(|(s, row)| {
            let st = ModulationState {
                t: s.t,
                y: s.y,
                mu: s.mu,
                r: s.r.clone(),
                alpha_plus: row.alpha_plus,
                alpha_minus: row.alpha_minus,
                iterations: 0,
                residual: 0.0,
            };
            let h = st.h(ctx);
            let h1 = h.norm_h1().powi(2);
            let phi = translated_form(ctx, s.t, s.y, &h);
            let alpha_sq = row.alpha_plus.powi(2) + row.alpha_minus.powi(2);
            let tail = m * m * (-4.0 * rate * s.t).exp();
            let den = phi + alpha_sq + tail;
            CoercivityRow { t: s.t, h_h1_sq: h1, phi, alpha_sq, tail, ratio: if h1 == 0.0 { 0.0 } else { h1 / den } }
        })
        .collect())
}

/// Slope and R² of ln 𝒩 against t over the last `k` rows before the exit.
pub fn exit_slope(log: &ShootLog, k: usize) -> (f64, f64) {
    let m = log.rows.len();
    let from = m.saturating_sub(k);
    let ts: Vec<f64> = log.rows[from..].iter().map(|r| r.t).collect();
    let ys: Vec<f64> = log.rows[from..].iter().map(|r| r.n_cal.max(1e-300).ln()).collect();
    let (a, _, r2) = linear(&ts, &ys);
    (a, r2)
}

/// Problem description for a shooting run with an obstacle of radius `a`
/// and the soliton moving along the first axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShootSetup {
    pub p: f64,
    pub omega: f64,
    pub dim: usize,
    pub v: f64,
    pub a: f64,
    pub r1: f64,
    pub r2: f64,
    pub h: f64,
    pub t0: f64,
    pub tn: f64,
    pub dt: f64,
    pub delta: f64,
    pub log_every: usize,
    /// Defaults to 10 e^{δ√ω|v|Tn}‖r(Tn)‖_{H¹} at α⁺ = e^{−δ√ω|v|Tn}.
    pub m: Option<f64>,
    /// Defaults to M².
    pub m_prime: Option<f64>,
    /// Defaults to 0.1‖Q_ω‖_{L²}.
    pub eps: Option<f64>,
    /// Free grid for the eigenmodes.
    pub mode_half_width: f64,
    pub mode_n: usize,
}

impl ShootSetup {
    pub fn one_dimensional(p: f64, v: f64) -> ShootSetup {
        ShootSetup {
            p,
            omega: 1.0,
            dim: 1,
            v,
            a: 1.0,
            r1: 1.5,
            r2: 3.0,
            h: 0.02,
            t0: 8.0,
            tn: 14.0,
            dt: 0.0025,
            delta: 0.3,
            log_every: 20,
            m: None,
            m_prime: None,
            eps: None,
            mode_half_width: 20.0,
            mode_n: 2047,
        }
    }

    pub fn build(&self) -> Result<(Context, ShootConfig)> {
        if !(self.h > 0.0 && self.v != 0.0 && self.a > 0.0 && self.r2 > self.r1 && self.r1 > self.a) {
            return Err(pre("need h > 0, v != 0 and a < R1 < R2"));
        }
        let gs = GroundState::solve(self.p, self.omega, self.dim, 1e-13)?;
        let mode_grid = Grid::new(self.dim, self.mode_half_width, self.mode_n, Obstacle::None)?;
        let modes = solve_unstable_pair(&LinearizedPair::assemble(&gs, &mode_grid)?)?;
        let params = SolitonParams::new(self.p, self.omega, [self.v, 0.0, 0.0]);
        let l = self.v.abs() * self.tn + 10.0 / (gs.delta_fit * self.omega.sqrt()) + 2.0;
        let n = ((2.0 * l / self.h).round() as usize) | 1;
        let grid = Grid::new(self.dim, l, n, Obstacle::Ball { a: self.a })?;
        let psi = CutoffPsi::new(&grid, self.r1, self.r2)?;
        let ctx = Context::new(params, gs, modes, psi, &grid)?;
        let dc = DecomposeConfig::for_ground_state(&ctx.gs);
        let mut cfg = ShootConfig {
            t0: self.t0,
            tn: self.tn,
            dt: self.dt,
            delta: self.delta,
            m: 1.0,
            m_prime: 1.0,
            eps: self.eps.unwrap_or(dc.eps_mod),
            log_every: self.log_every,
            decompose: dc,
            solver: LinearSolver::Auto,
            keep_snapshots: false,
        };
        cfg.m = match self.m {
            Some(m) => m,
            None => {
                let rate = cfg.rate(&ctx.params);
                let b = (-rate * self.tn).exp();
                let fd = solve_modulated_final_data(self.tn, b, self.delta, &ctx, &dc)?;
                10.0 * (rate * self.tn).exp() * fd.state.r.norm_h1()
            }
        };
        cfg.m_prime = self.m_prime.unwrap_or(cfg.m * cfg.m);
        cfg.validate()?;
        Ok((ctx, cfg))
    }
}
