//! Boosted soliton ansatz R = Q_ω(x − x₀ − tv)Ψ e^{iφ}, its eigenmode
//! analogues, the conserved functionals and the scale-invariant thresholds.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{pre, Result};
use crate::grid::{CutoffPsi, Field, Grid};
use crate::ground_state::GroundState;
use crate::linearized::EigenModes;
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolitonParams {
    pub omega: f64,
    pub v: [f64; 3],
    pub theta0: f64,
    pub x0: [f64; 3],
    pub p: f64,
}

impl SolitonParams {
    pub fn new(p: f64, omega: f64, v: [f64; 3]) -> SolitonParams {
        SolitonParams { omega, v, theta0: 0.0, x0: [0.0; 3], p }
    }

    pub fn speed(&self) -> f64 {
        (self.v[0] * self.v[0] + self.v[1] * self.v[1] + self.v[2] * self.v[2]).sqrt()
    }

    pub fn center(&self, t: f64) -> [f64; 3] {
        [self.x0[0] + t * self.v[0], self.x0[1] + t * self.v[1], self.x0[2] + t * self.v[2]]
    }

    /// Time part of the phase, −¼|v|²t + ωt + θ₀, reduced mod 2π.
    pub fn time_phase(&self, t: f64) -> f64 {
        let v2 = self.speed().powi(2);
        ((-0.25 * v2 * t).rem_euclid(TAU) + (self.omega * t).rem_euclid(TAU) + self.theta0).rem_euclid(TAU)
    }

    /// φ(t, x) = ½x·v − ¼|v|²t + ωt + θ₀, reduced mod 2π.
    pub fn phase(&self, t: f64, x: [f64; 3]) -> f64 {
        let xv = 0.5 * (x[0] * self.v[0] + x[1] * self.v[1] + x[2] * self.v[2]);
        (xv.rem_euclid(TAU) + self.time_phase(t)).rem_euclid(TAU)
    }
}

fn check_center(params: &SolitonParams, grid: &Grid, t: f64, decay: f64) -> Result<[f64; 3]> {
    let c = params.center(t);
    let margin = 10.0 / (decay * params.omega.sqrt());
    for (j, cj) in c.iter().enumerate().take(grid.dim()) {
        if cj.abs() + margin > grid.half_width() {
            return Err(pre(format!(
                "soliton center {cj:.3} on axis {j} at t = {t} is within {margin:.2} of the box edge {}",
                grid.half_width()
            )));
        }
    }
    Ok(c)
}

fn check_gs(params: &SolitonParams, gs: &GroundState) -> Result<()> {
    if (gs.omega - params.omega).abs() > 1e-12 * params.omega || (gs.p - params.p).abs() > 1e-14 {
        return Err(pre("ground state and soliton parameters disagree on (p, omega)"));
    }
    Ok(())
}

/// R(t, ·) with the cutoff, or H(t, ·) when `psi` is None.
pub fn soliton_field(
    params: &SolitonParams,
    gs: &GroundState,
    t: f64,
    grid: &Arc<Grid>,
    psi: Option<&CutoffPsi>,
) -> Result<Field> {
    check_gs(params, gs)?;
    let c = check_center(params, grid, t, gs.delta_fit)?;
    let tp = params.time_phase(t);
    let values = (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            let q = gs.eval(dist(x, c)).0;
            let w = psi.map_or(1.0, |p| p.psi[k]);
            C64::from_polar(q * w, phase_at(params, x, tp))
        })
        .collect();
    Field::from_values(grid, values)
}

/// Y_±(t, ·) = 𝒴^±_ω(x − x₀ − tv)Ψ e^{iφ}; `sign` > 0 selects 𝒴⁺.
pub fn eigenmode_field(
    params: &SolitonParams,
    modes: &EigenModes,
    t: f64,
    grid: &Arc<Grid>,
    psi: Option<&CutoffPsi>,
    sign: f64,
) -> Result<Field> {
    if (modes.omega - params.omega).abs() > 1e-12 * params.omega {
        return Err(pre("eigenmodes were computed at a different omega"));
    }
    let c = check_center(params, grid, t, 1.0)?;
    let tp = params.time_phase(t);
    let s = sign.signum();
    let values = (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            let (y1, y2) = modes.eval(dist(x, c));
            let w = psi.map_or(1.0, |p| p.psi[k]);
            C64::new(y1 * w, s * y2 * w) * C64::from_polar(1.0, phase_at(params, x, tp))
        })
        .collect();
    Field::from_values(grid, values)
}

fn phase_at(params: &SolitonParams, x: [f64; 3], time_phase: f64) -> f64 {
    let xv = 0.5 * (x[0] * params.v[0] + x[1] * params.v[1] + x[2] * params.v[2]);
    xv.rem_euclid(TAU) + time_phase
}

fn dist(x: [f64; 3], c: [f64; 3]) -> f64 {
    ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct Functionals {
    pub mass: f64,
    pub energy: f64,
    pub momentum: Vec<f64>,
    pub lyapunov: f64,
}

/// Σ|u|^{p+1} h^d
pub fn potential_sum(u: &Field, p: f64) -> f64 {
    let g = u.grid();
    u.values.iter().map(|z| z.norm_sqr().powf(0.5 * (p + 1.0))).sum::<f64>() * g.cell()
}

/// M, E, P and E + (ω/2 + |v|²/8)M − (v/2)·P for the given parameters.
pub fn functionals(u: &Field, params: &SolitonParams) -> Functionals {
    let g = u.grid();
    let mass = u.norm_l2().powi(2);
    let energy = 0.5 * g.grad_sq(&u.values) - potential_sum(u, params.p) / (params.p + 1.0);
    let momentum: Vec<f64> = g
        .gradient(&u.values)
        .iter()
        .map(|du| du.iter().zip(&u.values).map(|(a, b)| (a * b.conj()).im).sum::<f64>() * g.cell())
        .collect();
    let v2 = params.speed().powi(2);
    let vp: f64 = momentum.iter().zip(&params.v).map(|(a, b)| a * b).sum();
    let lyapunov = energy + (0.5 * params.omega + v2 / 8.0) * mass - 0.5 * vp;
    Functionals { mass, energy, momentum, lyapunov }
}

/// s = 3/2 − 2/(p−1) = (3p − 7)/(2p − 2), evaluated in exact rational
/// arithmetic when p is a fraction with small denominator.
pub fn threshold_exponent(p: f64) -> f64 {
    for den in 1..=64i64 {
        let num = (p * den as f64).round();
        if (num / den as f64 - p).abs() <= 1e-12 * p.abs().max(1.0) {
            let num = num as i64;
            return (3 * num - 7 * den) as f64 / (2 * (num - den)) as f64;
        }
    }
    1.5 - 2.0 / (p - 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct ThresholdReport {
    pub s: f64,
    /// p outside (7/3, 5), where the formula is used outside its stated range.
    pub flagged: bool,
    /// ‖u‖^{1−s}‖∇u‖^s
    pub scale_inv_grad: f64,
    /// M(u)^{1−s}E(u)^s, None when E(u) < 0 and s is not an integer.
    pub scale_inv_me: Option<f64>,
    pub q_grad: f64,
    pub q_me: Option<f64>,
}

pub fn threshold_report(u: &Field, p: f64, gs: &GroundState) -> ThresholdReport {
    let s = threshold_exponent(p);
    let g = u.grid();
    let l2 = u.norm_l2();
    let grad = g.grad_sq(&u.values).sqrt();
    let mass = l2 * l2;
    let energy = 0.5 * grad * grad - potential_sum(u, p) / (p + 1.0);
    let me = |m: f64, e: f64| {
        let v = m.powf(1.0 - s) * e.powf(s);
        v.is_finite().then_some(v)
    };
    let qi = gs.radial_integrals();
    ThresholdReport {
        s,
        flagged: !(p > 7.0 / 3.0 && p < 5.0),
        scale_inv_grad: l2.powf(1.0 - s) * grad.powf(s),
        scale_inv_me: me(mass, energy),
        q_grad: qi.mass.sqrt().powf(1.0 - s) * qi.grad_sq.sqrt().powf(s),
        q_me: me(qi.mass, qi.energy),
    }
}

/// u(x − vt)e^{i(x·v/2 − |v|²t/4)}, with the shift rounded to whole lattice
/// cells so that mass is preserved exactly.
pub fn galilean_boost(u: &Field, v: [f64; 3], t: f64) -> Result<Field> {
    let g = u.grid();
    let d = g.dim();
    let n = g.n() as i64;
    let mut shift = [0i64; 3];
    for j in 0..d {
        shift[j] = (v[j] * t / g.h()).round() as i64;
    }
    let total: f64 = u.values.iter().map(|z| z.norm_sqr()).sum();
    let mut lost = 0.0;
    let mut out = vec![C64::new(0.0, 0.0); g.len()];
    let v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    for (k, val) in u.values.iter().enumerate() {
        let mut idx = g.lattice_index(k) as i64;
        let mut stride = 1i64;
        let mut target = 0i64;
        let mut inside = true;
        for axis in (0..d).rev() {
            let i = idx % n + shift[axis];
            idx /= n;
            if i < 0 || i >= n {
                inside = false;
            }
            target += i * stride;
            stride *= n;
        }
        match inside.then(|| g.active_index(target as usize)).flatten() {
            Some(j) => out[j] = *val,
            None => lost += val.norm_sqr(),
        }
    }
    if lost > 1e-12 * total.max(1e-300) {
        return Err(pre(format!(
            "boost shift exceeds the box margin (would drop {:.2e} of the mass)",
            lost / total
        )));
    }
    for (k, z) in out.iter_mut().enumerate() {
        let x = g.point(k);
        let ph = 0.5 * (x[0] * v[0] + x[1] * v[1] + x[2] * v[2]) - 0.25 * v2 * t;
        *z *= C64::from_polar(1.0, ph.rem_euclid(TAU));
    }
    Field::from_values(g, out)
}
