//! Linearized operators L± around the ground state, the unstable pair of the
//! block operator, the coercivity certificate and the biorthogonal family.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{num, pre, Error, Result};
use crate::grid::{Field, Grid, Obstacle};
use crate::ground_state::GroundState;
use crate::linalg::{BandLu, BandMatrix};
use crate::C64;

/// L⁺ = −Δ + ω − pQ^{p−1}, L⁻ = −Δ + ω − Q^{p−1} on a whole-space box.
#[derive(Clone, Debug)]
pub struct LinearizedPair {
    pub grid: Arc<Grid>,
    pub omega: f64,
    pub p: f64,
    /// Q_ω sampled on the grid.
    pub q: Vec<f64>,
    /// ∂_{x_j}Q_ω, evaluated from the radial profile.
    pub dq: Vec<Vec<f64>>,
    pot: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct KernelResiduals {
    /// ‖L⁻Q‖ / ‖Q‖_{H¹}
    pub minus: f64,
    /// ‖L⁺∂₁Q‖ / ‖∂₁Q‖_{H¹}
    pub plus: f64,
}

impl LinearizedPair {
    pub fn assemble(gs: &GroundState, grid: &Arc<Grid>) -> Result<LinearizedPair> {
        if grid.obstacle() != Obstacle::None {
            return Err(pre("spectral work needs a grid without obstacle"));
        }
        if grid.dim() != gs.dim {
            return Err(pre(format!("grid dim {} differs from ground state dim {}", grid.dim(), gs.dim)));
        }
        let d = grid.dim();
        let mut q = Vec::with_capacity(grid.len());
        let mut dq = vec![Vec::with_capacity(grid.len()); d];
        for k in 0..grid.len() {
            let x = grid.point(k);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            let (qv, dqv, _) = gs.eval(r);
            q.push(qv);
            for (j, col) in dq.iter_mut().enumerate() {
                col.push(if r > 0.0 { dqv * x[j] / r } else { 0.0 });
            }
        }
        let mut jump: f64 = 0.0;
        for k in 0..grid.len() {
            for axis in 0..d {
                if let Some(j) = grid.neighbor(k, axis, true) {
                    jump = jump.max((q[j] - q[k]).abs());
                }
            }
        }
        if jump > 0.2 * gs.q0 {
            return Err(pre(format!(
                "grid too coarse: Q changes by {:.0}% of Q(0) across one cell",
                100.0 * jump / gs.q0
            )));
        }
        let pot = q.iter().map(|v| v.powf(gs.p - 1.0)).collect();
        Ok(LinearizedPair { grid: grid.clone(), omega: gs.omega, p: gs.p, q, dq, pot })
    }

    /// Operators with the profile Q replaced by zero (free −Δ + ω).
    pub fn free(grid: &Arc<Grid>, omega: f64, p: f64) -> LinearizedPair {
        let n = grid.len();
        LinearizedPair {
            grid: grid.clone(),
            omega,
            p,
            q: vec![0.0; n],
            dq: vec![vec![0.0; n]; grid.dim()],
            pot: vec![0.0; n],
        }
    }

    fn apply(&self, c: f64, h: &[f64]) -> Vec<f64> {
        let mut out = self.grid.laplacian_vec(h);
        for k in 0..h.len() {
            out[k] = -out[k] + (self.omega - c * self.pot[k]) * h[k];
        }
        out
    }

    pub fn apply_plus(&self, h: &[f64]) -> Vec<f64> {
        self.apply(self.p, h)
    }

    pub fn apply_minus(&self, h: &[f64]) -> Vec<f64> {
        self.apply(1.0, h)
    }

    /// −L⁻L⁺ h
    pub fn apply_composed(&self, h: &[f64]) -> Vec<f64> {
        self.apply_minus(&self.apply_plus(h)).into_iter().map(|v| -v).collect()
    }

    fn rows(&self, c: f64) -> Vec<Vec<(usize, f64)>> {
        let g = &self.grid;
        let inv = 1.0 / (g.h() * g.h());
        (0..g.len())
            .map(|k| {
                let mut row = vec![(k, 2.0 * g.dim() as f64 * inv + self.omega - c * self.pot[k])];
                for axis in 0..g.dim() {
                    for plus in [false, true] {
                        if let Some(j) = g.neighbor(k, axis, plus) {
                            row.push((j, -inv));
                        }
                    }
                }
                row
            })
            .collect()
    }

    /// Band matrix of L⁻L⁺ + τ.
    fn composed_band(&self, tau: f64) -> BandMatrix<f64> {
        let (lm, lp) = (self.rows(1.0), self.rows(self.p));
        let bw = 2 * self.grid.bandwidth().max(1);
        let mut m = BandMatrix::zeros(self.grid.len(), bw, bw);
        for (i, row) in lm.iter().enumerate() {
            m.add(i, i, tau);
            for &(k, a) in row {
                for &(j, b) in &lp[k] {
                    m.add(i, j, a * b);
                }
            }
        }
        m
    }

    pub fn kernel_residuals(&self) -> KernelResiduals {
        let g = &self.grid;
        let lq = self.apply_minus(&self.q);
        let ldq = self.apply_plus(&self.dq[0]);
        KernelResiduals { minus: g.l2(&lq) / g.h1(&self.q), plus: g.l2(&ldq) / g.h1(&self.dq[0]) }
    }

    /// 1 − Δ, factored; the H¹ Gram operator.
    fn h1_gram(&self) -> Result<BandLu<f64>> {
        self.grid.band_operator(1.0, -1.0, None).factor()
    }
}

/// Samples of a radial function along the first axis through the origin,
/// interpolated by 4-point Lagrange polynomials.
#[derive(Clone, Debug, Serialize)]
pub struct RadialProfile {
    pub x0: f64,
    pub h: f64,
    pub values: Vec<f64>,
}

impl RadialProfile {
    fn from_axis(grid: &Grid, u: &[f64]) -> Result<RadialProfile> {
        let n = grid.n();
        if grid.dim() > 1 && n % 2 == 0 {
            return Err(pre("mode profiles in dim >= 2 need an odd number of points per axis"));
        }
        let mid = (n - 1) / 2;
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let mut idx = 0usize;
            for axis in 0..grid.dim() {
                idx = idx * n + if axis == 0 { i } else { mid };
            }
            let k = grid.active_index(idx).ok_or_else(|| pre("axis point is masked"))?;
            values.push(u[k]);
        }
        Ok(RadialProfile { x0: grid.point(grid.active_index(0).unwrap())[0], h: grid.h(), values })
    }

    pub fn eval(&self, r: f64) -> f64 {
        let n = self.values.len();
        let s = (r - self.x0) / self.h;
        if s < -1.0 || s > n as f64 {
            return 0.0;
        }
        let i = s.floor() as i64;
        let t = s - i as f64;
        let at = |j: i64| if j < 0 || j >= n as i64 { 0.0 } else { self.values[j as usize] };
        let (a, b, c, d) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        // Lagrange weights at nodes −1, 0, 1, 2
        a * (-t * (t - 1.0) * (t - 2.0) / 6.0)
            + b * ((t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0)
            + c * (-(t + 1.0) * t * (t - 2.0) / 2.0)
            + d * ((t + 1.0) * t * (t - 1.0) / 6.0)
    }
}

/// Unstable pair: L⁺y₁ = e₀y₂ and L⁻y₂ = −e₀y₁, so that 𝒴⁺ = y₁ + iy₂ and
/// 𝒴⁻ = conj 𝒴⁺ span the real eigendirections ±e₀ of the linearized flow.
#[derive(Clone, Debug)]
pub struct EigenModes {
    pub e0: f64,
    pub omega: f64,
    pub p: f64,
    pub grid: Arc<Grid>,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// −Im∫𝒴⁺𝒴̄⁻ = −2∫y₁y₂ after normalization.
    pub pairing: f64,
    /// Same quantity before normalization.
    pub raw_pairing: f64,
    pub profile_y1: RadialProfile,
    pub profile_y2: RadialProfile,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct PairResiduals {
    /// ‖L⁺y₁ − e₀y₂‖ / ‖(y₁,y₂)‖_{H¹}
    pub plus: f64,
    /// ‖L⁻y₂ + e₀y₁‖ / ‖(y₁,y₂)‖_{H¹}
    pub minus: f64,
}

impl EigenModes {
    pub fn residuals(&self, pair: &LinearizedPair) -> PairResiduals {
        let g = &pair.grid;
        let lp = pair.apply_plus(&self.y1);
        let lm = pair.apply_minus(&self.y2);
        let rp: Vec<f64> = lp.iter().zip(&self.y2).map(|(a, b)| a - self.e0 * b).collect();
        let rm: Vec<f64> = lm.iter().zip(&self.y1).map(|(a, b)| a + self.e0 * b).collect();
        let scale = (g.h1(&self.y1).powi(2) + g.h1(&self.y2).powi(2)).sqrt();
        PairResiduals { plus: g.l2(&rp) / scale, minus: g.l2(&rm) / scale }
    }

    /// 𝒴⁺ (sign > 0) or 𝒴⁻ on the spectral grid.
    pub fn field(&self, sign: f64) -> Field {
        let v = self.y1.iter().zip(&self.y2).map(|(a, b)| C64::new(*a, sign.signum() * b)).collect();
        Field::from_values(&self.grid, v).expect("finite modes")
    }

    /// (y₁, y₂) at radius r.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        (self.profile_y1.eval(r), self.profile_y2.eval(r))
    }

    /// Decay rate of |𝒴⁺| along the axis, fitted where it lies between
    /// 1e−10 and 1e−3 of its maximum.
    pub fn decay_rate(&self) -> f64 {
        let a = &self.profile_y1;
        let amp: Vec<f64> =
            a.values.iter().zip(&self.profile_y2.values).map(|(u, v)| (u * u + v * v).sqrt()).collect();
        let top = amp.iter().cloned().fold(0.0, f64::max);
        let (xs, ys): (Vec<f64>, Vec<f64>) = amp
            .iter()
            .enumerate()
            .map(|(i, v)| (a.x0 + i as f64 * a.h, *v))
            .filter(|(x, v)| *x > 0.0 && *v < 1e-3 * top && *v > 1e-10 * top)
            .map(|(x, v)| (x, v.ln()))
            .unzip();
        -crate::fit::linear(&xs, &ys).0
    }
}

/// Largest positive eigenvalue e₀² of −L⁻L⁺ by shifted inverse iteration with
/// indefinite-form Rayleigh updates of the shift.
pub fn solve_unstable_pair(pair: &LinearizedPair) -> Result<EigenModes> {
    let d = pair.grid.dim();
    if pair.p <= 1.0 + 4.0 / d as f64 {
        return Err(Error::SpectrallyStable { p: pair.p, dim: d });
    }
    let g = &pair.grid;
    let n = g.len();
    let w2 = pair.omega * pair.omega;
    let mut tau = 100.0 * w2;
    let mut lu = pair.composed_band(tau).factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut deflate: Vec<Vec<f64>> = vec![pair.q.clone()];
    deflate.extend(pair.dq.iter().cloned());
    let deflate = Orthogonalizer::new(deflate);

    let rayleigh = |x: &[f64]| {
        let lx = pair.apply_plus(x);
        let top = dot(&pair.apply_minus(&lx), &lx);
        -top / dot(&lx, x)
    };
    let mut est = f64::NAN;
    let mut prev = f64::NAN;
    let mut shifts = 0;
    let mut iterations = 0;
    let mut converged = false;
    let lap_top = 4.0 * d as f64 / (g.h() * g.h()) + pair.omega;
    let a_norm = lap_top * lap_top;
    let mut steady = 0;
    for it in 0..400 {
        iterations = it + 1;
        if it < 20 {
            deflate.project(&mut x);
        }
        lu.solve_in_place(&mut x);
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        prev = est;
        est = rayleigh(&x);
        let ax = pair.apply_composed(&x);
        let res: f64 = ax.iter().zip(&x).map(|(a, b)| (a - est * b).powi(2)).sum::<f64>().sqrt();
        steady = if ((est - prev) / est).abs() < 1e-12 { steady + 1 } else { 0 };
        if it >= 20 && est > 0.0 && (res < 1e-11 * est.max(w2) || (steady >= 3 && res < 1e-12 * a_norm)) {
            converged = true;
            break;
        }
        let stable = est > 0.0 && ((est - prev) / est).abs() < 1e-2;
        if it >= 20 && stable && shifts < 8 && (est - tau).abs() > 1e-8 * est {
            tau = est;
            lu = pair.composed_band(tau).factor()?;
            shifts += 1;
        }
    }
    if !converged || !(est > 0.0) {
        return Err(num(format!(
            "unstable eigenpair not found (last estimate {est:e}, previous {prev:e}, {iterations} iterations)"
        )));
    }
    let e0 = est.sqrt();
    let mut y1 = x;
    let mut y2: Vec<f64> = pair.apply_plus(&y1).into_iter().map(|v| v / e0).collect();
    let raw = -2.0 * g.inner(&y1, &y2);
    // raw = −(2/e₀)(L⁺y₁, y₁), positive for a genuine unstable pair
    if !(raw > 0.0) {
        return Err(num(format!("unstable pair has non-positive pairing {raw:e}")));
    }
    let s = raw.sqrt().recip();
    y1.iter_mut().for_each(|v| *v *= s);
    y2.iter_mut().for_each(|v| *v *= s);
    let pairing = -2.0 * g.inner(&y1, &y2);
    let profile_y1 = RadialProfile::from_axis(g, &y1)?;
    let profile_y2 = RadialProfile::from_axis(g, &y2)?;
    Ok(EigenModes {
        e0,
        omega: pair.omega,
        p: pair.p,
        grid: g.clone(),
        y1,
        y2,
        pairing,
        raw_pairing: raw,
        profile_y1,
        profile_y2,
        iterations,
    })
}

/// Modes at ω = 1 mapped to frequency ω by x ↦ ω^{1/4}𝒴(√ω x), checked
/// against the ω-operators.
#[derive(Clone, Debug)]
pub struct RescaledModes {
    pub modes: EigenModes,
    /// Indefinite-form Rayleigh quotient of the ω-operators at the scaled mode.
    pub e_rayleigh: f64,
    /// ω^{3/2} e₀
    pub e_claimed: f64,
    /// ln(e_ω / e₀) / ln ω (NaN at ω = 1)
    pub kappa: f64,
    /// Pairing of the scaled modes with the ω^{1/4} prefactor, before renormalization.
    pub scaled_pairing: f64,
    pub residuals: PairResiduals,
}

pub fn rescale_modes(modes: &EigenModes, target: &LinearizedPair) -> Result<RescaledModes> {
    if modes.omega != 1.0 {
        return Err(pre("rescale_modes expects modes computed at omega = 1"));
    }
    let omega = target.omega;
    if !(omega > 0.0) {
        return Err(pre(format!("frequency omega must be positive (got {omega})")));
    }
    if (target.p - modes.p).abs() > 1e-14 {
        return Err(pre("modes and operators have different exponents"));
    }
    let g = &target.grid;
    let sw = omega.sqrt();
    let pref = omega.powf(0.25);
    let mut y1 = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        let x = g.point(k);
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        y1.push(pref * modes.profile_y1.eval(sw * r));
    }
    let lx = target.apply_plus(&y1);
    let e2 = -dot(&target.apply_minus(&lx), &lx) / dot(&lx, &y1);
    if !(e2 > 0.0) {
        return Err(num(format!("scaled mode has non-positive Rayleigh quotient {e2:e}")));
    }
    let e = e2.sqrt();
    let y2_scaled: Vec<f64> = (0..g.len())
        .map(|k| {
            let x = g.point(k);
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            pref * modes.profile_y2.eval(sw * r)
        })
        .collect();
    let scaled_pairing = -2.0 * g.inner(&y1, &y2_scaled);
    let mut y2: Vec<f64> = lx.iter().map(|v| v / e).collect();
    let raw = -2.0 * g.inner(&y1, &y2);
    let s = raw.abs().sqrt().recip();
    y1.iter_mut().for_each(|v| *v *= s);
    y2.iter_mut().for_each(|v| *v *= s);
    let out = EigenModes {
        e0: e,
        omega,
        p: modes.p,
        grid: g.clone(),
        pairing: -2.0 * g.inner(&y1, &y2),
        raw_pairing: raw,
        profile_y1: RadialProfile::from_axis(g, &y1)?,
        profile_y2: RadialProfile::from_axis(g, &y2)?,
        y1,
        y2,
        iterations: 0,
    };
    let residuals = out.residuals(target);
    let kappa = if omega == 1.0 { f64::NAN } else { (e / modes.e0).ln() / omega.ln() };
    Ok(RescaledModes { modes: out, e_rayleigh: e, e_claimed: omega.powf(1.5) * modes.e0, kappa, scaled_pairing, residuals })
}

/// Fits e_ω = C ω^κ; returns (κ, max relative deviation of the fit).
pub fn fit_kappa(omegas: &[f64], es: &[f64]) -> (f64, f64) {
    let xs: Vec<f64> = omegas.iter().map(|w| w.ln()).collect();
    let ys: Vec<f64> = es.iter().map(|e| e.ln()).collect();
    let (k, b, _) = crate::fit::linear(&xs, &ys);
    let dev = xs.iter().zip(es).map(|(x, e)| ((k * x + b).exp() / e - 1.0).abs()).fold(0.0, f64::max);
    (k, dev)
}

/// Orthogonal projector onto the complement of a span (plain ℓ² inner product).
#[derive(Clone, Debug)]
pub struct Orthogonalizer {
    basis: Vec<Vec<f64>>,
}

impl Orthogonalizer {
    pub fn new(vectors: Vec<Vec<f64>>) -> Orthogonalizer {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for mut v in vectors {
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(a, b)| *a -= c * b);
                }
            }
            let nv = norm(&v);
            if nv > 1e-300 {
                v.iter_mut().for_each(|a| *a /= nv);
                basis.push(v);
            }
        }
        Orthogonalizer { basis }
    }

    pub fn project(&self, x: &mut [f64]) {
        for _ in 0..2 {
            for b in &self.basis {
                let c = dot(x, b);
                x.iter_mut().zip(b).for_each(|(a, b)| *a -= c * b);
            }
        }
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let nx = norm(x).max(1e-300);
        self.basis.iter().map(|b| dot(x, b).abs() / nx).fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Smallest value of (Ax, x)/(Bx, x) over the range of `proj`, by LOBPCG with
/// block size one. Returns (value, minimizer, iterations).
pub fn lobpcg_min(
    apply_a: impl Fn(&[f64]) -> Vec<f64>,
    apply_b: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&mut [f64]),
    proj: &Orthogonalizer,
    mut x: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, Vec<f64>, usize)> {
    proj.project(&mut x);
    let bn = dot(&apply_b(&x), &x).sqrt();
    if !(bn > 0.0) {
        return Err(pre("LOBPCG start vector vanishes after projection"));
    }
    x.iter_mut().for_each(|v| *v /= bn);
    let mut ax = apply_a(&x);
    let mut bx = apply_b(&x);
    let mut rho = dot(&ax, &x);
    let mut p: Option<Vec<f64>> = None;
    for it in 1..=max_iter {
        let mut w: Vec<f64> = ax.iter().zip(&bx).map(|(a, b)| a - rho * b).collect();
        proj.project(&mut w);
        let rn = norm(&w);
        if rn <= tol * rho.abs().max(1.0) * norm(&bx).max(1e-300) {
            return Ok((rho, x, it));
        }
        precond(&mut w);
        proj.project(&mut w);
        let mut basis = vec![x.clone(), w];
        if let Some(pv) = &p {
            basis.push(pv.clone());
        }
        let (theta, c, kept) = ritz(&apply_a, &apply_b, &basis)?;
        let mut xn = vec![0.0; x.len()];
        let mut pn = vec![0.0; x.len()];
        for (j, v) in kept.iter().enumerate() {
            let cj = c[j];
            xn.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += cj * b);
            if j > 0 {
                pn.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += cj * b);
            }
        }
        proj.project(&mut xn);
        let bn = dot(&apply_b(&xn), &xn).sqrt();
        xn.iter_mut().for_each(|v| *v /= bn);
        let pnn = norm(&pn);
        p = (pnn > 0.0).then_some(pn);
        x = xn;
        ax = apply_a(&x);
        bx = apply_b(&x);
        let new_rho = dot(&ax, &x);
        rho = new_rho;
        let _ = theta;
    }
    Ok((rho, x, max_iter))
}

/// Rayleigh–Ritz on span(basis) for the pencil (A, B). Vectors that are
/// numerically dependent are dropped. Returns (θ_min, coefficients, kept).
fn ritz<'a>(
    apply_a: &impl Fn(&[f64]) -> Vec<f64>,
    apply_b: &impl Fn(&[f64]) -> Vec<f64>,
    basis: &'a [Vec<f64>],
) -> Result<(f64, Vec<f64>, Vec<&'a Vec<f64>>)> {
    let mut m = basis.len();
    while m >= 1 {
        let kept: Vec<&Vec<f64>> = basis[..m].iter().collect();
        let av: Vec<Vec<f64>> = kept.iter().map(|v| apply_a(v)).collect();
        let bv: Vec<Vec<f64>> = kept.iter().map(|v| apply_b(v)).collect();
        let mut ga = DMatrix::zeros(m, m);
        let mut gb = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                ga[(i, j)] = dot(kept[i], &av[j]);
                gb[(i, j)] = dot(kept[i], &bv[j]);
            }
        }
        ga = (&ga + ga.transpose()) * 0.5;
        gb = (&gb + gb.transpose()) * 0.5;
        // scale to unit diagonal before the Cholesky factor
        let s: Vec<f64> = (0..m).map(|i| gb[(i, i)].max(1e-300).sqrt().recip()).collect();
        for i in 0..m {
            for j in 0..m {
                ga[(i, j)] *= s[i] * s[j];
                gb[(i, j)] *= s[i] * s[j];
            }
        }
        let eig_b = SymmetricEigen::new(gb.clone());
        let min_b = eig_b.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if m > 1 && min_b < 1e-12 {
            m -= 1;
            continue;
        }
        let chol = gb.cholesky().ok_or_else(|| num("Rayleigh-Ritz Gram matrix is not positive"))?;
        let l = chol.l();
        let linv = l.clone().try_inverse().ok_or_else(|| num("singular Rayleigh-Ritz Gram factor"))?;
        let c = &linv * &ga * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let (imin, &theta) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let v = eig.eigenvectors.column(imin).into_owned();
        let y = linv.transpose() * v;
        let coeffs: Vec<f64> = (0..m).map(|i| y[i] * s[i]).collect();
        return Ok((theta, coeffs, kept));
    }
    Err(num("Rayleigh-Ritz basis collapsed"))
}

#[derive(Clone, Debug, Serialize)]
pub struct CoercivityReport {
    /// min Φ(h)/‖h‖²_{H¹} over the constrained set.
    pub lambda_min: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// min (L⁺h,h)/‖h‖²_{L²} without constraints.
    pub unconstrained_plus: f64,
    pub certified: bool,
    pub iterations: usize,
    /// Minimizing direction (h₁, h₂) of the constrained problem.
    #[serde(skip)]
    pub direction: (Vec<f64>, Vec<f64>),
}

/// Constraint projectors for (h₁, h₂): h₁ ⊥ ∂_jQ, y₂ and h₂ ⊥ Q, y₁. These are
/// equivalent to (h₁,∂_jQ) = (h₂,Q) = Im∫𝒴±h̄ = 0.
pub fn constraint_projectors(pair: &LinearizedPair, modes: &EigenModes) -> (Orthogonalizer, Orthogonalizer) {
    let mut c1: Vec<Vec<f64>> = pair.dq.clone();
    c1.push(modes.y2.clone());
    (Orthogonalizer::new(c1), Orthogonalizer::new(vec![pair.q.clone(), modes.y1.clone()]))
}

/// Φ(h) = (L⁺h₁,h₁) + (L⁻h₂,h₂) and ‖h‖²_{H¹}.
pub fn quadratic_form(pair: &LinearizedPair, h1: &[f64], h2: &[f64]) -> (f64, f64) {
    let g = &pair.grid;
    let phi = g.inner(&pair.apply_plus(h1), h1) + g.inner(&pair.apply_minus(h2), h2);
    let nrm = g.h1(h1).powi(2) + g.h1(h2).powi(2);
    (phi, nrm)
}

pub fn coercivity_certificate(pair: &LinearizedPair, modes: &EigenModes) -> Result<CoercivityReport> {
    if !pair.grid.same(&modes.grid) {
        return Err(Error::GridMismatch);
    }
    let g = pair.grid.clone();
    let gram = pair.h1_gram()?;
    let apply_b = |x: &[f64]| {
        let mut out = g.laplacian_vec(x);
        out.iter_mut().zip(x).for_each(|(o, v)| *o = v - *o);
        out
    };
    let precond = |x: &mut [f64]| gram.solve_in_place(x);
    let (p1, p2) = constraint_projectors(pair, modes);
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0e2);
    let start = smooth_random(&g, &mut rng);
    let (lp, h1, it1) =
        lobpcg_min(|x| pair.apply_plus(x), apply_b, precond, &p1, start.clone(), 1e-10, 4000)?;
    let (lm, h2, it2) =
        lobpcg_min(|x| pair.apply_minus(x), apply_b, precond, &p2, start.clone(), 1e-10, 4000)?;
    let none = Orthogonalizer::new(Vec::new());
    let (un, _, it3) =
        lobpcg_min(|x| pair.apply_plus(x), |x| x.to_vec(), precond, &none, pair.q.clone(), 1e-10, 4000)?;
    let lambda_min = lp.min(lm);
    let direction = if lp <= lm { (h1, vec![0.0; g.len()]) } else { (vec![0.0; g.len()], h2) };
    Ok(CoercivityReport {
        lambda_min,
        lambda_plus: lp,
        lambda_minus: lm,
        unconstrained_plus: un,
        certified: lambda_min > 0.0,
        iterations: it1 + it2 + it3,
        direction,
    })
}

/// Random smooth field: a few Gaussian bumps with random centers, widths and
/// oscillation, plus small white noise.
pub fn smooth_random(grid: &Grid, rng: &mut impl Rng) -> Vec<f64> {
    let l = grid.half_width();
    let d = grid.dim();
    let bumps: Vec<([f64; 3], f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let mut c = [0.0; 3];
            for v in c.iter_mut().take(d) {
                *v = rng.gen_range(-0.4 * l..0.4 * l);
            }
            (c, rng.gen_range(0.3..3.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..6.3))
        })
        .collect();
    (0..grid.len())
        .map(|k| {
            let x = grid.point(k);
            let mut s = 0.05 * rng.gen_range(-1.0..1.0);
            for (c, w, a, freq, ph) in &bumps {
                let r2: f64 = (0..d).map(|j| (x[j] - c[j]).powi(2)).sum();
                s += a * (-r2 / (2.0 * w * w)).exp() * (freq * x[0] + ph).cos();
            }
            s
        })
        .collect()
}

/// Φ(h)/‖h‖²_{H¹} for `count` random fields projected onto the constraint set.
pub fn coercivity_probes(pair: &LinearizedPair, modes: &EigenModes, count: usize, seed: u64) -> Vec<f64> {
    let (p1, p2) = constraint_projectors(pair, modes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut h1 = smooth_random(&pair.grid, &mut rng);
            let mut h2 = smooth_random(&pair.grid, &mut rng);
            p1.project(&mut h1);
            p2.project(&mut h2);
            let (phi, nrm) = quadratic_form(pair, &h1, &h2);
            phi / nrm
        })
        .collect()
}

/// The family φ_j, μ_j with (φ_j, μ_k) = ζ_j δ_jk:
/// (𝒴⁺, i𝒴⁻), (𝒴⁻, i𝒴⁺), (∂_jQ, ∂_jQ), (iQ, iQ − Σ μ_k(φ_k,iQ)/ζ_k).
#[derive(Clone, Debug)]
pub struct BiorthogonalFamily {
    pub phi: Vec<Field>,
    pub mu: Vec<Field>,
    pub zeta: Vec<f64>,
    /// gram[j][k] = (φ_j, μ_k)
    pub gram: Vec<Vec<f64>>,
    /// max_{j≠k} |(φ_j, μ_k)| / √|ζ_j ζ_k|
    pub max_cross: f64,
    /// ζ₁ as the complex pairing (φ₁, μ₁) and as 2∫y₁y₂.
    pub zeta1_pairing: f64,
    pub zeta1_direct: f64,
}

pub fn biorthogonal_family(pair: &LinearizedPair, modes: &EigenModes) -> Result<BiorthogonalFamily> {
    if !pair.grid.same(&modes.grid) {
        return Err(Error::GridMismatch);
    }
    let g = &pair.grid;
    let i = C64::new(0.0, 1.0);
    let yp = modes.field(1.0);
    let ym = modes.field(-1.0);
    let iq = Field::from_real(g, &pair.q).scale(i);
    let mut phi = vec![yp.clone(), ym.clone()];
    let mut mu = vec![ym.scale(i), yp.scale(i)];
    for dq in &pair.dq {
        phi.push(Field::from_real(g, dq));
        mu.push(Field::from_real(g, dq));
    }
    let mut last = iq.clone();
    for k in 0..2 {
        let zk = phi[k].real_inner(&mu[k])?;
        let c = phi[k].real_inner(&iq)? / zk;
        last.axpy(C64::new(-c, 0.0), &mu[k])?;
    }
    phi.push(iq);
    mu.push(last);
    let m = phi.len();
    let mut gram = vec![vec![0.0; m]; m];
    for j in 0..m {
        for k in 0..m {
            gram[j][k] = phi[j].real_inner(&mu[k])?;
        }
    }
    let zeta: Vec<f64> = (0..m).map(|j| gram[j][j]).collect();
    for (j, z) in zeta.iter().enumerate() {
        if z.abs() < 1e-10 {
            return Err(num(format!("degenerate biorthogonal family: |zeta_{}| = {:e}", j + 1, z.abs())));
        }
    }
    let mut max_cross: f64 = 0.0;
    for j in 0..m {
        for k in 0..m {
            if j != k {
                max_cross = max_cross.max(gram[j][k].abs() / (zeta[j] * zeta[k]).abs().sqrt());
            }
        }
    }
    let zeta1_direct = 2.0 * g.inner(&modes.y1, &modes.y2);
    Ok(BiorthogonalFamily { phi, mu, zeta1_pairing: zeta[0], zeta, gram, max_cross, zeta1_direct })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lagrange_profile_is_exact_on_cubics() {
        let prof = RadialProfile { x0: -2.0, h: 0.5, values: (0..9).map(|i| (-2.0 + 0.5 * i as f64).powi(3)).collect() };
        for r in [-1.3, 0.0, 0.2, 0.77, 1.1] {
            assert!((prof.eval(r) - r * r * r).abs() < 1e-12);
        }
        assert_eq!(prof.eval(10.0), 0.0);
    }

    #[test]
    fn orthogonalizer_projects() {
        let o = Orthogonalizer::new(vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]);
        let mut x = vec![3.0, -1.0, 2.0];
        o.project(&mut x);
        assert!(x[0].abs() < 1e-15 && x[1].abs() < 1e-15 && (x[2] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn lobpcg_finds_lowest_dirichlet_mode() {
        let g = Grid::new(1, 5.0, 99, Obstacle::None).unwrap();
        let gr = g.clone();
        let minus_lap = move |x: &[f64]| gr.laplacian_vec(x).into_iter().map(|v| -v).collect::<Vec<_>>();
        let none = Orthogonalizer::new(Vec::new());
        let start: Vec<f64> = (0..g.len()).map(|k| 1.0 + 0.1 * (k as f64).sin()).collect();
        let (lam, _, _) = lobpcg_min(minus_lap, |x| x.to_vec(), |_| {}, &none, start, 1e-12, 5000).unwrap();
        let h = g.h();
        let exact = 4.0 / (h * h) * (std::f64::consts::PI * h / 20.0).sin().powi(2);
        assert!((lam - exact).abs() < 1e-9 * exact, "{lam} vs {exact}");
    }
}
