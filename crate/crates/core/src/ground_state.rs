//! Radial ground state of −ΔQ + ωQ = Q^p by shooting on Q(0).

use std::sync::Arc;

use serde::Serialize;

use crate::error::{num, pre, Result};
use crate::grid::{Field, Grid};
use crate::C64;

/// Tail is attached analytically once Q falls below this fraction of Q(0).
const TAIL_SWITCH: f64 = 1e-5;
/// Samples stop once Q falls below this fraction of Q(0).
const TAIL_CUTOFF: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;

#[derive(Clone, Debug, Serialize)]
pub struct GroundState {
    pub p: f64,
    pub omega: f64,
    pub dim: usize,
    pub r_samples: Vec<f64>,
    pub q_samples: Vec<f64>,
    pub dq_samples: Vec<f64>,
    pub delta_fit: f64,
    pub q0: f64,
    /// Max relative residual of the radial ODE over the sample intervals.
    pub residual: f64,
    /// End of the integrated part of the profile (analytic tail beyond).
    pub r_switch: f64,
    /// Final bisection bracket on Q(0).
    pub bracket: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Branch {
    Crossing,
    Rebound,
}

fn spow(q: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p < 64.0 {
        q.abs().powi(p as i32 - 1) * q
    } else {
        q.abs().powf(p - 1.0) * q
    }
}

struct Ode {
    p: f64,
    omega: f64,
    dim: f64,
}

impl Ode {
    fn second(&self, r: f64, q: f64, dq: f64) -> f64 {
        if r == 0.0 {
            (self.omega * q - spow(q, self.p)) / self.dim
        } else {
            self.omega * q - spow(q, self.p) - (self.dim - 1.0) * dq / r
        }
    }

    fn rhs(&self, r: f64, y: [f64; 2]) -> [f64; 2] {
        [y[1], self.second(r, y[0], y[1])]
    }

    /// One Dormand–Prince 5(4) step: (5th-order solution, error estimate).
    fn dp_step(&self, r: f64, y: [f64; 2], h: f64) -> ([f64; 2], [f64; 2]) {
        let add = |y: [f64; 2], terms: &[(f64, [f64; 2])]| {
            let mut o = y;
            for (c, k) in terms {
                o[0] += h * c * k[0];
                o[1] += h * c * k[1];
            }
            o
        };
        let k1 = self.rhs(r, y);
        let k2 = self.rhs(r + h / 5.0, add(y, &[(1.0 / 5.0, k1)]));
        let k3 = self.rhs(r + 0.3 * h, add(y, &[(3.0 / 40.0, k1), (9.0 / 40.0, k2)]));
        let k4 = self.rhs(r + 0.8 * h, add(y, &[(44.0 / 45.0, k1), (-56.0 / 15.0, k2), (32.0 / 9.0, k3)]));
        let k5 = self.rhs(
            r + 8.0 / 9.0 * h,
            add(y, &[(19372.0 / 6561.0, k1), (-25360.0 / 2187.0, k2), (64448.0 / 6561.0, k3), (-212.0 / 729.0, k4)]),
        );
        let k6 = self.rhs(
            r + h,
            add(
                y,
                &[
                    (9017.0 / 3168.0, k1),
                    (-355.0 / 33.0, k2),
                    (46732.0 / 5247.0, k3),
                    (49.0 / 176.0, k4),
                    (-5103.0 / 18656.0, k5),
                ],
            ),
        );
        let y5 = add(
            y,
            &[
                (35.0 / 384.0, k1),
                (500.0 / 1113.0, k3),
                (125.0 / 192.0, k4),
                (-2187.0 / 6784.0, k5),
                (11.0 / 84.0, k6),
            ],
        );
        let k7 = self.rhs(r + h, y5);
        let e = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let ks = [k1, k2, k3, k4, k5, k6, k7];
        let mut err = [0.0; 2];
        for (c, k) in e.iter().zip(ks.iter()) {
            err[0] += h * c * k[0];
            err[1] += h * c * k[1];
        }
        (y5, err)
    }

    /// Adaptive integration from the axis. Calls `visit` after every accepted
    /// step; stops when it returns false or at `r_max`.
    fn integrate(&self, q0: f64, max_step: f64, r_max: f64, mut visit: impl FnMut(f64, [f64; 2]) -> bool) {
        let rtol = 1e-12;
        let atol = 1e-15 * q0;
        let mut r = 0.0;
        let mut y = [q0, 0.0];
        let mut h = max_step.min(1e-3);
        while r < r_max {
            h = h.min(r_max - r);
            let (y5, e) = self.dp_step(r, y, h);
            let sc0 = atol + rtol * y[0].abs().max(y5[0].abs());
            let sc1 = atol + rtol * y[1].abs().max(y5[1].abs());
            let err = (e[0] / sc0).abs().max((e[1] / sc1).abs());
            if err <= 1.0 || h < 1e-12 {
                r += h;
                y = y5;
                if !visit(r, y) {
                    return;
                }
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(max_step);
        }
    }

    fn classify(&self, q0: f64, max_step: f64, r_max: f64) -> Branch {
        let mut out = Branch::Rebound;
        self.integrate(q0, max_step, r_max, |_, y| {
            if y[0] < 0.0 {
                out = Branch::Crossing;
                false
            } else {
                // turning back up before reaching zero
                y[1] <= 0.0
            }
        });
        out
    }
}

impl GroundState {
    /// Shooting on Q(0) between the rebound branch (Q' turns positive) and
    /// the crossing branch (Q changes sign).
    pub fn solve(p: f64, omega: f64, dim: usize, tol: f64) -> Result<GroundState> {
        if !(p > 1.0) {
            return Err(pre(format!("exponent p must exceed 1 (got {p})")));
        }
        if !(omega > 0.0) {
            return Err(pre(format!("frequency omega must be positive (got {omega})")));
        }
        if !(tol > 0.0) {
            return Err(pre("tolerance must be positive"));
        }
        if !(1..=3).contains(&dim) {
            return Err(pre(format!("dim must be 1, 2 or 3 (got {dim})")));
        }
        let ode = Ode { p, omega, dim: dim as f64 };
        let sw = omega.sqrt();
        let max_step = 1e-3 / sw;
        let r_max = 80.0 / sw;
        let base = omega.powf(1.0 / (p - 1.0));
        let (mut lo, mut hi) = (base, 3.0 * dim as f64 * base);
        if ode.classify(hi, max_step, r_max) != Branch::Crossing {
            return Err(num(format!("upper bracket Q(0) = {hi} does not cross zero")));
        }
        let mut iters = 0;
        while hi - lo > tol * lo {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match ode.classify(mid, max_step, r_max) {
                Branch::Crossing => hi = mid,
                Branch::Rebound => lo = mid,
            }
            iters += 1;
            if iters > MAX_BISECTIONS {
                return Err(num(format!("ground-state bisection stalled with bracket [{lo:.17}, {hi:.17}]")));
            }
        }
        let q0 = 0.5 * (lo + hi);

        // integrated part, cut where the solution starts leaving the separatrix
        let mut rs = vec![0.0];
        let mut qs = vec![q0];
        let mut dqs = vec![0.0];
        ode.integrate(q0, max_step, r_max, |r, y| {
            let q = y[0];
            if q <= 0.0 || y[1] >= 0.0 {
                return false;
            }
            if q < 1e-2 * q0 && y[1] / q > -0.9 * sw {
                return false;
            }
            rs.push(r);
            qs.push(q);
            dqs.push(y[1]);
            q >= TAIL_SWITCH * q0
        });
        let n_int = rs.len();
        if n_int < 10 || qs[n_int - 1] > 1e-2 * q0 {
            return Err(num("ground-state profile diverged before reaching its tail"));
        }
        let r_switch = rs[n_int - 1];

        // decaying solution r^{-ν} K_ν(√ω r), ν = (d−2)/2, of the linearized
        // radial equation, matched in value at the switch radius and blended
        // in over one decay length so that no kink is left at the junction
        let nu = (dim as f64 - 2.0) / 2.0;
        let q_sw = qs[n_int - 1];
        let s_sw = bessel_k_series(nu, sw * r_switch);
        let tail = |r: f64| {
            let z = sw * r;
            let q = q_sw * (r / r_switch).powf(-nu - 0.5) * (-sw * (r - r_switch)).exp() * bessel_k_series(nu, z)
                / s_sw;
            (q, -sw * q * bessel_k_series(nu + 1.0, z) / bessel_k_series(nu, z))
        };
        let width = 1.0 / sw;
        let start = r_switch - width;
        if start > 0.5 * r_switch {
            for i in 0..n_int {
                if rs[i] <= start {
                    continue;
                }
                let (s0, s1, _) = crate::grid::smoothstep((rs[i] - start) / width);
                let (qt, dqt) = tail(rs[i]);
                let diff = qt - qs[i];
                qs[i] += s0 * diff;
                dqs[i] += s0 * (dqt - dqs[i]) + s1 / width * diff;
            }
        }
        let mut k = 1;
        loop {
            let r = r_switch + k as f64 * max_step;
            let (q, dq) = tail(r);
            rs.push(r);
            qs.push(q);
            dqs.push(dq);
            if q < 0.5 * TAIL_CUTOFF * q0 {
                break;
            }
            k += 1;
        }
        let mut gs = GroundState {
            p,
            omega,
            dim,
            r_samples: rs,
            q_samples: qs,
            dq_samples: dqs,
            delta_fit: 0.0,
            q0,
            residual: 0.0,
            r_switch,
            bracket: (lo, hi),
        };
        gs.residual = gs.ode_residual();
        gs.delta_fit = gs.fit_decay()?;
        Ok(gs)
    }

    fn ode(&self) -> Ode {
        Ode { p: self.p, omega: self.omega, dim: self.dim as f64 }
    }

    /// Max over sample intervals of |Q'(b) − Q'(a) − ∫_a^b Q''| / (b − a),
    /// with Q'' taken from the ODE (Simpson rule, Hermite midpoints),
    /// relative to max Q^p.
    pub fn ode_residual(&self) -> f64 {
        let ode = self.ode();
        let (r, q, dq) = (&self.r_samples, &self.q_samples, &self.dq_samples);
        let d2: Vec<f64> = (0..r.len()).map(|i| ode.second(r[i], q[i], dq[i])).collect();
        let scale = spow(self.q0, self.p);
        let mut worst: f64 = 0.0;
        for i in 0..r.len() - 1 {
            let h = r[i + 1] - r[i];
            let qm = 0.5 * (q[i] + q[i + 1]) + h / 8.0 * (dq[i] - dq[i + 1]);
            let dqm = 0.5 * (dq[i] + dq[i + 1]) + h / 8.0 * (d2[i] - d2[i + 1]);
            let gm = ode.second(r[i] + 0.5 * h, qm, dqm);
            let integral = h / 6.0 * (d2[i] + 4.0 * gm + d2[i + 1]);
            worst = worst.max(((dq[i + 1] - dq[i]) - integral).abs() / h);
        }
        worst / scale
    }

    /// Least-squares slope of −log Q against √ω r over the last third of the
    /// integrated part of the profile.
    pub fn fit_decay(&self) -> Result<f64> {
        let end = self.r_switch;
        let q_end = self.eval(end).0;
        if q_end > 1e-4 * self.q0 {
            return Err(num(format!("tail too short for a decay fit (Q/Q0 = {:e} at its end)", q_end / self.q0)));
        }
        let sw = self.omega.sqrt();
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .r_samples
            .iter()
            .zip(&self.q_samples)
            .filter(|(r, _)| **r >= 2.0 * end / 3.0 && **r <= end)
            .map(|(r, q)| (sw * r, q.ln()))
            .unzip();
        let (slope, _, _) = crate::fit::linear(&xs, &ys);
        Ok(-slope)
    }

    /// Exact ω-scaling of a profile computed at ω = 1.
    pub fn rescale(&self, omega: f64) -> Result<GroundState> {
        if !(omega > 0.0) {
            return Err(pre(format!("frequency omega must be positive (got {omega})")));
        }
        if self.omega != 1.0 {
            return Err(pre("rescale expects a profile computed at omega = 1"));
        }
        let sw = omega.sqrt();
        let a = omega.powf(1.0 / (self.p - 1.0));
        let mut gs = GroundState {
            p: self.p,
            omega,
            dim: self.dim,
            r_samples: self.r_samples.iter().map(|r| r / sw).collect(),
            q_samples: self.q_samples.iter().map(|q| a * q).collect(),
            dq_samples: self.dq_samples.iter().map(|q| a * sw * q).collect(),
            delta_fit: self.delta_fit,
            q0: a * self.q0,
            residual: 0.0,
            r_switch: self.r_switch / sw,
            bracket: (a * self.bracket.0, a * self.bracket.1),
        };
        gs.residual = gs.ode_residual();
        Ok(gs)
    }

    pub fn r_max(&self) -> f64 {
        *self.r_samples.last().unwrap()
    }

    /// (Q, Q', Q'') at radius r; quintic Hermite on (Q, Q', Q'') with Q''
    /// from the ODE, zero beyond the last sample.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        let rs = &self.r_samples;
        let r = r.abs();
        if r >= self.r_max() {
            return (0.0, 0.0, 0.0);
        }
        let i = rs.partition_point(|&x| x <= r).saturating_sub(1).min(rs.len() - 2);
        let (a, b) = (rs[i], rs[i + 1]);
        let h = b - a;
        let t = (r - a) / h;
        let ode = self.ode();
        let (qa, qb) = (self.q_samples[i], self.q_samples[i + 1]);
        let (da, db) = (self.dq_samples[i], self.dq_samples[i + 1]);
        let (sa, sb) = (ode.second(a, qa, da), ode.second(b, qb, db));
        let (t2, t3, t4, t5) = (t * t, t * t * t, t * t * t * t, t * t * t * t * t);
        let w = [
            1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
            t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
            0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
            10.0 * t3 - 15.0 * t4 + 6.0 * t5,
            -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
            0.5 * t3 - t4 + 0.5 * t5,
        ];
        let dw = [
            -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
            1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
            t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4,
            30.0 * t2 - 60.0 * t3 + 30.0 * t4,
            -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
            1.5 * t2 - 4.0 * t3 + 2.5 * t4,
        ];
        let c = [qa, h * da, h * h * sa, qb, h * db, h * h * sb];
        let q: f64 = w.iter().zip(&c).map(|(w, c)| w * c).sum();
        let dq: f64 = dw.iter().zip(&c).map(|(w, c)| w * c).sum::<f64>() / h;
        (q, dq, ode.second(r, q, dq))
    }

    /// Q_ω(|x − c|) on every active point of the grid.
    pub fn sample_real(&self, grid: &Grid, center: [f64; 3]) -> Vec<f64> {
        (0..grid.len())
            .map(|k| {
                let x = grid.point(k);
                let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
                self.eval((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()).0
            })
            .collect()
    }

    pub fn sample_on_grid(&self, grid: &Arc<Grid>, center: [f64; 3]) -> Field {
        let v = self.sample_real(grid, center);
        Field::from_values(grid, v.into_iter().map(|q| C64::new(q, 0.0)).collect()).expect("finite samples")
    }

    /// ∫ Q² over ℝ^d by radial Simpson quadrature on a fine uniform mesh.
    pub fn radial_mass(&self) -> f64 {
        self.radial_integrals().mass
    }

    /// ∫Q², ∫|∇Q|² and ∫Q^{p+1} over ℝ^d (radial Simpson, 200k intervals).
    pub fn radial_integrals(&self) -> RadialIntegrals {
        let sphere = match self.dim {
            1 => 2.0,
            2 => 2.0 * std::f64::consts::PI,
            _ => 4.0 * std::f64::consts::PI,
        };
        let n = 200_000;
        let rmax = self.r_max();
        let h = rmax / n as f64;
        let f = |r: f64| {
            let (q, dq, _) = self.eval(r);
            let w = sphere * r.powi(self.dim as i32 - 1);
            [w * q * q, w * dq * dq, w * spow(q, self.p + 1.0)]
        };
        let mut s = [0.0; 3];
        for i in 0..=n {
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let v = f(i as f64 * h);
            for j in 0..3 {
                s[j] += c * v[j];
            }
        }
        let [mass, grad_sq, pot] = s.map(|v| v * h / 3.0);
        RadialIntegrals { mass, grad_sq, pot, energy: 0.5 * grad_sq - pot / (self.p + 1.0) }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RadialIntegrals {
    pub mass: f64,
    pub grad_sq: f64,
    pub pot: f64,
    pub energy: f64,
}

/// Asymptotic series Σ a_k z^{-k} with K_ν(z) ~ √(π/2z) e^{-z} Σ a_k z^{-k};
/// summed until the terms stop decreasing.
fn bessel_k_series(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..40 {
        let odd = (2 * k - 1) as f64;
        let next = term * (mu - odd * odd) / (k as f64 * 8.0 * z);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// Closed-form 1D ground state ((p+1)/2)^{1/(p−1)} sech^{2/(p−1)}((p−1)x/2) at ω = 1.
pub fn sech_profile(p: f64, x: f64) -> f64 {
    ((p + 1.0) / 2.0).powf(1.0 / (p - 1.0)) * (1.0 / ((p - 1.0) * x / 2.0).cosh()).powf(2.0 / (p - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_1d_matches_sech() {
        let gs = GroundState::solve(3.0, 1.0, 1, 1e-14).unwrap();
        assert!((gs.q0 - 2f64.sqrt()).abs() < 1e-10, "q0 = {}", gs.q0);
        let mut worst: f64 = 0.0;
        for i in 0..4000 {
            let x = i as f64 * 0.01;
            worst = worst.max((gs.eval(x).0 - sech_profile(3.0, x)).abs());
        }
        assert!(worst < 1e-8, "sup error {worst:e}");
        assert!((gs.delta_fit - 1.0).abs() < 0.02);
    }

    #[test]
    fn septic_1d_q0() {
        let gs = GroundState::solve(7.0, 1.0, 1, 1e-14).unwrap();
        assert!((gs.q0 - 4f64.powf(1.0 / 6.0)).abs() < 1e-10);
    }

    #[test]
    fn profile_invariants() {
        let gs = GroundState::solve(3.0, 1.0, 2, 1e-13).unwrap();
        assert!(gs.q_samples.iter().all(|&q| q > 0.0));
        assert!(gs.q_samples.windows(2).all(|w| w[1] < w[0]));
        assert!(*gs.q_samples.last().unwrap() < 1e-8 * gs.q0);
        assert!(gs.residual < 1e-8, "residual {:e}", gs.residual);
    }

    #[test]
    fn rescale_cubic_to_four() {
        let gs = GroundState::solve(3.0, 1.0, 1, 1e-14).unwrap();
        let g4 = gs.rescale(4.0).unwrap();
        assert!((g4.q0 - 2.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!(g4.residual < 1e-6);
        assert!(gs.rescale(0.0).is_err());
        assert!(g4.rescale(2.0).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(GroundState::solve(1.0, 1.0, 1, 1e-10).is_err());
        assert!(GroundState::solve(3.0, -1.0, 1, 1e-10).is_err());
    }
}
