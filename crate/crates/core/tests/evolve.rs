use std::sync::Arc;

use osl_core::evolve::{evolve, nls_residual, nonlinear_phase, step, EvolveConfig, LinearSolver, Trajectory};
use osl_core::grid::{Field, Grid, Obstacle};
use osl_core::ground_state::GroundState;
use osl_core::soliton::{soliton_field, SolitonParams};
use osl_core::C64;
use proptest::prelude::*;

fn moving_cubic() -> (GroundState, SolitonParams) {
    let gs = GroundState::solve(3.0, 1.0, 1, 1e-14).unwrap();
    let mut prm = SolitonParams::new(3.0, 1.0, [1.0, 0.0, 0.0]);
    prm.x0 = [-1.0, 0.0, 0.0];
    (gs, prm)
}

fn soliton_error(n: usize, dt: f64) -> (f64, f64) {
    let (gs, prm) = moving_cubic();
    let g = Grid::new(1, 20.0, n, Obstacle::None).unwrap();
    let u0 = soliton_field(&prm, &gs, 0.0, &g, None).unwrap();
    let mut cfg = EvolveConfig::new(dt, 0.0, 2.0);
    cfg.snapshot_every = usize::MAX;
    let tr = evolve(&u0, &cfg, 3.0).unwrap();
    let exact = soliton_field(&prm, &gs, 2.0, &g, None).unwrap();
    let err = tr.last().sub(&exact).unwrap().norm_l2();
    let m = tr.log.iter().map(|r| r.mass).collect::<Vec<_>>();
    (err, ((m[m.len() - 1] - m[0]) / m[0]).abs())
}

fn gaussian(g: &Arc<Grid>, k: f64) -> Field {
    Field::from_fn(g, |x| C64::from_polar((-(x[0] - 3.0).powi(2)).exp(), k * x[0]))
}

#[test]
fn zero_field_stays_zero() {
    let g = Grid::new(1, 10.0, 255, Obstacle::Ball { a: 1.0 }).unwrap();
    let tr = evolve(&Field::zeros(&g), &EvolveConfig::new(0.01, 0.0, 0.5), 3.0).unwrap();
    assert!(tr.last().values.iter().all(|z| *z == C64::new(0.0, 0.0)));
}

#[test]
fn moving_soliton_converges_at_second_order() {
    let (e1, m1) = soliton_error(1023, 0.01);
    let (e2, m2) = soliton_error(2047, 0.005);
    let ratio = e1 / e2;
    assert!((3.5..4.5).contains(&ratio), "{e1:e} {e2:e}");
    assert!(m1 < 1e-8 && m2 < 1e-8, "{m1:e} {m2:e}");
}

#[test]
fn forward_then_backward_returns_initial_data() {
    let (gs, prm) = moving_cubic();
    let g = Grid::new(1, 20.0, 1023, Obstacle::None).unwrap();
    let u0 = soliton_field(&prm, &gs, 0.0, &g, None).unwrap();
    let fwd = evolve(&u0, &EvolveConfig::new(0.01, 0.0, 2.0), 3.0).unwrap();
    let back = evolve(fwd.last(), &EvolveConfig::new(0.01, 2.0, 0.0), 3.0).unwrap();
    let err = back.last().sub(&u0).unwrap().norm_l2() / u0.norm_l2();
    assert!(err < 1e-6, "{err:e}");
    assert_eq!(*back.times.last().unwrap(), 0.0);
}

#[test]
fn mass_is_conserved_with_an_obstacle() {
    let g = Grid::new(1, 15.0, 1023, Obstacle::Ball { a: 1.0 }).unwrap();
    let u0 = gaussian(&g, -2.0);
    let mut cfg = EvolveConfig::new(0.002, 0.0, 2.0);
    cfg.snapshot_every = 100;
    let tr = evolve(&u0, &cfg, 3.0).unwrap();
    let m0 = tr.log[0].mass;
    for r in &tr.log {
        assert!(((r.mass - m0) / m0).abs() < 1e-10, "{}", r.mass - m0);
    }
    // the packet hits the obstacle and reflects; energy stays within the
    // splitting error
    let e0 = tr.log[0].energy;
    let drift = tr.log.iter().map(|r| (r.energy - e0).abs()).fold(0.0, f64::max) / e0.abs();
    assert!(drift < 1e-3, "{drift:e}");
}

#[test]
fn linear_flow_conserves_mass_to_solver_tolerance() {
    let g = Grid::new(1, 15.0, 511, Obstacle::Ball { a: 1.0 }).unwrap();
    let mut cfg = EvolveConfig::new(0.01, 0.0, 10.0);
    cfg.linear_only = true;
    cfg.snapshot_every = 1000;
    let tr = evolve(&gaussian(&g, 1.0), &cfg, 3.0).unwrap();
    let (a, b) = (tr.log[0].mass, tr.log.last().unwrap().mass);
    assert!(((b - a) / a).abs() < 1e-11);
    assert!(((tr.log.last().unwrap().energy - tr.log[0].energy) / tr.log[0].energy).abs() > 0.0);
}

#[test]
fn interval_obstacle_decouples_the_two_half_lines() {
    let g = Grid::new(1, 15.0, 1023, Obstacle::Ball { a: 1.0 }).unwrap();
    assert!((0..g.len()).all(|k| g.point(k)[0].abs() > 1.0));
    let mut cfg = EvolveConfig::new(0.005, 0.0, 4.0);
    cfg.linear_only = true;
    let right = Field::from_fn(&g, |x| if x[0] > 0.0 { C64::from_polar((-(x[0] - 3.0).powi(2)).exp(), -3.0 * x[0]) } else { C64::new(0.0, 0.0) });
    let tr = evolve(&right, &cfg, 3.0).unwrap();
    let left: f64 = (0..g.len()).filter(|&k| g.point(k)[0] < 0.0).map(|k| tr.last().values[k].norm_sqr()).sum();
    assert_eq!(left, 0.0);
}

#[test]
fn nls_residual_is_second_order() {
    let (gs, prm) = moving_cubic();
    let res = |n: usize, dt: f64| {
        let g = Grid::new(1, 20.0, n, Obstacle::None).unwrap();
        let u0 = soliton_field(&prm, &gs, 0.0, &g, None).unwrap();
        let tr = evolve(&u0, &EvolveConfig::new(dt, 0.0, 0.5), 3.0).unwrap();
        nls_residual(&tr, 3.0).unwrap().into_iter().fold(0.0, f64::max)
    };
    let (a, b) = (res(1023, 0.01), res(2047, 0.005));
    assert!((3.5..4.5).contains(&(a / b)), "{a:e} {b:e}");
    // sampled exact solution: the residual is the spatial truncation alone
    let g = Grid::new(1, 20.0, 1023, Obstacle::None).unwrap();
    let ts: Vec<f64> = (0..5).map(|k| k as f64 * 1e-3).collect();
    let snaps = ts.iter().map(|&t| soliton_field(&prm, &gs, t, &g, None).unwrap()).collect();
    let r = nls_residual(&Trajectory::from_snapshots(ts, snaps, 3.0), 3.0).unwrap();
    assert!(r.iter().all(|x| *x < 2.0 * a));
    let z = Trajectory::from_snapshots(vec![0.0, 0.1, 0.2], vec![Field::zeros(&g); 3], 3.0);
    assert_eq!(nls_residual(&z, 3.0).unwrap(), vec![0.0]);
}

#[test]
fn gauge_phase_commutes_with_the_flow() {
    let g = Grid::new(1, 15.0, 511, Obstacle::Ball { a: 1.0 }).unwrap();
    let u0 = gaussian(&g, 0.7);
    let cfg = EvolveConfig::new(0.01, 0.0, 0.2);
    let rot = C64::from_polar(1.0, 1.1);
    let a = evolve(&u0, &cfg, 5.0).unwrap().last().scale(rot);
    let b = evolve(&u0.scale(rot), &cfg, 5.0).unwrap();
    assert!(a.sub(b.last()).unwrap().norm_l2() < 1e-12);
}

#[test]
fn solver_backends_agree_over_many_steps() {
    let g = Grid::new(1, 15.0, 511, Obstacle::Ball { a: 1.0 }).unwrap();
    let u0 = gaussian(&g, 0.7);
    let mut cfg = EvolveConfig::new(0.01, 0.0, 1.0);
    cfg.solver = LinearSolver::Direct;
    let a = evolve(&u0, &cfg, 3.0).unwrap();
    cfg.solver = LinearSolver::BiCgStab;
    cfg.lin_tol = 1e-14;
    let b = evolve(&u0, &cfg, 3.0).unwrap();
    assert!(a.last().sub(b.last()).unwrap().norm_l2() < 1e-9);
}

#[test]
fn blow_up_and_stability_guards() {
    let g = Grid::new(1, 10.0, 511, Obstacle::None).unwrap();
    let mut cfg = EvolveConfig::new(0.01, 0.0, 0.1);
    cfg.c_stab = Some(1.0);
    assert!(evolve(&gaussian(&g, 0.0), &cfg, 3.0).unwrap_err().is_precondition());
    // a large mass-supercritical bump collapses
    let big = Field::from_fn(&g, |x| C64::new(3.0 * (-x[0] * x[0]).exp(), 0.0));
    let mut cfg = EvolveConfig::new(1e-4, 0.0, 1.0);
    cfg.blowup_factor = 20.0;
    assert!(!evolve(&big, &cfg, 7.0).unwrap_err().is_precondition());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn nonlinear_substep_preserves_modulus(re in proptest::collection::vec(-3.0f64..3.0, 32), tau in -1.0f64..1.0) {
        let mut u: Vec<C64> = re.iter().enumerate().map(|(k, r)| C64::new(*r, 0.1 * k as f64)).collect();
        let before: Vec<f64> = u.iter().map(|z| z.norm()).collect();
        nonlinear_phase(&mut u, tau, 7.0);
        for (z, b) in u.iter().zip(&before) {
            prop_assert!((z.norm() - b).abs() < 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn single_step_conserves_mass(k in -3.0f64..3.0, dt in 0.001f64..0.05) {
        let g = Grid::new(1, 10.0, 255, Obstacle::Ball { a: 1.0 }).unwrap();
        let u0 = gaussian(&g, k);
        let u1 = step(&u0, dt, 3.0, &EvolveConfig::new(dt, 0.0, dt)).unwrap();
        prop_assert!((u1.norm_l2() - u0.norm_l2()).abs() < 1e-12);
    }
}
