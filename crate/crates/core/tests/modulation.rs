use std::sync::OnceLock;

use osl_core::error::Error;
use osl_core::grid::Field;
use osl_core::modulation::*;
use osl_core::C64;
use proptest::prelude::*;

fn setup() -> ShootSetup {
    ShootSetup { h: 0.04, dt: 0.005, log_every: 10, mode_n: 1023, t0: 8.0, tn: 12.0, ..ShootSetup::one_dimensional(7.0, 1.0) }
}

fn built() -> &'static (Context, ShootConfig) {
    static CELL: OnceLock<(Context, ShootConfig)> = OnceLock::new();
    CELL.get_or_init(|| setup().build().unwrap())
}

/// Orthogonality functionals recomputed from fields: Re∫ r conj(∂_x R̃) and
/// Re∫ r conj(iR̃), with ∂_x R̃ by central differences in y.
fn orthogonality(ctx: &Context, s: &ModulationState) -> (f64, f64) {
    let eps = 1e-5;
    let plus = ctx.tilde_r(s.t, [s.y[0] + eps, 0.0, 0.0], s.mu);
    let minus = ctx.tilde_r(s.t, [s.y[0] - eps, 0.0, 0.0], s.mu);
    let dy = plus.sub(&minus).unwrap().scale(C64::new(-0.5 / eps, 0.0));
    let ir = ctx.tilde_r(s.t, s.y, s.mu).scale(C64::new(0.0, 1.0));
    (s.r.real_inner(&dy).unwrap(), s.r.real_inner(&ir).unwrap())
}

#[test]
fn decomposition_recovers_exact_modulation_parameters() {
    let (ctx, cfg) = built();
    let t = 10.0;
    let u = ctx.tilde_r(t, [0.013, 0.0, 0.0], -0.021);
    let s = decompose(&u, t, ctx, ([0.0; 3], 0.0), &cfg.decompose).unwrap();
    assert!((s.y[0] - 0.013).abs() < 1e-10, "{:?}", s.y);
    assert!((s.mu + 0.021).abs() < 1e-10, "{}", s.mu);
    assert!(s.r.norm_h1() < 1e-9);
    assert!(s.iterations <= 8, "{}", s.iterations);
}

#[test]
fn decomposition_remainder_satisfies_orthogonality() {
    let (ctx, cfg) = built();
    let t = 10.0;
    let mut u = ctx.soliton(t).unwrap();
    let bump = Field::from_fn(&ctx.grid, |x| {
        let z = x[0] - 10.3;
        C64::new(0.02 * (-z * z).exp(), 0.015 * z * (-z * z).exp())
    });
    u.axpy(C64::new(1.0, 0.0), &bump).unwrap();
    let s = decompose(&u, t, ctx, ([0.0; 3], 0.0), &cfg.decompose).unwrap();
    let (gy, gmu) = orthogonality(ctx, &s);
    let scale = s.r.norm_l2() * ctx.q_norm;
    assert!(gy.abs() < 1e-8 * scale, "{gy}");
    assert!(gmu.abs() < 1e-10 * scale, "{gmu}");
    assert!(s.y[0].abs() > 1e-4 && s.mu.abs() > 1e-4);
}

#[test]
fn unstable_mode_projects_onto_alpha_plus_only() {
    let (ctx, _) = built();
    let t = 10.0;
    let a = 3e-3;
    let r = ctx.tilde_y(t, [0.0; 3], 0.0, 1.0).scale(C64::new(a, 0.0));
    let (ap, am) = ctx.alphas(t, [0.0; 3], 0.0, &r);
    assert!((ap / a - ctx.modes.pairing).abs() < 1e-3, "{ap}");
    assert!(am.abs() < 1e-15, "{am}");
    let r = ctx.tilde_y(t, [0.0; 3], 0.0, -1.0).scale(C64::new(a, 0.0));
    let (ap, am) = ctx.alphas(t, [0.0; 3], 0.0, &r);
    assert!(ap.abs() < 1e-15, "{ap}");
    assert!((am / a + ctx.modes.pairing).abs() < 1e-3, "{am}");
}

#[test]
fn far_state_is_rejected() {
    let (ctx, cfg) = built();
    let u = ctx.soliton(10.0).unwrap().scale(C64::new(1.5, 0.0));
    assert!(matches!(decompose(&u, 10.0, ctx, ([0.0; 3], 0.0), &cfg.decompose), Err(Error::Precondition(_))));
}

#[test]
fn final_data_targets_are_met() {
    let (ctx, cfg) = built();
    let b = (-cfg.delta * cfg.tn).exp();
    let u = final_data(cfg.tn, [0.0, 0.0], cfg.delta, ctx).unwrap();
    assert_eq!(u.values, ctx.soliton(cfg.tn).unwrap().values);
    assert!(matches!(final_data(cfg.tn, [20.0 * b, 0.0], cfg.delta, ctx), Err(Error::Precondition(_))));
    for target in [b, -0.3 * b] {
        let fd = solve_modulated_final_data(cfg.tn, target, cfg.delta, ctx, &cfg.decompose).unwrap();
        assert!((fd.alpha_plus - target).abs() <= 1e-12 * b, "{}", fd.alpha_plus);
        assert!(fd.alpha_minus.abs() <= 1e-12 * b, "{}", fd.alpha_minus);
        assert!(fd.ratio > 0.1 && fd.ratio < 10.0, "{}", fd.ratio);
    }
    assert!(solve_modulated_final_data(cfg.tn, 2.0 * b, cfg.delta, ctx, &cfg.decompose).is_err());
}

#[test]
fn untuned_short_horizon_reaches_t0() {
    let (ctx, cfg) = built();
    let short = ShootConfig { t0: cfg.tn - 0.5, ..cfg.clone() };
    let log = backward_shoot(0.0, ctx, &short).unwrap();
    assert_eq!(log.exit_reason, ExitReason::ReachedT0);
    let rate = short.rate(&ctx.params);
    for r in &log.rows {
        assert!(r.r_h1 <= short.m * (-rate * r.t).exp());
    }
    assert!(log.rows.windows(2).all(|w| w[1].t < w[0].t));
    assert_eq!(log.rows.last().unwrap().t, short.t0);
}

#[test]
fn config_preconditions() {
    let (ctx, cfg) = built();
    for bad in [
        ShootConfig { t0: cfg.tn, ..cfg.clone() },
        ShootConfig { t0: 0.0, ..cfg.clone() },
        ShootConfig { m: 0.0, ..cfg.clone() },
        ShootConfig { m_prime: -1.0, ..cfg.clone() },
        ShootConfig { log_every: 0, ..cfg.clone() },
        ShootConfig { dt: 0.3, ..cfg.clone() },
    ] {
        assert!(matches!(backward_shoot(0.0, ctx, &bad), Err(Error::Precondition(_))));
    }
}

#[test]
fn bisection_reaches_t0_and_mistuned_runs_grow_at_e0() {
    let (ctx, cfg) = built();
    let sr = shoot_search(ctx, cfg).unwrap();
    assert_eq!(sr.log.exit_reason, ExitReason::ReachedT0);
    let rate = cfg.rate(&ctx.params);
    assert!(alpha_minus_monitor(&sr.log, rate).max_ratio <= 1.0);
    let first = &sr.evaluations[..2];
    assert_eq!(first[0].exit_sign, -first[1].exit_sign);
    let eps = 10.0 * sr.resolution.max(1e-14 * sr.bound);
    for s in [1.0, -1.0] {
        let mis = backward_shoot(sr.alpha_star + s * eps, ctx, cfg).unwrap();
        assert!(mis.exit_time > cfg.t0, "{}", mis.exit_time);
        let g = deviation_growth(&mis, &sr.log, 10.0);
        assert!((g.rate / ctx.modes.e0 - 1.0).abs() < 0.2, "{} vs {}", g.rate, ctx.modes.e0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn global_phase_shifts_mu(gamma in -0.05f64..0.05, y in -0.02f64..0.02) {
        let (ctx, cfg) = built();
        let t = 9.0;
        let mut u = ctx.tilde_r(t, [y, 0.0, 0.0], 0.0);
        let bump = Field::from_fn(&ctx.grid, |x| C64::new(0.0, 0.01 * (-(x[0] - 9.5).powi(2)).exp()));
        u.axpy(C64::new(1.0, 0.0), &bump).unwrap();
        let s0 = decompose(&u, t, ctx, ([0.0; 3], 0.0), &cfg.decompose).unwrap();
        let s1 = decompose(&u.scale(C64::from_polar(1.0, gamma)), t, ctx, ([0.0; 3], 0.0), &cfg.decompose).unwrap();
        prop_assert!((s1.mu - s0.mu - gamma).abs() < 1e-10);
        prop_assert!((s1.y[0] - s0.y[0]).abs() < 1e-10);
        prop_assert!((s1.alpha_plus - s0.alpha_plus).abs() < 1e-12);
    }
}

#[test]
fn translated_form_is_positive_along_short_run() {
    let (ctx, cfg) = built();
    let short = ShootConfig { t0: cfg.tn - 0.5, keep_snapshots: true, ..cfg.clone() };
    let b = (-short.rate(&ctx.params) * short.tn).exp();
    let log = backward_shoot(0.5 * b, ctx, &short).unwrap();
    let rows = coercivity_along_trajectory(ctx, &log, short.m, short.rate(&ctx.params)).unwrap();
    assert_eq!(rows.len(), log.rows.len());
    for r in &rows {
        assert!(r.phi > 0.0 && r.ratio > 0.0 && r.ratio.is_finite(), "{r:?}");
    }
    let bare = ShootConfig { keep_snapshots: false, ..short };
    let log = backward_shoot(0.0, ctx, &bare).unwrap();
    assert!(coercivity_along_trajectory(ctx, &log, bare.m, 1.0).is_err());
}
