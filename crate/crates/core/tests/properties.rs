use proptest::prelude::*;
use rbl_core::analysis::{concentration_envelope, normalization_error_bound, ConcentrationParams};
use rbl_core::dynamics::{half_step_correlation, propose_action, NoiseModel};
use rbl_core::linkfn::CATALOG;
use rbl_core::quadrature::integrate_default;
use rbl_core::runner::{run_ensemble, run_trajectory, RunConfig};
use rbl_core::schedules::{build_epoch_plan, rates_at, ExplorationEpochs, ScheduleKind};
use rbl_core::sphere::{dot, norm, sample_tangent, sample_unit};
use rbl_core::{
    Environment, LinkFunction, Schedule, ScheduleConfig, SgdState, SphereMarginal, StreamKey,
};

fn link_strategy() -> impl Strategy<Value = LinkFunction> {
    (0..CATALOG.len()).prop_map(|i| LinkFunction::from_id(CATALOG[i]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sphere_draws_are_unit_and_tangents_orthogonal(d in 2usize..80, seed in any::<u64>()) {
        let mut rng = StreamKey::new(seed).rng();
        let theta = sample_unit(d, &mut rng).unwrap();
        prop_assert!((norm(theta.coords()) - 1.0).abs() < 1e-12);
        let z = sample_tangent(&theta, &mut rng).unwrap();
        prop_assert!((norm(z.coords()) - 1.0).abs() < 1e-12);
        prop_assert!(dot(theta.coords(), z.coords()).abs() < 1e-12);
    }

    #[test]
    fn update_preserves_norm_and_shrinks_positive_correlation(
        d in 3usize..40,
        link in link_strategy(),
        sigma in 0.0f64..1.0,
        log_eta in -4.0f64..0.0,
        seed in any::<u64>(),
    ) {
        let mut rng = StreamKey::new(seed).rng();
        let star = sample_unit(d, &mut rng).unwrap();
        let env = Environment::new(star.clone(), link.clone(), NoiseModel::gaussian(1.0).unwrap()).unwrap();
        let state = SgdState::new(sample_unit(d, &mut rng).unwrap());
        let sample = propose_action(&state, sigma, &mut rng).unwrap();
        prop_assert!((norm(sample.action.coords()) - 1.0).abs() < 1e-12);
        let r = env.pull(sample.action.coords(), &mut rng).unwrap();
        let c = half_step_correlation(&state, &sample, r, 10f64.powf(log_eta), &link, &star).unwrap();
        prop_assert!((norm(c.next.theta.coords()) - 1.0).abs() < 1e-12);
        prop_assert!((c.m_next - c.m_iterate).abs() < 1e-12);
        if c.m_half >= 0.0 {
            prop_assert!(c.m_next <= c.m_half);
        }
    }

    #[test]
    fn envelope_is_nondecreasing(v in 0.0f64..1e4, dv in 0.0f64..1e3, omega in 0.1f64..10.0) {
        let p = ConcentrationParams { omega, ..ConcentrationParams::default() };
        prop_assert!(concentration_envelope(v + dv, &p) >= concentration_envelope(v, &p) - 1e-12);
    }

    #[test]
    fn normalization_bound_is_quadratic_in_eta(link in link_strategy(), eta in 1e-5f64..0.1, sigma in 0.01f64..1.0) {
        let p = ConcentrationParams::default();
        let a = normalization_error_bound(&link, eta, sigma, 0.05, &p);
        let b = normalization_error_bound(&link, 2.0 * eta, sigma, 0.05, &p);
        prop_assert!((b - 4.0 * a).abs() <= 1e-12 * b.abs().max(1e-300));
    }

    #[test]
    fn derivatives_match_finite_differences(link in link_strategy(), x in -0.99f64..0.99) {
        let h = 1e-6;
        prop_assume!(link.kinks().iter().all(|k| (x - k).abs() > 10.0 * h));
        let fd = (link.f(x + h) - link.f(x - h)) / (2.0 * h);
        prop_assert!((fd - link.df(x)).abs() < 1e-5 * (1.0 + link.df(x).abs()), "{} at {x}: {fd} vs {}", link.name(), link.df(x));
    }

    #[test]
    fn epoch_plan_partitions_time(d in 4usize..40, gamma0 in 0.01f64..0.1, t_frac in 0.0f64..1.0) {
        let link = LinkFunction::cubic();
        let plan = build_epoch_plan(&link, d, gamma0, 0.5, 4.0, 0.01).unwrap();
        prop_assert_eq!(plan.epochs.len(), d - 1);
        let mut next = 1u64;
        for e in &plan.epochs {
            prop_assert_eq!(e.start, next);
            prop_assert!(e.length >= 1);
            prop_assert!(e.m_lower < e.m_upper);
            next += e.length;
        }
        prop_assert_eq!(next - 1, plan.total_length());
        let t = 1 + ((plan.total_length() - 1) as f64 * t_frac) as u64;
        let (_, k) = plan.rates_at(t).unwrap();
        let e = &plan.epochs[k - 1];
        prop_assert!(e.start <= t && t < e.start + e.length);
        prop_assert!(plan.rates_at(plan.total_length() + 1).is_err());
    }

    #[test]
    fn closed_form_rates_are_pure(
        kind in prop::sample::select(vec![ScheduleKind::PureExploration, ScheduleKind::RegretMin, ScheduleKind::BurninGlb]),
        d in 3usize..200,
        t in 1u64..10_000_000,
    ) {
        let cfg = ScheduleConfig::new(kind, d, 0.1);
        let a = rates_at(&cfg, t).unwrap();
        let b = rates_at(&cfg, t).unwrap();
        prop_assert_eq!(a, b);
        let mut sched = Schedule::new(cfg.clone(), &LinkFunction::identity()).unwrap();
        let s = sched.rates(t, None).unwrap();
        prop_assert_eq!((s.eta, s.sigma), (a.eta, a.sigma));
        prop_assert!(a.eta > 0.0 && (0.0..=1.0).contains(&a.sigma));
        if t > 1 {
            let earlier = rates_at(&cfg, t - 1).unwrap();
            prop_assert!(a.eta <= earlier.eta);
        }
    }

    #[test]
    fn config_json_round_trips(d in 3usize..500, horizon in 1u64..1_000_000, seed in any::<u32>(), c in 0.01f64..10.0) {
        let mut cfg = RunConfig { d, horizon, seed: seed as u64, ..RunConfig::default() };
        cfg.schedule.c_small = c;
        let back = RunConfig::from_json(&cfg.to_json().to_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trajectories_are_reproducible_and_regret_accumulates(
        link_id in prop::sample::select(vec!["identity", "cubic", "pow5", "logistic"]),
        d in 3usize..30,
        seed in any::<u64>(),
        run in 0usize..50,
    ) {
        let cfg = RunConfig::from_json(&format!(
            r#"{{"d": {d}, "link": "{link_id}", "schedule.kind": "regret_min", "horizon": 300, "seed": {seed}}}"#
        )).unwrap();
        let a = run_trajectory(&cfg, run).unwrap();
        let b = run_trajectory(&cfg, run).unwrap();
        prop_assert_eq!(&a.rows, &b.rows);
        for w in a.rows.windows(2) {
            prop_assert!(w[1].cum_regret_a >= w[0].cum_regret_a);
            prop_assert!(w[1].cum_regret_m.unwrap() >= w[0].cum_regret_m.unwrap());
        }
        prop_assert!(a.rows.iter().all(|r| r.m.abs() <= 1.0 && r.regret_a >= -1e-12));
    }

    #[test]
    fn ensemble_moments_stay_in_range(d in 3usize..25, runs in 1usize..6, seed in any::<u64>()) {
        let cfg = RunConfig::from_json(&format!(r#"{{"d": {d}, "horizon": 200, "seed": {seed}}}"#)).unwrap();
        let s = run_ensemble(&cfg, runs).unwrap();
        prop_assert!(s.mean.iter().all(|m| (-1.0..=1.0).contains(m)));
        // Sample deviation of values in [-1, 1] is at most sqrt(n / (n - 1)).
        let cap = if runs > 1 { (runs as f64 / (runs as f64 - 1.0)).sqrt() } else { 0.0 };
        prop_assert!(s.std.iter().all(|x| (0.0..=cap + 1e-12).contains(x)));
        prop_assert_eq!(s.final_m.len(), runs);
    }
}

#[test]
fn catalog_links_have_consistent_shape_flags() {
    for id in CATALOG {
        let link = LinkFunction::from_id(id).unwrap();
        let r = link.verify_assumptions(400);
        assert!(r.convex_flag_consistent, "{id}: {r:?}");
        assert!(r.sup_bound, "{id}");
        assert_eq!(r.monotone, !link.is_counterexample(), "{id}");
        if !link.is_counterexample() {
            assert!(r.assumption1(), "{id}: {r:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sphere_marginal_integrates_to_one(d in 3usize..60) {
        let m = SphereMarginal::new(d).unwrap();
        let total = integrate_default(|x| m.pdf(x), -1.0, 1.0).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-9, "d = {d}: {total}");
    }

    // Once the first epoch is over, epoch-halving step sizes track C d / t
    // within a constant factor: epoch j spans roughly [C d/η_j, 2 C d/η_j].
    #[test]
    fn exploration_epochs_track_the_inverse_time_rate(d in 3usize..200, frac in 0.0f64..1.0) {
        let cfg = ScheduleConfig::new(ScheduleKind::PureExplorationEpochs, d, 0.1);
        let ex = ExplorationEpochs::new(&cfg);
        let (_, _, first) = ex.epoch(0);
        let (_, _, second) = ex.epoch(1);
        let (_, _, third) = ex.epoch(2);
        let t = first + 1 + ((second + third) as f64 * frac) as u64;
        let ratio = ex.rates_at(t).eta * t as f64 / (cfg.c_big * d as f64);
        prop_assert!((0.5..=2.5).contains(&ratio), "d = {d}, t = {t}: {ratio}");
    }
}
