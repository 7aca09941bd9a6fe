//! Invariants of the scheme checked on randomly drawn instances.

use approx::assert_abs_diff_eq;
use maxslope::diagnostics::{apriori_bounds, metric_derivative};
use maxslope::prox::{prox, prox_objective, ProxSettings};
use maxslope::scheme::{discrete_velocity, run_scheme, SchemeParams, VariationalInterpolant};
use maxslope::slope::{estimate_slope, SlopeOptions};
use maxslope::{EnergySpec, Point, SpaceDescriptor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
enum Family {
    Quadratic,
    Wiggly,
    Convex,
}

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![
        Just(Family::Quadratic),
        Just(Family::Wiggly),
        Just(Family::Convex)
    ]
}

fn smooth_family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Quadratic), Just(Family::Wiggly)]
}

fn build(f: Family, dim: usize, w: f64, metric_w: f64) -> EnergySpec {
    let space = if metric_w == 1.0 {
        SpaceDescriptor::euclidean(dim)
    } else {
        SpaceDescriptor::weighted(vec![metric_w; dim]).unwrap()
    };
    let weights = vec![w; dim];
    let center = vec![0.0; dim];
    match f {
        Family::Quadratic => EnergySpec::quadratic(space, weights, center),
        Family::Wiggly => EnergySpec::wiggly(space, weights, center, 1.0),
        Family::Convex => EnergySpec::convex_perturbed(space, weights, center),
    }
    .unwrap()
}

fn point(coords: &[f64]) -> Point {
    Point::new(coords.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_beats_every_probe(
        f in family(),
        w in 0.5f64..3.0,
        eps in 0.02f64..0.5,
        delta in 0.001f64..0.1,
        u in prop::collection::vec(-2.0f64..2.0, 1..=2),
        seed in any::<u64>(),
    ) {
        let spec = build(f, u.len(), w, 1.0);
        let u = point(&u);
        let r = prox(&spec, eps, delta, &u, &ProxSettings::default()).unwrap();
        let best = prox_objective(&spec, eps, delta, &u, &r.minimizer).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let y: Vec<f64> = u.coords().iter().map(|c| c + rng.gen_range(-1.0..1.0)).collect();
            let other = prox_objective(&spec, eps, delta, &u, &point(&y)).unwrap();
            prop_assert!(best <= other + 1e-10 * (1.0 + other.abs()), "{best} > {other} at {y:?}");
        }
    }

    #[test]
    fn scheme_never_increases_energy(
        f in family(),
        w in 0.5f64..3.0,
        eps in 0.05f64..0.5,
        tau in 0.005f64..0.1,
        u0 in -2.0f64..2.0,
    ) {
        let spec = build(f, 1, w, 1.0);
        let params = SchemeParams::new(&spec, eps, tau, 0.5, point(&[u0])).unwrap();
        let traj = run_scheme(&spec, &params).unwrap();
        for pair in traj.step_energies.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12, "{} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn gradient_matches_central_differences(
        f in smooth_family(),
        w in 0.5f64..3.0,
        eps in 0.05f64..1.0,
        x in prop::collection::vec(-2.0f64..2.0, 1..=3),
    ) {
        let spec = build(f, x.len(), w, 1.0);
        let g = spec.gradient(eps, &point(&x)).unwrap();
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (spec.eval(eps, &point(&xp)).unwrap() - spec.eval(eps, &point(&xm)).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(g[k], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn slope_estimate_matches_gradient_norm(
        f in smooth_family(),
        w in 0.5f64..3.0,
        metric_w in prop_oneof![Just(1.0), 0.5f64..4.0],
        eps in 0.1f64..1.0,
        x in prop::collection::vec(-2.0f64..2.0, 1..=2),
    ) {
        let spec = build(f, x.len(), w, metric_w);
        let x = point(&x);
        let grad = spec.gradient(eps, &x).unwrap();
        let exact = spec.domain().dual_norm(&grad);
        let est = estimate_slope(&spec, eps, &x, &SlopeOptions::default()).unwrap();
        assert_abs_diff_eq!(est.value.as_f64(), exact, epsilon = 1e-3);
    }

    #[test]
    fn broken_line_speed_is_the_discrete_velocity(
        f in family(),
        tau in 0.01f64..0.1,
        u0 in prop::collection::vec(-2.0f64..2.0, 1..=2),
        metric_w in prop_oneof![Just(1.0), 0.5f64..4.0],
    ) {
        let spec = build(f, u0.len(), 1.0, metric_w);
        let params = SchemeParams::new(&spec, 0.2, tau, 0.5, point(&u0)).unwrap();
        let traj = run_scheme(&spec, &params).unwrap();
        // nodes and midpoints of the piecewise-affine interpolation
        let mut samples = Vec::new();
        for i in 0..traj.steps() {
            let (a, b) = (&traj.points[i], &traj.points[i + 1]);
            let mid: Vec<f64> = a.coords().iter().zip(b.coords()).map(|(x, y)| 0.5 * (x + y)).collect();
            samples.push((traj.time(i), a.clone()));
            samples.push((traj.time(i) + 0.5 * tau, point(&mid)));
        }
        samples.push((traj.final_time(), traj.points[traj.steps()].clone()));
        let md = metric_derivative(&samples, spec.domain()).unwrap();
        for (k, (t, v)) in md.iter().enumerate() {
            if k % 2 == 1 {
                let expected = discrete_velocity(&traj, *t).unwrap();
                prop_assert!((v - expected).abs() <= 1e-9 * (1.0 + expected), "t={t}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn g_dominates_slope_along_interpolant(
        f in smooth_family(),
        w in 0.5f64..3.0,
        eps in 0.05f64..0.5,
        tau in 0.005f64..0.05,
        u0 in -2.0f64..2.0,
    ) {
        let spec = build(f, 1, w, 1.0);
        let params = SchemeParams::new(&spec, eps, tau, 0.2, point(&[u0])).unwrap();
        let traj = run_scheme(&spec, &params).unwrap();
        let interp = VariationalInterpolant::build(&spec, &traj, &params.step_settings(), 8).unwrap();
        for (t, p, g) in interp.samples() {
            let s = spec.exact_slope(eps, p).unwrap();
            prop_assert!(g >= s - 1e-6 * (1.0 + s), "t={t}: G={g} < slope={s}");
        }
    }

    #[test]
    fn energy_is_monotone_along_interpolant(
        f in family(),
        w in 0.5f64..3.0,
        eps in 0.05f64..0.5,
        tau in 0.005f64..0.05,
        u0 in -2.0f64..2.0,
    ) {
        let spec = build(f, 1, w, 1.0);
        let params = SchemeParams::new(&spec, eps, tau, 0.2, point(&[u0])).unwrap();
        let traj = run_scheme(&spec, &params).unwrap();
        let interp = VariationalInterpolant::build(&spec, &traj, &params.step_settings(), 8).unwrap();
        let mut last = traj.step_energies[0];
        for step in &interp.steps {
            for e in &step.energies {
                prop_assert!(*e <= last + 1e-10, "{e} > {last}");
                last = *e;
            }
        }
    }

    #[test]
    fn interpolants_stay_within_c_tau(
        f in family(),
        eps in 0.05f64..0.5,
        tau in 0.005f64..0.05,
        u0 in -2.0f64..2.0,
    ) {
        let spec = build(f, 1, 1.0, 1.0);
        let params = SchemeParams::new(&spec, eps, tau, 0.3, point(&[u0])).unwrap();
        let traj = run_scheme(&spec, &params).unwrap();
        let interp = VariationalInterpolant::build(&spec, &traj, &params.step_settings(), 8).unwrap();
        let report = apriori_bounds(&spec, &traj, &interp, &params, None, 1e-9).unwrap();
        for step in &interp.steps {
            let bar = &traj.points[step.step + 1];
            for p in &step.points {
                let d2 = spec.domain().squared_distance(p, bar).unwrap();
                prop_assert!(d2 <= report.c * tau + 1e-12, "{d2} > C tau = {}", report.c * tau);
            }
        }
        prop_assert!(report.tilde_closeness_ok);
    }
}
