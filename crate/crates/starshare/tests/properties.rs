//! Structural properties of the library, checked on randomized instances
//! with fixed seeds: scale invariances, capacity feasibility, convexity and
//! growth of the rate functions, path-cost consistency, optimizer sanity,
//! and the statistical identities of the simulator.

mod common;

use common::{
    entropy_min_oracle, legendre_oracle, random_ergodic_spec, stay_cost_grid_oracle, TestRng,
};
use starshare::model::{
    bandwidth_share, face_partition, is_ergodic, service_rate, Channel, NetworkSpec, Policy,
    Route, RoutePair,
};
use starshare::paths::{
    optimize_tail_decay, path_cost, path_cost_refined, OptimizeOptions, PiecewiseLinearPath,
};
use starshare::rate::{
    entropy_minimize, local_rate, mm1_cost, stay_cost_transient, Cost, Drift, RateMode,
    TransientGenerator,
};
use starshare::simulate::{
    martingale_run, simulate, simulate_dynamics, Dynamics, SimOptions,
};

fn fig4(lambda13: f64) -> NetworkSpec {
    NetworkSpec::example_three_channel(lambda13).unwrap()
}

/// A random state with roughly `zero_fraction` of its components empty.
fn random_state(rng: &mut TestRng, n: usize, zero_fraction: f64) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.range(0.05, 2.0)).collect();
    for x in &mut xs {
        if rng.u01() < zero_fraction {
            *x = 0.0;
        }
    }
    xs
}

#[test]
fn service_rates_are_invariant_under_state_scaling() {
    let mut rng = TestRng::new(101);
    for _ in 0..40 {
        let spec = random_ergodic_spec(&mut rng, 5);
        let xs = random_state(&mut rng, spec.num_routes(), 0.3);
        let x = spec.fluid_state(&xs).unwrap();
        for &c in &[0.25, 3.0, 40.0] {
            let scaled = x.scale(c);
            for route in spec.routes() {
                let base = service_rate(&spec, Policy::Min, &x, route.pair).unwrap();
                let after = service_rate(&spec, Policy::Min, &scaled, route.pair).unwrap();
                assert!(
                    (base - after).abs() <= 1e-12 * base.max(1.0),
                    "route {}: rate {base} became {after} under scaling by {c}",
                    route.pair
                );
            }
        }
    }
}

#[test]
fn min_policy_allocations_fit_capacity_and_ps_uses_it_fully() {
    let mut rng = TestRng::new(103);
    for _ in 0..40 {
        let spec = random_ergodic_spec(&mut rng, 5);
        let xs = random_state(&mut rng, spec.num_routes(), 0.2);
        let x = spec.fluid_state(&xs).unwrap();
        for (ci, c) in spec.channels().iter().enumerate() {
            let used: f64 = spec
                .routes_of_channel(ci)
                .iter()
                .map(|&r| bandwidth_share(&spec, Policy::Min, &x, r).unwrap())
                .sum();
            assert!(
                used <= c.capacity + 1e-9,
                "channel {}: allocated {used} of {}",
                c.id,
                c.capacity
            );
        }
    }

    // Star around one channel: processor sharing exhausts the anchor.
    let star = NetworkSpec::new(
        vec![
            Channel { id: 1, capacity: 4.0 },
            Channel { id: 2, capacity: 4.0 },
            Channel { id: 3, capacity: 1.5 },
        ],
        vec![
            Route {
                pair: RoutePair::new(1, 3).unwrap(),
                lambda: 0.2,
                mu: 1.0,
            },
            Route {
                pair: RoutePair::new(2, 3).unwrap(),
                lambda: 0.4,
                mu: 1.0,
            },
        ],
    )
    .unwrap();
    for _ in 0..20 {
        let xs: Vec<f64> = (0..2).map(|_| rng.range(0.1, 3.0)).collect();
        let x = star.fluid_state(&xs).unwrap();
        let used: f64 = (0..2)
            .map(|r| {
                bandwidth_share(&star, Policy::ProcessorSharing { anchor: 3 }, &x, r).unwrap()
            })
            .sum();
        assert!((used - 1.5).abs() < 1e-9, "PS allocated {used} of 1.5");
    }
}

#[test]
fn face_partition_survives_state_scaling() {
    let mut rng = TestRng::new(107);
    for _ in 0..60 {
        let spec = random_ergodic_spec(&mut rng, 5);
        let xs = random_state(&mut rng, spec.num_routes(), 0.5);
        let x = spec.fluid_state(&xs).unwrap();
        let face = face_partition(&spec, &x, 0.0).unwrap();
        for &c in &[1e-6, 0.5, 7.0, 1e6] {
            let scaled = face_partition(&spec, &x.scale(c), 0.0).unwrap();
            assert_eq!(face, scaled, "partition changed under scaling by {c}");
        }
    }
}

#[test]
fn ergodicity_is_monotone_in_rates_and_capacities() {
    let mut rng = TestRng::new(109);
    for _ in 0..60 {
        let spec = random_ergodic_spec(&mut rng, 5);
        assert!(is_ergodic(&spec).ergodic);
        let mut channels = spec.channels().to_vec();
        let mut routes = spec.routes().to_vec();
        match rng.below(3) {
            0 => {
                let k = rng.below(routes.len());
                routes[k].lambda *= rng.range(0.1, 1.0);
            }
            1 => {
                let k = rng.below(routes.len());
                routes[k].mu *= rng.range(1.0, 4.0);
            }
            _ => {
                let k = rng.below(channels.len());
                channels[k].capacity *= rng.range(1.0, 4.0);
            }
        }
        let eased = NetworkSpec::new(channels, routes).unwrap();
        assert!(
            is_ergodic(&eased).ergodic,
            "easing a parameter broke ergodicity"
        );
    }
}

fn rate_grid() -> (Vec<f64>, Vec<f64>) {
    let rates: Vec<f64> = (0..10).map(|k| 0.1 + 4.9 * k as f64 / 9.0).collect();
    let drifts: Vec<f64> = (0..21).map(|k| -5.0 + 10.0 * k as f64 / 20.0).collect();
    (rates, drifts)
}

#[test]
fn drift_cost_matches_the_legendre_oracle_on_the_grid() {
    let (rates, drifts) = rate_grid();
    for &lambda in &rates {
        for &mu in &rates {
            for &d in &drifts {
                let cost = mm1_cost(d, lambda, mu).unwrap().expect_finite("grid");
                let oracle = legendre_oracle(d, lambda, mu);
                assert!(
                    (cost - oracle).abs() <= 1e-8,
                    "l({d} | {lambda}, {mu}) = {cost}, oracle {oracle}"
                );
            }
        }
    }
}

#[test]
fn drift_cost_matches_the_entropy_minimization_oracle_on_the_grid() {
    let (rates, drifts) = rate_grid();
    for &lambda in &rates {
        for &mu in &rates {
            for &d in &drifts {
                let cost = mm1_cost(d, lambda, mu).unwrap().expect_finite("grid");
                let oracle = entropy_min_oracle(d, lambda, mu);
                assert!(
                    (cost - oracle).abs() <= 1e-8,
                    "l({d} | {lambda}, {mu}) = {cost}, oracle {oracle}"
                );
            }
        }
    }
}

#[test]
fn entropy_minimizers_preserve_the_geometric_mean() {
    let mut rng = TestRng::new(113);
    for _ in 0..500 {
        let lambda = rng.range(0.05, 5.0);
        let mu = rng.range(0.05, 5.0);
        let d = rng.range(-4.0, 4.0);
        let (a, _) = entropy_minimize(lambda, mu, d).unwrap();
        let product = a * (a - d);
        assert!(
            (product - lambda * mu).abs() <= 1e-10 * (lambda * mu).max(1.0),
            "a = {a}: a(a - d) = {product}, lambda mu = {}",
            lambda * mu
        );
    }
}

#[test]
fn local_rate_grows_superlinearly_in_the_drift() {
    let mut rng = TestRng::new(127);
    for _ in 0..15 {
        let spec = random_ergodic_spec(&mut rng, 5);
        let n = spec.num_routes();
        let xs = random_state(&mut rng, n, 0.0);
        let x = spec.fluid_state(&xs).unwrap();
        for &size in &[4.0f64, 6.0, 8.0] {
            let m = size.exp();
            let bound = 0.5 * m * m.ln();
            // Drift concentrated on one route, both signs.
            for r in 0..n {
                for &sign in &[1.0, -1.0] {
                    let mut ds = vec![0.0; n];
                    ds[r] = sign * m;
                    let d = Drift::new(&spec, &ds).unwrap();
                    let cost = local_rate(&spec, &x, &d, RateMode::Ergodic).unwrap();
                    let value = cost.expect_finite("interior rate");
                    assert!(
                        value >= bound,
                        "route {r}, drift {}: L = {value} < {bound}",
                        ds[r]
                    );
                }
            }
        }
        // A spread-out drift direction at the largest magnitude.
        let m = 8.0f64.exp();
        let mut dir: Vec<f64> = (0..n).map(|_| rng.range(0.1, 1.0)).collect();
        let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut dir {
            *v *= m / norm;
        }
        let d = Drift::new(&spec, &dir).unwrap();
        let value = local_rate(&spec, &x, &d, RateMode::Ergodic)
            .unwrap()
            .expect_finite("interior rate");
        assert!(value >= 0.5 * m * m.ln(), "spread drift: L = {value}");
    }
}

#[test]
fn local_rate_is_midpoint_convex_in_the_drift() {
    let mut rng = TestRng::new(131);
    let mut strict_checks = 0;
    for _ in 0..60 {
        let spec = random_ergodic_spec(&mut rng, 5);
        let n = spec.num_routes();
        let xs = random_state(&mut rng, n, 0.3);
        let x = spec.fluid_state(&xs).unwrap();
        let face = face_partition(&spec, &x, 0.0).unwrap();
        let sample_drift = |rng: &mut TestRng| -> Vec<f64> {
            (0..n)
                .map(|r| {
                    if xs[r] > 0.0 {
                        rng.range(-2.0, 2.0)
                    } else {
                        rng.range(0.0, 2.0)
                    }
                })
                .collect()
        };
        let d1 = sample_drift(&mut rng);
        let d2 = sample_drift(&mut rng);
        let mid: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| 0.5 * (a + b)).collect();
        let eval = |ds: &[f64]| {
            local_rate(&spec, &x, &Drift::new(&spec, ds).unwrap(), RateMode::Ergodic).unwrap()
        };
        let (c1, c2, cm) = (eval(&d1), eval(&d2), eval(&mid));
        if let (Cost::Finite(a), Cost::Finite(b), Cost::Finite(m)) = (c1, c2, cm) {
            assert!(
                m <= 0.5 * (a + b) + 1e-10,
                "midpoint {m} above chord {}",
                0.5 * (a + b)
            );
            let separation = d1
                .iter()
                .zip(&d2)
                .enumerate()
                .filter(|(r, _)| !face.class(*r).eq(&starshare::model::RouteClass::Ergodic))
                .map(|(_, (a, b))| (a - b).abs())
                .fold(0.0f64, f64::max);
            if separation >= 0.5 {
                strict_checks += 1;
                assert!(
                    m < 0.5 * (a + b) - 1e-9,
                    "strict convexity failed at separation {separation}"
                );
            }
        }
    }
    assert!(strict_checks >= 20, "only {strict_checks} strict cases hit");
}

#[test]
fn stay_cost_objective_is_midpoint_convex_in_sqrt_variables() {
    let mut rng = TestRng::new(137);
    for _ in 0..60 {
        let spec = random_ergodic_spec(&mut rng, 5);
        let n = spec.num_routes();
        let objective = |s: &[f64]| -> f64 {
            spec.routes()
                .iter()
                .zip(s)
                .map(|(route, &v)| (route.lambda.sqrt() - route.mu.sqrt() * v).powi(2))
                .sum()
        };
        let sample = |rng: &mut TestRng| -> Vec<f64> {
            // Scale into the feasible region so midpoints stay feasible.
            let mut s: Vec<f64> = (0..n).map(|_| rng.range(0.0, 1.5)).collect();
            for (ci, c) in spec.channels().iter().enumerate() {
                let used: f64 = spec
                    .routes_of_channel(ci)
                    .iter()
                    .map(|&r| s[r] * s[r])
                    .sum();
                if used > c.capacity {
                    let shrink = (c.capacity / used).sqrt();
                    for &r in spec.routes_of_channel(ci) {
                        s[r] *= shrink;
                    }
                }
            }
            s
        };
        let s1 = sample(&mut rng);
        let s2 = sample(&mut rng);
        let mid: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| 0.5 * (a + b)).collect();
        let gap = 0.5 * (objective(&s1) + objective(&s2)) - objective(&mid);
        // Exact quadratic identity: the gap is sum mu (s1 - s2)^2 / 4.
        let expected: f64 = spec
            .routes()
            .iter()
            .zip(s1.iter().zip(&s2))
            .map(|(route, (a, b))| route.mu * (a - b).powi(2) / 4.0)
            .sum();
        assert!((gap - expected).abs() <= 1e-10 * expected.max(1.0));
        if expected > 1e-6 {
            assert!(gap > 0.0, "strict convexity failed");
        }
    }
}

#[test]
fn stay_cost_agrees_with_a_nested_grid_oracle() {
    // Overloaded pair of routes fighting over one channel.
    let contested = NetworkSpec::new(
        vec![
            Channel { id: 1, capacity: 1.0 },
            Channel { id: 2, capacity: 5.0 },
            Channel { id: 3, capacity: 5.0 },
        ],
        vec![
            Route {
                pair: RoutePair::new(1, 2).unwrap(),
                lambda: 2.0,
                mu: 1.0,
            },
            Route {
                pair: RoutePair::new(1, 3).unwrap(),
                lambda: 3.0,
                mu: 1.0,
            },
        ],
    )
    .unwrap();
    let (value, _) = stay_cost_transient(&contested, &[0, 1]).unwrap();
    let oracle = stay_cost_grid_oracle(&contested, &[0, 1], 7);
    assert!(
        (value - oracle).abs() <= 1e-5,
        "contested pair: {value} vs oracle {oracle}"
    );

    // The three-route overloaded example network.
    let spec = fig4(0.8);
    let (value, _) = stay_cost_transient(&spec, &[0, 1, 2]).unwrap();
    let oracle = stay_cost_grid_oracle(&spec, &[0, 1, 2], 7);
    assert!(
        (value - oracle).abs() <= 1e-5,
        "three-route: {value} vs oracle {oracle}"
    );

    // Random stable instances: both sides should find (near) zero, and
    // random sub-subsets should agree too.
    let mut rng = TestRng::new(139);
    for _ in 0..10 {
        let spec = random_ergodic_spec(&mut rng, 4);
        let m = spec.num_routes().min(3);
        let routes: Vec<usize> = (0..m).collect();
        let (value, _) = stay_cost_transient(&spec, &routes).unwrap();
        let oracle = stay_cost_grid_oracle(&spec, &routes, 7);
        assert!(
            (value - oracle).abs() <= 1e-5,
            "stable subset: {value} vs oracle {oracle}"
        );
        assert!(value.abs() <= 1e-9, "stable subsets hold for free");
    }
}

#[test]
fn general_mode_matches_ergodic_mode_on_stable_networks() {
    let mut rng = TestRng::new(149);
    for _ in 0..40 {
        let spec = random_ergodic_spec(&mut rng, 5);
        let n = spec.num_routes();
        let xs = random_state(&mut rng, n, 0.4);
        let x = spec.fluid_state(&xs).unwrap();
        let ds: Vec<f64> = (0..n)
            .map(|r| {
                if xs[r] > 0.0 {
                    rng.range(-1.0, 1.0)
                } else {
                    rng.range(0.0, 1.0)
                }
            })
            .collect();
        let d = Drift::new(&spec, &ds).unwrap();
        let ergodic = local_rate(&spec, &x, &d, RateMode::Ergodic).unwrap();
        let general = local_rate(&spec, &x, &d, RateMode::General).unwrap();
        match (ergodic, general) {
            (Cost::Finite(a), Cost::Finite(b)) => {
                assert!((a - b).abs() <= 1e-9, "modes disagree: {a} vs {b}")
            }
            (a, b) => assert_eq!(a, b),
        }
    }
}

/// A short straight path from `from` to `to` over `duration`.
fn segment(spec: &NetworkSpec, from: &[f64], to: &[f64], duration: f64) -> PiecewiseLinearPath {
    PiecewiseLinearPath::new(
        spec,
        vec![0.0, duration],
        vec![from.to_vec(), to.to_vec()],
    )
    .unwrap()
}

#[test]
fn path_costs_add_under_concatenation() {
    let mut rng = TestRng::new(151);
    for _ in 0..25 {
        let spec = random_ergodic_spec(&mut rng, 4);
        let n = spec.num_routes();
        let points: Vec<Vec<f64>> = (0..4).map(|_| random_state(&mut rng, n, 0.2)).collect();
        let times = vec![0.0, 1.0, 2.5, 3.0];
        let whole =
            PiecewiseLinearPath::new(&spec, times.clone(), points.clone()).unwrap();
        let front =
            PiecewiseLinearPath::new(&spec, vec![0.0, 1.0], points[..2].to_vec()).unwrap();
        let back = PiecewiseLinearPath::new(
            &spec,
            vec![0.0, 1.5, 2.0],
            points[1..].to_vec(),
        )
        .unwrap();
        let total = path_cost(&spec, &whole, RateMode::Ergodic).unwrap();
        let sum = path_cost(&spec, &front, RateMode::Ergodic).unwrap()
            + path_cost(&spec, &back, RateMode::Ergodic).unwrap();
        assert!(
            (total - sum).abs() <= 1e-9 * total.max(1.0),
            "{total} vs {sum}"
        );
    }
}

#[test]
fn collinear_breakpoints_do_not_change_path_cost() {
    let mut rng = TestRng::new(157);
    for _ in 0..25 {
        let spec = random_ergodic_spec(&mut rng, 4);
        let n = spec.num_routes();
        let from = random_state(&mut rng, n, 0.0);
        let velocity: Vec<f64> = (0..n).map(|_| rng.range(-0.3, 0.6)).collect();
        let duration = 2.0;
        // Keep every component strictly positive so the integrand stays
        // bounded along the whole line.
        let to: Vec<f64> = from
            .iter()
            .zip(&velocity)
            .map(|(x, v)| (x + duration * v).max(0.2 * x))
            .collect();
        let plain = segment(&spec, &from, &to, duration);
        let split_at = rng.range(0.3, 0.7) * duration;
        let midpoint: Vec<f64> = from
            .iter()
            .zip(&to)
            .map(|(a, b)| a + (b - a) * split_at / duration)
            .collect();
        let split = PiecewiseLinearPath::new(
            &spec,
            vec![0.0, split_at, duration],
            vec![from.clone(), midpoint, to.clone()],
        )
        .unwrap();
        let a = path_cost(&spec, &plain, RateMode::Ergodic).unwrap();
        let b = path_cost(&spec, &split, RateMode::Ergodic).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{a} vs {b}");
    }
}

#[test]
fn natural_relaxation_paths_cost_nothing() {
    let mut rng = TestRng::new(163);
    for _ in 0..8 {
        let spec = random_ergodic_spec(&mut rng, 4);
        let n = spec.num_routes();
        let mut state = random_state(&mut rng, n, 0.0);
        let mut t = 0.0;
        let mut times = vec![0.0];
        let mut states = vec![state.clone()];
        // Forward steps sized against the per-job rate, which stiffens as
        // the network drains; stop once it has effectively emptied.
        for _ in 0..60_000 {
            if t >= 40.0 || state.iter().sum::<f64>() < 0.02 {
                break;
            }
            let x = spec.fluid_state(&state).unwrap();
            let rates: Vec<f64> = spec
                .routes()
                .iter()
                .map(|route| service_rate(&spec, Policy::Min, &x, route.pair).unwrap())
                .collect();
            let stiffness = rates
                .iter()
                .zip(&state)
                .map(|(rate, x)| rate / x)
                .fold(1.0f64, f64::max);
            let dt = (0.2 / stiffness).min(0.01);
            for (r, route) in spec.routes().iter().enumerate() {
                state[r] += dt * (route.lambda - rates[r]);
            }
            t += dt;
            times.push(t);
            states.push(state.clone());
        }
        let path = PiecewiseLinearPath::new(&spec, times, states).unwrap();
        let cost = path_cost(&spec, &path, RateMode::Ergodic).unwrap();
        assert!(cost < 2e-4, "natural relaxation cost {cost}");
    }
}

#[test]
fn segment_budget_never_hurts_the_variational_value() {
    let spec = fig4(0.3);
    for channel in [2u32, 3] {
        let mut warm = None;
        let mut last = f64::INFINITY;
        for segments in [1usize, 2, 4] {
            let opts = OptimizeOptions {
                segments,
                multistarts: 6,
                seed: 11,
                warm_start: warm.clone(),
                ..OptimizeOptions::default()
            };
            let result = optimize_tail_decay(&spec, channel, &opts).unwrap();
            assert!(result.value >= 0.0);
            assert!(
                result.value <= last + 1e-9,
                "channel {channel}: K = {segments} worsened {last} -> {}",
                result.value
            );
            last = result.value;
            warm = Some(result.optimal_path);
        }
    }
}

#[test]
fn refined_quadrature_agrees_on_optimized_paths() {
    let spec = fig4(0.3);
    let opts = OptimizeOptions {
        segments: 3,
        multistarts: 6,
        seed: 5,
        ..OptimizeOptions::default()
    };
    let result = optimize_tail_decay(&spec, 3, &opts).unwrap();
    let coarse = path_cost(&spec, &result.optimal_path, RateMode::Ergodic).unwrap();
    let fine = path_cost_refined(&spec, &result.optimal_path, RateMode::Ergodic).unwrap();
    assert!(
        (coarse - fine).abs() < 1e-6,
        "quadrature drift: {coarse} vs {fine}"
    );
}

#[test]
fn optimization_is_deterministic() {
    let spec = fig4(0.3);
    let opts = OptimizeOptions {
        segments: 2,
        multistarts: 4,
        seed: 17,
        ..OptimizeOptions::default()
    };
    let a = optimize_tail_decay(&spec, 3, &opts).unwrap();
    let b = optimize_tail_decay(&spec, 3, &opts).unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.optimal_path.times(), b.optimal_path.times());
    assert_eq!(a.optimal_path.states(), b.optimal_path.states());
}

#[test]
fn simulation_statistics_are_reproducible() {
    let spec = fig4(0.3);
    let opts = SimOptions::new(300.0, 71);
    let a = simulate(&spec, Policy::Min, &spec.empty_state(), &opts).unwrap();
    let b = simulate(&spec, Policy::Min, &spec.empty_state(), &opts).unwrap();
    assert_eq!(a.arrivals(), b.arrivals());
    assert_eq!(a.final_state(), b.final_state());
    assert_eq!(a.histogram(0), b.histogram(0));

    let scaled: Vec<f64> = spec.routes().iter().map(|r| 1.03 * r.lambda).collect();
    let nu: Vec<f64> = spec.routes().iter().map(|r| r.lambda / r.mu).collect();
    let g = TransientGenerator::new(&spec, &scaled, &nu).unwrap();
    let twisted = Dynamics::tilt_transient(&spec, &g).unwrap();
    let c = simulate_dynamics(&twisted, &spec.empty_state(), &opts).unwrap();
    let d = simulate_dynamics(&twisted, &spec.empty_state(), &opts).unwrap();
    assert_eq!(c.arrivals(), d.arrivals());
    assert_eq!(c.mean_allocation(), d.mean_allocation());

    let e = martingale_run(&spec, &twisted, 20.0, 200, 3).unwrap();
    let f = martingale_run(&spec, &twisted, 20.0, 200, 3).unwrap();
    assert_eq!(e.log_weights, f.log_weights);
    assert_eq!(e.estimate, f.estimate);
}

#[test]
fn arrival_rates_concentrate_around_the_intensities() {
    let spec = fig4(0.45);
    let opts = SimOptions::new(50_000.0, 77);
    let stats = simulate(&spec, Policy::Min, &spec.empty_state(), &opts).unwrap();
    for (r, route) in spec.routes().iter().enumerate() {
        let rate = stats.arrival_rates()[r];
        let tol = 3.0 * (route.lambda / opts.horizon).sqrt();
        assert!(
            (rate - route.lambda).abs() < tol,
            "route {}: {rate} vs {} (tol {tol})",
            route.pair,
            route.lambda
        );
    }
}

/// The five reference twists of the example network: identity, raised and
/// lowered arrivals, faster services, and a one-route push.
fn reference_twists(spec: &NetworkSpec) -> Vec<TransientGenerator> {
    let lambda: Vec<f64> = spec.routes().iter().map(|r| r.lambda).collect();
    let natural_nu: Vec<f64> = spec.routes().iter().map(|r| r.lambda / r.mu).collect();
    let scale = |c: f64, v: &[f64]| -> Vec<f64> { v.iter().map(|x| c * x).collect() };
    let mut single = lambda.clone();
    let mut single_nu = natural_nu.clone();
    single[0] *= 1.08;
    single_nu[0] *= 1.08;
    vec![
        TransientGenerator::new(spec, &lambda, &natural_nu).unwrap(),
        TransientGenerator::new(spec, &scale(1.05, &lambda), &scale(1.05, &natural_nu)).unwrap(),
        TransientGenerator::new(spec, &lambda, &scale(1.0 / 1.05, &natural_nu)).unwrap(),
        TransientGenerator::new(spec, &scale(0.95, &lambda), &scale(0.95, &natural_nu)).unwrap(),
        TransientGenerator::new(spec, &single, &single_nu).unwrap(),
    ]
}

#[test]
fn martingale_means_hold_for_a_family_of_twists() {
    let spec = fig4(0.3);
    for (k, g) in reference_twists(&spec).iter().enumerate() {
        let target = Dynamics::tilt_transient(&spec, g).unwrap();
        let est = martingale_run(&spec, &target, 30.0, 2_000, 1000 + k as u64).unwrap();
        assert!(
            (est.estimate - 1.0).abs() <= 3.0 * est.stderr.max(1e-12),
            "twist {k}: mean {} +- {}",
            est.estimate,
            est.stderr
        );
    }
}

#[test]
fn tilted_trajectories_track_prescribed_allocations() {
    let spec = fig4(0.3);
    let a = [0.8, 0.4, 0.6];
    let nu = [1.0, 0.45, 0.35];
    let g = TransientGenerator::new(&spec, &a, &nu).unwrap();
    let dynamics = Dynamics::tilt_transient(&spec, &g).unwrap();
    let opts = SimOptions::new(30_000.0, 83);
    let stats = simulate_dynamics(&dynamics, &spec.empty_state(), &opts).unwrap();
    let nu_bar = stats.mean_allocation();
    for r in 0..3 {
        assert!(
            (nu_bar[r] - nu[r]).abs() < 0.05,
            "route {r}: nu_bar {} vs prescribed {}",
            nu_bar[r],
            nu[r]
        );
    }
}

#[test]
fn pathwise_allocations_stay_feasible() {
    let mut rng = TestRng::new(167);
    for k in 0..6 {
        let spec = random_ergodic_spec(&mut rng, 5);
        let n = spec.num_routes();
        let counts: Vec<u64> = (0..n).map(|_| rng.below(8) as u64).collect();
        let x0 = spec.discrete_state(&counts).unwrap();
        let opts = SimOptions::new(2_000.0, 400 + k);
        let stats = simulate(&spec, Policy::Min, &x0, &opts).unwrap();
        let nu_bar = stats.mean_allocation();
        for (ci, c) in spec.channels().iter().enumerate() {
            let used: f64 = spec
                .routes_of_channel(ci)
                .iter()
                .map(|&r| nu_bar[r])
                .sum();
            assert!(
                used <= c.capacity + 1e-9,
                "channel {}: averaged allocation {used} exceeds {}",
                c.id,
                c.capacity
            );
        }
    }
}
