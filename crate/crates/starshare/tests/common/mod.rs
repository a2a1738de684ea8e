//! Shared helpers for the integration suites: a seeded RNG, random network
//! generation, and independent oracles the library results are checked
//! against. The oracles deliberately avoid every library code path they
//! are used to validate.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starshare::model::{Channel, NetworkSpec, Route, RoutePair};

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        TestRng(ChaCha8Rng::from_seed(key))
    }

    /// Uniform in `[0, 1)`.
    pub fn u01(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.u01()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        (self.u01() * n as f64) as usize % n
    }
}

/// A random network on 2 to `max_channels` channels with every route
/// strictly stable: loads are rescaled so each channel keeps at least 10%
/// headroom. Capacities lie in [1, 2], service parameters in [0.3, 1.2].
pub fn random_ergodic_spec(rng: &mut TestRng, max_channels: usize) -> NetworkSpec {
    loop {
        let n = 2 + rng.below(max_channels.max(2) - 1);
        let ids: Vec<u32> = (1..=n as u32).collect();
        let channels: Vec<Channel> = ids
            .iter()
            .map(|&id| Channel {
                id,
                capacity: rng.range(1.0, 2.0),
            })
            .collect();
        let mut routes = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if rng.u01() < 0.6 {
                    routes.push(Route {
                        pair: RoutePair::new(ids[a], ids[b]).unwrap(),
                        lambda: rng.range(0.1, 1.0),
                        mu: rng.range(0.3, 1.2),
                    });
                }
            }
        }
        if routes.is_empty() {
            continue;
        }
        // Rescale arrivals until every channel has strict headroom.
        let mut shrink = 1.0_f64;
        for (ci, c) in channels.iter().enumerate() {
            let load: f64 = routes
                .iter()
                .filter(|r| r.pair.a() == ids[ci] || r.pair.b() == ids[ci])
                .map(|r| r.lambda / r.mu)
                .sum();
            if load > 0.0 {
                shrink = shrink.min(0.9 * c.capacity / load);
            }
        }
        if shrink < 1.0 {
            for r in &mut routes {
                r.lambda *= shrink;
            }
        }
        return NetworkSpec::new(channels, routes).unwrap();
    }
}

/// Golden-section minimizer for a strictly unimodal function on `[lo, hi]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Reference Poisson relative entropy, written out directly.
pub fn poisson_entropy_ref(nu: f64, lambda: f64) -> f64 {
    if nu == 0.0 {
        return lambda;
    }
    if lambda == 0.0 {
        return f64::INFINITY;
    }
    nu * (nu / lambda).ln() - nu + lambda
}

/// The drift cost as a Legendre transform: `sup_theta { theta d
/// - lambda (e^theta - 1) - mu (e^{-theta} - 1) }`, maximized numerically.
pub fn legendre_oracle(d: f64, lambda: f64, mu: f64) -> f64 {
    let neg = |theta: f64| {
        -(theta * d - lambda * (theta.exp() - 1.0) - mu * ((-theta).exp() - 1.0))
    };
    let (_, m) = golden_min(neg, -60.0, 60.0, 120);
    -m
}

/// The drift cost as an entropy minimization over arrival intensities
/// `a >= max(d, 0)`: `min_a { I(a || lambda) + I(a - d || mu) }`,
/// minimized numerically.
pub fn entropy_min_oracle(d: f64, lambda: f64, mu: f64) -> f64 {
    let lo = d.max(0.0);
    let f = |a: f64| poisson_entropy_ref(a, lambda) + poisson_entropy_ref(a - d, mu);
    let (_, m) = golden_min(f, lo, lo + 60.0, 120);
    // The boundary a = max(d, 0) itself can be optimal when a rate is 0.
    m.min(f(lo))
}

/// Dense-grid oracle for the stay cost of a route subset: minimizes
/// `sum (sqrt(lambda) - sqrt(mu nu))^2` over feasible allocations by
/// nested grid refinement (21 points per axis, shrinking 5x per round).
/// Only usable for subsets of up to 3 routes.
pub fn stay_cost_grid_oracle(spec: &NetworkSpec, routes: &[usize], rounds: usize) -> f64 {
    assert!(routes.len() <= 3, "grid oracle is exponential in routes");
    let m = routes.len();
    if m == 0 {
        return 0.0;
    }
    let objective = |nu: &[f64]| -> f64 {
        routes
            .iter()
            .zip(nu)
            .map(|(&r, &v)| {
                let route = &spec.routes()[r];
                (route.lambda.sqrt() - (route.mu * v).sqrt()).powi(2)
            })
            .sum()
    };
    let feasible = |nu: &[f64]| -> bool {
        for (ci, c) in spec.channels().iter().enumerate() {
            let used: f64 = spec
                .routes_of_channel(ci)
                .iter()
                .filter_map(|r| routes.iter().position(|&k| k == *r))
                .map(|pos| nu[pos])
                .sum();
            if used > c.capacity + 1e-12 {
                return false;
            }
        }
        true
    };
    let upper: Vec<f64> = routes
        .iter()
        .map(|&r| {
            let (i, j) = spec.route_endpoints(r);
            spec.channels()[i].capacity.min(spec.channels()[j].capacity)
        })
        .collect();
    let mut center: Vec<f64> = upper.iter().map(|&u| u / 2.0).collect();
    let mut half: Vec<f64> = upper.iter().map(|&u| u / 2.0).collect();
    let mut best = f64::INFINITY;
    let mut best_nu = center.clone();
    let points_per_axis = 21usize;
    for _ in 0..rounds {
        let total = points_per_axis.pow(m as u32);
        for flat in 0..total {
            let mut idx = flat;
            let mut nu = vec![0.0; m];
            for k in 0..m {
                let step = idx % points_per_axis;
                idx /= points_per_axis;
                let lo = (center[k] - half[k]).max(0.0);
                let hi = (center[k] + half[k]).min(upper[k]);
                nu[k] = lo + (hi - lo) * step as f64 / (points_per_axis - 1) as f64;
            }
            if feasible(&nu) {
                let v = objective(&nu);
                if v < best {
                    best = v;
                    best_nu = nu;
                }
            }
        }
        center = best_nu.clone();
        for h in &mut half {
            *h /= 5.0;
        }
    }
    best
}
