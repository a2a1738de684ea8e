//! Local large-deviations rate calculus for the min policy.
//!
//! The building block is the twisted birth/death cost of holding an M/M/1
//! queue with arrival rate `lambda` and service rate `mu` at drift `D`:
//!
//! ```text
//!     l(D || lambda, mu) = D log( (D + sqrt(D^2 + 4 lambda mu)) / (2 lambda) )
//!                          + lambda + mu - sqrt(D^2 + 4 lambda mu),
//! ```
//!
//! the Legendre transform of `theta -> lambda (e^theta - 1) + mu (e^-theta - 1)`.
//! It is also the value of a two-sided Poisson entropy minimization: over
//! tilted arrival rate `a >= max(0, D)` and tilted service rate `a - D`,
//!
//! ```text
//!     l(D || lambda, mu) = min_a  I_p(a || lambda) + I_p(a - D || mu),
//!     I_p(nu || lambda)  = nu log(nu / lambda) - nu + lambda,
//! ```
//!
//! attained at `a* = (D + sqrt(D^2 + 4 lambda mu)) / 2`, which satisfies
//! `a* (a* - D) = lambda mu`: the optimal twist preserves the geometric mean
//! of the rates.
//!
//! The local rate of the network at a fluid state `x` charges every route
//! that is either occupied or jammed by an occupied neighbour:
//!
//! ```text
//!     L(x, D) = sum over active and jammed routes of l(D_ij || lambda_ij, mu_ij(x)),
//! ```
//!
//! with `mu_ij(x)` the min-policy service rate (zero on jammed routes, so a
//! jammed route at zero drift pays its full arrival intensity `lambda_ij`).
//! In the general (possibly non-ergodic) form the isolated empty block pays
//! in addition the cheapest way of standing still,
//!
//! ```text
//!     inf over allocations nu of  sum over the block of (sqrt(lambda_ij) - sqrt(mu_ij nu_ij))^2
//! ```
//!
//! subject to `nu >= 0` and `sum_j nu_ij <= C_i` per channel. That convex
//! program is solved exactly by [`stay_cost_transient`].

use crate::error::{Error, Result};
use crate::model::{
    bandwidth_share, face_partition, is_ergodic, FacePartition, FluidState, NetworkSpec, Policy,
    RouteClass,
};

/// Iteration cap for the projected-gradient stay-cost solver.
const STAY_COST_MAX_ITERS: usize = 100_000;
/// The solver stops when the gradient-mapping norm falls below this.
const STAY_COST_GRAD_TOL: f64 = 1e-10;

/// A nonnegative extended real: rate function values are either finite costs
/// or a hard infinity, and the infinity never leaks into float arithmetic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Cost {
    pub fn is_finite(&self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    /// The finite value, if there is one.
    pub fn finite(&self) -> Option<f64> {
        match self {
            Cost::Finite(v) => Some(*v),
            Cost::Infinite => None,
        }
    }

    /// Unwraps a cost that the caller knows to be finite.
    pub fn expect_finite(&self, what: &str) -> f64 {
        match self {
            Cost::Finite(v) => *v,
            Cost::Infinite => panic!("{what}: cost is infinite"),
        }
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a + b),
            _ => Cost::Infinite,
        }
    }
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        let mut acc = Cost::Finite(0.0);
        for c in iter {
            acc += c;
            if !acc.is_finite() {
                return Cost::Infinite;
            }
        }
        acc
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Cost) -> Option<std::cmp::Ordering> {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.partial_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Some(std::cmp::Ordering::Less),
            (Cost::Infinite, Cost::Finite(_)) => Some(std::cmp::Ordering::Greater),
            (Cost::Infinite, Cost::Infinite) => Some(std::cmp::Ordering::Equal),
        }
    }
}

impl std::fmt::Display for Cost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => write!(f, "inf"),
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::invalid(format!(
            "{name}: must be finite and >= 0, got {v}"
        )));
    }
    Ok(())
}

/// The M/M/1 drift cost `l(D || lambda, mu)` from the module docs.
///
/// Conventions at the boundary of the parameter domain: with no arrivals an
/// upward drift is impossible (`+inf`), with no services a downward drift is
/// impossible, and `l(0 || lambda, mu) = (sqrt(lambda) - sqrt(mu))^2`
/// covers every remaining degenerate case, in particular
/// `l(0 || lambda, 0) = lambda`, `l(0 || 0, mu) = mu`, `l(0 || 0, 0) = 0`.
pub fn mm1_cost(d: f64, lambda: f64, mu: f64) -> Result<Cost> {
    check_rate("lambda", lambda)?;
    check_rate("mu", mu)?;
    if !d.is_finite() {
        return Err(Error::invalid(format!("d: must be finite, got {d}")));
    }
    if d == 0.0 {
        return Ok(Cost::Finite(
            (lambda + mu - 2.0 * (lambda * mu).sqrt()).max(0.0),
        ));
    }
    if lambda == 0.0 && d > 0.0 {
        return Ok(Cost::Infinite);
    }
    if mu == 0.0 && d < 0.0 {
        return Ok(Cost::Infinite);
    }
    let s = (d * d + 4.0 * lambda * mu).sqrt();
    // For d < 0 the direct numerator d + s cancels catastrophically; the
    // conjugate form 2 mu / (s - d) is exact there (and also covers
    // lambda = 0 with d < 0, where it reduces to mu / |d|).
    let arg = if d > 0.0 {
        (d + s) / (2.0 * lambda)
    } else {
        2.0 * mu / (s - d)
    };
    Ok(Cost::Finite((d * arg.ln() + lambda + mu - s).max(0.0)))
}

/// Relative entropy rate between Poisson streams of intensities `nu` and
/// `lambda`: `I_p(nu || lambda) = nu log(nu/lambda) - nu + lambda`, with
/// `I_p(0 || lambda) = lambda` and `I_p(nu || 0) = +inf` for `nu > 0`.
pub fn poisson_entropy(nu: f64, lambda: f64) -> Result<Cost> {
    check_rate("nu", nu)?;
    check_rate("lambda", lambda)?;
    if nu == 0.0 {
        return Ok(Cost::Finite(lambda));
    }
    if lambda == 0.0 {
        return Ok(Cost::Infinite);
    }
    Ok(Cost::Finite(
        (nu * (nu / lambda).ln() - nu + lambda).max(0.0),
    ))
}

/// Solves `min over a >= max(0, D)` of
/// `I_p(a || lambda) + I_p(a - D || mu)` in closed form and returns the
/// minimizer together with the value, which equals
/// `mm1_cost(d, lambda, mu)`.
pub fn entropy_minimize(lambda: f64, mu: f64, d: f64) -> Result<(f64, Cost)> {
    check_rate("lambda", lambda)?;
    check_rate("mu", mu)?;
    if !d.is_finite() {
        return Err(Error::invalid(format!("d: must be finite, got {d}")));
    }
    let s = (d * d + 4.0 * lambda * mu).sqrt();
    let a_star = if d >= 0.0 {
        (d + s) / 2.0
    } else {
        // (d + s)/2 with the conjugate rewrite, stable for d << 0.
        2.0 * lambda * mu / (s - d)
    };
    Ok((a_star, mm1_cost(d, lambda, mu)?))
}

/// Route-indexed fluid drift. Components may take either sign.
#[derive(Clone, Debug, PartialEq)]
pub struct Drift {
    d: Vec<f64>,
}

impl Drift {
    pub fn new(spec: &NetworkSpec, d: &[f64]) -> Result<Self> {
        if d.len() != spec.num_routes() {
            return Err(Error::invalid(format!(
                "drift: expected {} route components, got {}",
                spec.num_routes(),
                d.len()
            )));
        }
        for (k, &v) in d.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "drift[{k}]: must be finite, got {v}"
                )));
            }
        }
        Ok(Drift { d: d.to_vec() })
    }

    pub fn components(&self) -> &[f64] {
        &self.d
    }
}

/// Route-indexed bandwidth allocation, the variable of the stay-cost
/// program.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    nu: Vec<f64>,
}

impl Allocation {
    pub fn new(spec: &NetworkSpec, nu: &[f64]) -> Result<Self> {
        if nu.len() != spec.num_routes() {
            return Err(Error::invalid(format!(
                "allocation: expected {} route components, got {}",
                spec.num_routes(),
                nu.len()
            )));
        }
        for (k, &v) in nu.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "allocation[{k}]: must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Allocation { nu: nu.to_vec() })
    }

    pub fn components(&self) -> &[f64] {
        &self.nu
    }

    /// Checks membership in the allocation polytope:
    /// `sum_j nu_ij <= C_i + tol` on every channel.
    pub fn is_feasible(&self, spec: &NetworkSpec, tol: f64) -> bool {
        (0..spec.num_channels()).all(|ci| {
            let used: f64 = spec
                .routes_of_channel(ci)
                .iter()
                .map(|&r| self.nu[r])
                .sum();
            used <= spec.channels()[ci].capacity + tol
        })
    }
}

/// A tilted local generator: per-route twisted arrival rates and twisted
/// service rates. On active and jammed routes both are constants; on the
/// isolated empty block the entries are ignored by the entropy and the
/// dynamics stay the natural ones.
#[derive(Clone, Debug, PartialEq)]
pub struct TiltedGenerator {
    lambda_tilde: Vec<f64>,
    mu_tilde: Vec<f64>,
}

impl TiltedGenerator {
    pub fn new(spec: &NetworkSpec, lambda_tilde: &[f64], mu_tilde: &[f64]) -> Result<Self> {
        if lambda_tilde.len() != spec.num_routes() || mu_tilde.len() != spec.num_routes() {
            return Err(Error::invalid(format!(
                "tilted generator: expected {} route components",
                spec.num_routes()
            )));
        }
        for (k, &v) in lambda_tilde.iter().enumerate() {
            check_rate(&format!("lambda_tilde[{k}]"), v)?;
        }
        for (k, &v) in mu_tilde.iter().enumerate() {
            check_rate(&format!("mu_tilde[{k}]"), v)?;
        }
        Ok(TiltedGenerator {
            lambda_tilde: lambda_tilde.to_vec(),
            mu_tilde: mu_tilde.to_vec(),
        })
    }

    /// The cheapest twist that respects the face of `x`: natural arrival
    /// rates and min-policy service rates on active routes, arrivals cut on
    /// jammed routes (a jammed route cannot stay empty otherwise). Its
    /// relative entropy at `x` is the sum of the jammed arrival intensities;
    /// in particular it is zero at interior states.
    pub fn natural(spec: &NetworkSpec, x: &FluidState) -> Result<Self> {
        let face = face_partition(spec, x, 0.0)?;
        let mut lambda_tilde = Vec::with_capacity(spec.num_routes());
        let mut mu_tilde = Vec::with_capacity(spec.num_routes());
        for (r, route) in spec.routes().iter().enumerate() {
            match face.class(r) {
                RouteClass::Active => {
                    lambda_tilde.push(route.lambda);
                    mu_tilde.push(min_service_rate(spec, x, r));
                }
                RouteClass::Jammed => {
                    lambda_tilde.push(0.0);
                    mu_tilde.push(0.0);
                }
                RouteClass::Ergodic => {
                    lambda_tilde.push(route.lambda);
                    mu_tilde.push(route.mu);
                }
            }
        }
        Ok(TiltedGenerator {
            lambda_tilde,
            mu_tilde,
        })
    }

    pub fn lambda_tilde(&self) -> &[f64] {
        &self.lambda_tilde
    }

    pub fn mu_tilde(&self) -> &[f64] {
        &self.mu_tilde
    }

    /// Feasibility for the face of `x`: arrivals must be cut on jammed
    /// routes. Returns the face on success.
    pub fn check_face(&self, spec: &NetworkSpec, x: &FluidState) -> Result<FacePartition> {
        let face = face_partition(spec, x, 0.0)?;
        for r in face.jammed() {
            if self.lambda_tilde[r] != 0.0 {
                return Err(Error::InfeasibleGenerator(format!(
                    "route {}: jammed routes must have lambda_tilde = 0, got {}",
                    spec.routes()[r].pair,
                    self.lambda_tilde[r]
                )));
            }
        }
        Ok(face)
    }
}

/// A tilted generator for the transient regime, given as per-route twisted
/// arrival rates `a` and a prescribed allocation `nu`. The induced dynamics
/// are again a min-policy star network, with parameters
/// `lambda_ij = a_ij` and `mu_ij = a_ij / nu_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransientGenerator {
    a: Vec<f64>,
    nu: Vec<f64>,
}

impl TransientGenerator {
    pub fn new(spec: &NetworkSpec, a: &[f64], nu: &[f64]) -> Result<Self> {
        if a.len() != spec.num_routes() || nu.len() != spec.num_routes() {
            return Err(Error::invalid(format!(
                "transient generator: expected {} route components",
                spec.num_routes()
            )));
        }
        for (k, &v) in a.iter().enumerate() {
            check_rate(&format!("a[{k}]"), v)?;
        }
        let alloc = Allocation::new(spec, nu)?;
        for k in 0..a.len() {
            if nu[k] == 0.0 && a[k] != 0.0 {
                return Err(Error::InfeasibleGenerator(format!(
                    "route {}: a must be 0 where nu is 0, got a = {}",
                    spec.routes()[k].pair,
                    a[k]
                )));
            }
        }
        if !alloc.is_feasible(spec, 0.0) {
            for (ci, c) in spec.channels().iter().enumerate() {
                let used: f64 = spec.routes_of_channel(ci).iter().map(|&r| nu[r]).sum();
                if used > c.capacity {
                    return Err(Error::InfeasibleGenerator(format!(
                        "channel {}: allocation uses {used} > capacity {}",
                        c.id, c.capacity
                    )));
                }
            }
        }
        Ok(TransientGenerator {
            a: a.to_vec(),
            nu: nu.to_vec(),
        })
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// The twisted service parameter `a_ij / nu_ij` (zero on dead routes).
    pub fn mu_tilde(&self, route_idx: usize) -> f64 {
        if self.nu[route_idx] == 0.0 {
            0.0
        } else {
            self.a[route_idx] / self.nu[route_idx]
        }
    }
}

pub(crate) fn min_service_rate(spec: &NetworkSpec, x: &FluidState, route_idx: usize) -> f64 {
    spec.routes()[route_idx].mu
        * bandwidth_share(spec, Policy::Min, x, route_idx).expect("min policy share")
}

/// Entropy of a tilted generator relative to the natural local dynamics at
/// `x`: the sum over active and jammed routes of
/// `I_p(lambda_tilde || lambda) + I_p(mu_tilde || mu_ij(x))`.
///
/// On a jammed route the reference service rate is zero, so any positive
/// `mu_tilde` there makes the entropy infinite; a positive `lambda_tilde`
/// there is rejected outright, mirroring that no finite-cost twist may keep
/// feeding a starved route.
pub fn relative_entropy(spec: &NetworkSpec, x: &FluidState, g: &TiltedGenerator) -> Result<Cost> {
    let face = g.check_face(spec, x)?;
    let mut total = Cost::Finite(0.0);
    for r in 0..spec.num_routes() {
        match face.class(r) {
            RouteClass::Active | RouteClass::Jammed => {
                let route = &spec.routes()[r];
                total += poisson_entropy(g.lambda_tilde[r], route.lambda)?;
                total += poisson_entropy(g.mu_tilde[r], min_service_rate(spec, x, r))?;
                if !total.is_finite() {
                    return Ok(Cost::Infinite);
                }
            }
            RouteClass::Ergodic => {}
        }
    }
    Ok(total)
}

/// Entropy of a transient generator relative to the natural dynamics:
/// `sum over routes of I_p(a || lambda) + I_p(a || mu nu)`. The second term
/// compares the twisted service stream (which completes documents at rate
/// `a` in its own steady flow) against the natural service capability
/// `mu_ij nu_ij` under the prescribed allocation.
pub fn relative_entropy_transient(spec: &NetworkSpec, g: &TransientGenerator) -> Result<Cost> {
    let mut total = Cost::Finite(0.0);
    for (r, route) in spec.routes().iter().enumerate() {
        total += poisson_entropy(g.a[r], route.lambda)?;
        total += poisson_entropy(g.a[r], route.mu * g.nu[r])?;
        if !total.is_finite() {
            return Ok(Cost::Infinite);
        }
    }
    Ok(total)
}

/// Which form of the local rate to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateMode {
    /// Requires the network to be ergodic; the isolated empty block costs
    /// nothing because it can stand still for free.
    Ergodic,
    /// Adds the stay cost of the isolated empty block, which is positive
    /// exactly when that block is itself overloaded.
    General,
}

/// The local rate `L(x, D)` described in the module docs.
///
/// Drift components must be nonnegative off the occupied face (an empty
/// route cannot lose documents); a negative off-face component yields
/// `+inf`. In `Ergodic` mode a non-ergodic network is a hard error so a
/// wrong finite value is never returned silently.
pub fn local_rate(spec: &NetworkSpec, x: &FluidState, d: &Drift, mode: RateMode) -> Result<Cost> {
    if mode == RateMode::Ergodic {
        let report = is_ergodic(spec);
        if let Some(over) = report.first_overload() {
            return Err(Error::NotErgodic {
                channel: over.id,
                load: over.load,
                capacity: over.capacity,
            });
        }
    }
    if d.components().len() != spec.num_routes() {
        return Err(Error::invalid(format!(
            "drift: expected {} route components, got {}",
            spec.num_routes(),
            d.components().len()
        )));
    }
    let face = face_partition(spec, x, 0.0)?;
    let block_cost = match mode {
        RateMode::Ergodic => 0.0,
        RateMode::General => {
            let block: Vec<usize> = face.ergodic().collect();
            stay_cost_transient(spec, &block)?.0
        }
    };
    Ok(local_rate_on_face(spec, &face, x, d.components(), block_cost))
}

/// The local rate split into its per-route contributions.
#[derive(Clone, Debug)]
pub struct RateBreakdown {
    /// The full local rate; equals the sum of the parts below.
    pub total: Cost,
    /// One contribution per route: the drift cost on active routes, the
    /// arrival-cut cost on jammed routes, zero on the isolated block.
    pub per_route: Vec<Cost>,
    /// Sum over jammed routes (the price of silencing their arrivals).
    pub jammed_cut: Cost,
    /// Stay cost of the isolated empty block (zero in `Ergodic` mode).
    pub block_cost: f64,
}

/// Like [`local_rate`], but reports where the cost comes from.
pub fn local_rate_breakdown(
    spec: &NetworkSpec,
    x: &FluidState,
    d: &Drift,
    mode: RateMode,
) -> Result<RateBreakdown> {
    if mode == RateMode::Ergodic {
        let report = is_ergodic(spec);
        if let Some(over) = report.first_overload() {
            return Err(Error::NotErgodic {
                channel: over.id,
                load: over.load,
                capacity: over.capacity,
            });
        }
    }
    if d.components().len() != spec.num_routes() {
        return Err(Error::invalid(format!(
            "drift: expected {} route components, got {}",
            spec.num_routes(),
            d.components().len()
        )));
    }
    let face = face_partition(spec, x, 0.0)?;
    let block_cost = match mode {
        RateMode::Ergodic => 0.0,
        RateMode::General => {
            let block: Vec<usize> = face.ergodic().collect();
            stay_cost_transient(spec, &block)?.0
        }
    };
    let ds = d.components();
    let mut per_route = Vec::with_capacity(spec.num_routes());
    let mut jammed_cut = Cost::Finite(0.0);
    let mut total = Cost::Finite(block_cost);
    for (r, route) in spec.routes().iter().enumerate() {
        let part = match face.class(r) {
            RouteClass::Active => {
                let rate = min_service_rate(spec, x, r);
                mm1_cost(ds[r], route.lambda, rate).expect("validated rates")
            }
            RouteClass::Jammed => {
                if ds[r] < 0.0 {
                    Cost::Infinite
                } else {
                    let part = mm1_cost(ds[r], route.lambda, 0.0).expect("validated rates");
                    jammed_cut += part;
                    part
                }
            }
            RouteClass::Ergodic => {
                if ds[r] < 0.0 {
                    Cost::Infinite
                } else {
                    Cost::Finite(0.0)
                }
            }
        };
        total += part;
        per_route.push(part);
    }
    Ok(RateBreakdown {
        total,
        per_route,
        jammed_cut,
        block_cost,
    })
}

/// Face-resolved evaluation shared with the path integrator: the face (and
/// the empty-block stay cost) stay fixed while `x` moves inside one face.
pub(crate) fn local_rate_on_face(
    spec: &NetworkSpec,
    face: &FacePartition,
    x: &FluidState,
    d: &[f64],
    block_cost: f64,
) -> Cost {
    let mut total = Cost::Finite(block_cost);
    for (r, route) in spec.routes().iter().enumerate() {
        match face.class(r) {
            RouteClass::Active => {
                let rate = min_service_rate(spec, x, r);
                total += mm1_cost(d[r], route.lambda, rate).expect("validated rates");
            }
            RouteClass::Jammed | RouteClass::Ergodic => {
                if d[r] < 0.0 {
                    return Cost::Infinite;
                }
                if face.class(r) == RouteClass::Jammed {
                    total += mm1_cost(d[r], route.lambda, 0.0).expect("validated rates");
                }
            }
        }
        if !total.is_finite() {
            return Cost::Infinite;
        }
    }
    total
}

/// Cheapest instantaneous cost of holding a subnetwork of empty routes at
/// zero: minimizes `sum (sqrt(lambda_ij) - sqrt(mu_ij nu_ij))^2` over
/// allocations `nu >= 0` with `sum_j nu_ij <= C_i` on every channel.
///
/// Returns the optimal value together with a full-length allocation that is
/// zero off the subset. The value is zero exactly when the subset satisfies
/// the weak stability condition `sum_j lambda_ij / mu_ij <= C_i` (then the
/// natural point `nu = lambda / mu` is feasible). The program is solved in
/// the substituted variables `s_ij = sqrt(nu_ij)`, where the objective is a
/// separable strictly convex quadratic and each capacity constraint is a
/// Euclidean ball over the channel's routes; projected gradient steps with a
/// Dykstra projection onto the intersection converge to the unique optimum.
pub fn stay_cost_transient(spec: &NetworkSpec, routes: &[usize]) -> Result<(f64, Allocation)> {
    let mut seen = vec![false; spec.num_routes()];
    for &r in routes {
        if r >= spec.num_routes() {
            return Err(Error::invalid(format!(
                "routes: index {r} out of range ({} routes)",
                spec.num_routes()
            )));
        }
        if seen[r] {
            return Err(Error::invalid(format!("routes: duplicate index {r}")));
        }
        seen[r] = true;
    }
    let mut nu_full = vec![0.0; spec.num_routes()];
    if routes.is_empty() {
        return Ok((0.0, Allocation { nu: nu_full }));
    }

    let lam: Vec<f64> = routes.iter().map(|&r| spec.routes()[r].lambda).collect();
    let mu: Vec<f64> = routes.iter().map(|&r| spec.routes()[r].mu).collect();
    let n = routes.len();

    // Per-channel ball constraints, in subset coordinates.
    let mut balls: Vec<(f64, Vec<usize>)> = Vec::new();
    for ci in 0..spec.num_channels() {
        let coords: Vec<usize> = routes
            .iter()
            .enumerate()
            .filter(|(_, &r)| {
                let (a, b) = spec.route_endpoints(r);
                a == ci || b == ci
            })
            .map(|(k, _)| k)
            .collect();
        if !coords.is_empty() {
            balls.push((spec.channels()[ci].capacity, coords));
        }
    }

    let objective = |s: &[f64]| -> f64 {
        (0..n)
            .map(|k| {
                let r = lam[k].sqrt() - mu[k].sqrt() * s[k];
                r * r
            })
            .sum()
    };

    // Natural start, then projected-gradient iterations.
    let mut s: Vec<f64> = (0..n).map(|k| (lam[k] / mu[k]).sqrt()).collect();
    project_intersection(&balls, &mut s);
    let lipschitz = 2.0 * mu.iter().cloned().fold(0.0_f64, f64::max);
    let step = 1.0 / lipschitz;
    for _ in 0..STAY_COST_MAX_ITERS {
        let mut p: Vec<f64> = (0..n)
            .map(|k| {
                let grad = 2.0 * mu[k] * s[k] - 2.0 * (lam[k] * mu[k]).sqrt();
                s[k] - step * grad
            })
            .collect();
        project_intersection(&balls, &mut p);
        let gap: f64 = s
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / step;
        s = p;
        if gap < STAY_COST_GRAD_TOL {
            break;
        }
    }

    let value = objective(&s).max(0.0);
    for (k, &r) in routes.iter().enumerate() {
        nu_full[r] = s[k] * s[k];
    }
    Ok((value, Allocation { nu: nu_full }))
}

/// Dykstra's alternating projections onto the intersection of the channel
/// balls `{ s : sum over coords of s^2 <= cap }`.
fn project_intersection(balls: &[(f64, Vec<usize>)], s: &mut [f64]) {
    let feasible = |s: &[f64]| {
        balls.iter().all(|(cap, coords)| {
            coords.iter().map(|&k| s[k] * s[k]).sum::<f64>() <= *cap * (1.0 + 1e-12)
        })
    };
    if feasible(s) {
        return;
    }
    let mut corrections: Vec<Vec<f64>> = balls.iter().map(|(_, c)| vec![0.0; c.len()]).collect();
    for _ in 0..1000 {
        let mut shift = 0.0_f64;
        for (b, (cap, coords)) in balls.iter().enumerate() {
            let y: Vec<f64> = coords
                .iter()
                .zip(&corrections[b])
                .map(|(&k, &c)| s[k] + c)
                .collect();
            let norm2: f64 = y.iter().map(|v| v * v).sum();
            let scale = if norm2 > *cap { (cap / norm2).sqrt() } else { 1.0 };
            for (pos, &k) in coords.iter().enumerate() {
                let proj = y[pos] * scale;
                corrections[b][pos] = y[pos] - proj;
                shift = shift.max((s[k] - proj).abs());
                s[k] = proj;
            }
        }
        if shift < 1e-15 {
            break;
        }
    }
}
