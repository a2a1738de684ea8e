//! Star network model: channels, routes, states, and sharing policies.
//!
//! A star network has `N` channels with finite capacities `C_i`. A route is
//! an unordered pair of distinct channels `ij`; a document on route `ij`
//! consumes the same amount of bandwidth on channel `i` and on channel `j`
//! for the whole of its transfer. Documents arrive on route `ij` as a
//! Poisson stream of intensity `lambda_ij` and carry independent exponential
//! sizes of mean `1/mu_ij`.
//!
//! With `x_ij` documents on route `ij` and channel occupancy
//! `x_i = sum_j x_ij`, the min policy allocates bandwidth
//!
//! ```text
//!     nu_ij(x) = x_ij * min(C_i / x_i, C_j / x_j)      (0/0 read as 0)
//! ```
//!
//! so the total service rate on route `ij` is `mu_ij * nu_ij(x)`. Every
//! route through the most loaded endpoint saturates that channel, which is
//! what makes the policy analytically tractable: each channel behaves like a
//! processor-sharing server from the point of view of the routes it
//! bottlenecks.
//!
//! The anchored processor-sharing policy is kept alongside as a reference:
//! it serves route `ij` at `mu_ij * C_a * x_ij / x_a` for an anchor channel
//! `a` in `{i, j}`, i.e. it lets the anchor divide its capacity evenly per
//! document regardless of what the far endpoints can sustain.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// One channel of the star: an identifier and a bandwidth capacity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub id: u32,
    pub capacity: f64,
}

/// An unordered pair of channel ids, stored canonically with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoutePair {
    a: u32,
    b: u32,
}

impl RoutePair {
    /// Builds the canonical pair for two distinct channel ids.
    pub fn new(i: u32, j: u32) -> Result<Self> {
        if i == j {
            return Err(Error::invalid(format!(
                "route ({i}, {j}): endpoints must be distinct channels"
            )));
        }
        Ok(RoutePair {
            a: i.min(j),
            b: i.max(j),
        })
    }

    pub fn a(&self) -> u32 {
        self.a
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    /// Given one endpoint, returns the other one.
    pub fn other(&self, id: u32) -> Option<u32> {
        if id == self.a {
            Some(self.b)
        } else if id == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

impl std::fmt::Display for RoutePair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

/// A route together with its traffic parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Route {
    pub pair: RoutePair,
    /// Poisson arrival intensity, strictly positive.
    pub lambda: f64,
    /// Inverse mean document size, strictly positive.
    pub mu: f64,
}

/// A validated star network.
///
/// Channels are kept sorted by id and routes sorted by canonical pair, so
/// two specs describing the same network compare equal and serialize
/// identically. Route-indexed vectors throughout the crate (`FluidState`,
/// drifts, allocations, ...) follow the order of [`NetworkSpec::routes`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    channels: Vec<Channel>,
    routes: Vec<Route>,
    /// channel index -> indices of the routes through it
    routes_by_channel: Vec<Vec<usize>>,
    /// route index -> (channel index of `a`, channel index of `b`)
    endpoints: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    channels: Vec<ChannelDoc>,
    routes: Vec<RouteDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelDoc {
    id: u32,
    capacity: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteDoc {
    i: u32,
    j: u32,
    lambda: f64,
    mu: f64,
}

impl NetworkSpec {
    pub fn new(channels: Vec<Channel>, routes: Vec<Route>) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::invalid(
                "channels: a star network needs at least two channels",
            ));
        }
        let mut channels = channels;
        channels.sort_by_key(|c| c.id);
        for (k, w) in channels.windows(2).enumerate() {
            if w[0].id == w[1].id {
                return Err(Error::invalid(format!(
                    "channels[{}].id: duplicate channel id {}",
                    k + 1,
                    w[1].id
                )));
            }
        }
        for (k, c) in channels.iter().enumerate() {
            if !(c.capacity.is_finite() && c.capacity > 0.0) {
                return Err(Error::invalid(format!(
                    "channels[{k}].capacity: must be finite and > 0, got {}",
                    c.capacity
                )));
            }
        }

        if routes.is_empty() {
            return Err(Error::invalid("routes: at least one route is required"));
        }
        let mut routes = routes;
        routes.sort_by_key(|r| r.pair);
        let channel_index = |id: u32| channels.binary_search_by_key(&id, |c| c.id);
        let mut endpoints = Vec::with_capacity(routes.len());
        for (k, r) in routes.iter().enumerate() {
            let ia = channel_index(r.pair.a).map_err(|_| {
                Error::invalid(format!("routes[{k}].i: unknown channel id {}", r.pair.a))
            })?;
            let ib = channel_index(r.pair.b).map_err(|_| {
                Error::invalid(format!("routes[{k}].j: unknown channel id {}", r.pair.b))
            })?;
            if !(r.lambda.is_finite() && r.lambda > 0.0) {
                return Err(Error::invalid(format!(
                    "routes[{k}].lambda: must be finite and > 0, got {}",
                    r.lambda
                )));
            }
            if !(r.mu.is_finite() && r.mu > 0.0) {
                return Err(Error::invalid(format!(
                    "routes[{k}].mu: must be finite and > 0, got {}",
                    r.mu
                )));
            }
            endpoints.push((ia, ib));
        }
        for (k, w) in routes.windows(2).enumerate() {
            if w[0].pair == w[1].pair {
                return Err(Error::invalid(format!(
                    "routes[{}]: duplicate route {}",
                    k + 1,
                    w[1].pair
                )));
            }
        }

        let mut routes_by_channel = vec![Vec::new(); channels.len()];
        for (k, &(ia, ib)) in endpoints.iter().enumerate() {
            routes_by_channel[ia].push(k);
            routes_by_channel[ib].push(k);
        }

        Ok(NetworkSpec {
            channels,
            routes,
            routes_by_channel,
            endpoints,
        })
    }

    /// Parses a network from its JSON document form:
    ///
    /// ```text
    /// { "channels": [{"id": 1, "capacity": 3.0}, ...],
    ///   "routes":   [{"i": 1, "j": 2, "lambda": 1.0, "mu": 1.0}, ...] }
    /// ```
    ///
    /// Unknown keys are rejected and validation errors name the offending
    /// field.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("network document: {e}")))?;
        Self::from_doc(doc)
    }

    fn from_doc(doc: NetworkDoc) -> Result<Self> {
        let channels = doc
            .channels
            .into_iter()
            .map(|c| Channel {
                id: c.id,
                capacity: c.capacity,
            })
            .collect();
        let routes = doc
            .routes
            .into_iter()
            .enumerate()
            .map(|(k, r)| {
                let pair = RoutePair::new(r.i, r.j)
                    .map_err(|_| Error::invalid(format!("routes[{k}]: i and j must differ")))?;
                Ok(Route {
                    pair,
                    lambda: r.lambda,
                    mu: r.mu,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels, routes)
    }

    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            channels: self
                .channels
                .iter()
                .map(|c| ChannelDoc {
                    id: c.id,
                    capacity: c.capacity,
                })
                .collect(),
            routes: self
                .routes
                .iter()
                .map(|r| RouteDoc {
                    i: r.pair.a,
                    j: r.pair.b,
                    lambda: r.lambda,
                    mu: r.mu,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("network document serialization")
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    pub fn num_routes(&self) -> usize {
        self.routes.len()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, id: u32) -> Result<usize> {
        self.channels
            .binary_search_by_key(&id, |c| c.id)
            .map_err(|_| Error::invalid(format!("unknown channel id {id}")))
    }

    pub fn route_index(&self, pair: RoutePair) -> Result<usize> {
        self.routes
            .binary_search_by_key(&pair, |r| r.pair)
            .map_err(|_| Error::invalid(format!("unknown route {pair}")))
    }

    /// Indices of the routes through the channel with the given index.
    pub fn routes_of_channel(&self, channel_idx: usize) -> &[usize] {
        &self.routes_by_channel[channel_idx]
    }

    /// Channel indices of a route's two endpoints.
    pub fn route_endpoints(&self, route_idx: usize) -> (usize, usize) {
        self.endpoints[route_idx]
    }

    /// Validates a route-indexed fluid occupancy vector.
    pub fn fluid_state(&self, x: &[f64]) -> Result<FluidState> {
        if x.len() != self.routes.len() {
            return Err(Error::invalid(format!(
                "state: expected {} route components, got {}",
                self.routes.len(),
                x.len()
            )));
        }
        for (k, &v) in x.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "state[{k}] (route {}): must be finite and >= 0, got {v}",
                    self.routes[k].pair
                )));
            }
        }
        Ok(FluidState { x: x.to_vec() })
    }

    /// Validates a route-indexed document count vector.
    pub fn discrete_state(&self, q: &[u64]) -> Result<DiscreteState> {
        if q.len() != self.routes.len() {
            return Err(Error::invalid(format!(
                "state: expected {} route components, got {}",
                self.routes.len(),
                q.len()
            )));
        }
        Ok(DiscreteState { q: q.to_vec() })
    }

    /// The empty discrete state.
    pub fn empty_state(&self) -> DiscreteState {
        DiscreteState {
            q: vec![0; self.routes.len()],
        }
    }

    /// The three-channel example network used throughout the test suite and
    /// by the `example-fig4` command: capacities `(3, 2, 1)`, routes `1-2`
    /// (`lambda = mu = 1`), `2-3` (`lambda = 1, mu = 2`) and `1-3`
    /// (`lambda = lambda13, mu = 1`). Channel 3 is the tight one: the
    /// network is ergodic exactly when `lambda13 < 1/2`.
    pub fn example_three_channel(lambda13: f64) -> Result<NetworkSpec> {
        NetworkSpec::new(
            vec![
                Channel {
                    id: 1,
                    capacity: 3.0,
                },
                Channel {
                    id: 2,
                    capacity: 2.0,
                },
                Channel {
                    id: 3,
                    capacity: 1.0,
                },
            ],
            vec![
                Route {
                    pair: RoutePair::new(1, 2)?,
                    lambda: 1.0,
                    mu: 1.0,
                },
                Route {
                    pair: RoutePair::new(1, 3)?,
                    lambda: lambda13,
                    mu: 1.0,
                },
                Route {
                    pair: RoutePair::new(2, 3)?,
                    lambda: 1.0,
                    mu: 2.0,
                },
            ],
        )
    }
}

/// Route-indexed nonnegative occupancies at fluid scale.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    x: Vec<f64>,
}

impl FluidState {
    pub fn components(&self) -> &[f64] {
        &self.x
    }

    /// Occupancy of one channel: the sum over the routes through it.
    pub fn channel_occupancy(&self, spec: &NetworkSpec, channel_idx: usize) -> f64 {
        spec.routes_of_channel(channel_idx)
            .iter()
            .map(|&r| self.x[r])
            .sum()
    }

    /// Componentwise scaling by `c >= 0`.
    pub fn scale(&self, c: f64) -> FluidState {
        FluidState {
            x: self.x.iter().map(|v| v * c).collect(),
        }
    }
}

/// Route-indexed document counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteState {
    q: Vec<u64>,
}

impl DiscreteState {
    pub fn counts(&self) -> &[u64] {
        &self.q
    }

    pub fn channel_occupancy(&self, spec: &NetworkSpec, channel_idx: usize) -> u64 {
        spec.routes_of_channel(channel_idx)
            .iter()
            .map(|&r| self.q[r])
            .sum()
    }

    pub fn to_fluid(&self) -> FluidState {
        FluidState {
            x: self.q.iter().map(|&n| n as f64).collect(),
        }
    }
}

/// Bandwidth-sharing policy under which service rates are evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Policy {
    /// The min policy described in the module docs.
    Min,
    /// Processor sharing anchored at one channel: route `ij` is served at
    /// `mu_ij * C_a * x_ij / x_a` where `a` is the anchor. Only meaningful
    /// for routes through the anchor.
    ProcessorSharing { anchor: u32 },
}

/// Classification of the routes relative to a fluid state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RouteClass {
    /// Positive occupancy.
    Active,
    /// Zero occupancy but sharing a channel with an active route, hence
    /// starved of bandwidth: its service rate is pinned at zero while its
    /// arrivals keep flowing.
    Jammed,
    /// Zero occupancy and no contact with any active route; the isolated
    /// subnetwork of such routes runs as an unloaded star of its own.
    Ergodic,
}

/// The face partition of a state: every route is active, jammed, or in the
/// isolated ergodic block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FacePartition {
    classes: Vec<RouteClass>,
}

impl FacePartition {
    pub fn class(&self, route_idx: usize) -> RouteClass {
        self.classes[route_idx]
    }

    pub fn classes(&self) -> &[RouteClass] {
        &self.classes
    }

    pub fn is_active(&self, route_idx: usize) -> bool {
        self.classes[route_idx] == RouteClass::Active
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.iter_class(RouteClass::Active)
    }

    pub fn jammed(&self) -> impl Iterator<Item = usize> + '_ {
        self.iter_class(RouteClass::Jammed)
    }

    pub fn ergodic(&self) -> impl Iterator<Item = usize> + '_ {
        self.iter_class(RouteClass::Ergodic)
    }

    fn iter_class(&self, class: RouteClass) -> impl Iterator<Item = usize> + '_ {
        self.classes
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == class)
            .map(|(k, _)| k)
    }
}

/// Computes the face partition of `x`. Components with `x_ij <= zero_tol`
/// count as empty; `zero_tol` is there for states produced by optimizers,
/// pass `0.0` for exact states.
pub fn face_partition(spec: &NetworkSpec, x: &FluidState, zero_tol: f64) -> Result<FacePartition> {
    if !(zero_tol.is_finite() && zero_tol >= 0.0) {
        return Err(Error::invalid(format!(
            "zero_tol: must be finite and >= 0, got {zero_tol}"
        )));
    }
    let xs = x.components();
    if xs.len() != spec.num_routes() {
        return Err(Error::invalid(format!(
            "state: expected {} route components, got {}",
            spec.num_routes(),
            xs.len()
        )));
    }
    let active: Vec<bool> = xs.iter().map(|&v| v > zero_tol).collect();
    let mut channel_busy = vec![false; spec.num_channels()];
    for (r, &is_active) in active.iter().enumerate() {
        if is_active {
            let (ia, ib) = spec.route_endpoints(r);
            channel_busy[ia] = true;
            channel_busy[ib] = true;
        }
    }
    let classes = active
        .iter()
        .enumerate()
        .map(|(r, &is_active)| {
            if is_active {
                RouteClass::Active
            } else {
                let (ia, ib) = spec.route_endpoints(r);
                if channel_busy[ia] || channel_busy[ib] {
                    RouteClass::Jammed
                } else {
                    RouteClass::Ergodic
                }
            }
        })
        .collect();
    Ok(FacePartition { classes })
}

/// Total service rate on `route` in state `x` under `policy`.
///
/// For the min policy this is `mu_ij * nu_ij(x)` with the allocation from
/// the module docs; empty routes (and the 0/0 at an empty channel) get rate
/// zero. For anchored processor sharing the route must pass through the
/// anchor.
pub fn service_rate(
    spec: &NetworkSpec,
    policy: Policy,
    x: &FluidState,
    route: RoutePair,
) -> Result<f64> {
    let r = spec.route_index(route)?;
    if x.components().len() != spec.num_routes() {
        return Err(Error::invalid(format!(
            "state: expected {} route components, got {}",
            spec.num_routes(),
            x.components().len()
        )));
    }
    Ok(spec.routes[r].mu * bandwidth_share(spec, policy, x, r)?)
}

/// The allocation `nu_ij(x)` itself (service rate divided by `mu_ij`).
pub fn bandwidth_share(
    spec: &NetworkSpec,
    policy: Policy,
    x: &FluidState,
    route_idx: usize,
) -> Result<f64> {
    let xs = x.components();
    let x_r = xs[route_idx];
    if x_r <= 0.0 {
        return Ok(0.0);
    }
    let (ia, ib) = spec.route_endpoints(route_idx);
    match policy {
        Policy::Min => {
            let occ_a = x.channel_occupancy(spec, ia);
            let occ_b = x.channel_occupancy(spec, ib);
            let ratio_a = spec.channels[ia].capacity / occ_a;
            let ratio_b = spec.channels[ib].capacity / occ_b;
            Ok(x_r * ratio_a.min(ratio_b))
        }
        Policy::ProcessorSharing { anchor } => {
            let anchor_idx = spec.channel_index(anchor)?;
            if anchor_idx != ia && anchor_idx != ib {
                return Err(Error::invalid(format!(
                    "route {} does not pass through anchor channel {anchor}",
                    spec.routes[route_idx].pair
                )));
            }
            let occ = x.channel_occupancy(spec, anchor_idx);
            Ok(spec.channels[anchor_idx].capacity * x_r / occ)
        }
    }
}

/// Load and capacity of one channel in the ergodicity report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChannelLoad {
    pub id: u32,
    /// `sum_j lambda_ij / mu_ij` over the routes through the channel.
    pub load: f64,
    pub capacity: f64,
}

/// Result of the ergodicity check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErgodicityReport {
    pub ergodic: bool,
    pub loads: Vec<ChannelLoad>,
}

impl ErgodicityReport {
    /// The first overloaded channel, if any.
    pub fn first_overload(&self) -> Option<&ChannelLoad> {
        self.loads.iter().find(|l| l.load >= l.capacity)
    }
}

/// Checks the stability condition: the network is ergodic iff
/// `sum_j lambda_ij / mu_ij < C_i` strictly on every channel `i`.
pub fn is_ergodic(spec: &NetworkSpec) -> ErgodicityReport {
    let loads: Vec<ChannelLoad> = spec
        .channels
        .iter()
        .enumerate()
        .map(|(ci, c)| ChannelLoad {
            id: c.id,
            load: spec
                .routes_of_channel(ci)
                .iter()
                .map(|&r| spec.routes[r].lambda / spec.routes[r].mu)
                .sum(),
            capacity: c.capacity,
        })
        .collect();
    ErgodicityReport {
        ergodic: loads.iter().all(|l| l.load < l.capacity),
        loads,
    }
}
