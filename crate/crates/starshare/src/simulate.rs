//! Event-driven simulation of the network, under its natural dynamics or a
//! twisted version of them, with the likelihood-ratio bookkeeping that links
//! the two path laws.
//!
//! A state is the vector of per-route document counts. Arrivals on route
//! `ij` occur at a constant rate and increment the count; services occur at
//! a state-dependent rate and decrement it. The simulator is an exact
//! next-event loop: exponential holding times at the total rate, jumps
//! picked proportionally to individual rates, statistics accumulated with
//! holding-time weights.
//!
//! For two sets of dynamics with the same jumps, the likelihood ratio of
//! the target law against the simulated law over a horizon `t` is
//!
//! ```text
//!     M_t = exp( sum over jumps of log(r_target / r_sim)
//!                - integral of (R_target(x) - R_sim(x)) dt ),
//! ```
//!
//! where `r` are the rates of the realized transitions evaluated in the
//! pre-jump state and `R` are total rates. The integral term is exact: both
//! totals are constant between jumps. Simulating under the natural law and
//! weighting toward a twisted target makes `M_t` a mean-one martingale;
//! simulating under the twisted law and weighting toward the natural one
//! turns rare-event frequencies into unbiased probability estimates.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DiscreteState, FacePartition, FluidState, NetworkSpec, Policy, RouteClass};
use crate::rate::{TiltedGenerator, TransientGenerator};
use crate::util::{stream_seed, u01, u01_open};

/// Full service-rate refresh cadence, to stop incremental totals drifting.
const REFRESH_EVERY: u64 = 1_000_000;

/// Knobs for a single simulated trajectory.
#[derive(Clone, Debug)]
pub struct SimOptions {
    /// Simulated time span.
    pub horizon: f64,
    /// Base RNG seed.
    pub seed: u64,
    /// Stream index; replications with the same seed and different indices
    /// are independent.
    pub replication: u64,
    /// Occupancies above this accumulate in one overflow bin per channel.
    pub histogram_cap: usize,
    /// If set, record the state every this many time units (point samples,
    /// useful for goodness-of-fit tests on nearly independent snapshots).
    pub sample_interval: Option<f64>,
    /// Number of equal time slices the histograms are additionally kept in.
    /// Decay fits use the slices for a batch-means standard error, which
    /// reflects trajectory-to-trajectory variability far better than the
    /// regression residuals of a single fit.
    pub batches: usize,
}

impl SimOptions {
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimOptions {
            horizon,
            seed,
            replication: 0,
            histogram_cap: 10_000,
            sample_interval: None,
            batches: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ServiceKind {
    /// Service at `mu` times the min-policy bandwidth of the current state.
    Min { mu: f64 },
    /// Service at `mu` times the processor-sharing bandwidth on the anchor.
    ProcessorSharing { anchor: usize, mu: f64 },
    /// Constant total service rate while the route is occupied.
    Constant { mu: f64 },
}

/// A simulatable set of dynamics over a network's routes: constant arrival
/// rates plus a service law per route.
#[derive(Clone, Debug)]
pub struct Dynamics<'a> {
    spec: &'a NetworkSpec,
    lambda: Vec<f64>,
    service: Vec<ServiceKind>,
}

impl<'a> Dynamics<'a> {
    /// The network's own dynamics under the given bandwidth policy.
    pub fn natural(spec: &'a NetworkSpec, policy: Policy) -> Result<Self> {
        let service = match policy {
            Policy::Min => spec
                .routes()
                .iter()
                .map(|r| ServiceKind::Min { mu: r.mu })
                .collect(),
            Policy::ProcessorSharing { anchor } => {
                let anchor_idx = spec.channel_index(anchor)?;
                for r in spec.routes() {
                    if r.pair.other(anchor).is_none() {
                        return Err(Error::invalid(format!(
                            "route {}: does not pass through anchor channel {anchor}",
                            r.pair
                        )));
                    }
                }
                spec.routes()
                    .iter()
                    .map(|r| ServiceKind::ProcessorSharing {
                        anchor: anchor_idx,
                        mu: r.mu,
                    })
                    .collect()
            }
        };
        Ok(Dynamics {
            spec,
            lambda: spec.routes().iter().map(|r| r.lambda).collect(),
            service,
        })
    }

    /// The localized twist at `x`: active and jammed routes get constant
    /// arrival rate `lambda_tilde` and constant service rate `mu_tilde`,
    /// the isolated empty block keeps its natural min-policy dynamics.
    pub fn tilt(spec: &'a NetworkSpec, x: &FluidState, g: &TiltedGenerator) -> Result<Self> {
        let face = g.check_face(spec, x)?;
        let mut lambda = Vec::with_capacity(spec.num_routes());
        let mut service = Vec::with_capacity(spec.num_routes());
        for (r, route) in spec.routes().iter().enumerate() {
            match face.class(r) {
                RouteClass::Active | RouteClass::Jammed => {
                    lambda.push(g.lambda_tilde()[r]);
                    service.push(ServiceKind::Constant {
                        mu: g.mu_tilde()[r],
                    });
                }
                RouteClass::Ergodic => {
                    lambda.push(route.lambda);
                    service.push(ServiceKind::Min { mu: route.mu });
                }
            }
        }
        Ok(Dynamics {
            spec,
            lambda,
            service,
        })
    }

    /// The twist of the transient regime: a min-policy network with arrival
    /// rates `a` and service parameters `a / nu` (zero on dead routes).
    pub fn tilt_transient(spec: &'a NetworkSpec, g: &TransientGenerator) -> Result<Self> {
        let service = (0..spec.num_routes())
            .map(|r| ServiceKind::Min { mu: g.mu_tilde(r) })
            .collect();
        Ok(Dynamics {
            spec,
            lambda: g.a().to_vec(),
            service,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.spec
    }

    pub fn arrival_rates(&self) -> &[f64] {
        &self.lambda
    }

    fn service_rate(&self, q: &[u64], occ: &[u64], r: usize) -> f64 {
        if q[r] == 0 {
            return 0.0;
        }
        match self.service[r] {
            ServiceKind::Constant { mu } => mu,
            ServiceKind::Min { mu } => {
                let (i, j) = self.spec.route_endpoints(r);
                let ri = self.spec.channels()[i].capacity / occ[i] as f64;
                let rj = self.spec.channels()[j].capacity / occ[j] as f64;
                mu * q[r] as f64 * ri.min(rj)
            }
            ServiceKind::ProcessorSharing { anchor, mu } => {
                mu * self.spec.channels()[anchor].capacity * q[r] as f64 / occ[anchor] as f64
            }
        }
    }
}

/// The min-policy bandwidth allocated to route `r` in state `q`; a pure
/// state functional, independent of which dynamics produced the state.
fn min_allocation(spec: &NetworkSpec, q: &[u64], occ: &[u64], r: usize) -> f64 {
    if q[r] == 0 {
        return 0.0;
    }
    let (i, j) = spec.route_endpoints(r);
    let ri = spec.channels()[i].capacity / occ[i] as f64;
    let rj = spec.channels()[j].capacity / occ[j] as f64;
    q[r] as f64 * ri.min(rj)
}

fn channel_occupancies(spec: &NetworkSpec, q: &[u64]) -> Vec<u64> {
    let mut occ = vec![0u64; spec.num_channels()];
    for (r, &count) in q.iter().enumerate() {
        let (i, j) = spec.route_endpoints(r);
        occ[i] += count;
        occ[j] += count;
    }
    occ
}

/// Routes whose service rate may change when channels `i` or `j` change,
/// deduplicated, into `out`.
fn affected_routes(spec: &NetworkSpec, i: usize, j: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend_from_slice(spec.routes_of_channel(i));
    for &r in spec.routes_of_channel(j) {
        let (a, b) = spec.route_endpoints(r);
        if a != i && b != i {
            out.push(r);
        }
    }
}

fn select_jump(mut u: f64, lambda: &[f64], service: &[f64]) -> (bool, usize) {
    let mut last = None;
    for (r, &rate) in lambda.iter().enumerate() {
        if rate > 0.0 {
            last = Some((true, r));
            u -= rate;
            if u < 0.0 {
                return (true, r);
            }
        }
    }
    for (r, &rate) in service.iter().enumerate() {
        if rate > 0.0 {
            last = Some((false, r));
            u -= rate;
            if u < 0.0 {
                return (false, r);
            }
        }
    }
    last.expect("positive total rate implies a positive jump rate")
}

/// Per-channel point-sample histograms taken at a fixed interval.
#[derive(Clone, Debug, Serialize)]
pub struct SampledOccupancy {
    pub interval: f64,
    pub count: u64,
    /// `[channel][occupancy]` sample counts, overflow in the last slot.
    pub histograms: Vec<Vec<u64>>,
}

/// Everything measured along one simulated trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryStats {
    horizon: f64,
    event_count: u64,
    arrivals: Vec<u64>,
    initial_state: Vec<u64>,
    final_state: Vec<u64>,
    /// `[channel][occupancy] -> time mass`; the last slot aggregates
    /// occupancies above the cap.
    histograms: Vec<Vec<f64>>,
    histogram_cap: usize,
    /// `[batch][channel][occupancy]`: the same masses split into equal
    /// time slices; sums to `histograms` over the batch axis. Kept out of
    /// the serialized form, which carries the pooled histograms already.
    #[serde(skip)]
    batch_histograms: Vec<Vec<Vec<f64>>>,
    /// Per-route integral of the min-policy bandwidth over time.
    allocation_time: Vec<f64>,
    samples: Option<SampledOccupancy>,
}

impl TrajectoryStats {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn event_count(&self) -> u64 {
        self.event_count
    }

    /// Cumulative arrival counts per route.
    pub fn arrivals(&self) -> &[u64] {
        &self.arrivals
    }

    pub fn initial_state(&self) -> &[u64] {
        &self.initial_state
    }

    pub fn final_state(&self) -> &[u64] {
        &self.final_state
    }

    pub fn histogram_cap(&self) -> usize {
        self.histogram_cap
    }

    /// Time mass spent at each occupancy of a channel; the last slot holds
    /// everything above the cap.
    pub fn histogram(&self, channel_idx: usize) -> &[f64] {
        &self.histograms[channel_idx]
    }

    /// Number of time slices the histograms were also collected in.
    pub fn num_batches(&self) -> usize {
        self.batch_histograms.len()
    }

    /// Time mass per occupancy of a channel within one time slice.
    pub fn batch_histogram(&self, batch: usize, channel_idx: usize) -> &[f64] {
        &self.batch_histograms[batch][channel_idx]
    }

    /// Per-route time-averaged min-policy bandwidth.
    pub fn mean_allocation(&self) -> Vec<f64> {
        self.allocation_time
            .iter()
            .map(|&a| a / self.horizon)
            .collect()
    }

    /// Per-route empirical arrival rates.
    pub fn arrival_rates(&self) -> Vec<f64> {
        self.arrivals
            .iter()
            .map(|&a| a as f64 / self.horizon)
            .collect()
    }

    pub fn samples(&self) -> Option<&SampledOccupancy> {
        self.samples.as_ref()
    }

    /// Occupancy histograms as CSV with columns `channel,n,time_mass`;
    /// the overflow bin, when nonempty, appears as `n = cap + 1`.
    pub fn histogram_csv(&self, spec: &NetworkSpec) -> String {
        let mut out = String::from("channel,n,time_mass\n");
        for (ci, hist) in self.histograms.iter().enumerate() {
            let id = spec.channels()[ci].id;
            for (n, &mass) in hist.iter().enumerate() {
                if mass > 0.0 {
                    out.push_str(&format!("{id},{n},{mass}\n"));
                }
            }
        }
        out
    }

    /// A JSON summary of the run: rates, mean allocations and occupancies,
    /// and the final state.
    pub fn summary_json(&self, spec: &NetworkSpec) -> String {
        #[derive(Serialize)]
        struct RouteSummary {
            i: u32,
            j: u32,
            arrivals: u64,
            arrival_rate: f64,
            mean_allocation: f64,
            final_count: u64,
        }
        #[derive(Serialize)]
        struct ChannelSummary {
            id: u32,
            capacity: f64,
            mean_occupancy: f64,
            final_occupancy: u64,
        }
        #[derive(Serialize)]
        struct Summary {
            horizon: f64,
            events: u64,
            routes: Vec<RouteSummary>,
            channels: Vec<ChannelSummary>,
        }
        let routes = spec
            .routes()
            .iter()
            .enumerate()
            .map(|(r, route)| RouteSummary {
                i: route.pair.a(),
                j: route.pair.b(),
                arrivals: self.arrivals[r],
                arrival_rate: self.arrivals[r] as f64 / self.horizon,
                mean_allocation: self.allocation_time[r] / self.horizon,
                final_count: self.final_state[r],
            })
            .collect();
        let final_occ = channel_occupancies(spec, &self.final_state);
        let channels = spec
            .channels()
            .iter()
            .enumerate()
            .map(|(ci, c)| ChannelSummary {
                id: c.id,
                capacity: c.capacity,
                mean_occupancy: self.histograms[ci]
                    .iter()
                    .enumerate()
                    .map(|(n, &mass)| n as f64 * mass)
                    .sum::<f64>()
                    / self.horizon,
                final_occupancy: final_occ[ci],
            })
            .collect();
        serde_json::to_string_pretty(&Summary {
            horizon: self.horizon,
            events: self.event_count,
            routes,
            channels,
        })
        .expect("summary serializes")
    }

    #[cfg(test)]
    pub(crate) fn synthetic(
        horizon: f64,
        arrivals: Vec<u64>,
        initial_state: Vec<u64>,
        final_state: Vec<u64>,
        histograms: Vec<Vec<f64>>,
        histogram_cap: usize,
        allocation_time: Vec<f64>,
    ) -> Self {
        TrajectoryStats {
            horizon,
            event_count: 0,
            arrivals,
            initial_state,
            final_state,
            batch_histograms: vec![histograms.clone()],
            histograms,
            histogram_cap,
            allocation_time,
            samples: None,
        }
    }
}

/// Simulates the network under its natural dynamics.
pub fn simulate(
    spec: &NetworkSpec,
    policy: Policy,
    x0: &DiscreteState,
    opts: &SimOptions,
) -> Result<TrajectoryStats> {
    simulate_dynamics(&Dynamics::natural(spec, policy)?, x0, opts)
}

/// Simulates arbitrary dynamics (natural or twisted) from `x0`.
///
/// Deterministic given `(opts.seed, opts.replication)`. When the total jump
/// rate hits zero the state is absorbed and time fast-forwards to the
/// horizon.
pub fn simulate_dynamics(
    dynamics: &Dynamics,
    x0: &DiscreteState,
    opts: &SimOptions,
) -> Result<TrajectoryStats> {
    let spec = dynamics.spec;
    if !(opts.horizon.is_finite() && opts.horizon > 0.0) {
        return Err(Error::invalid(format!(
            "horizon: must be finite and > 0, got {}",
            opts.horizon
        )));
    }
    if x0.counts().len() != spec.num_routes() {
        return Err(Error::invalid(format!(
            "x0: expected {} route counts, got {}",
            spec.num_routes(),
            x0.counts().len()
        )));
    }
    if let Some(dt) = opts.sample_interval {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!(
                "sample_interval: must be finite and > 0, got {dt}"
            )));
        }
    }
    if opts.batches == 0 {
        return Err(Error::invalid("batches: must be at least 1"));
    }
    let cap = opts.histogram_cap.max(1);
    let nr = spec.num_routes();
    let nc = spec.num_channels();
    let batch_len = opts.horizon / opts.batches as f64;

    let mut rng = ChaCha8Rng::from_seed(stream_seed(opts.seed, opts.replication));
    let mut q: Vec<u64> = x0.counts().to_vec();
    let mut occ = channel_occupancies(spec, &q);
    let mut service = vec![0.0; nr];
    let mut nu = vec![0.0; nr];
    for r in 0..nr {
        service[r] = dynamics.service_rate(&q, &occ, r);
        nu[r] = min_allocation(spec, &q, &occ, r);
    }
    let arrival_total: f64 = dynamics.lambda.iter().sum();
    let mut service_total: f64 = service.iter().sum();

    let mut batch_histograms = vec![vec![vec![0.0; cap + 2]; nc]; opts.batches];
    let mut arrivals = vec![0u64; nr];
    let mut allocation_time = vec![0.0; nr];
    let mut samples = opts.sample_interval.map(|dt| SampledOccupancy {
        interval: dt,
        count: 0,
        histograms: vec![vec![0u64; cap + 2]; nc],
    });
    let mut next_sample = opts.sample_interval.unwrap_or(f64::INFINITY);

    let mut t = 0.0;
    let mut events = 0u64;
    let mut affected = Vec::with_capacity(nr);
    loop {
        let total = arrival_total + service_total;
        let t_next = if total > 0.0 {
            (t - u01_open(&mut rng).ln() / total).min(opts.horizon)
        } else {
            opts.horizon
        };
        let dt = t_next - t;
        // Each interval's mass goes to the batch its start falls in; the
        // batch totals therefore sum to the horizon exactly.
        let batch = ((t / batch_len) as usize).min(opts.batches - 1);
        for (hist, &o) in batch_histograms[batch].iter_mut().zip(&occ) {
            hist[(o as usize).min(cap + 1)] += dt;
        }
        for (acc, &rate) in allocation_time.iter_mut().zip(&nu) {
            *acc += dt * rate;
        }
        if let Some(s) = &mut samples {
            while next_sample <= t_next {
                for (hist, &o) in s.histograms.iter_mut().zip(&occ) {
                    hist[(o as usize).min(cap + 1)] += 1;
                }
                s.count += 1;
                next_sample += s.interval;
            }
        }
        t = t_next;
        if t >= opts.horizon {
            break;
        }
        let (is_arrival, r) = select_jump(u01(&mut rng) * total, &dynamics.lambda, &service);
        let (i, j) = spec.route_endpoints(r);
        if is_arrival {
            q[r] += 1;
            occ[i] += 1;
            occ[j] += 1;
            arrivals[r] += 1;
        } else {
            q[r] -= 1;
            occ[i] -= 1;
            occ[j] -= 1;
        }
        events += 1;
        affected_routes(spec, i, j, &mut affected);
        for &ar in &affected {
            service_total -= service[ar];
            service[ar] = dynamics.service_rate(&q, &occ, ar);
            service_total += service[ar];
            nu[ar] = min_allocation(spec, &q, &occ, ar);
        }
        if events.is_multiple_of(REFRESH_EVERY) {
            service_total = 0.0;
            for r in 0..nr {
                service[r] = dynamics.service_rate(&q, &occ, r);
                nu[r] = min_allocation(spec, &q, &occ, r);
                service_total += service[r];
            }
        }
    }

    let mut histograms = vec![vec![0.0; cap + 2]; nc];
    for batch in &batch_histograms {
        for (total, partial) in histograms.iter_mut().zip(batch) {
            for (acc, mass) in total.iter_mut().zip(partial) {
                *acc += mass;
            }
        }
    }
    Ok(TrajectoryStats {
        horizon: opts.horizon,
        event_count: events,
        arrivals,
        initial_state: x0.counts().to_vec(),
        final_state: q,
        histograms,
        histogram_cap: cap,
        batch_histograms,
        allocation_time,
        samples,
    })
}

/// Default regression window for [`estimate_decay_rate`], as fractions of
/// the largest occupied histogram bin.
pub const DECAY_WINDOW: (f64, f64) = (0.5, 0.99);

/// Least-squares decay estimate from an occupancy histogram.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecayEstimate {
    /// Fitted slope of `n -> -log(time fraction at occupancy n)`.
    pub rate: f64,
    /// Standard error of the slope: the batch-means error over the
    /// trajectory's time slices when at least two of them support a fit,
    /// otherwise the single-fit regression error.
    pub stderr: f64,
    /// Number of histogram bins that entered the fit.
    pub bins_used: usize,
    /// Inclusive bin range the window selected.
    pub window_bins: (usize, usize),
    /// Time slices that supported a batch fit; 0 means the standard error
    /// fell back to the regression error.
    pub batches_used: usize,
}

/// Mass-weighted least-squares line through `(n, -log(mass_n / horizon))`
/// over the occupied bins of `[lo, hi]`. Returns the slope with its
/// regression standard error and the number of points, or nothing when
/// fewer than `min_points` bins are occupied.
///
/// Weighting by mass reflects how the sampling variance of a log mass
/// shrinks with the mass itself, and keeps barely-visited tail bins from
/// dominating the slope through their leverage.
fn mass_weighted_slope(
    masses: &[f64],
    lo: usize,
    hi: usize,
    horizon: f64,
    min_points: usize,
) -> Option<(f64, f64, usize)> {
    let points: Vec<(f64, f64, f64)> = (lo..=hi.min(masses.len().saturating_sub(1)))
        .filter(|&n| masses[n] > 0.0)
        .map(|n| (n as f64, -(masses[n] / horizon).ln(), masses[n]))
        .collect();
    if points.len() < min_points.max(3) {
        return None;
    }
    let w_total: f64 = points.iter().map(|p| p.2).sum();
    let mean_n = points.iter().map(|p| p.0 * p.2).sum::<f64>() / w_total;
    let mean_y = points.iter().map(|p| p.1 * p.2).sum::<f64>() / w_total;
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - mean_n).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = points
        .iter()
        .map(|p| p.2 * (p.0 - mean_n) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_n;
    let ss_resid: f64 = points
        .iter()
        .map(|p| p.2 * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let m = points.len() as f64;
    let stderr = (ss_resid / (m - 2.0) / sxx).sqrt();
    Some((slope, stderr, points.len()))
}

/// Fits `-log P[Q_i = n]` linearly in `n` over a window of the histogram,
/// between `window.0` and `window.1` times the largest occupied bin, by
/// least squares weighted with the time mass of each bin. The overflow bin
/// never enters the fit. Errors when fewer than 4 occupied bins fall
/// inside the window.
///
/// The reported standard error comes from refitting the same window on
/// each time slice of the trajectory and taking the spread of the slopes;
/// residual-based errors of a single fit ignore the serial correlation of
/// the visit counts and can understate the trajectory-to-trajectory
/// variability by an order of magnitude.
pub fn estimate_decay_rate(
    stats: &TrajectoryStats,
    channel_idx: usize,
    window: (f64, f64),
) -> Result<DecayEstimate> {
    if channel_idx >= stats.histograms.len() {
        return Err(Error::invalid(format!(
            "channel index {channel_idx} out of range ({} channels)",
            stats.histograms.len()
        )));
    }
    let (w0, w1) = window;
    if !(0.0..=1.0).contains(&w0) || !(0.0..=1.0).contains(&w1) || w0 >= w1 {
        return Err(Error::invalid(format!(
            "window: need 0 <= lo < hi <= 1, got ({w0}, {w1})"
        )));
    }
    let finite = &stats.histograms[channel_idx][..=stats.histogram_cap];
    let n_max = match finite.iter().rposition(|&m| m > 0.0) {
        Some(n) => n,
        None => {
            return Err(Error::InsufficientData(
                "histogram is empty over the finite bins".into(),
            ))
        }
    };
    let lo = (w0 * n_max as f64).ceil() as usize;
    let hi = ((w1 * n_max as f64).floor() as usize).min(n_max);
    let (slope, regression_stderr, bins_used) =
        match mass_weighted_slope(finite, lo, hi, stats.horizon, 4) {
            Some(fit) => fit,
            None => {
                let occupied = (lo..=hi).filter(|&n| finite[n] > 0.0).count();
                return Err(Error::InsufficientData(format!(
                    "only {occupied} occupied bins in window [{lo}, {hi}], need at least 4"
                )));
            }
        };

    let batch_horizon = stats.horizon / stats.batch_histograms.len().max(1) as f64;
    let batch_slopes: Vec<f64> = stats
        .batch_histograms
        .iter()
        .filter_map(|batch| {
            let masses = &batch[channel_idx][..=stats.histogram_cap];
            mass_weighted_slope(masses, lo, hi, batch_horizon, 4).map(|fit| fit.0)
        })
        .collect();
    let (stderr, batches_used) = if batch_slopes.len() >= 2 {
        let b = batch_slopes.len() as f64;
        let mean = batch_slopes.iter().sum::<f64>() / b;
        let var = batch_slopes
            .iter()
            .map(|s| (s - mean).powi(2))
            .sum::<f64>()
            / (b - 1.0);
        ((var / b).sqrt(), batch_slopes.len())
    } else {
        (regression_stderr, 0)
    };
    Ok(DecayEstimate {
        rate: slope,
        stderr,
        bins_used,
        window_bins: (lo, hi),
        batches_used,
    })
}

/// Which statistics of the trajectory the empirical generator reports.
#[derive(Clone, Copy, Debug)]
pub enum GeneratorLocale<'a> {
    /// Arrival rates restricted to the active and jammed routes of a face.
    Face(&'a FacePartition),
    /// All arrival rates plus the time-averaged allocation.
    Transient,
}

/// Trajectory averages that play the role of a generator estimate.
#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalGenerator {
    /// Per-route empirical arrival rate (zero off the face in face form).
    pub a: Vec<f64>,
    /// Per-route drift of the counts over the horizon.
    pub d: Vec<f64>,
    /// Time-averaged min-policy allocation (transient form only).
    pub nu_bar: Option<Vec<f64>>,
}

pub fn empirical_generator(
    stats: &TrajectoryStats,
    locale: GeneratorLocale,
) -> Result<EmpiricalGenerator> {
    if stats.horizon <= 0.0 {
        return Err(Error::invalid("stats: horizon must be > 0"));
    }
    let t = stats.horizon;
    let mut a: Vec<f64> = stats.arrivals.iter().map(|&c| c as f64 / t).collect();
    let d: Vec<f64> = stats
        .final_state
        .iter()
        .zip(&stats.initial_state)
        .map(|(&f, &i)| (f as i64 - i as i64) as f64 / t)
        .collect();
    let nu_bar = match locale {
        GeneratorLocale::Face(face) => {
            for (r, rate) in a.iter_mut().enumerate() {
                if face.class(r) == RouteClass::Ergodic {
                    *rate = 0.0;
                }
            }
            None
        }
        GeneratorLocale::Transient => {
            Some(stats.allocation_time.iter().map(|&v| v / t).collect())
        }
    };
    Ok(EmpiricalGenerator { a, d, nu_bar })
}

/// Trajectory events for weighted runs.
#[derive(Clone, Copy, Debug)]
pub enum Event {
    /// Every trajectory counts.
    Always,
    /// The channel's occupancy reaches the level at any time.
    ChannelEverAtLeast { channel: u32, level: u64 },
    /// The channel's occupancy is at least the level at the horizon.
    ChannelFinalAtLeast { channel: u32, level: u64 },
}

/// Weighted Monte Carlo output: per-replication log weights and the
/// aggregated estimate.
#[derive(Clone, Debug, Serialize)]
pub struct ImportanceEstimate {
    pub log_weights: Vec<f64>,
    pub estimate: f64,
    pub stderr: f64,
    pub replications: usize,
}

enum ZeroTargetRate {
    /// The weight collapses to zero (legitimate when the target law simply
    /// forbids a transition the simulated law allows).
    WeightZero,
    /// The run is invalid: the quantity being estimated lives on paths the
    /// simulated law cannot produce.
    Abort,
}

struct WeightedOutcome {
    log_weight: f64,
    hit: bool,
}

fn weighted_trajectory(
    sim: &Dynamics,
    target: &Dynamics,
    horizon: f64,
    seed: u64,
    replication: u64,
    event: &Event,
    on_zero: &ZeroTargetRate,
) -> Result<WeightedOutcome> {
    let spec = sim.spec;
    let nr = spec.num_routes();
    let event_channel = match event {
        Event::Always => None,
        Event::ChannelEverAtLeast { channel, .. } | Event::ChannelFinalAtLeast { channel, .. } => {
            Some(spec.channel_index(*channel)?)
        }
    };

    let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, replication));
    let mut q = vec![0u64; nr];
    let mut occ = vec![0u64; spec.num_channels()];
    let mut sim_service = vec![0.0; nr];
    let mut tgt_service = vec![0.0; nr];
    let sim_arrivals: f64 = sim.lambda.iter().sum();
    let tgt_arrivals: f64 = target.lambda.iter().sum();
    let mut sim_service_total = 0.0;
    let mut tgt_service_total = 0.0;

    let mut log_weight = 0.0_f64;
    let mut weight_dead = false;
    let mut hit = match event {
        Event::Always => true,
        Event::ChannelEverAtLeast { level, .. } => occ[event_channel.unwrap()] >= *level,
        Event::ChannelFinalAtLeast { .. } => false,
    };

    let mut t = 0.0;
    let mut events = 0u64;
    let mut affected = Vec::with_capacity(nr);
    loop {
        let sim_total = sim_arrivals + sim_service_total;
        let tgt_total = tgt_arrivals + tgt_service_total;
        let t_next = if sim_total > 0.0 {
            (t - u01_open(&mut rng).ln() / sim_total).min(horizon)
        } else {
            horizon
        };
        if !weight_dead {
            log_weight -= (tgt_total - sim_total) * (t_next - t);
        }
        t = t_next;
        if t >= horizon {
            break;
        }
        let (is_arrival, r) = select_jump(u01(&mut rng) * sim_total, &sim.lambda, &sim_service);
        let (r_sim, r_tgt) = if is_arrival {
            (sim.lambda[r], target.lambda[r])
        } else {
            (sim_service[r], tgt_service[r])
        };
        if !weight_dead {
            if r_tgt > 0.0 {
                log_weight += (r_tgt / r_sim).ln();
            } else {
                match on_zero {
                    ZeroTargetRate::WeightZero => {
                        weight_dead = true;
                    }
                    ZeroTargetRate::Abort => {
                        return Err(Error::AbsoluteContinuity(format!(
                            "replication {replication}: {} on route {} has zero rate \
                             under the target dynamics; the target law is not \
                             absolutely continuous with respect to the simulated law",
                            if is_arrival { "an arrival" } else { "a service" },
                            spec.routes()[r].pair
                        )));
                    }
                }
            }
        }
        let (i, j) = spec.route_endpoints(r);
        if is_arrival {
            q[r] += 1;
            occ[i] += 1;
            occ[j] += 1;
        } else {
            q[r] -= 1;
            occ[i] -= 1;
            occ[j] -= 1;
        }
        events += 1;
        if let (Some(ci), Event::ChannelEverAtLeast { level, .. }) = (event_channel, event) {
            if occ[ci] >= *level {
                hit = true;
            }
        }
        affected_routes(spec, i, j, &mut affected);
        for &ar in &affected {
            sim_service_total -= sim_service[ar];
            sim_service[ar] = sim.service_rate(&q, &occ, ar);
            sim_service_total += sim_service[ar];
            tgt_service_total -= tgt_service[ar];
            tgt_service[ar] = target.service_rate(&q, &occ, ar);
            tgt_service_total += tgt_service[ar];
        }
        if events.is_multiple_of(REFRESH_EVERY) {
            sim_service_total = 0.0;
            tgt_service_total = 0.0;
            for r in 0..nr {
                sim_service[r] = sim.service_rate(&q, &occ, r);
                tgt_service[r] = target.service_rate(&q, &occ, r);
                sim_service_total += sim_service[r];
                tgt_service_total += tgt_service[r];
            }
        }
    }
    if let (Some(ci), Event::ChannelFinalAtLeast { level, .. }) = (event_channel, event) {
        hit = occ[ci] >= *level;
    }
    Ok(WeightedOutcome {
        log_weight: if weight_dead {
            f64::NEG_INFINITY
        } else {
            log_weight
        },
        hit,
    })
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

fn aggregate(outcomes: Vec<WeightedOutcome>) -> ImportanceEstimate {
    let n = outcomes.len();
    let log_weights: Vec<f64> = outcomes.iter().map(|o| o.log_weight).collect();
    let shift = outcomes
        .iter()
        .filter(|o| o.hit)
        .map(|o| o.log_weight)
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return ImportanceEstimate {
            log_weights,
            estimate: 0.0,
            stderr: 0.0,
            replications: n,
        };
    }
    let shifted: Vec<f64> = outcomes
        .iter()
        .map(|o| {
            if o.hit {
                (o.log_weight - shift).exp()
            } else {
                0.0
            }
        })
        .collect();
    let squares: Vec<f64> = shifted.iter().map(|w| w * w).collect();
    let s1 = pairwise_sum(&shifted);
    let s2 = pairwise_sum(&squares);
    let nf = n as f64;
    let estimate = (shift + (s1 / nf).ln()).exp();
    let var = ((s2 - s1 * s1 / nf) / (nf - 1.0)).max(0.0);
    let stderr = (shift + 0.5 * (var / nf).ln()).exp();
    ImportanceEstimate {
        log_weights,
        estimate,
        stderr,
        replications: n,
    }
}

/// Simulates the natural dynamics and weights each replication by the
/// likelihood ratio of `target` against them, from the empty state. The
/// mean weight estimates 1 exactly (it is the expectation of a mean-one
/// martingale), which makes this the canonical self-test of the
/// change-of-measure bookkeeping.
pub fn martingale_run(
    spec: &NetworkSpec,
    target: &Dynamics,
    horizon: f64,
    replications: usize,
    seed: u64,
) -> Result<ImportanceEstimate> {
    if replications == 0 {
        return Err(Error::invalid("replications: must be at least 1"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid(format!(
            "horizon: must be finite and > 0, got {horizon}"
        )));
    }
    let sim = Dynamics::natural(spec, Policy::Min)?;
    let outcomes: Vec<WeightedOutcome> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            weighted_trajectory(
                &sim,
                target,
                horizon,
                seed,
                rep as u64,
                &Event::Always,
                &ZeroTargetRate::WeightZero,
            )
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(outcomes))
}

/// Estimates the natural-law probability of `event` by simulating under the
/// twisted dynamics of `g` (constant rates on every route) and weighting
/// each replication by the inverse likelihood ratio.
///
/// Requires every twisted rate to be strictly positive: a route with a
/// zeroed rate makes the natural law non-absolutely-continuous with respect
/// to the simulated law, so frequencies under the twist cannot represent
/// natural paths through that transition.
pub fn importance_run(
    spec: &NetworkSpec,
    g: &TiltedGenerator,
    event: Event,
    horizon: f64,
    replications: usize,
    seed: u64,
) -> Result<ImportanceEstimate> {
    if replications == 0 {
        return Err(Error::invalid("replications: must be at least 1"));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::invalid(format!(
            "horizon: must be finite and > 0, got {horizon}"
        )));
    }
    for (r, route) in spec.routes().iter().enumerate() {
        if g.lambda_tilde()[r] <= 0.0 || g.mu_tilde()[r] <= 0.0 {
            return Err(Error::AbsoluteContinuity(format!(
                "route {}: twisted rates must be strictly positive for importance \
                 sampling, got lambda_tilde = {}, mu_tilde = {}",
                route.pair,
                g.lambda_tilde()[r],
                g.mu_tilde()[r]
            )));
        }
    }
    let interior = spec.fluid_state(&vec![1.0; spec.num_routes()])?;
    let sim = Dynamics::tilt(spec, &interior, g)?;
    let target = Dynamics::natural(spec, Policy::Min)?;
    let outcomes: Vec<WeightedOutcome> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            weighted_trajectory(
                &sim,
                &target,
                horizon,
                seed,
                rep as u64,
                &event,
                &ZeroTargetRate::Abort,
            )
        })
        .collect::<Result<_>>()?;
    Ok(aggregate(outcomes))
}
