//! Path costs and the variational tail-decay optimizer.
//!
//! The cost of an absolutely continuous path is the time integral of the
//! local rate along it. Piecewise-linear paths are dense enough for the
//! variational problems treated here, and they make the integrand piecewise
//! smooth: between two nonnegative breakpoints a linear component is either
//! identically zero or strictly positive on the open segment, so the face is
//! constant inside each segment and only the bottleneck assignment of the
//! min policy can switch, at explicitly computable times.
//!
//! The decay rate of the stationary occupancy tail of a channel is the
//! infimum of path costs over paths that start empty and end with that
//! channel holding one unit of fluid, jointly over the horizon. The
//! optimizer searches piecewise-linear paths with a fixed segment budget by
//! deterministic multistart pattern search.

use std::sync::OnceLock;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{face_partition, is_ergodic, FacePartition, FluidState, NetworkSpec};
use crate::rate::{local_rate_on_face, stay_cost_transient, RateMode};
use crate::util::{stream_seed, u01};

/// A continuous path that is linear between breakpoints, starting at time 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearPath {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
}

impl PiecewiseLinearPath {
    /// Builds a path from breakpoint times (strictly increasing, starting
    /// at 0) and the route occupancies at each breakpoint.
    pub fn new(spec: &NetworkSpec, times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("path: needs at least two breakpoints"));
        }
        if times.len() != states.len() {
            return Err(Error::invalid(format!(
                "path: {} times but {} states",
                times.len(),
                states.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::invalid(format!(
                "path: must start at time 0, got {}",
                times[0]
            )));
        }
        for w in times.windows(2) {
            if !(w[1].is_finite() && w[1] > w[0]) {
                return Err(Error::invalid(format!(
                    "path: breakpoint times must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (k, s) in states.iter().enumerate() {
            if s.len() != spec.num_routes() {
                return Err(Error::invalid(format!(
                    "path: state {k} has {} components, expected {}",
                    s.len(),
                    spec.num_routes()
                )));
            }
            for (r, &v) in s.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!(
                        "path: state {k} component {r} must be finite and >= 0, got {v}"
                    )));
                }
            }
        }
        Ok(PiecewiseLinearPath { times, states })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn num_segments(&self) -> usize {
        self.times.len() - 1
    }

    /// The constant drift of segment `k`.
    pub fn segment_drift(&self, k: usize) -> Vec<f64> {
        let dt = self.times[k + 1] - self.times[k];
        self.states[k]
            .iter()
            .zip(&self.states[k + 1])
            .map(|(a, b)| (b - a) / dt)
            .collect()
    }

    /// Linear interpolation at time `t` (clamped to the path's span).
    pub fn state_at(&self, spec: &NetworkSpec, t: f64) -> Result<FluidState> {
        let t = t.clamp(0.0, self.duration());
        let k = match self.times.binary_search_by(|probe| probe.total_cmp(&t)) {
            Ok(k) => k.min(self.times.len() - 2),
            Err(k) => k - 1,
        };
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        let x: Vec<f64> = self.states[k]
            .iter()
            .zip(&self.states[k + 1])
            .map(|(a, b)| (a + w * (b - a)).max(0.0))
            .collect();
        spec.fluid_state(&x)
    }
}

fn legendre_nodes(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for m in 2..=n {
                let m = m as f64;
                let p2 = ((2.0 * m - 1.0) * x * p1 - (m - 1.0) * p0) / m;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn gauss_16() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| legendre_nodes(16))
}

fn gauss_32() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| legendre_nodes(32))
}

/// The face of a segment is read off its midpoint: a component of a linear
/// nonnegative segment is identically zero exactly when both endpoints are,
/// which is exactly when the midpoint is.
fn segment_face(spec: &NetworkSpec, x0: &[f64], x1: &[f64]) -> Result<FacePartition> {
    let mid: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| 0.5 * (a + b)).collect();
    face_partition(spec, &spec.fluid_state(&mid)?, 0.0)
}

/// Times inside `(0, dt)` where the min-policy bottleneck of some active
/// route switches between its two channels; the integrand is smooth between
/// consecutive cut points.
fn bottleneck_switch_times(
    spec: &NetworkSpec,
    face: &FacePartition,
    x0: &[f64],
    d: &[f64],
    dt: f64,
) -> Vec<f64> {
    let nc = spec.num_channels();
    let mut occ0 = vec![0.0; nc];
    let mut docc = vec![0.0; nc];
    for r in 0..spec.num_routes() {
        let (a, b) = spec.route_endpoints(r);
        occ0[a] += x0[r];
        occ0[b] += x0[r];
        docc[a] += d[r];
        docc[b] += d[r];
    }
    let mut cuts = Vec::new();
    for r in face.active() {
        let (i, j) = spec.route_endpoints(r);
        let (ci, cj) = (spec.channels()[i].capacity, spec.channels()[j].capacity);
        // C_i / (occ_i + docc_i t) = C_j / (occ_j + docc_j t), linear in t.
        let den = ci * docc[j] - cj * docc[i];
        if den.abs() < 1e-14 * (ci * docc[j].abs() + cj * docc[i].abs() + 1.0) {
            continue;
        }
        let t = (cj * occ0[i] - ci * occ0[j]) / den;
        if t > 1e-12 * dt && t < dt * (1.0 - 1e-12) {
            cuts.push(t);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * dt);
    cuts
}

fn segment_cost(
    spec: &NetworkSpec,
    x0: &[f64],
    x1: &[f64],
    dt: f64,
    block_mode: RateMode,
    nodes: &[(f64, f64)],
) -> Result<f64> {
    let face = segment_face(spec, x0, x1)?;
    let d: Vec<f64> = x0.iter().zip(x1).map(|(a, b)| (b - a) / dt).collect();
    let block_cost = match block_mode {
        RateMode::Ergodic => 0.0,
        RateMode::General => {
            let block: Vec<usize> = face.ergodic().collect();
            stay_cost_transient(spec, &block)?.0
        }
    };
    let mut cuts = vec![0.0];
    cuts.extend(bottleneck_switch_times(spec, &face, x0, &d, dt));
    cuts.push(dt);

    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for &(xi, wt) in nodes {
            let t = mid + half * xi;
            let frac = t / dt;
            let xt: Vec<f64> = x0
                .iter()
                .zip(x1)
                .map(|(p, q)| (p + frac * (q - p)).max(0.0))
                .collect();
            let state = spec.fluid_state(&xt)?;
            let rate = local_rate_on_face(spec, &face, &state, &d, block_cost)
                .expect_finite("local rate along a valid segment");
            total += half * wt * rate;
        }
    }
    Ok(total)
}

fn path_cost_with_nodes(
    spec: &NetworkSpec,
    path: &PiecewiseLinearPath,
    mode: RateMode,
    nodes: &[(f64, f64)],
) -> Result<(f64, Vec<f64>)> {
    if path.states[0].len() != spec.num_routes() {
        return Err(Error::invalid(format!(
            "path: {} route components, spec has {}",
            path.states[0].len(),
            spec.num_routes()
        )));
    }
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
    let mut per_segment = Vec::with_capacity(path.num_segments());
    for k in 0..path.num_segments() {
        let dt = path.times[k + 1] - path.times[k];
        per_segment.push(segment_cost(
            spec,
            &path.states[k],
            &path.states[k + 1],
            dt,
            mode,
            nodes,
        )?);
    }
    Ok((per_segment.iter().sum(), per_segment))
}

/// The cost `I(path) = integral of the local rate along the path`,
/// by 16-node Gauss quadrature on each smooth piece.
pub fn path_cost(spec: &NetworkSpec, path: &PiecewiseLinearPath, mode: RateMode) -> Result<f64> {
    Ok(path_cost_with_nodes(spec, path, mode, gauss_16())?.0)
}

/// Same integral with doubled (32-node) quadrature, for convergence checks.
pub fn path_cost_refined(
    spec: &NetworkSpec,
    path: &PiecewiseLinearPath,
    mode: RateMode,
) -> Result<f64> {
    Ok(path_cost_with_nodes(spec, path, mode, gauss_32())?.0)
}

/// Tuning knobs for [`optimize_tail_decay`]. The defaults are sized for the
/// small networks this crate targets.
#[derive(Clone, Debug)]
pub struct OptimizeOptions {
    /// Number of linear segments in the candidate paths.
    pub segments: usize,
    /// Number of independent search starts.
    pub multistarts: usize,
    /// Seed for the randomized starts; the result is a deterministic
    /// function of the options.
    pub seed: u64,
    /// Pattern-search sweep limit per start.
    pub max_iters: usize,
    /// Step size below which a start counts as converged.
    pub tolerance: f64,
    /// Optional known-good path to refine; it is embedded into the segment
    /// budget and used as an extra start, so the result is never worse than
    /// the warm start's cost.
    pub warm_start: Option<PiecewiseLinearPath>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            segments: 4,
            multistarts: 16,
            seed: 0,
            max_iters: 600,
            tolerance: 1e-6,
            warm_start: None,
        }
    }
}

/// Whether the best search start stopped because its step shrank below the
/// tolerance or because it ran out of sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerStatus {
    Converged,
    /// The sweep budget ran out before the tolerance was met; reported as
    /// `not_converged` in serialized results.
    #[serde(rename = "not_converged")]
    IterationLimit,
}

/// Cost and bottleneck summary of one segment of the optimal path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentDiagnostic {
    pub start_time: f64,
    pub end_time: f64,
    pub cost: f64,
    /// Channel with the smallest capacity-to-occupancy ratio at the segment
    /// midpoint, if any channel is occupied there.
    pub bottleneck: Option<u32>,
}

/// Result of the variational tail-decay search.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayResult {
    /// Best path cost found: the variational decay-rate estimate.
    pub value: f64,
    pub optimal_path: PiecewiseLinearPath,
    /// Total duration of the optimal path.
    pub horizon: f64,
    pub segments: Vec<SegmentDiagnostic>,
    pub status: OptimizerStatus,
}

struct SearchProblem<'a> {
    spec: &'a NetworkSpec,
    target_routes: &'a [usize],
    k: usize,
    r: usize,
}

impl SearchProblem<'_> {
    fn num_vars(&self) -> usize {
        self.k * self.r + self.k
    }

    fn project(&self, vars: &mut [f64]) {
        let n_states = self.k * self.r;
        for v in vars[..n_states].iter_mut() {
            *v = v.clamp(0.0, 1e6);
            if *v < 1e-12 {
                *v = 0.0;
            }
        }
        for v in vars[n_states..].iter_mut() {
            *v = v.clamp(1e-3, 1e4);
        }
        // Pin the terminal occupancy of the target channel to exactly 1.
        let terminal = &mut vars[(self.k - 1) * self.r..n_states];
        let sum: f64 = self.target_routes.iter().map(|&r| terminal[r]).sum();
        if sum > 1e-9 {
            for &r in self.target_routes {
                terminal[r] /= sum;
            }
        } else {
            let even = 1.0 / self.target_routes.len() as f64;
            for &r in self.target_routes {
                terminal[r] = even;
            }
        }
    }

    fn build_path(&self, vars: &[f64]) -> PiecewiseLinearPath {
        let n_states = self.k * self.r;
        let mut times = Vec::with_capacity(self.k + 1);
        let mut states = Vec::with_capacity(self.k + 1);
        times.push(0.0);
        states.push(vec![0.0; self.r]);
        let mut t = 0.0;
        for m in 0..self.k {
            t += vars[n_states + m];
            times.push(t);
            states.push(vars[m * self.r..(m + 1) * self.r].to_vec());
        }
        PiecewiseLinearPath::new(self.spec, times, states)
            .expect("projected variables form a valid path")
    }

    fn eval(&self, vars: &[f64]) -> f64 {
        let path = self.build_path(vars);
        path_cost(self.spec, &path, RateMode::Ergodic)
            .expect("path cost of a valid path on an ergodic network")
    }
}

fn pattern_search(
    problem: &SearchProblem,
    mut vars: Vec<f64>,
    max_iters: usize,
    tolerance: f64,
) -> (f64, Vec<f64>, OptimizerStatus) {
    problem.project(&mut vars);
    let mut best = problem.eval(&vars);
    let mut step = 0.25_f64;
    for _ in 0..max_iters {
        if step < tolerance {
            return (best, vars, OptimizerStatus::Converged);
        }
        let mut improved = false;
        for v in 0..problem.num_vars() {
            for dir in [1.0, -1.0] {
                let mut cand = vars.clone();
                cand[v] += dir * step;
                problem.project(&mut cand);
                let val = problem.eval(&cand);
                if val < best - 1e-15 {
                    best = val;
                    vars = cand;
                    improved = true;
                }
            }
        }
        step = if improved { (step * 2.0).min(0.5) } else { step * 0.5 };
    }
    let status = if step < tolerance {
        OptimizerStatus::Converged
    } else {
        OptimizerStatus::IterationLimit
    };
    (best, vars, status)
}

/// Embeds a path into exactly `k` segments without changing its trace:
/// longest segments are split at their midpoints until the budget is met.
/// A path with more segments than the budget is resampled at `k + 1` evenly
/// spaced times (an approximation, flagged nowhere because the caller chose
/// a smaller budget).
fn embed_into_segments(
    spec: &NetworkSpec,
    path: &PiecewiseLinearPath,
    k: usize,
) -> Result<PiecewiseLinearPath> {
    let mut times = path.times.clone();
    let mut states = path.states.clone();
    while times.len() - 1 < k {
        let (widest, _) = times
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[1] - w[0]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let tm = 0.5 * (times[widest] + times[widest + 1]);
        let sm: Vec<f64> = states[widest]
            .iter()
            .zip(&states[widest + 1])
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        times.insert(widest + 1, tm);
        states.insert(widest + 1, sm);
    }
    if times.len() - 1 > k {
        let total = *times.last().unwrap();
        let mut new_times = Vec::with_capacity(k + 1);
        let mut new_states = Vec::with_capacity(k + 1);
        for m in 0..=k {
            let t = total * m as f64 / k as f64;
            new_times.push(t);
            new_states.push(path.state_at(spec, t)?.components().to_vec());
        }
        times = new_times;
        states = new_states;
    }
    PiecewiseLinearPath::new(spec, times, states)
}

/// Minimizes the path cost over piecewise-linear paths from the empty state
/// to a state where `channel_id` holds one unit of fluid, jointly over
/// breakpoint states, segment durations, and the horizon. Requires an
/// ergodic network (the stationary tail does not exist otherwise).
///
/// The search is a deterministic function of `opts`: structured starts
/// (straight paths toward each target route and toward a spread terminal)
/// plus seeded random starts, each refined by compass pattern search,
/// merged by best value with ties broken by start index.
pub fn optimize_tail_decay(
    spec: &NetworkSpec,
    channel_id: u32,
    opts: &OptimizeOptions,
) -> Result<DecayResult> {
    let target_idx = spec.channel_index(channel_id)?;
    let report = is_ergodic(spec);
    if let Some(over) = report.first_overload() {
        return Err(Error::NotErgodic {
            channel: over.id,
            load: over.load,
            capacity: over.capacity,
        });
    }
    if opts.segments == 0 {
        return Err(Error::invalid("segments: must be at least 1"));
    }
    if opts.multistarts == 0 {
        return Err(Error::invalid("multistarts: must be at least 1"));
    }
    let target_routes = spec.routes_of_channel(target_idx);
    let problem = SearchProblem {
        spec,
        target_routes,
        k: opts.segments,
        r: spec.num_routes(),
    };

    let mut starts: Vec<Vec<f64>> = Vec::new();
    // Straight path to the terminal that spreads the unit evenly over the
    // target channel's routes.
    let mut spread = vec![0.0; spec.num_routes()];
    for &r in target_routes {
        spread[r] = 1.0 / target_routes.len() as f64;
    }
    starts.push(straight_start(&problem, &spread));
    // One straight start per target route carrying the whole unit.
    for &tr in target_routes {
        let mut term = vec![0.0; spec.num_routes()];
        term[tr] = 1.0;
        starts.push(straight_start(&problem, &term));
    }
    // A start that lets the off-target routes ride at their mean occupancy.
    let mut cushioned = spread.clone();
    for (r, route) in spec.routes().iter().enumerate() {
        if !target_routes.contains(&r) {
            cushioned[r] = route.lambda / route.mu;
        }
    }
    starts.push(straight_start(&problem, &cushioned));
    // Seeded random starts for the rest of the budget.
    for i in starts.len()..opts.multistarts {
        let mut rng = ChaCha8Rng::from_seed(stream_seed(opts.seed, i as u64));
        let mut vars = vec![0.0; problem.num_vars()];
        for v in vars[..problem.k * problem.r].iter_mut() {
            *v = 1.5 * u01(&mut rng);
        }
        for v in vars[problem.k * problem.r..].iter_mut() {
            *v = (2.0 * u01(&mut rng) - 1.0).exp2();
        }
        starts.push(vars);
    }
    starts.truncate(opts.multistarts.max(starts.len().min(opts.multistarts)));
    if let Some(warm) = &opts.warm_start {
        let embedded = embed_into_segments(spec, warm, opts.segments)?;
        let mut vars = Vec::with_capacity(problem.num_vars());
        for s in &embedded.states[1..] {
            vars.extend_from_slice(s);
        }
        for w in embedded.times.windows(2) {
            vars.push(w[1] - w[0]);
        }
        starts.push(vars);
    }

    let results: Vec<(usize, f64, Vec<f64>, OptimizerStatus)> = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (value, vars, status) = pattern_search(&problem, s, opts.max_iters, opts.tolerance);
            (i, value, vars, status)
        })
        .collect();
    let (_, value, vars, status) = results
        .into_iter()
        .min_by(|a, b| (a.1, a.0).partial_cmp(&(b.1, b.0)).unwrap())
        .unwrap();

    let optimal_path = problem.build_path(&vars);
    let (_, per_segment) = path_cost_with_nodes(spec, &optimal_path, RateMode::Ergodic, gauss_16())?;
    let segments = per_segment
        .iter()
        .enumerate()
        .map(|(k, &cost)| {
            let mid = optimal_path.state_at(spec, 0.5 * (optimal_path.times[k] + optimal_path.times[k + 1]))?;
            let bottleneck = (0..spec.num_channels())
                .filter(|&ci| mid.channel_occupancy(spec, ci) > 0.0)
                .min_by(|&a, &b| {
                    let ra = spec.channels()[a].capacity / mid.channel_occupancy(spec, a);
                    let rb = spec.channels()[b].capacity / mid.channel_occupancy(spec, b);
                    ra.total_cmp(&rb)
                })
                .map(|ci| spec.channels()[ci].id);
            Ok(SegmentDiagnostic {
                start_time: optimal_path.times[k],
                end_time: optimal_path.times[k + 1],
                cost,
                bottleneck,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecayResult {
        value,
        horizon: optimal_path.duration(),
        optimal_path,
        segments,
        status,
    })
}

fn straight_start(problem: &SearchProblem, terminal: &[f64]) -> Vec<f64> {
    let mut vars = vec![0.0; problem.num_vars()];
    for m in 0..problem.k {
        let frac = (m + 1) as f64 / problem.k as f64;
        for r in 0..problem.r {
            vars[m * problem.r + r] = frac * terminal[r];
        }
        vars[problem.k * problem.r + m] = 1.0 / problem.k as f64;
    }
    vars
}

/// Tail decay of the channel under processor sharing, where the stationary
/// occupancy is geometric with ratio `rho_i = sum_j lambda_ij / (mu_ij C_i)`:
/// the decay rate is `-log rho_i`. Errors when the channel is overloaded.
pub fn ps_decay_rate(spec: &NetworkSpec, channel_id: u32) -> Result<f64> {
    let ci = spec.channel_index(channel_id)?;
    let capacity = spec.channels()[ci].capacity;
    let load: f64 = spec
        .routes_of_channel(ci)
        .iter()
        .map(|&r| spec.routes()[r].lambda / spec.routes()[r].mu)
        .sum();
    if load >= capacity {
        return Err(Error::NotErgodic {
            channel: channel_id,
            load,
            capacity,
        });
    }
    Ok(-(load / capacity).ln())
}

/// First place along a path where a channel stops being the bottleneck of
/// one of its occupied routes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsViolation {
    pub time: f64,
    /// Channel ids of the offending route.
    pub route: (u32, u32),
    /// Capacity-to-occupancy ratio of the checked channel at that time.
    pub channel_ratio: f64,
    /// The smaller ratio found at the route's other channel.
    pub other_ratio: f64,
}

/// Outcome of [`ps_consistency_check`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsConsistencyReport {
    pub consistent: bool,
    pub first_violation: Option<PsViolation>,
}

/// Checks whether a channel behaves like an isolated processor-sharing
/// queue along the optimal path: wherever one of its routes is occupied,
/// the channel's capacity-to-occupancy ratio must be the minimal one on
/// that route. Sampled at the quadrature nodes of every segment.
pub fn ps_consistency_check(
    spec: &NetworkSpec,
    result: &DecayResult,
    channel_id: u32,
) -> Result<PsConsistencyReport> {
    let ci = spec.channel_index(channel_id)?;
    let path = &result.optimal_path;
    for k in 0..path.num_segments() {
        let (t0, t1) = (path.times[k], path.times[k + 1]);
        for &(xi, _) in gauss_16() {
            let t = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * xi;
            let x = path.state_at(spec, t)?;
            let occ_i = x.channel_occupancy(spec, ci);
            for &r in spec.routes_of_channel(ci) {
                if x.components()[r] <= 0.0 {
                    continue;
                }
                let (a, b) = spec.route_endpoints(r);
                let cj = if a == ci { b } else { a };
                let occ_j = x.channel_occupancy(spec, cj);
                let ratio_i = spec.channels()[ci].capacity / occ_i;
                let ratio_j = spec.channels()[cj].capacity / occ_j;
                if ratio_i > ratio_j * (1.0 + 1e-9) + 1e-12 {
                    return Ok(PsConsistencyReport {
                        consistent: false,
                        first_violation: Some(PsViolation {
                            time: t,
                            route: (spec.routes()[r].pair.a(), spec.routes()[r].pair.b()),
                            channel_ratio: ratio_i,
                            other_ratio: ratio_j,
                        }),
                    });
                }
            }
        }
    }
    Ok(PsConsistencyReport {
        consistent: true,
        first_violation: None,
    })
}
