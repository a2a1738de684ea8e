//! The five experiment commands. Each one reads its block of the
//! configuration, runs the corresponding library operation, writes its
//! output files into the output directory, and reports an exit code:
//! 0 for success, 2 for validation failures, 3 for runtime failures and
//! non-converged optimizations. Output files are deterministic given the
//! configuration; nothing below writes a timestamp.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use starshare::model::{
    face_partition, is_ergodic, NetworkSpec, Policy, RouteClass, RoutePair,
};
use starshare::paths::{
    optimize_tail_decay, ps_consistency_check, ps_decay_rate, DecayResult, OptimizeOptions,
    OptimizerStatus,
};
use starshare::rate::{local_rate_breakdown, stay_cost_transient, Cost, Drift, RateMode};
use starshare::simulate::{
    estimate_decay_rate, simulate, DecayEstimate, SimOptions, TrajectoryStats, DECAY_WINDOW,
};
use starshare::Error;

use crate::config::{ExperimentConfig, RateModeDoc, SweepBlock};

/// A command failure, split by exit code: validation problems exit 2,
/// runtime problems exit 3.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) | CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        match err {
            Error::InvalidArgument(_) | Error::NotErgodic { .. } | Error::InfeasibleGenerator(_) => {
                CliError::Validation(err.to_string())
            }
            Error::InsufficientData(_) | Error::AbsoluteContinuity(_) => {
                CliError::Runtime(err.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {err}"))
    }
}

/// What a command hands back to `main`: the process exit code plus any
/// warnings for stderr and the sidecar log.
pub struct CmdOutcome {
    pub exit_code: i32,
    pub warnings: Vec<String>,
}

impl CmdOutcome {
    fn ok() -> Self {
        CmdOutcome {
            exit_code: 0,
            warnings: Vec::new(),
        }
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), content)?;
    Ok(())
}

fn to_pretty_json(value: &impl Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    text
}

/// A cost in report form: infinities become `finite: false` with a null
/// value, so JSON consumers never meet an IEEE infinity.
fn cost_doc(cost: Cost) -> Value {
    match cost {
        Cost::Finite(v) => json!({ "finite": true, "value": v }),
        Cost::Infinite => json!({ "finite": false, "value": null }),
    }
}

fn cost_human(cost: Cost) -> String {
    match cost {
        Cost::Finite(v) => format!("{v}"),
        Cost::Infinite => "infinite".to_string(),
    }
}

fn class_name(class: RouteClass) -> &'static str {
    match class {
        RouteClass::Active => "active",
        RouteClass::Jammed => "jammed",
        RouteClass::Ergodic => "ergodic",
    }
}

/// Evaluates the local rate at a configured state and drift and reports it
/// with its face partition, per-route breakdown, and the ergodicity check.
pub fn cmd_rate(config: &ExperimentConfig, out: &Path) -> Result<CmdOutcome, CliError> {
    let spec = config.network()?;
    let block = config
        .rate
        .as_ref()
        .ok_or_else(|| CliError::Validation("config.rate: required for `rate`".to_string()))?;
    let mode = match block.mode {
        RateModeDoc::Ergodic => RateMode::Ergodic,
        RateModeDoc::General => RateMode::General,
    };
    let x = spec.fluid_state(&block.x)?;
    let d = Drift::new(&spec, &block.d)?;
    let report = is_ergodic(&spec);
    let face = face_partition(&spec, &x, 0.0)?;
    let breakdown = local_rate_breakdown(&spec, &x, &d, mode)?;

    let routes: Vec<Value> = spec
        .routes()
        .iter()
        .enumerate()
        .map(|(r, route)| {
            json!({
                "route": route.pair.to_string(),
                "class": class_name(face.class(r)),
                "x": block.x[r],
                "d": block.d[r],
                "cost": cost_doc(breakdown.per_route[r]),
            })
        })
        .collect();
    let doc = json!({
        "mode": block.mode,
        "ergodicity": report,
        "face": {
            "active": face.active().map(|r| spec.routes()[r].pair.to_string()).collect::<Vec<_>>(),
            "jammed": face.jammed().map(|r| spec.routes()[r].pair.to_string()).collect::<Vec<_>>(),
            "ergodic": face.ergodic().map(|r| spec.routes()[r].pair.to_string()).collect::<Vec<_>>(),
        },
        "total": cost_doc(breakdown.total),
        "per_route": routes,
        "jammed_cut": cost_doc(breakdown.jammed_cut),
        "block_stay_cost": breakdown.block_cost,
    });
    write_file(out, "rate_report.json", &to_pretty_json(&doc))?;

    println!(
        "network: {} channels, {} routes; {}",
        spec.num_channels(),
        spec.num_routes(),
        if report.ergodic {
            "ergodic".to_string()
        } else {
            let over = report.first_overload().expect("non-ergodic has overload");
            format!(
                "NOT ergodic (channel {}: load {} >= capacity {})",
                over.id, over.load, over.capacity
            )
        }
    );
    println!("local rate L(x, D) = {}", cost_human(breakdown.total));
    for (r, route) in spec.routes().iter().enumerate() {
        println!(
            "  route {} ({}): x = {}, d = {}, cost = {}",
            route.pair,
            class_name(face.class(r)),
            block.x[r],
            block.d[r],
            cost_human(breakdown.per_route[r]),
        );
    }
    println!("  jammed arrival cut: {}", cost_human(breakdown.jammed_cut));
    println!("  isolated block stay cost: {}", breakdown.block_cost);
    println!("wrote {}", out.join("rate_report.json").display());
    Ok(CmdOutcome::ok())
}

/// One decay-table row; insufficient data leaves the estimate null.
fn decay_row(spec: &NetworkSpec, stats: &TrajectoryStats, ci: usize, window: (f64, f64))
    -> (Value, Option<String>) {
    let id = spec.channels()[ci].id;
    match estimate_decay_rate(stats, ci, window) {
        Ok(DecayEstimate {
            rate,
            stderr,
            bins_used,
            window_bins,
            batches_used,
        }) => (
            json!({
                "channel": id,
                "rate": rate,
                "stderr": stderr,
                "bins_used": bins_used,
                "window_bins": window_bins,
                "batches_used": batches_used,
            }),
            None,
        ),
        Err(err) => (
            json!({
                "channel": id,
                "rate": null,
                "stderr": null,
                "bins_used": 0,
                "window_bins": null,
                "batches_used": 0,
            }),
            Some(format!("channel {id}: {err}")),
        ),
    }
}

/// Simulates one trajectory and writes the occupancy histograms, the
/// per-channel decay table, and a summary document.
pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<CmdOutcome, CliError> {
    let spec = config.network()?;
    let block = config.simulate.as_ref().ok_or_else(|| {
        CliError::Validation("config.simulate: required for `simulate`".to_string())
    })?;
    if !(block.horizon.is_finite() && block.horizon > 0.0) {
        return Err(CliError::Validation(format!(
            "config.simulate.horizon: must be finite and > 0, got {}",
            block.horizon
        )));
    }
    if let Some(window) = block.window {
        if !(0.0 < window.0 && window.0 < window.1 && window.1 <= 1.0) {
            return Err(CliError::Validation(format!(
                "config.simulate.window: need 0 < lo < hi <= 1, got ({}, {})",
                window.0, window.1
            )));
        }
    }
    if block.batches == 0 {
        return Err(CliError::Validation(
            "config.simulate.batches: must be at least 1".to_string(),
        ));
    }
    let window = block.window.unwrap_or(DECAY_WINDOW);
    let zeros = vec![0u64; spec.num_routes()];
    let x0 = spec.discrete_state(block.x0.as_deref().unwrap_or(&zeros))?;
    let mut opts = SimOptions::new(block.horizon, block.seed);
    opts.histogram_cap = block.histogram_cap;
    opts.batches = block.batches;
    opts.sample_interval = block.sample_interval;
    let stats = simulate(&spec, block.policy.to_policy(), &x0, &opts)?;

    write_file(out, "histogram.csv", &stats.histogram_csv(&spec))?;

    let mut warnings = Vec::new();
    let mut decay_csv = String::from("channel,rate,stderr\n");
    let mut decay_rows = Vec::new();
    for ci in 0..spec.num_channels() {
        let (row, warning) = decay_row(&spec, &stats, ci, window);
        match (&row["rate"], &row["stderr"]) {
            (Value::Number(rate), Value::Number(stderr)) => {
                decay_csv.push_str(&format!(
                    "{},{},{}\n",
                    spec.channels()[ci].id,
                    rate,
                    stderr
                ));
            }
            _ => decay_csv.push_str(&format!("{},,\n", spec.channels()[ci].id)),
        }
        decay_rows.push(row);
        warnings.extend(warning);
    }
    write_file(out, "decay_rates.csv", &decay_csv)?;

    let trajectory: Value =
        serde_json::from_str(&stats.summary_json(&spec)).expect("summary is valid JSON");
    let summary = json!({
        "trajectory": trajectory,
        "decay": decay_rows,
    });
    write_file(out, "summary.json", &to_pretty_json(&summary))?;

    println!(
        "simulated horizon {} with {} events; wrote histogram.csv, decay_rates.csv, summary.json in {}",
        block.horizon,
        stats.event_count(),
        out.display()
    );
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    Ok(CmdOutcome {
        exit_code: 0,
        warnings,
    })
}

/// The optimal path as a CSV table: one row per breakpoint, one column per
/// route.
fn path_csv(spec: &NetworkSpec, result: &DecayResult) -> String {
    let mut csv = String::from("time");
    for route in spec.routes() {
        csv.push_str(&format!(",x_{}", route.pair));
    }
    csv.push('\n');
    for (k, t) in result.optimal_path.times().iter().enumerate() {
        csv.push_str(&format!("{t}"));
        for v in &result.optimal_path.states()[k] {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    csv
}

/// Optimizes the tail decay rate of one channel and writes the variational
/// result beside its processor-sharing reference.
pub fn cmd_optimize(config: &ExperimentConfig, out: &Path) -> Result<CmdOutcome, CliError> {
    let spec = config.network()?;
    let block = config.optimize.as_ref().ok_or_else(|| {
        CliError::Validation("config.optimize: required for `optimize`".to_string())
    })?;
    let opts = OptimizeOptions {
        segments: block.segments,
        multistarts: block.multistarts,
        seed: block.seed,
        max_iters: block.max_iters,
        tolerance: block.tolerance,
        warm_start: None,
    };
    let result = optimize_tail_decay(&spec, block.target_channel, &opts)?;
    let ps_reference = ps_decay_rate(&spec, block.target_channel)?;
    let ps_consistency = ps_consistency_check(&spec, &result, block.target_channel)?;

    let doc = json!({
        "target_channel": block.target_channel,
        "decay": result,
        "ps_reference": ps_reference,
        "ps_consistency": ps_consistency,
    });
    write_file(out, "decay_result.json", &to_pretty_json(&doc))?;
    write_file(out, "path.csv", &path_csv(&spec, &result))?;

    println!(
        "channel {}: variational decay rate {} ({:?}), PS reference {}, ps_consistent = {}",
        block.target_channel, result.value, result.status, ps_reference, ps_consistency.consistent
    );
    println!("wrote decay_result.json and path.csv in {}", out.display());

    if result.status == OptimizerStatus::IterationLimit {
        let warning =
            "optimizer stopped at the iteration limit; results carry status not_converged"
                .to_string();
        eprintln!("warning: {warning}");
        return Ok(CmdOutcome {
            exit_code: 3,
            warnings: vec![warning],
        });
    }
    Ok(CmdOutcome::ok())
}

/// Evaluates the cost of holding a set of routes near the origin.
pub fn cmd_stay_cost(config: &ExperimentConfig, out: &Path) -> Result<CmdOutcome, CliError> {
    let spec = config.network()?;
    let block = config.stay_cost.as_ref().ok_or_else(|| {
        CliError::Validation("config.stay_cost: required for `stay-cost`".to_string())
    })?;
    let mut indices = Vec::with_capacity(block.routes.len());
    for &(i, j) in &block.routes {
        let pair = RoutePair::new(i, j)?;
        indices.push(spec.route_index(pair)?);
    }
    let (value, allocation) = stay_cost_transient(&spec, &indices)?;

    let doc = json!({
        "routes": indices
            .iter()
            .map(|&r| spec.routes()[r].pair.to_string())
            .collect::<Vec<_>>(),
        "value": value,
        "allocation": spec
            .routes()
            .iter()
            .zip(allocation.components())
            .map(|(route, nu)| json!({ "route": route.pair.to_string(), "nu": nu }))
            .collect::<Vec<_>>(),
    });
    write_file(out, "stay_cost.json", &to_pretty_json(&doc))?;

    println!("stay cost over {} routes = {value}", indices.len());
    println!("wrote {}", out.join("stay_cost.json").display());
    Ok(CmdOutcome::ok())
}

/// Checks the sweep values against the stability bound of the narrow
/// channel of the reference network.
fn validate_sweep(block: &SweepBlock) -> Result<(), CliError> {
    if block.parameter != "lambda13" {
        return Err(CliError::Validation(format!(
            "config.sweep.parameter: only \"lambda13\" is supported, got \"{}\"",
            block.parameter
        )));
    }
    if block.values.is_empty() {
        return Err(CliError::Validation(
            "config.sweep.values: at least one sweep value is required".to_string(),
        ));
    }
    for (k, &x) in block.values.iter().enumerate() {
        if !(x.is_finite() && x > 0.0 && x < 0.5) {
            return Err(CliError::Validation(format!(
                "config.sweep.values[{k}]: lambda13 = {x} is outside (0, 0.5); channel 3 \
                 carries load lambda13 + 1/2 against capacity 1, so the network is ergodic \
                 only for lambda13 < 0.5"
            )));
        }
    }
    Ok(())
}

/// Runs the reference three-channel sweep: for every swept arrival
/// intensity, a long trajectory for the simulated decay rates, the
/// processor-sharing references, and the variational values, combined in
/// one plot-ready table.
pub fn cmd_example_fig4(config: &ExperimentConfig, out: &Path) -> Result<CmdOutcome, CliError> {
    let block = config.sweep.clone().unwrap_or_default();
    validate_sweep(&block)?;

    let mut warnings = Vec::new();
    let mut csv = String::from("x,channel,sim_rate,sim_stderr,ps_rate,var_rate\n");
    for (k, &x) in block.values.iter().enumerate() {
        let spec = NetworkSpec::example_three_channel(x)?;
        let opts = SimOptions::new(block.horizon, block.seed.wrapping_add(k as u64));
        let stats = simulate(&spec, Policy::Min, &spec.empty_state(), &opts)?;
        for ci in 0..spec.num_channels() {
            let id = spec.channels()[ci].id;
            let sim = estimate_decay_rate(&stats, ci, DECAY_WINDOW);
            if let Err(err) = &sim {
                warnings.push(format!("x = {x}, channel {id}: {err}"));
            }
            let ps = ps_decay_rate(&spec, id)?;
            let opt_opts = OptimizeOptions {
                segments: block.segments,
                multistarts: block.multistarts,
                seed: block.seed,
                max_iters: block.max_iters,
                tolerance: block.tolerance,
                warm_start: None,
            };
            let var = optimize_tail_decay(&spec, id, &opt_opts)?;
            let (sim_rate, sim_stderr) = match &sim {
                Ok(est) => (format!("{}", est.rate), format!("{}", est.stderr)),
                Err(_) => (String::new(), String::new()),
            };
            csv.push_str(&format!(
                "{x},{id},{sim_rate},{sim_stderr},{ps},{}\n",
                var.value
            ));
        }
    }
    write_file(out, "fig4_sweep.csv", &csv)?;

    println!(
        "swept {} values of lambda13; wrote {}",
        block.values.len(),
        out.join("fig4_sweep.csv").display()
    );
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    Ok(CmdOutcome {
        exit_code: 0,
        warnings,
    })
}
