//! Rolling-horizon simulation over a scenario history with held-out realizations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDateTime;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{
    apriori_dispatch, incremental_dispatch, sample_discard_baseline, AlgorithmError, FarmMapping,
    ScenarioFeed,
};
use crate::dispatch::{
    check_feasibility, realized_cost, DispatchOptions, DispatchSolution, Interval, Network,
    VIOLATION_TOLERANCE_MW,
};
use crate::grid::{load_case, GridCase, GridError};
use crate::risk::{RiskBudget, RiskError};
use crate::scenarios::{
    fit_correlations, ingest_csv, parse_timestamp, EnvironmentVector, ScenarioStore, StoreError,
    SynthLaw, TimeWindow, TIMESTAMP_FORMAT,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
    #[error("cannot read config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("interval {0} is not a record of the scenario history")]
    UnknownInterval(String),
    #[error("invariant breached: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Apriori,
    Incremental,
    Baseline,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown method '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingSpace {
    /// Uniform over the preceding 180 days.
    HalfYear,
    /// Uniform over the preceding 90 days.
    ThreeMonth,
    /// Environment-nearest records of the preceding 90 days.
    Similar,
}

impl SamplingSpace {
    pub fn lookback_days(self) -> i64 {
        match self {
            SamplingSpace::HalfYear => 180,
            SamplingSpace::ThreeMonth | SamplingSpace::Similar => 90,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SamplingSpace::HalfYear => "half-year",
            SamplingSpace::ThreeMonth => "three-month",
            SamplingSpace::Similar => "similar",
        }
    }
}

impl std::str::FromStr for SamplingSpace {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| format!("unknown sampling space '{s}'"))
    }
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_beta() -> f64 {
    1e-3
}
fn default_load_scale() -> f64 {
    1.0
}
fn default_count() -> usize {
    24
}
fn default_method() -> Method {
    Method::Incremental
}
fn default_space() -> SamplingSpace {
    SamplingSpace::Similar
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    /// Case file path or a bundled case name (`bus3`, `rts24`).
    pub case: String,
    /// Scenario history CSV.
    pub scenarios: String,
    /// Interval timestamps; when empty, `count` consecutive records from `start`.
    #[serde(default)]
    pub intervals: Vec<String>,
    #[serde(default)]
    pub start: Option<String>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_space")]
    pub space: SamplingSpace,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_load_scale")]
    pub load_scale: f64,
    #[serde(default)]
    pub options: DispatchOptions,
    /// Ground-truth law file, enabling exact-violation estimates.
    #[serde(default)]
    pub law: Option<String>,
    #[serde(default)]
    pub oracle_draws: usize,
}

impl SimulationConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn budget(&self) -> Result<RiskBudget, HarnessError> {
        Ok(RiskBudget::new(self.epsilon, self.beta)?)
    }
}

/// One dispatch interval's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub timestamp: String,
    pub forecast_level: f64,
    pub solved: bool,
    #[serde(default)]
    pub failure: Option<String>,
    pub objective: f64,
    pub realized_cost: f64,
    pub n_used: usize,
    pub h: usize,
    pub epsilon_posterior: f64,
    pub iterations: usize,
    pub violation: bool,
    pub residual_mw: f64,
    #[serde(default)]
    pub oracle_violation: Option<f64>,
    pub solve_seconds: f64,
    pub sampling_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub intervals: usize,
    pub solved: usize,
    pub violations: usize,
    /// `violations / solved`.
    pub violation_rate: f64,
    pub mean_realized_cost: f64,
    pub mean_objective: f64,
    pub mean_n: f64,
    pub mean_h: f64,
    #[serde(default)]
    pub mean_oracle_violation: Option<f64>,
    pub mean_solve_seconds: f64,
    pub mean_sampling_seconds: f64,
}

impl Aggregates {
    pub fn from_rows(rows: &[IntervalRow]) -> Self {
        let ok: Vec<&IntervalRow> = rows.iter().filter(|r| r.solved).collect();
        let mean = |f: &dyn Fn(&IntervalRow) -> f64| {
            if ok.is_empty() {
                f64::NAN
            } else {
                ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
            }
        };
        let violations = ok.iter().filter(|r| r.violation).count();
        let oracle: Vec<f64> = ok.iter().filter_map(|r| r.oracle_violation).collect();
        Self {
            intervals: rows.len(),
            solved: ok.len(),
            violations,
            violation_rate: if ok.is_empty() {
                f64::NAN
            } else {
                violations as f64 / ok.len() as f64
            },
            mean_realized_cost: mean(&|r| r.realized_cost),
            mean_objective: mean(&|r| r.objective),
            mean_n: mean(&|r| r.n_used as f64),
            mean_h: mean(&|r| r.h as f64),
            mean_oracle_violation: (!oracle.is_empty() && oracle.len() == ok.len())
                .then(|| oracle.iter().sum::<f64>() / oracle.len() as f64),
            mean_solve_seconds: mean(&|r| r.solve_seconds),
            mean_sampling_seconds: mean(&|r| r.sampling_seconds),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub space: SamplingSpace,
    pub epsilon: f64,
    pub beta: f64,
    pub seed: u64,
    pub rows: Vec<IntervalRow>,
    pub aggregates: Aggregates,
}

/// Fraction of held-out errors under which the dispatch breaks a limit.
pub fn violation_test(
    network: &Network,
    interval: &Interval,
    solution: &DispatchSolution,
    heldout: &[Vec<f64>],
) -> f64 {
    if heldout.is_empty() {
        return 0.0;
    }
    let hits = heldout
        .iter()
        .filter(|w| check_feasibility(network, interval, solution, w) > VIOLATION_TOLERANCE_MW)
        .count();
    hits as f64 / heldout.len() as f64
}

/// Violation probability under the ground-truth law at `env`, by `draws` Monte Carlo samples.
#[allow(clippy::too_many_arguments)]
pub fn oracle_violation(
    network: &Network,
    interval: &Interval,
    solution: &DispatchSolution,
    law: &SynthLaw,
    env: &EnvironmentVector,
    mapping: &FarmMapping,
    draws: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..draws {
        let w = mapping.to_mw(&law.sample(env, &mut rng));
        if check_feasibility(network, interval, solution, &w) > VIOLATION_TOLERANCE_MW {
            hits += 1;
        }
    }
    hits as f64 / draws.max(1) as f64
}

/// Shared inputs for a rolling simulation held in memory.
pub struct SimulationInputs<'a> {
    pub network: &'a Network,
    pub store: &'a ScenarioStore,
    pub law: Option<&'a SynthLaw>,
}

/// Per-interval forecast: every farm at the record's forecast level.
pub fn interval_at(case: &GridCase, env: &EnvironmentVector, load_scale: f64) -> Interval {
    Interval::at_level(case, env.forecast_level, load_scale)
}

fn interval_seed(seed: u64, record: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ record as u64
}

struct Outcome {
    solution: DispatchSolution,
    n_used: usize,
    h: usize,
    epsilon: f64,
    iterations: usize,
}

fn run_one(
    inputs: &SimulationInputs,
    config: &SimulationConfig,
    budget: RiskBudget,
    record: usize,
) -> Result<IntervalRow, HarnessError> {
    let store = inputs.store;
    let network = inputs.network;
    let rec = &store.records()[record];
    let interval = interval_at(&network.case, &rec.env, config.load_scale);
    let window = TimeWindow::lookback(rec.timestamp, config.space.lookback_days());
    let mapping = FarmMapping::new(network, store)?;
    let seed = interval_seed(config.seed, record);

    let sampling_started = Instant::now();
    let mut feed = match config.space {
        SamplingSpace::Similar => {
            let profile = fit_correlations(store, window)?;
            ScenarioFeed::similar(store, &profile, &rec.env, window, mapping.clone())
        }
        _ => ScenarioFeed::uniform(store, window, seed, mapping.clone()),
    };
    let sampling_seconds = sampling_started.elapsed().as_secs_f64();

    let mut row = IntervalRow {
        timestamp: rec.timestamp.format(TIMESTAMP_FORMAT).to_string(),
        forecast_level: rec.env.forecast_level,
        solved: false,
        failure: None,
        objective: f64::NAN,
        realized_cost: f64::NAN,
        n_used: 0,
        h: 0,
        epsilon_posterior: f64::NAN,
        iterations: 0,
        violation: false,
        residual_mw: f64::NAN,
        oracle_violation: None,
        solve_seconds: 0.0,
        sampling_seconds,
    };

    let started = Instant::now();
    let outcome: Result<Outcome, AlgorithmError> = match config.method {
        Method::Apriori => apriori_dispatch(network, &interval, &mut feed, budget, config.options)
            .map(|(solution, cert)| Outcome {
                solution,
                n_used: cert.sample_count_n,
                h: cert.complexity_h,
                epsilon: cert.posterior_epsilon,
                iterations: 1,
            }),
        Method::Incremental | Method::Baseline => {
            let trace = if config.method == Method::Incremental {
                incremental_dispatch(network, &interval, &mut feed, budget, config.options)
            } else {
                sample_discard_baseline(network, &interval, &mut feed, budget, config.options)
            };
            trace.map(|t| {
                let cert = t.certificate.expect("completed trace carries a certificate");
                Outcome {
                    iterations: t.rows.len(),
                    solution: t.solution.expect("completed trace carries a solution"),
                    n_used: cert.sample_count_n,
                    h: cert.complexity_h,
                    epsilon: cert.posterior_epsilon,
                }
            })
        }
    };
    let elapsed = started.elapsed().as_secs_f64();

    // Temporal hygiene: nothing at or after the interval may be sampled.
    if let Some(&bad) = feed
        .drawn()
        .iter()
        .find(|&&i| store.records()[i].timestamp >= rec.timestamp)
    {
        return Err(HarnessError::Invariant(format!(
            "record {} sampled for interval {}",
            store.records()[bad].timestamp, row.timestamp
        )));
    }

    match outcome {
        Err(e) => {
            log::warn!("interval {} failed: {e}", row.timestamp);
            row.failure = Some(e.to_string());
            row.solve_seconds = elapsed;
            Ok(row)
        }
        Ok(out) => {
            let realized = mapping.to_mw(&rec.error);
            let residual = check_feasibility(network, &interval, &out.solution, &realized);
            row.solved = true;
            row.objective = out.solution.objective;
            row.realized_cost = realized_cost(network, &interval, &out.solution, &realized);
            row.n_used = out.n_used;
            row.h = out.h;
            row.epsilon_posterior = out.epsilon;
            row.iterations = out.iterations;
            row.residual_mw = residual.max(0.0);
            row.violation = residual > VIOLATION_TOLERANCE_MW;
            row.solve_seconds = elapsed;
            row.sampling_seconds = sampling_seconds;
            if let (Some(law), true) = (inputs.law, config.oracle_draws > 0) {
                row.oracle_violation = Some(oracle_violation(
                    network,
                    &interval,
                    &out.solution,
                    law,
                    &rec.env,
                    &mapping,
                    config.oracle_draws,
                    seed ^ 0x5eed,
                ));
            }
            Ok(row)
        }
    }
}

/// Records to dispatch: the listed timestamps, or `count` consecutive records from `start`.
pub fn resolve_intervals(
    store: &ScenarioStore,
    config: &SimulationConfig,
) -> Result<Vec<usize>, HarnessError> {
    if !config.intervals.is_empty() {
        return config
            .intervals
            .iter()
            .map(|t| {
                parse_timestamp(t)
                    .and_then(|ts| store.position(ts))
                    .ok_or_else(|| HarnessError::UnknownInterval(t.clone()))
            })
            .collect();
    }
    let first = match &config.start {
        Some(t) => parse_timestamp(t)
            .and_then(|ts| store.position(ts))
            .ok_or_else(|| HarnessError::UnknownInterval(t.clone()))?,
        // Default: the last `count` records, leaving the longest history.
        None => store.len().saturating_sub(config.count),
    };
    let last = (first + config.count).min(store.len());
    Ok((first..last).collect())
}

/// Runs every interval independently and assembles the report in interval order.
pub fn simulate_with(
    inputs: &SimulationInputs,
    config: &SimulationConfig,
    records: &[usize],
) -> Result<RunReport, HarnessError> {
    let budget = config.budget()?;
    let rows: Vec<Result<IntervalRow, HarnessError>> = records
        .par_iter()
        .map(|&k| run_one(inputs, config, budget, k))
        .collect();
    let rows: Vec<IntervalRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let aggregates = Aggregates::from_rows(&rows);
    Ok(RunReport {
        method: config.method,
        space: config.space,
        epsilon: config.epsilon,
        beta: config.beta,
        seed: config.seed,
        rows,
        aggregates,
    })
}

pub fn load_network(case: &str) -> Result<Network, HarnessError> {
    let case = match GridCase::bundled(case) {
        Ok(c) => c,
        Err(GridError::UnknownBundled(_)) => load_case(case)?,
        Err(e) => return Err(e.into()),
    };
    Ok(Network::new(case)?)
}

pub fn case_regions(case: &GridCase) -> Vec<String> {
    let mut regions: Vec<String> = Vec::new();
    for farm in &case.wind_farms {
        if !regions.contains(&farm.region) {
            regions.push(farm.region.clone());
        }
    }
    regions
}

/// Loads case, history and optional law named in the config, then simulates.
pub fn simulate_rolling(config: &SimulationConfig) -> Result<RunReport, HarnessError> {
    let network = load_network(&config.case)?;
    let store = ingest_csv(&config.scenarios, &case_regions(&network.case))?;
    let law = match &config.law {
        Some(p) => Some(SynthLaw::load(p)?),
        None => None,
    };
    let store = match &law {
        Some(l) => {
            let weights = store
                .regions()
                .iter()
                .map(|r| {
                    l.regions
                        .iter()
                        .find(|x| &x.name == r)
                        .map_or(1.0, |x| x.capacity)
                })
                .collect();
            store.with_region_weights(weights)
        }
        None => store,
    };
    let records = resolve_intervals(&store, config)?;
    let inputs = SimulationInputs {
        network: &network,
        store: &store,
        law: law.as_ref(),
    };
    simulate_with(&inputs, config, &records)
}

/// One report per sampling space, otherwise identical configurations.
pub fn compare_spaces(
    config: &SimulationConfig,
    spaces: &[SamplingSpace],
) -> Result<Vec<RunReport>, HarnessError> {
    spaces
        .iter()
        .map(|&space| {
            let mut c = config.clone();
            c.space = space;
            simulate_rolling(&c)
        })
        .collect()
}

/// Aggregates of each report restricted to intervals every report solved.
pub fn common_aggregates(reports: &[RunReport]) -> Vec<Aggregates> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let keep: Vec<usize> = (0..first.rows.len())
        .filter(|&i| {
            reports
                .iter()
                .all(|r| r.rows.get(i).is_some_and(|row| row.solved && row.timestamp == first.rows[i].timestamp))
        })
        .collect();
    reports
        .iter()
        .map(|r| Aggregates::from_rows(&keep.iter().map(|&i| r.rows[i].clone()).collect::<Vec<_>>()))
        .collect()
}

/// Violation/cost summary table, one line per report, over the intervals all reports solved.
pub fn comparison_table(reports: &[RunReport]) -> String {
    let common = common_aggregates(reports);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<12} {:>10} {:>10} {:>14} {:>8} {:>8}",
        "space", "method", "violation", "exact", "average cost", "mean N", "solved"
    );
    for (r, a) in reports.iter().zip(&common) {
        let method = serde_json::to_value(r.method)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let exact = a
            .mean_oracle_violation
            .map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>10.4} {:>10} {:>14.2} {:>8.1} {:>5}/{}",
            r.space.label(),
            method,
            a.violation_rate,
            exact,
            a.mean_realized_cost,
            a.mean_n,
            r.aggregates.solved,
            r.aggregates.intervals
        );
    }
    let _ = writeln!(out, "compared intervals: {}", common.first().map_or(0, |a| a.solved));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    /// One row per interval.
    Csv,
    /// `timestamp,metric,value` rows for plotting.
    Long,
}

pub const CSV_COLUMNS: &str = "timestamp,forecast_level,solved,objective,realized_cost,n_used,h,\
epsilon_posterior,iterations,violation,residual_mw,oracle_violation,solve_seconds,sampling_seconds";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Csv => {
            let mut out = String::from(CSV_COLUMNS);
            out.push('\n');
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.timestamp,
                    r.forecast_level,
                    r.solved,
                    r.objective,
                    r.realized_cost,
                    r.n_used,
                    r.h,
                    r.epsilon_posterior,
                    r.iterations,
                    r.violation,
                    r.residual_mw,
                    fmt_opt(r.oracle_violation),
                    r.solve_seconds,
                    r.sampling_seconds
                );
            }
            out
        }
        ReportFormat::Long => {
            let mut out = String::from("space,method,timestamp,metric,value\n");
            let method = serde_json::to_value(report.method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            for r in report.rows.iter().filter(|r| r.solved) {
                for (metric, value) in [
                    ("n_used", r.n_used as f64),
                    ("h", r.h as f64),
                    ("objective", r.objective),
                    ("realized_cost", r.realized_cost),
                    ("epsilon_posterior", r.epsilon_posterior),
                ] {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        report.space.label(),
                        method,
                        r.timestamp,
                        metric,
                        value
                    );
                }
            }
            out
        }
    }
}

/// Writes the report; returns the file path.
pub fn emit_report(
    report: &RunReport,
    format: ReportFormat,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(dir.as_ref())?;
    let ext = match format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
        ReportFormat::Long => "long.csv",
    };
    let path = dir.as_ref().join(format!("{stem}.{ext}"));
    std::fs::write(&path, render_report(report, format))?;
    Ok(path)
}

/// Checks report-level invariants; returns a description of the first breach.
pub fn check_report(report: &RunReport) -> Option<String> {
    let again = Aggregates::from_rows(&report.rows);
    let same = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || a == b;
    if again.violations != report.aggregates.violations
        || again.solved != report.aggregates.solved
        || !same(again.violation_rate, report.aggregates.violation_rate)
        || !same(again.mean_realized_cost, report.aggregates.mean_realized_cost)
    {
        return Some("aggregates do not recompute from rows".into());
    }
    for r in report.rows.iter().filter(|r| r.solved) {
        if r.violation != (r.residual_mw > VIOLATION_TOLERANCE_MW) {
            return Some(format!("violation flag inconsistent at {}", r.timestamp));
        }
        if r.epsilon_posterior > report.epsilon + 1e-12 {
            return Some(format!("certificate above budget at {}", r.timestamp));
        }
    }
    None
}

pub fn parse_report_time(text: &str) -> Option<NaiveDateTime> {
    parse_timestamp(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{build_sp, solve_sp};
    use crate::scenarios::{generate, SynthConfig};

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            case: "rts24".into(),
            scenarios: String::new(),
            intervals: vec![],
            start: None,
            count: 4,
            method: Method::Incremental,
            space: SamplingSpace::Similar,
            epsilon: 0.1,
            beta: 1e-3,
            seed: 3,
            load_scale: 1.0,
            options: DispatchOptions::default(),
            law: None,
            oracle_draws: 200,
        }
    }

    #[test]
    fn rolling_run_has_one_row_per_interval() {
        let network = Network::bundled("rts24").unwrap();
        let cfg = SynthConfig::default().with_records(26_500);
        let store = generate(&cfg, 1).unwrap();
        let inputs = SimulationInputs {
            network: &network,
            store: &store,
            law: Some(&cfg.law),
        };
        let config = small_config();
        let records = resolve_intervals(&store, &config).unwrap();
        let report = simulate_with(&inputs, &config, &records).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(check_report(&report).is_none());
        assert!(report.rows.iter().all(|r| r.oracle_violation.is_some() || !r.solved));

        let again = simulate_with(&inputs, &config, &records).unwrap();
        assert_eq!(
            render_report(&report, ReportFormat::Long),
            render_report(&again, ReportFormat::Long)
        );

        let json = render_report(&report, ReportFormat::Json);
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rows.len(), report.rows.len());
        assert_eq!(back.aggregates.solved, report.aggregates.solved);

        let csv = render_report(&report, ReportFormat::Csv);
        assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS);
    }

    #[test]
    fn training_scenarios_never_violate() {
        let network = Network::bundled("bus3").unwrap();
        let interval = Interval {
            demand: vec![120.0],
            wind_forecast: vec![20.0],
        };
        let scen: Vec<Vec<f64>> = (0..20).map(|k| vec![k as f64 - 10.0]).collect();
        let sp = build_sp(&network, &interval, &scen, DispatchOptions::default()).unwrap();
        let sol = solve_sp(&sp);
        assert_eq!(violation_test(&network, &interval, &sol, &scen), 0.0);
    }

    #[test]
    fn loose_limits_never_violate() {
        let mut case = GridCase::bundled("bus3").unwrap();
        for l in &mut case.lines {
            l.capacity = 1e6;
        }
        for g in &mut case.generators {
            g.g_max = 1e6;
            g.ramp_up = 1e6;
            g.ramp_down = -1e6;
        }
        let network = Network::new(case).unwrap();
        let interval = Interval {
            demand: vec![120.0],
            wind_forecast: vec![20.0],
        };
        let sp = build_sp(&network, &interval, &[vec![1.0]], DispatchOptions::default()).unwrap();
        let sol = solve_sp(&sp);
        let heldout: Vec<Vec<f64>> = (0..50).map(|k| vec![k as f64 - 20.0]).collect();
        assert_eq!(violation_test(&network, &interval, &sol, &heldout), 0.0);
    }

    #[test]
    fn aggregates_recompute_exactly() {
        let row = |cost: f64, violation: bool| IntervalRow {
            timestamp: "2022-01-01T00:00:00".into(),
            forecast_level: 0.2,
            solved: true,
            failure: None,
            objective: cost,
            realized_cost: cost,
            n_used: 135,
            h: 1,
            epsilon_posterior: 0.05,
            iterations: 1,
            violation,
            residual_mw: if violation { 1.0 } else { 0.0 },
            oracle_violation: None,
            solve_seconds: 0.0,
            sampling_seconds: 0.0,
        };
        let rows = vec![row(10.0, false), row(20.0, true), row(30.0, false)];
        let a = Aggregates::from_rows(&rows);
        assert_eq!(a.violations, 1);
        assert_eq!(a.violation_rate, 1.0 / 3.0);
        assert_eq!(a.mean_realized_cost, 20.0);
    }

    #[test]
    fn names_parse() {
        assert_eq!("half-year".parse::<SamplingSpace>().unwrap(), SamplingSpace::HalfYear);
        assert_eq!("baseline".parse::<Method>().unwrap(), Method::Baseline);
        assert!("weekly".parse::<SamplingSpace>().is_err());
    }
}
