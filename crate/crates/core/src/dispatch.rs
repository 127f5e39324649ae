//! Scenario program for DC dispatch with affine reserve participation.
//!
//! Decision vector `x = [g; eta]`: scheduled output and the share of the
//! total wind deviation `s` each generator absorbs, so real-time output is
//! `g - s * eta`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{compute_ptdf, GridCase, GridError, PtdfMatrix};
use crate::lp::{ActiveSetSolver, LinearProgram, LpBackend, LpStatus, Rows};

/// Residuals at or below this many MW count as satisfied.
pub const VIOLATION_TOLERANCE_MW: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("interval has {found} {what} values, case expects {expected}")]
    Dimension {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("scenario {index} has {found} entries, case has {expected} wind farms")]
    ScenarioLength {
        index: usize,
        found: usize,
        expected: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// A validated case together with its flow sensitivities.
#[derive(Debug, Clone)]
pub struct Network {
    pub case: GridCase,
    pub ptdf: PtdfMatrix,
}

impl Network {
    pub fn new(mut case: GridCase) -> Result<Self, GridError> {
        case.validate()?;
        let ptdf = compute_ptdf(&case)?;
        Ok(Self { case, ptdf })
    }

    pub fn bundled(name: &str) -> Result<Self, GridError> {
        Self::new(GridCase::bundled(name)?)
    }
}

/// Demand and wind forecast for one dispatch period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    /// MW per load, in case order.
    pub demand: Vec<f64>,
    /// MW per wind farm, in case order.
    pub wind_forecast: Vec<f64>,
}

impl Interval {
    /// Demand and forecasts exactly as stored in the case.
    pub fn nominal(case: &GridCase) -> Self {
        Self {
            demand: case.loads.iter().map(|l| l.demand).collect(),
            wind_forecast: case.wind_farms.iter().map(|w| w.forecast).collect(),
        }
    }

    /// Every farm forecast at `level` times its capacity; demand scaled by `load_scale`.
    pub fn at_level(case: &GridCase, level: f64, load_scale: f64) -> Self {
        Self {
            demand: case.loads.iter().map(|l| l.demand * load_scale).collect(),
            wind_forecast: case
                .wind_farms
                .iter()
                .map(|w| level.clamp(0.0, 1.0) * w.capacity)
                .collect(),
        }
    }

    fn check(&self, case: &GridCase) -> Result<(), DispatchError> {
        if self.demand.len() != case.loads.len() {
            return Err(DispatchError::Dimension {
                what: "demand",
                found: self.demand.len(),
                expected: case.loads.len(),
            });
        }
        if self.wind_forecast.len() != case.wind_farms.len() {
            return Err(DispatchError::Dimension {
                what: "wind forecast",
                found: self.wind_forecast.len(),
                expected: case.wind_farms.len(),
            });
        }
        if self
            .demand
            .iter()
            .chain(&self.wind_forecast)
            .any(|v| !v.is_finite())
        {
            return Err(DispatchError::NonFinite("interval"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispatchOptions {
    /// Add `eta >= 0` rows.
    #[serde(default)]
    pub nonnegative_participation: bool,
    /// Pick the final participation vector by sampled recourse cost (see [`settle_participation`]).
    #[serde(default = "yes")]
    pub settle_participation: bool,
}

fn yes() -> bool {
    true
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self {
            nonnegative_participation: false,
            settle_participation: true,
        }
    }
}

/// Error realization after clipping the implied output into `[0, capacity]`.
pub fn clamp_scenario(case: &GridCase, forecast: &[f64], error: &[f64]) -> Vec<f64> {
    case.wind_farms
        .iter()
        .zip(forecast)
        .zip(error)
        .map(|((farm, &w), &e)| (w + e).clamp(0.0, farm.capacity) - w)
        .collect()
}

/// An assembled scenario program over a fixed scenario list.
#[derive(Debug, Clone)]
pub struct ScenarioProblem<'a> {
    network: &'a Network,
    interval: Interval,
    options: DispatchOptions,
    scenarios: Vec<Vec<f64>>,
    totals: Vec<f64>,
    lp: LinearProgram,
    base_rows: usize,
    block_rows: usize,
}

impl<'a> ScenarioProblem<'a> {
    pub fn network(&self) -> &'a Network {
        self.network
    }

    pub fn interval(&self) -> &Interval {
        &self.interval
    }

    pub fn options(&self) -> DispatchOptions {
        self.options
    }

    pub fn n_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    /// Raw (unclamped) scenario errors in MW per farm.
    pub fn scenarios(&self) -> &[Vec<f64>] {
        &self.scenarios
    }

    /// Total clamped deviation of scenario `i`.
    pub fn scenario_total(&self, i: usize) -> f64 {
        self.totals[i]
    }

    pub fn lp(&self) -> &LinearProgram {
        &self.lp
    }

    /// Inequality rows not tied to any scenario.
    pub fn base_rows(&self) -> usize {
        self.base_rows
    }

    pub fn block_rows(&self) -> usize {
        self.block_rows
    }

    /// Scenario owning inequality row `row`, if any.
    pub fn block_of_row(&self, row: usize) -> Option<usize> {
        (row >= self.base_rows).then(|| (row - self.base_rows) / self.block_rows)
    }

    /// The same program restricted to the listed scenarios, in that order.
    pub fn subset(&self, keep: &[usize]) -> ScenarioProblem<'a> {
        let chosen: Vec<Vec<f64>> = keep.iter().map(|&i| self.scenarios[i].clone()).collect();
        build_sp(self.network, &self.interval, &chosen, self.options)
            .expect("subset of a valid program is valid")
    }
}

pub fn build_sp<'a>(
    network: &'a Network,
    interval: &Interval,
    scenarios: &[Vec<f64>],
    options: DispatchOptions,
) -> Result<ScenarioProblem<'a>, DispatchError> {
    let case = &network.case;
    interval.check(case)?;
    let n_g = case.n_gen();
    let n_f = case.n_lines();
    let n_w = case.n_wind();
    for (index, s) in scenarios.iter().enumerate() {
        if s.len() != n_w {
            return Err(DispatchError::ScenarioLength {
                index,
                found: s.len(),
                expected: n_w,
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(DispatchError::NonFinite("scenario"));
        }
    }

    let n = 2 * n_g;
    let mut cost = vec![0.0; n];
    for (j, gen) in case.generators.iter().enumerate() {
        cost[j] = gen.cost;
    }
    let mut lp = LinearProgram::new(cost);

    let mut row = vec![0.0; n];
    row[..n_g].fill(1.0);
    let demand: f64 = interval.demand.iter().sum();
    let forecast: f64 = interval.wind_forecast.iter().sum();
    lp.eq.push(&row, demand - forecast);
    row.fill(0.0);
    row[n_g..].fill(1.0);
    lp.eq.push(&row, 1.0);

    let block_rows = 2 * n_f + 4 * n_g;
    let base_rows = 2 * n_g + if options.nonnegative_participation { n_g } else { 0 };
    let mut le = Rows::with_capacity(n, base_rows + scenarios.len() * block_rows);
    for (j, gen) in case.generators.iter().enumerate() {
        row.fill(0.0);
        row[j] = 1.0;
        le.push(&row, gen.g_max);
        row[j] = -1.0;
        le.push(&row, -gen.g_min);
    }
    if options.nonnegative_participation {
        for j in 0..n_g {
            row.fill(0.0);
            row[n_g + j] = -1.0;
            le.push(&row, 0.0);
        }
    }

    let ptdf = &network.ptdf;
    let load_flow: Vec<f64> = (0..n_f)
        .map(|l| (0..case.loads.len()).map(|k| ptdf.h_d[(l, k)] * interval.demand[k]).sum())
        .collect();

    let mut clamped_all = Vec::with_capacity(scenarios.len());
    let mut totals = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let clamped = clamp_scenario(case, &interval.wind_forecast, s);
        let total: f64 = clamped.iter().sum();
        // Flow from loads and realized wind, excluding conventional units.
        let offset: Vec<f64> = (0..n_f)
            .map(|l| {
                let wind: f64 = (0..n_w)
                    .map(|k| ptdf.h_w[(l, k)] * (interval.wind_forecast[k] + clamped[k]))
                    .sum();
                wind - load_flow[l]
            })
            .collect();
        for l in 0..n_f {
            for j in 0..n_g {
                row[j] = ptdf.h_g[(l, j)];
                row[n_g + j] = -total * ptdf.h_g[(l, j)];
            }
            le.push(&row, case.lines[l].capacity - offset[l]);
        }
        for l in 0..n_f {
            for j in 0..n_g {
                row[j] = -ptdf.h_g[(l, j)];
                row[n_g + j] = total * ptdf.h_g[(l, j)];
            }
            le.push(&row, case.lines[l].capacity + offset[l]);
        }
        for (j, gen) in case.generators.iter().enumerate() {
            row.fill(0.0);
            row[j] = 1.0;
            row[n_g + j] = -total;
            le.push(&row, gen.g_max);
        }
        for (j, gen) in case.generators.iter().enumerate() {
            row.fill(0.0);
            row[j] = -1.0;
            row[n_g + j] = total;
            le.push(&row, -gen.g_min);
        }
        for (j, gen) in case.generators.iter().enumerate() {
            row.fill(0.0);
            row[n_g + j] = -total;
            le.push(&row, gen.ramp_up);
        }
        for (j, gen) in case.generators.iter().enumerate() {
            row.fill(0.0);
            row[n_g + j] = total;
            le.push(&row, -gen.ramp_down);
        }
        clamped_all.push(clamped);
        totals.push(total);
    }
    lp.le = le;
    lp.seed_rows = (0..base_rows).collect();

    Ok(ScenarioProblem {
        network,
        interval: interval.clone(),
        options,
        scenarios: scenarios.to_vec(),
        totals,
        lp,
        base_rows,
        block_rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub solve_time: Duration,
    pub n_vars: usize,
    pub n_equalities: usize,
    pub n_inequalities: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub status: LpStatus,
    pub generation: Vec<f64>,
    pub participation: Vec<f64>,
    pub objective: f64,
    /// Multipliers of each scenario's constraint block.
    pub scenario_duals: Vec<Vec<f64>>,
    /// Scenarios implicated in an infeasibility, when infeasible.
    pub infeasible_scenarios: Vec<usize>,
    pub report: SolverReport,
}

impl DispatchSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Infinity norm of scenario `i`'s multipliers.
    pub fn dual_norm(&self, i: usize) -> f64 {
        self.scenario_duals[i]
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn participation_nonnegative(&self, tol: f64) -> bool {
        self.participation.iter().all(|&e| e >= -tol)
    }
}

pub fn solve_sp(problem: &ScenarioProblem) -> DispatchSolution {
    solve_sp_with(problem, &ActiveSetSolver::default())
}

pub fn solve_sp_with(problem: &ScenarioProblem, backend: &dyn LpBackend) -> DispatchSolution {
    let n_g = problem.network.case.n_gen();
    let started = Instant::now();
    let sol = backend.solve(&problem.lp);
    let solve_time = started.elapsed();

    let scenario_duals = (0..problem.n_scenarios())
        .map(|i| {
            let lo = problem.base_rows + i * problem.block_rows;
            if sol.le_duals.len() >= lo + problem.block_rows {
                sol.le_duals[lo..lo + problem.block_rows].to_vec()
            } else {
                vec![0.0; problem.block_rows]
            }
        })
        .collect();
    let mut infeasible_scenarios: Vec<usize> = sol
        .conflict_rows
        .iter()
        .filter_map(|&r| problem.block_of_row(r))
        .collect();
    infeasible_scenarios.sort_unstable();
    infeasible_scenarios.dedup();
    if sol.status == LpStatus::Infeasible {
        log::warn!(
            "scenario program infeasible; implicated scenarios {:?}",
            infeasible_scenarios
        );
    }

    DispatchSolution {
        status: sol.status,
        generation: sol.x[..n_g].to_vec(),
        participation: sol.x[n_g..].to_vec(),
        objective: sol.objective,
        scenario_duals,
        infeasible_scenarios,
        report: SolverReport {
            iterations: sol.iterations,
            solve_time,
            n_vars: problem.lp.n_vars(),
            n_equalities: problem.lp.eq.len(),
            n_inequalities: problem.lp.le.len(),
        },
    }
}

/// Re-chooses the participation vector with generation held at the optimum.
///
/// The program prices only `g`, so any feasible `eta` is optimal. Among those, this keeps the
/// one with the least recourse cost at the mean sampled deviation. Duals, objective and
/// status are left as solved; on solver trouble the input is returned unchanged.
pub fn settle_participation(problem: &ScenarioProblem, solution: DispatchSolution) -> DispatchSolution {
    if !solution.is_optimal() || problem.n_scenarios() == 0 {
        return solution;
    }
    let case = &problem.network.case;
    let n_g = case.n_gen();
    let mean_total = problem.totals.iter().sum::<f64>() / problem.n_scenarios() as f64;
    let mut lp = problem.lp.clone();
    for (j, gen) in case.generators.iter().enumerate() {
        lp.cost[j] = 0.0;
        lp.cost[n_g + j] = -mean_total * gen.cost;
    }
    // Fixing every unit makes the balance row redundant; keep only the participation sum.
    let mut eq = Rows::new(2 * n_g);
    eq.push(problem.lp.eq.row(1), problem.lp.eq.rhs[1]);
    let mut row = vec![0.0; 2 * n_g];
    for j in 0..n_g {
        row.fill(0.0);
        row[j] = 1.0;
        eq.push(&row, solution.generation[j]);
    }
    lp.eq = eq;
    let settled = ActiveSetSolver::default().solve(&lp);
    if settled.status != LpStatus::Optimal {
        log::debug!("participation settle ended {:?}; keeping solved policy", settled.status);
        return solution;
    }
    DispatchSolution {
        participation: settled.x[n_g..].to_vec(),
        ..solution
    }
}

/// Real-time unit output under a realized error.
pub fn realized_generation(
    network: &Network,
    interval: &Interval,
    solution: &DispatchSolution,
    error: &[f64],
) -> Vec<f64> {
    let clamped = clamp_scenario(&network.case, &interval.wind_forecast, error);
    let total: f64 = clamped.iter().sum();
    solution
        .generation
        .iter()
        .zip(&solution.participation)
        .map(|(g, e)| g - total * e)
        .collect()
}

/// Largest constraint residual (MW) of the policy under a realized error;
/// zero or negative means every limit holds.
pub fn check_feasibility(
    network: &Network,
    interval: &Interval,
    solution: &DispatchSolution,
    error: &[f64],
) -> f64 {
    let case = &network.case;
    let ptdf = &network.ptdf;
    let clamped = clamp_scenario(case, &interval.wind_forecast, error);
    let total: f64 = clamped.iter().sum();
    let output = realized_generation(network, interval, solution, error);

    let mut worst = f64::NEG_INFINITY;
    for (j, gen) in case.generators.iter().enumerate() {
        let delta = -total * solution.participation[j];
        worst = worst
            .max(output[j] - gen.g_max)
            .max(gen.g_min - output[j])
            .max(delta - gen.ramp_up)
            .max(gen.ramp_down - delta);
    }
    for (l, line) in case.lines.iter().enumerate() {
        let mut flow = 0.0;
        for j in 0..case.n_gen() {
            flow += ptdf.h_g[(l, j)] * output[j];
        }
        for (k, d) in interval.demand.iter().enumerate() {
            flow -= ptdf.h_d[(l, k)] * d;
        }
        for k in 0..case.n_wind() {
            flow += ptdf.h_w[(l, k)] * (interval.wind_forecast[k] + clamped[k]);
        }
        worst = worst.max(flow.abs() - line.capacity);
    }
    worst
}

/// Conventional cost of the realized output plus the wind energy cost.
pub fn realized_cost(
    network: &Network,
    interval: &Interval,
    solution: &DispatchSolution,
    error: &[f64],
) -> f64 {
    let case = &network.case;
    let clamped = clamp_scenario(case, &interval.wind_forecast, error);
    let output = realized_generation(network, interval, solution, error);
    let conventional: f64 = case
        .generators
        .iter()
        .zip(&output)
        .map(|(gen, p)| gen.cost * p)
        .sum();
    let wind: f64 = interval
        .wind_forecast
        .iter()
        .zip(&clamped)
        .map(|(w, e)| w + e)
        .sum();
    conventional + case.wind_price * wind
}
