//! Support-scenario search and risk-tuning procedures built on the scenario program.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{
    build_sp, settle_participation, solve_sp, DispatchError, DispatchOptions, DispatchSolution,
    Interval, Network, ScenarioProblem,
};
use crate::lp::LpStatus;
use crate::risk::{
    discard_posterior_risk, posterior_risk, sample_size, Certificate, RiskBudget, RiskError,
};
use crate::scenarios::{
    CorrelationProfile, EnvironmentVector, SampleCursor, ScenarioStore, StoreError, TimeWindow,
};

/// Relative objective decrease that marks a scenario as support.
pub const SUPPORT_RELATIVE_TOL: f64 = 1e-9;
/// Dual blocks with infinity norm below `DUAL_ZERO_TOL * (1 + |objective|)` are treated as zero.
pub const DUAL_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AlgorithmError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error("wind farm region '{0}' has no error column in the scenario store")]
    UnknownRegion(String),
    #[error("scenario program is {status:?} with {scenarios} scenarios")]
    Solve { status: LpStatus, scenarios: usize },
    #[error("re-solve without scenario {index} ended {status:?}")]
    Resolve { index: usize, status: LpStatus },
    #[error(
        "need {needed} scenarios but only {available} are available; \
         reset the risk budget (best achievable epsilon at this beta: {achievable_epsilon:.4})"
    )]
    InsufficientData {
        needed: usize,
        available: usize,
        achievable_epsilon: f64,
    },
    #[error("stopped at iteration {}: {source}", partial.rows.len() + 1)]
    Interrupted {
        partial: Box<RiskTuningTrace>,
        source: Box<AlgorithmError>,
    },
}

/// Maps store regions onto the case's wind farms.
#[derive(Debug, Clone)]
pub struct FarmMapping {
    columns: Vec<(usize, f64)>,
}

impl FarmMapping {
    pub fn new(network: &Network, store: &ScenarioStore) -> Result<Self, AlgorithmError> {
        let columns = network
            .case
            .wind_farms
            .iter()
            .map(|farm| {
                store
                    .region_index(&farm.region)
                    .map(|c| (c, farm.capacity))
                    .ok_or_else(|| AlgorithmError::UnknownRegion(farm.region.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { columns })
    }

    /// Per-farm error in MW for per-unit regional errors.
    pub fn to_mw(&self, error: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|&(c, cap)| error[c] * cap).collect()
    }
}

/// Scenario supply drawn from a store through a sampling cursor.
#[derive(Debug, Clone)]
pub struct ScenarioFeed<'s> {
    store: &'s ScenarioStore,
    cursor: SampleCursor,
    mapping: FarmMapping,
    drawn: Vec<usize>,
}

impl<'s> ScenarioFeed<'s> {
    pub fn new(store: &'s ScenarioStore, cursor: SampleCursor, mapping: FarmMapping) -> Self {
        Self {
            store,
            cursor,
            mapping,
            drawn: Vec::new(),
        }
    }

    /// Nearest records to `target` inside `window`, consumed in order.
    pub fn similar(
        store: &'s ScenarioStore,
        profile: &CorrelationProfile,
        target: &EnvironmentVector,
        window: TimeWindow,
        mapping: FarmMapping,
    ) -> Self {
        Self::new(store, store.rank(profile, target, window), mapping)
    }

    /// Uniform random records from `window`.
    pub fn uniform(
        store: &'s ScenarioStore,
        window: TimeWindow,
        seed: u64,
        mapping: FarmMapping,
    ) -> Self {
        Self::new(store, store.shuffled(window, seed), mapping)
    }

    pub fn remaining(&self) -> usize {
        self.cursor.remaining()
    }

    /// Store indices drawn so far, in draw order.
    pub fn drawn(&self) -> &[usize] {
        &self.drawn
    }

    pub fn take(&mut self, k: usize) -> Result<Vec<Vec<f64>>, StoreError> {
        let picked = self.cursor.take(k)?.to_vec();
        let out = picked
            .iter()
            .map(|&i| self.mapping.to_mw(&self.store.records()[i].error))
            .collect();
        self.drawn.extend(picked);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportSet {
    /// Sorted scenario indices.
    pub indices: Vec<usize>,
    /// Scenarios examined by leave-one-out re-solves.
    pub candidates: usize,
}

impl SupportSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn strictly_below(value: f64, reference: f64) -> bool {
    value < reference - SUPPORT_RELATIVE_TOL * reference.abs().max(1.0)
}

fn leave_one_out(
    problem: &ScenarioProblem,
    pool: &[usize],
    reference: f64,
) -> Result<Vec<usize>, AlgorithmError> {
    let verdicts: Vec<Result<Option<usize>, AlgorithmError>> = pool
        .par_iter()
        .map(|&i| {
            let keep: Vec<usize> = pool.iter().copied().filter(|&k| k != i).collect();
            let sol = solve_sp(&problem.subset(&keep));
            if sol.status != LpStatus::Optimal {
                return Err(AlgorithmError::Resolve {
                    index: i,
                    status: sol.status,
                });
            }
            Ok(strictly_below(sol.objective, reference).then_some(i))
        })
        .collect();
    let mut out = Vec::new();
    for v in verdicts {
        if let Some(i) = v? {
            out.push(i);
        }
    }
    out.sort_unstable();
    Ok(out)
}

fn require_optimal(solution: &DispatchSolution, scenarios: usize) -> Result<(), AlgorithmError> {
    if solution.status == LpStatus::Optimal {
        Ok(())
    } else {
        Err(AlgorithmError::Solve {
            status: solution.status,
            scenarios,
        })
    }
}

fn settle(problem: &ScenarioProblem, solution: DispatchSolution) -> DispatchSolution {
    if problem.options().settle_participation {
        settle_participation(problem, solution)
    } else {
        solution
    }
}

/// Scenarios whose individual removal strictly lowers the optimal cost.
pub fn support_bruteforce(
    problem: &ScenarioProblem,
    solution: &DispatchSolution,
) -> Result<SupportSet, AlgorithmError> {
    require_optimal(solution, problem.n_scenarios())?;
    let pool: Vec<usize> = (0..problem.n_scenarios()).collect();
    Ok(SupportSet {
        indices: leave_one_out(problem, &pool, solution.objective)?,
        candidates: pool.len(),
    })
}

/// Dual-guided support search: only scenarios with nonzero multipliers are
/// candidates, and each is tested by re-solving over the other candidates.
pub fn support_dual(
    problem: &ScenarioProblem,
    solution: &DispatchSolution,
) -> Result<SupportSet, AlgorithmError> {
    require_optimal(solution, problem.n_scenarios())?;
    let threshold = DUAL_ZERO_TOL * (1.0 + solution.objective.abs());
    let pool: Vec<usize> = (0..problem.n_scenarios())
        .filter(|&i| solution.dual_norm(i) > threshold)
        .collect();
    Ok(SupportSet {
        indices: leave_one_out(problem, &pool, solution.objective)?,
        candidates: pool.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub j: usize,
    #[serde(rename = "N_j")]
    pub n_j: usize,
    pub h_j: usize,
    pub objective: f64,
    pub epsilon_j: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskTuningTrace {
    pub rows: Vec<TraceRow>,
    pub solution: Option<DispatchSolution>,
    pub certificate: Option<Certificate>,
    /// Support scenarios of the terminal program, as indices into `scenarios`.
    pub support: Vec<usize>,
    /// Scenario errors (MW per farm) of the terminal program.
    pub scenarios: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl RiskTuningTrace {
    fn empty() -> Self {
        Self {
            rows: Vec::new(),
            solution: None,
            certificate: None,
            support: Vec::new(),
            scenarios: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn terminal(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "j,N_j,h_j,objective,epsilon_j")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6}",
                r.j, r.n_j, r.h_j, r.objective, r.epsilon_j
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut file)?;
        file.flush()
    }
}

fn duplicate_warning(scenarios: &[Vec<f64>]) -> Option<String> {
    let mut seen = HashSet::new();
    let dups = scenarios
        .iter()
        .filter(|s| !seen.insert(s.iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
        .count();
    (dups > 0).then(|| {
        format!("{dups} duplicate scenarios; support count may understate complexity")
    })
}

/// Solves with `N = sample_size(n)` scenarios, `n` the decision dimension.
pub fn apriori_dispatch(
    network: &Network,
    interval: &Interval,
    feed: &mut ScenarioFeed,
    budget: RiskBudget,
    options: DispatchOptions,
) -> Result<(DispatchSolution, Certificate), AlgorithmError> {
    let n = network.case.decision_dimension();
    let needed = sample_size(n, budget)?;
    if feed.remaining() < needed {
        let available = feed.remaining();
        let achievable_epsilon = if available >= n {
            posterior_risk(n, available, budget.beta)?
        } else {
            1.0
        };
        return Err(AlgorithmError::InsufficientData {
            needed,
            available,
            achievable_epsilon,
        });
    }
    let scenarios = feed.take(needed)?;
    let problem = build_sp(network, interval, &scenarios, options)?;
    let solution = solve_sp(&problem);
    require_optimal(&solution, needed)?;
    let solution = settle(&problem, solution);
    let certificate = Certificate {
        complexity_h: n,
        sample_count_n: needed,
        posterior_epsilon: posterior_risk(n, needed, budget.beta)?,
    };
    Ok((solution, certificate))
}

/// Grows the scenario set until the observed support count fits the assumed complexity.
pub fn incremental_dispatch(
    network: &Network,
    interval: &Interval,
    feed: &mut ScenarioFeed,
    budget: RiskBudget,
    options: DispatchOptions,
) -> Result<RiskTuningTrace, AlgorithmError> {
    let n = network.case.decision_dimension().max(1);
    let mut trace = RiskTuningTrace::empty();
    let mut scenarios: Vec<Vec<f64>> = Vec::new();
    let mut j = 1;
    loop {
        let step = (|| -> Result<(ScenarioProblem, DispatchSolution, SupportSet, usize), AlgorithmError> {
            let n_j = sample_size(j, budget)?;
            scenarios.extend(feed.take(n_j - scenarios.len())?);
            let problem = build_sp(network, interval, &scenarios, options)?;
            let solution = solve_sp(&problem);
            require_optimal(&solution, n_j)?;
            let support = support_dual(&problem, &solution)?;
            Ok((problem, solution, support, n_j))
        })();
        let (problem, solution, support, n_j) = match step {
            Ok(v) => v,
            Err(e) => {
                return Err(AlgorithmError::Interrupted {
                    partial: Box::new(trace),
                    source: Box::new(e),
                })
            }
        };
        if let Some(w) = duplicate_warning(&scenarios) {
            if !trace.warnings.contains(&w) {
                log::warn!("{w}");
                trace.warnings.push(w);
            }
        }
        let h_j = support.len();
        let epsilon_j = posterior_risk(h_j.max(1), n_j, budget.beta)?;
        trace.rows.push(TraceRow {
            j,
            n_j,
            h_j,
            objective: solution.objective,
            epsilon_j,
        });
        if h_j <= j || j >= n {
            debug_assert!(h_j <= j, "support count {h_j} above decision dimension {n}");
            trace.certificate = Some(Certificate {
                complexity_h: h_j,
                sample_count_n: n_j,
                posterior_epsilon: epsilon_j,
            });
            trace.solution = Some(settle(&problem, solution));
            trace.support = support.indices;
            trace.scenarios = scenarios;
            return Ok(trace);
        }
        j += 1;
    }
}

/// Starts from `sample_size(n)` scenarios and removes support scenarios one at a time
/// while the discarding bound keeps the violation level within budget.
pub fn sample_discard_baseline(
    network: &Network,
    interval: &Interval,
    feed: &mut ScenarioFeed,
    budget: RiskBudget,
    options: DispatchOptions,
) -> Result<RiskTuningTrace, AlgorithmError> {
    let n = network.case.decision_dimension();
    let total = sample_size(n, budget)?;
    if feed.remaining() < total {
        let available = feed.remaining();
        return Err(AlgorithmError::InsufficientData {
            needed: total,
            available,
            achievable_epsilon: if available >= n {
                posterior_risk(n, available, budget.beta)?
            } else {
                1.0
            },
        });
    }
    let pool = feed.take(total)?;
    let mut trace = RiskTuningTrace::empty();
    if let Some(w) = duplicate_warning(&pool) {
        trace.warnings.push(w);
    }

    let mut active: Vec<usize> = (0..total).collect();
    let mut problem = build_sp(network, interval, &pool, options)?;
    let mut solution = solve_sp(&problem);
    require_optimal(&solution, total)?;
    let mut support = support_dual(&problem, &solution)?;
    let complexity = support.len();
    let mut discarded = 0;
    loop {
        let epsilon_j = discard_posterior_risk(complexity.max(1), discarded, total, budget.beta)?;
        trace.rows.push(TraceRow {
            j: discarded + 1,
            n_j: active.len(),
            h_j: support.len(),
            objective: solution.objective,
            epsilon_j,
        });
        let next_ok = complexity > 0
            && !support.is_empty()
            && total >= complexity + discarded + 1
            && discard_posterior_risk(complexity, discarded + 1, total, budget.beta)?
                <= budget.epsilon;
        if !next_ok {
            break;
        }
        let victim = support
            .indices
            .iter()
            .copied()
            .max_by(|&a, &b| {
                solution
                    .dual_norm(a)
                    .total_cmp(&solution.dual_norm(b))
                    .then(b.cmp(&a))
            })
            .expect("support is non-empty");
        active.remove(victim);
        discarded += 1;
        let kept: Vec<Vec<f64>> = active.iter().map(|&i| pool[i].clone()).collect();
        problem = build_sp(network, interval, &kept, options)?;
        solution = solve_sp(&problem);
        require_optimal(&solution, kept.len())?;
        support = support_dual(&problem, &solution)?;
    }
    let last = trace.rows.last().expect("at least one iteration");
    trace.certificate = Some(Certificate {
        complexity_h: complexity,
        sample_count_n: last.n_j,
        posterior_epsilon: last.epsilon_j,
    });
    trace.support = support.indices;
    trace.scenarios = active.iter().map(|&i| pool[i].clone()).collect();
    trace.solution = Some(settle(&problem, solution));
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridCase;
    use crate::scenarios::{EnvironmentVector, ScenarioRecord};
    use chrono::{Duration, NaiveDateTime};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bus3_interval() -> Interval {
        Interval {
            demand: vec![120.0],
            wind_forecast: vec![20.0],
        }
    }

    fn store_from_errors(errors: &[f64]) -> ScenarioStore {
        let t0 = NaiveDateTime::parse_from_str("2022-03-01T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap();
        let records = errors
            .iter()
            .enumerate()
            .map(|(k, &e)| ScenarioRecord {
                timestamp: t0 + Duration::minutes(5 * k as i64),
                error: vec![e],
                env: EnvironmentVector {
                    forecast_level: 0.3,
                    ramp_rate: 0.0,
                    temperature: 70.0,
                    humidity: 50.0,
                },
            })
            .collect();
        ScenarioStore::from_records(vec!["west".into()], records).unwrap()
    }

    fn all_time() -> TimeWindow {
        TimeWindow::new(NaiveDateTime::MIN, NaiveDateTime::MAX)
    }

    #[test]
    fn empty_problem_has_no_support() {
        let net = Network::bundled("bus3").unwrap();
        let sp = build_sp(&net, &bus3_interval(), &[], DispatchOptions::default()).unwrap();
        let sol = solve_sp(&sp);
        assert!(support_bruteforce(&sp, &sol).unwrap().is_empty());
        let dual = support_dual(&sp, &sol).unwrap();
        assert!(dual.is_empty());
        assert_eq!(dual.candidates, 0);
    }

    #[test]
    fn dominating_scenario_is_the_only_support() {
        let mut case = GridCase::bundled("bus3").unwrap();
        case.generators[1].ramp_up = 10.0;
        let net = Network::new(case).unwrap();
        // Shortfalls force the expensive unit up; the deepest one binds alone.
        let scen = vec![vec![-2.0], vec![-5.0], vec![-15.0], vec![-1.0]];
        let sp = build_sp(&net, &bus3_interval(), &scen, DispatchOptions::default()).unwrap();
        let sol = solve_sp(&sp);
        let brute = support_bruteforce(&sp, &sol).unwrap();
        assert_eq!(brute.indices, vec![2]);
        assert_eq!(support_dual(&sp, &sol).unwrap().indices, vec![2]);

        let mut doubled = scen.clone();
        doubled.push(vec![-15.0]);
        let sp = build_sp(&net, &bus3_interval(), &doubled, DispatchOptions::default()).unwrap();
        let sol = solve_sp(&sp);
        assert!(support_bruteforce(&sp, &sol).unwrap().is_empty());
    }

    #[test]
    fn dual_search_matches_definition_on_random_bus3() {
        let net = Network::bundled("bus3").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut compared = 0;
        // Errors stay inside the clamp range so no two scenarios coincide.
        for _ in 0..500 {
            let n = rng.gen_range(0..=10);
            let scen: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-19.5..25.0)]).collect();
            let sp = build_sp(&net, &bus3_interval(), &scen, DispatchOptions::default()).unwrap();
            let sol = solve_sp(&sp);
            if !sol.is_optimal() {
                continue;
            }
            let a = support_bruteforce(&sp, &sol).unwrap();
            let b = support_dual(&sp, &sol).unwrap();
            assert_eq!(a.indices, b.indices, "{scen:?}");
            assert!(a.len() <= net.case.decision_dimension());
            compared += 1;
        }
        assert!(compared > 300);
    }

    #[test]
    fn complexity_one_instance_halts_immediately() {
        let mut case = GridCase::bundled("bus3").unwrap();
        case.generators[1].ramp_up = 10.0;
        let net = Network::new(case).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let errors: Vec<f64> = (0..400).map(|_| -rng.gen_range(0.01..0.3)).collect();
        let store = store_from_errors(&errors);
        let mapping = FarmMapping::new(&net, &store).unwrap();
        let mut feed = ScenarioFeed::uniform(&store, all_time(), 1, mapping);
        let budget = RiskBudget::new(0.05, 1e-3).unwrap();
        let trace = incremental_dispatch(
            &net,
            &bus3_interval(),
            &mut feed,
            budget,
            DispatchOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert_eq!(trace.rows[0].n_j, 135);
        assert_eq!(trace.rows[0].h_j, 1);
        let cert = trace.certificate.unwrap();
        assert!(cert.posterior_epsilon <= 0.05);

        // The definition agrees on the terminal program.
        let sp = build_sp(&net, &bus3_interval(), &trace.scenarios, DispatchOptions::default())
            .unwrap();
        let sol = solve_sp(&sp);
        let scen_sorted: Vec<f64> = trace.scenarios.iter().map(|s| s[0]).collect();
        let deepest = scen_sorted
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        let brute = leave_one_out(&sp, &(0..sp.n_scenarios()).collect::<Vec<_>>(), sol.objective)
            .unwrap();
        assert_eq!(brute, vec![deepest]);
    }

    #[test]
    fn apriori_reports_missing_data() {
        let net = Network::bundled("bus3").unwrap();
        let store = store_from_errors(&vec![0.0; 50]);
        let mapping = FarmMapping::new(&net, &store).unwrap();
        let mut feed = ScenarioFeed::uniform(&store, all_time(), 1, mapping);
        let budget = RiskBudget::new(0.05, 1e-3).unwrap();
        let err = apriori_dispatch(
            &net,
            &bus3_interval(),
            &mut feed,
            budget,
            DispatchOptions::default(),
        )
        .unwrap_err();
        match err {
            AlgorithmError::InsufficientData {
                needed,
                available,
                achievable_epsilon,
            } => {
                assert_eq!(needed, sample_size(2, budget).unwrap());
                assert_eq!(available, 50);
                assert!(achievable_epsilon > 0.05);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn zero_support_means_single_baseline_iteration() {
        let net = Network::bundled("bus3").unwrap();
        let store = store_from_errors(&vec![0.0; 300]);
        let mapping = FarmMapping::new(&net, &store).unwrap();
        let mut feed = ScenarioFeed::uniform(&store, all_time(), 3, mapping);
        let budget = RiskBudget::new(0.05, 1e-3).unwrap();
        let trace = sample_discard_baseline(
            &net,
            &bus3_interval(),
            &mut feed,
            budget,
            DispatchOptions::default(),
        )
        .unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert!(!trace.warnings.is_empty());
    }

    #[test]
    fn trace_csv_has_fixed_columns() {
        let mut trace = RiskTuningTrace::empty();
        trace.rows.push(TraceRow {
            j: 1,
            n_j: 135,
            h_j: 3,
            objective: 10.0,
            epsilon_j: 0.07,
        });
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("j,N_j,h_j,objective,epsilon_j\n1,135,3,"));
    }
}
