//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL` line to stderr.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenario_dispatch::algorithms::{
    incremental_dispatch, sample_discard_baseline, support_bruteforce, support_dual, FarmMapping,
    ScenarioFeed,
};
use scenario_dispatch::dispatch::{
    build_sp, solve_sp, DispatchOptions, Interval, Network,
};
use scenario_dispatch::grid::{compute_ptdf, GridCase};
use scenario_dispatch::harness::{
    common_aggregates, oracle_violation, simulate_with, Method, SamplingSpace, SimulationConfig,
    SimulationInputs,
};
use scenario_dispatch::lp::LpStatus;
use scenario_dispatch::risk::{posterior_risk, sample_size, RiskBudget};
use scenario_dispatch::scenarios::{
    fit_correlations, generate, law_store, EnvironmentVector, ScenarioRecord, ScenarioStore, SynthConfig,
    SynthLaw, TimeWindow,
};

fn report(id: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id}: {verdict} | {detail}");
}

fn budget(epsilon: f64) -> RiskBudget {
    RiskBudget::new(epsilon, 1e-3).unwrap()
}

fn bus3_interval() -> Interval {
    Interval {
        demand: vec![120.0],
        wind_forecast: vec![20.0],
    }
}

/// Law draws at a random environment, in MW per farm.
fn law_scenarios(
    network: &Network,
    law: &SynthLaw,
    env: &EnvironmentVector,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let store = law_store(law, env, 1, 0).unwrap();
    let mapping = FarmMapping::new(network, &store).unwrap();
    (0..n).map(|_| mapping.to_mw(&law.sample(env, rng))).collect()
}

fn random_env(rng: &mut ChaCha8Rng) -> EnvironmentVector {
    EnvironmentVector {
        forecast_level: rng.gen_range(0.05..0.55),
        ramp_rate: rng.gen_range(-0.02..0.02),
        temperature: rng.gen_range(60.0..90.0),
        humidity: rng.gen_range(30.0..90.0),
    }
}

#[test]
fn criterion_01_sample_sizes() {
    let started = Instant::now();
    let b = budget(0.05);
    let got: Vec<usize> = [1, 6, 22].iter().map(|&h| sample_size(h, b).unwrap()).collect();
    let elapsed = started.elapsed().as_secs_f64();
    let pass = got == vec![135, 324, 779] && elapsed < 1.0;
    report(1, pass, &format!("N(h=1,6,22) = {got:?}, expected [135, 324, 779]; {elapsed:.3}s"));
    assert!(pass);
}

#[test]
fn criterion_02_posterior_risk() {
    let at_135 = posterior_risk(6, 135, 1e-3).unwrap();
    let hs = [1, 2, 6, 12, 22];
    let epsilons = [0.01, 0.02, 0.05, 0.1, 0.2];
    let betas = [1e-6, 1e-4, 1e-3, 1e-2, 1e-1];
    let mut breaches = Vec::new();
    let mut points = 0;
    for &h in &hs {
        for &eps in &epsilons {
            for &beta in &betas {
                let n = sample_size(h, RiskBudget::new(eps, beta).unwrap()).unwrap();
                let back = posterior_risk(h, n, beta).unwrap();
                points += 1;
                if back > eps {
                    breaches.push((h, eps, beta, back));
                }
            }
        }
    }
    let pass = (at_135 - 0.117).abs() <= 0.005 && breaches.is_empty() && points == 125;
    report(
        2,
        pass,
        &format!("posterior(6, 135) = {at_135:.4} (0.117 +/- 0.005); round trip {points} points, {} above budget", breaches.len()),
    );
    assert!(pass, "{breaches:?}");
}

#[test]
fn criterion_03_support_oracle_equivalence() {
    let started = Instant::now();
    let net = Network::bundled("bus3").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut compared = 0;
    let mut mismatches = 0;
    let mut nontrivial = 0;
    while compared < 200 {
        let n = rng.gen_range(1..=10);
        let scen: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-19.5..25.0)]).collect();
        let sp = build_sp(&net, &bus3_interval(), &scen, DispatchOptions::default()).unwrap();
        let sol = solve_sp(&sp);
        if !sol.is_optimal() {
            continue;
        }
        let brute = support_bruteforce(&sp, &sol).unwrap();
        let dual = support_dual(&sp, &sol).unwrap();
        if brute.indices != dual.indices {
            mismatches += 1;
        }
        if !brute.is_empty() {
            nontrivial += 1;
        }
        compared += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = mismatches == 0 && elapsed < 120.0;
    report(
        3,
        pass,
        &format!("{compared} instances ({nontrivial} with support), {mismatches} mismatches, {elapsed:.1}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_support_bound() {
    let law = SynthLaw::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut solved = 0;
    let mut worst = [0usize; 2];
    let mut breaches = 0;
    let nets = [Network::bundled("bus3").unwrap(), Network::bundled("rts24").unwrap()];
    while solved < 500 {
        let which = solved % 2;
        let net = &nets[which];
        let (interval, scen) = if which == 0 {
            let n = rng.gen_range(1..=40);
            let scen = (0..n).map(|_| vec![rng.gen_range(-19.5..25.0)]).collect();
            (bus3_interval(), scen)
        } else {
            let env = random_env(&mut rng);
            let n = rng.gen_range(10..=120);
            let scen = law_scenarios(net, &law, &env, n, &mut rng);
            (Interval::at_level(&net.case, env.forecast_level, 1.0), scen)
        };
        let sp = build_sp(net, &interval, &scen, DispatchOptions::default()).unwrap();
        let sol = solve_sp(&sp);
        if !sol.is_optimal() {
            continue;
        }
        let support = support_dual(&sp, &sol).unwrap();
        let bound = 2 * net.case.n_gen() - 2;
        if support.len() > bound {
            breaches += 1;
        }
        worst[which] = worst[which].max(support.len());
        solved += 1;
    }
    let pass = breaches == 0 && worst[1] <= 22;
    report(
        4,
        pass,
        &format!("500 solved; largest support bus3 {} (bound 2), rts24 {} (bound 22); {breaches} breaches", worst[0], worst[1]),
    );
    assert!(pass);
}

#[test]
fn criterion_05_incremental_behavior() {
    // Complexity-one construction: only the deepest shortfall can bind.
    let mut case = GridCase::bundled("bus3").unwrap();
    case.generators[1].ramp_up = 10.0;
    let bus3 = Network::new(case).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let env = EnvironmentVector {
        forecast_level: 0.3,
        ramp_rate: 0.0,
        temperature: 75.0,
        humidity: 60.0,
    };
    let t0 = scenario_dispatch::scenarios::parse_timestamp("2020-01-01T00:00:00").unwrap();
    let records = (0..400)
        .map(|k| ScenarioRecord {
            timestamp: t0 + chrono::Duration::minutes(5 * k),
            error: vec![-rng.gen_range(0.02..0.3)],
            env,
        })
        .collect();
    let store = ScenarioStore::from_records(vec!["west".into()], records).unwrap();
    let mapping = FarmMapping::new(&bus3, &store).unwrap();
    let all = TimeWindow::new(chrono::NaiveDateTime::MIN, chrono::NaiveDateTime::MAX);
    let mut feed = ScenarioFeed::uniform(&store, all, 1, mapping);
    let trace =
        incremental_dispatch(&bus3, &bus3_interval(), &mut feed, budget(0.05), DispatchOptions::default())
            .unwrap();
    let first = trace.terminal().unwrap();
    let toy_ok = trace.iterations() == 1 && first.j == 1 && first.n_j == 135 && first.h_j <= 1;

    let net = Network::bundled("rts24").unwrap();
    let n = net.case.decision_dimension();
    let seeds = 40;
    let mut below = 0;
    let mut within = true;
    let mut sizes = Vec::new();
    for seed in 0..seeds {
        let cfg = SynthConfig::default().with_records(30_000);
        let store = generate(&cfg, 5_000 + seed).unwrap();
        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        let rec = &store.records()[pick.gen_range(26_000..30_000)];
        let interval = Interval::at_level(&net.case, rec.env.forecast_level, 1.0);
        let window = TimeWindow::lookback(rec.timestamp, 90);
        let profile = fit_correlations(&store, window).unwrap();
        let mapping = FarmMapping::new(&net, &store).unwrap();
        let mut feed = ScenarioFeed::similar(&store, &profile, &rec.env, window, mapping);
        match incremental_dispatch(&net, &interval, &mut feed, budget(0.05), DispatchOptions::default()) {
            Ok(trace) => {
                within &= trace.iterations() <= n;
                let terminal = trace.terminal().unwrap().n_j;
                sizes.push(terminal);
                if terminal < 779 {
                    below += 1;
                }
            }
            Err(e) => {
                within = false;
                sizes.push(usize::MAX);
                eprintln!("seed {seed}: {e}");
            }
        }
    }
    let share = below as f64 / seeds as f64;
    let pass = toy_ok && within && share >= 0.95;
    report(
        5,
        pass,
        &format!(
            "toy halts at j={} N={} h={}; rts24 terminal N < 779 in {below}/{seeds} ({:.0}%), all within {n} iterations: {within}; sizes {:?}",
            first.j,
            first.n_j,
            first.h_j,
            100.0 * share,
            sizes
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_risk_guarantee() {
    let started = Instant::now();
    let net = Network::bundled("rts24").unwrap();
    let law = SynthLaw::default();
    let epsilon = 0.1;
    let draws = 100_000;
    let trials = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut above = 0;
    let mut failed = 0;
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    for trial in 0..trials {
        let env = random_env(&mut rng);
        let store = law_store(&law, &env, 2_000, 10_000 + trial).unwrap();
        let mapping = FarmMapping::new(&net, &store).unwrap();
        let all = TimeWindow::new(chrono::NaiveDateTime::MIN, chrono::NaiveDateTime::MAX);
        let mut feed = ScenarioFeed::uniform(&store, all, trial, mapping.clone());
        let interval = Interval::at_level(&net.case, env.forecast_level, 1.0);
        let trace = match incremental_dispatch(&net, &interval, &mut feed, budget(epsilon), DispatchOptions::default()) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("trial {trial}: {e}");
                failed += 1;
                continue;
            }
        };
        let solution = trace.solution.as_ref().unwrap();
        let v = oracle_violation(&net, &interval, solution, &law, &env, &mapping, draws, 20_000 + trial);
        worst = worst.max(v);
        total += v;
        if v > epsilon {
            above += 1;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let solved = trials - failed as u64;
    let pass = above + failed <= 3 && elapsed < 1800.0;
    report(
        6,
        pass,
        &format!(
            "{solved}/{trials} trials solved; {above} with exact violation > {epsilon}; mean {:.4}, worst {worst:.4}; {elapsed:.0}s",
            total / solved.max(1) as f64
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_filter_benefit() {
    let net = Network::bundled("rts24").unwrap();
    let seeds = 50u64;
    let mut lower_violation = 0;
    let mut lower_cost = 0;
    let mut lines = Vec::new();
    for seed in 0..seeds {
        let cfg = SynthConfig::default().with_records(34_000).with_skew(2.0);
        let store = generate(&cfg, 7_000 + seed).unwrap();
        // High-wind intervals with a full 90-day history, evenly spread.
        let high: Vec<usize> = (26_000..34_000)
            .filter(|&k| store.records()[k].env.forecast_level > 0.42)
            .collect();
        let count = high.len().min(24);
        let records: Vec<usize> = (0..count).map(|i| high[i * high.len() / count]).collect();
        let inputs = SimulationInputs {
            network: &net,
            store: &store,
            law: Some(&cfg.law),
        };
        let mut config = SimulationConfig {
            case: "rts24".into(),
            scenarios: String::new(),
            intervals: Vec::new(),
            start: None,
            count,
            method: Method::Incremental,
            space: SamplingSpace::Similar,
            epsilon: 0.05,
            beta: 1e-3,
            seed,
            load_scale: 1.0,
            options: DispatchOptions::default(),
            law: None,
            oracle_draws: 4_000,
        };
        let similar = simulate_with(&inputs, &config, &records).unwrap();
        config.space = SamplingSpace::ThreeMonth;
        let uniform = simulate_with(&inputs, &config, &records).unwrap();
        let agg = common_aggregates(&[similar, uniform]);
        let (s, u) = (&agg[0], &agg[1]);
        let (vs, vu) = (
            s.mean_oracle_violation.unwrap_or(f64::NAN),
            u.mean_oracle_violation.unwrap_or(f64::NAN),
        );
        if s.solved > 0 && vs <= vu {
            lower_violation += 1;
        }
        if s.solved > 0 && s.mean_realized_cost < u.mean_realized_cost {
            lower_cost += 1;
        }
        lines.push(format!(
            "seed {seed}: {} intervals, violation {vs:.4} vs {vu:.4}, cost {:.1} vs {:.1}",
            s.solved, s.mean_realized_cost, u.mean_realized_cost
        ));
    }
    for l in &lines {
        eprintln!("{l}");
    }
    let pass = lower_violation * 5 >= seeds * 4 && lower_cost * 5 >= seeds * 4;
    report(
        7,
        pass,
        &format!(
            "similar vs uniform three-month window: violation <= in {lower_violation}/{seeds}, lower cost in {lower_cost}/{seeds} (need 80% each)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_tuning_efficiency() {
    let net = Network::bundled("rts24").unwrap();
    let trials = 100u64;
    let mut better = 0;
    let mut rows = Vec::new();
    for trial in 0..trials {
        let cfg = SynthConfig::default().with_records(30_000);
        let store = generate(&cfg, 8_000 + trial).unwrap();
        let mut pick = ChaCha8Rng::seed_from_u64(trial);
        let rec = &store.records()[pick.gen_range(26_000..30_000)];
        let interval = Interval::at_level(&net.case, rec.env.forecast_level, 1.0);
        let window = TimeWindow::lookback(rec.timestamp, 90);
        let profile = fit_correlations(&store, window).unwrap();
        let mapping = FarmMapping::new(&net, &store).unwrap();
        let feed = ScenarioFeed::similar(&store, &profile, &rec.env, window, mapping);
        let inc = incremental_dispatch(&net, &interval, &mut feed.clone(), budget(0.05), DispatchOptions::default());
        let base = sample_discard_baseline(&net, &interval, &mut feed.clone(), budget(0.05), DispatchOptions::default());
        match (inc, base) {
            (Ok(a), Ok(b)) => {
                let (na, nb) = (a.terminal().unwrap().n_j, b.terminal().unwrap().n_j);
                if a.iterations() <= b.iterations() && na < nb {
                    better += 1;
                }
                rows.push(format!("{}/{} it, N {na}/{nb}", a.iterations(), b.iterations()));
            }
            (a, b) => rows.push(format!(
                "failed: {:?} / {:?}",
                a.err().map(|e| e.to_string()),
                b.err().map(|e| e.to_string())
            )),
        }
    }
    eprintln!("{}", rows.join("; "));
    let pass = better * 10 >= trials * 9;
    report(
        8,
        pass,
        &format!("incremental no more iterations and smaller terminal N in {better}/{trials} paired trials (need 90%)"),
    );
    assert!(pass);
}

/// Flows from `B theta = p` solved by pseudo-inverse, slack angle shifted to zero.
fn oracle_flows(case: &GridCase, injection: &[f64]) -> Vec<f64> {
    let n = case.n_bus();
    let idx = |id: usize| case.bus_index(id).unwrap();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for line in &case.lines {
        let (f, t) = (idx(line.from_bus), idx(line.to_bus));
        let y = 1.0 / line.reactance;
        b[(f, f)] += y;
        b[(t, t)] += y;
        b[(f, t)] -= y;
        b[(t, f)] -= y;
    }
    let p = DVector::from_column_slice(injection);
    let theta = b.svd(true, true).solve(&p, 1e-12).unwrap();
    let slack = theta[idx(case.slack_bus())];
    case.lines
        .iter()
        .map(|l| ((theta[idx(l.from_bus)] - slack) - (theta[idx(l.to_bus)] - slack)) / l.reactance)
        .collect()
}

#[test]
fn criterion_09_ptdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst: f64 = 0.0;
    for name in ["bus3", "rts24"] {
        let case = GridCase::bundled(name).unwrap();
        let ptdf = compute_ptdf(&case).unwrap();
        for _ in 0..10 {
            let mut p: Vec<f64> = (0..case.n_bus()).map(|_| rng.gen_range(-200.0..200.0)).collect();
            let mean = p.iter().sum::<f64>() / p.len() as f64;
            p.iter_mut().for_each(|v| *v -= mean);
            let got = ptdf.flows(&p);
            let want = oracle_flows(&case, &p);
            for (a, b) in got.iter().zip(&want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    let pass = worst <= 1e-9;
    report(9, pass, &format!("max |flow error| {worst:.2e} MW over 20 balanced injections"));
    assert!(pass);
}

#[test]
fn criterion_10_cost_monotone() {
    let law = SynthLaw::default();
    let nets = [Network::bundled("bus3").unwrap(), Network::bundled("rts24").unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut pairs = 0;
    let mut decreases = 0;
    let mut worst_drop: f64 = 0.0;
    while pairs < 100 {
        let which = pairs % 2;
        let net = &nets[which];
        let (interval, all) = if which == 0 {
            let n = rng.gen_range(2..=30);
            let scen: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-19.5..25.0)]).collect();
            (bus3_interval(), scen)
        } else {
            let env = random_env(&mut rng);
            let n = rng.gen_range(10..=150);
            (
                Interval::at_level(&net.case, env.forecast_level, 1.0),
                law_scenarios(net, &law, &env, n, &mut rng),
            )
        };
        let k = rng.gen_range(1..all.len());
        let small = build_sp(net, &interval, &all[..k], DispatchOptions::default()).unwrap();
        let large = build_sp(net, &interval, &all, DispatchOptions::default()).unwrap();
        let a = solve_sp(&small);
        let b = solve_sp(&large);
        if !a.is_optimal() {
            continue;
        }
        pairs += 1;
        if b.status == LpStatus::Infeasible {
            continue;
        }
        let tol = 1e-9 * (1.0 + a.objective.abs());
        let drop = a.objective - b.objective;
        worst_drop = worst_drop.max(drop);
        if !b.is_optimal() || drop > tol {
            decreases += 1;
        }
    }
    let pass = decreases == 0;
    report(
        10,
        pass,
        &format!("{pairs} nested pairs, {decreases} decreases; largest drop {worst_drop:.2e}"),
    );
    assert!(pass);
}
