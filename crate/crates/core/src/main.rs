use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use scenario_dispatch::algorithms::{
    apriori_dispatch, incremental_dispatch, sample_discard_baseline, FarmMapping, ScenarioFeed,
};
use scenario_dispatch::dispatch::{DispatchOptions, DispatchSolution};
use scenario_dispatch::harness::{
    case_regions, check_report, compare_spaces, comparison_table, emit_report, interval_at, load_network,
    simulate_rolling, HarnessError, Method, ReportFormat, RunReport, SamplingSpace,
    SimulationConfig,
};
use scenario_dispatch::risk::{posterior_risk, sample_size, RiskBudget};
use scenario_dispatch::scenarios::{
    fit_correlations, format_profile_table, ingest_csv, law_sidecar_path, parse_timestamp,
    synth_generate, SynthConfig, TimeWindow,
};

#[derive(Parser)]
#[command(name = "scenario-dispatch", version, about = "Chance-constrained DC dispatch by the scenario approach")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample size for a complexity bound, or the posterior risk of a sample size.
    Certify(CertifyArgs),
    /// Scenario history tools.
    #[command(subcommand)]
    Scenarios(ScenarioCommand),
    /// Dispatch one interval and print the solution as JSON.
    Dispatch(DispatchArgs),
    /// Rolling-horizon simulation from a JSON config.
    Simulate(SimulateArgs),
    /// Runs the same config once per sampling space and prints a summary table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    h: usize,
    #[arg(long, conflicts_with = "n")]
    epsilon: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    beta: f64,
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Writes a synthetic history CSV plus its law sidecar.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30_000)]
        records: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        skew: Option<f64>,
        /// JSON file overriding the generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Prints fitted environment correlations for a window.
    Stats {
        #[arg(long)]
        scenarios: PathBuf,
        /// Regions to read, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "west,south")]
        regions: Vec<String>,
        /// Window end; defaults to just after the last record.
        #[arg(long)]
        end: Option<String>,
        #[arg(long, default_value_t = 90)]
        days: i64,
    },
}

#[derive(Args)]
struct DispatchArgs {
    #[arg(long)]
    case: String,
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    beta: f64,
    #[arg(long, default_value = "incremental")]
    method: Method,
    #[arg(long, default_value = "similar")]
    space: SamplingSpace,
    /// Interval timestamp; defaults to the last record.
    #[arg(long)]
    at: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    load_scale: f64,
    /// Writes the tuning trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "half-year,three-month,similar")]
    spaces: Vec<SamplingSpace>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Certify(a) => certify(a),
        Command::Scenarios(c) => scenarios(c),
        Command::Dispatch(a) => dispatch(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
    }
}

fn certify(a: CertifyArgs) -> Result<ExitCode> {
    match (a.epsilon, a.n) {
        (Some(epsilon), None) => {
            let n = sample_size(a.h, RiskBudget::new(epsilon, a.beta)?)?;
            println!("{n}");
        }
        (None, Some(n)) => println!("{}", posterior_risk(a.h, n, a.beta)?),
        _ => bail!("give exactly one of --epsilon or --n"),
    }
    Ok(ExitCode::SUCCESS)
}

fn scenarios(c: ScenarioCommand) -> Result<ExitCode> {
    match c {
        ScenarioCommand::Synth {
            out,
            records,
            seed,
            skew,
            config,
        } => {
            let mut cfg = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("reading {}", p.display()))?,
                None => SynthConfig::default(),
            };
            cfg = cfg.with_records(records);
            if let Some(k) = skew {
                cfg = cfg.with_skew(k);
            }
            let store = synth_generate(&cfg, seed, &out)?;
            println!(
                "wrote {} records to {} (law in {})",
                store.len(),
                out.display(),
                law_sidecar_path(&out).display()
            );
        }
        ScenarioCommand::Stats {
            scenarios,
            regions,
            end,
            days,
        } => {
            let store = ingest_csv(&scenarios, &regions)?;
            let end = match end {
                Some(t) => parse_timestamp(&t).with_context(|| format!("bad timestamp {t}"))?,
                None => {
                    store.records().last().context("empty history")?.timestamp
                        + chrono::Duration::seconds(1)
                }
            };
            let profile = fit_correlations(&store, TimeWindow::lookback(end, days))?;
            print!("{}", format_profile_table(&profile));
            for w in &profile.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(a: DispatchArgs) -> Result<ExitCode> {
    let (method, space) = (a.method, a.space);
    let network = load_network(&a.case)?;
    let store = ingest_csv(&a.scenarios, &case_regions(&network.case))?;
    let target = match &a.at {
        Some(t) => {
            let t = parse_timestamp(t).with_context(|| format!("bad timestamp {t}"))?;
            store
                .records()
                .iter()
                .find(|r| r.timestamp == t)
                .ok_or_else(|| HarnessError::UnknownInterval(t.to_string()))?
        }
        None => store.records().last().context("empty history")?,
    };
    let interval = interval_at(&network.case, &target.env, a.load_scale);
    let window = TimeWindow::lookback(target.timestamp, space.lookback_days());
    let mapping = FarmMapping::new(&network, &store)?;
    let mut feed = match space {
        SamplingSpace::Similar => {
            let profile = fit_correlations(&store, window)?;
            ScenarioFeed::similar(&store, &profile, &target.env, window, mapping)
        }
        _ => ScenarioFeed::uniform(&store, window, a.seed, mapping),
    };
    let budget = RiskBudget::new(a.epsilon, a.beta)?;
    let options = DispatchOptions::default();
    let (solution, certificate, trace) = match method {
        Method::Apriori => {
            let (s, c) = apriori_dispatch(&network, &interval, &mut feed, budget, options)?;
            (s, c, None)
        }
        Method::Incremental => {
            let t = incremental_dispatch(&network, &interval, &mut feed, budget, options)?;
            (t.solution.clone().context("no solution")?, t.certificate.context("no certificate")?, Some(t))
        }
        Method::Baseline => {
            let t = sample_discard_baseline(&network, &interval, &mut feed, budget, options)?;
            (t.solution.clone().context("no solution")?, t.certificate.context("no certificate")?, Some(t))
        }
    };
    if let (Some(path), Some(t)) = (&a.trace, &trace) {
        t.save_csv(path)?;
    }
    let dump = serde_json::json!({
        "timestamp": target.timestamp.to_string(),
        "status": solution.status,
        "objective": solution.objective,
        "g": solution.generation,
        "eta": solution.participation,
        "dual_norms": dual_norms(&solution),
        "certificate": certificate,
    });
    println!("{}", serde_json::to_string_pretty(&dump)?);
    Ok(ExitCode::SUCCESS)
}

fn dual_norms(solution: &DispatchSolution) -> Vec<f64> {
    (0..solution.scenario_duals.len())
        .map(|i| solution.dual_norm(i))
        .collect()
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<SimulationConfig> {
    let mut config = SimulationConfig::load(path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if config.law.is_none() {
        let sidecar = law_sidecar_path(Path::new(&config.scenarios));
        if sidecar.exists() {
            config.law = Some(sidecar.to_string_lossy().into_owned());
        }
    }
    Ok(config)
}

fn write_all(report: &RunReport, dir: &Path, stem: &str) -> Result<()> {
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Long] {
        let path = emit_report(report, format, dir, stem)?;
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn breach(report: &RunReport) -> bool {
    match check_report(report) {
        Some(msg) => {
            eprintln!("invariant breach: {msg}");
            true
        }
        None => false,
    }
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let config = load_config(&a.config, a.seed)?;
    let report = match simulate_rolling(&config) {
        Ok(r) => r,
        Err(e @ HarnessError::Invariant(_)) => {
            eprintln!("invariant breach: {e}");
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(dir) = &a.out {
        write_all(&report, dir, "report")?;
    }
    let agg = &report.aggregates;
    println!(
        "{} intervals, {} solved, violation rate {:.4}, mean realized cost {:.2}, mean N {:.1}",
        agg.intervals, agg.solved, agg.violation_rate, agg.mean_realized_cost, agg.mean_n
    );
    if let Some(v) = agg.mean_oracle_violation {
        println!("mean exact violation {v:.4}");
    }
    Ok(if breach(&report) { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn compare(a: CompareArgs) -> Result<ExitCode> {
    let config = load_config(&a.config, a.seed)?;
    let reports = match compare_spaces(&config, &a.spaces) {
        Ok(r) => r,
        Err(e @ HarnessError::Invariant(_)) => {
            eprintln!("invariant breach: {e}");
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(dir) = &a.out {
        for r in &reports {
            write_all(r, dir, r.space.label())?;
        }
    }
    print!("{}", comparison_table(&reports));
    let mut failed = false;
    for r in &reports {
        failed |= breach(r);
    }
    Ok(if failed { ExitCode::from(2) } else { ExitCode::SUCCESS })
}
