//! Command-line front end.
//!
//! Exit codes: 0 when every requested check passes, 1 when a check or
//! convergence threshold fails, 2 for usage, config and runtime errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use leadfollow::config::ScenarioConfig;
use leadfollow::linalg::to_rows;
use leadfollow::observers::ObserverMode;
use leadfollow::props::{run_suite, SuiteReport};
use leadfollow::scenarios::{builtin, BUILTINS};
use leadfollow::simkit::{analyze, run, validate_scenario, AssumptionCheck, CheckWitness, ConvergenceReport, Scenario, SeriesStatus};
use leadfollow::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "leadfollow", version, about = "Leader-follower observer and output-regulation simulator")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the connectivity, leader, stabilizability and solvability assumptions.
    Validate {
        #[command(flatten)]
        source: Source,
        /// Regulator-equation solver tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Simulate the closed loop and write trajectory, report and manifest.
    Run(RunArgs),
    /// Run a randomized property suite.
    Props {
        /// consensus, lemma2, lemma3, lemma4, kron, equivalence
        /// (also theorem1, theorem2, theorem2-unstable)
        suite: String,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the suite report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// List the bundled scenarios.
    ListBuiltins,
}

#[derive(Debug, Args)]
struct Source {
    /// Scenario config (TOML).
    #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
    config: Option<PathBuf>,
    /// Use a bundled scenario instead of a config file.
    #[arg(long)]
    builtin: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Redraw the randomized initial conditions from this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run even if validation fails.
    #[arg(long)]
    force: bool,
    /// Regulator-equation solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Final-value threshold for the convergence verdict.
    #[arg(long)]
    final_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Distributed,
    Adaptive,
}

impl From<ModeArg> for ObserverMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Distributed => ObserverMode::Distributed,
            ModeArg::Adaptive => ObserverMode::Adaptive,
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Validate { source, tol } => cmd_validate(&source, tol),
        Command::Run(args) => cmd_run(&args),
        Command::Props {
            suite,
            trials,
            seed,
            json,
        } => cmd_props(&suite, trials, seed, json.as_deref()),
        Command::ListBuiltins => {
            for (name, about) in BUILTINS {
                println!("{name:<16} {about}");
            }
            Ok(true)
        }
    }
}

fn load(source: &Source) -> Result<ScenarioConfig> {
    match (&source.config, &source.builtin) {
        (_, Some(name)) => builtin(name).map(|s| ScenarioConfig::from_scenario(&s)).ok_or_else(|| {
            let names: Vec<_> = BUILTINS.iter().map(|b| b.0).collect();
            Error::Scenario(format!("unknown builtin `{name}`; available: {}", names.join(", ")))
        }),
        (Some(path), None) => ScenarioConfig::load(path),
        (None, None) => Err(Error::Config("no config given".into())),
    }
}

fn print_checks(checks: &[AssumptionCheck]) {
    for c in checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("Assumption {} ({}): {verdict}", c.assumption, c.name);
        for d in &c.details {
            println!("    {d}");
        }
        if let Some(w) = &c.witness {
            let text = match w {
                CheckWitness::Disconnected(w) => format!("node {} unreachable in the window starting at t = {}", w.node, w.t),
                CheckWitness::SpectralRadius { value } => format!("rho(S) = {value}"),
                CheckWitness::Follower { index, reason } => format!("follower {index}: {reason}"),
            };
            println!("    witness: {text}");
        }
    }
}

fn cmd_validate(source: &Source, tol: Option<f64>) -> Result<bool> {
    let mut scenario = load(source)?.to_scenario()?;
    if let Some(tol) = tol {
        scenario.solver_tol = tol;
    }
    let checks = validate_scenario(&scenario);
    print_checks(&checks);
    let passed = checks.iter().filter(|c| c.passed).count();
    println!("{passed}/{} assumptions hold for `{}`", checks.len(), scenario.name);
    Ok(passed == checks.len())
}

#[derive(Debug, Serialize)]
struct ControllerSummary {
    follower: usize,
    k_x: Vec<Vec<f64>>,
    k_v: Vec<Vec<f64>>,
    closed_loop_radius: f64,
    regulator_x: Vec<Vec<f64>>,
    regulator_u: Vec<Vec<f64>>,
    regulator_residual: f64,
}

#[derive(Debug, Serialize)]
struct RunReport<'a> {
    scenario: &'a str,
    mode: ObserverMode,
    horizon: usize,
    seed: Option<u64>,
    forced: bool,
    assumptions: &'a [AssumptionCheck],
    convergence: &'a ConvergenceReport,
    controllers: Vec<ControllerSummary>,
}

#[derive(Debug, Serialize)]
struct AssumptionSummary {
    assumption: u8,
    name: String,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    config_hash: String,
    toolkit_version: &'static str,
    started_at: String,
    finished_at: String,
    artifacts: Vec<String>,
    assumptions: Vec<AssumptionSummary>,
}

fn configure(args: &RunArgs) -> Result<(ScenarioConfig, Scenario)> {
    let config = load(&args.source)?;
    let mut scenario = config.to_scenario()?;
    if let Some(h) = args.horizon {
        scenario.horizon = h;
    }
    if let Some(m) = args.mode {
        scenario.observer_mode = m.into();
    }
    if let Some(tol) = args.tol {
        scenario.solver_tol = tol;
    }
    if let Some(tol) = args.final_tol {
        scenario.thresholds.final_value = tol;
    }
    if let Some(seed) = args.seed {
        scenario = scenario.with_seed(seed);
    }
    // hash what is actually simulated, overrides included
    Ok((ScenarioConfig::from_scenario(&scenario), scenario))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let (config, scenario) = configure(args)?;
    let checks = validate_scenario(&scenario);
    if !checks.iter().all(|c| c.passed) {
        print_checks(&checks);
        if !args.force {
            return Err(Error::Scenario(
                "validation failed; pass --force to simulate anyway".into(),
            ));
        }
        eprintln!("warning: validation failed, simulating anyway (--force)");
    }

    let output = run(&scenario)?;
    let convergence = analyze(&output.log, &scenario.thresholds);

    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("trajectory.csv");
    let report_path = args.out.join("report.json");
    let manifest_path = args.out.join("manifest.json");
    output.log.write_csv(fs::File::create(&csv_path)?)?;

    let controllers = output
        .controllers
        .iter()
        .enumerate()
        .map(|(i, g)| ControllerSummary {
            follower: i + 1,
            k_x: to_rows(&g.k_x),
            k_v: to_rows(&g.k_v),
            closed_loop_radius: g.closed_loop_radius,
            regulator_x: to_rows(&g.regulator.x),
            regulator_u: to_rows(&g.regulator.u),
            regulator_residual: g.regulator.residual,
        })
        .collect();
    let report = RunReport {
        scenario: &scenario.name,
        mode: scenario.observer_mode,
        horizon: scenario.horizon,
        seed: args.seed,
        forced: args.force,
        assumptions: &checks,
        convergence: &convergence,
        controllers,
    };
    write_json(&report_path, &report)?;

    let manifest = RunManifest {
        config_hash: config.hash(),
        toolkit_version: env!("CARGO_PKG_VERSION"),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        artifacts: [&csv_path, &report_path, &manifest_path]
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        assumptions: checks
            .iter()
            .map(|c| AssumptionSummary {
                assumption: c.assumption,
                name: c.name.clone(),
                passed: c.passed,
            })
            .collect(),
    };
    write_json(&manifest_path, &manifest)?;

    println!(
        "{}: {:?} observer, {} steps, {} records",
        scenario.name,
        scenario.observer_mode,
        scenario.horizon,
        output.log.records.len()
    );
    for s in &convergence.series {
        let rate = if s.fit.is_floor() {
            "floor".to_string()
        } else {
            format!("{:.6}", s.fit.rate())
        };
        println!(
            "  {:<10} final {:<12.3e} rate {rate:<9} {}",
            s.name,
            s.final_value,
            status_label(s.status)
        );
    }
    let verdict = if convergence.series.iter().all(|s| s.status == SeriesStatus::NoClaim) {
        "no convergence claims"
    } else if convergence.all_converged {
        "converged"
    } else {
        "NOT converged"
    };
    println!("{verdict} (wrote {})", args.out.display());
    Ok(convergence.all_converged)
}

fn status_label(s: SeriesStatus) -> &'static str {
    match s {
        SeriesStatus::Converged => "converged",
        SeriesStatus::ConvergedFloor => "converged (at floor)",
        SeriesStatus::NotConverged => "NOT converged",
        SeriesStatus::NoClaim => "no claim (too short)",
    }
}

fn cmd_props(suite: &str, trials: usize, seed: u64, json: Option<&Path>) -> Result<bool> {
    let report: SuiteReport = run_suite(suite, trials, seed)?;
    for t in report.trials.iter().chain(&report.extra) {
        let label = if t.trial == usize::MAX {
            "check".to_string()
        } else {
            format!("trial {:>3}", t.trial)
        };
        let verdict = if t.passed { "PASS" } else { "FAIL" };
        println!("{label} seed {:<6} {verdict}  {}", t.seed, t.detail);
    }
    if let Some(w) = &report.warning {
        println!("warning: {w}");
    }
    let worst = report.worst_metric().map_or("n/a".to_string(), |m| format!("{m:.3e}"));
    println!(
        "{}: {} — {} trials, {} failures, worst metric {worst}",
        report.suite,
        if report.passed { "PASS" } else { "FAIL" },
        report.trials.len(),
        report.failures()
    );
    if let Some(path) = json {
        write_json(path, &report)?;
    }
    Ok(report.passed)
}
