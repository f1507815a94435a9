use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lvse_core::error::Error;
use lvse_core::scenario::{compare_variants, run_scenario, Dump, QualityReport};
use lvse_core::{fixtures, grid, power_flow, ScenarioConfig};

#[derive(Parser)]
#[command(name = "lvse", version, about = "LV grid metering rollout and state estimation quality study")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every variant of a scenario config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// truth, measurements, estimates or samples; repeatable.
        #[arg(long, value_delimiter = ',')]
        dump: Vec<String>,
    },
    /// Tabulate report.json files of one grid and timestep range.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        /// Also write comparison.csv and comparison.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a grid directory and check it solves at its first timestep.
    Validate {
        #[arg(long)]
        grid: PathBuf,
    },
    /// Write a bundled grid as CSV.
    Fixture {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

const CONFIG_ERROR: u8 = 1;
const PARTIAL_FAILURE: u8 = 2;

/// Input problems map to 1, everything that fails while computing to 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::PowerFlowNotConverged { .. }
        | Error::PowerFlowDiverged { .. }
        | Error::SingularJacobian(_)
        | Error::AtTimestep { .. }
        | Error::Unobservable { .. }
        | Error::NumericallyUnobservable
        | Error::EstimationNotConverged { .. }
        | Error::EmptySamples => PARTIAL_FAILURE,
        _ => CONFIG_ERROR,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, workers, dump } => run(config, out, workers, dump),
        Command::Compare { reports, out } => compare(reports, out),
        Command::Validate { grid } => validate(grid),
        Command::Fixture { name, out, start, steps } => {
            let start = start.unwrap_or(if name == "synth-rural" { fixtures::SYNTH_RURAL_START } else { 0 });
            let steps = steps.unwrap_or(if name == "synth-rural" {
                fixtures::SYNTH_RURAL_STEPS
            } else {
                fixtures::STEPS_PER_DAY
            });
            match fixtures::bundled(&name, start, steps).and_then(|g| grid::write_grid(&g, &out)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
    }
}

fn run(config: PathBuf, out: Option<PathBuf>, workers: Option<usize>, dump: Vec<String>) -> ExitCode {
    let mut cfg = match ScenarioConfig::from_file(&config) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(o) = out {
        cfg.out = o;
    }
    if let Some(w) = workers {
        cfg.workers = w.max(1);
    }
    let dumps: BTreeSet<Dump> = match dump.iter().map(|d| d.parse()).collect() {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let artifacts = match run_scenario(cfg, &dumps) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    for v in &artifacts.variants {
        match &v.error {
            None => println!("variant {}: ok -> {}", v.id, v.dir.join("report.json").display()),
            Some(e) => println!("variant {}: FAILED: {e}", v.id),
        }
    }
    for r in &artifacts.reports {
        let passed: Vec<&str> = r.verdicts.iter().filter(|v| v.pass).map(|v| v.use_case.as_str()).collect();
        println!(
            "  {:>4} {:<28} q99(V) {:.5}  q95(I) {:.5}  pass: {}",
            r.variant.id,
            r.variant.name,
            r.voltage.value,
            r.loading.value,
            if passed.is_empty() { "-".to_string() } else { passed.join(",") }
        );
    }
    if artifacts.failed() > 0 {
        ExitCode::from(PARTIAL_FAILURE)
    } else {
        ExitCode::SUCCESS
    }
}

fn compare(paths: Vec<PathBuf>, out: Option<PathBuf>) -> ExitCode {
    let reports: Result<Vec<_>, _> = paths.iter().map(QualityReport::from_json_file).collect();
    let cmp = match reports.and_then(|r| compare_variants(&r)) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    print!("{}", cmp.to_csv());
    if let Some(dir) = out {
        let written = std::fs::create_dir_all(&dir)
            .and_then(|_| std::fs::write(dir.join("comparison.csv"), cmp.to_csv()))
            .map_err(|e| Error::Config(format!("{}: {e}", dir.display())))
            .and_then(|_| cmp.to_json())
            .and_then(|json| {
                std::fs::write(dir.join("comparison.json"), json).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))
            });
        if let Err(e) = written {
            return fail(e);
        }
    }
    ExitCode::SUCCESS
}

fn validate(dir: PathBuf) -> ExitCode {
    let g = match grid::load_grid(&dir) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    let net = match power_flow::Network::new(&g) {
        Ok(n) => n,
        Err(e) => return fail(e),
    };
    println!(
        "grid {}: {} buses, {} lines, {} cabinets, {} prosumers, {} feeders, {} profile steps",
        g.name,
        g.buses.len(),
        g.lines.len(),
        g.cabinets.len(),
        g.prosumers.len(),
        g.feeders().len(),
        g.steps()
    );
    if g.steps() > 0 {
        match power_flow::solve_timestep(&g, &net, &g.profiles, 0, &Default::default()) {
            Ok(sol) => println!("power flow at t=0 converged in {} iterations", sol.iterations),
            Err(e) => return fail(e),
        }
    }
    ExitCode::SUCCESS
}
