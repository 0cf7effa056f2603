use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use incluse::pipeline::{run, Command};
use incluse::scenario::{parse_scenario, CheckName};

/// Robust-safety barrier certificates for planar differential inclusions.
#[derive(Parser, Debug)]
#[command(name = "incluse", version)]
struct Cli {
    /// Stage(s) to run.
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the grid resolution with N x N cells.
    #[arg(long)]
    cells: Option<usize>,
    /// Run only these checks (repeatable).
    #[arg(long = "check", num_args = 1..)]
    checks: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 2 } else { 1 })
        }
    }
}

fn execute(cli: &Cli) -> incluse::Result<u8> {
    let mut scenario = parse_scenario(&cli.scenario)?;
    if let Some(n) = cli.cells {
        scenario = scenario.with_cells(n)?;
    }
    if let Some(seed) = cli.seed {
        scenario = scenario.with_seed(seed);
    }
    if !cli.checks.is_empty() {
        scenario.checks.enabled = cli
            .checks
            .iter()
            .map(|s| s.parse::<CheckName>())
            .collect::<incluse::Result<_>>()?;
        scenario.validate()?;
    }
    let manifest = run(cli.command, &scenario, &cli.out)?;
    for (stage, secs) in &manifest.timings {
        eprintln!("{stage:>8}: {secs:.2}s");
    }
    if let Some(report) = &manifest.report {
        for v in &report.verdicts {
            println!("{:<18} {:<10} {}", v.name, format!("{:?}", v.status).to_lowercase(), v.detail);
        }
        if report.edge_caveat {
            println!("note: the construction touches the window border; results hold within the window");
        }
    }
    Ok(manifest.exit_code() as u8)
}
