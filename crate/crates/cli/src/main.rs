//! `kconv`: build convoluted families and run residual checks from scenario files.

mod runner;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use kconv::ResidualReport;
use serde_json::{json, Value};

use runner::Runner;
use scenario::{Category, ConfigError, Scenario};

#[derive(Parser)]
#[command(name = "kconv", version, about = "Local k-convoluted semigroups on uniform grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Directory for CSV traces and summary.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the scenario grid step.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// Override every residual tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Print the summary as JSON instead of one line per check.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check convolution identities against closed forms and quadrature oracles.
    Identities,
    /// Build the base family and write it as CSV.
    Build,
    /// Extend the base family and report seam gaps.
    Extend,
    /// Residual checks of the family: IVP, composition, generator, splitting.
    Verify,
    /// Checks of the induced homomorphism on test functions.
    Homo,
    /// Kernel checks: Laplace transforms, Weyl round trips, Gevrey bounds.
    Kernel,
    /// Every check in the scenario.
    Run,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Identities => "identities",
            Command::Build => "build",
            Command::Extend => "extend",
            Command::Verify => "verify",
            Command::Homo => "homo",
            Command::Kernel => "kernel",
            Command::Run => "run",
        }
    }

    fn default_scenario(self) -> &'static str {
        match self {
            Command::Identities => "identities",
            Command::Homo => "decay-homomorphism",
            Command::Kernel => "kernels",
            Command::Build | Command::Extend | Command::Verify | Command::Run => {
                "nilpotent-extension"
            }
        }
    }

    fn selects(self, c: Category) -> bool {
        match self {
            Command::Identities => c == Category::Identities,
            Command::Verify => c == Category::Verify,
            Command::Homo => c == Category::Homo,
            Command::Kernel => c == Category::Kernel,
            Command::Run => true,
            Command::Build | Command::Extend => false,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn report_json(r: &ResidualReport) -> Value {
    json!({
        "name": r.identity_name,
        "params": r.params,
        "max_abs_residual": r.max_abs_residual,
        "tolerance": r.tolerance_used,
        "passed": r.passed,
        "grid": { "dt": r.grid.dt, "n": r.grid.n },
        "extras": r.extras,
    })
}

fn report_line(r: &ResidualReport) -> String {
    let params = r
        .params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "{} {:<28} residual {:>10.3e}  tol {:>9.2e}  {}",
        if r.passed { "PASS" } else { "FAIL" },
        r.identity_name,
        r.max_abs_residual,
        r.tolerance_used,
        params
    )
}

fn write_file(dir: &Path, name: &str, content: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    let start = Instant::now();
    let g = &cli.global;
    let command = cli.command;
    let spec = g.config.as_deref().unwrap_or(command.default_scenario());
    let scenario = Scenario::load(spec)?;
    if let Some(dt) = g.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ConfigError(format!("--dt: must be positive, got {dt}")).into());
        }
    }
    let runner = Runner::new(&scenario, g.dt, g.tol)?;
    let out = g.out.clone().or_else(|| scenario.output.dir.as_ref().map(PathBuf::from));
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let mut reports = Vec::new();
    let mut files: Vec<(String, String)> = Vec::new();
    let mut family = Value::Null;
    match command {
        Command::Build => {
            let fam = runner.base()?;
            files.push(("family.csv".into(), fam.to_csv()));
            family = serde_json::to_value(fam.summary())?;
        }
        Command::Extend => {
            let lad = runner.ladder()?;
            let mut levels = Vec::new();
            for n in 1..=lad.depth() {
                let fam = lad.level(n)?;
                files.push((format!("level_{n}.csv"), fam.to_csv()));
                levels.push(serde_json::to_value(fam.summary())?);
            }
            family = json!({
                "kappa": lad.kappa(),
                "levels": levels,
                "seam_gaps": lad.seam_gaps(),
            });
            let outcome = runner.run(0, &scenario::CheckSpec::Seams { tolerance: None })?;
            if !g.json {
                println!("{}", report_line(&outcome.report));
            }
            reports.push(outcome.report);
        }
        _ => {}
    }
    for (i, check) in scenario.checks.iter().enumerate() {
        if !command.selects(check.category()) {
            continue;
        }
        let outcome = runner
            .run(i, check)
            .with_context(|| format!("checks[{i}]"))?;
        if !g.json {
            println!("{}", report_line(&outcome.report));
        }
        files.extend(outcome.artifacts);
        reports.push(outcome.report);
    }

    let passed = reports.iter().all(|r| r.passed);
    let mut summary = json!({
        "scenario": scenario.name,
        "command": command.name(),
        "grid": { "dt": runner.grid().dt(), "n": runner.grid().n_points() },
        "checks": reports.iter().map(report_json).collect::<Vec<_>>(),
        "passed": passed,
        "wall_ms": start.elapsed().as_secs_f64() * 1e3,
    });
    if !family.is_null() {
        summary["family"] = family;
    }
    let text = serde_json::to_string_pretty(&summary)?;
    if g.json {
        println!("{text}");
    } else {
        let failed = reports.iter().filter(|r| !r.passed).count();
        println!(
            "{}: {} checks, {} failed",
            scenario.name,
            reports.len(),
            failed
        );
    }
    if let Some(dir) = &out {
        for (name, content) in &files {
            write_file(dir, name, content)?;
        }
        write_file(dir, "summary.json", &text)?;
    }
    Ok(passed)
}
