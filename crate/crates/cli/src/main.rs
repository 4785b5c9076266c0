use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use railprice_cli::{emit_report, parse_scenario, run_scenario, verify_saved, Analysis, Format, Report, Scenario};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Freight equilibrium, capacity pricing and market-power analyses.
#[derive(Parser)]
#[command(name = "railprice", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Competitive equilibrium at given tariffs (plus an optional uniform markup).
    Solve(Common),
    /// Equilibrium with link and station capacities and their surcharges.
    Capacitated(Common),
    /// Monopoly, Cournot and Stackelberg closed forms with markup sweeps.
    MarketPower(Common),
    /// Minimum-flow floors with subsidies, or commodity quotas with tariffs.
    Subsidy(Common),
    /// Capacity investment sensitivities and revenue decomposition.
    Invest(Common),
    /// Smoothed congestion costs, multiplier recovery and logit dynamics.
    Potential(Common),
    /// Tariff search for discrete wagon segments.
    Edgeworth(Common),
    /// Re-checks a saved solve or capacitated report against its scenario.
    Verify {
        #[command(flatten)]
        common: Common,
        /// report.json written by an earlier run.
        #[arg(long)]
        solution: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "json,csv")]
    format: Vec<Format>,
    /// Overrides the scenario's solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Input(anyhow::Error),
    Certificate,
}

fn load(common: &Common) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(&common.scenario).with_context(|| format!("reading {}", common.scenario.display()))?;
    let mut s = parse_scenario(&text).map_err(|e| anyhow::anyhow!("{}:\n{e}", common.scenario.display()))?;
    if let Some(t) = common.tol {
        anyhow::ensure!(t > 0.0 && t.is_finite(), "--tol must be positive, got {t}");
        s.settings.tolerance = t;
    }
    if let Some(seed) = common.seed {
        s.settings.seed = seed;
    }
    Ok(s)
}

fn finish(report: &Report, out: &Path, formats: &[Format]) -> Result<(), Failure> {
    let written = emit_report(report, out, formats).with_context(|| format!("writing {}", out.display())).map_err(Failure::Input)?;
    for c in &report.checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        eprintln!("{mark} {} = {:.3e} (tol {:.1e})", c.name, c.value, c.tolerance);
    }
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    eprintln!("{}: {:?}", report.scenario, report.status);
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Certificate)
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let (common, expected, solution) = match &cli.command {
        Command::Solve(c) => (c, Some(Analysis::Solve), None),
        Command::Capacitated(c) => (c, Some(Analysis::Capacitated), None),
        Command::MarketPower(c) => (c, Some(Analysis::MarketPower), None),
        Command::Subsidy(c) => (c, Some(Analysis::Subsidy), None),
        Command::Invest(c) => (c, Some(Analysis::Invest), None),
        Command::Potential(c) => (c, Some(Analysis::Potential), None),
        Command::Edgeworth(c) => (c, Some(Analysis::Edgeworth), None),
        Command::Verify { common, solution } => (common, None, Some(solution)),
    };
    let scenario = load(common).map_err(Failure::Input)?;
    if let Some(a) = expected {
        if a != scenario.analysis {
            return Err(Failure::Input(anyhow::anyhow!(
                "scenario {} declares analysis \"{}\" but the {} command was used",
                common.scenario.display(),
                scenario.analysis.name(),
                a.name()
            )));
        }
    }
    let report = match solution {
        None => run_scenario(&scenario),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Input)?;
            let saved: serde_json::Value =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display())).map_err(Failure::Input)?;
            verify_saved(&scenario, &saved)
        }
    };
    let report = report.map_err(|e| {
        let mut msg = e.to_string();
        for (mu, r) in &e.trace {
            msg.push_str(&format!("\n  mu = {mu:.3e}  residual = {r:.3e}"));
        }
        Failure::Input(anyhow::anyhow!(msg))
    })?;
    finish(&report, &common.out, &common.format)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Certificate) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
