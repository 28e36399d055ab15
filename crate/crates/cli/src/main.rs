use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use chronogrowth::experiments::{
    run, run_validate, write_report, ExperimentConfig, ExperimentKind, ValidateOptions, CHECK_IDS,
};

/// Growth rates of age-structured division models under periodic control.
#[derive(Parser, Debug)]
#[command(name = "chronogrowth", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Floquet growth rate of the configured model.
    Floquet(Common),
    /// Closed-form Perron and geometric growth rates of a one-phase model.
    Perron(Common),
    /// Floquet, Perron and geometric rates across maturation ages.
    #[command(name = "sweep-a")]
    SweepA(Common),
    /// Growth rate over drug offsets and amplitudes.
    Chrono(Common),
    /// Runs every acceptance check and writes a pass/fail report.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of check ids.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// JSON experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path prefix.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads for sweeps (0 picks automatically).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Time steps per period.
    #[arg(long)]
    nt: Option<usize>,
    /// Power-iteration tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn config(&self, kind: ExperimentKind) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::new(kind),
        };
        cfg.experiment = kind;
        if let Some(n) = self.nt {
            cfg.grid.n_time = n;
        }
        if let Some(t) = self.tol {
            cfg.solver.tol = t;
        }
        if let Some(out) = &self.out {
            cfg.output.prefix = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let (common, kind, only) = match &cli.command {
        Command::Floquet(c) => (c, ExperimentKind::Floquet, None),
        Command::Perron(c) => (c, ExperimentKind::Perron, None),
        Command::SweepA(c) => (c, ExperimentKind::SweepA, None),
        Command::Chrono(c) => (c, ExperimentKind::Chrono, None),
        Command::Validate { common, only } => (common, ExperimentKind::Validate, only.clone()),
    };
    let cfg = common.config(kind)?;
    let report = if kind == ExperimentKind::Validate {
        if let Some(ids) = &only {
            if let Some(bad) = ids.iter().find(|id| !CHECK_IDS.contains(&id.as_str())) {
                anyhow::bail!("unknown check `{bad}`; known checks: {}", CHECK_IDS.join(", "));
            }
        }
        let options = ValidateOptions { jobs: common.jobs, seed: cfg.seed, only, ..ValidateOptions::default() };
        run_validate(&options).into_report()
    } else {
        run(&cfg, common.jobs)?
    };
    for line in &report.summary {
        println!("{line}");
    }
    let paths = write_report(&report, &cfg.output.prefix, cfg.output.format)
        .with_context(|| format!("writing outputs with prefix {}", cfg.output.prefix))?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    if !report.converged {
        eprintln!("not every solve converged or check passed");
    }
    Ok(report.converged)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
