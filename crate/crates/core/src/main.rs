use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plan_iv::bench::{cmd_bench, cmd_fit, cmd_gen, cmd_plan, cmd_report, ExperimentConfig};
use plan_iv::Result;

#[derive(Parser)]
#[command(
    name = "plan-iv",
    version,
    about = "Pessimistic planning from confounded offline data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset per (K, seed) cell.
    Gen(Common),
    /// Fit confidence sets on a dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Plan on saved fits.
    Plan {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fits: PathBuf,
    },
    /// Run the full sweep and write results.csv.
    Bench(Common),
    /// Summarize results.csv into summary.json and plot_data.tsv.
    Report {
        #[command(flatten)]
        common: Common,
        /// Defaults to results.csv in the output directory.
        #[arg(long)]
        results: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Gen(c) | Command::Bench(c) => c,
            Command::Fit { common, .. } | Command::Plan { common, .. } | Command::Report { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    let cfg = ExperimentConfig::from_path(&common.config)?;
    let out = cfg.resolve_out(common.out.as_deref())?;
    match &cli.command {
        Command::Gen(_) => {
            for p in cmd_gen(&cfg, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Fit { dataset, .. } => println!("{}", cmd_fit(&cfg, dataset, &out)?.1.display()),
        Command::Plan { fits, .. } => println!("{}", cmd_plan(&cfg, fits, &out)?.1.display()),
        Command::Bench(_) => println!("{}", cmd_bench(&cfg, &out)?.display()),
        Command::Report { results, .. } => {
            let path = results.clone().unwrap_or_else(|| out.join("results.csv"));
            let summary = cmd_report(&path, &out)?;
            for s in &summary.slopes {
                match s.slope {
                    Some(sl) => println!(
                        "{} {} {}: slope {:.4} (se {})",
                        s.app,
                        s.estimator,
                        s.metric,
                        sl.slope,
                        sl.standard_error.map_or("n/a".into(), |e| format!("{e:.4}"))
                    ),
                    None => println!("{} {} {}: slope unavailable", s.app, s.estimator, s.metric),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("plan-iv: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
