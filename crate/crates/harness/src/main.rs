use std::path::{Path, PathBuf};
use std::process::ExitCode;

use admm_eki_harness::config::{Benchmark, RunConfig};
use admm_eki_harness::runner::{self, HarnessError, Outcome};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "admm-eki", version, about = "ADMM-EKI planner experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchmarkArg {
    Rastrigin,
    Racing,
}

impl From<BenchmarkArg> for Benchmark {
    fn from(b: BenchmarkArg) -> Self {
        match b {
            BenchmarkArg::Rastrigin => Benchmark::Rastrigin,
            BenchmarkArg::Racing => Benchmark::Racing,
        }
    }
}

#[derive(clap::Args)]
struct Overrides {
    /// Replaces `seed` from the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Write figures.
    #[arg(long, overrides_with = "no_plot")]
    plot: bool,
    /// Skip figures.
    #[arg(long)]
    no_plot: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.plot {
            cfg.plot = true;
        }
        if self.no_plot {
            cfg.plot = false;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        config: PathBuf,
        /// Output directory, replaces `output_dir` from the file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run two configurations on the same benchmark instance.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "compare-out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse and validate a configuration without running it.
    ValidateConfig { config: PathBuf },
    /// Print the fully resolved default configuration.
    PrintDefaults {
        #[arg(long, value_enum, default_value = "rastrigin")]
        benchmark: BenchmarkArg,
    },
}

fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, HarnessError> {
    let mut cfg = RunConfig::from_path(path)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Run {
            config,
            out,
            overrides,
        } => {
            let mut cfg = load(&config, &overrides)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let report = runner::run(&cfg)?;
            match &report.outcome {
                Outcome::Rastrigin(r) => println!(
                    "{} x = ({:.4}, {:.4}) misfit {:.4} constraint {:.2e}",
                    r.row.controller, r.row.x1, r.row.x2, r.row.misfit, r.row.constraint
                ),
                Outcome::Racing(r) => println!(
                    "{} steps {} mean speed {:.3} max error {:.3} collisions {} completed {}",
                    r.summary.controller,
                    r.summary.total_steps,
                    r.summary.mean_speed,
                    r.summary.max_error,
                    r.summary.collisions,
                    r.summary.completed
                ),
            }
            println!("wrote {}", cfg.output_dir.display());
            Ok(report.status().exit_code())
        }
        Command::Compare { a, b, out, overrides } => {
            let ca = load(&a, &overrides)?;
            let cb = load(&b, &overrides)?;
            let report = runner::compare(&ca, &cb, &out)?;
            if let Some(h) = &report.environment_hash {
                println!("environment {h}");
            }
            for (label, r) in report.labels.iter().zip(&report.reports) {
                println!("{label}: {:?}", r.status());
            }
            println!("wrote {}", out.display());
            Ok(report.status().exit_code())
        }
        Command::ValidateConfig { config } => {
            let cfg = RunConfig::from_path(&config)?;
            println!("ok: {} with {}", cfg.benchmark, cfg.controller);
            Ok(0)
        }
        Command::PrintDefaults { benchmark } => {
            print!("{}", RunConfig::defaults_toml(benchmark.into()));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
