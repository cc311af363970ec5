use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluidhopf::verify::Suite;
use fluidhopf_cli::commands::{run_factorize, run_passage, run_simulate, run_verify};
use fluidhopf_cli::config::Config;
use fluidhopf_cli::CliError;

const THREADS_VAR: &str = "FLUIDHOPF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fluidhopf", version, about = "First-passage functionals of Markov-modulated fluid processes")]
struct Cli {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set numerics.ds=5e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ds: Option<f64>,
    #[arg(long)]
    da: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(x) = self.seed {
            out.push(format!("numerics.seed={x}"));
        }
        for (key, v) in [("ds", self.ds), ("da", self.da), ("eta", self.eta), ("horizon", self.horizon)] {
            if let Some(x) = v {
                out.push(format!("numerics.{key}={x:?}"));
            }
        }
        out.extend(self.set.iter().cloned());
        out
    }

    fn load(&self) -> Result<Config, CliError> {
        Config::load(&self.config, &self.overrides())
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Wiener–Hopf factorization of a constant generator.
    Factorize(ConfigArgs),
    /// PDE solve for passage functionals, or Laplace tables with --laplace.
    Passage {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        laplace: bool,
    },
    /// Monte Carlo estimate of a passage functional.
    Simulate(ConfigArgs),
    /// Run a verification suite: homog, inhomog, jumps or identities.
    Verify {
        suite: String,
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_VAR} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    let out: &Path = &cli.out;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    match &cli.command {
        Command::Factorize(args) => run_factorize(&args.load()?, out),
        Command::Passage { args, laplace } => run_passage(&args.load()?, out, *laplace),
        Command::Simulate(args) => run_simulate(&args.load()?, out),
        Command::Verify { suite, config, set } => {
            let suite: Suite = suite.parse().map_err(|e: fluidhopf::verify::UnknownSuite| CliError::Config(e.to_string()))?;
            let cfg = config.as_ref().map(|p| Config::load(p, set)).transpose()?;
            if run_verify(suite, cfg.as_ref(), out)? {
                Ok(())
            } else {
                Err(CliError::VerifyFailed)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fluidhopf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
