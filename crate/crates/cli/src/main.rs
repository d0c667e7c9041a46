use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use svig_cli::{export_kernels, solve, Outcome, Pipeline, RunConfig};

#[derive(Parser)]
#[command(name = "svig", version, about = "Zero-sum stochastic Volterra games on a scenario tree")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured pipeline and write its artifacts.
    Solve(Common),
    /// Run the invariant battery and write verify.json.
    Verify(Common),
    /// Write the sampled kernels of the [game] section as CSV tables.
    ExportKernels(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output`, else `out` next to the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    pipeline: Option<Pipeline>,
}

impl Common {
    fn load(&self, force: Option<Pipeline>) -> Result<RunConfig> {
        let mut cfg = RunConfig::load_unchecked(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(p) = force.or(self.pipeline) {
            cfg.pipeline = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| cfg.output_dir())
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let (common, force) = match &cli.command {
        Command::Solve(c) => (c, None),
        Command::Verify(c) => (c, Some(Pipeline::VerifySuite)),
        Command::ExportKernels(c) => {
            let cfg = c.load(None)?;
            let dir = c.out_dir(&cfg);
            export_kernels(&cfg)?.write_to(&dir)?;
            println!("kernel tables written to {}", dir.display());
            return Ok(Outcome::Success);
        }
    };
    let cfg = common.load(force)?;
    let out = solve(&cfg)?;
    let dir = common.out_dir(&cfg);
    out.artifacts.write_to(&dir)?;
    let files: Vec<&str> = out.artifacts.names().collect();
    match &out.outcome {
        Outcome::Success => println!("{}: ok ({} in {})", cfg.pipeline.name(), files.join(", "), dir.display()),
        Outcome::NoSaddle => println!(
            "{}: no saddle point, the saddle conditions fail (see {})",
            cfg.pipeline.name(),
            dir.join("report.json").display()
        ),
        Outcome::PropertyFailure(names) => eprintln!("verification failed: {}", names.join(", ")),
    }
    Ok(out.outcome)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(o) => ExitCode::from(o.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
