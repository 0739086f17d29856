use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rcb_core::harness::{self, Method, Overrides, RunConfig};
use rcb_core::Result;

#[derive(Parser)]
#[command(name = "rcb", version, about = "Class-rebalanced demonstration selection for in-context learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an imbalanced dataset and a manifest of its class counts.
    Gen(Common),
    /// Estimate the class bias once per seed and write weights.json.
    EstimateBias(Common),
    /// Select, predict and score every test query; write reports and summary.csv.
    Run(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Override the imbalance ratio of the config's imbalance spec.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Endpoint for the LLM client and HTTP encoder.
    #[arg(long)]
    base_url: Option<String>,
    /// Record failed queries in the report instead of aborting.
    #[arg(long)]
    skip_failures: bool,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: rcb_core::Error| e.to_string())
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        config.apply(&Overrides {
            seed: self.seed,
            method: self.method,
            ratio: self.ratio,
            output_dir: self.out.clone(),
            base_url: self.base_url.clone(),
            skip_failures: self.skip_failures,
        })?;
        Ok(config)
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen(c) => {
            let manifest = harness::cmd_gen(&c.load()?)?;
            println!(
                "wrote {} (counts {:?}, ratio {})",
                manifest.pool_file.display(),
                manifest.counts,
                manifest.imbalance_ratio
            );
        }
        Command::EstimateBias(c) => {
            let path = harness::cmd_estimate_bias(&c.load()?)?;
            println!("wrote {}", path.display());
        }
        Command::Run(c) => {
            let config = c.load()?;
            for r in harness::cmd_run(&config)? {
                let score = r.metrics.accuracy.or(r.metrics.em).unwrap_or(f64::NAN);
                println!("{} seed {}: {:.4} ({} skipped)", r.method, r.seed, score, r.skipped.len());
            }
            println!("wrote {}", config.output_dir.join(harness::SUMMARY_FILE).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
