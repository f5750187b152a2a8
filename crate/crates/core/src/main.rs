use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use policy_eval::scenario::{
    run_assign, run_evaluate, run_pool_inspect, run_simulate, KeyValues, ScenarioConfig, SimulationRun,
};
use policy_eval::Result;

#[derive(Parser)]
#[command(name = "policy-eval", version, about = "Off-policy evaluation of location assignment policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Seed for any randomized step; required when one is needed.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` settings overriding the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn key_values(&self) -> Result<KeyValues> {
        let mut kv = KeyValues::parse(&self.set.join("\n"))?;
        if let Some(seed) = self.seed {
            kv.set("seed", seed.to_string());
        }
        Ok(kv)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one or more scenarios.
    Evaluate {
        /// Scenario config file; repeat for a grid.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Directory for gains_summary.csv (defaults to the first scenario's output directory).
        #[arg(long)]
        summary_dir: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a synthetic Monte Carlo or exact-enumeration study.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compute an assignment and write it as a policy file.
    Assign {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the location pooling map for a dataset.
    PoolInspect {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evaluate {
            configs,
            summary_dir,
            overrides,
        } => {
            let kv = overrides.key_values()?;
            let configs = configs
                .iter()
                .map(|p| ScenarioConfig::from_file(p, &kv))
                .collect::<Result<Vec<_>>>()?;
            let dir = summary_dir.unwrap_or_else(|| configs[0].output_dir.clone());
            for out in run_evaluate(&configs, &dir)? {
                println!("{}", out.name);
                print!("{}", out.table);
            }
            Ok(())
        }
        Command::Simulate { config, overrides } => {
            let mut kv = KeyValues::parse(&policy_eval::io::read_text(&config)?)?;
            for (k, v) in overrides.key_values()?.entries {
                kv.set(&k, v);
            }
            let base = config.parent().unwrap_or(std::path::Path::new("."));
            let run = SimulationRun::from_key_values(&kv, base)?;
            run_simulate(&run)?;
            println!("{}", run.output.display());
            Ok(())
        }
        Command::Assign {
            config,
            out,
            overrides,
        } => {
            let cfg = ScenarioConfig::from_file(&config, &overrides.key_values()?)?;
            run_assign(&cfg, &out)?;
            Ok(())
        }
        Command::PoolInspect { config, overrides } => {
            let cfg = ScenarioConfig::from_file(&config, &overrides.key_values()?)?;
            run_pool_inspect(&cfg, &mut std::io::stdout().lock())?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
