use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use varreg::envs::ENV_NAMES;
use varreg::harness::{describe, run_experiment, scaling_fit, EnvSpec, ExperimentConfig, HarnessError, Transform, VarStarSettings};
use varreg::mdp::{value_iteration, MdpSpec};

#[derive(Parser)]
#[command(name = "varreg", version, about = "Variance-dependent regret experiments on tabular episodic MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seeds, comma separated.
        #[arg(long, value_delimiter = ',')]
        seed_override: Option<Vec<u64>>,
        /// Replace the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log-log regret slope over the second half of each run.
    Fit {
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Print V*, q_star and Var* for a named environment.
    DescribeEnv {
        #[arg(long)]
        name: String,
        /// JSON object of constructor parameters.
        #[arg(long, default_value = "{}")]
        params: String,
        /// normalize-rewards and/or homogenize, applied in order.
        #[arg(long, value_delimiter = ',')]
        transforms: Vec<String>,
    },
    /// Check that an MDP file loads and satisfies every invariant.
    Validate {
        #[arg(long)]
        mdp: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            match err.downcast_ref::<HarnessError>() {
                Some(HarnessError::InvariantViolation(_)) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            seed_override,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seeds) = seed_override {
                cfg.seeds = seeds;
            }
            if let Some(out) = out {
                cfg.output = out;
            }
            let outcome = run_experiment(&cfg)?;
            let s = &outcome.summary;
            for seed in &s.seeds {
                println!(
                    "seed {:>6}  regret {:>12.4}  triggers {:>8}  violations {}  {}",
                    seed.seed,
                    seed.final_cumulative_regret,
                    seed.trigger_count,
                    seed.invariant_counts.violations(),
                    seed.csv.display()
                );
            }
            println!("mean final regret {:.4}; summary at {}", s.mean_final_cumulative_regret, outcome.summary_path.display());
        }
        Command::Fit { inputs } => {
            let report = scaling_fit(&inputs)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::DescribeEnv {
            name,
            params,
            transforms,
        } => {
            if !ENV_NAMES.contains(&name.as_str()) {
                anyhow::bail!("unknown env `{name}`; known: {}", ENV_NAMES.join(", "));
            }
            let params: Value = serde_json::from_str(&params).context("--params is not valid JSON")?;
            let transforms = transforms
                .iter()
                .map(|t| serde_json::from_value::<Transform>(json!(t)).with_context(|| format!("unknown transform `{t}`")))
                .collect::<Result<Vec<_>>>()?;
            let mdp = EnvSpec::named(&name, params).with_transforms(&transforms).build()?;
            let plan = value_iteration(&mdp);
            let report = json!({
                "description": describe(&mdp, &plan, &VarStarSettings::default()),
                "v_star": plan.v_star.outer_iter().map(|row| row.to_vec()).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Validate { mdp } => {
            let spec = MdpSpec::load(&mdp).with_context(|| format!("{} is not a valid MDP", mdp.display()))?;
            println!(
                "ok: S={} A={} H={} homogeneous={} deterministic={} bounded_total_reward={}",
                spec.num_states(),
                spec.num_actions(),
                spec.horizon(),
                spec.is_homogeneous(),
                spec.is_deterministic(),
                spec.has_bounded_total_reward()
            );
        }
    }
    Ok(())
}
