use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use cppo_core::envs::VecEnv;
use cppo_core::oracle::{gridworld_to_tabular, occupancy_q, uniform_policy, write_q_csv};
use cppo_core::rng::{stream, Purpose};
use cppo_harness::ablate::{ablate, Axis};
use cppo_harness::agent::{Agent, EnvDims};
use cppo_harness::config::RunConfig;
use cppo_harness::evaluate::evaluate;
use cppo_harness::plot::emit_plots;
use cppo_harness::train::train;
use cppo_harness::HarnessError;

#[derive(Parser)]
#[command(name = "cppo", version, about = "Contrastive PPO training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, checkpoint and resolved config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-key override, e.g. `env.size=8`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Sweep reward or goal variants over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        seeds: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG curves from metrics CSVs matching a glob.
    Plot {
        #[arg(long)]
        logs: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the exact goal-occupancy Q of the uniform policy as CSV.
    Oracle {
        #[arg(long)]
        env: String,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn with_seed(mut set: Vec<String>, seed: Option<u64>) -> Vec<String> {
    if let Some(s) = seed {
        set.push(format!("seed={s}"));
    }
    set
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, set, seed, out } => {
            let cfg = RunConfig::load(&config, &with_seed(set, seed))?;
            let result = train(&cfg, out.as_deref())?;
            let e = result.final_eval;
            println!(
                "env_steps {}  win_rate {:.4}  [{:.4}, {:.4}] over {} episodes",
                result.env_steps, e.win_rate, e.ci_low, e.ci_high, e.episodes
            );
        }
        Command::Eval {
            ckpt,
            config,
            episodes,
            set,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            let envs = VecEnv::new(&cfg.env, 1, cfg.seed, Purpose::Env)?;
            let mut agent = Agent::new(&cfg, EnvDims::of(&envs), &mut stream(cfg.seed, Purpose::Init, 0))?;
            agent.load(&ckpt)?;
            let e = evaluate(&agent, &cfg.env, episodes, cfg.seed)?;
            println!(
                "win_rate {:.4}  [{:.4}, {:.4}]  {}/{} episodes",
                e.win_rate, e.ci_low, e.ci_high, e.successes, e.episodes
            );
        }
        Command::Ablate {
            config,
            axis,
            variants,
            seeds,
            set,
            out,
        } => {
            let cfg = RunConfig::load(&config, &set)?;
            let report = ablate(&cfg, Axis::parse(&axis)?, &variants, seeds, out.as_deref())?;
            println!("{report}");
        }
        Command::Plot { logs, out } => {
            for p in emit_plots(&logs, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Oracle { env, size, gamma, out } => {
            if env != "grid" {
                return Err(HarnessError::config(format!("the oracle supports only the grid env, not `{env}`")).into());
            }
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(HarnessError::config(format!("gamma must lie in (0, 1), got {gamma}")).into());
            }
            let mdp = gridworld_to_tabular(size, gamma).map_err(HarnessError::from)?;
            let occ = occupancy_q(&mdp, &uniform_policy(mdp.states(), mdp.actions())).map_err(HarnessError::from)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_q_csv(BufWriter::new(file), &occ.q, mdp.actions()).map_err(HarnessError::from)?;
            if occ.residual >= cppo_core::oracle::RESIDUAL_TOL {
                bail!("oracle did not converge (residual {:e})", occ.residual);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<HarnessError>().is_some_and(HarnessError::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
