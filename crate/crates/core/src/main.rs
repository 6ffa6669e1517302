use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use fallmdp::config::ExperimentConfig;
use fallmdp::harness::{cmd_dp, cmd_eval, cmd_rollout, cmd_train, RolloutStart, RunOptions};
use fallmdp::io::to_json_string;
use fallmdp::model::PendulumState;
use fallmdp::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fallmdp",
    version,
    about = "Minimum-impulse fall planning: DP baseline and learned policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `rng_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. 1 gives bit-identical output across runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory that relative paths in the config resolve against.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve DP rollouts and write the tuple and plan files.
    Dp(Common),
    /// Train the network from the tuple file.
    Train(Common),
    /// Compare the trained policy with DP on the evaluation sample.
    Eval(Common),
    /// Run one episode of the trained policy.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Case id from the evaluation sample.
        #[arg(long, conflicts_with = "state")]
        case: Option<usize>,
        /// Initial state as "c1,r1,theta1,r1dot,theta1dot".
        #[arg(long)]
        state: Option<String>,
        /// Record per-query wall time.
        #[arg(long)]
        timing: bool,
    },
}

fn parse_state(text: &str) -> Result<PendulumState> {
    let f: Vec<&str> = text.split(',').map(str::trim).collect();
    let bad = || Error::ConfigInvalid(format!("cannot parse state {text:?}"));
    if f.len() != 5 {
        return Err(bad());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    Ok(PendulumState::new(
        f[0].parse().map_err(|_| bad())?,
        num(f[1])?,
        num(f[2])?,
        num(f[3])?,
        num(f[4])?,
    ))
}

fn load(common: &Common) -> Result<(ExperimentConfig, RunOptions)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok((cfg, RunOptions::new(&common.out, common.threads)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dp(common) => {
            let (cfg, opts) = load(&common)?;
            let s = cmd_dp(&cfg, &opts)?;
            println!("plans: {}", s.plans);
            println!("tuples: {}", s.tuples);
            println!("mean plan value: {:.6}", s.mean_value);
            println!(
                "wrote {} and {}",
                s.tuples_path.display(),
                s.plans_path.display()
            );
        }
        Command::Train(common) => {
            let (cfg, opts) = load(&common)?;
            let s = cmd_train(&cfg, &opts)?;
            println!("iterations: {}", s.iterations);
            println!(
                "held-out reward: {:.6} -> {:.6}",
                s.initial_heldout_reward, s.final_heldout_reward
            );
            println!(
                "wrote {} and {}",
                s.weights_path.display(),
                s.log_path.display()
            );
        }
        Command::Eval(common) => {
            let (cfg, opts) = load(&common)?;
            let s = cmd_eval(&cfg, &opts)?.summary;
            println!("cases: {}", s.cases);
            println!("mean policy reward: {:.6}", s.mean_policy_reward);
            if let Some(dp) = s.mean_dp_reward {
                println!("mean dp reward: {dp:.6}");
                if s.cases > 0 {
                    println!(
                        "policy wins: {}/{} ({:.4})",
                        s.policy_wins,
                        s.cases,
                        s.policy_wins as f64 / s.cases as f64
                    );
                    println!("ties: {}", s.ties);
                }
            }
            println!("wrote {}", s.comparison_path.display());
        }
        Command::Rollout {
            common,
            case,
            state,
            timing,
        } => {
            let (cfg, opts) = load(&common)?;
            let start = match state {
                Some(text) => RolloutStart::State(parse_state(&text)?),
                None => RolloutStart::Case(case.unwrap_or(0)),
            };
            let (rec, path) = cmd_rollout(&cfg, &opts, &start, timing)?;
            print!("{}", to_json_string(&rec)?);
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
