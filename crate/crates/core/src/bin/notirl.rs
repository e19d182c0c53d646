use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use notirl::pipeline::{
    cmd_eval_sim, cmd_evaluate, cmd_fit_reward_models, cmd_gen_data, cmd_sweep, cmd_train, PipelineConfig, ReportFormat,
};
use notirl::{Error, Result};

#[derive(Parser)]
#[command(name = "notirl", version, about = "Offline RL pipeline for notification send decisions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the stage being run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a logged dataset under the epsilon-greedy baseline.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the click and session reward models.
    FitRewardModels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train a conservative double-DQN policy.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Previously fitted reward models; fitted on the fly when needed and absent.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Off-policy evaluation of a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Train and evaluate every cell of the configured grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
    /// Monte-Carlo evaluation of a checkpoint on the simulator.
    EvalSim {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
        format: ReportFormat,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.sim.rng_seed = s;
            }
            let ds = cmd_gen_data(&cfg, &common.out)?;
            eprintln!("wrote {} trajectories, {} transitions", ds.trajectories.len(), ds.n_transitions());
        }
        Command::FitRewardModels { common, dataset } => {
            let cfg = load_config(common.config.as_deref())?;
            let m = cmd_fit_reward_models(&cfg, &dataset, &common.out)?;
            eprintln!(
                "click model on {} sends; session model mse send {:.4} / not-send {:.4}",
                m.click.n_samples, m.session.mse_send, m.session.mse_not_send
            );
        }
        Command::Train { common, dataset, models } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            cmd_train(&cfg, &dataset, models.as_deref(), &common.out)?;
        }
        Command::Evaluate { common, checkpoint, dataset, format } => {
            let cfg = load_config(common.config.as_deref())?;
            cmd_evaluate(&cfg, &checkpoint, &dataset, &common.out, format)?;
        }
        Command::Sweep { common, dataset, workers, format } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            let rows = cmd_sweep(&cfg, &dataset, &common.out, format, workers)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            eprintln!("{} runs, {failed} failed", rows.len());
        }
        Command::EvalSim { common, checkpoint, episodes, format } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.ope.eval_seed = s;
            }
            cmd_eval_sim(&cfg, &checkpoint, &common.out, format, episodes)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
