//! `teamcook`: training, evaluation and serving entry points. Every
//! subcommand reads one TOML run configuration plus flag overrides and
//! writes below the run directory; failures print one JSON error line on
//! stderr and exit nonzero.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliError;
use run::Run;

#[derive(Debug, Parser)]
#[command(name = "teamcook", version = env!("TEAMCOOK_VERSION"), about = "Team-pool training, steering and evaluation for the n-agent kitchen")]
struct Cli {
    #[command(flatten)]
    flags: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the team pool; `--steps` sets the per-chunk budget.
    TrainPool {
        /// Continue after the last saved chunk.
        #[arg(long)]
        resume: bool,
    },
    /// Score every pool team in self-play; `--episodes` per team.
    ScorePool,
    /// Generate the trajectory-classifier dataset; `--episodes` per team.
    GenPredictorData,
    /// Train the trajectory classifier.
    TrainPredictor,
    /// Train steering teachers; `--steps` per teacher.
    TrainTeacher {
        /// Train only this agent slot.
        #[arg(long)]
        agent: Option<usize>,
    },
    /// Export teacher rollouts and distill the student; `--episodes` per teacher.
    Distill,
    /// Score an ego controller with partners; `--episodes` per seed.
    Eval,
    /// Influence-shaped runs per event horizon K.
    SweepK,
    /// Self-play with a dense handoff bonus.
    BaselineHack,
    /// Host live sessions over websockets.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long)]
        replay_dir: Option<PathBuf>,
        /// Substitute `stay` for humans who have not acted within this many milliseconds.
        #[arg(long)]
        step_timeout: Option<u64>,
    },
    /// Re-simulate a stored replay log and print its score.
    Replay { log: PathBuf },
    /// Merge every score file under a run directory into one table.
    ExportTable {
        dir: PathBuf,
        /// Table path; defaults to `<dir>/table.md`.
        #[arg(long = "to")]
        to: Option<PathBuf>,
    },
}

fn apply_budget(cfg: &mut RunConfig, command: &Command, flags: &Overrides) {
    let (steps, episodes) = (flags.steps, flags.episodes);
    match command {
        Command::TrainPool { .. } => {
            if let Some(s) = steps {
                cfg.pool.schedule.chunk_steps = s;
            }
        }
        Command::ScorePool => cfg.score.episodes = episodes.unwrap_or(cfg.score.episodes),
        Command::GenPredictorData => cfg.data.episodes_per_team = episodes.unwrap_or(cfg.data.episodes_per_team),
        Command::TrainTeacher { .. } => cfg.teacher.total_steps = steps.unwrap_or(cfg.teacher.total_steps),
        Command::Distill => cfg.distill.episodes_per_teacher = episodes.unwrap_or(cfg.distill.episodes_per_teacher),
        Command::Eval => cfg.eval.episodes = episodes.unwrap_or(cfg.eval.episodes),
        Command::SweepK | Command::BaselineHack => {
            if let Some(s) = steps {
                cfg.pool.schedule.chunk_steps = s;
            }
            if let Some(e) = episodes {
                cfg.sweep.eval_episodes = e;
                cfg.baseline.eval_episodes = e;
            }
        }
        _ => {}
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(&cli.flags)?;
    apply_budget(&mut cfg, &cli.command, &cli.flags);
    let start = |cfg: RunConfig, name| Run::start(cfg, name);
    match cli.command {
        Command::TrainPool { resume } => commands::train_pool(start(cfg, "train-pool")?, resume),
        Command::ScorePool => commands::score_pool(start(cfg, "score-pool")?),
        Command::GenPredictorData => commands::gen_predictor_data(start(cfg, "gen-predictor-data")?),
        Command::TrainPredictor => commands::train_predictor_cmd(start(cfg, "train-predictor")?),
        Command::TrainTeacher { agent } => commands::train_teacher_cmd(start(cfg, "train-teacher")?, agent),
        Command::Distill => commands::distill(start(cfg, "distill")?),
        Command::Eval => commands::eval(start(cfg, "eval")?),
        Command::SweepK => commands::sweep_k(start(cfg, "sweep-k")?),
        Command::BaselineHack => commands::baseline_hack(start(cfg, "baseline-hack")?),
        Command::Serve {
            port,
            checkpoint_dir,
            replay_dir,
            step_timeout,
        } => {
            let checkpoint_dir = checkpoint_dir.or(cfg.serve.checkpoint_dir.clone()).unwrap_or(cfg.out.clone());
            let replay_dir = replay_dir.or(cfg.serve.replay_dir.clone()).unwrap_or(cfg.out.join("sessions"));
            let mut serve = teamcook_server::ServeConfig::new(port.unwrap_or(cfg.serve.port), &checkpoint_dir, replay_dir);
            serve.step_timeout = step_timeout.or(cfg.serve.step_timeout_ms).map(Duration::from_millis);
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io(&checkpoint_dir, e))?;
            rt.block_on(teamcook_server::serve(serve)).map_err(|e| CliError::io(&checkpoint_dir, e))
        }
        Command::Replay { log } => {
            println!("{}", commands::replay_cmd(&log)?);
            Ok(())
        }
        Command::ExportTable { dir, to } => {
            println!("{}", commands::export_table(&dir, to.as_deref())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": { "kind": "usage", "message": e.to_string().trim() } });
            eprintln!("{msg}");
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
