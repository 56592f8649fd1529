use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pex_core::harness::{
    emit_outputs, evaluate_actor, load_run_logs, phase_rng, prepare_dataset, read_offline_checkpoint, run_offline_phase,
    run_online_phase, EvalRecord, RunConfig, EVAL_STREAM,
};
use pex_core::numcore::checkpoint::Checkpoint;
use pex_core::replay::{save_dataset, TransitionSource};
use pex_core::Error;

#[derive(Parser)]
#[command(name = "pex", version, about = "Offline-to-online RL with policy expansion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set ablation.freeze_offline_policy=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset (PEXD).
    GenData(Common),
    /// Run the offline phase and write a checkpoint (PEXC).
    TrainOffline(Common),
    /// Run the online phase. Without --checkpoint, strategies that need one
    /// run the offline phase first.
    TrainOnline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate the greedy actor stored in a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Aggregate run logs (*.json) from a directory into CSVs and charts.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Config(format!("cannot read config {}: {source}", path.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Error> {
    Checkpoint::load(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Data(format!("cannot read checkpoint {}: {source}", path.display())),
        other => other,
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn records_csv(records: &[EvalRecord]) -> String {
    let mut s = String::from("step,mean_return,normalized_score\n");
    for r in records {
        s.push_str(&format!("{},{},{}\n", r.env_step, r.mean_return, r.normalized_score));
    }
    s
}

fn write(path: PathBuf, contents: &str) -> Result<(), Error> {
    std::fs::write(&path, contents).map_err(|e| Error::Io { path, source: e })
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(common) => {
            let mut cfg = load_config(&common)?;
            cfg.dataset = None;
            let data = prepare_dataset(&cfg)?;
            create_dir(&common.out_dir)?;
            let path = common.out_dir.join(format!("{}_{}_seed{}.pexd", cfg.env_id, cfg.dataset_grade.name(), cfg.seed));
            save_dataset(&data, &path)?;
            println!("wrote {} transitions to {}", data.len(), path.display());
        }
        Command::TrainOffline(common) => {
            let cfg = load_config(&common)?;
            let data = prepare_dataset(&cfg)?;
            let out = run_offline_phase(&cfg, &data)?;
            create_dir(&common.out_dir)?;
            let stem = format!("offline_{}_seed{}", cfg.env_id, cfg.seed);
            let path = common.out_dir.join(format!("{stem}.pexc"));
            out.checkpoint.save(&path)?;
            write(common.out_dir.join(format!("{stem}.csv")), &records_csv(&out.records))?;
            println!(
                "offline score {:.2} after {} steps; checkpoint {}",
                out.final_score().unwrap_or(f64::NAN),
                cfg.offline_steps,
                path.display()
            );
        }
        Command::TrainOnline { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let wiring = cfg.validate()?;
            let needs_offline = cfg.strategy.uses_offline_phase();
            let data = if wiring.use_offline_buffer || (needs_offline && checkpoint.is_none()) {
                Some(prepare_dataset(&cfg)?)
            } else {
                None
            };
            let ckpt = match (&checkpoint, needs_offline, &data) {
                (Some(path), _, _) => Some(load_checkpoint(path)?),
                (None, true, Some(d)) => {
                    let out = run_offline_phase(&cfg, d)?;
                    println!("offline score {:.2}", out.final_score().unwrap_or(f64::NAN));
                    Some(out.checkpoint)
                }
                _ => None,
            };
            let out = run_online_phase(&cfg, ckpt.as_ref(), data.as_ref())?;
            let written = emit_outputs(std::slice::from_ref(&out.log), &common.out_dir, cfg.usage_bucket)?;
            println!(
                "{} final score {:.2} in {:.1}s; {} files in {}",
                out.log.label,
                out.log.final_score().unwrap_or(f64::NAN),
                out.log.wall_clock_secs,
                written.len(),
                common.out_dir.display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => {
            let cfg = load_config(&common)?;
            let env = cfg.env()?;
            let (nets, _) = read_offline_checkpoint(&load_checkpoint(&checkpoint)?, &env)?;
            let mut rng = phase_rng(cfg.seed, EVAL_STREAM);
            let r = evaluate_actor(&env, &nets.actor, episodes.unwrap_or(cfg.eval_episodes), &mut rng)?;
            println!(
                "mean return {:.4}, normalized score {:.2} over {} episodes",
                r.mean_return,
                env.spec().normalized_score(r.mean_return),
                r.episode_returns.len()
            );
        }
        Command::Plot { common, runs } => {
            let cfg = load_config(&common)?;
            let logs = load_run_logs(&runs)?;
            if logs.is_empty() {
                return Err(Error::Data(format!("no run logs in {}", runs.display())));
            }
            let written = emit_outputs(&logs, &common.out_dir, cfg.usage_bucket)?;
            println!("{} runs, {} files in {}", logs.len(), written.len(), common.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                2
            } else if e.is_data() {
                3
            } else {
                1
            })
        }
    }
}
