//! Command-line pipeline: task generation, stage-1 finetuning, stage-2
//! group-relative optimization, evaluation, theory verification, and log
//! analysis.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 config/validation failure,
//! 3 theory-bound violation.

mod config;
mod plot;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rcgrpo::env::gen::{generate, WorldChoice};
use rcgrpo::env::{read_tasks, write_tasks, Task, TaskSet};
use rcgrpo::metrics::{
    pearson, read_jsonl, significance_stars, window_summary, write_csv, write_jsonl,
    MetricsRecord, DEFAULT_WINDOW,
};
use rcgrpo::policy::{Checkpoint, CheckpointKind, Condition, PolicyParams, DEFAULT_DIM};
use rcgrpo::rctp::{
    curate, train_rctp_with_curve, train_sft_with_curve, write_dataset, LabeledTrajectory,
};
use rcgrpo::rl::{evaluate, train_rl, RLConfig, RLMode};
use rcgrpo::theory::{default_reports, TheoryConfig};

use config::{archive, load_toml, out_root, resolve_rl, resolve_stage1, RlFlags};

#[derive(Parser)]
#[command(name = "rcgrpo", version, about = "Reward-conditioned GRPO laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WorldArg {
    File,
    Ticket,
    Mixed,
}

impl From<WorldArg> for WorldChoice {
    fn from(w: WorldArg) -> Self {
        match w {
            WorldArg::File => WorldChoice::FileSystem,
            WorldArg::Ticket => WorldChoice::Ticket,
            WorldArg::Mixed => WorldChoice::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Grpo,
    #[value(name = "rc-grpo")]
    RcGrpo,
}

impl From<ModeArg> for RLMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Grpo => RLMode::Grpo,
            ModeArg::RcGrpo => RLMode::RcGrpo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Sft,
    Rctp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TokenArg {
    High,
    Low,
    Neutral,
}

impl From<TokenArg> for Condition {
    fn from(t: TokenArg) -> Self {
        match t {
            TokenArg::High => Condition::High,
            TokenArg::Low => Condition::Low,
            TokenArg::Neutral => Condition::Neutral,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task suite file (JSON lines).
    GenTasks {
        #[arg(long, value_enum, default_value = "mixed")]
        world: WorldArg,
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Curate the mixed dataset and fit the reward-conditioned policy.
    TrainRctp {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the unconditioned SFT baseline on expert trajectories.
    TrainSft {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Stage-2 optimization from a stage-1 checkpoint.
    TrainRl {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Declared kind of the initialization checkpoint; mismatches warn.
        #[arg(long, value_enum)]
        init: Option<InitArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        group_size: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        clip: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        /// Continue a previous run in the same output directory.
        #[arg(long, default_value_t = false)]
        resume: bool,
        /// Write an intermediate checkpoint every N steps (0 disables).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Greedy success rate of a checkpoint under a conditioning token.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, value_enum, default_value = "high")]
        token: TokenArg,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the theory verifiers; exits 3 if any bound is violated.
    VerifyTheory {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        group_size: usize,
        #[arg(long, default_value_t = 0.01)]
        eps_sft: f64,
        #[arg(long, default_value_t = 4)]
        horizon: usize,
        #[arg(long, default_value_t = 0.1)]
        kl_eps: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Windowed summaries and the entropy-reward correlation of a run log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render reward/entropy/spread curves of a run log to SVG files.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify(&err)
        }
    });
}

/// Map errors onto the documented exit codes.
fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(lib) = cause.downcast_ref::<rcgrpo::Error>() {
            return match lib {
                rcgrpo::Error::Validation(_)
                | rcgrpo::Error::DataIntegrity(_)
                | rcgrpo::Error::Curation { .. }
                | rcgrpo::Error::WorldMismatch(_)
                | rcgrpo::Error::UndefinedCorrelation(_) => 2,
                rcgrpo::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
                _ => 1,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            if io.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(rcgrpo::Error::Validation(format!("{what} not found: {}", path.display())).into())
    }
}

fn resolve_out(out: Option<PathBuf>, command: &str) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| out_root().join(command));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn load_task_suite(path: &Path) -> Result<(Vec<Task>, TaskSet)> {
    require_file(path, "task file")?;
    let tasks = read_tasks(path)?;
    if tasks.is_empty() {
        return Err(rcgrpo::Error::Validation(format!(
            "task file {} contains no tasks",
            path.display()
        ))
        .into());
    }
    let set = TaskSet::new(tasks.clone())?;
    Ok((tasks, set))
}

fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (epoch, loss) in curve.iter().enumerate() {
        writeln!(out, "{}", serde_json::json!({ "epoch": epoch, "loss": loss }))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenTasks {
            world,
            count,
            seed,
            out,
        } => {
            let path = out.unwrap_or_else(|| out_root().join("tasks.jsonl"));
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            let tasks = generate(world.into(), count, seed)?;
            write_tasks(&path, &tasks)?;
            println!("wrote {} tasks to {}", tasks.len(), path.display());
            Ok(0)
        }

        Command::TrainRctp {
            tasks,
            out,
            config,
            seed,
            lr,
            epochs,
        } => {
            let (suite, task_set) = load_task_suite(&tasks)?;
            let out_dir = resolve_out(out, "train-rctp")?;
            let file = load_toml(config.as_deref())?;
            let (optim, curation) = resolve_stage1(file, seed, lr, epochs);
            let (train, test) = curate(&suite, &curation)?;
            write_dataset(&out_dir.join("train.jsonl"), &train)?;
            write_dataset(&out_dir.join("test.jsonl"), &test)?;
            let init = PolicyParams::zeros(DEFAULT_DIM);
            let (params, curve) = train_rctp_with_curve(&init, &train, &task_set, &optim)?;
            write_loss_curve(&out_dir.join("loss.jsonl"), &curve)?;
            let ckpt = Checkpoint::new(&params, optim.temperature, CheckpointKind::Rctp);
            ckpt.save(&out_dir.join("rctp.ckpt.json"))?;
            archive(
                &out_dir,
                &config::ResolvedStage1 {
                    tasks,
                    out: out_dir.clone(),
                    optim,
                    curation,
                },
            )?;
            println!(
                "trained rctp on {} trajectories ({} held out); final loss {:.6}",
                train.len(),
                test.len(),
                curve.last().unwrap()
            );
            Ok(0)
        }

        Command::TrainSft {
            tasks,
            out,
            config,
            seed,
            lr,
            epochs,
        } => {
            let (suite, task_set) = load_task_suite(&tasks)?;
            let out_dir = resolve_out(out, "train-sft")?;
            let file = load_toml(config.as_deref())?;
            let (optim, curation) = resolve_stage1(file, seed, lr, epochs);
            // same ID-based split as the RCTP stage; experts only
            let (train, test) = curate(&suite, &curation)?;
            let experts: Vec<LabeledTrajectory> =
                train.into_iter().filter(|d| d.reward == 1).collect();
            write_dataset(&out_dir.join("train.jsonl"), &experts)?;
            write_dataset(
                &out_dir.join("test.jsonl"),
                &test.into_iter().filter(|d| d.reward == 1).collect::<Vec<_>>(),
            )?;
            let init = PolicyParams::zeros(DEFAULT_DIM);
            let (params, curve) = train_sft_with_curve(&init, &experts, &task_set, &optim)?;
            write_loss_curve(&out_dir.join("loss.jsonl"), &curve)?;
            let ckpt = Checkpoint::new(&params, optim.temperature, CheckpointKind::Sft);
            ckpt.save(&out_dir.join("sft.ckpt.json"))?;
            archive(
                &out_dir,
                &config::ResolvedStage1 {
                    tasks,
                    out: out_dir.clone(),
                    optim,
                    curation,
                },
            )?;
            println!(
                "trained sft on {} expert trajectories; final loss {:.6}",
                experts.len(),
                curve.last().unwrap()
            );
            Ok(0)
        }

        Command::TrainRl {
            tasks,
            checkpoint,
            out,
            config,
            mode,
            init,
            seed,
            steps,
            group_size,
            p,
            beta,
            clip,
            lr,
            batch,
            resume,
            checkpoint_every,
        } => {
            let (suite, _) = load_task_suite(&tasks)?;
            require_file(&checkpoint, "checkpoint")?;
            let out_dir = resolve_out(out, "train-rl")?;
            let file = load_toml(config.as_deref())?;
            let cfg = resolve_rl(
                file,
                RlFlags {
                    mode: mode.map(Into::into),
                    seed,
                    steps,
                    group_size,
                    p,
                    beta,
                    clip,
                    lr,
                    batch,
                },
            );
            cfg.validate()?;

            let stage1 = Checkpoint::load(&checkpoint)?;
            if let Some(declared) = init {
                let expected = match declared {
                    InitArg::Sft => CheckpointKind::Sft,
                    InitArg::Rctp => CheckpointKind::Rctp,
                };
                if stage1.kind != expected {
                    eprintln!(
                        "warning: --init {} but checkpoint {} is {}-format",
                        expected,
                        checkpoint.display(),
                        stage1.kind
                    );
                }
            }
            if cfg.mode == RLMode::RcGrpo && stage1.kind != CheckpointKind::Rctp {
                eprintln!(
                    "warning: rc-grpo expects an rctp-format checkpoint; {} is {}-format",
                    checkpoint.display(),
                    stage1.kind
                );
            }

            let metrics_path = out_dir.join("metrics.jsonl");
            let rl_ckpt_path = out_dir.join("rl.ckpt.json");
            let (mut params, start_step) = if resume {
                require_file(&rl_ckpt_path, "resume checkpoint")?;
                let prev = Checkpoint::load(&rl_ckpt_path)?;
                (prev.params(), prev.trained_steps)
            } else {
                write_jsonl(&metrics_path, &[], false)?;
                (stage1.params(), 0)
            };

            let mut done = 0usize;
            let chunk = if checkpoint_every == 0 {
                cfg.steps
            } else {
                checkpoint_every
            };
            while done < cfg.steps {
                let n = chunk.min(cfg.steps - done);
                let part = RLConfig {
                    steps: n,
                    ..cfg.clone()
                };
                let (next, log) = train_rl(&params, &suite, &part, start_step + done)?;
                params = next;
                done += n;
                write_jsonl(&metrics_path, &log, true)?;
                let mut ckpt = Checkpoint::new(&params, cfg.temperature, CheckpointKind::Rl);
                ckpt.trained_steps = start_step + done;
                ckpt.save(&rl_ckpt_path)?;
                if checkpoint_every != 0 {
                    ckpt.save(&out_dir.join(format!("ckpt-step-{:05}.json", start_step + done)))?;
                }
            }

            let all = read_jsonl(&metrics_path)?;
            write_csv(&out_dir.join("metrics.csv"), &all)?;
            #[derive(Serialize)]
            struct ResolvedRl<'a> {
                tasks: &'a Path,
                checkpoint: &'a Path,
                out: &'a Path,
                #[serde(flatten)]
                rl: &'a RLConfig,
            }
            archive(
                &out_dir,
                &ResolvedRl {
                    tasks: &tasks,
                    checkpoint: &checkpoint,
                    out: &out_dir,
                    rl: &cfg,
                },
            )?;
            let last = all.last().expect("at least one step");
            println!(
                "trained {} steps (total {}); final mean reward {:.3}",
                cfg.steps, last.step, last.mean_reward
            );
            Ok(0)
        }

        Command::Eval {
            checkpoint,
            tasks,
            token,
            temperature,
            out,
        } => {
            require_file(&checkpoint, "checkpoint")?;
            let (suite, _) = load_task_suite(&tasks)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let temp = temperature.unwrap_or(ckpt.temperature);
            let condition: Condition = token.into();
            let success = evaluate(&ckpt.params(), &suite, condition, temp, Default::default())?;
            let report = serde_json::json!({
                "checkpoint": checkpoint,
                "tasks": tasks,
                "token": condition.to_string(),
                "n_tasks": suite.len(),
                "success_rate": success,
            });
            println!("{report}");
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(0)
        }

        Command::VerifyTheory {
            seed,
            samples,
            group_size,
            eps_sft,
            horizon,
            kl_eps,
            out,
        } => {
            let cfg = TheoryConfig {
                seed,
                n_samples: samples,
                group_size,
                eps_sft,
                horizon,
                kl_eps,
                ..Default::default()
            };
            let reports = default_reports(&cfg)?;
            for r in &reports {
                println!("{}", r.summary_line());
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&reports)?)?;
            }
            if reports.iter().all(|r| r.satisfied) {
                Ok(0)
            } else {
                eprintln!("theory bound violated");
                Ok(3)
            }
        }

        Command::Analyze { log, window, out } => {
            require_file(&log, "run log")?;
            let records = read_jsonl(&log)?;
            if records.is_empty() {
                println!("empty log: 0 records, nothing to analyze");
                return Ok(0);
            }
            let summary = window_summary(&records, window)?;
            let entropies: Vec<f64> = records.iter().map(|r| r.mean_entropy).collect();
            let rewards: Vec<f64> = records.iter().map(|r| r.mean_reward).collect();
            let correlation = pearson(&entropies, &rewards);

            println!("== entropy trajectory (windows of {window} steps) ==");
            if summary.overlapping {
                println!("note: log shorter than 2 windows; early/late overlap");
            }
            println!(
                "entropy early -> late: {:.4} -> {:.4} ({:+.0}%)",
                summary.early.mean_entropy, summary.late.mean_entropy, summary.entropy_pct_change
            );
            let pearson_json = match &correlation {
                Ok((rho, p_value)) => {
                    println!(
                        "pearson(entropy, reward) across {} steps: rho {:+.3} (p = {:.4}) {}",
                        records.len(),
                        rho,
                        p_value,
                        significance_stars(*p_value)
                    );
                    serde_json::json!({
                        "rho": rho,
                        "p_value": p_value,
                        "stars": significance_stars(*p_value),
                    })
                }
                Err(e) => {
                    println!("pearson(entropy, reward): undefined ({e})");
                    serde_json::json!({ "undefined": e.to_string() })
                }
            };
            println!("== late-window dynamics (last {window} steps) ==");
            println!(
                "spread {:.4} | kl {:.6} | grad_norm {:.4} | entropy {:.4} | zero-sigma {:.3} | reward {:.3}",
                summary.late.advantage_spread,
                summary.late.mean_kl_ref,
                summary.late.grad_norm,
                summary.late.mean_entropy,
                summary.late.frac_zero_sigma_groups,
                summary.late.mean_reward
            );
            if let Some(path) = out {
                let doc = serde_json::json!({
                    "summary": summary,
                    "pearson_entropy_reward": pearson_json,
                });
                std::fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
            }
            Ok(0)
        }

        Command::Plot { log, out } => {
            require_file(&log, "run log")?;
            let records: Vec<MetricsRecord> = read_jsonl(&log)?;
            let out_dir = resolve_out(out, "plots")?;
            let series = |f: fn(&MetricsRecord) -> f64| {
                records
                    .iter()
                    .map(|r| (r.step as f64, f(r)))
                    .collect::<Vec<_>>()
            };
            plot::write_line_chart(
                &out_dir.join("reward.svg"),
                "mean training reward",
                "reward",
                &series(|r| r.mean_reward),
            )?;
            plot::write_line_chart(
                &out_dir.join("entropy.svg"),
                "mean policy entropy",
                "entropy (nats)",
                &series(|r| r.mean_entropy),
            )?;
            plot::write_line_chart(
                &out_dir.join("spread.svg"),
                "within-group advantage spread",
                "max - min advantage",
                &series(|r| r.advantage_spread),
            )?;
            println!("wrote 3 charts to {}", out_dir.display());
            Ok(0)
        }
    }
}
