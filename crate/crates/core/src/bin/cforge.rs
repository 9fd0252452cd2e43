use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cforge::agents::save_checkpoint;
use cforge::compress::CompressionPlan;
use cforge::model::load_model;
use cforge::orchestrator::{
    energy_report, evaluate_plan, load_energy_inputs, pruning_sweep, run_ga_search, run_random_search, run_search,
    sweep_csv, uniform_vs_mixed, DataSplits, Environment, RunConfig, SearchReport,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cforge", version, about = "Hardware-aware one-shot DNN compression explorer")]
struct Cli {
    /// Worker threads for parallel evaluation (1 = bitwise reproducible).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Model container directory.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset root with calibration/, validation/ and test/.
    #[arg(long)]
    data: Option<PathBuf>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Agent search.
    Compress {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// NSGA-II search plus a uniform-random baseline with the same budget.
    Ga {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of one plan.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        split: EvalSplit,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense per-layer energy.
    EnergyReport {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cost_profile: Option<PathBuf>,
        #[arg(long)]
        rq_table: Option<PathBuf>,
    },
    /// Built-in experiments.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        experiment: Experiment,
        #[arg(long)]
        out: PathBuf,
        /// Random mixed-precision samples (uniform-vs-mixed).
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Validation,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    PruningSweep,
    UniformVsMixed,
}

fn load_config(run: &RunArgs, threads: Option<usize>) -> Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(m) = &run.model {
        cfg.paths.model = Some(m.clone());
    }
    if let Some(d) = &run.data {
        cfg.paths.dataset = Some(d.clone());
    }
    if let Some(t) = threads {
        cfg.threads = t;
    }
    cfg.apply_env()?;
    cfg.validate()?;
    Ok(cfg)
}

fn environment(cfg: &RunConfig) -> Result<(Environment, DataSplits)> {
    let (env, data) = Environment::from_config(cfg)?;
    log::info!(
        "{} layers, baseline accuracy {:.4} on {} validation samples",
        env.num_layers(),
        env.baseline_accuracy,
        env.validation.len()
    );
    Ok((env, data))
}

fn write_report(out: &Path, prefix: &str, report: &SearchReport) -> Result<()> {
    fs::write(out.join(format!("{prefix}report.json")), report.to_json()?)?;
    fs::write(out.join(format!("{prefix}curve.csv")), report.curve_csv()?)?;
    report.best.plan.save(out.join(format!("{prefix}best_plan.json")))?;
    println!(
        "{:?}: best reward {:.4} (loss {:.2}%, gain {:.2}%) at evaluation {}",
        report.searcher, report.best.reward, report.best.accuracy_loss, report.best.energy_gain, report.best.episode
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Compress { run, out } => {
            let cfg = load_config(&run, cli.threads)?;
            let (env, _) = environment(&cfg)?;
            let ckpt = out.join("checkpoints");
            fs::create_dir_all(&ckpt)?;
            let (report, agent) = run_search(&cfg, &env, |rec, agent| {
                log::info!(
                    "episode {}: loss {:.2}% gain {:.2}% reward {:.4}",
                    rec.episode,
                    rec.accuracy_loss,
                    rec.energy_gain,
                    rec.reward
                );
                if rec.unlock_event {
                    log::info!("technique agent unlocked after episode {}", rec.episode);
                }
                if cfg.checkpoint_every > 0 && (rec.episode + 1) % cfg.checkpoint_every == 0 {
                    save_checkpoint(agent, ckpt.join(format!("episode_{:05}", rec.episode + 1)))?;
                }
                Ok(())
            })?;
            save_checkpoint(&agent, ckpt.join("final"))?;
            write_report(&out, "", &report)?;
        }
        Command::Ga { run, out } => {
            let cfg = load_config(&run, cli.threads)?;
            let (env, _) = environment(&cfg)?;
            fs::create_dir_all(&out)?;
            write_report(&out, "ga_", &run_ga_search(&cfg, &env)?)?;
            write_report(&out, "random_", &run_random_search(&cfg, &env)?)?;
        }
        Command::Evaluate { run, plan, split, out } => {
            let cfg = load_config(&run, cli.threads)?;
            let (env, data) = environment(&cfg)?;
            let plan = CompressionPlan::load(&plan).with_context(|| format!("loading plan {}", plan.display()))?;
            let set = match split {
                EvalSplit::Validation => &data.validation,
                EvalSplit::Test => &data.test,
            };
            let json = serde_json::to_string_pretty(&evaluate_plan(&env, &plan, set, cfg.seed)?)?;
            match out {
                Some(p) => fs::write(p, json)?,
                None => println!("{json}"),
            }
        }
        Command::EnergyReport {
            model,
            cost_profile,
            rq_table,
        } => {
            let model = load_model(&model)?;
            let (profile, _) = load_energy_inputs(&model, cost_profile.as_deref(), rq_table.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&energy_report(&model, &profile))?);
        }
        Command::Sweep {
            run,
            experiment,
            out,
            samples,
        } => {
            let cfg = load_config(&run, cli.threads)?;
            let (env, _) = environment(&cfg)?;
            fs::create_dir_all(&out)?;
            match experiment {
                Experiment::PruningSweep => {
                    let levels: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).filter(|&s| s <= cfg.s_cap).collect();
                    let pts = pruning_sweep(&env, &levels, cfg.seed, cfg.threads)?;
                    fs::write(out.join("pruning_sweep.csv"), sweep_csv(&pts)?)?;
                    println!("{} points written", pts.len());
                }
                Experiment::UniformVsMixed => {
                    if samples == 0 {
                        bail!("--samples must be positive");
                    }
                    let r = uniform_vs_mixed(&env, samples, cfg.seed, cfg.threads)?;
                    fs::write(out.join("uniform_vs_mixed.json"), serde_json::to_string_pretty(&r)?)?;
                    println!(
                        "uniform front {} points, mixed front {} points, mixed dominates: {}",
                        r.uniform_front.len(),
                        r.mixed_front.len(),
                        r.mixed_dominates
                    );
                }
            }
        }
    }
    Ok(())
}
