use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use hierrec::experiment::Experiment;

/// Hierarchical question recommendation experiments.
#[derive(Parser)]
#[command(name = "hierrec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override a scalar config leaf, e.g. `--set training.episodes=100`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    K,
    Warmup,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic interaction logs from the rule-based simulator.
    GenLogs(Common),
    /// Train the knowledge-tracing simulator on interaction logs.
    TrainKt(Common),
    /// Train the recommendation policy.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a policy checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a trained policy and the random baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Policy checkpoint; defaults to checkpoints/policy.json in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep concept count or initial history length.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        axis: Axis,
    },
}

fn load(common: &Common) -> anyhow::Result<Experiment> {
    Experiment::load(&common.config, &common.overrides)
        .with_context(|| format!("loading config {}", common.config.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenLogs(common) => {
            let exp = load(&common)?;
            let s = exp.gen_logs()?;
            println!("wrote {} rows for {} students to {}", s.rows, s.students, s.path.display());
        }
        Command::TrainKt(common) => {
            let exp = load(&common)?;
            let s = exp.train_kt()?;
            println!(
                "trained on {} sessions ({} train / {} held out)",
                s.sessions, s.report.train_sessions, s.report.holdout_sessions
            );
            if s.unknown_questions > 0 {
                println!("skipped {} rows with unknown question ids", s.unknown_questions);
            }
            match s.report.holdout_auc {
                Some(auc) => println!("held-out AUC: {auc:.4}"),
                None => println!("held-out AUC: undefined (single-class labels)"),
            }
            println!("model: {}", s.model_path.display());
        }
        Command::Train { common, resume } => {
            let exp = load(&common)?;
            let total = exp.config.training.episodes;
            let every = (total / 20).max(1);
            let mut window = Vec::new();
            let s = exp.train(resume.as_deref(), |m| {
                window.push(m.delta_u);
                if (m.episode + 1) % every == 0 {
                    let mean = window.iter().sum::<f64>() / window.len() as f64;
                    eprintln!("episode {:>7}/{total}  mean delta_u {mean:.4}", m.episode + 1);
                    window.clear();
                }
            })?;
            println!("checkpoint: {}", s.checkpoint_path.display());
            println!("metrics: {}", s.metrics_path.display());
            println!("learning curve: {}", s.plot_path.display());
        }
        Command::Evaluate { common, checkpoint } => {
            let exp = load(&common)?;
            let s = exp.evaluate(checkpoint.as_deref())?;
            println!("{:<14} {:>6} {:>10} {:>10}", "recommender", "budget", "mean", "std");
            for (result, path) in &s.results {
                let mut budgets: Vec<usize> = result.rows.iter().map(|r| r.budget).collect();
                budgets.sort_unstable();
                budgets.dedup();
                for b in budgets {
                    let (mean, std) = result.summary(b).expect("budget has rows");
                    println!("{:<14} {:>6} {:>10.4} {:>10.4}", result.recommender, b, mean, std);
                }
                println!("  -> {}", path.display());
            }
            println!("plot: {}", s.plot_path.display());
        }
        Command::Sweep { common, checkpoint, axis } => {
            let exp = load(&common)?;
            let (k, warmup) = exp.sweep_axes();
            let axes = match axis {
                Axis::K => vec![k],
                Axis::Warmup => vec![warmup],
                Axis::Both => vec![k, warmup],
            };
            for (table, csv, plot) in exp.sweep(checkpoint.as_deref(), &axes)? {
                println!("{} sweep:", table.axis);
                for (series, points) in table.series() {
                    let cells: Vec<String> = points.iter().map(|(x, y)| format!("{x}:{y:.4}")).collect();
                    println!("  {series}  {}", cells.join("  "));
                }
                println!("  -> {} / {}", csv.display(), plot.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config_error = err
                .downcast_ref::<hierrec::Error>()
                .is_some_and(hierrec::Error::is_config);
            ExitCode::from(if config_error { 2 } else { 3 })
        }
    }
}
