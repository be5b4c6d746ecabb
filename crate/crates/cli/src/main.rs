//! `misbehave`: batch front end for preparing VeReMi-style logs, tuning,
//! training and evaluating the stacked detector, and exporting SHAP tables.
//!
//! Exit codes: 0 success, 1 invalid configuration, malformed input or
//! missing prerequisite, 2 runtime failure.

mod commands;
mod config;
mod runinfo;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ExplainTarget, Layout};
use config::{Mode, RunConfig};

/// A configuration or prerequisite problem detected before work starts.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(name = "misbehave", version, about = "Stacked-ensemble misbehavior detection for vehicular message logs")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Run directory shared by all commands.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic log into <out>/synth.
    Synth,
    /// Load, clean, relabel and split input logs into <out>/data.
    Prepare {
        /// Input CSV; repeat for several files.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        /// Training fraction of the split.
        #[arg(long)]
        ratio: Option<f64>,
        /// Missing-value policy: median, zero or drop_row.
        #[arg(long)]
        policy: Option<misbehave::CleanPolicy>,
    },
    /// Bayesian search over base-learner hyperparameters.
    Tune {
        #[arg(long)]
        n_iter: Option<usize>,
        #[arg(long)]
        init_points: Option<usize>,
        #[arg(long)]
        cv_folds: Option<usize>,
        /// Continue from an existing trials.jsonl.
        #[arg(long)]
        resume: bool,
    },
    /// Fit the stacked model on each prepared training split.
    Train {
        /// Use <out>/tune/<unit>/best_config.json.
        #[arg(long)]
        tuned: bool,
    },
    /// Score the trained model and its base learners.
    Evaluate {
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Export SHAP summaries, beeswarm points and interactions.
    Explain {
        #[arg(long, value_enum, default_value = "all")]
        model: ExplainTarget,
        #[arg(long)]
        rows: Option<usize>,
    },
    /// Collect evaluation results into <out>/report/report.md.
    Report,
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| Invalid(format!("{e:#}")))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    match &cli.command {
        Command::Prepare {
            inputs,
            ratio,
            policy,
        } => {
            if !inputs.is_empty() {
                cfg.inputs = inputs.clone();
            }
            if let Some(r) = ratio {
                cfg.ratio = *r;
            }
            if let Some(p) = policy {
                cfg.clean_policy = *p;
            }
        }
        Command::Tune {
            n_iter,
            init_points,
            cv_folds,
            ..
        } => {
            if let Some(v) = n_iter {
                cfg.hpo.n_iter = *v;
            }
            if let Some(v) = init_points {
                cfg.hpo.init_points = *v;
            }
            if let Some(v) = cv_folds {
                cfg.hpo.cv_folds = *v;
            }
        }
        Command::Explain { rows: Some(r), .. } => cfg.explain.rows = *r,
        _ => {}
    }
    cfg.validate().map_err(|e| Invalid(format!("{e:#}")))?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Invalid(e.to_string()))?;
    }
    let layout = Layout { root: cli.out.clone() };
    match &cli.command {
        Command::Synth => commands::synth_cmd(&cfg, &layout),
        Command::Prepare { .. } => commands::prepare(&cfg, &layout),
        Command::Tune { resume, .. } => commands::tune(&cfg, &layout, *resume),
        Command::Train { tuned } => commands::train(&cfg, &layout, *tuned),
        Command::Evaluate { split } => {
            if split != "test" && split != "train" {
                return Err(Invalid(format!("--split must be test or train, got `{split}`")).into());
            }
            commands::evaluate(&cfg, &layout, split)
        }
        Command::Explain { model, .. } => commands::explain(&cfg, &layout, *model),
        Command::Report => commands::report_cmd(&cfg, &layout),
    }
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Invalid>()
            || matches!(
                c.downcast_ref::<misbehave::Error>(),
                Some(
                    misbehave::Error::Config(_)
                        | misbehave::Error::Schema(_)
                        | misbehave::Error::SchemaMismatch(_)
                        | misbehave::Error::MissingColumn { .. }
                        | misbehave::Error::UnknownAttackCode { .. }
                        | misbehave::Error::Parse { .. }
                )
            )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { 1 } else { 2 })
        }
    }
}
