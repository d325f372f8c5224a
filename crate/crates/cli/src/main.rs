use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pedrisk::config::RunConfig;
use pedrisk::pipeline::{run_preprocess, run_risk, run_synth, run_train};
use pedrisk::{Error, Result};

/// Pedestrian-vehicle conflict risk estimation from intersection trajectories.
#[derive(Parser)]
#[command(name = "pedrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input dataset file, or a directory holding dataset.csv.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic intersection scene with ground truth.
    Synth(Common),
    /// Label vehicles, merge and filter pedestrians.
    Preprocess(Common),
    /// Fit trajectory and maneuver models and write evaluation tables.
    Train(Common),
    /// Estimate risk for every co-present pair and score detection.
    Risk {
        #[command(flatten)]
        common: Common,
        /// Directory holding the trained models; defaults to paths.models.
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Train(_) => "train",
            Command::Risk { .. } => "risk",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Preprocess(c) | Command::Train(c) => c,
            Command::Risk { common, .. } => common,
        }
    }
}

fn required(flag: Option<&PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or(fallback)
        .cloned()
        .ok_or_else(|| Error::Config(format!("no {what} given (flag or [paths] in config)")))
}

fn run(cmd: &Command) -> Result<String> {
    let c = cmd.common();
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    let out = required(c.out.as_ref(), cfg.paths.out.as_ref(), "output directory")?;
    let input = || required(c.input.as_ref(), cfg.paths.input.as_ref(), "input");
    let summary = match cmd {
        Command::Synth(_) => {
            let truth = run_synth(&cfg, &out)?;
            format!(
                "{} vehicles, {} engineered conflicts",
                truth.vehicles.len(),
                truth.conflicts.len()
            )
        }
        Command::Preprocess(_) => {
            let r = run_preprocess(&cfg, &input()?, &out)?;
            format!("{} vehicles, {} pedestrians kept", r.vehicles_kept, r.pedestrians_kept)
        }
        Command::Train(_) => {
            let r = run_train(&cfg, &input()?, &out)?;
            let macro_f1 = r.maneuver_metrics.last().map_or(f64::NAN, |m| m.f1.0);
            format!(
                "{} cluster models, maneuver macro F1 {macro_f1:.3}",
                r.clusters_trained.len()
            )
        }
        Command::Risk { models, .. } => {
            let models = required(models.as_ref(), cfg.paths.models.as_ref(), "model directory")?;
            let r = run_risk(&cfg, &input()?, &models, &out)?;
            let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.3}"));
            format!(
                "{} pairs, {} conflicts, sensitivity {}, false alarm rate {}, AUC {}",
                r.co_present_pairs,
                r.ground_truth_conflicts,
                show(r.sensitivity),
                show(r.false_alarm_rate),
                show(r.auc)
            )
        }
    };
    Ok(format!("{summary}; wrote {}", out.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let stage = cli.command.name();
    match run(&cli.command) {
        Ok(summary) => {
            println!("{stage}: {summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {stage}: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
