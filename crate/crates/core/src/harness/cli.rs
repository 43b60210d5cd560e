//! Command-line front end. Failures print one JSON object
//! `{"error": <kind>, "message": <text>}` on stderr and exit with status 2.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::{
    build_task_data, compute_reference_fim, finetune, evaluate, pretrain_reference, random_sweep, read_results_csv, select_and_summarize, write_front_csv,
    write_results_csv, RunConfig, SweepSpec, TrialArtifacts,
};
use crate::error::{Error, Result};
use crate::eval::{pareto_front, FrontMode, ParetoPoint};
use crate::fim::{fim_stats, load_fim, load_params, save_fim, save_params, DiagFim};
use crate::nn::ModelState;

#[derive(Debug, Parser)]
#[command(name = "ewc-lab", version, about = "Fisher-regularized fine-tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FrontArg {
    Nondominated,
    ConvexHull,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain the reference model and save its parameters.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the reference model's diagonal Fisher.
    Fim {
        #[arg(long)]
        config: PathBuf,
        /// Saved reference parameters; pretrains from the config when absent.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-layer statistics JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Run one fine-tuning trial and write its result JSON.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        fim: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random hyperparameter sweep with validation-based selection.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Sweep spec JSON; defaults to the built-in grid for the configured penalty.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        fim: Option<PathBuf>,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        selection: PathBuf,
    },
    /// Pareto fronts of (test top-1, reverse-transfer top-1) from a results CSV.
    Pareto {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: FrontArg,
    },
    /// Per-layer statistics of a saved Fisher.
    FimStats {
        #[arg(long)]
        fim: PathBuf,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run(args: impl IntoIterator<Item = impl Into<OsString> + Clone>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
                }
                ErrorKind::InvalidSubcommand => return report("unknown_subcommand", e.to_string()),
                _ => return report("usage", e.to_string()),
            }
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => report(e.kind(), e.to_string()),
    }
}

fn report(kind: &str, message: String) -> i32 {
    let msg = ErrorReport { error: kind, message: message.trim_end().to_string() };
    eprintln!("{}", serde_json::to_string(&msg).expect("plain strings serialize"));
    2
}

fn read_config(path: &Path) -> Result<RunConfig> {
    RunConfig::from_json_reader(BufReader::new(File::open(path)?))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn reference_model(config: &RunConfig, params: Option<&Path>, data: &super::TaskData) -> Result<ModelState> {
    match params {
        Some(p) => {
            let m = load_params(p)?;
            if *m.spec() != config.model {
                return Err(Error::LayoutMismatch("saved parameters were produced for a different model spec".into()));
            }
            Ok(m)
        }
        None => pretrain_reference(config, data),
    }
}

fn artifacts(config: &RunConfig, params: Option<&Path>, fim: Option<&Path>) -> Result<TrialArtifacts> {
    let data = build_task_data(&config.data)?;
    let reference = reference_model(config, params, &data)?;
    let fim: Option<DiagFim> = match fim {
        Some(p) => {
            let f = load_fim(p)?;
            f.bind(&reference)?;
            Some(f)
        }
        None if config.penalty.kind.needs_fim() => Some(compute_reference_fim(&config.fim, &reference, &data)?),
        None => None,
    };
    Ok(TrialArtifacts { reference, fim, data })
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Pretrain { config, out } => {
            let cfg = read_config(&config)?;
            let data = build_task_data(&cfg.data)?;
            save_params(&pretrain_reference(&cfg, &data)?, out)
        }
        Command::Fim { config, params, out, stats } => {
            let cfg = read_config(&config)?;
            let data = build_task_data(&cfg.data)?;
            let reference = reference_model(&cfg, params.as_deref(), &data)?;
            let f = compute_reference_fim(&cfg.fim, &reference, &data)?;
            save_fim(&f, out)?;
            if let Some(s) = stats {
                write_json(&fim_stats(&f), &s)?;
            }
            Ok(())
        }
        Command::Finetune { config, params, fim, out } => {
            let cfg = read_config(&config)?;
            let arts = artifacts(&cfg, params.as_deref(), fim.as_deref())?;
            let model = finetune(&cfg, &arts)?;
            write_json(&evaluate(&cfg, &arts, &model)?, &out)
        }
        Command::Sweep { config, sweep, params, fim, results, selection } => {
            let cfg = read_config(&config)?;
            let spec: SweepSpec = match sweep {
                Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
                None => SweepSpec::default_grid(cfg.penalty.kind, cfg.seed),
            };
            spec.validate()?;
            let arts = artifacts(&cfg, params.as_deref(), fim.as_deref())?;
            let rows = random_sweep(&spec, &cfg, &arts)?;
            write_results_csv(&rows, BufWriter::new(File::create(results)?))?;
            write_json(&select_and_summarize(&rows)?, &selection)
        }
        Command::Pareto { results, out, mode } => {
            let rows = read_results_csv(BufReader::new(File::open(results)?))?;
            let points: Vec<ParetoPoint> = rows.iter().map(|r| r.pareto_point()).collect();
            let modes = match mode {
                FrontArg::Nondominated => vec![FrontMode::Nondominated],
                FrontArg::ConvexHull => vec![FrontMode::ConvexHull],
                FrontArg::Both => vec![FrontMode::Nondominated, FrontMode::ConvexHull],
            };
            let fronts = modes.into_iter().map(|m| Ok((m, pareto_front(&points, m)?))).collect::<Result<Vec<_>>>()?;
            write_front_csv(&fronts, BufWriter::new(File::create(out)?))
        }
        Command::FimStats { fim, out } => {
            let stats = fim_stats(&load_fim(fim)?);
            match out {
                Some(p) => write_json(&stats, &p),
                None => {
                    println!("{}", serde_json::to_string_pretty(&stats)?);
                    Ok(())
                }
            }
        }
    }
}
