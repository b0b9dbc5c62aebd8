//! `onestep`: config-driven driver for every stage of the distillation lab.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{CliError, Run};

#[derive(Parser)]
#[command(name = "onestep", version, about = "Desk-scale one-step diffusion distillation")]
struct Cli {
    /// Experiment config (`key = value` lines); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory; overrides the config's out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Scheme {
    Full,
    Efficient,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Init {
    TeacherRegression,
    Scratch,
}

#[derive(Subcommand)]
enum Command {
    /// Train the conditional teacher.
    TrainTeacher,
    /// Train the autoencoder, the distilled tiny decoder and the joint embedder.
    TrainAux,
    /// Fit a one-step student to multi-step teacher samples.
    Baseline,
    /// Distill the teacher into a one-step student.
    Distill {
        #[arg(long, value_enum, default_value = "full")]
        scheme: Scheme,
        #[arg(long, value_enum, default_value = "teacher-regression")]
        init: Init,
        /// Add the paired image regularizer (needs reg_pairs and reg_weight).
        #[arg(long)]
        regularize: bool,
    },
    /// Evaluate a checkpoint and write one metrics row.
    Eval { checkpoint: PathBuf },
    /// Write `λ·A + (1 − λ)·B` as a merged checkpoint.
    Merge {
        a: PathBuf,
        b: PathBuf,
        /// Overrides the config's merge_lambda.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate every point of a λ grid between two students.
    Sweep { a: PathBuf, b: PathBuf },
    /// Generate along noise and prompt-embedding slerp paths.
    SlerpDemo {
        checkpoint: PathBuf,
        /// Prompt for the noise path and start of the prompt path.
        #[arg(long)]
        from: Option<String>,
        /// End of the prompt path.
        #[arg(long)]
        to: Option<String>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let run = Run::open(cli.config.as_deref(), cli.seed, cli.out.as_deref())?;
    match cli.command {
        Command::TrainTeacher => run.train_teacher(),
        Command::TrainAux => run.train_aux(),
        Command::Baseline => run.baseline(),
        Command::Distill { scheme, init, regularize } => run.distill(scheme, init, regularize),
        Command::Eval { checkpoint } => run.eval(&checkpoint),
        Command::Merge { a, b, lambda, output } => run.merge(&a, &b, lambda, output.as_deref()),
        Command::Sweep { a, b } => run.sweep(&a, &b),
        Command::SlerpDemo { checkpoint, from, to } => run.slerp_demo(&checkpoint, from.as_deref(), to.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
