use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlhead_core::data::{Backbone, ExperimentKind};
use tlhead_core::experiments::TableFormat;
use tlhead_core::{Error, HeadKind};

mod commands;

/// Train and compare transfer-learning classifier heads over exported CNN features.
#[derive(Debug, Parser)]
#[command(name = "tlhead", version)]
struct Cli {
    /// Seed for splits, initialisation and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the matrix kernels (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output format.
    #[arg(long, global = true, default_value = "text")]
    format: TableFormat,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic feature file shaped like an exporter's output.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "vgg19")]
        backbone: Backbone,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        /// Distance of each class centre from the origin, in noise standard deviations.
        #[arg(long, default_value_t = 4.0)]
        separation: f64,
        /// Feature width (defaults to the backbone's).
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Show the train/validation/test split of a class selection.
    Split {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        /// Also write the split as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one head on a split and report test accuracy.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        head: HeadKind,
        #[command(flatten)]
        overrides: TrainArgs,
        /// Where to save the trained head (`.ftb`, with a `.json` spec alongside).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test accuracy of a saved head.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Split JSON from `split --out`; the test part is evaluated. Without
        /// it every image of the selected classes is used.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Confidence similarity of each class to the pretrained classes.
    Similarity {
        #[arg(long)]
        features: PathBuf,
    },
    /// Run an experiment grid from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a saved report as tables.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Feature container written by the exporter or `synth`.
    #[arg(long)]
    features: PathBuf,
    /// A-type selection: the first `n` classes of this species.
    #[arg(long, conflicts_with = "mixed")]
    species: Option<String>,
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// B-type selection: a seeded sample of classes from every species.
    #[arg(long)]
    mixed: bool,
    #[arg(long, default_value_t = 3)]
    per_species: usize,
}

impl DataArgs {
    fn kind(&self) -> Result<ExperimentKind, Error> {
        match (&self.species, self.mixed) {
            (Some(s), _) => Ok(ExperimentKind::AType {
                species: s.clone(),
                n: self.n,
            }),
            (None, true) => Ok(ExperimentKind::BType {
                per_species: self.per_species,
            }),
            (None, false) => Err(Error::Config("select classes with --species NAME or --mixed".into())),
        }
    }
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Training fraction of the per-class budget.
    #[arg(long, default_value_t = 0.1)]
    f: f64,
    /// Images per class the fractions refer to.
    #[arg(long, default_value_t = 500)]
    j: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    no_early_stop: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::MissingClasses(_) => 2,
        Error::Diverged { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
