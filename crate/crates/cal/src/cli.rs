//! Command-line interface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ablation::AblationKind;

#[derive(Debug, Parser)]
#[command(name = "cal", version, about = "Contrastive association learning over fixed embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed (the synth seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; results go to `<out>/<config hash prefix>/`. For `synth`
    /// this is the scenario directory itself.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Worker threads for multi-run commands.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// The embedding TSV has a header line.
    #[arg(long, global = true)]
    pub header: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and filter the inputs, write the reduced embeddings and positives.
    Ingest,
    /// Train a model.
    Train {
        /// Train once per configured seed and summarize.
        #[arg(long)]
        multi_seed: bool,
    },
    /// Evaluate a trained model.
    Eval {
        /// Defaults to `model.ckpt` in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run one ablation.
    Ablate {
        #[arg(value_enum)]
        which: AblationKind,
    },
    /// Sanity checks on the dataset, plus the shuffled ablation.
    Diagnose {
        #[arg(long)]
        skip_shuffled: bool,
    },
    /// Sweep one setting.
    Sweep {
        #[arg(value_enum)]
        axis: SweepAxis,
        /// Model for the lambda and cb_threshold sweeps; trained if absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a synthetic scenario in the input formats.
    Synth(SynthArgs),
    /// Write transformed embeddings and optionally a distance matrix.
    Export {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        distance: Option<DistanceFormat>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    Confidence,
    Lambda,
    #[value(name = "cb_threshold")]
    CbThreshold,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Confidence => "confidence",
            SweepAxis::Lambda => "lambda",
            SweepAxis::CbThreshold => "cb_threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceFormat {
    Tsv,
    Bin,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// latent_signal, clustered_positives, degree_confound or no_signal.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Full scenario spec as JSON; the flags above override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
}
