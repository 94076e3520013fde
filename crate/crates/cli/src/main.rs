use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dflab::commands::{self, Context, ModalityChoice, ToggleFlags};
use dflab::config::ExperimentConfig;
use dflab::CliError;
use dflab_core::baselines::BaselineKind;
use dflab_core::distill::EncoderLoss;

#[derive(Parser)]
#[command(name = "dflab", version, about = "Data-free cross-modal distillation experiments")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rerun stages even when the manifest says they are current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Photo,
    Sketch,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderLossArg {
    Infonce,
    Triplet,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMethod {
    Full,
    ClassifierOnly,
}

#[derive(clap::Args)]
struct Toggles {
    #[arg(long)]
    no_sem: bool,
    #[arg(long)]
    no_align: bool,
    #[arg(long)]
    no_modal: bool,
    #[arg(long)]
    no_adv: bool,
    #[arg(long)]
    no_enc: bool,
    #[arg(long, value_enum)]
    encoder_loss: Option<EncoderLossArg>,
}

impl Toggles {
    fn flags(&self) -> ToggleFlags {
        ToggleFlags {
            no_sem: self.no_sem,
            no_align: self.no_align,
            no_modal: self.no_modal,
            no_adv: self.no_adv,
            no_enc: self.no_enc,
            encoder_loss: self.encoder_loss.map(|l| match l {
                EncoderLossArg::Infonce => EncoderLoss::QueuedInfonce,
                EncoderLossArg::Triplet => EncoderLoss::Triplet,
            }),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic paired dataset and its train/test split.
    GenData,
    /// Train the photo and/or sketch teacher on the train split.
    TrainTeachers {
        #[arg(long, value_enum, default_value = "both")]
        modality: ModalityArg,
    },
    /// Data-free distillation into a photo and a sketch encoder.
    TrainDfl {
        #[command(flatten)]
        toggles: Toggles,
    },
    /// Train and evaluate one baseline.
    TrainBaseline {
        /// classifier_only, unimodal_distill, gaussian_prior, weight_average, metadata_recon or data_dependent.
        #[arg(long)]
        method: String,
    },
    /// Sketch-to-photo retrieval on the test split.
    Evaluate {
        #[arg(long, value_enum, default_value = "full")]
        method: EvalMethod,
        /// Run directory under dfl/ to evaluate, e.g. no-align.
        #[arg(long, default_value = "full")]
        run: String,
    },
    /// The nine-row toggle matrix over the configured seeds.
    Ablate,
    /// Full method with teachers on partially overlapping class sets.
    SweepOverlap,
    /// Photo and sketch teachers trained on two dataset variants.
    CrossTeachers {
        /// Exported dataset directory to use as variant B.
        #[arg(long)]
        variant_b: Option<PathBuf>,
    },
    /// Print the reference config with every default.
    PrintConfig,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let ctx = Context::new(cfg, cli.seed, cli.out, cli.force);
    match cli.command {
        Command::GenData => {
            commands::gen_data(&ctx)?;
        }
        Command::TrainTeachers { modality } => {
            let which = match modality {
                ModalityArg::Photo => ModalityChoice::Photo,
                ModalityArg::Sketch => ModalityChoice::Sketch,
                ModalityArg::Both => ModalityChoice::Both,
            };
            commands::train_teachers(&ctx, which)?;
        }
        Command::TrainDfl { toggles } => {
            commands::train_dfl(&ctx, &toggles.flags())?;
        }
        Command::TrainBaseline { method } => {
            let kind = BaselineKind::parse(&method).ok_or_else(|| {
                let names: Vec<&str> = BaselineKind::ALL.iter().map(|k| k.name()).collect();
                CliError::Config(format!("unknown baseline {method:?}; expected one of {}", names.join(", ")))
            })?;
            commands::train_baseline(&ctx, kind)?;
        }
        Command::Evaluate { method, run } => {
            let method = match method {
                EvalMethod::Full => "full",
                EvalMethod::ClassifierOnly => "classifier_only",
            };
            commands::evaluate(&ctx, method, &run)?;
        }
        Command::Ablate => {
            commands::ablate(&ctx)?;
        }
        Command::SweepOverlap => {
            commands::sweep_overlap(&ctx)?;
        }
        Command::CrossTeachers { variant_b } => {
            commands::cross_teachers(&ctx, variant_b.as_deref())?;
        }
        Command::PrintConfig => print!("{}", ExperimentConfig::reference()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
