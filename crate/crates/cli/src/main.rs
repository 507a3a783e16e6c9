//! Command-line front end.
//!
//! Exit codes: 0 ok, 1 usage, 2 data, 3 numerical/solver, 4 non-finite
//! training abort.

mod manifest;
mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spectral_adapt_core::adaptation::AdaptKind;
use spectral_adapt_core::dataset::SynthConfig;
use spectral_adapt_core::model::{CxMode, ModelConfig};
use spectral_adapt_core::spectral::EigsOptions;
use spectral_adapt_core::train::TrainConfig;
use spectral_adapt_core::{Error, Variant};

#[derive(Parser)]
#[command(
    name = "spectral-adapt",
    version,
    about = "Spectral graph adaptation models for node classification"
)]
struct Cli {
    /// Worker threads for sweeps and studies (default: all cores). Results
    /// do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and cache the graph and feature spectra of a dataset.
    Spectra(SpectraArgs),
    /// Train one configuration on each split and report mean (std) accuracy.
    Train(TrainArgs),
    /// Seeded random search over the default hyperparameter grid.
    Sweep(SweepArgs),
    /// Diagnostic studies emitting plot-data JSON.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Generate a synthetic planted-partition dataset directory.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Eigen,
    EigenEigen,
    EigenConcat,
    Regeigen,
    Lr,
    Mlp,
}

impl From<ModelArg> for Variant {
    fn from(m: ModelArg) -> Variant {
        match m {
            ModelArg::Eigen => Variant::Eigen,
            ModelArg::EigenEigen => Variant::EigenEigen,
            ModelArg::EigenConcat => Variant::EigenConcat,
            ModelArg::Regeigen => Variant::Regeigen,
            ModelArg::Lr => Variant::Lr,
            ModelArg::Mlp => Variant::Mlp,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AdaptArg {
    C1,
    C2,
    Frozen,
}

impl From<AdaptArg> for AdaptKind {
    fn from(a: AdaptArg) -> AdaptKind {
        match a {
            AdaptArg::C1 => AdaptKind::C1,
            AdaptArg::C2 => AdaptKind::C2,
            AdaptArg::Frozen => AdaptKind::Frozen,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CxArg {
    SqrtEigenvalues,
    Eigenvalues,
}

impl From<CxArg> for CxMode {
    fn from(c: CxArg) -> CxMode {
        match c {
            CxArg::SqrtEigenvalues => CxMode::SqrtEigenvalues,
            CxArg::Eigenvalues => CxMode::Eigenvalues,
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    /// Explicit splits file: {"splits": [{"train": [...], "val": [...],
    /// "test": [...]}]}.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Generate this many seeded 48/32/20 random splits instead.
    #[arg(long, conflicts_with = "splits")]
    gen_splits: Option<usize>,
    /// Seed for generated splits.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    /// Model variant.
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Adaptation function.
    #[arg(long, value_enum, default_value = "c2")]
    adapt: AdaptArg,
    /// Bin count for tied adaptation parameters (regeigen).
    #[arg(long)]
    bins: Option<usize>,
    /// Scale applied to the eigen embedding block.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Concatenate reduced raw features to the eigen-eigen embedding.
    #[arg(long)]
    order0: bool,
    /// Eigen components (default: min(n, 2048)).
    #[arg(long)]
    d: Option<usize>,
    /// Feature components (default: min(n, m, 2048)).
    #[arg(long)]
    k: Option<usize>,
    /// Hidden width of the classifier head (0 = linear; forced 0 for lr).
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Fixed feature-side diagonal derivation.
    #[arg(long, value_enum, default_value = "sqrt-eigenvalues")]
    cx: CxArg,
}

impl ModelArgs {
    fn to_config(&self) -> Result<ModelConfig, Error> {
        if self.d == Some(0) {
            return Err(Error::invalid("--d must be at least 1"));
        }
        if self.k == Some(0) {
            return Err(Error::invalid("--k must be at least 1"));
        }
        let variant: Variant = self.model.into();
        let hidden = if variant == Variant::Lr { 0 } else { self.hidden };
        Ok(ModelConfig {
            variant,
            d: self.d.unwrap_or(0),
            k: self.k.unwrap_or(0),
            hidden,
            dropout: self.dropout,
            scale_s: self.scale,
            use_order0: self.order0,
            adapt_kind: if variant.uses_basis() { self.adapt.into() } else { AdaptKind::Frozen },
            num_bins: self.bins,
            cx_mode: self.cx.into(),
        })
    }
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// L1 strength on the realized adaptation scales.
    #[arg(long, default_value_t = 0.0)]
    l1: f64,
    #[arg(long, default_value_t = 300)]
    max_epochs: usize,
    #[arg(long, default_value_t = 30)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ScheduleArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            l1_lambda: self.l1,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Eigensolver iteration cap.
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Eigensolver per-column residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Cache directory (overrides SPECTRAL_ADAPT_CACHE).
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl SolverArgs {
    fn to_options(&self) -> EigsOptions {
        EigsOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            ..EigsOptions::default()
        }
    }
}

#[derive(Args)]
struct SpectraArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write a checkpoint of the first split's trained model.
    #[arg(long)]
    save_model: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Number of grid points to evaluate (the whole grid when it is
    /// smaller).
    #[arg(long)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-class eigenvector weights from a linear probe.
    Weights(WeightsArgs),
    /// Adapted-to-original eigenvalue ratios from a train report.
    Ratio(RatioArgs),
    /// Test accuracy versus eigen component count.
    Components(ComponentsArgs),
    /// Test accuracy versus labeled-training fraction.
    Labels(LabelsArgs),
    /// Average model ranks over homophilic/heterophilic dataset groups.
    Rank(RankArgs),
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    /// Which split to probe.
    #[arg(long, default_value_t = 0)]
    split_index: usize,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct RatioArgs {
    /// Train output JSON holding the adaptation parameter dump.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Which fit report inside the file.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct ComponentsArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Comma-separated component counts.
    #[arg(long, value_delimiter = ',', required = true)]
    d_list: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelsArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Comma-separated fractions of the train pool.
    #[arg(long, value_delimiter = ',', required = true)]
    fractions: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankArgs {
    /// Accuracy table JSON: models, datasets with homophily and accuracies.
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 0.01)]
    p_intra: f64,
    #[arg(long, default_value_t = 0.1)]
    p_inter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    #[arg(long, default_value_t = 1.0)]
    feature_noise: f64,
    /// Plant a one-hot class signal in the features.
    #[arg(long)]
    informative: bool,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArg(_) => 1,
        Error::Data(_) | Error::Io(_) | Error::Json(_) => 2,
        Error::SolverDidNotConverge { .. } => 3,
        Error::NonFinite(_) => 4,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::invalid(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Spectra(a) => ops::cmd_spectra(
            &a.data,
            a.d,
            a.k,
            &a.out,
            a.solver.cache.as_deref(),
            &a.solver.to_options(),
        ),
        Command::Train(a) => ops::cmd_train(
            &a.data,
            a.split.splits.as_deref(),
            a.split.gen_splits,
            a.split.split_seed,
            a.model.to_config()?,
            a.schedule.to_config(),
            &a.out,
            a.save_model.as_deref(),
            a.solver.cache.as_deref(),
            &a.solver.to_options(),
        ),
        Command::Sweep(a) => ops::cmd_sweep(
            &a.data,
            a.split.splits.as_deref(),
            a.split.gen_splits,
            a.split.split_seed,
            a.model.to_config()?,
            TrainConfig { seed: a.seed, ..TrainConfig::default() },
            a.trials,
            a.seed,
            &a.out,
            a.solver.cache.as_deref(),
            &a.solver.to_options(),
        ),
        Command::Analyze(AnalyzeCommand::Weights(a)) => ops::cmd_analyze_weights(
            &a.data,
            a.split.splits.as_deref(),
            a.split.gen_splits,
            a.split.split_seed,
            a.split_index,
            a.d,
            &a.out,
            a.solver.cache.as_deref(),
            &a.solver.to_options(),
        ),
        Command::Analyze(AnalyzeCommand::Ratio(a)) => ops::cmd_analyze_ratio(
            &a.report,
            &a.data,
            a.index,
            &a.out,
            a.solver.cache.as_deref(),
            &a.solver.to_options(),
        ),
        Command::Analyze(AnalyzeCommand::Components(a)) => ops::cmd_analyze_components(
            &a.data,
            a.split.splits.as_deref(),
            a.split.gen_splits,
            a.split.split_seed,
            a.model.to_config()?,
            a.schedule.to_config(),
            &a.d_list,
            &a.out,
        ),
        Command::Analyze(AnalyzeCommand::Labels(a)) => ops::cmd_analyze_labels(
            &a.data,
            a.split.splits.as_deref(),
            a.split.gen_splits,
            a.split.split_seed,
            a.model.to_config()?,
            a.schedule.to_config(),
            &a.fractions,
            &a.out,
        ),
        Command::Analyze(AnalyzeCommand::Rank(a)) => ops::cmd_analyze_rank(&a.table, &a.out),
        Command::Synth(a) => ops::cmd_synth(
            &SynthConfig {
                n: a.n,
                classes: a.classes,
                p_intra: a.p_intra,
                p_inter: a.p_inter,
                feature_dim: a.feature_dim,
                feature_noise: a.feature_noise,
                informative: a.informative,
                seed: a.seed,
            },
            &a.out,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
