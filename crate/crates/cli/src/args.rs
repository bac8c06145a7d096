use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "onestep",
    version,
    about = "One-step estimation and inference for counterfactual densities and embeddings"
)]
pub struct Cli {
    /// Caps the number of worker threads (default: all logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regularized one-step estimate of the treated counterfactual density on a basis.
    Estimate(EstimateArgs),
    /// One-step estimate of the bandlimited treated density with a spherical set and uniform band.
    BandEstimate(BandArgs),
    /// Kernel two-sample test of equal counterfactual outcome laws.
    KmeTest(KmeArgs),
    /// Test of equal counterfactual densities via a confidence set for their difference.
    DensityTest(DensityTestArgs),
    /// Cross-validated choice of the regularization sequence (and optionally the basis).
    Cv(CvArgs),
    /// Runs a Monte Carlo experiment described by a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisChoice {
    Cosine,
    Legendre,
    Cv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdArg {
    Bootstrap,
    Szekely,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaArg {
    Identity,
    WaldCov,
    WaldCorr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerArg {
    Logistic,
    Nw,
}

/// Flags shared by every command that reads a dataset.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Input CSV with header x1..xd,a,y.
    pub data: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = LearnerArg::Logistic)]
    pub learner: LearnerArg,
    /// Cells of the outcome grid used by the conditional density learner.
    #[arg(long = "outcome-grid", default_value_t = 500)]
    pub outcome_grid: usize,
    /// Truncation level for estimated propensities.
    #[arg(long = "propensity-floor", default_value_t = 0.01)]
    pub propensity_floor: f64,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BasisFlags {
    #[arg(long, value_enum, default_value_t = BasisChoice::Cosine)]
    pub basis: BasisChoice,
    #[arg(long, default_value_t = 64)]
    pub kmax: usize,
    /// `hard:K` or `rational:c=FLOAT,p=FLOAT`.
    #[arg(long, default_value = "rational:c=5,p=2")]
    pub beta: String,
    /// Outcome domain `LO:HI` of the basis.
    #[arg(long, default_value = "0:1")]
    pub domain: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferenceFlags {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1000)]
    pub boot: usize,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Bootstrap)]
    pub threshold: ThresholdArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub basis: BasisFlags,
    /// Also build a confidence set for the regularized parameter.
    #[arg(long)]
    pub confidence: bool,
    #[command(flatten)]
    pub inference: InferenceFlags,
    #[arg(long, value_enum, default_value_t = OmegaArg::Identity)]
    pub omega: OmegaArg,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Permits a confidence set around a cross-validated β.
    #[arg(long)]
    pub allow_selected_beta: bool,
    /// Points of the evaluation grid written to `--curve`.
    #[arg(long, default_value_t = 500)]
    pub grid: usize,
    /// CSV of estimate evaluations on a grid.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BandArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 2.0)]
    pub bandlimit: f64,
    /// Points of the importance grid representing bandlimited functions.
    #[arg(long, default_value_t = 500)]
    pub grid: usize,
    #[command(flatten)]
    pub inference: InferenceFlags,
    /// Extra points at which the estimate and pointwise standard errors are reported.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub at: Vec<f64>,
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KmeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "kernel-bw-mult", default_value_t = 1.0)]
    pub kernel_bw_mult: f64,
    #[command(flatten)]
    pub inference: InferenceFlags,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DensityTestArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub basis: BasisFlags,
    #[command(flatten)]
    pub inference: InferenceFlags,
    #[arg(long, value_enum, default_value_t = OmegaArg::Identity)]
    pub omega: OmegaArg,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long)]
    pub allow_selected_beta: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = BasisChoice::Cosine)]
    pub basis: BasisChoice,
    #[arg(long, default_value_t = 64)]
    pub kmax: usize,
    #[arg(long, default_value = "0:1")]
    pub domain: String,
    /// Largest hard threshold among the candidates.
    #[arg(long = "max-k", default_value_t = 16)]
    pub max_k: usize,
    /// Target: the treated density or the treated-minus-control difference.
    #[arg(long)]
    pub difference: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the CSV path in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the number of repetitions.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Summary JSON path; stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
