//! Simulation designs, analytic truths, and Monte Carlo experiment runners.

pub mod dgp;
pub mod experiment;
pub mod law;

pub use dgp::{true_propensity, Dgp, DgpConfig, COVARIATE_DIM};
pub use experiment::{
    find_summary, mise_grid, mise_trapezoid, rep_seed, run_experiment, summarize, write_rows, EstimatorSpec,
    ExperimentConfig, ExperimentRow, LearnerChoice, MetricSummary, ThresholdChoice,
};
pub use law::{BandlimitedSincTruth, ControlLaw, ControlSampler, LawSampler, OutcomeLaw};
