//! Monte Carlo experiment runner: repeated datasets, estimator sweeps, tidy CSV rows.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{cv_select, CvConfig};
use crate::data::{split_folds, Dataset};
use crate::density::{fit_density, regularized_onestep, DensityConfig, DensityTarget};
use crate::error::{Error, Result};
use crate::hilbert::{project_callable, trapezoid, Basis, BasisKind, QuadGrid, RegRule, RegSeq};
use crate::inference::{
    band_confidence, cs_membership, density_confidence, equality_test, mmd_test, EqualityConfig, MmdConfig,
    StandardizerKind, ThresholdMethod,
};
use crate::nuisance::{Learners, PropensityMethod};
use crate::rkhs::{band_onestep_arm, BandConfig};
use crate::sim::dgp::{Dgp, DgpConfig};
use crate::sim::law::BandlimitedSincTruth;

/// Nodes of the trapezoid rule used for integrated squared errors on `[0, 1]`.
pub const MISE_GRID: usize = 500;

/// `∫ (estimate − truth)²` by the trapezoid rule on the given nodes.
pub fn mise_trapezoid(nodes: &[f64], estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != nodes.len() || truth.len() != nodes.len() {
        return Err(Error::DimensionMismatch { expected: nodes.len(), got: estimate.len().min(truth.len()) });
    }
    let sq: Vec<f64> = estimate.iter().zip(truth).map(|(e, t)| (e - t) * (e - t)).collect();
    Ok(trapezoid(nodes, &sq))
}

/// `Σ_k s_k² (estimate_k − truth_k)²` on an importance grid.
pub fn mise_grid(grid: &QuadGrid, estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != grid.len() || truth.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: estimate.len().min(truth.len()) });
    }
    Ok(grid.scales.iter().zip(estimate.iter().zip(truth)).map(|(s, (e, t))| (s * (e - t)).powi(2)).sum())
}

fn unit_nodes(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

fn default_kmax() -> usize {
    crate::hilbert::DEFAULT_KMAX
}
fn default_beta() -> String {
    "rational:c=5,p=2".into()
}
fn default_folds() -> usize {
    2
}
fn default_boot() -> usize {
    crate::inference::DEFAULT_BOOT
}
fn default_lambda() -> f64 {
    crate::inference::DEFAULT_LAMBDA
}
fn default_one() -> f64 {
    1.0
}
fn default_bandlimit() -> f64 {
    2.0
}
fn default_band_grid() -> usize {
    crate::rkhs::DEFAULT_BAND_GRID
}
fn default_sigma_mult() -> f64 {
    4.0
}
fn default_cv_max_k() -> usize {
    16
}
fn default_cosine() -> BasisKind {
    BasisKind::Cosine
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdChoice {
    #[default]
    Bootstrap,
    Szekely,
}

impl ThresholdChoice {
    pub fn method(self, reps: usize) -> ThresholdMethod {
        match self {
            ThresholdChoice::Bootstrap => ThresholdMethod::Bootstrap { reps },
            ThresholdChoice::Szekely => ThresholdMethod::Szekely,
        }
    }
}

/// One estimator or procedure evaluated on every simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSpec {
    /// Plug-in and regularized one-step treated density; integrated squared error on `[0, 1]`.
    Density {
        #[serde(default = "default_cosine")]
        basis: BasisKind,
        #[serde(default = "default_kmax")]
        kmax: usize,
        #[serde(default = "default_beta")]
        beta: String,
        #[serde(default = "default_folds")]
        folds: usize,
    },
    /// Plug-in and one-step bandlimited treated density, optionally with the spherical set.
    Band {
        #[serde(default = "default_bandlimit")]
        bandlimit: f64,
        #[serde(default = "default_band_grid")]
        grid: usize,
        #[serde(default = "default_sigma_mult")]
        sigma_mult: f64,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default)]
        coverage: bool,
        #[serde(default = "default_boot")]
        boot: usize,
    },
    EqualityTest {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_cosine")]
        basis: BasisKind,
        #[serde(default = "default_kmax")]
        kmax: usize,
        #[serde(default = "default_beta")]
        beta: String,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default = "identity_kind")]
        omega: StandardizerKind,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        threshold: ThresholdChoice,
        #[serde(default = "default_boot")]
        boot: usize,
    },
    MmdTest {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_one")]
        bandwidth_mult: f64,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default = "default_boot")]
        boot: usize,
    },
    /// Both thresholds for the spherical set of the density difference on the same data.
    ThresholdCompare {
        #[serde(default = "default_cosine")]
        basis: BasisKind,
        #[serde(default = "default_kmax")]
        kmax: usize,
        #[serde(default = "default_beta")]
        beta: String,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default = "default_boot")]
        boot: usize,
    },
    /// Cross-validated hard threshold versus the best candidate in hindsight.
    CvOracle {
        #[serde(default = "default_cosine")]
        basis: BasisKind,
        #[serde(default = "default_kmax")]
        kmax: usize,
        #[serde(default = "default_cv_max_k")]
        max_k: usize,
        #[serde(default = "default_folds")]
        folds: usize,
    },
}

fn identity_kind() -> StandardizerKind {
    StandardizerKind::Identity
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LearnerChoice {
    #[default]
    Logistic,
    Nw,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    pub estimators: Vec<EstimatorSpec>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub out_path: Option<PathBuf>,
    #[serde(default)]
    pub learner: LearnerChoice,
    /// Cells of the outcome grid used by the conditional density learner.
    #[serde(default)]
    pub outcome_grid: Option<usize>,
    /// Lower truncation of estimated propensities; the learner default when absent.
    #[serde(default)]
    pub propensity_floor: Option<f64>,
    /// Mirror outcome smoothing about the ends of a bounded support.
    #[serde(default)]
    pub reflect_boundary: bool,
}

impl ExperimentConfig {
    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() || self.n_list.is_empty() || self.reps == 0 {
            return Err(Error::InvalidInput("experiment needs estimators, sample sizes and reps > 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!("α must lie in (0, 1), got {}", self.alpha)));
        }
        for spec in &self.estimators {
            let beta = match spec {
                EstimatorSpec::Density { beta, .. }
                | EstimatorSpec::EqualityTest { beta, .. }
                | EstimatorSpec::ThresholdCompare { beta, .. } => Some(beta),
                _ => None,
            };
            if let Some(b) = beta {
                b.parse::<RegRule>()?.validate()?;
            }
        }
        Ok(())
    }

    pub fn learners(&self, dgp: &Dgp) -> Learners {
        let mut l = if dgp.unit_support() { Learners::default() } else { Learners::unbounded() };
        l.propensity = match self.learner {
            LearnerChoice::Logistic => PropensityMethod::Logistic,
            LearnerChoice::Nw => PropensityMethod::NadarayaWatson,
        };
        if let Some(g) = self.outcome_grid {
            l.grid_cells = g;
        }
        if let Some(eps) = self.propensity_floor {
            l.eps = eps;
        }
        l.reflect_boundary = self.reflect_boundary;
        l
    }
}

/// One tidy output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub dgp: String,
    pub estimator: String,
    pub n: usize,
    pub rep: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

/// Mean and standard error of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub estimator: String,
    pub n: usize,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one `(n, rep)` cell of an experiment.
pub fn rep_seed(seed: u64, n: usize, rep: usize) -> u64 {
    splitmix(splitmix(seed ^ splitmix(n as u64)) ^ rep as u64)
}

type Metrics = Vec<(String, String, f64)>;

fn basis_of(kind: BasisKind, kmax: usize) -> Result<Basis> {
    Basis::new(kind, kmax)
}

fn run_spec(
    spec: &EstimatorSpec,
    dgp: &Dgp,
    data: &Dataset,
    learners: &Learners,
    alpha: f64,
    seed: u64,
) -> Result<Metrics> {
    let mut out = Metrics::new();
    let mut push = |est: &str, metric: &str, v: f64| out.push((est.to_string(), metric.to_string(), v));
    match spec {
        EstimatorSpec::Density { basis, kmax, beta, folds } => {
            require_unit(dgp)?;
            let basis = basis_of(*basis, *kmax)?;
            let beta = RegSeq::new(beta.parse()?, *kmax)?;
            let cfg = DensityConfig { basis, beta, folds: *folds, seed };
            let fit = regularized_onestep(data, &cfg, &learners_for(learners, &basis))?;
            let nodes = unit_nodes(MISE_GRID);
            let truth: Vec<f64> = nodes.iter().map(|&y| dgp.treated_density(y)).collect();
            push("density_plugin", "mise", mise_trapezoid(&nodes, &fit.plugin.eval_many(&nodes)?, &truth)?);
            push("density_onestep", "mise", mise_trapezoid(&nodes, &fit.regularized.eval_many(&nodes)?, &truth)?);
        }
        EstimatorSpec::Band { bandlimit, grid, sigma_mult, folds, coverage, boot } => {
            let cfg = BandConfig {
                b: *bandlimit,
                grid_points: *grid,
                sigma_mult: *sigma_mult,
                folds: *folds,
                seed,
                extra_points: vec![0.0],
            };
            let split = split_folds(data.len(), *folds, seed)?;
            let fit = band_onestep_arm(data, 1, &cfg, &split, learners)?;
            let truth_fn = BandlimitedSincTruth::new(*bandlimit)?;
            if dgp.unit_support() {
                return Err(Error::InvalidInput("band experiments need the sinc mixture design".into()));
            }
            let truth: Vec<f64> = fit.grid.points.iter().map(|&y| truth_fn.eval(y)).collect();
            let n = data.len() as f64;
            push("band_plugin", "n_mise", n * mise_grid(&fit.grid, &fit.plugin.values, &truth)?);
            push("band_onestep", "n_mise", n * mise_grid(&fit.grid, &fit.estimate.values, &truth)?);
            if *coverage {
                let report = band_confidence(&fit, alpha, ThresholdMethod::Bootstrap { reps: *boot }, seed)?;
                let truth_coords: Vec<f64> = truth.iter().zip(&fit.grid.scales).map(|(t, s)| t * s).collect();
                push("band_onestep", "covered", f64::from(u8::from(cs_membership(&truth_coords, &report)?)));
                let radius = report.radius.expect("band reports carry a radius");
                let z = crate::stats::normal_quantile(1.0 - alpha / 2.0);
                let wald = z * fit.pointwise_sd(0) / n.sqrt();
                push("band_onestep", "zeta", report.threshold.value);
                push("band_onestep", "width_ratio", radius / wald);
            }
        }
        EstimatorSpec::EqualityTest { label, basis, kmax, beta, folds, omega, lambda, threshold, boot } => {
            require_unit(dgp)?;
            let basis = basis_of(*basis, *kmax)?;
            let cfg = EqualityConfig {
                basis,
                beta: RegSeq::new(beta.parse()?, *kmax)?,
                folds: *folds,
                seed,
                omega: *omega,
                lambda: *lambda,
                alpha,
                threshold: threshold.method(*boot),
                allow_selected_beta: false,
            };
            let report = equality_test(data, &cfg, &learners_for(learners, &basis))?;
            let name = label.clone().unwrap_or_else(|| format!("equality_{}_{}", basis.kind, omega));
            push(&name, "rejected", f64::from(u8::from(report.reject)));
            push(&name, "statistic", report.statistic);
            push(&name, "zeta", report.zeta_hat);
        }
        EstimatorSpec::MmdTest { label, bandwidth_mult, folds, boot } => {
            let cfg = MmdConfig {
                bandwidth_mult: *bandwidth_mult,
                folds: *folds,
                seed,
                alpha,
                threshold: ThresholdMethod::Bootstrap { reps: *boot },
                ..MmdConfig::default()
            };
            let report = mmd_test(data, &cfg, learners)?;
            let name = label.clone().unwrap_or_else(|| "mmd".into());
            push(&name, "rejected", f64::from(u8::from(report.reject)));
            push(&name, "statistic", report.statistic);
            push(&name, "zeta", report.zeta_hat);
        }
        EstimatorSpec::ThresholdCompare { basis, kmax, beta, folds, boot } => {
            require_unit(dgp)?;
            let basis = basis_of(*basis, *kmax)?;
            let beta = RegSeq::new(beta.parse()?, *kmax)?;
            let split = split_folds(data.len(), *folds, seed)?;
            let fit =
                fit_density(data, DensityTarget::Difference, &basis, &beta, &split, &learners_for(learners, &basis))?;
            let id = StandardizerKind::Identity;
            let boot =
                density_confidence(&fit, id, 1.0, alpha, ThresholdMethod::Bootstrap { reps: *boot }, seed, false)?;
            let conservative = density_confidence(&fit, id, 1.0, alpha, ThresholdMethod::Szekely, seed, false)?;
            push("threshold_compare", "zeta_bootstrap", boot.threshold.value);
            push("threshold_compare", "zeta_szekely", conservative.threshold.value);
        }
        EstimatorSpec::CvOracle { basis, kmax, max_k, folds } => {
            require_unit(dgp)?;
            let basis = basis_of(*basis, *kmax)?;
            let learn = learners_for(learners, &basis);
            let mut cv_cfg = CvConfig::hard_thresholds(basis, seed);
            cv_cfg.candidates = (0..=*max_k).map(|k| RegRule::HardThreshold { k }).collect();
            let selected = cv_select(data, &cv_cfg, &learn)?;
            let cfg = DensityConfig { basis, beta: RegSeq::hard(0, *kmax), folds: *folds, seed };
            let base = regularized_onestep(data, &cfg, &learn)?;
            let truth = project_callable(|y| dgp.treated_density(y), &basis, 4096)?;
            let mut risks = Vec::new();
            for k in 0..=*max_k {
                let fit = base.with_beta(RegSeq::hard(k, *kmax))?;
                risks.push(fit.regularized.sub(&truth)?.norm().powi(2));
            }
            let chosen = match selected.beta.rule {
                RegRule::HardThreshold { k } => k,
                RegRule::Rational { .. } => unreachable!("only hard thresholds are candidates"),
            };
            let best = risks.iter().cloned().fold(f64::INFINITY, f64::min);
            push("cv_oracle", "selected_k", chosen as f64);
            push("cv_oracle", "ise_ratio", risks[chosen] / best);
            for (k, r) in risks.iter().enumerate() {
                push("cv_oracle", &format!("ise_k{k}"), *r);
            }
        }
    }
    Ok(out)
}

fn require_unit(dgp: &Dgp) -> Result<()> {
    if !dgp.unit_support() {
        return Err(Error::InvalidInput("basis estimators need a design on [0, 1]".into()));
    }
    Ok(())
}

fn learners_for(base: &Learners, basis: &Basis) -> Learners {
    Learners { support: crate::nuisance::SupportRule::Fixed { lo: basis.lo, hi: basis.hi }, ..base.clone() }
}

/// Runs every `(n, rep)` cell and returns rows in deterministic order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    let dgp = Dgp::new(config.dgp.clone())?;
    let learners = config.learners(&dgp);
    let label = config.dgp.label();
    let mut rows = Vec::new();
    for &n in &config.n_list {
        log::info!("{label}: n = {n}, {} reps", config.reps);
        let cells: Vec<Vec<ExperimentRow>> = (0..config.reps)
            .into_par_iter()
            .map(|rep| -> Result<Vec<ExperimentRow>> {
                let seed = rep_seed(config.seed, n, rep);
                let data = dgp.generate(n, seed)?;
                let mut out = Vec::new();
                for spec in &config.estimators {
                    for (estimator, metric, value) in run_spec(spec, &dgp, &data, &learners, config.alpha, seed)? {
                        out.push(ExperimentRow { dgp: label.clone(), estimator, n, rep, metric, value, seed });
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        rows.extend(cells.into_iter().flatten());
    }
    if let Some(path) = &config.out_path {
        write_rows(path, &rows)?;
    }
    Ok(rows)
}

pub fn write_rows(path: impl AsRef<Path>, rows: &[ExperimentRow]) -> Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per `(estimator, n, metric)` means in order of first appearance.
pub fn summarize(rows: &[ExperimentRow]) -> Vec<MetricSummary> {
    let mut keys: Vec<(String, usize, String)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let key = (r.estimator.clone(), r.n, r.metric.clone());
        match keys.iter().position(|k| *k == key) {
            Some(i) => values[i].push(r.value),
            None => {
                keys.push(key);
                values.push(vec![r.value]);
            }
        }
    }
    keys.into_iter()
        .zip(values)
        .map(|((estimator, n, metric), v)| {
            let mean = crate::stats::mean(&v);
            let se = if v.len() > 1 { crate::stats::sd(&v) / (v.len() as f64).sqrt() } else { 0.0 };
            MetricSummary { estimator, n, metric, count: v.len(), mean, se }
        })
        .collect()
}

/// Looks up the summary for one cell.
pub fn find_summary<'a>(s: &'a [MetricSummary], estimator: &str, n: usize, metric: &str) -> Option<&'a MetricSummary> {
    s.iter().find(|m| m.estimator == estimator && m.n == n && m.metric == metric)
}
