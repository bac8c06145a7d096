//! Observational data generation with confounding through the treated counterfactual outcome.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::propensity::expit;
use crate::sim::law::{ControlLaw, ControlSampler, LawSampler, OutcomeLaw};

/// Covariate dimension of the simulation designs.
pub const COVARIATE_DIM: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub treated: OutcomeLaw,
    #[serde(default = "same_as_treated")]
    pub control: ControlLaw,
    /// Draws covariates from an independent copy of the treated outcome, removing confounding.
    #[serde(default)]
    pub independent_covariates: bool,
}

fn same_as_treated() -> ControlLaw {
    ControlLaw::SameAsTreated
}

impl DgpConfig {
    pub fn new(treated: OutcomeLaw, control: ControlLaw) -> Self {
        Self { name: None, treated, control, independent_covariates: false }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match self.control {
            ControlLaw::SameAsTreated => self.treated.name(),
            ControlLaw::CosinePerturb { k, .. } => format!("{}_alt{}", self.treated.name(), k * k),
        }
    }
}

/// A validated data-generating process.
#[derive(Debug, Clone)]
pub struct Dgp {
    pub config: DgpConfig,
    treated: LawSampler,
    control: ControlSampler,
}

/// Treatment probability given the first covariate, bounded in `[0.05, 0.95]`.
pub fn true_propensity(x1: f64) -> f64 {
    (0.05 + 0.9 * expit(x1)).clamp(0.05, 0.95)
}

impl Dgp {
    pub fn new(config: DgpConfig) -> Result<Self> {
        let treated = config.treated.sampler()?;
        let control = ControlSampler::new(&config.control, &treated)?;
        Ok(Self { config, treated, control })
    }

    pub fn treated_density(&self, y: f64) -> f64 {
        self.config.treated.pdf(y)
    }

    pub fn control_density(&self, y: f64) -> f64 {
        self.control.pdf(y)
    }

    /// Treated minus control counterfactual density.
    pub fn difference(&self, y: f64) -> f64 {
        self.control.difference(y)
    }

    pub fn unit_support(&self) -> bool {
        self.config.treated.unit_support()
    }

    /// Draws covariates for a given treated outcome.
    fn covariates(&self, y1: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        let indicator = if self.config.independent_covariates { self.treated.sample(rng) > 0.0 } else { y1 > 0.0 };
        let shift = if indicator { 1.0 } else { 0.0 };
        for _ in 0..COVARIATE_DIM {
            let v: f64 = rng.sample(StandardNormal);
            out.push(v / 2.0 + (v + 1.0) * shift);
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidInput("sample size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n * COVARIATE_DIM);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let y1 = self.treated.sample(&mut rng);
            let y0 = self.control.sample(&mut rng);
            let start = x.len();
            self.covariates(y1, &mut rng, &mut x);
            let treat = rng.random::<f64>() < true_propensity(x[start]);
            a.push(u8::from(treat));
            y.push(if treat { y1 } else { y0 });
        }
        Dataset::new(COVARIATE_DIM, x, a, y)
    }
}
