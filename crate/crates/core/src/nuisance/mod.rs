//! Nuisance fits: propensity scores and arm-specific conditional outcome laws.

pub mod outcome;
pub mod propensity;
pub mod similarity;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use outcome::{
    AnchorWeights, CondDensityModel, OutcomeGrid, OutcomeModel, SupportRule, DEFAULT_OUTCOME_GRID, MIN_ARM_ROWS,
};
pub use propensity::{PropensityFit, PropensityMethod, PropensityModel, DEFAULT_EPS};
pub use similarity::SimilarityEngine;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::hilbert::Basis;

/// The pair of fitted nuisances needed by an estimator targeting `arm`.
#[derive(Debug, Clone)]
pub struct Nuisance {
    pub arm: u8,
    pub propensity: Arc<dyn PropensityFit>,
    pub outcome: Arc<dyn OutcomeModel>,
}

impl Nuisance {
    /// `ĝ(arm | x)`.
    pub fn prob_arm(&self, x: &[f64]) -> f64 {
        let p = self.propensity.prob_treated(x);
        if self.arm == 1 {
            p
        } else {
            1.0 - p
        }
    }
}

/// Anything that can fit nuisances on a training sample.
pub trait NuisanceLearner: Send + Sync {
    fn fit(&self, train: &Dataset, arm: u8) -> Result<Nuisance>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Gaussian,
    Uniform,
}

/// Built-in learner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learners {
    pub propensity: PropensityMethod,
    pub eps: f64,
    pub similarity: SimilarityKind,
    /// Multiplier on the rule-of-thumb covariate bandwidths.
    pub similarity_scale: f64,
    pub support: SupportRule,
    pub grid_cells: usize,
    /// Fixed outcome smoothing bandwidth; Silverman's rule when absent.
    pub outcome_bandwidth: Option<f64>,
    /// Mirror outcome bumps about the ends of a fixed support.
    #[serde(default)]
    pub reflect_boundary: bool,
}

impl Default for Learners {
    fn default() -> Self {
        Self {
            propensity: PropensityMethod::Logistic,
            eps: DEFAULT_EPS,
            similarity: SimilarityKind::Gaussian,
            similarity_scale: 1.0,
            support: SupportRule::Fixed { lo: 0.0, hi: 1.0 },
            grid_cells: DEFAULT_OUTCOME_GRID,
            outcome_bandwidth: None,
            reflect_boundary: false,
        }
    }
}

impl Learners {
    /// Defaults with the outcome grid on the basis domain.
    pub fn for_basis(basis: &Basis) -> Self {
        Self { support: SupportRule::Fixed { lo: basis.lo, hi: basis.hi }, ..Self::default() }
    }

    /// Defaults with a data-driven outcome grid for unbounded outcomes.
    pub fn unbounded() -> Self {
        Self { support: SupportRule::DataDriven { pad: 4.0 }, ..Self::default() }
    }
}

impl NuisanceLearner for Learners {
    fn fit(&self, train: &Dataset, arm: u8) -> Result<Nuisance> {
        let propensity = PropensityModel::fit(train, self.propensity, self.eps)?;
        let (kind, scale) = (self.similarity, self.similarity_scale);
        let outcome = CondDensityModel::fit(
            train,
            arm,
            self.support,
            self.grid_cells,
            self.outcome_bandwidth,
            self.reflect_boundary,
            |a, d| match kind {
                SimilarityKind::Gaussian => SimilarityEngine::gaussian_rule_of_thumb(a, d, scale),
                SimilarityKind::Uniform => SimilarityEngine::Uniform,
            },
        )?;
        Ok(Nuisance { arm, propensity: Arc::new(propensity), outcome: Arc::new(outcome) })
    }
}

/// `E[h_k(Y) | A = arm, X = x]` by grid quadrature.
pub fn cond_mean_basis(model: &dyn OutcomeModel, x: &[f64], k: usize, basis: &Basis) -> Result<f64> {
    if k == 0 || k > basis.kmax {
        return Err(Error::Domain(format!("basis index {k} outside 1..={}", basis.kmax)));
    }
    let p = model.density_on_grid(x)?;
    let g = model.grid();
    let mut total = 0.0;
    for (pv, &y) in p.iter().zip(&g.points) {
        if *pv != 0.0 {
            total += pv * basis.eval(k, y.clamp(basis.lo, basis.hi))?;
        }
    }
    Ok(total * g.delta)
}

/// Basis functions tabulated on an outcome grid (points clamped into the basis domain).
pub fn basis_table(grid: &OutcomeGrid, basis: &Basis) -> nalgebra::DMatrix<f64> {
    let mut table = nalgebra::DMatrix::zeros(grid.len(), basis.kmax);
    let mut row = vec![0.0; basis.kmax];
    for (g, &y) in grid.points.iter().enumerate() {
        basis.eval_all_into(y.clamp(basis.lo, basis.hi), &mut row);
        for (k, v) in row.iter().enumerate() {
            table[(g, k)] = *v;
        }
    }
    table
}
