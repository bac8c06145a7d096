use std::f64::consts::PI;
use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::similarity::SimilarityEngine;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats;

/// Minimum number of rows in the modelled arm.
pub const MIN_ARM_ROWS: usize = 5;
/// Default number of outcome grid cells.
pub const DEFAULT_OUTCOME_GRID: usize = 500;

/// Midpoints of `cells` equal cells covering `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeGrid {
    pub lo: f64,
    pub hi: f64,
    pub delta: f64,
    pub points: Vec<f64>,
}

impl OutcomeGrid {
    pub fn midpoint(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if cells == 0 || !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInput(format!("invalid outcome grid [{lo}, {hi}] with {cells} cells")));
        }
        let delta = (hi - lo) / cells as f64;
        let points = (0..cells).map(|c| lo + (c as f64 + 0.5) * delta).collect();
        Ok(Self { lo, hi, delta, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Tabulates functions on the grid: entry `(g, t)` is `f(points[g], t)`.
    pub fn tabulate(&self, columns: usize, f: impl Fn(f64, usize) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), columns, |g, t| f(self.points[g], t))
    }
}

/// Where the outcome grid lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SupportRule {
    Fixed {
        lo: f64,
        hi: f64,
    },
    /// `[min y − pad·h, max y + pad·h]` over the arm's outcomes.
    DataDriven {
        pad: f64,
    },
}

/// Raw similarity weights over observed outcomes, one row per query.
#[derive(Debug, Clone)]
pub struct AnchorWeights {
    pub anchors: Vec<f64>,
    pub weights: DMatrix<f64>,
}

/// A fitted model of the outcome law given `A = arm` and `X = x`, represented on a grid.
pub trait OutcomeModel: Send + Sync + Debug {
    fn arm(&self) -> u8;

    fn grid(&self) -> &OutcomeGrid;

    /// Density values at the grid points; they sum to one against the cell width.
    fn density_on_grid(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Conditional expectations of tabulated functions.
    ///
    /// `xs` is row-major; `table` has one row per grid point and one column per function.
    /// The result has one row per query and one column per function.
    fn expect(&self, xs: &[f64], table: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let g = self.grid();
        let d = self.dim();
        let q = xs.len().checked_div(d).unwrap_or(0);
        let mut dens = DMatrix::zeros(q, g.len());
        for (i, x) in xs.chunks_exact(d.max(1)).enumerate().take(q) {
            let p = self.density_on_grid(x)?;
            for (c, v) in p.iter().enumerate() {
                dens[(i, c)] = v * g.delta;
            }
        }
        Ok(dens * table)
    }

    /// Expectations at `eval_xs` together with their average over `mean_xs`.
    fn expect_with_mean(
        &self,
        eval_xs: &[f64],
        mean_xs: &[f64],
        table: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let eval = self.expect(eval_xs, table)?;
        let pooled = self.expect(mean_xs, table)?;
        let mean = pooled.row_mean().transpose();
        Ok((eval, mean))
    }

    fn dim(&self) -> usize;

    /// Similarity weights over observed outcomes, when the model is anchor-based.
    fn anchor_weights(&self, _xs: &[f64]) -> Option<AnchorWeights> {
        None
    }
}

/// Kernel-smoothed conditional density: similarity-weighted Gaussian bumps at the
/// arm's observed outcomes, renormalized on the grid.
#[derive(Debug, Clone)]
pub struct CondDensityModel {
    arm: u8,
    d: usize,
    anchors_x: Vec<f64>,
    anchors_y: Vec<f64>,
    engine: SimilarityEngine,
    bandwidth: f64,
    grid: OutcomeGrid,
    /// `φ_h(g − y_i)·Δ`, anchors by grid points.
    smoothing: DMatrix<f64>,
    /// Grid mass of each anchor's bump.
    masses: DVector<f64>,
}

impl CondDensityModel {
    /// Fits on the rows of `train` with `A = arm`.
    ///
    /// `bandwidth` overrides Silverman's rule; `engine_for` builds the similarity engine
    /// from the anchors' covariates. With `reflect` and a fixed support, each bump is mirrored
    /// about both ends of the support so no mass leaks past the boundary.
    pub fn fit(
        train: &Dataset,
        arm: u8,
        support: SupportRule,
        cells: usize,
        bandwidth: Option<f64>,
        reflect: bool,
        engine_for: impl FnOnce(&[f64], usize) -> SimilarityEngine,
    ) -> Result<Self> {
        let rows: Vec<usize> = (0..train.len()).filter(|&i| train.a()[i] == arm).collect();
        if rows.len() < MIN_ARM_ROWS {
            return Err(Error::InsufficientData(format!(
                "conditional density for arm {arm} needs ≥ {MIN_ARM_ROWS} rows, got {}",
                rows.len()
            )));
        }
        let d = train.dim();
        let mut anchors_x = Vec::with_capacity(rows.len() * d);
        for &i in &rows {
            anchors_x.extend_from_slice(train.x(i));
        }
        let anchors_y: Vec<f64> = rows.iter().map(|&i| train.y()[i]).collect();
        let h = match bandwidth {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(h) => return Err(Error::InvalidInput(format!("outcome bandwidth must be > 0, got {h}"))),
            None => {
                let h = stats::silverman(&anchors_y, 0.2);
                if h > 0.0 {
                    h
                } else {
                    1e-2 * anchors_y[0].abs().max(1.0)
                }
            }
        };
        let mirrors = match support {
            SupportRule::Fixed { lo, hi } if reflect => Some((lo, hi)),
            _ => None,
        };
        let grid = match support {
            SupportRule::Fixed { lo, hi } => OutcomeGrid::midpoint(lo, hi, cells)?,
            SupportRule::DataDriven { pad } => {
                let lo = anchors_y.iter().cloned().fold(f64::INFINITY, f64::min) - pad * h;
                let hi = anchors_y.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + pad * h;
                OutcomeGrid::midpoint(lo, hi, cells)?
            }
        };
        let norm = grid.delta / (h * (2.0 * PI).sqrt());
        let bump = |t: f64| {
            let z = t / h;
            norm * (-0.5 * z * z).exp()
        };
        let smoothing = DMatrix::from_fn(anchors_y.len(), grid.len(), |i, g| {
            let (t, y) = (grid.points[g], anchors_y[i]);
            match mirrors {
                Some((lo, hi)) => bump(t - y) + bump(t + y - 2.0 * lo) + bump(t + y - 2.0 * hi),
                None => bump(t - y),
            }
        });
        let masses = smoothing.column_sum();
        if let Some(i) = masses.iter().position(|&m| m <= 0.0) {
            return Err(Error::Numerical(format!(
                "outcome {} has no mass on the grid [{}, {}]",
                anchors_y[i], grid.lo, grid.hi
            )));
        }
        let engine = engine_for(&anchors_x, d);
        Ok(Self { arm, d, anchors_x, anchors_y, engine, bandwidth: h, grid, smoothing, masses })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn engine(&self) -> &SimilarityEngine {
        &self.engine
    }

    pub fn anchors_y(&self) -> &[f64] {
        &self.anchors_y
    }

    fn queries(&self, xs: &[f64]) -> Result<usize> {
        if self.d == 0 || !xs.len().is_multiple_of(self.d) {
            return Err(Error::DimensionMismatch { expected: self.d, got: xs.len() });
        }
        Ok(xs.len() / self.d)
    }

    /// Normalized similarity weights, one row per query.
    fn raw_weights(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let q = self.queries(xs)?;
        let na = self.anchors_y.len();
        // Row-major scratch, transposed into nalgebra's column-major layout.
        let mut buf = vec![0.0; q * na];
        for (row, x) in buf.chunks_exact_mut(na).zip(xs.chunks_exact(self.d)) {
            self.engine.weights_into(&self.anchors_x, self.d, x, row);
        }
        Ok(DMatrix::from_row_slice(q, na, &buf))
    }

    /// Weights divided by their grid mass, so that `effective · (Φ T)` is the conditional mean.
    fn effective_weights(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let mut w = self.raw_weights(xs)?;
        let totals = &w * &self.masses;
        for (mut row, t) in w.row_iter_mut().zip(totals.iter()) {
            row /= *t;
        }
        Ok(w)
    }

    fn integrated_table(&self, table: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if table.nrows() != self.grid.len() {
            return Err(Error::DimensionMismatch { expected: self.grid.len(), got: table.nrows() });
        }
        Ok(&self.smoothing * table)
    }
}

impl OutcomeModel for CondDensityModel {
    fn arm(&self) -> u8 {
        self.arm
    }

    fn grid(&self) -> &OutcomeGrid {
        &self.grid
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn density_on_grid(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.effective_weights(x)?;
        let dens = w * &self.smoothing;
        Ok(dens.iter().map(|v| v / self.grid.delta).collect())
    }

    fn expect(&self, xs: &[f64], table: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let integrated = self.integrated_table(table)?;
        Ok(self.effective_weights(xs)? * integrated)
    }

    fn expect_with_mean(
        &self,
        eval_xs: &[f64],
        mean_xs: &[f64],
        table: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let integrated = self.integrated_table(table)?;
        let eval = self.effective_weights(eval_xs)? * &integrated;
        let pooled = self.effective_weights(mean_xs)?.row_mean();
        let mean = (pooled * integrated).transpose();
        Ok((eval, mean))
    }

    fn anchor_weights(&self, xs: &[f64]) -> Option<AnchorWeights> {
        let weights = self.raw_weights(xs).ok()?;
        Some(AnchorWeights { anchors: self.anchors_y.clone(), weights })
    }
}
