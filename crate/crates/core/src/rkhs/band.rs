//! One-step estimation of a bandlimited counterfactual density, represented by its
//! values on an importance-weighted quadrature grid.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldSplit};
use crate::density::{ensure_disjoint, flat_x};
use crate::error::{Error, Result};
use crate::hilbert::{dot, sinc_kernel, QuadGrid};
use crate::nuisance::{Nuisance, NuisanceLearner, OutcomeGrid};
use crate::stats;

/// Default number of quadrature points for band estimators.
pub const DEFAULT_BAND_GRID: usize = 500;

/// A function in the sinc RKHS stored by its values at grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFn {
    pub b: f64,
    pub grid: QuadGrid,
    pub values: Vec<f64>,
}

impl BandFn {
    /// `D_m` coordinates `(f(t_k) s_k)_k`.
    pub fn coords(&self) -> Vec<f64> {
        self.values.iter().zip(&self.grid.scales).map(|(v, s)| v * s).collect()
    }

    pub fn inner(&self, other: &BandFn) -> Result<f64> {
        if self.grid != other.grid || self.b != other.b {
            return Err(Error::InvalidInput("band functions live on different grids".into()));
        }
        Ok(dot(&self.coords(), &other.coords()))
    }

    pub fn norm(&self) -> f64 {
        let c = self.coords();
        dot(&c, &c).sqrt()
    }

    /// Kernel section `K̲_y` tabulated on `grid`.
    pub fn kernel_section(y: f64, b: f64, grid: &QuadGrid) -> BandFn {
        BandFn { b, grid: grid.clone(), values: grid.points.iter().map(|&t| sinc_kernel(y, t, b)).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    /// Bandlimit `b`.
    pub b: f64,
    pub grid_points: usize,
    /// Grid scale as a multiple of the treated outcomes' standard deviation.
    pub sigma_mult: f64,
    pub folds: usize,
    pub seed: u64,
    /// Points where the estimate and its influence function are also tracked.
    pub extra_points: Vec<f64>,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self { b: 2.0, grid_points: DEFAULT_BAND_GRID, sigma_mult: 4.0, folds: 2, seed: 0, extra_points: Vec::new() }
    }
}

/// Cross-fitted band estimate with cached influence values.
#[derive(Debug, Clone)]
pub struct BandFit {
    pub b: f64,
    pub grid: QuadGrid,
    pub folds: FoldSplit,
    pub extra_points: Vec<f64>,
    /// Plug-in values per fold at grid points followed by extra points.
    pub fold_plugins: Vec<Vec<f64>>,
    pub fold_eif_means: Vec<Vec<f64>>,
    /// Influence values, one row per observation, same column layout.
    pub eif: DMatrix<f64>,
    pub plugin: BandFn,
    pub estimate: BandFn,
    pub extra_plugin: Vec<f64>,
    pub extra_estimate: Vec<f64>,
}

impl BandFit {
    /// Influence rows in `D_m` coordinates.
    pub fn eif_coords(&self) -> DMatrix<f64> {
        let m = self.grid.len();
        let mut out = self.eif.columns(0, m).into_owned();
        for (mut col, s) in out.column_iter_mut().zip(&self.grid.scales) {
            col *= *s;
        }
        out
    }

    /// Cross-fitted standard deviation of the influence function of the value at extra point `idx`.
    pub fn pointwise_sd(&self, idx: usize) -> f64 {
        let col = self.grid.len() + idx;
        let members = self.folds.members();
        let var: f64 = members
            .iter()
            .map(|rows| {
                let vals: Vec<f64> = rows.iter().map(|&i| self.eif[(i, col)]).collect();
                let m = stats::mean(&vals);
                vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
            })
            .sum::<f64>()
            / members.len() as f64;
        var.sqrt()
    }
}

/// Importance grid centred at the treated outcomes' mean with scale `sigma_mult · sd`.
pub fn band_grid(data: &Dataset, arm: u8, m: usize, sigma_mult: f64) -> Result<QuadGrid> {
    let ys: Vec<f64> = (0..data.len()).filter(|&i| data.a()[i] == arm).map(|i| data.y()[i]).collect();
    if ys.len() < 2 {
        return Err(Error::InsufficientData("band grid needs at least two outcomes in the arm".into()));
    }
    QuadGrid::gaussian(m, stats::mean(&ys), sigma_mult * stats::sd(&ys))
}

fn sinc_table(outcomes: &OutcomeGrid, points: &[f64], b: f64) -> DMatrix<f64> {
    outcomes.tabulate(points.len(), |g, t| sinc_kernel(points[t], g, b))
}

/// Plug-in values `avg_x ∫ K̲_t(ỹ) p̂(ỹ | x) dỹ` at each `points[t]`.
pub fn band_plugin(nuisance: &Nuisance, b: f64, points: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
    let table = sinc_table(nuisance.outcome.grid(), points, b);
    Ok(nuisance.outcome.expect(xs, &table)?.row_mean().iter().cloned().collect())
}

/// Influence function values at `points` for one observation.
pub fn band_eif(
    nuisance: &Nuisance,
    b: f64,
    points: &[f64],
    plugin: &[f64],
    x: &[f64],
    a: u8,
    y: f64,
) -> Result<Vec<f64>> {
    let table = sinc_table(nuisance.outcome.grid(), points, b);
    let mu = nuisance.outcome.expect(x, &table)?;
    let treated = a == nuisance.arm;
    let ipw = if treated { 1.0 / nuisance.prob_arm(x) } else { 0.0 };
    Ok((0..points.len())
        .map(|t| {
            let direct = if treated { ipw * (sinc_kernel(y, points[t], b) - mu[(0, t)]) } else { 0.0 };
            direct + mu[(0, t)] - plugin[t]
        })
        .collect())
}

struct FoldPieces {
    plugin: Vec<f64>,
    eval_rows: Vec<usize>,
    eif_rows: DMatrix<f64>,
}

/// Cross-fitted one-step estimator of the bandlimited counterfactual density for `arm`.
pub fn band_onestep_arm(
    data: &Dataset,
    arm: u8,
    config: &BandConfig,
    split: &FoldSplit,
    learner: &dyn NuisanceLearner,
) -> Result<BandFit> {
    if !(config.b > 0.0 && config.b.is_finite()) {
        return Err(Error::InvalidInput(format!("bandlimit must be > 0, got {}", config.b)));
    }
    let grid = band_grid(data, arm, config.grid_points, config.sigma_mult)?;
    let mut points = grid.points.clone();
    points.extend_from_slice(&config.extra_points);
    let b = config.b;
    let pieces: Vec<FoldPieces> = (0..split.folds)
        .into_par_iter()
        .map(|j| -> Result<FoldPieces> {
            let train_rows = split.complement(j);
            let eval_rows = split.members().swap_remove(j);
            ensure_disjoint(&train_rows, &eval_rows)?;
            let nuisance = learner.fit(&data.subset(&train_rows), arm)?;
            let table = sinc_table(nuisance.outcome.grid(), &points, b);
            let (mu, plugin) =
                nuisance.outcome.expect_with_mean(&flat_x(data, &eval_rows), &flat_x(data, &train_rows), &table)?;
            let mut eif_rows = DMatrix::zeros(eval_rows.len(), points.len());
            for (r, &i) in eval_rows.iter().enumerate() {
                let x = data.x(i);
                let treated = data.a()[i] == arm;
                let ipw = if treated { 1.0 / nuisance.prob_arm(x) } else { 0.0 };
                let y = data.y()[i];
                for (t, &pt) in points.iter().enumerate() {
                    let m = mu[(r, t)];
                    let direct = if treated { ipw * (sinc_kernel(y, pt, b) - m) } else { 0.0 };
                    eif_rows[(r, t)] = direct + m - plugin[t];
                }
            }
            Ok(FoldPieces { plugin: plugin.iter().cloned().collect(), eval_rows, eif_rows })
        })
        .collect::<Result<_>>()?;

    let cols = points.len();
    let mut eif = DMatrix::zeros(data.len(), cols);
    let mut fold_plugins = Vec::new();
    let mut fold_eif_means = Vec::new();
    for p in pieces {
        for (r, &i) in p.eval_rows.iter().enumerate() {
            eif.set_row(i, &p.eif_rows.row(r));
        }
        fold_eif_means.push(p.eif_rows.row_mean().iter().cloned().collect::<Vec<f64>>());
        fold_plugins.push(p.plugin);
    }
    let jf = split.folds as f64;
    let mut plugin_all = vec![0.0; cols];
    let mut est_all = vec![0.0; cols];
    for (p, c) in fold_plugins.iter().zip(&fold_eif_means) {
        for t in 0..cols {
            plugin_all[t] += p[t] / jf;
            est_all[t] += (p[t] + c[t]) / jf;
        }
    }
    let m = grid.len();
    Ok(BandFit {
        b,
        folds: split.clone(),
        extra_points: config.extra_points.clone(),
        plugin: BandFn { b, grid: grid.clone(), values: plugin_all[..m].to_vec() },
        estimate: BandFn { b, grid: grid.clone(), values: est_all[..m].to_vec() },
        extra_plugin: plugin_all[m..].to_vec(),
        extra_estimate: est_all[m..].to_vec(),
        grid,
        fold_plugins,
        fold_eif_means,
        eif,
    })
}

/// Band one-step estimator for the treated arm with a seeded fold split.
pub fn band_onestep(data: &Dataset, config: &BandConfig, learner: &dyn NuisanceLearner) -> Result<BandFit> {
    let split = crate::data::split_folds(data.len(), config.folds, config.seed)?;
    band_onestep_arm(data, 1, config, &split, learner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::Learners;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut x, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let xi: f64 = rng.random_range(-1.0..1.0);
            x.push(xi);
            a.push(u8::from(rng.random::<f64>() < 0.6));
            y.push(xi + rng.random_range(-2.0..2.0));
        }
        Dataset::new(1, x, a, y).unwrap()
    }

    #[test]
    fn kernel_section_norm() {
        // The section decays like 1/y², so the grid must reach far into the tails.
        let grid = QuadGrid::gaussian(2048, 0.0, 60.0).unwrap();
        let k = BandFn::kernel_section(0.4, 2.0, &grid);
        assert!((k.norm().powi(2) - 2.0 / std::f64::consts::PI).abs() < 1e-3);
    }

    #[test]
    fn estimate_decomposes_into_cached_pieces() {
        let ds = toy(400, 7);
        let cfg = BandConfig { grid_points: 100, extra_points: vec![0.0], ..BandConfig::default() };
        let fit = band_onestep(&ds, &cfg, &Learners::unbounded()).unwrap();
        for t in 0..100 {
            let direct: f64 = (0..2).map(|j| fit.fold_plugins[j][t] + fit.fold_eif_means[j][t]).sum::<f64>() / 2.0;
            assert!((direct - fit.estimate.values[t]).abs() < 1e-12);
        }
        assert_eq!(fit.extra_estimate.len(), 1);
        assert!(fit.pointwise_sd(0) > 0.0);
        assert_eq!(fit.eif_coords().ncols(), 100);
    }

    #[test]
    fn untreated_rows_are_centred_conditional_means() {
        let ds = toy(300, 9);
        let nu = Learners::unbounded().fit(&ds, 1).unwrap();
        let pts = [-1.0, 0.0, 2.0];
        let xs: Vec<f64> = (0..ds.len()).flat_map(|i| ds.x(i).to_vec()).collect();
        let plugin = band_plugin(&nu, 2.0, &pts, &xs).unwrap();
        let e = band_eif(&nu, 2.0, &pts, &plugin, &[0.3], 0, 5.0).unwrap();
        let mu = band_plugin(&nu, 2.0, &pts, &[0.3]).unwrap();
        for t in 0..3 {
            assert!((e[t] - (mu[t] - plugin[t])).abs() < 1e-12);
        }
    }
}
