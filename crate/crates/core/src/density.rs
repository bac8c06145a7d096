//! Cross-fitted one-step estimators of counterfactual densities in an orthonormal basis.
//!
//! For arm `a`, the influence operator applied to `h_k` at `z = (x, a', y)` is
//! `1{a' = a}/ĝ(a|x)·[h_k(y) − m̂_k(x)] + m̂_k(x) − ν̂_k`, with `m̂_k(x)` the conditional
//! mean of `h_k(Y)` and `ν̂_k` the plug-in coefficient.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldSplit};
use crate::error::{Error, Result};
use crate::hilbert::{Basis, L2Fn, RegSeq};
use crate::nuisance::{basis_table, Nuisance, NuisanceLearner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityTarget {
    /// Density of the counterfactual outcome under treatment `arm`.
    Arm(u8),
    /// Treated minus control counterfactual densities.
    Difference,
}

/// Which one-step form [`DensityFit::estimate`] reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateForm {
    /// Plug-in plus shrunk correction.
    Regularized,
    /// Shrinkage applied to plug-in and correction alike.
    Projection,
}

/// A cross-fitted density estimate with the cached pieces inference and CV need.
#[derive(Debug, Clone)]
pub struct DensityFit {
    pub target: DensityTarget,
    pub basis: Basis,
    pub beta: RegSeq,
    pub form: EstimateForm,
    pub folds: FoldSplit,
    /// Plug-in coefficients of each fold's nuisance fit.
    pub fold_plugins: Vec<Vec<f64>>,
    /// Held-out means of the unregularized influence coefficients, per fold.
    pub fold_eif_means: Vec<Vec<f64>>,
    /// Unregularized influence coefficients, one row per observation.
    pub eif: DMatrix<f64>,
    pub plugin: L2Fn,
    pub regularized: L2Fn,
    pub projection: L2Fn,
    /// `‖φ̂^β‖` in `L²(Pₙ)`.
    pub sigma_hat: f64,
    /// Arm-wise fits when the target is a difference.
    pub arms: Option<Box<(DensityFit, DensityFit)>>,
}

impl DensityFit {
    pub fn estimate(&self) -> &L2Fn {
        match self.form {
            EstimateForm::Regularized => &self.regularized,
            EstimateForm::Projection => &self.projection,
        }
    }

    /// `β_k · φ̂_k(z_i)`.
    pub fn regularized_eif_row(&self, i: usize) -> Vec<f64> {
        self.eif.row(i).iter().zip(self.beta.values()).map(|(e, b)| e * b).collect()
    }

    /// All regularized influence rows as an `n × K` matrix.
    pub fn regularized_eif(&self) -> DMatrix<f64> {
        let mut m = self.eif.clone();
        for (mut col, b) in m.column_iter_mut().zip(self.beta.values()) {
            col *= *b;
        }
        m
    }

    /// Recomputes the estimates for a different regularization sequence without refitting.
    pub fn with_beta(&self, beta: RegSeq) -> Result<DensityFit> {
        beta.ensure_len(self.basis.kmax)?;
        let mut out = self.clone();
        out.arms = match &self.arms {
            Some(pair) => Some(Box::new((pair.0.with_beta(beta.clone())?, pair.1.with_beta(beta.clone())?))),
            None => None,
        };
        out.beta = beta;
        out.refresh()?;
        Ok(out)
    }

    pub fn with_form(mut self, form: EstimateForm) -> Self {
        self.form = form;
        self
    }

    fn refresh(&mut self) -> Result<()> {
        let k = self.basis.kmax;
        let j = self.fold_plugins.len() as f64;
        let mut plugin = vec![0.0; k];
        let mut corr = vec![0.0; k];
        for (p, c) in self.fold_plugins.iter().zip(&self.fold_eif_means) {
            for i in 0..k {
                plugin[i] += p[i] / j;
                corr[i] += c[i] / j;
            }
        }
        let beta = self.beta.values();
        let regularized = (0..k).map(|i| plugin[i] + beta[i] * corr[i]).collect();
        let projection = (0..k).map(|i| beta[i] * (plugin[i] + corr[i])).collect();
        self.plugin = L2Fn::new(self.basis, plugin)?;
        self.regularized = L2Fn::new(self.basis, regularized)?;
        self.projection = L2Fn::new(self.basis, projection)?;
        let n = self.eif.nrows() as f64;
        let ss: f64 = self.eif.row_iter().map(|r| r.iter().zip(beta).map(|(e, b)| (e * b).powi(2)).sum::<f64>()).sum();
        self.sigma_hat = (ss / n).sqrt();
        Ok(())
    }
}

/// Settings shared by the density estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    pub basis: Basis,
    pub beta: RegSeq,
    pub folds: usize,
    pub seed: u64,
}

/// Plug-in coefficients: conditional basis means averaged over `xs` (row-major).
pub fn plugin_coeffs(nuisance: &Nuisance, xs: &[f64], basis: &Basis) -> Result<L2Fn> {
    if xs.is_empty() {
        return Err(Error::InsufficientData("plug-in needs a nonempty covariate sample".into()));
    }
    let table = basis_table(nuisance.outcome.grid(), basis);
    let m = nuisance.outcome.expect(xs, &table)?;
    L2Fn::new(*basis, m.row_mean().iter().cloned().collect())
}

/// Every influence coefficient `k = 1..=K` at one observation.
pub fn eif_coeffs(nuisance: &Nuisance, plugin: &L2Fn, x: &[f64], a: u8, y: f64) -> Result<Vec<f64>> {
    let basis = plugin.basis;
    let table = basis_table(nuisance.outcome.grid(), &basis);
    let m = nuisance.outcome.expect(x, &table)?;
    let h = if a == nuisance.arm { basis.eval_all(y)? } else { vec![0.0; basis.kmax] };
    let ipw = if a == nuisance.arm { 1.0 / nuisance.prob_arm(x) } else { 0.0 };
    Ok((0..basis.kmax).map(|k| ipw * (h[k] - m[(0, k)]) + m[(0, k)] - plugin.coeffs()[k]).collect())
}

/// A single influence coefficient (1-based `k`).
pub fn eif_op_coeff(nuisance: &Nuisance, plugin: &L2Fn, x: &[f64], a: u8, y: f64, k: usize) -> Result<f64> {
    if k == 0 || k > plugin.basis.kmax {
        return Err(Error::Domain(format!("basis index {k} outside 1..={}", plugin.basis.kmax)));
    }
    Ok(eif_coeffs(nuisance, plugin, x, a, y)?[k - 1])
}

/// `β_k` times each influence coefficient.
pub fn regularized_eif_coeffs(
    nuisance: &Nuisance,
    plugin: &L2Fn,
    beta: &RegSeq,
    x: &[f64],
    a: u8,
    y: f64,
) -> Result<Vec<f64>> {
    beta.ensure_len(plugin.basis.kmax)?;
    Ok(eif_coeffs(nuisance, plugin, x, a, y)?.iter().zip(beta.values()).map(|(e, b)| e * b).collect())
}

pub(crate) fn ensure_disjoint(train: &[usize], eval: &[usize]) -> Result<()> {
    // Both lists are ascending.
    let (mut i, mut j) = (0, 0);
    while i < train.len() && j < eval.len() {
        match train[i].cmp(&eval[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                return Err(Error::InvalidInput(format!("row {} used for both fitting and evaluation", train[i])))
            }
        }
    }
    Ok(())
}

pub(crate) fn flat_x(data: &Dataset, rows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * data.dim());
    for &i in rows {
        out.extend_from_slice(data.x(i));
    }
    out
}

struct FoldPieces {
    plugin: Vec<f64>,
    eval_rows: Vec<usize>,
    eif_rows: DMatrix<f64>,
}

fn fold_pieces(
    data: &Dataset,
    arm: u8,
    basis: &Basis,
    split: &FoldSplit,
    j: usize,
    learner: &dyn NuisanceLearner,
) -> Result<FoldPieces> {
    let train_rows = split.complement(j);
    let eval_rows = split.members().swap_remove(j);
    ensure_disjoint(&train_rows, &eval_rows)?;
    let nuisance = learner.fit(&data.subset(&train_rows), arm)?;
    let (plugin, eif_rows) = eif_block(data, &nuisance, basis, &train_rows, &eval_rows)?;
    Ok(FoldPieces { plugin, eval_rows, eif_rows })
}

/// Plug-in from the covariates of `plugin_rows` and unregularized influence rows at `eval_rows`.
pub(crate) fn eif_block(
    data: &Dataset,
    nuisance: &Nuisance,
    basis: &Basis,
    plugin_rows: &[usize],
    eval_rows: &[usize],
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let arm = nuisance.arm;
    let table = basis_table(nuisance.outcome.grid(), basis);
    let (m_eval, plugin) =
        nuisance.outcome.expect_with_mean(&flat_x(data, eval_rows), &flat_x(data, plugin_rows), &table)?;
    let k = basis.kmax;
    let mut eif_rows = DMatrix::zeros(eval_rows.len(), k);
    let mut h = vec![0.0; k];
    for (r, &i) in eval_rows.iter().enumerate() {
        let x = data.x(i);
        let treated = data.a()[i] == arm;
        let ipw = if treated {
            let y = data.y()[i];
            if !basis.contains(y) {
                return Err(Error::Domain(format!("outcome {y} outside basis domain [{}, {}]", basis.lo, basis.hi)));
            }
            basis.eval_all_into(y, &mut h);
            1.0 / nuisance.prob_arm(x)
        } else {
            0.0
        };
        for c in 0..k {
            let m = m_eval[(r, c)];
            let direct = if treated { ipw * (h[c] - m) } else { 0.0 };
            eif_rows[(r, c)] = direct + m - plugin[c];
        }
    }
    Ok((plugin.iter().cloned().collect(), eif_rows))
}

fn fit_arm(
    data: &Dataset,
    arm: u8,
    basis: &Basis,
    beta: &RegSeq,
    split: &FoldSplit,
    learner: &dyn NuisanceLearner,
) -> Result<DensityFit> {
    beta.ensure_len(basis.kmax)?;
    let pieces: Vec<FoldPieces> = (0..split.folds)
        .into_par_iter()
        .map(|j| fold_pieces(data, arm, basis, split, j, learner))
        .collect::<Result<_>>()?;
    let mut eif = DMatrix::zeros(data.len(), basis.kmax);
    let mut fold_plugins = Vec::with_capacity(split.folds);
    let mut fold_eif_means = Vec::with_capacity(split.folds);
    for p in pieces {
        for (r, &i) in p.eval_rows.iter().enumerate() {
            eif.set_row(i, &p.eif_rows.row(r));
        }
        fold_eif_means.push(p.eif_rows.row_mean().iter().cloned().collect());
        fold_plugins.push(p.plugin);
    }
    let zero = L2Fn::zeros(*basis);
    let mut fit = DensityFit {
        target: DensityTarget::Arm(arm),
        basis: *basis,
        beta: beta.clone(),
        form: EstimateForm::Regularized,
        folds: split.clone(),
        fold_plugins,
        fold_eif_means,
        eif,
        plugin: zero.clone(),
        regularized: zero.clone(),
        projection: zero,
        sigma_hat: 0.0,
        arms: None,
    };
    fit.refresh()?;
    Ok(fit)
}

/// Fits the requested target on an explicit fold split.
pub fn fit_density(
    data: &Dataset,
    target: DensityTarget,
    basis: &Basis,
    beta: &RegSeq,
    split: &FoldSplit,
    learner: &dyn NuisanceLearner,
) -> Result<DensityFit> {
    if split.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), got: split.len() });
    }
    match target {
        DensityTarget::Arm(arm) => fit_arm(data, arm, basis, beta, split, learner),
        DensityTarget::Difference => {
            if !data.has_both_arms() {
                return Err(Error::InsufficientData("density difference needs both arms".into()));
            }
            let treated = fit_arm(data, 1, basis, beta, split, learner)?;
            let control = fit_arm(data, 0, basis, beta, split, learner)?;
            let sub = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
                a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect()
            };
            let zero = L2Fn::zeros(*basis);
            let mut fit = DensityFit {
                target,
                basis: *basis,
                beta: beta.clone(),
                form: EstimateForm::Regularized,
                folds: split.clone(),
                fold_plugins: sub(&treated.fold_plugins, &control.fold_plugins),
                fold_eif_means: sub(&treated.fold_eif_means, &control.fold_eif_means),
                eif: &treated.eif - &control.eif,
                plugin: zero.clone(),
                regularized: zero.clone(),
                projection: zero,
                sigma_hat: 0.0,
                arms: None,
            };
            fit.refresh()?;
            fit.arms = Some(Box::new((treated, control)));
            Ok(fit)
        }
    }
}

fn with_split(
    data: &Dataset,
    target: DensityTarget,
    config: &DensityConfig,
    learner: &dyn NuisanceLearner,
    form: EstimateForm,
) -> Result<DensityFit> {
    let split = crate::data::split_folds(data.len(), config.folds, config.seed)?;
    Ok(fit_density(data, target, &config.basis, &config.beta, &split, learner)?.with_form(form))
}

/// Cross-fitted regularized one-step estimator of the treated counterfactual density.
pub fn regularized_onestep(
    data: &Dataset,
    config: &DensityConfig,
    learner: &dyn NuisanceLearner,
) -> Result<DensityFit> {
    with_split(data, DensityTarget::Arm(1), config, learner, EstimateForm::Regularized)
}

/// Cross-fitted projection-form one-step estimator of the treated counterfactual density.
pub fn projection_onestep(data: &Dataset, config: &DensityConfig, learner: &dyn NuisanceLearner) -> Result<DensityFit> {
    with_split(data, DensityTarget::Arm(1), config, learner, EstimateForm::Projection)
}

/// Projection-form estimator of the treated minus control density.
pub fn density_difference(data: &Dataset, config: &DensityConfig, learner: &dyn NuisanceLearner) -> Result<DensityFit> {
    with_split(data, DensityTarget::Difference, config, learner, EstimateForm::Projection)
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
            let ai = u8::from(rng.random::<f64>() < 0.3 + 0.4 * (xi + 1.0) / 2.0);
            let yi: f64 = (rng.random::<f64>() * 0.5 + 0.25 * (xi + 1.0)).clamp(0.0, 1.0);
            x.push(xi);
            a.push(ai);
            y.push(yi);
        }
        Dataset::new(1, x, a, y).unwrap()
    }

    fn config(beta: RegSeq) -> DensityConfig {
        DensityConfig { basis: Basis::cosine(16).unwrap(), beta, folds: 2, seed: 4 }
    }

    #[test]
    fn zero_beta_returns_plugin() {
        let ds = toy(300, 1);
        let fit = regularized_onestep(&ds, &config(RegSeq::hard(0, 16)), &Learners::default()).unwrap();
        assert_eq!(fit.estimate(), &fit.plugin);
        assert_eq!(fit.sigma_hat, 0.0);
    }

    #[test]
    fn projection_minus_regularized_identity() {
        let ds = toy(300, 2);
        let beta = RegSeq::rational(5.0, 2.0, 16).unwrap();
        let fit = regularized_onestep(&ds, &config(beta.clone()), &Learners::default()).unwrap();
        let gap = fit.projection.sub(&fit.regularized).unwrap();
        let want = fit.plugin.gamma_beta(&beta).unwrap().sub(&fit.plugin).unwrap();
        for (a, b) in gap.coeffs().iter().zip(want.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
        let full = fit.with_beta(RegSeq::hard(16, 16)).unwrap();
        assert_eq!(full.projection, full.regularized);
    }

    #[test]
    fn correction_is_mean_of_cached_rows() {
        let ds = toy(301, 3);
        let fit = regularized_onestep(&ds, &config(RegSeq::hard(16, 16)), &Learners::default()).unwrap();
        for (j, rows) in fit.folds.members().iter().enumerate() {
            for k in 0..16 {
                let m: f64 = rows.iter().map(|&i| fit.eif[(i, k)]).sum::<f64>() / rows.len() as f64;
                assert!((m - fit.fold_eif_means[j][k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn difference_is_armwise() {
        let ds = toy(400, 5);
        let beta = RegSeq::hard(8, 16);
        let fit = density_difference(&ds, &config(beta), &Learners::default()).unwrap();
        let (t, c) = fit.arms.as_deref().unwrap();
        for i in 0..ds.len() {
            for k in 0..16 {
                assert!((fit.eif[(i, k)] - (t.eif[(i, k)] - c.eif[(i, k)])).abs() < 1e-12);
            }
        }
        let swapped = density_difference(&ds.swap_arms(), &config(RegSeq::hard(8, 16)), &Learners::default()).unwrap();
        for (a, b) in fit.estimate().coeffs().iter().zip(swapped.estimate().coeffs()) {
            assert!((a + b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn disjointness_check() {
        assert!(ensure_disjoint(&[0, 2, 4], &[1, 3]).is_ok());
        assert!(ensure_disjoint(&[0, 2, 4], &[1, 4]).is_err());
    }

    #[test]
    fn single_arm_rejected_for_difference() {
        let ds = Dataset::new(1, vec![0.0; 10], vec![1; 10], vec![0.5; 10]).unwrap();
        assert!(density_difference(&ds, &config(RegSeq::hard(4, 16)), &Learners::default()).is_err());
    }
}
