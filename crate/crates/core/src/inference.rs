//! Quadratic-form confidence sets, their thresholds, and the tests built from them.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{split_folds, Dataset, FoldSplit};
use crate::density::{density_difference, DensityConfig, DensityFit};
use crate::error::{ensure_finite, Error, Result};
use crate::hilbert::{Basis, L2Fn, RegOrigin, RegSeq};
use crate::nuisance::NuisanceLearner;
use crate::rkhs::{kme_difference, pivoted_cholesky, BandFit, KernelSpec};

/// Default number of bootstrap replicates.
pub const DEFAULT_BOOT: usize = 1000;
/// Default regularization weight for Wald-type standardizers.
pub const DEFAULT_LAMBDA: f64 = 0.5;
/// Relative eigenvalue cutoff when compressing bootstrap coordinates.
const RANK_TOL: f64 = 1e-12;

/// Influence values in finite coordinates, one row per observation, with fold labels.
#[derive(Debug, Clone)]
pub struct EifCoords {
    pub rows: DMatrix<f64>,
    pub folds: FoldSplit,
}

impl EifCoords {
    pub fn new(rows: DMatrix<f64>, folds: FoldSplit) -> Result<Self> {
        if rows.nrows() != folds.len() {
            return Err(Error::DimensionMismatch { expected: folds.len(), got: rows.nrows() });
        }
        ensure_finite(rows.as_slice(), "influence coordinates")?;
        Ok(Self { rows, folds })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn fold_rows(&self) -> Vec<Vec<usize>> {
        self.folds.members()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StandardizerKind {
    Identity,
    WaldCov,
    WaldCorr,
}

impl fmt::Display for StandardizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StandardizerKind::Identity => "identity",
            StandardizerKind::WaldCov => "wald-cov",
            StandardizerKind::WaldCorr => "wald-corr",
        })
    }
}

/// The positive-definite matrix `Ω` of the quadratic form `w(v; Ω) = vᵀ Ω v`.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub kind: StandardizerKind,
    pub lambda: f64,
    /// `Ω` and a factor `L` with `Ω = L Lᵀ`; both absent for the identity.
    omega: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Standardizer {
    pub fn identity() -> Self {
        Self { kind: StandardizerKind::Identity, lambda: 1.0, omega: None }
    }

    /// `Ω = [(1 − λ) Σ + λ I]^{-1}` with `Σ` the fold-averaged covariance or correlation.
    pub fn build(coords: &EifCoords, kind: StandardizerKind, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidInput(format!("λ must lie in (0, 1], got {lambda}")));
        }
        if kind == StandardizerKind::Identity {
            return Ok(Self { lambda, ..Self::identity() });
        }
        let sigma = fold_average_covariance(coords, kind == StandardizerKind::WaldCorr);
        let m = sigma.nrows();
        let reg = sigma * (1.0 - lambda) + DMatrix::identity(m, m) * lambda;
        let omega = reg
            .cholesky()
            .ok_or_else(|| Error::Numerical("regularized covariance is not positive definite".into()))?
            .inverse();
        let omega = (&omega + omega.transpose()) * 0.5;
        let factor = omega
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("standardizer is not positive definite".into()))?
            .l();
        Ok(Self { kind, lambda, omega: Some((omega, factor)) })
    }

    pub fn is_identity(&self) -> bool {
        self.omega.is_none()
    }

    /// `Ω` as a dense matrix of size `m`.
    pub fn matrix(&self, m: usize) -> DMatrix<f64> {
        match &self.omega {
            Some((o, _)) => o.clone(),
            None => DMatrix::identity(m, m),
        }
    }

    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        match &self.omega {
            None => Ok(v.iter().map(|x| x * x).sum()),
            Some((o, _)) => {
                if o.nrows() != v.len() {
                    return Err(Error::DimensionMismatch { expected: o.nrows(), got: v.len() });
                }
                let v = DVector::from_column_slice(v);
                Ok(v.dot(&(o * &v)).max(0.0))
            }
        }
    }

    /// Rows mapped so that squared Euclidean norms equal the quadratic form.
    fn transform_rows(&self, rows: DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.omega {
            None => Ok(rows),
            Some((_, l)) => {
                if l.nrows() != rows.ncols() {
                    return Err(Error::DimensionMismatch { expected: l.nrows(), got: rows.ncols() });
                }
                Ok(rows * l)
            }
        }
    }
}

fn fold_average_covariance(coords: &EifCoords, correlation: bool) -> DMatrix<f64> {
    let m = coords.dim();
    let groups = coords.fold_rows();
    let mut sigma = DMatrix::zeros(m, m);
    for rows in &groups {
        let sub = DMatrix::from_fn(rows.len(), m, |r, c| coords.rows[(rows[r], c)]);
        let mean = sub.row_mean();
        let mut centred = sub;
        for mut row in centred.row_iter_mut() {
            row -= &mean;
        }
        let mut cov = centred.tr_mul(&centred) / rows.len() as f64;
        if correlation {
            let sd: Vec<f64> = (0..m).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
            for i in 0..m {
                for j in 0..m {
                    cov[(i, j)] = if i == j {
                        1.0
                    } else if sd[i] > 0.0 && sd[j] > 0.0 {
                        cov[(i, j)] / (sd[i] * sd[j])
                    } else {
                        0.0
                    };
                }
            }
        }
        sigma += cov;
    }
    sigma / groups.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ThresholdMethod {
    Bootstrap { reps: usize },
    Szekely,
}

impl ThresholdMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ThresholdMethod::Bootstrap { .. } => "bootstrap",
            ThresholdMethod::Szekely => "szekely",
        }
    }

    pub fn reps(&self) -> Option<usize> {
        match self {
            ThresholdMethod::Bootstrap { reps } => Some(*reps),
            ThresholdMethod::Szekely => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub method: ThresholdMethod,
    pub value: f64,
    pub alpha: f64,
    pub seed: u64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("α must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Fold-centred rows mapped through `Ω` and compressed to their numerical rank.
fn bootstrap_basis(coords: &EifCoords, omega: &Standardizer) -> Result<(DMatrix<f64>, Vec<Vec<usize>>)> {
    let groups = coords.fold_rows();
    let mut centred = coords.rows.clone();
    for rows in &groups {
        let m = coords.dim();
        let mut mean = vec![0.0; m];
        for &i in rows {
            for (c, acc) in mean.iter_mut().enumerate() {
                *acc += coords.rows[(i, c)];
            }
        }
        for acc in &mut mean {
            *acc /= rows.len() as f64;
        }
        for &i in rows {
            for (c, mu) in mean.iter().enumerate() {
                centred[(i, c)] -= mu;
            }
        }
    }
    let c = omega.transform_rows(centred)?;
    let (n, m) = c.shape();
    let reduced = if m <= n {
        let eig = SymmetricEigen::new(c.tr_mul(&c));
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..m).filter(|&i| eig.eigenvalues[i] > RANK_TOL * top).collect();
        let v = DMatrix::from_fn(m, keep.len(), |r, k| eig.eigenvectors[(r, keep[k])]);
        &c * v
    } else {
        let eig = SymmetricEigen::new(&c * c.transpose());
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > RANK_TOL * top).collect();
        DMatrix::from_fn(n, keep.len(), |r, k| eig.eigenvectors[(r, keep[k])] * eig.eigenvalues[keep[k]].sqrt())
    };
    Ok((reduced, groups))
}

/// Bootstrap draws of `w(ℍ♯; Ω)`, indexed by replicate.
pub fn bootstrap_draws(coords: &EifCoords, omega: &Standardizer, reps: usize, seed: u64) -> Result<Vec<f64>> {
    if reps < 2 {
        return Err(Error::InvalidInput(format!("bootstrap needs at least 2 replicates, got {reps}")));
    }
    let (reduced, groups) = bootstrap_basis(coords, omega)?;
    let r = reduced.ncols();
    let n = coords.n() as f64;
    let jf = groups.len() as f64;
    // Row-major copy for contiguous accumulation.
    let flat: Vec<f64> =
        (0..reduced.nrows()).flat_map(|i| reduced.row(i).iter().cloned().collect::<Vec<_>>()).collect();
    let draws = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut h = vec![0.0; r];
            let mut acc = vec![0.0; r];
            for rows in &groups {
                acc.fill(0.0);
                let nj = rows.len();
                for _ in 0..nj {
                    let i = rows[rng.random_range(0..nj)];
                    for (a, v) in acc.iter_mut().zip(&flat[i * r..(i + 1) * r]) {
                        *a += v;
                    }
                }
                let scale = n.sqrt() / (jf * nj as f64);
                for (hv, a) in h.iter_mut().zip(&acc) {
                    *hv += scale * a;
                }
            }
            h.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    Ok(draws)
}

/// Order statistic `⌈(1 − α) B⌉` of the draws.
pub fn upper_quantile(draws: &[f64], alpha: f64) -> f64 {
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let idx = ((1.0 - alpha) * s.len() as f64).ceil() as usize;
    s[idx.clamp(1, s.len()) - 1]
}

pub fn bootstrap_threshold(
    coords: &EifCoords,
    omega: &Standardizer,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<ThresholdEstimate> {
    check_alpha(alpha)?;
    let draws = bootstrap_draws(coords, omega, reps, seed)?;
    Ok(ThresholdEstimate {
        method: ThresholdMethod::Bootstrap { reps },
        value: upper_quantile(&draws, alpha),
        alpha,
        seed,
    })
}

/// Conservative threshold `χ²₁(1 − α) · s²` with `s²` the cross-fitted mean squared influence norm.
pub fn szekely_threshold(coords: &EifCoords, omega: &Standardizer, alpha: f64) -> Result<ThresholdEstimate> {
    check_alpha(alpha)?;
    if alpha > 0.2 {
        return Err(Error::InvalidInput(format!("the conservative threshold requires α ≤ 0.2, got {alpha}")));
    }
    if !omega.is_identity() {
        return Err(Error::InvalidInput("the conservative threshold requires the identity standardizer".into()));
    }
    let groups = coords.fold_rows();
    let s2 = groups
        .iter()
        .map(|rows| rows.iter().map(|&i| coords.rows.row(i).norm_squared()).sum::<f64>() / rows.len() as f64)
        .sum::<f64>()
        / groups.len() as f64;
    Ok(ThresholdEstimate { method: ThresholdMethod::Szekely, value: chi2_1_quantile(1.0 - alpha) * s2, alpha, seed: 0 })
}

pub fn chi2_1_quantile(p: f64) -> f64 {
    ChiSquared::new(1.0).expect("valid degrees of freedom").inverse_cdf(p)
}

pub fn threshold(
    coords: &EifCoords,
    omega: &Standardizer,
    method: ThresholdMethod,
    alpha: f64,
    seed: u64,
) -> Result<ThresholdEstimate> {
    match method {
        ThresholdMethod::Bootstrap { reps } => bootstrap_threshold(coords, omega, alpha, reps, seed),
        ThresholdMethod::Szekely => szekely_threshold(coords, omega, alpha),
    }
}

/// Everything needed to decide membership in `{h : w(est − h; Ω) ≤ ζ/n}`.
#[derive(Debug, Clone)]
pub struct ConfidenceReport {
    pub estimate: Vec<f64>,
    pub omega: Standardizer,
    pub threshold: ThresholdEstimate,
    pub n: usize,
    pub radius: Option<f64>,
}

impl ConfidenceReport {
    /// `w(est − h; Ω)` scaled by `n`.
    pub fn statistic(&self, h: &[f64]) -> Result<f64> {
        if h.len() != self.estimate.len() {
            return Err(Error::DimensionMismatch { expected: self.estimate.len(), got: h.len() });
        }
        let diff: Vec<f64> = self.estimate.iter().zip(h).map(|(e, v)| e - v).collect();
        Ok(self.n as f64 * self.omega.quad_form(&diff)?)
    }
}

pub fn cs_membership(h: &[f64], report: &ConfidenceReport) -> Result<bool> {
    let diff: Vec<f64> = report.estimate.iter().zip(h).map(|(e, v)| e - v).collect();
    if h.len() != report.estimate.len() {
        return Err(Error::DimensionMismatch { expected: report.estimate.len(), got: h.len() });
    }
    Ok(report.omega.quad_form(&diff)? <= report.threshold.value / report.n as f64)
}

/// Membership of `h` in the preimage set `{h : w(ν̃ − Γ_β h; Ω) ≤ ζ/n}`, truncated at `k_star` terms.
///
/// `report.estimate` holds the coefficients of the projection-form estimate `ν̃`. Truncation
/// is only available for the identity standardizer.
pub fn cs_regularized_membership(h: &L2Fn, report: &ConfidenceReport, beta: &RegSeq, k_star: usize) -> Result<bool> {
    let kmax = h.basis.kmax;
    beta.ensure_len(kmax)?;
    if report.estimate.len() != kmax {
        return Err(Error::DimensionMismatch { expected: kmax, got: report.estimate.len() });
    }
    if k_star == 0 || k_star > kmax {
        return Err(Error::InvalidInput(format!("truncation K* must lie in 1..={kmax}")));
    }
    if !report.omega.is_identity() && k_star != kmax {
        return Err(Error::InvalidInput("truncated membership requires the identity standardizer".into()));
    }
    let diff: Vec<f64> = (0..k_star).map(|k| report.estimate[k] - beta.values()[k] * h.coeffs()[k]).collect();
    Ok(report.omega.quad_form(&diff)? <= report.threshold.value / report.n as f64)
}

/// Serialized outcome of a test or confidence-set computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub estimator: String,
    pub alpha: f64,
    pub zeta_hat: f64,
    pub method: String,
    pub omega_kind: StandardizerKind,
    pub lambda: f64,
    pub reject: bool,
    pub statistic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub seed: u64,
    #[serde(rename = "B")]
    pub boot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualityConfig {
    pub basis: Basis,
    pub beta: RegSeq,
    pub folds: usize,
    pub seed: u64,
    pub omega: StandardizerKind,
    pub lambda: f64,
    pub alpha: f64,
    pub threshold: ThresholdMethod,
    /// Permits a data-selected β, which voids the coverage guarantee.
    pub allow_selected_beta: bool,
}

pub(crate) fn check_fixed_beta(beta: &RegSeq, allow: bool) -> Result<()> {
    if beta.origin == RegOrigin::CrossValidated && !allow {
        return Err(Error::InvalidInput(
            "a cross-validated β is for estimation only; confidence sets need a fixed β".into(),
        ));
    }
    Ok(())
}

/// Confidence report for the projection-form estimate of a density fit.
pub fn density_confidence(
    fit: &DensityFit,
    kind: StandardizerKind,
    lambda: f64,
    alpha: f64,
    method: ThresholdMethod,
    seed: u64,
    allow_selected_beta: bool,
) -> Result<ConfidenceReport> {
    check_fixed_beta(&fit.beta, allow_selected_beta)?;
    let coords = EifCoords::new(fit.regularized_eif(), fit.folds.clone())?;
    let omega = Standardizer::build(&coords, kind, lambda)?;
    let threshold = threshold(&coords, &omega, method, alpha, seed)?;
    Ok(ConfidenceReport { estimate: fit.projection.coeffs().to_vec(), omega, threshold, n: coords.n(), radius: None })
}

/// Tests equality of the two counterfactual densities by checking whether zero lies in the
/// preimage confidence set of the density difference.
pub fn equality_test(data: &Dataset, cfg: &EqualityConfig, learner: &dyn NuisanceLearner) -> Result<TestReport> {
    check_fixed_beta(&cfg.beta, cfg.allow_selected_beta)?;
    let dcfg = DensityConfig { basis: cfg.basis, beta: cfg.beta.clone(), folds: cfg.folds, seed: cfg.seed };
    let fit = density_difference(data, &dcfg, learner)?;
    let report =
        density_confidence(&fit, cfg.omega, cfg.lambda, cfg.alpha, cfg.threshold, cfg.seed, cfg.allow_selected_beta)?;
    let zero = vec![0.0; cfg.basis.kmax];
    let statistic = report.statistic(&zero)?;
    Ok(TestReport {
        estimator: "density_difference".into(),
        alpha: cfg.alpha,
        zeta_hat: report.threshold.value,
        method: cfg.threshold.name().into(),
        omega_kind: cfg.omega,
        lambda: cfg.lambda,
        reject: statistic > report.threshold.value,
        statistic,
        radius: None,
        seed: cfg.seed,
        boot: cfg.threshold.reps(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdConfig {
    /// Multiplier on the median pairwise outcome distance.
    pub bandwidth_mult: f64,
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    pub threshold: ThresholdMethod,
    /// Stopping tolerance of the low-rank Gram factorization.
    pub rank_tol: f64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self {
            bandwidth_mult: 1.0,
            folds: 2,
            seed: 0,
            alpha: 0.05,
            threshold: ThresholdMethod::Bootstrap { reps: DEFAULT_BOOT },
            rank_tol: 1e-10,
        }
    }
}

/// Kernel two-sample test of equal counterfactual outcome laws via the one-step embedding difference.
pub fn mmd_test(data: &Dataset, cfg: &MmdConfig, learner: &dyn NuisanceLearner) -> Result<TestReport> {
    let kernel = KernelSpec::median_heuristic(data.y(), cfg.bandwidth_mult)?;
    let split = split_folds(data.len(), cfg.folds, cfg.seed)?;
    let features = pivoted_cholesky(data.y(), kernel, cfg.rank_tol, data.len());
    let fit = kme_difference(data, kernel, &split, learner, Some(&features))?;
    let statistic = data.len() as f64 * fit.estimate_element().norm_sq().max(0.0);
    let coords = EifCoords::new(fit.eif_features.clone().expect("features requested"), split)?;
    let omega = Standardizer::identity();
    let zeta = threshold(&coords, &omega, cfg.threshold, cfg.alpha, cfg.seed)?;
    Ok(TestReport {
        estimator: "kme_difference".into(),
        alpha: cfg.alpha,
        zeta_hat: zeta.value,
        method: cfg.threshold.name().into(),
        omega_kind: StandardizerKind::Identity,
        lambda: 1.0,
        reject: statistic > zeta.value,
        statistic,
        radius: None,
        seed: cfg.seed,
        boot: cfg.threshold.reps(),
    })
}

/// Half-width `(b ζ / (n π))^{1/2}` of the uniform band implied by a spherical set.
pub fn band_uniform_radius(zeta: f64, n: usize, b: f64, omega: &Standardizer) -> Result<f64> {
    if !omega.is_identity() {
        return Err(Error::InvalidInput("uniform band radius requires the identity standardizer".into()));
    }
    if zeta < 0.0 || n == 0 || b <= 0.0 {
        return Err(Error::InvalidInput("radius needs ζ ≥ 0, n ≥ 1 and b > 0".into()));
    }
    Ok((b * zeta / (n as f64 * std::f64::consts::PI)).sqrt())
}

/// Spherical confidence report with uniform-band radius for a band fit.
pub fn band_confidence(fit: &BandFit, alpha: f64, method: ThresholdMethod, seed: u64) -> Result<ConfidenceReport> {
    let coords = EifCoords::new(fit.eif_coords(), fit.folds.clone())?;
    let omega = Standardizer::identity();
    let threshold = threshold(&coords, &omega, method, alpha, seed)?;
    let radius = band_uniform_radius(threshold.value, coords.n(), fit.b, &omega)?;
    Ok(ConfidenceReport { estimate: fit.estimate.coords(), omega, threshold, n: coords.n(), radius: Some(radius) })
}
