//! Counterfactual kernel mean embeddings and their cross-fitted one-step estimator.
//!
//! Elements are finite sums `Σ α_i K_{y_i}`; the cross-fitted estimator keeps one weight per
//! observation so that its pieces add without merging anchor lists.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldSplit};
use crate::density::{ensure_disjoint, flat_x};
use crate::error::{Error, Result};
use crate::nuisance::{Nuisance, NuisanceLearner, OutcomeModel};
use crate::stats;

/// Weights below this fraction of the largest magnitude are dropped.
pub const PRUNE_RELATIVE: f64 = 1e-12;

/// A bounded kernel on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `exp(−(y − y')² / (2 bandwidth²))`.
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!("kernel bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(KernelSpec::Gaussian { bandwidth })
    }

    /// Median-heuristic Gaussian kernel scaled by `multiplier`.
    pub fn median_heuristic(ys: &[f64], multiplier: f64) -> Result<Self> {
        Self::gaussian(multiplier * stats::median_pairwise_distance(ys))
    }

    #[inline]
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let z = (a - b) / bandwidth;
                (-0.5 * z * z).exp()
            }
        }
    }

    /// `sup_y κ(y, y)`.
    pub fn sup_diagonal(&self) -> f64 {
        1.0
    }
}

/// `Σ α_i K_{y_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeElement {
    pub kernel: KernelSpec,
    pub anchors: Vec<f64>,
    pub weights: Vec<f64>,
}

impl KmeElement {
    pub fn new(kernel: KernelSpec, anchors: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if anchors.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: anchors.len(), got: weights.len() });
        }
        crate::error::ensure_finite(&weights, "embedding weights")?;
        Ok(Self { kernel, anchors, weights })
    }

    pub fn feature(kernel: KernelSpec, y: f64) -> Self {
        Self { kernel, anchors: vec![y], weights: vec![1.0] }
    }

    pub fn zero(kernel: KernelSpec) -> Self {
        Self { kernel, anchors: Vec::new(), weights: Vec::new() }
    }

    /// `self + scale · other`, concatenating anchor lists.
    pub fn add_scaled(&self, scale: f64, other: &KmeElement) -> Result<KmeElement> {
        if self.kernel != other.kernel {
            return Err(Error::InvalidInput("embeddings use different kernels".into()));
        }
        let mut anchors = self.anchors.clone();
        anchors.extend_from_slice(&other.anchors);
        let mut weights = self.weights.clone();
        weights.extend(other.weights.iter().map(|w| scale * w));
        Ok(KmeElement { kernel: self.kernel, anchors, weights })
    }

    /// Evaluates the function `y ↦ Σ α_i κ(y_i, y)`.
    pub fn eval(&self, y: f64) -> f64 {
        self.anchors.iter().zip(&self.weights).map(|(a, w)| w * self.kernel.eval(*a, y)).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        kme_inner(self, self).expect("same kernel")
    }

    /// Drops anchors whose weight is negligible relative to the largest.
    pub fn pruned(&self, relative: f64) -> KmeElement {
        let top = self.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let keep: Vec<usize> = (0..self.weights.len()).filter(|&i| self.weights[i].abs() > relative * top).collect();
        KmeElement {
            kernel: self.kernel,
            anchors: keep.iter().map(|&i| self.anchors[i]).collect(),
            weights: keep.iter().map(|&i| self.weights[i]).collect(),
        }
    }
}

/// `Σ_{i,j} α_i β_j κ(y_i, y'_j)`.
pub fn kme_inner(u: &KmeElement, v: &KmeElement) -> Result<f64> {
    if u.kernel != v.kernel {
        return Err(Error::InvalidInput("embeddings use different kernels".into()));
    }
    let mut total = 0.0;
    for (a, wa) in u.anchors.iter().zip(&u.weights) {
        if *wa == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (b, wb) in v.anchors.iter().zip(&v.weights) {
            row += wb * u.kernel.eval(*a, *b);
        }
        total += wa * row;
    }
    Ok(total)
}

/// Conditional mean embedding at `x`: similarity weights on the arm's observed outcomes.
pub fn cond_mean_feature(model: &dyn OutcomeModel, x: &[f64], kernel: KernelSpec) -> Result<KmeElement> {
    let aw = model
        .anchor_weights(x)
        .ok_or_else(|| Error::InvalidInput("outcome model does not expose anchor weights".into()))?;
    KmeElement::new(kernel, aw.anchors, aw.weights.row(0).iter().cloned().collect())
}

/// Plug-in embedding: conditional mean embeddings averaged over `xs`.
pub fn kme_plugin(nuisance: &Nuisance, xs: &[f64], kernel: KernelSpec) -> Result<KmeElement> {
    let aw = nuisance
        .outcome
        .anchor_weights(xs)
        .ok_or_else(|| Error::InvalidInput("outcome model does not expose anchor weights".into()))?;
    KmeElement::new(kernel, aw.anchors, aw.weights.row_mean().iter().cloned().collect())
}

/// Influence function `1{a}/ĝ·(K_y − μ̂(x)) + μ̂(x) − plugin` at one observation.
pub fn kme_eif(nuisance: &Nuisance, plugin: &KmeElement, x: &[f64], a: u8, y: f64) -> Result<KmeElement> {
    let mu = cond_mean_feature(nuisance.outcome.as_ref(), x, plugin.kernel)?;
    let ipw = if a == nuisance.arm { 1.0 / nuisance.prob_arm(x) } else { 0.0 };
    let mut out =
        KmeElement::new(plugin.kernel, mu.anchors.clone(), mu.weights.iter().map(|w| (1.0 - ipw) * w).collect())?;
    if ipw != 0.0 {
        out = out.add_scaled(ipw, &KmeElement::feature(plugin.kernel, y))?;
    }
    out.add_scaled(-1.0, plugin)
}

/// Low-rank factor `L` with `G ≈ L Lᵀ` for the Gram matrix of `points`, by pivoted Cholesky.
pub fn pivoted_cholesky(points: &[f64], kernel: KernelSpec, tol: f64, max_rank: usize) -> DMatrix<f64> {
    let n = points.len();
    let mut diag: Vec<f64> = points.iter().map(|&p| kernel.eval(p, p)).collect();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < max_rank.min(n) {
        let (piv, &dmax) = diag.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
        if dmax <= tol {
            break;
        }
        let root = dmax.sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            let mut v = kernel.eval(points[i], points[piv]);
            for c in &cols {
                v -= c[i] * c[piv];
            }
            col[i] = v / root;
        }
        for i in 0..n {
            diag[i] = (diag[i] - col[i] * col[i]).max(0.0);
        }
        diag[piv] = 0.0;
        cols.push(col);
    }
    DMatrix::from_fn(n, cols.len(), |i, c| cols[c][i])
}

/// Cross-fitted embedding estimate with weights indexed by observation.
#[derive(Debug, Clone)]
pub struct KmeFit {
    pub kernel: KernelSpec,
    pub folds: FoldSplit,
    /// Observed outcomes; weight `i` multiplies `K_{y_i}`.
    pub anchors: Vec<f64>,
    pub plugin: Vec<f64>,
    pub correction: Vec<f64>,
    pub estimate: Vec<f64>,
    /// Influence functions in low-rank feature coordinates, one row per observation.
    pub eif_features: Option<DMatrix<f64>>,
}

impl KmeFit {
    pub fn element(&self, weights: &[f64]) -> KmeElement {
        KmeElement { kernel: self.kernel, anchors: self.anchors.clone(), weights: weights.to_vec() }
            .pruned(PRUNE_RELATIVE)
    }

    pub fn estimate_element(&self) -> KmeElement {
        self.element(&self.estimate)
    }

    pub fn plugin_element(&self) -> KmeElement {
        self.element(&self.plugin)
    }

    fn minus(&self, other: &KmeFit) -> KmeFit {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
        KmeFit {
            kernel: self.kernel,
            folds: self.folds.clone(),
            anchors: self.anchors.clone(),
            plugin: sub(&self.plugin, &other.plugin),
            correction: sub(&self.correction, &other.correction),
            estimate: sub(&self.estimate, &other.estimate),
            eif_features: match (&self.eif_features, &other.eif_features) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            },
        }
    }
}

/// Cross-fitted one-step estimate of the counterfactual embedding for `arm`.
///
/// `features` (one row per observation) enables influence features for the bootstrap.
pub fn kme_onestep_arm(
    data: &Dataset,
    arm: u8,
    kernel: KernelSpec,
    split: &FoldSplit,
    learner: &dyn NuisanceLearner,
    features: Option<&DMatrix<f64>>,
) -> Result<KmeFit> {
    let n = data.len();
    if split.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: split.len() });
    }
    if let Some(f) = features {
        if f.nrows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: f.nrows() });
        }
    }
    let jf = split.folds as f64;
    let mut plugin = vec![0.0; n];
    let mut correction = vec![0.0; n];
    let mut estimate = vec![0.0; n];
    let mut eif_features = features.map(|f| DMatrix::zeros(n, f.ncols()));
    for (j, eval_rows) in split.members().into_iter().enumerate() {
        let train_rows = split.complement(j);
        ensure_disjoint(&train_rows, &eval_rows)?;
        let nuisance = learner.fit(&data.subset(&train_rows), arm)?;
        let anchor_rows: Vec<usize> = train_rows.iter().copied().filter(|&i| data.a()[i] == arm).collect();
        let w_train = nuisance
            .outcome
            .anchor_weights(&flat_x(data, &train_rows))
            .ok_or_else(|| Error::InvalidInput("outcome model does not expose anchor weights".into()))?;
        if w_train.anchors.len() != anchor_rows.len()
            || w_train.anchors.iter().zip(&anchor_rows).any(|(y, &i)| *y != data.y()[i])
        {
            return Err(Error::InvalidInput("outcome model anchors are not the arm's training outcomes".into()));
        }
        let w_eval = nuisance.outcome.anchor_weights(&flat_x(data, &eval_rows)).expect("checked above");
        let nj = eval_rows.len() as f64;

        let fold_plugin = w_train.weights.row_mean();
        let ipw: Vec<f64> = eval_rows
            .iter()
            .map(|&i| if data.a()[i] == arm { 1.0 / nuisance.prob_arm(data.x(i)) } else { 0.0 })
            .collect();
        let resid_coef = nalgebra::DVector::from_iterator(eval_rows.len(), ipw.iter().map(|p| (1.0 - p) / nj));
        let residual = w_eval.weights.tr_mul(&resid_coef);

        // Plug-in and its negative cancel in the estimate, so they are never added there.
        let mut onestep_j = vec![0.0; n];
        for (&i, p) in eval_rows.iter().zip(&ipw) {
            onestep_j[i] += p / nj;
        }
        for (k, &i) in anchor_rows.iter().enumerate() {
            onestep_j[i] += residual[k];
        }
        for i in 0..n {
            estimate[i] += onestep_j[i] / jf;
        }
        for (k, &i) in anchor_rows.iter().enumerate() {
            plugin[i] += fold_plugin[k] / jf;
        }
        for i in 0..n {
            let p = anchor_rows.binary_search(&i).map(|k| fold_plugin[k]).unwrap_or(0.0);
            correction[i] += (onestep_j[i] - p) / jf;
        }

        if let (Some(feat), Some(out)) = (features, eif_features.as_mut()) {
            let anchor_feat = DMatrix::from_fn(anchor_rows.len(), feat.ncols(), |k, c| feat[(anchor_rows[k], c)]);
            let mu = &w_eval.weights * &anchor_feat;
            let plugin_feat = fold_plugin * &anchor_feat;
            for (r, &i) in eval_rows.iter().enumerate() {
                for c in 0..feat.ncols() {
                    out[(i, c)] = ipw[r] * feat[(i, c)] + (1.0 - ipw[r]) * mu[(r, c)] - plugin_feat[c];
                }
            }
        }
    }
    Ok(KmeFit { kernel, folds: split.clone(), anchors: data.y().to_vec(), plugin, correction, estimate, eif_features })
}

/// Treated-minus-control embedding difference on a shared split.
pub fn kme_difference(
    data: &Dataset,
    kernel: KernelSpec,
    split: &FoldSplit,
    learner: &dyn NuisanceLearner,
    features: Option<&DMatrix<f64>>,
) -> Result<KmeFit> {
    if !data.has_both_arms() {
        return Err(Error::InsufficientData("embedding difference needs both arms".into()));
    }
    let treated = kme_onestep_arm(data, 1, kernel, split, learner, features)?;
    let control = kme_onestep_arm(data, 0, kernel, split, learner, features)?;
    Ok(treated.minus(&control))
}

/// Treated-arm one-step embedding with a seeded split.
pub fn kme_onestep(
    data: &Dataset,
    kernel: KernelSpec,
    folds: usize,
    seed: u64,
    learner: &dyn NuisanceLearner,
) -> Result<KmeFit> {
    let split = crate::data::split_folds(data.len(), folds, seed)?;
    kme_onestep_arm(data, 1, kernel, &split, learner, None)
}
