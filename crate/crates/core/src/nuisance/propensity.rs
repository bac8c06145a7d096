use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::stats;

/// Default truncation level for propensity predictions.
pub const DEFAULT_EPS: f64 = 0.01;

/// A fitted model of `P(A = 1 | X = x)`.
pub trait PropensityFit: Send + Sync + Debug {
    /// Probability of treatment, already truncated to `[ε, 1 − ε]`.
    fn prob_treated(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMethod {
    Logistic,
    /// Gaussian product kernel with per-coordinate Silverman bandwidths.
    NadarayaWatson,
    /// Treated fraction of the training sample, ignoring covariates.
    Marginal,
    /// A known design probability; no fitting.
    Known {
        p: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Fitted {
    Logistic { coef: Vec<f64> },
    Kernel { x: Vec<f64>, a: Vec<f64>, bandwidths: Vec<f64> },
    Constant { p: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropensityModel {
    pub method: PropensityMethod,
    pub eps: f64,
    d: usize,
    fitted: Fitted,
}

impl PropensityModel {
    /// A fixed propensity, e.g. a known design.
    pub fn constant(p: f64, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("propensity {p} outside [0, 1]")));
        }
        Ok(Self { method: PropensityMethod::Marginal, eps, d: 0, fitted: Fitted::Constant { p } })
    }

    pub fn fit(train: &Dataset, method: PropensityMethod, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        let fitted = match method {
            PropensityMethod::Known { p } => Self::constant(p, eps)?.fitted,
            _ if !train.has_both_arms() => {
                return Err(Error::InsufficientData("propensity fit needs both treatment arms".into()))
            }
            PropensityMethod::Logistic => Fitted::Logistic { coef: fit_logistic(train)? },
            PropensityMethod::NadarayaWatson => {
                let d = train.dim();
                let bandwidths = (0..d)
                    .map(|j| {
                        let col: Vec<f64> = (0..train.len()).map(|i| train.x(i)[j]).collect();
                        let h = stats::silverman(&col, 0.2);
                        if h > 0.0 {
                            h
                        } else {
                            1.0
                        }
                    })
                    .collect();
                Fitted::Kernel {
                    x: train.x_flat().to_vec(),
                    a: train.a().iter().map(|&v| v as f64).collect(),
                    bandwidths,
                }
            }
            PropensityMethod::Marginal => Fitted::Constant { p: train.count_treated() as f64 / train.len() as f64 },
        };
        Ok(Self { method, eps, d: train.dim(), fitted })
    }

    fn raw(&self, x: &[f64]) -> f64 {
        match &self.fitted {
            Fitted::Logistic { coef } => {
                let eta = coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
                expit(eta)
            }
            Fitted::Kernel { x: xs, a, bandwidths } => {
                let logs: Vec<f64> = xs
                    .chunks_exact(self.d)
                    .map(|row| {
                        -0.5 * row.iter().zip(x).zip(bandwidths).map(|((r, q), h)| ((r - q) / h).powi(2)).sum::<f64>()
                    })
                    .collect();
                let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let (mut num, mut den) = (0.0, 0.0);
                for (l, ai) in logs.iter().zip(a) {
                    let w = (l - top).exp();
                    num += w * ai;
                    den += w;
                }
                if den > 0.0 && den.is_finite() {
                    num / den
                } else {
                    a.iter().sum::<f64>() / a.len() as f64
                }
            }
            Fitted::Constant { p } => *p,
        }
    }
}

impl PropensityFit for PropensityModel {
    fn prob_treated(&self, x: &[f64]) -> f64 {
        let p = self.raw(x);
        let p = if p.is_nan() { 0.5 } else { p };
        p.clamp(self.eps, 1.0 - self.eps)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::InvalidInput(format!("truncation ε must lie in [0, 0.5), got {eps}")));
    }
    Ok(())
}

pub(crate) fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Damped Newton–Raphson for the logistic log-likelihood with an intercept.
fn fit_logistic(train: &Dataset) -> Result<Vec<f64>> {
    let n = train.len();
    let p = train.dim() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { train.x(i)[j - 1] });
    let target = DVector::from_iterator(n, train.a().iter().map(|&v| v as f64));
    let mut beta = DVector::zeros(p);
    let loglik = |b: &DVector<f64>| -> f64 {
        let eta = &design * b;
        eta.iter()
            .zip(target.iter())
            .map(|(&e, &t)| t * e - if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() })
            .sum()
    };
    let mut current = loglik(&beta);
    for _ in 0..200 {
        let eta = &design * &beta;
        let mu = eta.map(expit);
        let grad = design.tr_mul(&(&target - &mu));
        if grad.norm() < 1e-8 {
            break;
        }
        let wdiag = mu.map(|m| m * (1.0 - m));
        let mut weighted = design.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(wdiag.iter()) {
            row *= *w;
        }
        let hess = design.tr_mul(&weighted);
        let step = solve_spd_with_ridge(hess, &grad)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let val = loglik(&cand);
            if val.is_finite() && val >= current {
                beta = cand;
                current = val;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("logistic regression diverged".into()));
    }
    Ok(beta.as_slice().to_vec())
}

fn solve_spd_with_ridge(hess: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = hess.diagonal().amax().max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(ch) = h.cholesky() {
            return Ok(ch.solve(rhs));
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 100.0 };
    }
    Err(Error::Numerical("logistic Hessian is not positive definite".into()))
}
