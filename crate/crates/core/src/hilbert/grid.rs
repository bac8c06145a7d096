use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum GridSpec {
    Uniform01 { m: usize },
    GaussianImportance { m: usize, mu: f64, sigma: f64 },
}

/// Evaluation points `t_k` and scale factors `s_k` such that
/// `D_m(f)·D_m(g) = Σ f(t_k) g(t_k) s_k²` approximates `⟨f, g⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadGrid {
    pub spec: GridSpec,
    pub points: Vec<f64>,
    pub scales: Vec<f64>,
}

impl QuadGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        match spec {
            GridSpec::Uniform01 { m } => {
                check_m(m)?;
                let s = (m as f64).sqrt().recip();
                let points = (1..=m).map(|k| k as f64 / (m + 1) as f64).collect();
                Ok(Self { spec, points, scales: vec![s; m] })
            }
            GridSpec::GaussianImportance { m, mu, sigma } => {
                check_m(m)?;
                if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "importance grid needs finite μ and σ > 0, got ({mu}, {sigma})"
                    )));
                }
                let normal =
                    Normal::new(mu, sigma).map_err(|e| Error::InvalidInput(format!("importance grid: {e}")))?;
                let mf = m as f64;
                let mut points = Vec::with_capacity(m);
                let mut scales = Vec::with_capacity(m);
                for k in 1..=m {
                    let t = normal.inverse_cdf(k as f64 / (mf + 1.0));
                    points.push(t);
                    scales.push((mf * normal.pdf(t)).sqrt().recip());
                }
                Ok(Self { spec, points, scales })
            }
        }
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(GridSpec::Uniform01 { m })
    }

    pub fn gaussian(m: usize, mu: f64, sigma: f64) -> Result<Self> {
        Self::new(GridSpec::GaussianImportance { m, mu, sigma })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The coordinate map `D_m(f) = (f(t_k) s_k)_k`.
    pub fn dm_map(&self, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        let out: Vec<f64> = self.points.iter().zip(&self.scales).map(|(&t, &s)| f(t) * s).collect();
        crate::error::ensure_finite(&out, "grid coordinates")?;
        Ok(out)
    }

    /// Scales raw point values into `D_m` coordinates in place.
    pub fn scale_in_place(&self, values: &mut [f64]) {
        for (v, s) in values.iter_mut().zip(&self.scales) {
            *v *= s;
        }
    }
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidInput("grid size must be ≥ 1".into()));
    }
    Ok(())
}

/// Euclidean inner product of two coordinate vectors.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
