use serde::{Deserialize, Serialize};

use crate::stats;

/// Covariate-similarity weights over a set of anchor rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimilarityEngine {
    /// Gaussian product kernel with one bandwidth per coordinate.
    Gaussian { bandwidths: Vec<f64> },
    /// Equal weight on every anchor.
    Uniform,
}

impl SimilarityEngine {
    /// Rule-of-thumb bandwidths `scale · 0.9 · min(sd, IQR/1.34) · n^{−1/(d+4)}` per coordinate.
    pub fn gaussian_rule_of_thumb(anchors: &[f64], d: usize, scale: f64) -> Self {
        let n = anchors.len() / d.max(1);
        let rate = 1.0 / (d as f64 + 4.0);
        let bandwidths = (0..d)
            .map(|j| {
                let col: Vec<f64> = anchors.chunks_exact(d).map(|r| r[j]).collect();
                let h = scale * 0.9 * stats::robust_spread(&col) * (n as f64).powf(-rate);
                if h > 0.0 {
                    h
                } else {
                    1.0
                }
            })
            .collect();
        SimilarityEngine::Gaussian { bandwidths }
    }

    /// Writes weights of `query` against row-major `anchors` into `out`, normalized to sum to one.
    ///
    /// Returns `false` when the raw total was zero or not finite and uniform weights were used.
    pub fn weights_into(&self, anchors: &[f64], d: usize, query: &[f64], out: &mut [f64]) -> bool {
        let n = out.len();
        match self {
            SimilarityEngine::Uniform => {
                out.fill(1.0 / n as f64);
                true
            }
            SimilarityEngine::Gaussian { bandwidths } => {
                let mut top = f64::NEG_INFINITY;
                for (o, row) in out.iter_mut().zip(anchors.chunks_exact(d)) {
                    let mut s = 0.0;
                    for ((r, q), h) in row.iter().zip(query).zip(bandwidths) {
                        let z = (r - q) / h;
                        s += z * z;
                    }
                    *o = -0.5 * s;
                    top = top.max(*o);
                }
                let mut total = 0.0;
                for o in out.iter_mut() {
                    *o = (*o - top).exp();
                    total += *o;
                }
                if total > 0.0 && total.is_finite() {
                    for o in out.iter_mut() {
                        *o /= total;
                    }
                    true
                } else {
                    log::warn!("similarity weights degenerate at query {query:?}; using uniform weights");
                    out.fill(1.0 / n as f64);
                    false
                }
            }
        }
    }
}
