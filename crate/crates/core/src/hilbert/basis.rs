use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default truncation order for coefficient representations.
pub const DEFAULT_KMAX: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// `1, √2 cos(π y), √2 cos(2π y), …` on the unit interval.
    Cosine,
    /// Shifted Legendre polynomials `√(2k−1) P_{k−1}(2y−1)`.
    Legendre,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::Cosine => f.write_str("cosine"),
            BasisKind::Legendre => f.write_str("legendre"),
        }
    }
}

/// A truncated orthonormal basis of `L²([lo, hi])`.
///
/// Indices are 1-based to match the usual `h_1, h_2, …` numbering; `h_1` is
/// constant for both families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub kind: BasisKind,
    pub kmax: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Basis {
    pub fn new(kind: BasisKind, kmax: usize) -> Result<Self> {
        Self::on_interval(kind, kmax, 0.0, 1.0)
    }

    pub fn cosine(kmax: usize) -> Result<Self> {
        Self::new(BasisKind::Cosine, kmax)
    }

    pub fn legendre(kmax: usize) -> Result<Self> {
        Self::new(BasisKind::Legendre, kmax)
    }

    pub fn on_interval(kind: BasisKind, kmax: usize, lo: f64, hi: f64) -> Result<Self> {
        if kmax == 0 {
            return Err(Error::InvalidInput("basis truncation order must be ≥ 1".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidInput(format!("invalid basis domain [{lo}, {hi}]")));
        }
        Ok(Self { kind, kmax, lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }

    /// Evaluates `h_k(y)`.
    pub fn eval(&self, k: usize, y: f64) -> Result<f64> {
        if k == 0 || k > self.kmax {
            return Err(Error::Domain(format!("basis index {k} outside 1..={}", self.kmax)));
        }
        if !self.contains(y) {
            return Err(Error::Domain(format!("point {y} outside basis domain [{}, {}]", self.lo, self.hi)));
        }
        let u = (y - self.lo) / self.width();
        let scale = self.width().sqrt().recip();
        let v = match self.kind {
            BasisKind::Cosine if k == 1 => 1.0,
            BasisKind::Cosine => SQRT_2 * (PI * (k - 1) as f64 * u).cos(),
            BasisKind::Legendre => {
                let deg = k - 1;
                ((2 * deg + 1) as f64).sqrt() * legendre(deg, 2.0 * u - 1.0)
            }
        };
        Ok(scale * v)
    }

    /// Writes `h_1(y), …, h_kmax(y)` into `out`; `y` is assumed in-domain.
    pub(crate) fn eval_all_into(&self, y: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.kmax);
        let u = ((y - self.lo) / self.width()).clamp(0.0, 1.0);
        let scale = self.width().sqrt().recip();
        match self.kind {
            BasisKind::Cosine => {
                out[0] = scale;
                for (k, o) in out.iter_mut().enumerate().skip(1) {
                    *o = scale * SQRT_2 * (PI * k as f64 * u).cos();
                }
            }
            BasisKind::Legendre => {
                let t = 2.0 * u - 1.0;
                let (mut p0, mut p1) = (1.0, t);
                for (deg, o) in out.iter_mut().enumerate() {
                    let p = match deg {
                        0 => 1.0,
                        1 => t,
                        _ => {
                            let d = deg as f64;
                            let p2 = ((2.0 * d - 1.0) * t * p1 - (d - 1.0) * p0) / d;
                            p0 = p1;
                            p1 = p2;
                            p2
                        }
                    };
                    *o = scale * ((2 * deg + 1) as f64).sqrt() * p;
                }
            }
        }
    }

    /// All basis functions at a checked point.
    pub fn eval_all(&self, y: f64) -> Result<Vec<f64>> {
        if !self.contains(y) {
            return Err(Error::Domain(format!("point {y} outside basis domain [{}, {}]", self.lo, self.hi)));
        }
        let mut out = vec![0.0; self.kmax];
        self.eval_all_into(y, &mut out);
        Ok(out)
    }

    /// Matrix with rows indexed by `points` and columns by basis index.
    pub fn design(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(points.len(), self.kmax);
        let mut row = vec![0.0; self.kmax];
        for (i, &y) in points.iter().enumerate() {
            if !self.contains(y) {
                return Err(Error::Domain(format!("point {y} outside basis domain")));
            }
            self.eval_all_into(y, &mut row);
            for (k, v) in row.iter().enumerate() {
                m[(i, k)] = *v;
            }
        }
        Ok(m)
    }

    pub(crate) fn ensure_same(&self, other: &Basis) -> Result<()> {
        if self != other {
            return Err(Error::BasisMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

fn legendre(deg: usize, t: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, t);
    match deg {
        0 => 1.0,
        1 => t,
        _ => {
            for k in 2..=deg {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}
