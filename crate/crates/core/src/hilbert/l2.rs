use serde::{Deserialize, Serialize};

use super::basis::Basis;
use super::quad::CompositeRule;
use super::regseq::RegSeq;
use crate::error::{ensure_finite, Error, Result};

/// Default node count for projecting callables onto a basis.
pub const DEFAULT_PROJECTION_NODES: usize = 2048;

/// An element of `L²` stored by its first `kmax` generalized Fourier coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Fn {
    pub basis: Basis,
    coeffs: Vec<f64>,
}

impl L2Fn {
    pub fn new(basis: Basis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.kmax {
            return Err(Error::DimensionMismatch { expected: basis.kmax, got: coeffs.len() });
        }
        ensure_finite(&coeffs, "coefficients")?;
        Ok(Self { basis, coeffs })
    }

    pub fn zeros(basis: Basis) -> Self {
        Self { basis, coeffs: vec![0.0; basis.kmax] }
    }

    /// The basis element `h_k` (1-based).
    pub fn unit(basis: Basis, k: usize) -> Result<Self> {
        if k == 0 || k > basis.kmax {
            return Err(Error::Domain(format!("basis index {k} outside 1..={}", basis.kmax)));
        }
        let mut f = Self::zeros(basis);
        f.coeffs[k - 1] = 1.0;
        Ok(f)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn inner(&self, other: &L2Fn) -> Result<f64> {
        self.basis.ensure_same(&other.basis)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `a·self + other`.
    pub fn axpy(&self, a: f64, other: &L2Fn) -> Result<L2Fn> {
        self.basis.ensure_same(&other.basis)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| a * x + y).collect();
        L2Fn::new(self.basis, coeffs)
    }

    pub fn sub(&self, other: &L2Fn) -> Result<L2Fn> {
        other.axpy(-1.0, self)
    }

    /// Coefficient-wise shrinkage `Σ β_k ⟨f, h_k⟩ h_k`.
    pub fn gamma_beta(&self, beta: &RegSeq) -> Result<L2Fn> {
        beta.ensure_len(self.basis.kmax)?;
        let coeffs = self.coeffs.iter().zip(beta.values()).map(|(c, b)| c * b).collect();
        Ok(L2Fn { basis: self.basis, coeffs })
    }

    /// Left inverse of [`L2Fn::gamma_beta`]; requires every `β_k > 0`.
    pub fn gamma_beta_inv(&self, beta: &RegSeq) -> Result<L2Fn> {
        beta.ensure_len(self.basis.kmax)?;
        if let Some(k) = beta.values().iter().position(|&b| b <= 0.0) {
            return Err(Error::NotInvertible(format!("β_{} = 0", k + 1)));
        }
        let coeffs = self.coeffs.iter().zip(beta.values()).map(|(c, b)| c / b).collect();
        L2Fn::new(self.basis, coeffs)
    }

    pub fn seminorm_beta(&self, beta: &RegSeq) -> Result<f64> {
        beta.ensure_len(self.basis.kmax)?;
        Ok(self.coeffs.iter().zip(beta.values()).map(|(c, b)| (b * c).powi(2)).sum::<f64>().sqrt())
    }

    /// `(Σ k^{2u} c_k²)^{1/2}` over the stored coefficients.
    pub fn sobolev_norm_u(&self, u: f64) -> Result<f64> {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(Error::InvalidInput(format!("smoothness u must be ≥ 0, got {u}")));
        }
        Ok(self.coeffs.iter().enumerate().map(|(i, c)| ((i + 1) as f64).powf(2.0 * u) * c * c).sum::<f64>().sqrt())
    }

    /// Pointwise evaluation of the truncated expansion.
    pub fn eval(&self, y: f64) -> Result<f64> {
        let h = self.basis.eval_all(y)?;
        Ok(h.iter().zip(&self.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn eval_many(&self, ys: &[f64]) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.basis.kmax];
        ys.iter()
            .map(|&y| {
                if !self.basis.contains(y) {
                    return Err(Error::Domain(format!("point {y} outside basis domain")));
                }
                self.basis.eval_all_into(y, &mut h);
                Ok(h.iter().zip(&self.coeffs).map(|(a, b)| a * b).sum())
            })
            .collect()
    }
}

/// Projects `f` onto `basis` with a composite Gauss–Legendre rule of `n_quad` nodes.
pub fn project_callable(f: impl Fn(f64) -> f64, basis: &Basis, n_quad: usize) -> Result<L2Fn> {
    if n_quad < 128 {
        return Err(Error::InvalidInput(format!("projection needs ≥ 128 nodes, got {n_quad}")));
    }
    let rule = CompositeRule::new(basis.lo, basis.hi, n_quad);
    let mut coeffs = vec![0.0; basis.kmax];
    let mut h = vec![0.0; basis.kmax];
    for (&y, &w) in rule.nodes.iter().zip(&rule.weights) {
        let fy = f(y);
        if !fy.is_finite() {
            return Err(Error::NonFinite(format!("integrand at {y}")));
        }
        basis.eval_all_into(y, &mut h);
        for (c, hk) in coeffs.iter_mut().zip(&h) {
            *c += w * fy * hk;
        }
    }
    L2Fn::new(*basis, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    fn cos8() -> Basis {
        Basis::cosine(8).unwrap()
    }

    #[test]
    fn coefficient_arithmetic() {
        let b = cos8();
        let e1 = L2Fn::unit(b, 1).unwrap();
        let e2 = L2Fn::unit(b, 2).unwrap();
        let e3 = L2Fn::unit(b, 3).unwrap();
        assert_eq!(e3.inner(&e3).unwrap(), 1.0);
        assert_eq!(e1.inner(&e2).unwrap(), 0.0);
        let mut c = vec![0.0; 8];
        c[0] = 3.0;
        c[1] = 4.0;
        assert_eq!(L2Fn::new(b, c).unwrap().norm(), 5.0);
        let other = L2Fn::zeros(Basis::legendre(8).unwrap());
        assert!(matches!(e1.inner(&other), Err(Error::BasisMismatch(_))));
    }

    #[test]
    fn shrinkage_maps() {
        let b = cos8();
        let f = L2Fn::new(b, (1..=8).map(|k| 1.0 / k as f64).collect()).unwrap();
        assert_eq!(f.gamma_beta(&RegSeq::hard(8, 8)).unwrap(), f);
        assert_eq!(f.gamma_beta(&RegSeq::hard(0, 8)).unwrap().norm(), 0.0);
        let r = RegSeq::rational(5.0, 2.0, 8).unwrap();
        let back = f.gamma_beta(&r).unwrap().gamma_beta_inv(&r).unwrap();
        for (a, b) in back.coeffs().iter().zip(f.coeffs()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(f.gamma_beta_inv(&RegSeq::hard(4, 8)), Err(Error::NotInvertible(_))));
        assert!(f.gamma_beta(&RegSeq::hard(4, 9)).is_err());
    }

    #[test]
    fn seminorm_and_sobolev_examples() {
        let b = cos8();
        let f = L2Fn::new(b, vec![1.0, -2.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.3]).unwrap();
        assert!((f.seminorm_beta(&RegSeq::hard(8, 8)).unwrap() - f.norm()).abs() < 1e-15);
        let e5 = L2Fn::unit(b, 5).unwrap();
        assert_eq!(e5.seminorm_beta(&RegSeq::rational(5.0, 2.0, 8).unwrap()).unwrap(), 0.5);
        assert_eq!(L2Fn::zeros(b).seminorm_beta(&RegSeq::hard(3, 8)).unwrap(), 0.0);
        assert!((f.sobolev_norm_u(0.0).unwrap() - f.norm()).abs() < 1e-15);
        assert_eq!(L2Fn::unit(b, 3).unwrap().sobolev_norm_u(1.0).unwrap(), 3.0);
        let e12 = L2Fn::unit(b, 1).unwrap().axpy(1.0, &L2Fn::unit(b, 2).unwrap()).unwrap();
        assert!((e12.sobolev_norm_u(2.0).unwrap() - 17f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let b = cos8();
        let one = project_callable(|_| 1.0, &b, 2048).unwrap();
        assert!((one.coeffs()[0] - 1.0).abs() < 1e-8);
        assert!(one.coeffs()[1..].iter().all(|c| c.abs() < 1e-8));
        let c2 = project_callable(|y| SQRT_2 * (PI * y).cos(), &b, 2048).unwrap();
        assert!((c2.coeffs()[1] - 1.0).abs() < 1e-8);
        assert!(project_callable(|_| 1.0, &b, 64).is_err());
        assert!(project_callable(|y| if y > 0.5 { f64::NAN } else { 0.0 }, &b, 256).is_err());
    }

    #[test]
    fn beta22_projection_matches_riemann_sum() {
        let b = cos8();
        let pdf = |y: f64| 6.0 * y * (1.0 - y);
        let proj = project_callable(pdf, &b, 2048).unwrap();
        assert!((proj.coeffs()[0] - 1.0).abs() < 1e-10);
        let n = 1_000_000;
        for k in 2..=8 {
            let mid: f64 = (0..n)
                .map(|i| {
                    let y = (i as f64 + 0.5) / n as f64;
                    pdf(y) * b.eval(k, y).unwrap()
                })
                .sum::<f64>()
                / n as f64;
            assert!((proj.coeffs()[k - 1] - mid).abs() < 1e-6);
        }
        // Symmetry about 1/2 kills the odd cosine; the next one is −3√2/π².
        assert!(proj.coeffs()[1].abs() < 1e-12);
        assert!((proj.coeffs()[2] + 3.0 * SQRT_2 / (PI * PI)).abs() < 1e-10);
    }

    #[test]
    fn eval_matches_expansion() {
        let b = Basis::legendre(5).unwrap();
        let f = L2Fn::new(b, vec![0.2, -0.1, 0.4, 0.0, 0.7]).unwrap();
        let direct: f64 = (1..=5).map(|k| f.coeffs()[k - 1] * b.eval(k, 0.3).unwrap()).sum();
        assert!((f.eval(0.3).unwrap() - direct).abs() < 1e-13);
        assert_eq!(f.eval_many(&[0.3]).unwrap()[0], f.eval(0.3).unwrap());
    }
}
