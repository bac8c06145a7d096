//! Outcome laws for the simulation designs and their analytic densities.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::hilbert::quad::gauss_legendre;

/// Points on `[0, 1]` used to validate and bound densities on the unit interval.
pub const VALIDATION_POINTS: usize = 10_000;

const SINC_MEANS: [f64; 3] = [-4.0, 0.0, 4.0];
const SINC_SCALES: [f64; 3] = [2.0, 2.0, 1.0];

/// Law of the treated counterfactual outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum OutcomeLaw {
    /// Equal mixture of Beta(2,2), Beta(3,3), Beta(4,4).
    ZeroBoth,
    /// Equal mixture of Beta(1,1), Beta(8,4), Beta(4,8).
    NonzeroBoth,
    /// Equal mixture of Beta(1,5), Beta(5,2), Beta(4,8).
    SpikeLeft,
    BetaMixture {
        components: Vec<(f64, f64)>,
    },
    /// Density `1 + Σ_k c_k √2 cos(kπy)` on `[0, 1]`.
    CosineSeries {
        coeffs: Vec<f64>,
    },
    /// Equal mixture of `σ S + μ` where `S` has density `3 sinc⁴(s) / (2π)`.
    SincMixture,
}

impl OutcomeLaw {
    pub fn name(&self) -> String {
        match self {
            OutcomeLaw::ZeroBoth => "zero_both".into(),
            OutcomeLaw::NonzeroBoth => "nonzero_both".into(),
            OutcomeLaw::SpikeLeft => "spike_left".into(),
            OutcomeLaw::BetaMixture { .. } => "beta_mixture".into(),
            OutcomeLaw::CosineSeries { .. } => "cosine_series".into(),
            OutcomeLaw::SincMixture => "sinc_mixture".into(),
        }
    }

    fn beta_components(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            OutcomeLaw::ZeroBoth => Some(vec![(2.0, 2.0), (3.0, 3.0), (4.0, 4.0)]),
            OutcomeLaw::NonzeroBoth => Some(vec![(1.0, 1.0), (8.0, 4.0), (4.0, 8.0)]),
            OutcomeLaw::SpikeLeft => Some(vec![(1.0, 5.0), (5.0, 2.0), (4.0, 8.0)]),
            OutcomeLaw::BetaMixture { components } => Some(components.clone()),
            _ => None,
        }
    }

    /// Whether the law lives on `[0, 1]` rather than the real line.
    pub fn unit_support(&self) -> bool {
        !matches!(self, OutcomeLaw::SincMixture)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(comps) = self.beta_components() {
            if comps.is_empty() {
                return Err(Error::InvalidInput("beta mixture needs at least one component".into()));
            }
            for &(a, b) in &comps {
                if !(a >= 1.0 && b >= 1.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidInput(format!("beta parameters must be finite and ≥ 1, got ({a}, {b})")));
                }
            }
        }
        if let OutcomeLaw::CosineSeries { coeffs } = self {
            let min = unit_grid().map(|y| self.pdf(y)).fold(f64::INFINITY, f64::min);
            if min < 0.0 || coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!("cosine series density is negative (min {min:.4})")));
            }
        }
        Ok(())
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if let Some(comps) = self.beta_components() {
            return comps.iter().map(|&(a, b)| beta_pdf(a, b, y)).sum::<f64>() / comps.len() as f64;
        }
        match self {
            OutcomeLaw::CosineSeries { coeffs } => {
                if !(0.0..=1.0).contains(&y) {
                    return 0.0;
                }
                1.0 + coeffs.iter().enumerate().map(|(k, c)| c * SQRT_2 * (PI * (k + 1) as f64 * y).cos()).sum::<f64>()
            }
            OutcomeLaw::SincMixture => {
                SINC_MEANS.iter().zip(SINC_SCALES).map(|(m, s)| sinc4_density((y - m) / s) / s).sum::<f64>() / 3.0
            }
            _ => unreachable!("beta mixtures handled above"),
        }
    }

    /// Largest density value on the unit interval, padded for use as a rejection envelope.
    fn unit_envelope(&self) -> f64 {
        1.05 * unit_grid().map(|y| self.pdf(y)).fold(0.0, f64::max)
    }

    pub fn sampler(&self) -> Result<LawSampler> {
        self.validate()?;
        let envelope = if matches!(self, OutcomeLaw::CosineSeries { .. }) { self.unit_envelope() } else { 0.0 };
        let betas = self
            .beta_components()
            .map(|c| c.iter().map(|&(a, b)| Beta::new(a, b).expect("validated parameters")).collect())
            .unwrap_or_default();
        Ok(LawSampler { law: self.clone(), betas, envelope })
    }
}

fn unit_grid() -> impl Iterator<Item = f64> {
    (0..VALIDATION_POINTS).map(|i| i as f64 / (VALIDATION_POINTS - 1) as f64)
}

pub fn beta_pdf(a: f64, b: f64, y: f64) -> f64 {
    if !(0.0..=1.0).contains(&y) {
        return 0.0;
    }
    let term = |p: f64, v: f64| if p == 1.0 { 0.0 } else { (p - 1.0) * v.ln() };
    (term(a, y) + term(b, 1.0 - y) - ln_beta(a, b)).exp()
}

/// `3 sinc⁴(s) / (2π)` with `sinc(s) = sin(s)/s`.
pub fn sinc4_density(s: f64) -> f64 {
    let v = if s.abs() < 1e-4 { 1.0 - s * s / 6.0 } else { s.sin() / s };
    3.0 * v.powi(4) / (2.0 * PI)
}

/// Draws from `3 sinc⁴ / (2π)` by rejection from the envelope `∝ min(1, s⁻⁴)`.
pub fn sample_sinc4(rng: &mut impl Rng) -> f64 {
    loop {
        let s = if rng.random::<f64>() < 0.75 {
            rng.random_range(-1.0..1.0)
        } else {
            let u: f64 = 1.0 - rng.random::<f64>();
            let tail = u.powf(-1.0 / 3.0);
            if rng.random::<bool>() {
                tail
            } else {
                -tail
            }
        };
        let bound = if s.abs() <= 1.0 { 1.0 } else { s.powi(-4) };
        let ratio = sinc4_density(s) * 2.0 * PI / 3.0 / bound;
        if rng.random::<f64>() < ratio {
            return s;
        }
    }
}

/// Draws `count` values from the sinc⁴ mixture.
pub fn sample_sinc_mixture(count: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let c = rng.random_range(0..3);
            SINC_SCALES[c] * sample_sinc4(rng) + SINC_MEANS[c]
        })
        .collect()
}

/// Density of a sum of four independent `U(−1, 1)` variables.
fn sum4_uniform_density(x: f64) -> f64 {
    let t = (x + 4.0) / 2.0;
    if !(0.0..=4.0).contains(&t) {
        return 0.0;
    }
    let binom = [1.0, 4.0, 6.0, 4.0, 1.0];
    let mut acc = 0.0;
    for (k, c) in binom.iter().enumerate() {
        let d = t - k as f64;
        if d > 0.0 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * c * d.powi(3);
        }
    }
    0.5 * acc / 6.0
}

/// Bandlimited projection of the sinc⁴ mixture density: frequencies restricted to `[−b, b]`.
#[derive(Debug, Clone)]
pub struct BandlimitedSincTruth {
    /// Per component: frequency nodes and weights already multiplied by the spectrum.
    panels: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

impl BandlimitedSincTruth {
    pub fn new(b: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidInput(format!("bandlimit must be > 0, got {b}")));
        }
        let (gx, gw) = gauss_legendre(16);
        let mut panels = Vec::new();
        for (mu, sigma) in SINC_MEANS.iter().zip(SINC_SCALES) {
            // Kinks of the spectrum sit at ω = j/σ for j = −4..4.
            let mut breaks: Vec<f64> = vec![-b, b];
            breaks.extend((-4..=4).map(|j| j as f64 / sigma).filter(|w| w.abs() < b));
            breaks.sort_by(f64::total_cmp);
            let mut nodes = Vec::new();
            let mut weights = Vec::new();
            for pair in breaks.windows(2) {
                let sub = 8;
                let h = (pair[1] - pair[0]) / sub as f64;
                for s in 0..sub {
                    let lo = pair[0] + s as f64 * h;
                    for (x, w) in gx.iter().zip(&gw) {
                        let omega = lo + 0.5 * h * (x + 1.0);
                        nodes.push(omega);
                        weights.push(0.5 * h * w * sum4_uniform_density(sigma * omega) / (2.0 * PI));
                    }
                }
            }
            panels.push((*mu, nodes, weights));
        }
        Ok(Self { panels })
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.panels
            .iter()
            .map(|(mu, nodes, weights)| nodes.iter().zip(weights).map(|(w, q)| q * (w * (y - mu)).cos()).sum::<f64>())
            .sum()
    }
}

/// A validated sampler for an [`OutcomeLaw`].
#[derive(Debug, Clone)]
pub struct LawSampler {
    law: OutcomeLaw,
    betas: Vec<Beta<f64>>,
    envelope: f64,
}

impl LawSampler {
    pub fn law(&self) -> &OutcomeLaw {
        &self.law
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if !self.betas.is_empty() {
            let c = rng.random_range(0..self.betas.len());
            return self.betas[c].sample(rng);
        }
        match &self.law {
            OutcomeLaw::SincMixture => {
                let c = rng.random_range(0..3);
                SINC_SCALES[c] * sample_sinc4(rng) + SINC_MEANS[c]
            }
            law => rejection_unit(|y| law.pdf(y), self.envelope, rng),
        }
    }
}

fn rejection_unit(pdf: impl Fn(f64) -> f64, envelope: f64, rng: &mut impl Rng) -> f64 {
    loop {
        let y: f64 = rng.random();
        if rng.random::<f64>() * envelope < pdf(y) {
            return y;
        }
    }
}

/// Law of the control counterfactual outcome relative to the treated law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ControlLaw {
    SameAsTreated,
    /// Density `q₁(y) − amplitude · cos(k² π y)`.
    CosinePerturb {
        k: u32,
        amplitude: f64,
    },
}

/// Validated control-arm sampler and density.
#[derive(Debug, Clone)]
pub struct ControlSampler {
    spec: ControlLaw,
    treated: LawSampler,
    envelope: f64,
}

impl ControlSampler {
    pub fn new(spec: &ControlLaw, treated: &LawSampler) -> Result<Self> {
        let mut envelope = 0.0;
        if let ControlLaw::CosinePerturb { k, amplitude } = *spec {
            if !treated.law.unit_support() {
                return Err(Error::InvalidInput("cosine perturbations need a treated law on [0, 1]".into()));
            }
            if k == 0 || !amplitude.is_finite() {
                return Err(Error::InvalidInput("perturbation needs k ≥ 1 and a finite amplitude".into()));
            }
            let q0 = |y: f64| treated.law.pdf(y) - amplitude * (PI * (k * k) as f64 * y).cos();
            let (argmin, min) =
                unit_grid().map(|y| (y, q0(y))).fold((0.0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
            if min < -1e-12 {
                return Err(Error::InvalidInput(format!(
                    "perturbed control density is negative ({min:.4} at y = {argmin:.4}); amplitude {amplitude} too large for k = {k}"
                )));
            }
            envelope = 1.05 * unit_grid().map(q0).fold(0.0, f64::max);
        }
        Ok(Self { spec: spec.clone(), treated: treated.clone(), envelope })
    }

    /// `q₀(y)`.
    pub fn pdf(&self, y: f64) -> f64 {
        self.treated.law.pdf(y) - self.difference(y)
    }

    /// `q₁(y) − q₀(y)`.
    pub fn difference(&self, y: f64) -> f64 {
        match self.spec {
            ControlLaw::SameAsTreated => 0.0,
            ControlLaw::CosinePerturb { k, amplitude } => {
                if (0.0..=1.0).contains(&y) {
                    amplitude * (PI * (k * k) as f64 * y).cos()
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self.spec {
            ControlLaw::SameAsTreated => self.treated.sample(rng),
            ControlLaw::CosinePerturb { .. } => rejection_unit(|y| self.pdf(y), self.envelope, rng),
        }
    }
}
