use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form rule generating the regularization weights `β_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RegRule {
    /// `β_k = 1` for `k ≤ K`, zero afterwards.
    HardThreshold { k: usize },
    /// `β_k = 1 / (1 + (k/c)^p)`.
    Rational { c: f64, p: f64 },
}

impl RegRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RegRule::HardThreshold { .. } => Ok(()),
            RegRule::Rational { c, p } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::InvalidInput(format!("rational scale c must be > 0, got {c}")));
                }
                if !(p.is_finite() && p > 0.5) {
                    return Err(Error::InvalidInput(format!(
                        "rational exponent p must exceed 1/2 for square summability, got {p}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Weight for the 1-based index `k`.
    pub fn weight(&self, k: usize) -> f64 {
        match *self {
            RegRule::HardThreshold { k: cut } => {
                if k <= cut {
                    1.0
                } else {
                    0.0
                }
            }
            RegRule::Rational { c, p } => 1.0 / (1.0 + (k as f64 / c).powf(p)),
        }
    }

    /// Orders rules by strength of shrinkage; smaller means more regularization.
    pub(crate) fn looseness(&self) -> f64 {
        match *self {
            RegRule::HardThreshold { k } => k as f64,
            RegRule::Rational { c, .. } => c,
        }
    }
}

impl fmt::Display for RegRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegRule::HardThreshold { k } => write!(f, "hard:{k}"),
            RegRule::Rational { c, p } => write!(f, "rational:c={c},p={p}"),
        }
    }
}

impl FromStr for RegRule {
    type Err = Error;

    /// Parses `hard:K` or `rational:c=FLOAT,p=FLOAT`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("cannot parse regularization rule '{s}'"));
        let (head, tail) = s.split_once(':').ok_or_else(bad)?;
        let rule = match head.trim() {
            "hard" => RegRule::HardThreshold { k: tail.trim().parse().map_err(|_| bad())? },
            "rational" => {
                let (mut c, mut p) = (None, None);
                for part in tail.split(',') {
                    let (key, val) = part.split_once('=').ok_or_else(bad)?;
                    let val: f64 = val.trim().parse().map_err(|_| bad())?;
                    match key.trim() {
                        "c" => c = Some(val),
                        "p" => p = Some(val),
                        _ => return Err(bad()),
                    }
                }
                RegRule::Rational { c: c.ok_or_else(bad)?, p: p.ok_or_else(bad)? }
            }
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// How a regularization sequence was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegOrigin {
    #[default]
    Fixed,
    /// Data-selected; valid for estimation only, not for confidence sets.
    CrossValidated,
}

/// A regularization sequence materialized up to a truncation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegSeq {
    pub rule: RegRule,
    pub origin: RegOrigin,
    values: Vec<f64>,
}

impl RegSeq {
    pub fn new(rule: RegRule, kmax: usize) -> Result<Self> {
        rule.validate()?;
        let values = (1..=kmax).map(|k| rule.weight(k)).collect();
        Ok(Self { rule, origin: RegOrigin::Fixed, values })
    }

    pub fn hard(k: usize, kmax: usize) -> Self {
        Self::new(RegRule::HardThreshold { k }, kmax).expect("hard threshold is always valid")
    }

    pub fn rational(c: f64, p: f64, kmax: usize) -> Result<Self> {
        Self::new(RegRule::Rational { c, p }, kmax)
    }

    pub fn with_origin(mut self, origin: RegOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_positive(&self) -> bool {
        self.values.iter().all(|&b| b > 0.0)
    }

    pub(crate) fn ensure_len(&self, kmax: usize) -> Result<()> {
        if self.values.len() != kmax {
            return Err(Error::DimensionMismatch { expected: kmax, got: self.values.len() });
        }
        Ok(())
    }
}
