//! Four-fold, all-permutation cross-validated choice of the regularization sequence and basis.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_folds, Dataset};
use crate::density::{eif_block, eif_coeffs, DensityTarget};
use crate::error::{Error, Result};
use crate::hilbert::{Basis, L2Fn, RegOrigin, RegRule, RegSeq};
use crate::nuisance::{Nuisance, NuisanceLearner};

const CV_FOLDS: usize = 4;
/// Relative slack under which two risks count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub candidates: Vec<RegRule>,
    pub bases: Vec<Basis>,
    pub target: DensityTarget,
    pub seed: u64,
}

impl CvConfig {
    /// Hard thresholds `K = 0..=16` on a single basis.
    pub fn hard_thresholds(basis: Basis, seed: u64) -> Self {
        Self {
            candidates: (0..=16).map(|k| RegRule::HardThreshold { k }).collect(),
            bases: vec![basis],
            target: DensityTarget::Arm(1),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.candidates.is_empty() || self.bases.is_empty() {
            return Err(Error::InvalidInput("cross-validation needs at least one candidate and one basis".into()));
        }
        for rule in &self.candidates {
            rule.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub basis: Basis,
    pub rule: RegRule,
    pub risk: f64,
    /// One score per ordered assignment of fold roles.
    pub permutation_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub basis: Basis,
    pub beta: RegSeq,
    pub scores: Vec<CandidateScore>,
    pub seed: u64,
}

/// Nuisance bundle defining the loss: a fitted model and its parameter value.
#[derive(Debug, Clone)]
pub struct LossModel {
    pub nuisance: Nuisance,
    pub plugin: L2Fn,
}

/// `½‖h − ν‖² − Σ_k (h − ν)_k · φ_k(z)` with `ν` and `φ` taken from the loss model.
pub fn cv_loss(x: &[f64], a: u8, y: f64, h: &L2Fn, model: &LossModel) -> Result<f64> {
    let d = h.sub(&model.plugin)?;
    let eif = eif_coeffs(&model.nuisance, &model.plugin, x, a, y)?;
    let quad = 0.5 * d.coeffs().iter().map(|v| v * v).sum::<f64>();
    let corr: f64 = d.coeffs().iter().zip(&eif).map(|(u, v)| u * v).sum();
    Ok(quad - corr)
}

/// Every ordering of `0..4`.
fn permutations() -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(24);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    if a != b && a != c && a != d && b != c && b != d && c != d {
                        out.push([a, b, c, d]);
                    }
                }
            }
        }
    }
    out
}

/// Per-fold plug-ins and cross-fold influence means for one basis.
struct FoldTable {
    plugins: Vec<Vec<f64>>,
    /// `means[j][l]`: mean over fold `l` of the influence function built from fold `j`.
    means: Vec<Vec<Vec<f64>>>,
}

fn fold_table(
    data: &Dataset,
    members: &[Vec<usize>],
    nuisances: &[Vec<(f64, Nuisance)>],
    basis: &Basis,
) -> Result<FoldTable> {
    let k = basis.kmax;
    let cells: Vec<(usize, usize)> = (0..CV_FOLDS).flat_map(|j| (0..CV_FOLDS).map(move |l| (j, l))).collect();
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = cells
        .par_iter()
        .map(|&(j, l)| {
            let mut plugin = vec![0.0; k];
            let mut mean = vec![0.0; k];
            for (sign, nuisance) in &nuisances[j] {
                let (p, rows): (Vec<f64>, DMatrix<f64>) = eif_block(data, nuisance, basis, &members[j], &members[l])?;
                let m = rows.row_mean();
                for c in 0..k {
                    plugin[c] += sign * p[c];
                    mean[c] += sign * m[c];
                }
            }
            Ok((plugin, mean))
        })
        .collect::<Result<_>>()?;
    let mut plugins = vec![Vec::new(); CV_FOLDS];
    let mut means = vec![vec![Vec::new(); CV_FOLDS]; CV_FOLDS];
    for (&(j, l), (p, m)) in cells.iter().zip(blocks) {
        if j == l {
            plugins[j] = p;
        }
        means[j][l] = m;
    }
    Ok(FoldTable { plugins, means })
}

fn score(table: &FoldTable, beta: &[f64], perm: [usize; 4]) -> f64 {
    let [fit, loss, corr, eval] = perm;
    let mut quad = 0.0;
    let mut cross = 0.0;
    for (c, b) in beta.iter().enumerate() {
        let est = table.plugins[fit][c] + b * table.means[fit][corr][c];
        let d = est - table.plugins[loss][c];
        quad += d * d;
        cross += d * table.means[loss][eval][c];
    }
    0.5 * quad - cross
}

/// Selects the candidate minimizing the permutation-averaged influence-corrected risk.
///
/// Nuisances are fit once per fold and shared across permutations and candidates. Ties go to
/// the candidate with stronger shrinkage.
pub fn cv_select(data: &Dataset, config: &CvConfig, learner: &dyn NuisanceLearner) -> Result<CvResult> {
    config.validate()?;
    if data.len() < 2 * CV_FOLDS {
        return Err(Error::InsufficientData(format!("cross-validation needs n ≥ 8, got {}", data.len())));
    }
    let split = split_folds(data.len(), CV_FOLDS, config.seed)?;
    let members = split.members();
    let arms: Vec<(f64, u8)> = match config.target {
        DensityTarget::Arm(a) => vec![(1.0, a)],
        DensityTarget::Difference => vec![(1.0, 1), (-1.0, 0)],
    };
    let nuisances: Vec<Vec<(f64, Nuisance)>> = members
        .par_iter()
        .map(|rows| {
            let fold = data.subset(rows);
            arms.iter().map(|&(s, a)| Ok((s, learner.fit(&fold, a)?))).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let perms = permutations();
    let mut scores = Vec::new();
    for basis in &config.bases {
        let table = fold_table(data, &members, &nuisances, basis)?;
        for rule in &config.candidates {
            let beta = RegSeq::new(*rule, basis.kmax)?;
            let permutation_scores: Vec<f64> = perms.iter().map(|&p| score(&table, beta.values(), p)).collect();
            let risk = permutation_scores.iter().sum::<f64>() / permutation_scores.len() as f64;
            scores.push(CandidateScore { basis: *basis, rule: *rule, risk, permutation_scores });
        }
    }
    let best = select(&scores);
    let chosen = &scores[best];
    log::info!("cross-validation selected {} on {} basis (risk {:.6})", chosen.rule, chosen.basis.kind, chosen.risk);
    Ok(CvResult {
        basis: chosen.basis,
        beta: RegSeq::new(chosen.rule, chosen.basis.kmax)?.with_origin(RegOrigin::CrossValidated),
        scores,
        seed: config.seed,
    })
}

fn select(scores: &[CandidateScore]) -> usize {
    let min = scores.iter().map(|s| s.risk).fold(f64::INFINITY, f64::min);
    let slack = TIE_TOL * min.abs().max(1.0);
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.risk > min + slack {
            continue;
        }
        match best {
            Some(b) if scores[b].rule.looseness() <= s.rule.looseness() => {}
            _ => best = Some(i),
        }
    }
    best.expect("nonempty candidate list")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{Learners, PropensityMethod};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let xi: f64 = rng.random();
            x.push(xi);
            a.push(u8::from(rng.random::<f64>() < 0.3 + 0.4 * xi));
            let u: f64 = rng.random();
            y.push((u.sqrt() * 0.7 + 0.3 * xi).clamp(0.0, 1.0));
        }
        Dataset::new(1, x, a, y).unwrap()
    }

    fn learners() -> Learners {
        Learners { propensity: PropensityMethod::Logistic, grid_cells: 100, ..Learners::default() }
    }

    #[test]
    fn twenty_four_distinct_permutations() {
        let p = permutations();
        assert_eq!(p.len(), 24);
        let set: std::collections::HashSet<_> = p.iter().collect();
        assert_eq!(set.len(), 24);
    }

    #[test]
    fn risk_is_mean_of_permutation_scores() {
        let data = toy(200, 3);
        let cfg = CvConfig::hard_thresholds(Basis::cosine(16).unwrap(), 5);
        let res = cv_select(&data, &cfg, &learners()).unwrap();
        assert_eq!(res.scores.len(), 17);
        for s in &res.scores {
            assert_eq!(s.permutation_scores.len(), 24);
            let mean = s.permutation_scores.iter().sum::<f64>() / 24.0;
            assert!((mean - s.risk).abs() < 1e-12);
        }
        assert_eq!(res.beta.origin, RegOrigin::CrossValidated);
        let again = cv_select(&data, &cfg, &learners()).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn single_candidate_and_small_n() {
        let data = toy(200, 4);
        let cfg = CvConfig {
            candidates: vec![RegRule::Rational { c: 3.0, p: 2.0 }],
            ..CvConfig::hard_thresholds(Basis::cosine(8).unwrap(), 1)
        };
        let res = cv_select(&data, &cfg, &learners()).unwrap();
        assert_eq!(res.beta.rule, RegRule::Rational { c: 3.0, p: 2.0 });
        assert!(cv_select(&toy(7, 1), &cfg, &learners()).is_err());
    }

    #[test]
    fn ties_prefer_stronger_shrinkage() {
        let mk = |k, risk| CandidateScore {
            basis: Basis::cosine(4).unwrap(),
            rule: RegRule::HardThreshold { k },
            risk,
            permutation_scores: vec![],
        };
        assert_eq!(select(&[mk(5, 1.0), mk(2, 1.0), mk(3, 2.0)]), 1);
        assert_eq!(select(&[mk(5, 0.5), mk(2, 1.0)]), 0);
    }

    #[test]
    fn loss_vanishes_at_loss_parameter() {
        let data = toy(150, 9);
        let nuisance = learners().fit(&data, 1).unwrap();
        let plugin = crate::density::plugin_coeffs(&nuisance, data.x_flat(), &Basis::cosine(8).unwrap()).unwrap();
        let model = LossModel { nuisance, plugin: plugin.clone() };
        for i in 0..10 {
            let v = cv_loss(data.x(i), data.a()[i], data.y()[i], &plugin, &model).unwrap();
            assert_eq!(v, 0.0);
        }
        let other = L2Fn::zeros(Basis::cosine(4).unwrap());
        assert!(cv_loss(data.x(0), 1, 0.5, &other, &model).is_err());
    }

    #[test]
    fn loss_has_identity_hessian() {
        let data = toy(150, 10);
        let nuisance = learners().fit(&data, 1).unwrap();
        let basis = Basis::cosine(6).unwrap();
        let plugin = crate::density::plugin_coeffs(&nuisance, data.x_flat(), &basis).unwrap();
        let model = LossModel { nuisance, plugin };
        let h = L2Fn::new(basis, vec![1.0, 0.3, -0.2, 0.1, 0.0, 0.05]).unwrap();
        let step = 1e-3;
        for j in 1..=6 {
            for k in 1..=6 {
                let f = |sj: f64, sk: f64| {
                    let mut c = h.coeffs().to_vec();
                    c[j - 1] += sj;
                    c[k - 1] += sk;
                    cv_loss(data.x(0), data.a()[0], data.y()[0], &L2Fn::new(basis, c).unwrap(), &model).unwrap()
                };
                let second = (f(step, step) - f(step, -step) - f(-step, step) + f(-step, -step)) / (4.0 * step * step);
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((second - expect).abs() < 1e-6, "{j},{k}: {second}");
            }
        }
    }
}
