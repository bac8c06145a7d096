//! Observational datasets `(X, A, Y)`, CSV ingestion and fold assignment.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Affine map `y ↦ (y − shift) / scale` applied to outcomes at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRescale {
    pub shift: f64,
    pub scale: f64,
}

impl OutcomeRescale {
    pub fn forward(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn inverse(&self, u: f64) -> f64 {
        self.shift + self.scale * u
    }

    /// Transforms a density on the rescaled axis back to the original axis.
    pub fn density_inverse(&self, value: f64) -> f64 {
        value / self.scale
    }
}

/// Rows of covariates, binary treatment and real outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    d: usize,
    x: Vec<f64>,
    a: Vec<u8>,
    y: Vec<f64>,
    pub rescale: Option<OutcomeRescale>,
}

impl Dataset {
    /// `x` is row-major with `d` columns.
    pub fn new(d: usize, x: Vec<f64>, a: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if a.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.len() });
        }
        if x.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: x.len() });
        }
        if let Some(bad) = a.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("treatment must be 0 or 1, got {bad}")));
        }
        ensure_finite(&x, "covariates")?;
        ensure_finite(&y, "outcomes")?;
        Ok(Self { d, x, a, y, rescale: None })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn count_treated(&self) -> usize {
        self.a.iter().filter(|&&v| v == 1).count()
    }

    pub fn has_both_arms(&self) -> bool {
        let t = self.count_treated();
        t > 0 && t < self.len()
    }

    /// Sub-dataset made of the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            x.extend_from_slice(self.x(i));
        }
        Dataset {
            d: self.d,
            x,
            a: rows.iter().map(|&i| self.a[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            rescale: self.rescale,
        }
    }

    /// Copy with treatment labels flipped.
    pub fn swap_arms(&self) -> Dataset {
        let mut out = self.clone();
        for v in &mut out.a {
            *v = 1 - *v;
        }
        out
    }

    /// Min–max rescales outcomes into `[0, 1]` and records the map.
    pub fn rescale_outcomes_unit(&mut self) -> Result<OutcomeRescale> {
        let lo = self.y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi.is_nan() || lo.is_nan() || hi <= lo {
            return Err(Error::InvalidInput("cannot rescale constant outcomes".into()));
        }
        let map = OutcomeRescale { shift: lo, scale: hi - lo };
        for v in &mut self.y {
            *v = map.forward(*v).clamp(0.0, 1.0);
        }
        self.rescale = Some(map);
        Ok(map)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Reads a CSV whose header is exactly `x1,…,xd,a,y`.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols = headers.len();
        if cols < 3 {
            return Err(Error::InvalidInput("header must be x1,...,xd,a,y with d ≥ 1".into()));
        }
        let d = cols - 2;
        for (j, h) in headers.iter().enumerate() {
            let want = match j {
                j if j < d => format!("x{}", j + 1),
                j if j == d => "a".to_string(),
                _ => "y".to_string(),
            };
            if h != want {
                return Err(Error::InvalidInput(format!("column {} is '{h}', expected '{want}'", j + 1)));
            }
        }
        let (mut x, mut a, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = row + 2;
            let field = |j: usize| -> Result<f64> {
                let s = rec.get(j).unwrap_or("");
                if s.is_empty() {
                    return Err(Error::InvalidInput(format!("line {line}: missing field {}", j + 1)));
                }
                s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("line {line}: cannot parse '{s}'")))
            };
            for j in 0..d {
                x.push(field(j)?);
            }
            let av = field(d)?;
            if av != 0.0 && av != 1.0 {
                return Err(Error::InvalidInput(format!("line {line}: a must be 0 or 1, got {av}")));
            }
            a.push(av as u8);
            y.push(field(d + 1)?);
        }
        Dataset::new(d, x, a, y)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.d).map(|j| format!("x{j}")).collect();
        header.push("a".into());
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.a[i].to_string());
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A partition of row indices into `J` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: usize,
    pub seed: u64,
    assignment: Vec<usize>,
}

impl FoldSplit {
    /// Builds a split from an explicit assignment.
    pub fn from_assignment(folds: usize, assignment: Vec<usize>) -> Result<Self> {
        if folds == 0 || assignment.iter().any(|&f| f >= folds) {
            return Err(Error::InvalidInput("fold labels out of range".into()));
        }
        let split = Self { folds, seed: 0, assignment };
        if split.members().iter().any(|m| m.is_empty()) {
            return Err(Error::InvalidInput("every fold needs at least one row".into()));
        }
        Ok(split)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Row indices in each fold, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.folds];
        for (i, &f) in self.assignment.iter().enumerate() {
            out[f].push(i);
        }
        out
    }

    /// Rows outside fold `j`, ascending.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignment[i] != j).collect()
    }
}

/// Balanced random partition of `0..n` into `folds` groups.
pub fn split_folds(n: usize, folds: usize, seed: u64) -> Result<FoldSplit> {
    if folds == 0 || n < 2 * folds {
        return Err(Error::InsufficientData(format!("{n} rows cannot fill {folds} folds of size ≥ 2")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(FoldSplit { folds, seed, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes() {
        let s = split_folds(10, 2, 1).unwrap();
        assert_eq!(s.members().iter().map(Vec::len).collect::<Vec<_>>(), vec![5, 5]);
        let mut sizes: Vec<_> = split_folds(11, 2, 1).unwrap().members().iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![5, 6]);
        assert_eq!(split_folds(50, 3, 9).unwrap(), split_folds(50, 3, 9).unwrap());
        assert!(split_folds(3, 2, 0).is_err());
    }

    #[test]
    fn csv_parsing() {
        let text = "x1,x2,a,y\n0.1,0.2,1,0.5\n-1,3,0,0.25\n";
        let ds = Dataset::from_csv_reader(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.x(1), &[-1.0, 3.0]);
        assert_eq!(ds.a(), &[1, 0]);

        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::from_csv_reader(buf.as_slice()).unwrap(), ds);

        assert!(Dataset::from_csv_reader("x1,a,y\n0.1,2,0.5\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("x1,a,y\n0.1,,0.5\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("x1,a,y\n0.1,1\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("x1,t,y\n0.1,1,0.5\n".as_bytes()).is_err());
        assert!(Dataset::from_csv_reader("x1,a,y\n0.1,1,abc\n".as_bytes()).is_err());
    }

    #[test]
    fn rescaling_records_map() {
        let mut ds = Dataset::new(1, vec![0.0; 3], vec![0, 1, 1], vec![2.0, 4.0, 3.0]).unwrap();
        let map = ds.rescale_outcomes_unit().unwrap();
        assert_eq!(ds.y(), &[0.0, 1.0, 0.5]);
        assert_eq!(map.inverse(0.5), 3.0);
    }
}
