pub mod cv;
pub mod data;
pub mod density;
pub mod error;
pub mod hilbert;
pub mod inference;
pub mod nuisance;
pub mod rkhs;
pub mod sim;
pub mod stats;

pub use data::{split_folds, Dataset, FoldSplit, OutcomeRescale};
pub use error::{Error, Result};
pub use hilbert::{Basis, BasisKind, L2Fn, QuadGrid, RegRule, RegSeq};
pub use nuisance::{Learners, Nuisance, NuisanceLearner};
