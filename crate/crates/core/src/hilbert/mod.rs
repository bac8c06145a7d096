//! Function-space primitives: bases, coefficient arithmetic, shrinkage maps,
//! quadrature grids and the sinc kernel.

pub mod basis;
pub mod grid;
pub mod l2;
pub mod quad;
pub mod regseq;
pub mod sinc;

pub use basis::{Basis, BasisKind, DEFAULT_KMAX};
pub use grid::{dot, GridSpec, QuadGrid};
pub use l2::{project_callable, L2Fn, DEFAULT_PROJECTION_NODES};
pub use quad::{gauss_legendre, trapezoid, CompositeRule};
pub use regseq::{RegOrigin, RegRule, RegSeq};
pub use sinc::sinc_kernel;
