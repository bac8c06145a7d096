//! Estimators whose targets live in a reproducing kernel Hilbert space.

pub mod band;
pub mod kme;

pub use band::{
    band_eif, band_grid, band_onestep, band_onestep_arm, band_plugin, BandConfig, BandFit, BandFn, DEFAULT_BAND_GRID,
};
pub use kme::{
    cond_mean_feature, kme_difference, kme_eif, kme_inner, kme_onestep, kme_onestep_arm, kme_plugin, pivoted_cholesky,
    KernelSpec, KmeElement, KmeFit,
};
