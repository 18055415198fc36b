//! PCA residue analysis of encoder embeddings.

mod pca;
mod sweep;

pub use pca::{
    component_profile, fit_pca, n_sigma, profile_csv, windowed_projection, NSigma, PCAModel,
    ResidueProfile, WindowSpec, DEFAULT_WINDOW, VARIANCE_FLOOR,
};
pub use sweep::{argmax_by, sweep_csv, window_sweep, SweepData, SweepRecord};
