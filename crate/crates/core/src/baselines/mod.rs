//! Classical comparison methods: NMF, reduced and factorial K-means, and
//! two-stage factorize-then-cluster pipelines.

mod nmf;
mod projection;
mod two_stage;

pub use nmf::{nmf_cost, nmf_solve, normalize_w, NmfOptions, NmfResult};
pub use projection::{
    complement_energy, fkm_cost, fkm_solve, rkm_cost, rkm_solve, ProjectionOptions, ProjectionState,
};
pub use two_stage::{nmf_km, volmin_km, TwoStageOptions, TwoStageResult};
