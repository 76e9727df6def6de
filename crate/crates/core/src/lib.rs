//! Joint factor analysis and latent clustering.
//!
//! Matrix and tensor factorization models whose factors are identifiable
//! (NMF, volume-minimizing simplex factorization, PARAFAC) are coupled with
//! K-means or K-subspace penalties on the latent representation, and solved
//! by alternating block minimization. The crate also carries the classical
//! baselines, synthetic instance generators and matched evaluation metrics.

pub mod baselines;
pub mod bcd;
pub mod clustering;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod solvers;
pub mod synth;

pub use error::{Error, Result};
