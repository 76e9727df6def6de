//! Joint factorization and latent clustering solvers.

pub mod jnkm;
pub mod jnks;
pub mod jtkm;
pub mod jvkm;

use serde::{Deserialize, Serialize};

use crate::bcd::BcdReport;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Run diagnostics shared by every iterative solver.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub iterations: usize,
    pub converged: bool,
    pub unconverged_subproblems: usize,
    /// Clusters that had to be repaired (reseeded or completed) at least once.
    pub degenerate_clusters: usize,
}

impl SolveInfo {
    pub(crate) fn absorb(&mut self, report: &BcdReport) {
        self.iterations += report.iterations;
        self.converged = report.converged;
        self.unconverged_subproblems += report.unconverged_subproblems;
    }
}

pub(crate) fn check_weight(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "{name} must be finite and >= 0, got {v}"
        )))
    }
}

pub(crate) fn check_counts(f: usize, k: usize, points: usize) -> Result<()> {
    if f == 0 {
        return Err(Error::Argument("rank F must be >= 1".into()));
    }
    if k == 0 {
        return Err(Error::Argument("number of clusters K must be >= 1".into()));
    }
    if points < k {
        return Err(Error::Argument(format!(
            "{points} points cannot form K = {k} clusters"
        )));
    }
    Ok(())
}

/// Unit-ℓ2 columns; a zero column maps to the first standard basis vector.
pub(crate) fn unit_columns(h: &DenseMatrix) -> DenseMatrix {
    let mut z = h.clone();
    for mut col in z.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        } else {
            col.fill(0.0);
            if !col.is_empty() {
                col[0] = 1.0;
            }
        }
    }
    z
}
