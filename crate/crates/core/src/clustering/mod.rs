//! K-means and K-subspace block updates.

mod kmeans;
mod ksubspace;

pub use kmeans::{
    kmeans_assign, kmeans_best_of, kmeans_centroids, kmeans_cost, kmeans_lloyd, Centroids,
    KmeansInit, KmeansResult,
};
pub use ksubspace::{
    ksubspace_assign, ksubspace_cost, ksubspace_fit, ksubspace_fit_lenient, subspace_distance,
    SubspaceModel,
};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Cluster membership of `J` points: exactly one cluster per point.
///
/// Labels are zero-based in memory (`0..K`); file formats use `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    labels: Vec<usize>,
    k: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("number of clusters must be >= 1".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for K = {k}"
            )));
        }
        Ok(Self { labels, k })
    }

    /// `j mod K` tiling, the `S = [I, I, …, I]` pattern.
    pub fn tiled(j: usize, k: usize) -> Self {
        Self {
            labels: (0..j).map(|c| c % k).collect(),
            k,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, j: usize) -> usize {
        self.labels[j]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&j| self.labels[j] == cluster)
            .collect()
    }

    /// Dense binary `K × J` view.
    pub fn to_matrix(&self) -> DenseMatrix {
        let mut s = DenseMatrix::zeros(self.k, self.labels.len());
        for (j, &l) in self.labels.iter().enumerate() {
            s[(l, j)] = 1.0;
        }
        s
    }
}

/// Index of the smallest value; ties go to the lowest index.
pub(crate) fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}
