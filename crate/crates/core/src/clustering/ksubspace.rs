use nalgebra::DVector;

use super::{argmin, Assignment};
use crate::error::{dim_err, Error, Result};
use crate::linalg::DenseMatrix;

/// Per-cluster affine subspaces `μ_k + span(U_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    pub means: Vec<DVector<f64>>,
    /// Orthonormal `F × r_k` bases.
    pub bases: Vec<DenseMatrix>,
    /// `r_k × n_k` coordinates of each cluster's members, in ascending
    /// column order.
    pub coords: Vec<DenseMatrix>,
    pub ranks: Vec<usize>,
}

impl SubspaceModel {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// Optimal coordinates `U_kᵀ(h − μ_k)` of a point in cluster `k`.
    pub fn project(&self, k: usize, h: &DVector<f64>) -> DVector<f64> {
        self.bases[k].tr_mul(&(h - &self.means[k]))
    }

    /// `h − μ_k − U_k·θ`.
    pub fn residual(&self, k: usize, h: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        h - &self.means[k] - &self.bases[k] * theta
    }
}

/// `‖(I − U_kU_kᵀ)(h − μ_k)‖₂`.
pub fn subspace_distance(model: &SubspaceModel, k: usize, h: &DVector<f64>) -> f64 {
    let theta = model.project(k, h);
    model.residual(k, h, &theta).norm()
}

fn check_ranks(f: usize, k: usize, ranks: &[usize]) -> Result<()> {
    if ranks.len() != k {
        return Err(Error::Argument(format!(
            "{} subspace ranks given for K = {k}",
            ranks.len()
        )));
    }
    if let Some(r) = ranks.iter().find(|&&r| r > f) {
        return Err(Error::Argument(format!(
            "subspace rank {r} exceeds dimension {f}"
        )));
    }
    Ok(())
}

/// Orthonormalises `cols` in order and tops up with standard basis vectors
/// until `r` columns are collected.
fn orthonormal_completion(f: usize, r: usize, cols: &[DVector<f64>]) -> DenseMatrix {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(r);
    let unit = |i: usize| DVector::from_fn(f, |row, _| if row == i { 1.0 } else { 0.0 });
    for cand in cols.iter().cloned().chain((0..f).map(unit)) {
        if basis.len() == r {
            break;
        }
        let mut v = cand;
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        // two Gram–Schmidt passes keep the result orthonormal to rounding
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-8 * norm0 {
            basis.push(v / n);
        }
    }
    let mut u = DenseMatrix::zeros(f, r);
    for (c, b) in basis.iter().enumerate() {
        u.set_column(c, b);
    }
    u
}

struct ClusterFit {
    mean: DVector<f64>,
    basis: DenseMatrix,
    coords: DenseMatrix,
}

fn fit_cluster(h: &DenseMatrix, members: &[usize], r: usize) -> ClusterFit {
    let f = h.nrows();
    let n = members.len();
    let mut mean = DVector::zeros(f);
    for &j in members {
        mean += h.column(j);
    }
    mean /= n as f64;
    let centered = DenseMatrix::from_fn(f, n, |row, c| h[(row, members[c])] - mean[row]);
    let basis = if r == 0 {
        DenseMatrix::zeros(f, 0)
    } else {
        let svd = centered.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let lead: Vec<DVector<f64>> = order
            .iter()
            .take(r)
            .map(|&i| u.column(i).into_owned())
            .collect();
        orthonormal_completion(f, r, &lead)
    };
    let coords = basis.tr_mul(&centered);
    ClusterFit {
        mean,
        basis,
        coords,
    }
}

/// Fits a mean and a rank-`r_k` principal subspace to every cluster.
///
/// Each cluster needs at least `r_k + 1` members.
pub fn ksubspace_fit(h: &DenseMatrix, s: &Assignment, ranks: &[usize]) -> Result<SubspaceModel> {
    if s.len() != h.ncols() {
        return Err(dim_err(
            "ksubspace_fit",
            format!("{} labels for {} points", s.len(), h.ncols()),
        ));
    }
    check_ranks(h.nrows(), s.k(), ranks)?;
    let counts = s.counts();
    for (k, (&n, &r)) in counts.iter().zip(ranks).enumerate() {
        if n < r + 1 {
            return Err(Error::ClusterTooSmall {
                cluster: k,
                members: n,
                rank: r,
                needed: r + 1,
            });
        }
    }
    Ok(ksubspace_fit_lenient(h, s, ranks)?.0)
}

/// Like [`ksubspace_fit`], but degenerate clusters are repaired instead of
/// rejected: small clusters get their bases completed to rank `r_k`
/// (their residual is zero either way) and empty clusters are reseeded at
/// the points farthest from their current subspaces. The indices of the
/// repaired clusters are returned alongside the model.
pub fn ksubspace_fit_lenient(
    h: &DenseMatrix,
    s: &Assignment,
    ranks: &[usize],
) -> Result<(SubspaceModel, Vec<usize>)> {
    if s.len() != h.ncols() {
        return Err(dim_err(
            "ksubspace_fit",
            format!("{} labels for {} points", s.len(), h.ncols()),
        ));
    }
    let (f, k) = (h.nrows(), s.k());
    check_ranks(f, k, ranks)?;
    let mut model = SubspaceModel {
        means: Vec::with_capacity(k),
        bases: Vec::with_capacity(k),
        coords: Vec::with_capacity(k),
        ranks: ranks.to_vec(),
    };
    let mut degenerate = Vec::new();
    let mut empty = Vec::new();
    for (c, &r) in ranks.iter().enumerate() {
        let members = s.members(c);
        if members.len() < r + 1 {
            degenerate.push(c);
        }
        if members.is_empty() {
            empty.push(c);
            model.means.push(DVector::zeros(f));
            model.bases.push(orthonormal_completion(f, r, &[]));
            model.coords.push(DenseMatrix::zeros(r, 0));
            continue;
        }
        let fit = fit_cluster(h, &members, r);
        model.means.push(fit.mean);
        model.bases.push(fit.basis);
        model.coords.push(fit.coords);
    }
    if !empty.is_empty() && h.ncols() > 0 {
        let mut order: Vec<(usize, f64)> = (0..h.ncols())
            .map(|j| {
                let col = h.column(j).into_owned();
                (j, subspace_distance(&model, s.label(j), &col))
            })
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (slot, &c) in empty.iter().enumerate() {
            let j = order[slot % order.len()].0;
            model.means[c] = h.column(j).into_owned();
        }
    }
    Ok((model, degenerate))
}

/// Assigns each point to the subspace with the smallest projection
/// residual; ties go to the lowest cluster index.
pub fn ksubspace_assign(h: &DenseMatrix, model: &SubspaceModel) -> Result<Assignment> {
    if model.k() == 0 {
        return Err(Error::Argument("ksubspace_assign: empty model".into()));
    }
    if model.dim() != h.nrows() {
        return Err(dim_err(
            "ksubspace_assign",
            format!("points have {} rows, model {}", h.nrows(), model.dim()),
        ));
    }
    let labels = (0..h.ncols())
        .map(|j| {
            let col = h.column(j).into_owned();
            argmin((0..model.k()).map(|k| subspace_distance(model, k, &col)))
        })
        .collect();
    Assignment::new(labels, model.k())
}

/// `Σ_j dist(j, s_j)²`: the K-subspace objective at optimal coordinates.
pub fn ksubspace_cost(h: &DenseMatrix, s: &Assignment, model: &SubspaceModel) -> f64 {
    (0..h.ncols())
        .map(|j| {
            let col = h.column(j).into_owned();
            subspace_distance(model, s.label(j), &col).powi(2)
        })
        .sum()
}
