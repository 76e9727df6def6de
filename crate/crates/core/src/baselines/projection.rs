//! Reduced K-means (`min ‖X − P·M·S‖²`) and factorial K-means
//! (`min ‖Pᵀ·X − M·S‖²`) over semi-orthogonal `P` (`PᵀP = I`).
//!
//! Both alternate a K-means step on the projected data `PᵀX` with a
//! closed-form `P` step:
//!
//! * RKM: `‖X − PMS‖² = ‖X‖² − 2·tr(Pᵀ·X·(MS)ᵀ) + ‖MS‖²`, so the best `P`
//!   maximizes `tr(Pᵀ·X·(MS)ᵀ)`: the orthogonal Procrustes solution `U·Vᵀ`
//!   from the thin SVD `X·(MS)ᵀ = U·Σ·Vᵀ`.
//! * FKM: for fixed `S` the optimal centroids are `M = PᵀX·S†`, leaving
//!   `tr(Pᵀ·X·(I − S†S)·Xᵀ·P)`, the projected within-cluster scatter. It is
//!   minimized by eigenvectors of the scatter matrix for the `F` smallest
//!   eigenvalues.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::clustering::{
    kmeans_best_of, kmeans_cost, kmeans_lloyd, Assignment, Centroids, KmeansInit,
};
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, frob2, DenseMatrix};
use crate::solvers::{check_counts, SolveInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-9,
            kmeans_restarts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionState {
    /// `I × F`, orthonormal columns.
    pub p: DenseMatrix,
    pub m: Centroids,
    pub s: Assignment,
    pub cost_trace: Vec<f64>,
    pub info: SolveInfo,
}

/// `‖X − P·M·S‖²_F`.
pub fn rkm_cost(x: &DenseMatrix, p: &DenseMatrix, m: &Centroids, s: &Assignment) -> f64 {
    crate::linalg::frob2_diff(x, &(p * m.expand(s)))
}

/// `‖Pᵀ·X − M·S‖²_F`.
pub fn fkm_cost(x: &DenseMatrix, p: &DenseMatrix, m: &Centroids, s: &Assignment) -> f64 {
    kmeans_cost(&p.tr_mul(x), m, s)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    Reduced,
    Factorial,
}

fn check(x: &DenseMatrix, f: usize, k: usize) -> Result<()> {
    ensure_finite(x, "X")?;
    check_counts(f, k, x.ncols())?;
    if f > x.nrows() {
        return Err(Error::Argument(format!(
            "projection rank F = {f} exceeds the data dimension {}",
            x.nrows()
        )));
    }
    Ok(())
}

/// Leading `F` left singular vectors of `X`.
fn pca_basis(x: &DenseMatrix, f: usize) -> DenseMatrix {
    let eig = SymmetricEigen::new(x * x.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    basis_from(&eig.eigenvectors, &order[..f])
}

fn basis_from(vectors: &DenseMatrix, cols: &[usize]) -> DenseMatrix {
    let mut p = DenseMatrix::zeros(vectors.nrows(), cols.len());
    for (c, &i) in cols.iter().enumerate() {
        let mut v = vectors.column(i).into_owned();
        let peak = v.amax();
        // deterministic sign: first non-negligible entry positive
        if let Some(first) = v.iter().find(|e| e.abs() > 1e-12 * peak) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        p.set_column(c, &v);
    }
    p
}

fn procrustes(
    x: &DenseMatrix,
    m: &Centroids,
    s: &Assignment,
    fallback: &DenseMatrix,
) -> DenseMatrix {
    let target = x * m.expand(s).transpose();
    let svd = target.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => u * vt,
        _ => fallback.clone(),
    }
}

fn smallest_scatter_directions(x: &DenseMatrix, s: &Assignment, f: usize) -> DenseMatrix {
    let k = s.k();
    let counts = s.counts();
    let mut means = DenseMatrix::zeros(x.nrows(), k);
    for (j, &l) in s.labels().iter().enumerate() {
        let mut col = means.column_mut(l);
        col += x.column(j);
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            let mut col = means.column_mut(c);
            col /= n as f64;
        }
    }
    let centered = DenseMatrix::from_fn(x.nrows(), x.ncols(), |r, j| {
        x[(r, j)] - means[(r, s.label(j))]
    });
    let eig = SymmetricEigen::new(&centered * centered.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    basis_from(&eig.eigenvectors, &order[..f])
}

fn solve(
    x: &DenseMatrix,
    f: usize,
    k: usize,
    opts: &ProjectionOptions,
    variant: Variant,
) -> Result<ProjectionState> {
    check(x, f, k)?;
    let cost = |p: &DenseMatrix, m: &Centroids, s: &Assignment| match variant {
        Variant::Reduced => rkm_cost(x, p, m, s),
        Variant::Factorial => fkm_cost(x, p, m, s),
    };
    let mut p = pca_basis(x, f);
    let km = kmeans_best_of(&p.tr_mul(x), k, opts.kmeans_restarts, opts.seed, 300)?;
    let (mut m, mut s) = (km.centroids, km.assignment);
    let mut trace = vec![cost(&p, &m, &s)];
    let mut info = SolveInfo::default();
    while info.iterations < opts.max_iters {
        info.iterations += 1;
        match variant {
            Variant::Reduced => p = procrustes(x, &m, &s, &p),
            Variant::Factorial => {
                p = smallest_scatter_directions(x, &s, f);
                m = crate::clustering::kmeans_centroids(&p.tr_mul(x), &s, k)?;
            }
        }
        let run = kmeans_lloyd(&p.tr_mul(x), k, KmeansInit::Centroids(m.clone()), 300)?;
        let c = cost(&p, &run.centroids, &run.assignment);
        let prev = *trace.last().expect("non-empty");
        let stable = run.assignment == s;
        m = run.centroids;
        s = run.assignment;
        trace.push(c);
        if stable || (prev - c).abs() <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
            info.converged = true;
            break;
        }
    }
    Ok(ProjectionState {
        p,
        m,
        s,
        cost_trace: trace,
        info,
    })
}

/// Reduced K-means, started from the PCA basis.
pub fn rkm_solve(
    x: &DenseMatrix,
    f: usize,
    k: usize,
    opts: &ProjectionOptions,
) -> Result<ProjectionState> {
    solve(x, f, k, opts, Variant::Reduced)
}

/// Factorial K-means, started from the PCA basis.
pub fn fkm_solve(
    x: &DenseMatrix,
    f: usize,
    k: usize,
    opts: &ProjectionOptions,
) -> Result<ProjectionState> {
    solve(x, f, k, opts, Variant::Factorial)
}

/// `‖P⊥ᵀX‖² = ‖X‖² − ‖PᵀX‖²` for orthonormal `P`.
pub fn complement_energy(x: &DenseMatrix, p: &DenseMatrix) -> f64 {
    frob2(x) - frob2(&p.tr_mul(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = rng::stream(seed, &[]);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn orthonormal(p: &DenseMatrix) -> bool {
        (p.tr_mul(p) - DenseMatrix::identity(p.ncols(), p.ncols())).amax() < 1e-10
    }

    #[test]
    fn rkm_recovers_exact_projected_clusters() {
        let p0 = gaussian(8, 2, 1).qr().q();
        let m0 = DenseMatrix::from_column_slice(2, 3, &[5.0, 0.0, 0.0, 5.0, -5.0, -5.0]);
        let s0 = Assignment::tiled(30, 3);
        let x = &p0 * Centroids(m0).expand(&s0);
        let st = rkm_solve(&x, 2, 3, &ProjectionOptions::default()).unwrap();
        assert!(st.cost_trace.last().unwrap() / frob2(&x) < 1e-20);
        assert!(orthonormal(&st.p));
    }

    #[test]
    fn rkm_singletons_give_truncation_error() {
        let x = gaussian(6, 5, 2);
        let st = rkm_solve(&x, 2, 5, &ProjectionOptions::default()).unwrap();
        let mut sv: Vec<f64> = x.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sv[2..].iter().map(|v| v * v).sum();
        assert!((st.cost_trace.last().unwrap() - tail).abs() < 1e-9 * tail);
    }

    #[test]
    fn costs_are_monotone_and_p_orthonormal() {
        for seed in 0..5 {
            let x = gaussian(10, 40, 10 + seed);
            for st in [
                rkm_solve(
                    &x,
                    3,
                    4,
                    &ProjectionOptions {
                        seed,
                        ..Default::default()
                    },
                )
                .unwrap(),
                fkm_solve(
                    &x,
                    3,
                    4,
                    &ProjectionOptions {
                        seed,
                        ..Default::default()
                    },
                )
                .unwrap(),
            ] {
                assert!(orthonormal(&st.p));
                for w in st.cost_trace.windows(2) {
                    assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn rkm_cost_splits_into_fkm_cost_plus_complement() {
        let x = gaussian(9, 30, 3);
        let st = rkm_solve(&x, 3, 4, &ProjectionOptions::default()).unwrap();
        let lhs = rkm_cost(&x, &st.p, &st.m, &st.s);
        let rhs = fkm_cost(&x, &st.p, &st.m, &st.s) + complement_energy(&x, &st.p);
        assert!((lhs - rhs).abs() < 1e-9 * lhs);
    }

    #[test]
    fn fkm_finds_perfectly_clustered_projection() {
        // two coordinates carry tight clusters, the rest is large noise
        let mut x = gaussian(6, 40, 4) * 3.0;
        for j in 0..40 {
            x[(0, j)] = if j % 2 == 0 { 1.0 } else { -1.0 };
            x[(1, j)] = 0.0;
        }
        let st = fkm_solve(&x, 2, 2, &ProjectionOptions::default()).unwrap();
        assert!(*st.cost_trace.last().unwrap() < 1e-18);
    }

    #[test]
    fn fkm_single_cluster_picks_minimum_variance_directions() {
        let mut x = gaussian(4, 200, 5);
        for (r, scale) in [10.0, 0.1, 5.0, 0.2].iter().enumerate() {
            x.row_mut(r).scale_mut(*scale);
        }
        let st = fkm_solve(&x, 2, 1, &ProjectionOptions::default()).unwrap();
        let support: f64 = [1, 3].iter().map(|&r| st.p.row(r).norm_squared()).sum();
        assert!(support > 1.99, "{support}");
    }
}
