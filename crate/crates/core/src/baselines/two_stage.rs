//! Factor first, then cluster the latent columns.

use serde::{Deserialize, Serialize};

use super::nmf::{nmf_solve, normalize_w, NmfOptions};
use crate::clustering::{kmeans_lloyd, Assignment, Centroids, KmeansInit};
use crate::linalg::DenseMatrix;
use crate::solvers::jvkm::{jvkm_solve, JvkmInit, JvkmParams};
use crate::solvers::{check_counts, SolveInfo};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoStageOptions {
    pub nmf: NmfOptions,
    pub kmeans_iters: usize,
    /// Seeds the K-means++ start; the factorization uses `nmf.seed`.
    pub seed: u64,
}

impl Default for TwoStageOptions {
    fn default() -> Self {
        Self {
            nmf: NmfOptions::default(),
            kmeans_iters: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    pub centroids: Centroids,
    pub assignment: Assignment,
    pub info: SolveInfo,
}

/// Plain NMF, `W` rescaled to unit columns, then one K-means++ run on `H`.
pub fn nmf_km(
    x: &DenseMatrix,
    f: usize,
    k: usize,
    opts: &TwoStageOptions,
) -> Result<TwoStageResult> {
    check_counts(f, k, x.ncols())?;
    let nmf = nmf_solve(x, f, 0.0, &opts.nmf)?;
    let (mut w, mut h) = (nmf.w, nmf.h);
    normalize_w(&mut w, &mut h);
    let km = kmeans_lloyd(
        &h,
        k,
        KmeansInit::PlusPlus { seed: opts.seed },
        opts.kmeans_iters,
    )?;
    Ok(TwoStageResult {
        w,
        h,
        centroids: km.centroids,
        assignment: km.assignment,
        info: nmf.info,
    })
}

/// Volume-regularized factorization alone (`λ = 0`), then one K-means++ run
/// on its column-stochastic `H`.
pub fn volmin_km(x: &DenseMatrix, params: &JvkmParams, seed: u64) -> Result<TwoStageResult> {
    let plain = JvkmParams {
        lambda: 0.0,
        ..params.clone()
    };
    let st = jvkm_solve(x, &plain, JvkmInit::Random { seed })?;
    let km = kmeans_lloyd(&st.h, params.k, KmeansInit::PlusPlus { seed }, 300)?;
    Ok(TwoStageResult {
        w: st.w,
        h: st.h,
        centroids: km.centroids,
        assignment: km.assignment,
        info: st.info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{clustering_accuracy, matched_mse};
    use crate::synth::{gen_nmf_instance, SynthParams};

    #[test]
    fn noiseless_separable_is_recovered() {
        let p = SynthParams {
            i: 20,
            j: 60,
            f: 3,
            k: 4,
            seed: 3,
            outlier_fraction: 0.0,
            ..SynthParams::default()
        }
        .noiseless();
        let g = gen_nmf_instance(&p).unwrap();
        let opts = TwoStageOptions {
            nmf: NmfOptions {
                max_iters: 2000,
                tol: 1e-12,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = nmf_km(&g.x, 3, 4, &opts).unwrap();
        assert!(matched_mse(&g.w, &r.w).unwrap() < 1e-3);
        let best = (0..20)
            .map(|s| {
                let km = kmeans_lloyd(&r.h, 4, KmeansInit::PlusPlus { seed: s }, 300).unwrap();
                clustering_accuracy(g.labels.labels(), km.assignment.labels()).unwrap()
            })
            .fold(0.0, f64::max);
        assert_eq!(best, 1.0);
    }

    #[test]
    fn volmin_km_is_kmeans_on_the_volume_only_factor() {
        let p = SynthParams {
            model: crate::synth::Model::Volmin,
            i: 10,
            j: 60,
            f: 3,
            k: 4,
            seed: 5,
            ..SynthParams::default()
        };
        let g = crate::synth::gen_volmin_instance(&p).unwrap();
        let params = JvkmParams {
            max_outer: 20,
            ..JvkmParams::new(3, 4)
        };
        let r = volmin_km(&g.x, &params, 7).unwrap();
        let plain = JvkmParams {
            lambda: 0.0,
            ..params
        };
        let st = jvkm_solve(&g.x, &plain, JvkmInit::Random { seed: 7 }).unwrap();
        let km = kmeans_lloyd(&st.h, 4, KmeansInit::PlusPlus { seed: 7 }, 300).unwrap();
        assert_eq!(r.assignment, km.assignment);
        assert_eq!(r.h, st.h);
    }

    #[test]
    fn rank_one_equals_kmeans_on_the_row() {
        let x = DenseMatrix::from_fn(5, 12, |i, j| {
            (1.0 + i as f64) * (1.0 + (j % 3) as f64 * 2.0)
        });
        let r = nmf_km(&x, 1, 3, &TwoStageOptions::default()).unwrap();
        let km = kmeans_lloyd(&r.h, 3, KmeansInit::PlusPlus { seed: 0 }, 300).unwrap();
        assert_eq!(r.assignment, km.assignment);
        assert_eq!(r.assignment.counts(), vec![4, 4, 4]);
    }
}
