//! Permutation-matched evaluation: clustering accuracy, matched factor MSE
//! and the Kruskal-rank certificate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::DenseMatrix;

/// Floor applied when converting an MSE to decibels.
pub const DB_FLOOR: f64 = -120.0;

/// Largest column count accepted by [`kruskal_rank`].
pub const KRUSKAL_MAX_COLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialScore {
    pub accuracy: f64,
    pub mse_linear: f64,
    pub mse_db: f64,
    pub runtime_seconds: f64,
}

impl TrialScore {
    pub fn new(accuracy: f64, mse_linear: f64, runtime_seconds: f64) -> Self {
        Self {
            accuracy,
            mse_linear,
            mse_db: to_db(mse_linear),
            runtime_seconds,
        }
    }
}

/// `10·log10(v)`, floored at [`DB_FLOOR`]; NaN stays NaN.
pub fn to_db(v: f64) -> f64 {
    if v.is_nan() {
        f64::NAN
    } else if v > 0.0 {
        (10.0 * v.log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian
/// algorithm with potentials, `O(n³)`). Returns `assign[row] = col`.
pub fn hungarian(cost: &DenseMatrix) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "hungarian needs a square matrix");
    if n == 0 {
        return Vec::new();
    }
    // 1-based rows/cols; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn dense_codes(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

/// Fraction of points whose predicted cluster matches the true one under
/// the best bijection between label alphabets.
pub fn clustering_accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(dim_err(
            "clustering_accuracy",
            format!("{} true labels, {} predicted", truth.len(), pred.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::Argument("clustering_accuracy: no labels".into()));
    }
    let (t, nt) = dense_codes(truth);
    let (p, np) = dense_codes(pred);
    let n = nt.max(np);
    let mut counts = DenseMatrix::zeros(n, n);
    for (&a, &b) in t.iter().zip(&p) {
        counts[(a, b)] += 1.0;
    }
    let assign = hungarian(&counts.map(|c| -c));
    let matched: f64 = (0..n).map(|r| counts[(r, assign[r])]).sum();
    Ok(matched / truth.len() as f64)
}

/// [`clustering_accuracy`] over the points whose `excluded` flag is false.
pub fn clustering_accuracy_masked(
    truth: &[usize],
    pred: &[usize],
    excluded: &[bool],
) -> Result<f64> {
    if excluded.len() != truth.len() || pred.len() != truth.len() {
        return Err(dim_err(
            "clustering_accuracy_masked",
            "label and mask lengths differ",
        ));
    }
    let keep: Vec<usize> = (0..truth.len()).filter(|&j| !excluded[j]).collect();
    let t: Vec<usize> = keep.iter().map(|&j| truth[j]).collect();
    let p: Vec<usize> = keep.iter().map(|&j| pred[j]).collect();
    clustering_accuracy(&t, &p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseMatch {
    pub mse: f64,
    /// `permutation[f]` is the estimated column matched to true column `f`.
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    /// Zero columns that could not be normalized.
    pub warnings: Vec<String>,
}

fn normalized(w: &DenseMatrix, which: &str, warnings: &mut Vec<String>) -> DenseMatrix {
    let mut out = w.clone();
    for (f, mut col) in out.column_iter_mut().enumerate() {
        let n = col.norm();
        if n > 0.0 && n.is_finite() {
            col /= n;
        } else {
            warnings.push(format!(
                "{which} column {f} has zero norm; replaced by a unit vector"
            ));
            col.fill(0.0);
            col[0] = 1.0;
        }
    }
    out
}

/// Matched MSE with the optimal permutation and signs.
pub fn matched_mse_detailed(w_true: &DenseMatrix, w_est: &DenseMatrix) -> Result<MseMatch> {
    if w_true.shape() != w_est.shape() {
        return Err(dim_err(
            "matched_mse",
            format!("{:?} vs {:?}", w_true.shape(), w_est.shape()),
        ));
    }
    let f = w_true.ncols();
    if f == 0 || w_true.nrows() == 0 {
        return Err(Error::Argument("matched_mse: empty factor".into()));
    }
    crate::linalg::ensure_finite(w_true, "true factor")?;
    crate::linalg::ensure_finite(w_est, "estimated factor")?;
    let mut warnings = Vec::new();
    let a = normalized(w_true, "true", &mut warnings);
    let b = normalized(w_est, "estimated", &mut warnings);
    // ‖a − c·b‖² = 2 − 2c·(aᵀb) for unit vectors, minimized by c = sign(aᵀb);
    // the direct form avoids cancellation near zero
    let pair = |i: usize, j: usize| {
        let dot = a.column(i).dot(&b.column(j));
        let c = if dot < 0.0 { -1.0 } else { 1.0 };
        ((a.column(i) - b.column(j) * c).norm_squared(), c)
    };
    let cost = DenseMatrix::from_fn(f, f, |i, j| pair(i, j).0);
    let permutation = hungarian(&cost);
    let mut total = 0.0;
    let mut signs = Vec::with_capacity(f);
    for (i, &j) in permutation.iter().enumerate() {
        let (c, s) = pair(i, j);
        total += c;
        signs.push(s);
    }
    Ok(MseMatch {
        mse: total / f as f64,
        permutation,
        signs,
        warnings,
    })
}

/// Mean squared distance between normalized columns after the best column
/// permutation and per-column sign flips (linear scale).
pub fn matched_mse(w_true: &DenseMatrix, w_est: &DenseMatrix) -> Result<f64> {
    Ok(matched_mse_detailed(w_true, w_est)?.mse)
}

/// Relative singular-value threshold for the rank tests.
const RANK_TOL: f64 = 1e-9;

fn full_column_rank(a: &DenseMatrix, cols: &[usize]) -> bool {
    let sub = DenseMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
    if cols.len() > a.nrows() {
        return false;
    }
    let sv = sub.singular_values();
    let max = sv.max();
    max > 0.0 && sv.min() > RANK_TOL * max
}

/// Largest `k` such that every `k` columns of `A` are linearly independent.
pub fn kruskal_rank(a: &DenseMatrix) -> Result<usize> {
    let n = a.ncols();
    if n > KRUSKAL_MAX_COLS {
        return Err(Error::Scope(format!(
            "kruskal_rank enumerates subsets; {n} columns exceed the limit of {KRUSKAL_MAX_COLS}"
        )));
    }
    let mut rank = 0;
    for k in 1..=n {
        let all = (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == k)
            .all(|m| {
                let cols: Vec<usize> = (0..n).filter(|&c| m & (1 << c) != 0).collect();
                full_column_rank(a, &cols)
            });
        if !all {
            break;
        }
        rank = k;
    }
    Ok(rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut rng::Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(
            clustering_accuracy(&[0, 0, 1, 2], &[0, 0, 1, 2]).unwrap(),
            1.0
        );
        assert_eq!(
            clustering_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(),
            1.0
        );
        assert_eq!(
            clustering_accuracy(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap(),
            0.5
        );
        assert!(clustering_accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn accuracy_matches_bijection_enumeration() {
        let mut rng = rng::stream(1, &[]);
        for _ in 0..50 {
            let k = rng.random_range(1..=5);
            let n = rng.random_range(1..40);
            let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let best = permutations(k)
                .iter()
                .map(|perm| t.iter().zip(&p).filter(|(a, b)| perm[**a] == **b).count())
                .max()
                .unwrap();
            assert_eq!(clustering_accuracy(&t, &p).unwrap(), best as f64 / n as f64);
        }
    }

    #[test]
    fn masked_accuracy_ignores_flagged_points() {
        let acc =
            clustering_accuracy_masked(&[0, 0, 1, 1], &[0, 1, 1, 1], &[false, true, false, false]);
        assert_eq!(acc.unwrap(), 1.0);
    }

    #[test]
    fn mse_absorbs_permutation_and_scale() {
        let mut rng = rng::stream(2, &[]);
        let w = gaussian(6, 4, &mut rng);
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut rng);
        let est = DenseMatrix::from_fn(6, 4, |r, c| w[(r, order[c])] * (c as f64 - 1.5));
        assert!(matched_mse(&w, &est).unwrap() < 1e-12);
    }

    #[test]
    fn mse_absorbs_sign_flip() {
        let w = DenseMatrix::identity(3, 3);
        let mut est = w.clone();
        est.column_mut(1).neg_mut();
        assert!(matched_mse(&w, &est).unwrap() < 1e-15);
    }

    #[test]
    fn mse_matches_exhaustive_enumeration() {
        let mut rng = rng::stream(3, &[]);
        for f in 1..=4 {
            for _ in 0..10 {
                let a = gaussian(5, f, &mut rng);
                let b = gaussian(5, f, &mut rng);
                let an = normalized(&a, "", &mut vec![]);
                let bn = normalized(&b, "", &mut vec![]);
                let mut best = f64::INFINITY;
                for perm in permutations(f) {
                    for signs in 0..1u32 << f {
                        let mut total = 0.0;
                        for i in 0..f {
                            let c = if signs & (1 << i) != 0 { -1.0 } else { 1.0 };
                            total += (an.column(i) - bn.column(perm[i]) * c).norm_squared();
                        }
                        best = best.min(total / f as f64);
                    }
                }
                let got = matched_mse(&a, &b).unwrap();
                assert!((got - best).abs() <= 1e-14, "{got} vs {best}");
            }
        }
    }

    #[test]
    fn mse_is_symmetric() {
        let mut rng = rng::stream(4, &[]);
        let a = gaussian(7, 3, &mut rng);
        let b = gaussian(7, 3, &mut rng);
        let ab = matched_mse(&a, &b).unwrap();
        let ba = matched_mse(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-14);
    }

    #[test]
    fn zero_column_is_reported() {
        let a = DenseMatrix::identity(3, 2);
        let b = DenseMatrix::zeros(3, 2);
        let m = matched_mse_detailed(&a, &b).unwrap();
        assert_eq!(m.warnings.len(), 2);
        assert!(m.mse.is_finite());
    }

    #[test]
    fn db_conversion_is_floored() {
        assert_eq!(to_db(0.0), DB_FLOOR);
        assert!((to_db(0.01) + 20.0).abs() < 1e-12);
        assert!(to_db(f64::NAN).is_nan());
        assert_eq!(TrialScore::new(1.0, 1e-20, 0.0).mse_db, DB_FLOOR);
    }

    #[test]
    fn kruskal_examples() {
        assert_eq!(kruskal_rank(&DenseMatrix::identity(3, 3)).unwrap(), 3);
        let twin =
            DenseMatrix::from_column_slice(3, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 0.0, 1.0, 0.0]);
        assert_eq!(kruskal_rank(&twin).unwrap(), 1);
        assert!(matches!(
            kruskal_rank(&DenseMatrix::zeros(9, 9)),
            Err(Error::Scope(_))
        ));
    }

    #[test]
    fn kruskal_of_gaussian_is_full() {
        let mut rng = rng::stream(5, &[]);
        let a = gaussian(6, 4, &mut rng);
        assert_eq!(kruskal_rank(&a).unwrap(), 4);
        // more columns than rows: every 3-subset is independent, 4 cannot be
        let wide = gaussian(3, 5, &mut rng);
        assert_eq!(kruskal_rank(&wide).unwrap(), 3);
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = rng::stream(6, &[]);
        for n in 1..=6 {
            let c = DenseMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
            let got: f64 = hungarian(&c)
                .iter()
                .enumerate()
                .map(|(i, &j)| c[(i, j)])
                .sum();
            let best = permutations(n)
                .iter()
                .map(|p| p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            assert!((got - best).abs() < 1e-12);
        }
    }
}
