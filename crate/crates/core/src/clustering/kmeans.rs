use rand::Rng as _;

use super::{argmin, Assignment};
use crate::error::{dim_err, Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng;

/// Cluster centroids, one per column of an `F × K` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids(pub DenseMatrix);

impl Centroids {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    /// `M·S`: the centroid of each point's cluster, column by column.
    pub fn expand(&self, s: &Assignment) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.0.nrows(), s.len());
        for (j, &l) in s.labels().iter().enumerate() {
            out.set_column(j, &self.0.column(l));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum KmeansInit {
    /// K-means++ seeding from a derived random stream.
    PlusPlus {
        seed: u64,
    },
    Centroids(Centroids),
    Labels(Assignment),
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Centroids,
    pub assignment: Assignment,
    pub cost: f64,
    pub iterations: usize,
    pub cost_trace: Vec<f64>,
}

fn sq_dist(h: &DenseMatrix, j: usize, m: &DenseMatrix, k: usize) -> f64 {
    h.column(j)
        .iter()
        .zip(m.column(k).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Nearest-centroid assignment; ties go to the lowest cluster index.
pub fn kmeans_assign(h: &DenseMatrix, m: &Centroids) -> Result<Assignment> {
    let cm = m.matrix();
    if cm.nrows() != h.nrows() {
        return Err(dim_err(
            "kmeans_assign",
            format!("points have {} rows, centroids {}", h.nrows(), cm.nrows()),
        ));
    }
    if cm.ncols() == 0 {
        return Err(Error::Argument("kmeans_assign: no centroids".into()));
    }
    let labels = (0..h.ncols())
        .map(|j| argmin((0..cm.ncols()).map(|k| sq_dist(h, j, cm, k))))
        .collect();
    Assignment::new(labels, cm.ncols())
}

/// Centroid update: each centroid is the mean of its members.
///
/// An empty cluster is reseeded at the point farthest from its own (freshly
/// computed) centroid; several empty clusters take distinct points in
/// decreasing order of that distance.
pub fn kmeans_centroids(h: &DenseMatrix, s: &Assignment, k: usize) -> Result<Centroids> {
    if s.len() != h.ncols() {
        return Err(dim_err(
            "kmeans_centroids",
            format!("{} labels for {} points", s.len(), h.ncols()),
        ));
    }
    if s.k() != k {
        return Err(Error::Argument(format!(
            "assignment has K = {}, requested {k}",
            s.k()
        )));
    }
    let f = h.nrows();
    let mut m = DenseMatrix::zeros(f, k);
    let counts = s.counts();
    for (j, &l) in s.labels().iter().enumerate() {
        let mut col = m.column_mut(l);
        col += h.column(j);
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            let mut col = m.column_mut(c);
            col /= n as f64;
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() && h.ncols() > 0 {
        let mut order: Vec<(usize, f64)> = (0..h.ncols())
            .map(|j| (j, sq_dist(h, j, &m, s.label(j))))
            .collect();
        // stable sort keeps lower indices first among equal distances
        order.sort_by(|a, b| b.1.total_cmp(&a.1));
        for (slot, &c) in empty.iter().enumerate() {
            let j = order[slot % order.len()].0;
            m.set_column(c, &h.column(j));
        }
    }
    Ok(Centroids(m))
}

/// `‖H − M·S‖²_F`.
pub fn kmeans_cost(h: &DenseMatrix, m: &Centroids, s: &Assignment) -> f64 {
    (0..h.ncols())
        .map(|j| sq_dist(h, j, m.matrix(), s.label(j)))
        .sum()
}

fn plus_plus(h: &DenseMatrix, k: usize, seed: u64) -> Centroids {
    let mut rng = rng::stream(seed, &[rng::label("kmeans++")]);
    let n = h.ncols();
    let mut m = DenseMatrix::zeros(h.nrows(), k);
    let first = rng.random_range(0..n);
    m.set_column(0, &h.column(first));
    let mut d2: Vec<f64> = (0..n).map(|j| sq_dist(h, j, &m, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (j, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = j;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        m.set_column(c, &h.column(pick));
        for (j, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(h, j, &m, c));
        }
    }
    Centroids(m)
}

/// Lloyd iterations: assignment and centroid steps alternate until the
/// labels stop changing or `max_iters` is reached.
pub fn kmeans_lloyd(
    h: &DenseMatrix,
    k: usize,
    init: KmeansInit,
    max_iters: usize,
) -> Result<KmeansResult> {
    if k == 0 {
        return Err(Error::Argument("K must be >= 1".into()));
    }
    if h.ncols() < k {
        return Err(Error::Argument(format!(
            "K-means needs at least K = {k} points, got {}",
            h.ncols()
        )));
    }
    crate::linalg::ensure_finite(h, "K-means data")?;
    let mut m = match init {
        KmeansInit::PlusPlus { seed } => plus_plus(h, k, seed),
        KmeansInit::Centroids(c) => {
            if c.k() != k || c.matrix().nrows() != h.nrows() {
                return Err(dim_err(
                    "kmeans_lloyd",
                    "initial centroids have the wrong shape",
                ));
            }
            c
        }
        KmeansInit::Labels(s) => kmeans_centroids(h, &s, k)?,
    };
    let mut s = kmeans_assign(h, &m)?;
    let mut cost_trace = vec![kmeans_cost(h, &m, &s)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        m = kmeans_centroids(h, &s, k)?;
        let next = kmeans_assign(h, &m)?;
        let changed = next != s;
        s = next;
        cost_trace.push(kmeans_cost(h, &m, &s));
        if !changed {
            break;
        }
    }
    Ok(KmeansResult {
        cost: *cost_trace.last().expect("non-empty"),
        centroids: m,
        assignment: s,
        iterations,
        cost_trace,
    })
}

/// Best of `restarts` K-means++ runs, each seeded from `(seed, restart)`.
pub fn kmeans_best_of(
    h: &DenseMatrix,
    k: usize,
    restarts: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansResult> {
    let mut best: Option<KmeansResult> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans_lloyd(
            h,
            k,
            KmeansInit::PlusPlus {
                seed: rng::derive_seed(seed, &[r as u64]),
            },
            max_iters,
        )?;
        if best.as_ref().is_none_or(|b| run.cost < b.cost) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(cols: &[[f64; 2]]) -> DenseMatrix {
        DenseMatrix::from_fn(2, cols.len(), |r, c| cols[c][r])
    }

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = rng::stream(seed, &[]);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    #[test]
    fn assigns_to_nearest_centroid() {
        let m = Centroids(pts(&[[0.0, 0.0], [1.0, 1.0]]));
        let s = kmeans_assign(&pts(&[[0.1, 0.1]]), &m).unwrap();
        assert_eq!(s.labels(), &[0]);
    }

    #[test]
    fn equidistant_point_goes_to_lower_index() {
        let m = Centroids(pts(&[[0.0, 0.0], [2.0, 0.0]]));
        let s = kmeans_assign(&pts(&[[1.0, 0.0]]), &m).unwrap();
        assert_eq!(s.labels(), &[0]);
    }

    #[test]
    fn assignment_matches_exhaustive_scan() {
        let h = random(3, 50, 1);
        let m = Centroids(random(3, 4, 2));
        let s = kmeans_assign(&h, &m).unwrap();
        for j in 0..50 {
            let d: Vec<f64> = (0..4)
                .map(|k| (h.column(j) - m.0.column(k)).norm())
                .collect();
            let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(d[s.label(j)], best);
            assert!(d[..s.label(j)].iter().all(|v| *v > best));
        }
    }

    #[test]
    fn centroid_is_member_mean() {
        let h = pts(&[[0.0, 0.0], [2.0, 2.0]]);
        let s = Assignment::new(vec![0, 0], 1).unwrap();
        assert_eq!(kmeans_centroids(&h, &s, 1).unwrap().0, pts(&[[1.0, 1.0]]));
    }

    #[test]
    fn singleton_clusters_reproduce_points() {
        let h = random(3, 4, 5);
        let s = Assignment::new(vec![0, 1, 2, 3], 4).unwrap();
        assert_eq!(kmeans_centroids(&h, &s, 4).unwrap().0, h);
    }

    #[test]
    fn centroids_match_summation_oracle() {
        let h = random(4, 40, 6);
        let labels: Vec<usize> = (0..40).map(|j| (j * 7) % 5).collect();
        let s = Assignment::new(labels.clone(), 5).unwrap();
        let m = kmeans_centroids(&h, &s, 5).unwrap();
        for k in 0..5 {
            let mut sum = [0.0; 4];
            let mut n = 0.0;
            for j in 0..40 {
                if labels[j] == k {
                    n += 1.0;
                    for r in 0..4 {
                        sum[r] += h[(r, j)];
                    }
                }
            }
            for r in 0..4 {
                assert!((m.0[(r, k)] - sum[r] / n).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_cluster_reseeds_at_farthest_point() {
        let h = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0]]);
        let s = Assignment::new(vec![0, 0, 0], 2).unwrap();
        let m = kmeans_centroids(&h, &s, 2).unwrap();
        assert_eq!(
            m.0.column(1).iter().copied().collect::<Vec<_>>(),
            vec![10.0, 0.0]
        );
    }

    #[test]
    fn separated_pairs_split_perfectly() {
        let h = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
        let r = kmeans_lloyd(&h, 2, KmeansInit::PlusPlus { seed: 3 }, 100).unwrap();
        assert_eq!(r.assignment.label(0), r.assignment.label(1));
        assert_eq!(r.assignment.label(2), r.assignment.label(3));
        assert_ne!(r.assignment.label(0), r.assignment.label(2));
        assert!((r.cost - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let h = random(3, 20, 8);
        let r = kmeans_lloyd(&h, 1, KmeansInit::PlusPlus { seed: 1 }, 10).unwrap();
        let mean = h.column_mean();
        assert!((r.centroids.0.column(0) - mean).norm() < 1e-14);
    }

    #[test]
    fn fewer_points_than_clusters_is_an_error() {
        let h = random(2, 2, 1);
        assert!(matches!(
            kmeans_lloyd(&h, 3, KmeansInit::PlusPlus { seed: 1 }, 10),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn lloyd_beats_random_assignments() {
        let h = random(2, 30, 11);
        let r = kmeans_lloyd(&h, 3, KmeansInit::PlusPlus { seed: 4 }, 100).unwrap();
        let mut rng = rng::stream(99, &[]);
        for _ in 0..1000 {
            let labels: Vec<usize> = (0..30).map(|_| rng.random_range(0..3)).collect();
            let s = Assignment::new(labels, 3).unwrap();
            let m = kmeans_centroids(&h, &s, 3).unwrap();
            assert!(r.cost <= kmeans_cost(&h, &m, &s) + 1e-12);
        }
    }

    #[test]
    fn lloyd_cost_never_increases_and_fixed_point_is_nearest() {
        for seed in 0..10 {
            let h = random(3, 60, 100 + seed);
            let r = kmeans_lloyd(&h, 5, KmeansInit::PlusPlus { seed }, 200).unwrap();
            for w in r.cost_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            assert_eq!(kmeans_assign(&h, &r.centroids).unwrap(), r.assignment);
        }
    }

    #[test]
    fn assignment_invariant_under_rotation() {
        let h = random(2, 25, 12);
        let m = Centroids(random(2, 3, 13));
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = DenseMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let a = kmeans_assign(&h, &m).unwrap();
        let b = kmeans_assign(&(&rot * &h), &Centroids(&rot * &m.0)).unwrap();
        assert_eq!(a, b);
    }
}
