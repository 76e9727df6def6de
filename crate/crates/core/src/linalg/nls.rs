//! Nonnegative and simplex-constrained least squares by scaled-form ADMM.
//!
//! Both solvers work on the Gram form of the problem,
//! `min_X tr(XᵀQX) − 2·tr(RᵀX) (+ l1·ΣX)` with `Q = GᵀG`, `R = GᵀY`, so
//! callers can fold ridge and cluster-attraction terms into `Q` and `R`
//! without materializing stacked systems. The penalty is `ρ = tr(Q)/n` and
//! `Q + ρI` is factored once per call.
//!
//! Every `POLISH_EVERY` iterations the current support is used to solve the
//! equality-constrained system exactly; if the polished point satisfies the
//! KKT conditions the loop stops early. The returned column is the best of
//! the warm start, the ADMM iterate and the polished iterate, so a call never
//! increases the objective relative to its (feasible) warm start.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{spd_factor, spd_solve_vec, DenseMatrix};
use crate::error::{dim_err, Error, Result};

const POLISH_EVERY: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlsOptions {
    /// Relative tolerance on the ADMM residuals and on the projected-gradient
    /// KKT residual.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Weight of an `ℓ1` penalty `l1·ΣX` (nonnegative solver only).
    pub l1: f64,
}

impl Default for NlsOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iters: 300,
            l1: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    /// The iteration cap was hit; the best iterate is returned.
    NotConverged,
}

#[derive(Debug, Clone)]
pub struct NlsSolution {
    pub x: DenseMatrix,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Projected-gradient norm relative to the problem scale.
    pub kkt_residual: f64,
}

impl NlsSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

#[derive(Debug, Clone, Copy)]
enum Feasible {
    Orthant { l1: f64 },
    Simplex,
}

/// `min_{H ≥ 0} ‖G·H − Y‖²_F`, started from zero.
pub fn nls_solve(g: &DenseMatrix, y: &DenseMatrix, opts: &NlsOptions) -> Result<NlsSolution> {
    check_stacked("nls_solve", g, y)?;
    let q = g.transpose() * g;
    let r = g.transpose() * y;
    solve_gram(&q, &r, None, Feasible::Orthant { l1: opts.l1 }, opts)
}

/// As [`nls_solve`], warm-started from `warm`.
pub fn nls_solve_warm(
    g: &DenseMatrix,
    y: &DenseMatrix,
    warm: &DenseMatrix,
    opts: &NlsOptions,
) -> Result<NlsSolution> {
    check_stacked("nls_solve", g, y)?;
    let q = g.transpose() * g;
    let r = g.transpose() * y;
    solve_gram(&q, &r, Some(warm), Feasible::Orthant { l1: opts.l1 }, opts)
}

/// Gram-form nonnegative least squares: `min_{X ≥ 0} tr(XᵀQX) − 2tr(RᵀX) + l1·ΣX`.
pub fn nls_gram(
    q: &DenseMatrix,
    r: &DenseMatrix,
    warm: Option<&DenseMatrix>,
    opts: &NlsOptions,
) -> Result<NlsSolution> {
    solve_gram(q, r, warm, Feasible::Orthant { l1: opts.l1 }, opts)
}

/// `min ‖G·H − Y‖²_F` subject to every column of `H` lying in the unit simplex.
pub fn simplex_ls_solve(
    g: &DenseMatrix,
    y: &DenseMatrix,
    opts: &NlsOptions,
) -> Result<NlsSolution> {
    check_stacked("simplex_ls_solve", g, y)?;
    let q = g.transpose() * g;
    let r = g.transpose() * y;
    solve_gram(&q, &r, None, Feasible::Simplex, opts)
}

/// Gram-form simplex-constrained least squares.
pub fn simplex_ls_gram(
    q: &DenseMatrix,
    r: &DenseMatrix,
    warm: Option<&DenseMatrix>,
    opts: &NlsOptions,
) -> Result<NlsSolution> {
    solve_gram(q, r, warm, Feasible::Simplex, opts)
}

fn check_stacked(op: &'static str, g: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
    if g.nrows() == 0 || g.ncols() == 0 {
        return Err(Error::Argument(format!("{op}: empty system matrix")));
    }
    if g.nrows() != y.nrows() {
        return Err(dim_err(
            op,
            format!("G has {} rows, Y has {}", g.nrows(), y.nrows()),
        ));
    }
    super::ensure_finite(g, "G")?;
    super::ensure_finite(y, "Y")
}

fn solve_gram(
    q: &DenseMatrix,
    r: &DenseMatrix,
    warm: Option<&DenseMatrix>,
    set: Feasible,
    opts: &NlsOptions,
) -> Result<NlsSolution> {
    let n = q.nrows();
    let p = r.ncols();
    if q.ncols() != n || r.nrows() != n {
        return Err(dim_err(
            "nls",
            format!("Q is {:?}, R is {:?}", q.shape(), r.shape()),
        ));
    }
    if n == 0 {
        return Err(Error::Argument("nls: zero unknowns".into()));
    }
    super::ensure_finite(q, "Q")?;
    super::ensure_finite(r, "R")?;
    if let Feasible::Orthant { l1 } = set {
        if !(l1.is_finite() && l1 >= 0.0) {
            return Err(Error::Argument(format!("l1 weight must be >= 0, got {l1}")));
        }
    }

    let mut scratch = vec![0.0; n];
    let start = match warm {
        Some(w) => {
            if w.shape() != (n, p) {
                return Err(dim_err(
                    "nls",
                    format!("warm start is {:?}, expected {:?}", w.shape(), (n, p)),
                ));
            }
            super::ensure_finite(w, "warm start")?;
            let mut s = w.clone();
            for mut col in s.column_iter_mut() {
                project(col.as_mut_slice(), set, 0.0, &mut scratch);
            }
            s
        }
        None => match set {
            Feasible::Orthant { .. } => DenseMatrix::zeros(n, p),
            Feasible::Simplex => DenseMatrix::from_element(n, p, 1.0 / n as f64),
        },
    };
    if p == 0 {
        return Ok(NlsSolution {
            x: start,
            status: SolveStatus::Converged,
            iterations: 0,
            kkt_residual: 0.0,
        });
    }

    let mut rho = q.trace() / n as f64;
    if !(rho.is_finite() && rho > 0.0) {
        rho = 1.0;
    }
    let chol = spd_factor(q + DenseMatrix::identity(n, n) * rho, "nls ADMM system")?;
    let shift = match set {
        Feasible::Orthant { l1 } => l1 / (2.0 * rho),
        Feasible::Simplex => 0.0,
    };
    let scale = kkt_scale(q, r, set);

    let mut h = start.clone();
    let mut u = DenseMatrix::zeros(n, p);
    let mut ht = DenseMatrix::zeros(n, p);
    let mut h_old = DenseMatrix::zeros(n, p);
    let mut iterations = 0;
    let mut polished: Option<DenseMatrix> = None;

    while iterations < opts.max_iters {
        iterations += 1;
        {
            let (hs, us, rs) = (h.as_slice(), u.as_slice(), r.as_slice());
            for (k, t) in ht.as_mut_slice().iter_mut().enumerate() {
                *t = rs[k] + rho * (hs[k] - us[k]);
            }
        }
        chol.solve_mut(&mut ht);
        h_old.copy_from(&h);
        {
            let (ts, us) = (ht.as_slice(), u.as_slice());
            for (k, v) in h.as_mut_slice().iter_mut().enumerate() {
                *v = ts[k] + us[k];
            }
        }
        for mut col in h.column_iter_mut() {
            project(col.as_mut_slice(), set, shift, &mut scratch);
        }
        let mut primal = 0.0;
        let mut dual = 0.0;
        let mut hn = 0.0;
        let mut un = 0.0;
        {
            let (hs, ts, os) = (h.as_slice(), ht.as_slice(), h_old.as_slice());
            for (k, uk) in u.as_mut_slice().iter_mut().enumerate() {
                let d = ts[k] - hs[k];
                *uk += d;
                primal += d * d;
                let e = hs[k] - os[k];
                dual += e * e;
                hn += hs[k] * hs[k];
                un += *uk * *uk;
            }
        }
        let denom = hn.max(un).max(f64::MIN_POSITIVE);
        let tol2 = opts.tolerance * opts.tolerance;
        if primal <= tol2 * denom && dual <= tol2 * denom {
            break;
        }
        if iterations % POLISH_EVERY == 0 {
            let cand = polish(q, r, &h, set);
            if kkt_residual(q, r, &cand, set) / scale <= opts.tolerance {
                polished = Some(cand);
                break;
            }
        }
    }

    let polished = polished.unwrap_or_else(|| polish(q, r, &h, set));
    let mut x = DenseMatrix::zeros(n, p);
    for c in 0..p {
        let qc = |m: &DenseMatrix| column_objective(q, r, m, c, set);
        let candidates = [&start, &h, &polished];
        let best = candidates
            .iter()
            .min_by(|a, b| qc(a).total_cmp(&qc(b)))
            .expect("non-empty");
        x.set_column(c, &best.column(c));
    }
    let kkt = kkt_residual(q, r, &x, set) / scale;
    let status = if kkt <= opts.tolerance.max(1e-13) {
        SolveStatus::Converged
    } else {
        SolveStatus::NotConverged
    };
    Ok(NlsSolution {
        x,
        status,
        iterations,
        kkt_residual: kkt,
    })
}

fn project(col: &mut [f64], set: Feasible, shift: f64, scratch: &mut [f64]) {
    match set {
        Feasible::Orthant { .. } => {
            for v in col.iter_mut() {
                *v = (*v - shift).max(0.0);
            }
        }
        Feasible::Simplex => project_simplex(col, scratch),
    }
}

/// Euclidean projection onto the unit simplex (sort-based, `O(n log n)`).
pub(crate) fn project_simplex(v: &mut [f64], scratch: &mut [f64]) {
    let n = v.len();
    let sorted = &mut scratch[..n];
    sorted.copy_from_slice(v);
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

fn column_objective(
    q: &DenseMatrix,
    r: &DenseMatrix,
    x: &DenseMatrix,
    c: usize,
    set: Feasible,
) -> f64 {
    let h = x.column(c);
    let qh = q * h;
    let mut v = h.dot(&qh) - 2.0 * r.column(c).dot(&h);
    if let Feasible::Orthant { l1 } = set {
        v += l1 * h.sum();
    }
    v
}

fn kkt_scale(q: &DenseMatrix, r: &DenseMatrix, set: Feasible) -> f64 {
    let l1 = match set {
        Feasible::Orthant { l1 } => l1 * ((r.len()) as f64).sqrt(),
        Feasible::Simplex => 0.0,
    };
    (2.0 * r.norm() + 2.0 * q.norm() + l1).max(f64::MIN_POSITIVE)
}

/// Frobenius norm of the projected gradient (orthant) or of the simplex KKT
/// violation, summed over columns.
fn kkt_residual(q: &DenseMatrix, r: &DenseMatrix, x: &DenseMatrix, set: Feasible) -> f64 {
    let grad = (q * x - r) * 2.0;
    let mut total = 0.0;
    for c in 0..x.ncols() {
        let h = x.column(c);
        let g = grad.column(c);
        match set {
            Feasible::Orthant { l1 } => {
                for (hi, gi) in h.iter().zip(g.iter()) {
                    let gi = gi + l1;
                    let pg = if *hi > 0.0 { gi } else { gi.min(0.0) };
                    total += pg * pg;
                }
            }
            Feasible::Simplex => {
                let support: Vec<usize> = (0..h.len()).filter(|&i| h[i] > 0.0).collect();
                if support.is_empty() {
                    total += 1.0;
                    continue;
                }
                let nu = support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64;
                for i in 0..h.len() {
                    let d = g[i] - nu;
                    let v = if h[i] > 0.0 { d } else { d.min(0.0) };
                    total += v * v;
                }
                let infeas = h.sum() - 1.0;
                total += infeas * infeas;
            }
        }
    }
    total.sqrt()
}

/// Solves each column exactly on the support of `x`; columns whose polished
/// solution leaves the feasible set keep their current value.
fn polish(q: &DenseMatrix, r: &DenseMatrix, x: &DenseMatrix, set: Feasible) -> DenseMatrix {
    let mut out = x.clone();
    for c in 0..x.ncols() {
        let support: Vec<usize> = (0..x.nrows()).filter(|&i| x[(i, c)] > 0.0).collect();
        if support.is_empty() {
            continue;
        }
        let m = support.len();
        let qpp = DMatrix::from_fn(m, m, |a, b| q[(support[a], support[b])]);
        let candidate = match set {
            Feasible::Orthant { l1 } => {
                let rhs = DVector::from_fn(m, |a, _| r[(support[a], c)] - 0.5 * l1);
                spd_solve_vec(qpp, &rhs).filter(|v| v.iter().all(|x| *x > 0.0))
            }
            Feasible::Simplex => {
                let rp = DVector::from_fn(m, |a, _| r[(support[a], c)]);
                let ones = DVector::from_element(m, 1.0);
                let chol = nalgebra::Cholesky::new(qpp);
                chol.and_then(|ch| {
                    let a = ch.solve(&rp);
                    let b = ch.solve(&ones);
                    let denom = b.sum();
                    if !(denom.is_finite() && denom.abs() > 0.0) {
                        return None;
                    }
                    let t = (1.0 - a.sum()) / denom;
                    let v = a + b * t;
                    v.iter().all(|x| x.is_finite() && *x >= 0.0).then_some(v)
                })
            }
        };
        if let Some(v) = candidate {
            for i in 0..x.nrows() {
                out[(i, c)] = 0.0;
            }
            for (a, &i) in support.iter().enumerate() {
                out[(i, c)] = v[a];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = crate::rng::stream(seed, &[0xA11]);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn objective(g: &DenseMatrix, y: &DenseMatrix, h: &DenseMatrix) -> f64 {
        (g * h - y).norm_squared()
    }

    /// Projected gradient descent with step 1/L, run to a fixed point.
    fn projected_gradient_oracle(g: &DenseMatrix, y: &DenseMatrix) -> DenseMatrix {
        let q = g.transpose() * g;
        let r = g.transpose() * y;
        let lip = 2.0 * q.symmetric_eigenvalues().max();
        let mut h = DenseMatrix::zeros(g.ncols(), y.ncols());
        for _ in 0..2_000_000 {
            let grad = (&q * &h - &r) * 2.0;
            let next = (&h - grad / lip).map(|v| v.max(0.0));
            let change = (&next - &h).norm();
            h = next;
            if change < 1e-13 {
                break;
            }
        }
        h
    }

    #[test]
    fn identity_system_projects_onto_orthant() {
        let g = DenseMatrix::identity(2, 2);
        let y = DenseMatrix::from_column_slice(2, 1, &[3.0, -1.0]);
        let sol = nls_solve(&g, &y, &NlsOptions::default()).unwrap();
        assert!((sol.x[(0, 0)] - 3.0).abs() < 1e-10);
        assert_eq!(sol.x[(1, 0)], 0.0);
        assert!(sol.converged());
    }

    #[test]
    fn scalar_system_is_exact() {
        let g = DenseMatrix::from_element(1, 1, 2.0);
        let y = DenseMatrix::from_element(1, 1, 4.0);
        let sol = nls_solve(&g, &y, &NlsOptions::default()).unwrap();
        assert!((sol.x[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_projected_gradient_oracle() {
        for seed in 0..5 {
            let g = random(6, 3, seed);
            let y = random(6, 2, seed + 100);
            let sol = nls_solve(&g, &y, &NlsOptions::default()).unwrap();
            let oracle = projected_gradient_oracle(&g, &y);
            let diff = (&sol.x - &oracle).abs().max();
            assert!(diff < 1e-6, "seed {seed}: diff {diff}");
            assert!(sol.kkt_residual < 1e-8);
        }
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut g = DenseMatrix::identity(2, 2);
        g[(0, 1)] = f64::NAN;
        let y = DenseMatrix::zeros(2, 1);
        assert!(matches!(
            nls_solve(&g, &y, &NlsOptions::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let g = random(8, 4, 3);
        let y = random(8, 3, 4);
        let opts = NlsOptions {
            max_iters: 1,
            ..NlsOptions::default()
        };
        let sol = nls_solve(&g, &y, &opts).unwrap();
        assert!(sol.x.iter().all(|v| *v >= 0.0));
        assert!(objective(&g, &y, &sol.x) <= objective(&g, &y, &DenseMatrix::zeros(4, 3)) + 1e-12);
        if !sol.converged() {
            assert!(sol.kkt_residual > opts.tolerance);
        }
    }

    #[test]
    fn l1_penalty_shrinks_towards_zero() {
        let g = DenseMatrix::identity(2, 2);
        let y = DenseMatrix::from_column_slice(2, 1, &[3.0, 0.2]);
        let opts = NlsOptions {
            l1: 1.0,
            ..NlsOptions::default()
        };
        // min (h-3)² + (h2-0.2)² + h1 + h2  →  h1 = 2.5, h2 = 0
        let sol = nls_solve(&g, &y, &opts).unwrap();
        assert!((sol.x[(0, 0)] - 2.5).abs() < 1e-10);
        assert_eq!(sol.x[(1, 0)], 0.0);
    }

    #[test]
    fn simplex_feasible_target_is_returned() {
        let g = DenseMatrix::identity(2, 2);
        let y = DenseMatrix::from_column_slice(2, 1, &[0.2, 0.8]);
        let sol = simplex_ls_solve(&g, &y, &NlsOptions::default()).unwrap();
        assert!((sol.x[(0, 0)] - 0.2).abs() < 1e-10);
        assert!((sol.x[(1, 0)] - 0.8).abs() < 1e-10);
    }

    #[test]
    fn simplex_identity_is_euclidean_projection() {
        let g = DenseMatrix::identity(2, 2);
        let y = DenseMatrix::from_column_slice(2, 1, &[2.0, 0.0]);
        let sol = simplex_ls_solve(&g, &y, &NlsOptions::default()).unwrap();
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-10);
        assert!(sol.x[(1, 0)].abs() < 1e-10);
    }

    #[test]
    fn simplex_matches_grid_search() {
        for seed in 0..3 {
            let g = random(5, 3, seed + 10);
            let y = random(5, 1, seed + 20);
            let sol = simplex_ls_solve(&g, &y, &NlsOptions::default()).unwrap();
            let mut best = (f64::INFINITY, [0.0; 3]);
            let steps = 1000;
            for a in 0..=steps {
                for b in 0..=(steps - a) {
                    let h = [
                        a as f64 / steps as f64,
                        b as f64 / steps as f64,
                        (steps - a - b) as f64 / steps as f64,
                    ];
                    let hm = DenseMatrix::from_column_slice(3, 1, &h);
                    let v = objective(&g, &y, &hm);
                    if v < best.0 {
                        best = (v, h);
                    }
                }
            }
            for k in 0..3 {
                assert!((sol.x[(k, 0)] - best.1[k]).abs() <= 2e-3, "seed {seed}");
            }
            assert!((sol.x.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn warm_start_never_loses_progress() {
        let g = random(7, 3, 41);
        let y = random(7, 4, 42);
        let exact = nls_solve(&g, &y, &NlsOptions::default()).unwrap();
        let opts = NlsOptions {
            max_iters: 2,
            ..NlsOptions::default()
        };
        let again = nls_solve_warm(&g, &y, &exact.x, &opts).unwrap();
        assert!(objective(&g, &y, &again.x) <= objective(&g, &y, &exact.x) + 1e-12);
    }

    proptest! {
        #[test]
        fn nls_output_is_nonnegative_and_beats_zero(seed in any::<u64>(), m in 1usize..8, n in 1usize..5, p in 1usize..4) {
            let g = random(m, n, seed);
            let y = random(m, p, seed ^ 0xFFFF);
            let sol = nls_solve(&g, &y, &NlsOptions::default()).unwrap();
            prop_assert!(sol.x.iter().all(|v| *v >= 0.0));
            prop_assert!(objective(&g, &y, &sol.x) <= objective(&g, &y, &DenseMatrix::zeros(n, p)) + 1e-12);
        }

        #[test]
        fn simplex_output_is_always_feasible(seed in any::<u64>(), m in 1usize..8, n in 1usize..6, p in 1usize..4) {
            let g = random(m, n, seed);
            let y = random(m, p, seed ^ 0xABCD);
            let sol = simplex_ls_solve(&g, &y, &NlsOptions::default()).unwrap();
            for c in 0..p {
                prop_assert!(sol.x.column(c).iter().all(|v| *v >= 0.0));
                prop_assert!((sol.x.column(c).sum() - 1.0).abs() < 1e-10);
            }
        }

        #[test]
        fn simplex_projection_is_feasible_and_idempotent(v in proptest::collection::vec(-5.0f64..5.0, 1..10)) {
            let mut x = v.clone();
            let mut scratch = vec![0.0; x.len()];
            project_simplex(&mut x, &mut scratch);
            prop_assert!(x.iter().all(|a| *a >= 0.0));
            prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut y = x.clone();
            project_simplex(&mut y, &mut scratch);
            for (a, b) in x.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
