//! Joint NMF and K-means with a unit-norm split variable.
//!
//! Minimizes
//! `‖X − W·H·D‖² + λ‖H − M·S‖² + η‖W‖² + μ‖H − Z‖²`
//! over `W, H ≥ 0`, a positive diagonal `D`, unit-norm columns `Z`, and
//! K-means centroids `M` with assignment `S`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_counts, check_weight, unit_columns, SolveInfo};
use crate::baselines::{nmf_km, NmfOptions, TwoStageOptions};
use crate::bcd::{self, BcdOptions, BlockProblem, Schedule};
use crate::clustering::{kmeans_assign, kmeans_centroids, Assignment, Centroids};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{ensure_finite, frob2, nls_gram, DenseMatrix, DiagScaling, NlsOptions};

/// Below this `‖b_j‖²` the scale `d_j` is undetermined and reset to 1.
const D_GUARD: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JnkmParams {
    pub f: usize,
    pub k: usize,
    pub lambda: f64,
    pub mu: f64,
    pub eta: f64,
    pub max_outer: usize,
    pub tol: f64,
    pub schedule: Schedule,
    pub nls: NlsOptions,
}

impl Default for JnkmParams {
    fn default() -> Self {
        Self {
            f: 0,
            k: 0,
            lambda: 1.0,
            mu: 100.0,
            eta: 0.1,
            max_outer: 200,
            tol: 1e-6,
            schedule: Schedule::Cyclic,
            nls: NlsOptions::default(),
        }
    }
}

impl JnkmParams {
    pub fn new(f: usize, k: usize) -> Self {
        Self {
            f,
            k,
            ..Default::default()
        }
    }

    fn validate(&self, j: usize) -> Result<()> {
        check_counts(self.f, self.k, j)?;
        check_weight("lambda", self.lambda)?;
        check_weight("mu", self.mu)?;
        check_weight("eta", self.eta)
    }
}

#[derive(Debug, Clone)]
pub struct JnkmState {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    pub d: DiagScaling,
    pub z: DenseMatrix,
    pub m: Centroids,
    pub s: Assignment,
    pub cost_trace: Vec<f64>,
    pub info: SolveInfo,
}

impl JnkmState {
    /// Builds a state from nonnegative factors `X ≈ W·H0`: the columns of
    /// `H0` are normalized and their norms moved into `D`, so `W·H·D`
    /// equals `W·H0`. `S` starts from `labels` and `M` from the matching
    /// centroids of the normalized columns.
    pub fn from_factors(w: DenseMatrix, h0: &DenseMatrix, labels: Assignment) -> Result<Self> {
        if w.ncols() != h0.nrows() {
            return Err(dim_err(
                "JnkmState::from_factors",
                format!("W has {} columns, H has {} rows", w.ncols(), h0.nrows()),
            ));
        }
        let scales: Vec<f64> = h0
            .column_iter()
            .map(|c| {
                let n = c.norm();
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        let mut h = h0.clone();
        for (j, mut col) in h.column_iter_mut().enumerate() {
            col /= scales[j];
        }
        let d = DiagScaling::new(scales)?;
        let z = unit_columns(&h);
        if labels.len() != h.ncols() {
            return Err(dim_err(
                "JnkmState::from_factors",
                format!("{} labels for {} columns", labels.len(), h.ncols()),
            ));
        }
        let m = kmeans_centroids(&h, &labels, labels.k())?;
        Ok(Self {
            w,
            h,
            d,
            z,
            m,
            s: labels,
            cost_trace: Vec::new(),
            info: SolveInfo::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum JnkmInit {
    /// The NMF-KM solution from a seeded start, then [`JnkmState::from_factors`].
    Nmf {
        seed: u64,
    },
    Factors {
        w: DenseMatrix,
        h: DenseMatrix,
        labels: Assignment,
    },
    State(Box<JnkmState>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JnkmBlock {
    H,
    W,
    D,
    Z,
    M,
    S,
}

fn check_state(state: &JnkmState, x: &DenseMatrix, params: &JnkmParams) -> Result<()> {
    let (i, j) = x.shape();
    let f = params.f;
    let ok = state.w.shape() == (i, f)
        && state.h.shape() == (f, j)
        && state.z.shape() == (f, j)
        && state.d.len() == j
        && state.m.matrix().shape() == (f, params.k)
        && state.s.len() == j
        && state.s.k() == params.k;
    if ok {
        Ok(())
    } else {
        Err(dim_err(
            "jnkm",
            format!(
                "state does not match X {i}×{j} with F = {f}, K = {}",
                params.k
            ),
        ))
    }
}

/// The split objective, evaluated term by term.
pub fn jnkm_cost(state: &JnkmState, x: &DenseMatrix, params: &JnkmParams) -> Result<f64> {
    check_state(state, x, params)?;
    Ok(cost(state, x, params))
}

fn cost(state: &JnkmState, x: &DenseMatrix, params: &JnkmParams) -> f64 {
    let fit = crate::linalg::frob2_diff(x, &state.d.scale_columns(&(&state.w * &state.h)));
    let mut total = fit;
    if params.lambda > 0.0 {
        total += params.lambda * crate::clustering::kmeans_cost(&state.h, &state.m, &state.s);
    }
    if params.eta > 0.0 {
        total += params.eta * frob2(&state.w);
    }
    if params.mu > 0.0 {
        total += params.mu * crate::linalg::frob2_diff(&state.h, &state.z);
    }
    total
}

#[derive(Clone)]
struct Jnkm<'a> {
    x: &'a DenseMatrix,
    params: &'a JnkmParams,
    state: JnkmState,
}

impl BlockProblem for Jnkm<'_> {
    type Block = JnkmBlock;
    const BLOCKS: &'static [JnkmBlock] = &[
        JnkmBlock::H,
        JnkmBlock::W,
        JnkmBlock::D,
        JnkmBlock::Z,
        JnkmBlock::M,
        JnkmBlock::S,
    ];

    fn cost(&self) -> f64 {
        cost(&self.state, self.x, self.params)
    }

    fn update(&mut self, block: JnkmBlock) -> Result<bool> {
        update(&mut self.state, self.x, self.params, block)
    }
}

fn update(
    state: &mut JnkmState,
    x: &DenseMatrix,
    p: &JnkmParams,
    block: JnkmBlock,
) -> Result<bool> {
    let f = p.f;
    match block {
        JnkmBlock::H => {
            // column j: min_h ‖x_j − d_j·W·h‖² + λ‖h − m_{s_j}‖² + μ‖h − z_j‖²
            let wtw = state.w.tr_mul(&state.w);
            let wtx = state.w.tr_mul(x);
            let ridge = p.lambda + p.mu;
            let mut all_ok = true;
            for j in 0..x.ncols() {
                let dj = state.d.get(j);
                let mut q = &wtw * (dj * dj);
                for a in 0..f {
                    q[(a, a)] += ridge;
                }
                let mut r: DVector<f64> = wtx.column(j) * dj;
                if p.lambda > 0.0 {
                    r.axpy(p.lambda, &state.m.matrix().column(state.s.label(j)), 1.0);
                }
                if p.mu > 0.0 {
                    r.axpy(p.mu, &state.z.column(j), 1.0);
                }
                let warm = DenseMatrix::from_column_slice(f, 1, state.h.column(j).as_slice());
                let r = DenseMatrix::from_column_slice(f, 1, r.as_slice());
                let sol = nls_gram(&q, &r, Some(&warm), &p.nls)?;
                all_ok &= sol.converged();
                state.h.set_column(j, &sol.x.column(0));
            }
            Ok(all_ok)
        }
        JnkmBlock::W => {
            let hd = state.d.scale_columns(&state.h);
            let mut q = &hd * hd.transpose();
            for a in 0..f {
                q[(a, a)] += p.eta;
            }
            let r = &hd * x.transpose();
            let sol = nls_gram(&q, &r, Some(&state.w.transpose()), &p.nls)?;
            state.w = sol.x.transpose();
            Ok(sol.converged())
        }
        JnkmBlock::D => {
            let b = &state.w * &state.h;
            for j in 0..x.ncols() {
                let bb = b.column(j).norm_squared();
                let dj = if bb < D_GUARD {
                    1.0
                } else {
                    b.column(j).dot(&x.column(j)) / bb
                };
                state.d.set(j, dj);
            }
            Ok(true)
        }
        JnkmBlock::Z => {
            state.z = unit_columns(&state.h);
            Ok(true)
        }
        JnkmBlock::M => {
            state.m = kmeans_centroids(&state.h, &state.s, p.k)?;
            Ok(true)
        }
        JnkmBlock::S => {
            state.s = kmeans_assign(&state.h, &state.m)?;
            Ok(true)
        }
    }
}

/// Applies a single block update; every other block is left untouched.
pub fn jnkm_step_block(
    state: &JnkmState,
    x: &DenseMatrix,
    params: &JnkmParams,
    block: JnkmBlock,
) -> Result<JnkmState> {
    params.validate(x.ncols())?;
    check_state(state, x, params)?;
    let mut next = state.clone();
    if !update(&mut next, x, params, block)? {
        next.info.unconverged_subproblems += 1;
    }
    Ok(next)
}

pub fn jnkm_solve(x: &DenseMatrix, params: &JnkmParams, init: JnkmInit) -> Result<JnkmState> {
    ensure_finite(x, "X")?;
    params.validate(x.ncols())?;
    let state = match init {
        JnkmInit::Nmf { seed } => {
            let opts = TwoStageOptions {
                nmf: NmfOptions {
                    seed,
                    nls: params.nls,
                    ..Default::default()
                },
                seed,
                ..Default::default()
            };
            let two = nmf_km(x, params.f, params.k, &opts)?;
            let mut s = JnkmState::from_factors(two.w, &two.h, two.assignment)?;
            s.info.unconverged_subproblems += two.info.unconverged_subproblems;
            s
        }
        JnkmInit::Factors { w, h, labels } => {
            if labels.k() != params.k {
                return Err(Error::Argument(format!(
                    "initial labels have K = {}, expected {}",
                    labels.k(),
                    params.k
                )));
            }
            JnkmState::from_factors(w, &h, labels)?
        }
        JnkmInit::State(s) => *s,
    };
    check_state(&state, x, params)?;
    if state.w.iter().chain(state.h.iter()).any(|v| *v < 0.0) {
        return Err(Error::Argument(
            "initial W and H must be nonnegative".into(),
        ));
    }
    let mut problem = Jnkm { x, params, state };
    let report = bcd::run(
        &mut problem,
        &BcdOptions {
            max_outer: params.max_outer,
            tol: params.tol,
            schedule: params.schedule,
        },
    )?;
    let mut state = problem.state;
    state.info.absorb(&report);
    state.cost_trace = report.cost_trace;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn uniform(rows: usize, cols: usize, rng: &mut rng::Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    fn random_state(i: usize, j: usize, f: usize, k: usize, seed: u64) -> (DenseMatrix, JnkmState) {
        let mut rng = rng::stream(seed, &[]);
        let x = uniform(i, j, &mut rng);
        let h = uniform(f, j, &mut rng);
        let state = JnkmState {
            w: uniform(i, f, &mut rng),
            z: unit_columns(&uniform(f, j, &mut rng)),
            d: DiagScaling::new((0..j).map(|_| 0.5 + rng.random::<f64>()).collect()).unwrap(),
            m: Centroids(uniform(f, k, &mut rng)),
            s: Assignment::new((0..j).map(|_| rng.random_range(0..k)).collect(), k).unwrap(),
            h,
            cost_trace: vec![],
            info: SolveInfo::default(),
        };
        (x, state)
    }

    fn params(f: usize, k: usize) -> JnkmParams {
        JnkmParams {
            lambda: 0.7,
            mu: 3.0,
            eta: 0.2,
            ..JnkmParams::new(f, k)
        }
    }

    #[test]
    fn exact_model_costs_zero() {
        let mut rng = rng::stream(1, &[]);
        let (f, k, j) = (2, 2, 6);
        let m = Centroids(unit_columns(&uniform(f, k, &mut rng)));
        let s = Assignment::tiled(j, k);
        let h = m.expand(&s);
        let w = uniform(5, f, &mut rng);
        let d = DiagScaling::new(vec![1.0, 2.0, 0.5, 1.5, 3.0, 1.0]).unwrap();
        let x = d.scale_columns(&(&w * &h));
        let state = JnkmState {
            w,
            z: h.clone(),
            h,
            d,
            m,
            s,
            cost_trace: vec![],
            info: SolveInfo::default(),
        };
        let p = JnkmParams {
            eta: 0.0,
            ..JnkmParams::new(f, k)
        };
        assert!(jnkm_cost(&state, &x, &p).unwrap() < 1e-24);
    }

    #[test]
    fn penalties_off_is_plain_residual() {
        let (x, st) = random_state(5, 8, 2, 3, 2);
        let p = JnkmParams {
            lambda: 0.0,
            mu: 0.0,
            eta: 0.0,
            ..JnkmParams::new(2, 3)
        };
        let direct = crate::linalg::frob2_diff(
            &x,
            &(&st.w
                * &st.h
                * DenseMatrix::from_diagonal(&DVector::from_vec(st.d.values().to_vec()))),
        );
        assert!((jnkm_cost(&st, &x, &p).unwrap() - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn cost_matches_scalar_loops() {
        let (x, st) = random_state(6, 9, 3, 2, 3);
        let p = params(3, 2);
        let (i, j, f) = (6, 9, 3);
        let mut fit = 0.0;
        for a in 0..i {
            for b in 0..j {
                let mut v = 0.0;
                for c in 0..f {
                    v += st.w[(a, c)] * st.h[(c, b)];
                }
                fit += (x[(a, b)] - v * st.d.get(b)).powi(2);
            }
        }
        let mut clus = 0.0;
        let mut split = 0.0;
        for b in 0..j {
            for c in 0..f {
                clus += (st.h[(c, b)] - st.m.0[(c, st.s.label(b))]).powi(2);
                split += (st.h[(c, b)] - st.z[(c, b)]).powi(2);
            }
        }
        let wn: f64 = st.w.iter().map(|v| v * v).sum();
        let oracle = fit + p.lambda * clus + p.eta * wn + p.mu * split;
        let got = jnkm_cost(&st, &x, &p).unwrap();
        assert!((got - oracle).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn d_block_recovers_uniform_scale() {
        let (_, mut st) = random_state(5, 7, 2, 2, 4);
        st.d = DiagScaling::ones(7);
        let x = &st.w * &st.h * 2.0;
        let next = jnkm_step_block(&st, &x, &params(2, 2), JnkmBlock::D).unwrap();
        for v in next.d.values() {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn z_block_normalizes_h_columns() {
        let (x, mut st) = random_state(5, 7, 3, 2, 5);
        st.h.column_mut(3).fill(0.0);
        let next = jnkm_step_block(&st, &x, &params(3, 2), JnkmBlock::Z).unwrap();
        for j in 0..7 {
            assert!((next.z.column(j).norm() - 1.0).abs() < 1e-12);
        }
        assert_eq!(next.z.column(3).as_slice(), &[1.0, 0.0, 0.0]);
        let h1 = st.h.column(1);
        assert!((next.z.column(1) - h1 / h1.norm()).norm() < 1e-15);
    }

    #[test]
    fn every_block_is_a_descent_step_touching_only_itself() {
        for seed in 0..5 {
            let (x, st) = random_state(7, 12, 3, 3, 10 + seed);
            let p = params(3, 3);
            let before = jnkm_cost(&st, &x, &p).unwrap();
            for &b in Jnkm::BLOCKS {
                let next = jnkm_step_block(&st, &x, &p, b).unwrap();
                let after = jnkm_cost(&next, &x, &p).unwrap();
                assert!(
                    after <= before + 1e-12 * before.max(1.0),
                    "{b:?}: {before} -> {after}"
                );
                if b != JnkmBlock::H {
                    assert_eq!(next.h, st.h);
                }
                if b != JnkmBlock::W {
                    assert_eq!(next.w, st.w);
                }
                if b != JnkmBlock::D {
                    assert_eq!(next.d, st.d);
                }
                if b != JnkmBlock::Z {
                    assert_eq!(next.z, st.z);
                }
                if b != JnkmBlock::M {
                    assert_eq!(next.m, st.m);
                }
                if b != JnkmBlock::S {
                    assert_eq!(next.s, st.s);
                }
            }
        }
    }

    #[test]
    fn d_update_is_the_exact_one_dimensional_minimizer() {
        let (x, st) = random_state(6, 8, 2, 2, 6);
        let p = params(2, 2);
        let next = jnkm_step_block(&st, &x, &p, JnkmBlock::D).unwrap();
        let base = jnkm_cost(&next, &x, &p).unwrap();
        for j in 0..8 {
            for delta in [-1e-4, 1e-4] {
                let mut moved = next.clone();
                moved.d.set(j, next.d.get(j) + delta);
                assert!(jnkm_cost(&moved, &x, &p).unwrap() >= base);
            }
        }
    }

    #[test]
    fn solve_is_monotone_for_both_schedules() {
        for schedule in [Schedule::Cyclic, Schedule::Mbi] {
            for seed in 0..3 {
                let (x, st) = random_state(8, 20, 3, 3, 40 + seed);
                let p = JnkmParams {
                    schedule,
                    max_outer: 15,
                    ..params(3, 3)
                };
                let out = jnkm_solve(&x, &p, JnkmInit::State(Box::new(st))).unwrap();
                for w in out.cost_trace.windows(2) {
                    assert!(
                        w[1] <= w[0] * (1.0 + 1e-9),
                        "{schedule:?}: {} -> {}",
                        w[0],
                        w[1]
                    );
                }
                for j in 0..20 {
                    assert!((out.z.column(j).norm() - 1.0).abs() < 1e-10);
                }
            }
        }
    }
}
