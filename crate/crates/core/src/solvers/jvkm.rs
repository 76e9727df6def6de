//! Joint volume-minimizing factorization and K-means.
//!
//! Minimizes
//! `‖X − W·H‖² + β·Tr(W·G·Wᵀ) + λ‖H − M·S‖²`
//! with `H` column-stochastic and `W` unconstrained, where `Tr(W·G·Wᵀ)` is
//! the sum of squared pairwise distances between the columns of `W`.

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::{check_counts, check_weight, SolveInfo};
use crate::bcd::{self, BcdOptions, BlockProblem, Schedule};
use crate::clustering::{
    kmeans_assign, kmeans_centroids, kmeans_cost, kmeans_lloyd, Assignment, Centroids, KmeansInit,
};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    ensure_finite, frob2_diff, ridge_volmin_w, simplex_ls_gram, volume_surrogate, DenseMatrix,
    NlsOptions,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JvkmParams {
    pub f: usize,
    pub k: usize,
    pub beta: f64,
    pub lambda: f64,
    pub max_outer: usize,
    pub tol: f64,
    pub schedule: Schedule,
    pub nls: NlsOptions,
    /// Volume-only iterations run from the random start before clustering.
    pub warmup_iters: usize,
}

impl Default for JvkmParams {
    fn default() -> Self {
        Self {
            f: 0,
            k: 0,
            beta: 0.1,
            lambda: 1.0,
            max_outer: 200,
            tol: 1e-6,
            schedule: Schedule::Cyclic,
            nls: NlsOptions::default(),
            warmup_iters: 50,
        }
    }
}

impl JvkmParams {
    pub fn new(f: usize, k: usize) -> Self {
        Self {
            f,
            k,
            ..Default::default()
        }
    }

    fn validate(&self, j: usize) -> Result<()> {
        check_counts(self.f, self.k, j)?;
        check_weight("beta", self.beta)?;
        check_weight("lambda", self.lambda)
    }
}

#[derive(Debug, Clone)]
pub struct JvkmState {
    pub w: DenseMatrix,
    /// `F × J`, every column on the unit simplex.
    pub h: DenseMatrix,
    pub m: Centroids,
    pub s: Assignment,
    pub cost_trace: Vec<f64>,
    pub info: SolveInfo,
}

#[derive(Debug, Clone)]
pub enum JvkmInit {
    /// Uniform-simplex `H`, `warmup_iters` volume-only sweeps, then one
    /// K-means++ run on `H`.
    Random {
        seed: u64,
    },
    State(Box<JvkmState>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JvkmBlock {
    W,
    H,
    M,
    S,
}

fn check_state(state: &JvkmState, x: &DenseMatrix, params: &JvkmParams) -> Result<()> {
    let (i, j) = x.shape();
    let f = params.f;
    let ok = state.w.shape() == (i, f)
        && state.h.shape() == (f, j)
        && state.m.matrix().shape() == (f, params.k)
        && state.s.len() == j
        && state.s.k() == params.k;
    if ok {
        Ok(())
    } else {
        Err(dim_err(
            "jvkm",
            format!(
                "state does not match X {i}×{j} with F = {f}, K = {}",
                params.k
            ),
        ))
    }
}

pub fn jvkm_cost(state: &JvkmState, x: &DenseMatrix, params: &JvkmParams) -> Result<f64> {
    check_state(state, x, params)?;
    Ok(cost(state, x, params))
}

fn cost(state: &JvkmState, x: &DenseMatrix, p: &JvkmParams) -> f64 {
    let mut total = frob2_diff(x, &(&state.w * &state.h));
    if p.beta > 0.0 {
        total += p.beta * volume_surrogate(&state.w);
    }
    if p.lambda > 0.0 {
        total += p.lambda * kmeans_cost(&state.h, &state.m, &state.s);
    }
    total
}

#[derive(Clone)]
struct Jvkm<'a> {
    x: &'a DenseMatrix,
    params: &'a JvkmParams,
    state: JvkmState,
}

impl BlockProblem for Jvkm<'_> {
    type Block = JvkmBlock;
    const BLOCKS: &'static [JvkmBlock] = &[JvkmBlock::W, JvkmBlock::H, JvkmBlock::M, JvkmBlock::S];

    fn cost(&self) -> f64 {
        cost(&self.state, self.x, self.params)
    }

    fn update(&mut self, block: JvkmBlock) -> Result<bool> {
        update(&mut self.state, self.x, self.params, block)
    }
}

fn update(
    state: &mut JvkmState,
    x: &DenseMatrix,
    p: &JvkmParams,
    block: JvkmBlock,
) -> Result<bool> {
    match block {
        JvkmBlock::W => {
            state.w = ridge_volmin_w(x, &state.h, p.beta)?;
            Ok(true)
        }
        JvkmBlock::H => {
            // column j: min_{h ∈ Δ} ‖x_j − W·h‖² + λ‖h − m_{s_j}‖²
            let mut q = state.w.tr_mul(&state.w);
            for a in 0..p.f {
                q[(a, a)] += p.lambda;
            }
            let mut r = state.w.tr_mul(x);
            if p.lambda > 0.0 {
                r += state.m.expand(&state.s) * p.lambda;
            }
            let sol = simplex_ls_gram(&q, &r, Some(&state.h), &p.nls)?;
            let ok = sol.converged();
            state.h = sol.x;
            Ok(ok)
        }
        // without the clustering term the centroid blocks are inert
        JvkmBlock::M if p.lambda > 0.0 => {
            state.m = kmeans_centroids(&state.h, &state.s, p.k)?;
            Ok(true)
        }
        JvkmBlock::S if p.lambda > 0.0 => {
            state.s = kmeans_assign(&state.h, &state.m)?;
            Ok(true)
        }
        JvkmBlock::M | JvkmBlock::S => Ok(true),
    }
}

/// Applies a single block update; every other block is left untouched.
pub fn jvkm_step_block(
    state: &JvkmState,
    x: &DenseMatrix,
    params: &JvkmParams,
    block: JvkmBlock,
) -> Result<JvkmState> {
    params.validate(x.ncols())?;
    check_state(state, x, params)?;
    let mut next = state.clone();
    if !update(&mut next, x, params, block)? {
        next.info.unconverged_subproblems += 1;
    }
    Ok(next)
}

fn run(
    x: &DenseMatrix,
    params: &JvkmParams,
    state: JvkmState,
    max_outer: usize,
) -> Result<JvkmState> {
    let mut problem = Jvkm { x, params, state };
    let report = bcd::run(
        &mut problem,
        &BcdOptions {
            max_outer,
            tol: params.tol,
            schedule: params.schedule,
        },
    )?;
    let mut state = problem.state;
    state.info.absorb(&report);
    state.cost_trace = report.cost_trace;
    Ok(state)
}

fn random_start(x: &DenseMatrix, params: &JvkmParams, seed: u64) -> Result<JvkmState> {
    let (f, j) = (params.f, x.ncols());
    let mut rng = rng::stream(seed, &[rng::label("jvkm-init")]);
    let mut h = DenseMatrix::zeros(f, j);
    for mut col in h.column_iter_mut() {
        for v in col.iter_mut() {
            *v = Exp1.sample(&mut rng);
        }
        let s = col.sum();
        col /= s;
    }
    let placeholder = Assignment::tiled(j, params.k);
    let warm = JvkmState {
        w: DenseMatrix::zeros(x.nrows(), f),
        m: kmeans_centroids(&h, &placeholder, params.k)?,
        s: placeholder,
        h,
        cost_trace: Vec::new(),
        info: SolveInfo::default(),
    };
    let volume_only = JvkmParams {
        lambda: 0.0,
        ..params.clone()
    };
    let mut state = run(x, &volume_only, warm, params.warmup_iters)?;
    let km = kmeans_lloyd(&state.h, params.k, KmeansInit::PlusPlus { seed }, 300)?;
    state.m = km.centroids;
    state.s = km.assignment;
    state.info.converged = false;
    Ok(state)
}

pub fn jvkm_solve(x: &DenseMatrix, params: &JvkmParams, init: JvkmInit) -> Result<JvkmState> {
    ensure_finite(x, "X")?;
    params.validate(x.ncols())?;
    let state = match init {
        JvkmInit::Random { seed } => random_start(x, params, seed)?,
        JvkmInit::State(s) => *s,
    };
    check_state(&state, x, params)?;
    if state
        .h
        .column_iter()
        .any(|c| c.iter().any(|v| *v < -1e-10) || (c.sum() - 1.0).abs() > 1e-8)
    {
        return Err(Error::Argument(
            "initial H must be column-stochastic".into(),
        ));
    }
    let info = state.info.clone();
    let mut out = run(x, params, state, params.max_outer)?;
    out.info.iterations += info.iterations;
    out.info.unconverged_subproblems += info.unconverged_subproblems;
    Ok(out)
}
