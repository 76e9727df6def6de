//! Joint NMF and K-subspace clustering.
//!
//! Minimizes
//! `‖X − W·H·D‖² + η‖W‖² + λ Σ_j ‖h_j − μ_{s_j} − U_{s_j}·θ_j‖²`
//! over `W, H ≥ 0`, cluster means `μ_k`, orthonormal bases `U_k`,
//! coordinates `θ_j` and labels `s_j`. With a split weight `μ_s`, the term
//! `μ_s‖H − Z‖²` with unit-norm columns `Z` is added and the scaling `D` is
//! optimized; otherwise `D = I` throughout.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_counts, check_weight, unit_columns, SolveInfo};
use crate::baselines::{nmf_km, NmfOptions, TwoStageOptions};
use crate::bcd::{self, BcdOptions, BlockProblem, Schedule};
use crate::clustering::{ksubspace_assign, ksubspace_fit_lenient, Assignment, SubspaceModel};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    ensure_finite, frob2, frob2_diff, nls_gram, DenseMatrix, DiagScaling, NlsOptions,
};

const D_GUARD: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JnksParams {
    pub f: usize,
    pub k: usize,
    /// Subspace dimension per cluster; empty means `F / K` each.
    pub ranks: Vec<usize>,
    pub lambda: f64,
    pub eta: f64,
    /// Weight of the unit-norm split; `None` leaves `H` unnormalized.
    pub mu_split: Option<f64>,
    pub max_outer: usize,
    pub tol: f64,
    pub schedule: Schedule,
    pub nls: NlsOptions,
}

impl Default for JnksParams {
    fn default() -> Self {
        Self {
            f: 0,
            k: 0,
            ranks: Vec::new(),
            lambda: 1.0,
            eta: 0.1,
            mu_split: None,
            max_outer: 200,
            tol: 1e-6,
            schedule: Schedule::Cyclic,
            nls: NlsOptions::default(),
        }
    }
}

impl JnksParams {
    pub fn new(f: usize, k: usize) -> Self {
        Self {
            f,
            k,
            ..Default::default()
        }
    }

    pub fn resolved_ranks(&self) -> Vec<usize> {
        if self.ranks.is_empty() {
            vec![(self.f / self.k.max(1)).max(1); self.k]
        } else {
            self.ranks.clone()
        }
    }

    fn validate(&self, j: usize) -> Result<()> {
        check_counts(self.f, self.k, j)?;
        check_weight("lambda", self.lambda)?;
        check_weight("eta", self.eta)?;
        if let Some(mu) = self.mu_split {
            check_weight("mu_split", mu)?;
        }
        let ranks = self.resolved_ranks();
        if ranks.len() != self.k {
            return Err(Error::Argument(format!(
                "{} subspace ranks given for K = {}",
                ranks.len(),
                self.k
            )));
        }
        if let Some(r) = ranks.iter().find(|&&r| r > self.f) {
            return Err(Error::Argument(format!(
                "subspace rank {r} exceeds F = {}",
                self.f
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct JnksState {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    /// All ones unless the split is enabled.
    pub d: DiagScaling,
    /// Unit-norm split variable; unused without the split.
    pub z: DenseMatrix,
    pub model: SubspaceModel,
    /// Coordinates of each column in its cluster's basis.
    pub theta: Vec<DVector<f64>>,
    pub s: Assignment,
    pub cost_trace: Vec<f64>,
    pub info: SolveInfo,
}

impl JnksState {
    /// Fits subspaces to `h` under `labels`. With `split`, the column norms
    /// of `h` move into `D` first so that `W·H·D` is unchanged.
    pub fn from_factors(
        w: DenseMatrix,
        h: &DenseMatrix,
        labels: Assignment,
        ranks: &[usize],
        split: bool,
    ) -> Result<Self> {
        if labels.len() != h.ncols() {
            return Err(dim_err(
                "JnksState::from_factors",
                format!("{} labels for {} columns", labels.len(), h.ncols()),
            ));
        }
        let mut h = h.clone();
        let mut d = DiagScaling::ones(h.ncols());
        if split {
            for (j, mut col) in h.column_iter_mut().enumerate() {
                let n = col.norm();
                if n > 0.0 {
                    col /= n;
                    d.set(j, n);
                }
            }
        }
        let (model, degenerate) = ksubspace_fit_lenient(&h, &labels, ranks)?;
        let theta = coordinates(&h, &labels, &model);
        Ok(Self {
            w,
            z: unit_columns(&h),
            h,
            d,
            model,
            theta,
            s: labels,
            cost_trace: Vec::new(),
            info: SolveInfo {
                degenerate_clusters: degenerate.len(),
                ..SolveInfo::default()
            },
        })
    }
}

#[derive(Debug, Clone)]
pub enum JnksInit {
    /// The NMF-KM solution from a seeded start, then [`JnksState::from_factors`].
    Nmf {
        seed: u64,
    },
    State(Box<JnksState>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JnksBlock {
    H,
    W,
    D,
    Z,
    Subspaces,
    Assign,
}

fn coordinates(h: &DenseMatrix, s: &Assignment, model: &SubspaceModel) -> Vec<DVector<f64>> {
    (0..h.ncols())
        .map(|j| model.project(s.label(j), &h.column(j).into_owned()))
        .collect()
}

fn check_state(state: &JnksState, x: &DenseMatrix, params: &JnksParams) -> Result<()> {
    let (i, j) = x.shape();
    let f = params.f;
    let ranks = params.resolved_ranks();
    let ok = state.w.shape() == (i, f)
        && state.h.shape() == (f, j)
        && state.z.shape() == (f, j)
        && state.d.len() == j
        && state.s.len() == j
        && state.s.k() == params.k
        && state.model.k() == params.k
        && state.model.dim() == f
        && state.model.ranks == ranks
        && state.theta.len() == j
        && (0..j).all(|c| state.theta[c].len() == ranks[state.s.label(c)]);
    if ok {
        Ok(())
    } else {
        Err(dim_err(
            "jnks",
            format!("state does not match X {i}×{j} with F = {f}, ranks {ranks:?}"),
        ))
    }
}

pub fn jnks_cost(state: &JnksState, x: &DenseMatrix, params: &JnksParams) -> Result<f64> {
    check_state(state, x, params)?;
    Ok(cost(state, x, params))
}

/// `Σ_j ‖h_j − μ_{s_j} − U_{s_j}·θ_j‖²` at the stored coordinates.
fn subspace_penalty(state: &JnksState) -> f64 {
    (0..state.h.ncols())
        .map(|j| {
            let k = state.s.label(j);
            state
                .model
                .residual(k, &state.h.column(j).into_owned(), &state.theta[j])
                .norm_squared()
        })
        .sum()
}

fn cost(state: &JnksState, x: &DenseMatrix, p: &JnksParams) -> f64 {
    let mut total = frob2_diff(x, &state.d.scale_columns(&(&state.w * &state.h)));
    if p.eta > 0.0 {
        total += p.eta * frob2(&state.w);
    }
    if p.lambda > 0.0 {
        total += p.lambda * subspace_penalty(state);
    }
    if let Some(mu) = p.mu_split.filter(|m| *m > 0.0) {
        total += mu * frob2_diff(&state.h, &state.z);
    }
    total
}

#[derive(Clone)]
struct Jnks<'a> {
    x: &'a DenseMatrix,
    params: &'a JnksParams,
    state: JnksState,
}

impl BlockProblem for Jnks<'_> {
    type Block = JnksBlock;
    const BLOCKS: &'static [JnksBlock] = &[
        JnksBlock::H,
        JnksBlock::W,
        JnksBlock::D,
        JnksBlock::Z,
        JnksBlock::Subspaces,
        JnksBlock::Assign,
    ];

    fn cost(&self) -> f64 {
        cost(&self.state, self.x, self.params)
    }

    fn update(&mut self, block: JnksBlock) -> Result<bool> {
        update(&mut self.state, self.x, self.params, block)
    }
}

fn update(
    state: &mut JnksState,
    x: &DenseMatrix,
    p: &JnksParams,
    block: JnksBlock,
) -> Result<bool> {
    let f = p.f;
    let split = p.mu_split.unwrap_or(0.0);
    match block {
        JnksBlock::H => {
            // column j: min_h ‖x_j − d_j·W·h‖² + λ‖h − μ_k − U_k·θ_j‖² + μ_s‖h − z_j‖²
            let wtw = state.w.tr_mul(&state.w);
            let wtx = state.w.tr_mul(x);
            let mut all_ok = true;
            for j in 0..x.ncols() {
                let dj = state.d.get(j);
                let mut q = &wtw * (dj * dj);
                for a in 0..f {
                    q[(a, a)] += p.lambda + split;
                }
                let mut r: DVector<f64> = wtx.column(j) * dj;
                if p.lambda > 0.0 {
                    let k = state.s.label(j);
                    let target = &state.model.means[k] + &state.model.bases[k] * &state.theta[j];
                    r.axpy(p.lambda, &target, 1.0);
                }
                if split > 0.0 {
                    r.axpy(split, &state.z.column(j), 1.0);
                }
                let warm = DenseMatrix::from_column_slice(f, 1, state.h.column(j).as_slice());
                let r = DenseMatrix::from_column_slice(f, 1, r.as_slice());
                let sol = nls_gram(&q, &r, Some(&warm), &p.nls)?;
                all_ok &= sol.converged();
                state.h.set_column(j, &sol.x.column(0));
            }
            Ok(all_ok)
        }
        JnksBlock::W => {
            let hd = state.d.scale_columns(&state.h);
            let mut q = &hd * hd.transpose();
            for a in 0..f {
                q[(a, a)] += p.eta;
            }
            let r = &hd * x.transpose();
            let sol = nls_gram(&q, &r, Some(&state.w.transpose()), &p.nls)?;
            let ok = sol.converged();
            state.w = sol.x.transpose();
            Ok(ok)
        }
        // without the split, D stays at the identity and Z is unused
        JnksBlock::D if p.mu_split.is_some() => {
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
        JnksBlock::Z if p.mu_split.is_some() => {
            state.z = unit_columns(&state.h);
            Ok(true)
        }
        JnksBlock::D | JnksBlock::Z => Ok(true),
        JnksBlock::Subspaces => {
            let (model, degenerate) =
                ksubspace_fit_lenient(&state.h, &state.s, &state.model.ranks)?;
            state.theta = coordinates(&state.h, &state.s, &model);
            state.model = model;
            state.info.degenerate_clusters = state.info.degenerate_clusters.max(degenerate.len());
            Ok(true)
        }
        JnksBlock::Assign => {
            state.s = ksubspace_assign(&state.h, &state.model)?;
            state.theta = coordinates(&state.h, &state.s, &state.model);
            Ok(true)
        }
    }
}

/// Applies a single block update; every other block is left untouched.
pub fn jnks_step_block(
    state: &JnksState,
    x: &DenseMatrix,
    params: &JnksParams,
    block: JnksBlock,
) -> Result<JnksState> {
    params.validate(x.ncols())?;
    check_state(state, x, params)?;
    let mut next = state.clone();
    if !update(&mut next, x, params, block)? {
        next.info.unconverged_subproblems += 1;
    }
    Ok(next)
}

pub fn jnks_solve(x: &DenseMatrix, params: &JnksParams, init: JnksInit) -> Result<JnksState> {
    ensure_finite(x, "X")?;
    params.validate(x.ncols())?;
    let state = match init {
        JnksInit::Nmf { seed } => {
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
            let mut s = JnksState::from_factors(
                two.w,
                &two.h,
                two.assignment,
                &params.resolved_ranks(),
                params.mu_split.is_some(),
            )?;
            s.info.unconverged_subproblems += two.info.unconverged_subproblems;
            s
        }
        JnksInit::State(s) => *s,
    };
    check_state(&state, x, params)?;
    if state.w.iter().chain(state.h.iter()).any(|v| *v < 0.0) {
        return Err(Error::Argument(
            "initial W and H must be nonnegative".into(),
        ));
    }
    let mut problem = Jnks { x, params, state };
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
