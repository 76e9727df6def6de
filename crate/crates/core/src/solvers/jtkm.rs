//! Joint nonnegative PARAFAC and K-means on the rows of the first factor.
//!
//! Minimizes
//! `‖X₍₁₎ − (C ⊙ B)·(D·A)ᵀ‖² + λ‖Aᵀ − M·S‖² + η·R(B, C) + μ‖A − Z‖²`
//! over `A, B, C ≥ 0`, a positive diagonal `D` scaling the rows of `A`, and
//! `Z` with unit rows. `R` is either `‖B‖² + ‖C‖²` or `‖B‖₁ + ‖C‖₁`.

use serde::{Deserialize, Serialize};

use super::{check_counts, check_weight, unit_columns, SolveInfo};
use crate::bcd::{self, BcdOptions, BlockProblem, Schedule};
use crate::clustering::{
    kmeans_assign, kmeans_centroids, kmeans_cost, kmeans_lloyd, Assignment, Centroids, KmeansInit,
};
use crate::error::{dim_err, Error, Result};
use crate::linalg::{
    frob2, frob2_diff, khatri_rao, nls_gram, DenseMatrix, DiagScaling, Mode, NlsOptions, Tensor3,
};
use crate::rng;

/// Below this `‖b_i‖²` the scale `d_i` is undetermined and reset to 1.
const D_GUARD: f64 = 1e-15;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    #[default]
    Fro,
    L1,
}

impl Regularizer {
    fn value(self, m: &DenseMatrix) -> f64 {
        match self {
            Regularizer::Fro => frob2(m),
            Regularizer::L1 => m.iter().map(|v| v.abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JtkmParams {
    pub f: usize,
    pub k: usize,
    pub lambda: f64,
    pub eta: f64,
    pub mu: f64,
    pub reg: Regularizer,
    pub max_outer: usize,
    pub tol: f64,
    pub schedule: Schedule,
    pub nls: NlsOptions,
}

impl Default for JtkmParams {
    fn default() -> Self {
        Self {
            f: 0,
            k: 0,
            lambda: 1.0,
            eta: 0.1,
            mu: 100.0,
            reg: Regularizer::Fro,
            max_outer: 200,
            tol: 1e-6,
            schedule: Schedule::Cyclic,
            nls: NlsOptions::default(),
        }
    }
}

impl JtkmParams {
    pub fn new(f: usize, k: usize) -> Self {
        Self {
            f,
            k,
            ..Default::default()
        }
    }

    fn validate(&self, rows: usize) -> Result<()> {
        check_counts(self.f, self.k, rows)?;
        check_weight("lambda", self.lambda)?;
        check_weight("eta", self.eta)?;
        check_weight("mu", self.mu)
    }
}

#[derive(Debug, Clone)]
pub struct JtkmState {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
    /// Scales the rows of `A`.
    pub d: DiagScaling,
    /// `I × F`, unit rows.
    pub z: DenseMatrix,
    /// `F × K`; centroid `k` is a prototype row of `A`, stored as a column.
    pub m: Centroids,
    /// One label per row of `A`.
    pub s: Assignment,
    pub cost_trace: Vec<f64>,
    pub info: SolveInfo,
}

#[derive(Debug, Clone)]
pub enum JtkmInit {
    /// Regularized NTF from a seeded start, then [`JtkmState::from_factors`]
    /// with the NTF-KM labels.
    Ntf {
        seed: u64,
    },
    State(Box<JtkmState>),
}

impl JtkmState {
    /// Moves the row norms of `A` into `D`, so `D·A` is unchanged; `M`
    /// holds the centroids of the normalized rows under `labels`.
    pub fn from_factors(
        a: &DenseMatrix,
        b: DenseMatrix,
        c: DenseMatrix,
        labels: Assignment,
    ) -> Result<Self> {
        if labels.len() != a.nrows() {
            return Err(dim_err(
                "JtkmState::from_factors",
                format!("{} labels for {} rows", labels.len(), a.nrows()),
            ));
        }
        let scales: Vec<f64> = a
            .row_iter()
            .map(|r| {
                let n = r.norm();
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        let d = DiagScaling::new(scales)?;
        let mut unit = a.clone();
        for (i, mut row) in unit.row_iter_mut().enumerate() {
            row /= d.get(i);
        }
        let m = kmeans_centroids(&unit.transpose(), &labels, labels.k())?;
        Ok(Self {
            z: unit_rows(&unit),
            a: unit,
            b,
            c,
            d,
            m,
            s: labels,
            cost_trace: Vec::new(),
            info: SolveInfo::default(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JtkmBlock {
    A,
    B,
    C,
    D,
    Z,
    M,
    S,
}

fn unit_rows(a: &DenseMatrix) -> DenseMatrix {
    unit_columns(&a.transpose()).transpose()
}

fn check_state(state: &JtkmState, t: &Tensor3, params: &JtkmParams) -> Result<()> {
    let (i, j, l) = t.dims();
    let f = params.f;
    let ok = state.a.shape() == (i, f)
        && state.b.shape() == (j, f)
        && state.c.shape() == (l, f)
        && state.z.shape() == (i, f)
        && state.d.len() == i
        && state.m.matrix().shape() == (f, params.k)
        && state.s.len() == i
        && state.s.k() == params.k;
    if ok {
        Ok(())
    } else {
        Err(dim_err(
            "jtkm",
            format!(
                "state does not match tensor {i}×{j}×{l} with F = {f}, K = {}",
                params.k
            ),
        ))
    }
}

pub fn jtkm_cost(state: &JtkmState, t: &Tensor3, params: &JtkmParams) -> Result<f64> {
    check_state(state, t, params)?;
    Ok(cost(state, &Unfoldings::new(t), params))
}

fn cost(state: &JtkmState, x: &Unfoldings, p: &JtkmParams) -> f64 {
    let da = state.d.scale_rows(&state.a);
    let mut total = fit(x, &da, &state.b, &state.c);
    if p.lambda > 0.0 {
        total += p.lambda * kmeans_cost(&state.a.transpose(), &state.m, &state.s);
    }
    if p.eta > 0.0 {
        total += p.eta * (p.reg.value(&state.b) + p.reg.value(&state.c));
    }
    if p.mu > 0.0 {
        total += p.mu * frob2_diff(&state.a, &state.z);
    }
    total
}

fn fit(x: &Unfoldings, a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> f64 {
    let kr = khatri_rao(c, b).expect("factor ranks agree");
    frob2_diff(&x.one, &(kr * a.transpose()))
}

/// The three matrix unfoldings, computed once per solve.
struct Unfoldings {
    one: DenseMatrix,
    two: DenseMatrix,
    three: DenseMatrix,
}

impl Unfoldings {
    fn new(t: &Tensor3) -> Self {
        Self {
            one: t.unfold(Mode::One),
            two: t.unfold(Mode::Two),
            three: t.unfold(Mode::Three),
        }
    }
}

/// `min_{Y ≥ 0} ‖X₍ₙ₎ − (P ⊙ Q)·Yᵀ‖² + η·R(Y)` via its Gram form, where
/// `(P ⊙ Q)ᵀ(P ⊙ Q) = (PᵀP) ∘ (QᵀQ)`.
fn factor_step(
    unfolded: &DenseMatrix,
    p: &DenseMatrix,
    q: &DenseMatrix,
    current: &DenseMatrix,
    eta: f64,
    reg: Regularizer,
    nls: &NlsOptions,
) -> Result<(DenseMatrix, bool)> {
    let f = p.ncols();
    let mut gram = p.tr_mul(p).component_mul(&q.tr_mul(q));
    let mut opts = *nls;
    match reg {
        Regularizer::Fro => {
            for a in 0..f {
                gram[(a, a)] += eta;
            }
        }
        Regularizer::L1 => opts.l1 = eta,
    }
    let kr = khatri_rao(p, q)?;
    let r = kr.tr_mul(unfolded);
    let sol = nls_gram(&gram, &r, Some(&current.transpose()), &opts)?;
    let ok = sol.converged();
    Ok((sol.x.transpose(), ok))
}

#[derive(Clone)]
struct Jtkm<'a> {
    x: &'a Unfoldings,
    params: &'a JtkmParams,
    state: JtkmState,
}

impl BlockProblem for Jtkm<'_> {
    type Block = JtkmBlock;
    const BLOCKS: &'static [JtkmBlock] = &[
        JtkmBlock::A,
        JtkmBlock::B,
        JtkmBlock::C,
        JtkmBlock::D,
        JtkmBlock::Z,
        JtkmBlock::M,
        JtkmBlock::S,
    ];

    fn cost(&self) -> f64 {
        cost(&self.state, self.x, self.params)
    }

    fn update(&mut self, block: JtkmBlock) -> Result<bool> {
        update(&mut self.state, self.x, self.params, block)
    }
}

fn update(state: &mut JtkmState, x: &Unfoldings, p: &JtkmParams, block: JtkmBlock) -> Result<bool> {
    let f = p.f;
    match block {
        JtkmBlock::A => {
            // row i: min_a ‖x_i − d_i·W·a‖² + λ‖a − m_{s_i}‖² + μ‖a − z_i‖², W = C ⊙ B
            let wtw = state
                .c
                .tr_mul(&state.c)
                .component_mul(&state.b.tr_mul(&state.b));
            let wtx = khatri_rao(&state.c, &state.b)?.tr_mul(&x.one);
            let mut all_ok = true;
            for i in 0..state.a.nrows() {
                let di = state.d.get(i);
                let mut q = &wtw * (di * di);
                for a in 0..f {
                    q[(a, a)] += p.lambda + p.mu;
                }
                let mut r = wtx.column(i) * di;
                if p.lambda > 0.0 {
                    r.axpy(p.lambda, &state.m.matrix().column(state.s.label(i)), 1.0);
                }
                if p.mu > 0.0 {
                    r += state.z.row(i).transpose() * p.mu;
                }
                let warm = DenseMatrix::from_iterator(f, 1, state.a.row(i).iter().copied());
                let r = DenseMatrix::from_column_slice(f, 1, r.as_slice());
                let sol = nls_gram(&q, &r, Some(&warm), &p.nls)?;
                all_ok &= sol.converged();
                state.a.set_row(i, &sol.x.column(0).transpose());
            }
            Ok(all_ok)
        }
        JtkmBlock::B => {
            let da = state.d.scale_rows(&state.a);
            let (b, ok) = factor_step(&x.two, &state.c, &da, &state.b, p.eta, p.reg, &p.nls)?;
            state.b = b;
            Ok(ok)
        }
        JtkmBlock::C => {
            let da = state.d.scale_rows(&state.a);
            let (c, ok) = factor_step(&x.three, &state.b, &da, &state.c, p.eta, p.reg, &p.nls)?;
            state.c = c;
            Ok(ok)
        }
        JtkmBlock::D => {
            let w = khatri_rao(&state.c, &state.b)?;
            let fitted = &w * state.a.transpose();
            for i in 0..state.a.nrows() {
                let bb = fitted.column(i).norm_squared();
                let di = if bb < D_GUARD {
                    1.0
                } else {
                    fitted.column(i).dot(&x.one.column(i)) / bb
                };
                state.d.set(i, di);
            }
            Ok(true)
        }
        JtkmBlock::Z => {
            state.z = unit_rows(&state.a);
            Ok(true)
        }
        JtkmBlock::M => {
            state.m = kmeans_centroids(&state.a.transpose(), &state.s, p.k)?;
            Ok(true)
        }
        JtkmBlock::S => {
            state.s = kmeans_assign(&state.a.transpose(), &state.m)?;
            Ok(true)
        }
    }
}

/// Applies a single block update; every other block is left untouched.
pub fn jtkm_step_block(
    state: &JtkmState,
    t: &Tensor3,
    params: &JtkmParams,
    block: JtkmBlock,
) -> Result<JtkmState> {
    params.validate(t.dims().0)?;
    check_state(state, t, params)?;
    let mut next = state.clone();
    if !update(&mut next, &Unfoldings::new(t), params, block)? {
        next.info.unconverged_subproblems += 1;
    }
    Ok(next)
}

fn check_tensor(t: &Tensor3) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(
            "tensor contains non-finite entries".into(),
        ))
    }
}

pub fn jtkm_solve(t: &Tensor3, params: &JtkmParams, init: JtkmInit) -> Result<JtkmState> {
    check_tensor(t)?;
    params.validate(t.dims().0)?;
    let state = match init {
        JtkmInit::Ntf { seed } => {
            let ntf = ntf_solve(
                t,
                params.f,
                params.eta,
                params.reg,
                &NtfOptions {
                    seed,
                    nls: params.nls,
                    ..Default::default()
                },
            )?;
            let labels = ntf_labels(&ntf, params.k, seed)?;
            let mut s = JtkmState::from_factors(&ntf.a, ntf.b, ntf.c, labels)?;
            s.info.unconverged_subproblems += ntf.info.unconverged_subproblems;
            s
        }
        JtkmInit::State(s) => *s,
    };
    check_state(&state, t, params)?;
    if state
        .a
        .iter()
        .chain(state.b.iter())
        .chain(state.c.iter())
        .any(|v| *v < 0.0)
    {
        return Err(Error::Argument(
            "initial factors must be nonnegative".into(),
        ));
    }
    let x = Unfoldings::new(t);
    let mut problem = Jtkm {
        x: &x,
        params,
        state,
    };
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NtfOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub nls: NlsOptions,
    pub seed: u64,
}

impl Default for NtfOptions {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-7,
            nls: NlsOptions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NtfResult {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
    pub cost_trace: Vec<f64>,
    pub info: SolveInfo,
}

/// Alternating nonnegative least squares for PARAFAC with `η·R` applied to
/// each factor. `B` and `C` start uniform on `[0, 1)`; `A` is solved first.
pub fn ntf_solve(
    t: &Tensor3,
    f: usize,
    eta: f64,
    reg: Regularizer,
    opts: &NtfOptions,
) -> Result<NtfResult> {
    if f == 0 {
        return Err(Error::Argument("rank F must be >= 1".into()));
    }
    check_weight("eta", eta)?;
    check_tensor(t)?;
    let (i, j, l) = t.dims();
    let mut rng = rng::stream(opts.seed, &[rng::label("ntf-init")]);
    use rand::Rng as _;
    let b = DenseMatrix::from_fn(j, f, |_, _| rng.random::<f64>());
    let c = DenseMatrix::from_fn(l, f, |_, _| rng.random::<f64>());
    ntf_from(t, DenseMatrix::zeros(i, f), b, c, [eta; 3], reg, opts)
}

/// Labels from one K-means++ run on the rows of `A`, after `B` and `C`
/// are rescaled to unit columns.
pub fn ntf_labels(ntf: &NtfResult, k: usize, seed: u64) -> Result<Assignment> {
    let a = scaled_a(ntf);
    Ok(kmeans_lloyd(&a.transpose(), k, KmeansInit::PlusPlus { seed }, 300)?.assignment)
}

/// `A` with the column norms of `B` and `C` moved into it.
pub fn scaled_a(ntf: &NtfResult) -> DenseMatrix {
    let mut a = ntf.a.clone();
    for f in 0..a.ncols() {
        a.column_mut(f)
            .scale_mut(ntf.b.column(f).norm() * ntf.c.column(f).norm());
    }
    a
}

#[derive(Clone)]
struct Ntf<'a> {
    x: &'a Unfoldings,
    weights: [f64; 3],
    reg: Regularizer,
    nls: &'a NlsOptions,
    a: DenseMatrix,
    b: DenseMatrix,
    c: DenseMatrix,
}

impl BlockProblem for Ntf<'_> {
    type Block = Mode;
    const BLOCKS: &'static [Mode] = &[Mode::One, Mode::Two, Mode::Three];

    fn cost(&self) -> f64 {
        fit(self.x, &self.a, &self.b, &self.c)
            + self.weights[0] * self.reg.value(&self.a)
            + self.weights[1] * self.reg.value(&self.b)
            + self.weights[2] * self.reg.value(&self.c)
    }

    fn update(&mut self, mode: Mode) -> Result<bool> {
        let (next, ok) = match mode {
            Mode::One => factor_step(
                &self.x.one,
                &self.c,
                &self.b,
                &self.a,
                self.weights[0],
                self.reg,
                self.nls,
            )?,
            Mode::Two => factor_step(
                &self.x.two,
                &self.c,
                &self.a,
                &self.b,
                self.weights[1],
                self.reg,
                self.nls,
            )?,
            Mode::Three => factor_step(
                &self.x.three,
                &self.b,
                &self.a,
                &self.c,
                self.weights[2],
                self.reg,
                self.nls,
            )?,
        };
        match mode {
            Mode::One => self.a = next,
            Mode::Two => self.b = next,
            Mode::Three => self.c = next,
        }
        Ok(ok)
    }
}

fn ntf_from(
    t: &Tensor3,
    a: DenseMatrix,
    b: DenseMatrix,
    c: DenseMatrix,
    weights: [f64; 3],
    reg: Regularizer,
    opts: &NtfOptions,
) -> Result<NtfResult> {
    let x = Unfoldings::new(t);
    let mut p = Ntf {
        x: &x,
        weights,
        reg,
        nls: &opts.nls,
        a,
        b,
        c,
    };
    let report = bcd::run(
        &mut p,
        &BcdOptions {
            max_outer: opts.max_iters,
            tol: opts.tol,
            schedule: Schedule::Cyclic,
        },
    )?;
    let mut info = SolveInfo::default();
    info.absorb(&report);
    Ok(NtfResult {
        a: p.a,
        b: p.b,
        c: p.c,
        cost_trace: report.cost_trace,
        info,
    })
}
