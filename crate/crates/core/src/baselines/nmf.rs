use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bcd::{self, BcdOptions, BlockProblem, Schedule};
use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, frob2, nls_gram, DenseMatrix, NlsOptions};
use crate::rng;
use crate::solvers::{check_weight, SolveInfo};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmfOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub nls: NlsOptions,
    /// Seeds the random nonnegative initial `W`.
    pub seed: u64,
}

impl Default for NmfOptions {
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
pub struct NmfResult {
    pub w: DenseMatrix,
    pub h: DenseMatrix,
    pub cost_trace: Vec<f64>,
    pub info: SolveInfo,
}

/// `‖X − WH‖²_F + μ(‖W‖²_F + ‖H‖²_F)`.
pub fn nmf_cost(x: &DenseMatrix, w: &DenseMatrix, h: &DenseMatrix, mu_balance: f64) -> f64 {
    let fit = crate::linalg::frob2_diff(x, &(w * h));
    if mu_balance > 0.0 {
        fit + mu_balance * (frob2(w) + frob2(h))
    } else {
        fit
    }
}

#[derive(Clone)]
struct Nmf<'a> {
    x: &'a DenseMatrix,
    mu: f64,
    nls: &'a NlsOptions,
    w: DenseMatrix,
    h: DenseMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    H,
    W,
    /// Exact rescaling of each `(W(:,f), H(f,:))` pair; only moves the
    /// balancing penalty.
    Balance,
}

impl BlockProblem for Nmf<'_> {
    type Block = Block;
    const BLOCKS: &'static [Block] = &[Block::H, Block::W, Block::Balance];

    fn cost(&self) -> f64 {
        nmf_cost(self.x, &self.w, &self.h, self.mu)
    }

    fn update(&mut self, block: Block) -> Result<bool> {
        let f = self.w.ncols();
        let ridge = DenseMatrix::identity(f, f) * self.mu;
        match block {
            Block::H => {
                let q = self.w.tr_mul(&self.w) + ridge;
                let r = self.w.tr_mul(self.x);
                let sol = nls_gram(&q, &r, Some(&self.h), self.nls)?;
                let ok = sol.converged();
                self.h = sol.x;
                Ok(ok)
            }
            Block::W => {
                let q = &self.h * self.h.transpose() + ridge;
                let r = &self.h * self.x.transpose();
                let sol = nls_gram(&q, &r, Some(&self.w.transpose()), self.nls)?;
                self.w = sol.x.transpose();
                Ok(sol.converged())
            }
            Block::Balance => {
                if self.mu > 0.0 {
                    for c in 0..f {
                        let a = self.w.column(c).norm();
                        let b = self.h.row(c).norm();
                        if a > 0.0 && b > 0.0 {
                            // μ(t²a² + b²/t²) is minimized at t² = b/a
                            let t = (b / a).sqrt();
                            self.w.column_mut(c).scale_mut(t);
                            self.h.row_mut(c).scale_mut(1.0 / t);
                        }
                    }
                }
                Ok(true)
            }
        }
    }
}

/// Alternating nonnegative least squares, optionally with the
/// norm-balancing penalty `μ(‖W‖² + ‖H‖²)`.
///
/// `W` starts uniform on `[0, 1)` from `opts.seed`; the first sweep solves
/// for `H` from there.
pub fn nmf_solve(
    x: &DenseMatrix,
    f: usize,
    mu_balance: f64,
    opts: &NmfOptions,
) -> Result<NmfResult> {
    if f == 0 {
        return Err(Error::Argument("rank F must be >= 1".into()));
    }
    check_weight("mu_balance", mu_balance)?;
    ensure_finite(x, "X")?;
    let mut rng = rng::stream(opts.seed, &[rng::label("nmf-init")]);
    let w = DenseMatrix::from_fn(x.nrows(), f, |_, _| rng.random::<f64>());
    nmf_from(x, w, DenseMatrix::zeros(f, x.ncols()), mu_balance, opts)
}

/// Rescales `W` to unit columns and moves the norms into the rows of `H`,
/// leaving `W·H` unchanged. Zero columns are left alone.
pub fn normalize_w(w: &mut DenseMatrix, h: &mut DenseMatrix) {
    for f in 0..w.ncols() {
        let n = w.column(f).norm();
        if n > 0.0 {
            w.column_mut(f).scale_mut(1.0 / n);
            h.row_mut(f).scale_mut(n);
        }
    }
}

pub(crate) fn nmf_from(
    x: &DenseMatrix,
    w: DenseMatrix,
    h: DenseMatrix,
    mu_balance: f64,
    opts: &NmfOptions,
) -> Result<NmfResult> {
    let mut p = Nmf {
        x,
        mu: mu_balance,
        nls: &opts.nls,
        w,
        h,
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
    Ok(NmfResult {
        w: p.w,
        h: p.h,
        cost_trace: report.cost_trace,
        info,
    })
}
