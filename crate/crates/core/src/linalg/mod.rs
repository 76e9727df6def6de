//! Dense matrix and three-way tensor primitives, plus the constrained
//! least-squares subsolvers shared by every solver in the crate.

mod nls;
mod tensor;

pub use nls::{
    nls_gram, nls_solve, nls_solve_warm, simplex_ls_gram, simplex_ls_solve, NlsOptions,
    NlsSolution, SolveStatus,
};
pub use tensor::{Mode, Tensor3};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{dim_err, Error, Result};

/// Dense real matrix. All factor matrices, unfoldings and data matrices use it.
pub type DenseMatrix = DMatrix<f64>;

/// Diagonal scaling `D = Diag(d_1, …, d_n)` kept as its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagScaling {
    values: Vec<f64>,
}

/// Smallest value a diagonal scaling entry may take.
pub const MIN_SCALE: f64 = 1e-12;

impl DiagScaling {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Argument(format!(
                "diagonal scaling entries must be positive and finite, got {v}"
            )));
        }
        Ok(Self { values })
    }

    pub fn ones(n: usize) -> Self {
        Self {
            values: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Sets entry `i`, clamping at [`MIN_SCALE`] so the scaling stays positive.
    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = if v.is_finite() { v.max(MIN_SCALE) } else { 1.0 };
    }

    /// `A · D`: scales column `j` of `a` by `d_j`.
    pub fn scale_columns(&self, a: &DenseMatrix) -> DenseMatrix {
        let mut out = a.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= self.values[j];
        }
        out
    }

    /// `D · A`: scales row `i` of `a` by `d_i`.
    pub fn scale_rows(&self, a: &DenseMatrix) -> DenseMatrix {
        let mut out = a.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.values[i];
        }
        out
    }
}

/// Returns an argument error if any entry is NaN or infinite.
pub fn ensure_finite(m: &DenseMatrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "{what} contains non-finite values"
        )))
    }
}

/// Squared Frobenius norm.
pub fn frob2(m: &DenseMatrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Squared Frobenius norm of `a - b`.
pub fn frob2_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Column-wise Kronecker (Khatri-Rao) product `A ⊙ B`.
///
/// Row `i·J + j` of column `f` holds `A(i,f)·B(j,f)`, so the index of `B`
/// varies fastest.
pub fn khatri_rao(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.ncols() != b.ncols() {
        return Err(dim_err(
            "khatri_rao",
            format!("{} vs {} columns", a.ncols(), b.ncols()),
        ));
    }
    let (ni, nj) = (a.nrows(), b.nrows());
    let mut out = DenseMatrix::zeros(ni * nj, a.ncols());
    for f in 0..a.ncols() {
        for i in 0..ni {
            let aif = a[(i, f)];
            for j in 0..nj {
                out[(i * nj + j, f)] = aif * b[(j, f)];
            }
        }
    }
    Ok(out)
}

/// Cholesky factor of a symmetric positive (semi)definite matrix.
///
/// Falls back to adding `1e-12·trace` to the diagonal when the plain
/// factorization fails.
pub fn spd_factor(a: DenseMatrix, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical(format!(
            "{what}: non-finite normal matrix"
        )));
    }
    let n = a.nrows();
    let trace = a.trace();
    if !(trace > 0.0) {
        return Err(Error::Numerical(format!(
            "{what}: normal matrix is singular (trace {trace:.3e})"
        )));
    }
    // pivots below this bound mean the matrix is numerically singular
    let floor = 1e-15 * trace;
    let acceptable = |c: &Cholesky<f64, Dyn>| {
        c.l_dirty()
            .diagonal()
            .iter()
            .all(|d| d.is_finite() && d * d > floor)
    };
    if let Some(c) = Cholesky::new(a.clone()).filter(acceptable) {
        return Ok(c);
    }
    let jitter = 1e-12 * trace;
    let shifted = a + DenseMatrix::identity(n, n) * jitter;
    Cholesky::new(shifted)
        .filter(|c| {
            c.l_dirty()
                .diagonal()
                .iter()
                .all(|d| d.is_finite() && *d > 0.0)
        })
        .ok_or_else(|| {
            Error::Numerical(format!(
                "{what}: normal matrix is singular even after {jitter:.3e} diagonal jitter"
            ))
        })
}

/// Solves `A x = b` for a symmetric positive definite `A` (tiny systems).
pub(crate) fn spd_solve_vec(a: DenseMatrix, b: &DVector<f64>) -> Option<DVector<f64>> {
    let c = Cholesky::new(a)?;
    let x = c.solve(b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Closed-form W step of the volume-regularized factorization:
/// `argmin_W ‖X − W·H‖²_F + β·Tr(W·G·Wᵀ)` with `G = F·I − 11ᵀ`.
///
/// `Tr(W·G·Wᵀ)` equals the sum of squared pairwise distances between the
/// columns of `W`; `G` vanishes at `F = 1`.
pub fn ridge_volmin_w(x: &DenseMatrix, h: &DenseMatrix, beta: f64) -> Result<DenseMatrix> {
    if x.ncols() != h.ncols() {
        return Err(dim_err(
            "ridge_volmin_w",
            format!("X has {} columns, H has {}", x.ncols(), h.ncols()),
        ));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Argument(format!("beta must be >= 0, got {beta}")));
    }
    ensure_finite(x, "X")?;
    ensure_finite(h, "H")?;
    let f = h.nrows();
    let normal = h * h.transpose() + volume_gram(f) * beta;
    let chol = spd_factor(normal, "ridge_volmin_w")?;
    // W·N = X·Hᵀ  ⇔  N·Wᵀ = H·Xᵀ (N symmetric)
    let rhs = h * x.transpose();
    Ok(chol.solve(&rhs).transpose())
}

/// `G = F·I − 11ᵀ`.
pub fn volume_gram(f: usize) -> DenseMatrix {
    DenseMatrix::identity(f, f) * f as f64 - DenseMatrix::from_element(f, f, 1.0)
}

/// `Tr(W·G·Wᵀ)` evaluated through the pairwise-distance identity.
pub fn volume_surrogate(w: &DenseMatrix) -> f64 {
    // Σ_f Σ_{l>f} ‖w_f − w_l‖² = F·Σ‖w_f‖² − ‖Σ w_f‖²
    let f = w.ncols() as f64;
    let total: f64 = w.iter().map(|v| v * v).sum();
    let sum = w.column_sum();
    f * total - sum.norm_squared()
}
