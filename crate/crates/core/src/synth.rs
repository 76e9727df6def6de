//! Seeded synthetic instances with calibrated data- and latent-domain SNRs.
//!
//! Data follow `X = W·(M·S + E₂) + E₁` (or the three-way analogue), with
//! `SNR₁ = ‖W·H‖²/‖E₁‖²` and `SNR₂ = ‖M·S‖²/‖E₂‖²`. A missing SNR means
//! the corresponding noise is switched off.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::Assignment;
use crate::error::{Error, Result};
use crate::linalg::{frob2, DenseMatrix, DiagScaling, Mode, Tensor3};
use crate::metrics::{kruskal_rank, KRUSKAL_MAX_COLS};
use crate::rng::{self, Rng};

/// Repetitions allowed for the latent clip-and-rescale loop.
pub const H_LOOP_CAP: usize = 100;
/// Regeneration attempts for tensors failing the Kruskal certificate.
pub const KRUSKAL_RETRIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Nmf,
    Volmin,
    Tensor,
    Subspace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub model: Model,
    pub i: usize,
    pub j: usize,
    /// Third tensor dimension (tensor model only).
    pub l: usize,
    pub f: usize,
    pub k: usize,
    /// `None` (or `+∞`) switches the data noise off.
    #[serde(with = "snr_serde")]
    pub snr1_db: Option<f64>,
    #[serde(with = "snr_serde")]
    pub snr2_db: Option<f64>,
    /// Fraction of data columns replaced by all-ones outliers (matrix models).
    pub outlier_fraction: f64,
    /// Number of mode-3 slabs replaced by uniform noise (tensor model).
    pub outlier_slabs: usize,
    /// Subspace dimensions (subspace model); empty means an even split of `F`.
    pub ranks: Vec<usize>,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            model: Model::Nmf,
            i: 50,
            j: 1000,
            l: 30,
            f: 7,
            k: 10,
            snr1_db: Some(15.0),
            snr2_db: Some(9.0),
            outlier_fraction: 0.03,
            outlier_slabs: 0,
            ranks: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn noiseless(mut self) -> Self {
        self.snr1_db = None;
        self.snr2_db = None;
        self
    }

    /// Subspace dimensions, defaulting to an even split of `F` over `K`.
    pub fn subspace_ranks(&self) -> Vec<usize> {
        if self.ranks.is_empty() {
            vec![(self.f / self.k.max(1)).max(1); self.k]
        } else {
            self.ranks.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.i == 0 || self.j == 0 || self.f == 0 || self.k == 0 {
            return arg(format!(
                "dimensions must be >= 1 (I={}, J={}, F={}, K={})",
                self.i, self.j, self.f, self.k
            ));
        }
        if self.model == Model::Tensor && self.l == 0 {
            return arg("tensor model needs L >= 1".into());
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return arg(format!(
                "outlier fraction {} not in [0, 1)",
                self.outlier_fraction
            ));
        }
        for snr in [self.snr1_db, self.snr2_db].into_iter().flatten() {
            if snr.is_nan() || snr == f64::NEG_INFINITY {
                return arg(format!("invalid SNR {snr} dB"));
            }
        }
        match self.model {
            Model::Volmin if self.k < self.f => {
                return arg(format!(
                    "VolMin instances need K >= F (K={}, F={})",
                    self.k, self.f
                ));
            }
            Model::Tensor if self.outlier_slabs >= self.l => {
                return arg(format!(
                    "{} outlier slabs leave no clean slab of {}",
                    self.outlier_slabs, self.l
                ));
            }
            Model::Subspace => {
                let r = self.subspace_ranks();
                if r.len() != self.k || r.contains(&0) || r.iter().sum::<usize>() > self.f {
                    return arg(format!(
                        "subspace ranks {r:?} must be K positive values summing to <= F"
                    ));
                }
            }
            _ => {}
        }
        if self.model != Model::Tensor && self.j < self.k {
            return arg(format!(
                "J = {} columns cannot cover K = {} clusters",
                self.j, self.k
            ));
        }
        if self.model == Model::Tensor && self.i < self.k {
            return arg(format!(
                "I = {} rows cannot cover K = {} clusters",
                self.i, self.k
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTruth {
    pub w: DenseMatrix,
    /// `M·S + E₂`.
    pub h: DenseMatrix,
    /// Noise-free latent part (`M·S`, or the block-structured `H₀`).
    pub h_clean: DenseMatrix,
    pub m: DenseMatrix,
    pub labels: Assignment,
    pub e1: DenseMatrix,
    pub e2: DenseMatrix,
    pub x: DenseMatrix,
    pub outlier_mask: Vec<bool>,
    /// Entry value of every outlier column.
    pub outlier_level: f64,
}

impl MatrixTruth {
    /// `W·H + E₁` with outlier columns overwritten.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut x = &self.w * &self.h + &self.e1;
        for (j, &o) in self.outlier_mask.iter().enumerate() {
            if o {
                x.column_mut(j).fill(self.outlier_level);
            }
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorTruth {
    /// `D·Ã`.
    pub a: DenseMatrix,
    pub a_tilde: DenseMatrix,
    pub a_clean: DenseMatrix,
    pub d: DiagScaling,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
    /// `K × F` centroids of the rows of `Ã`.
    pub m: DenseMatrix,
    pub labels: Assignment,
    pub e1: Tensor3,
    pub e2: DenseMatrix,
    pub x: Tensor3,
    /// Mode-3 slabs replaced by noise.
    pub outlier_slabs: Vec<bool>,
    /// `(k_A, k_B, k_C)` when `F` is small enough to certify.
    pub kruskal: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Matrix(MatrixTruth),
    Tensor(TensorTruth),
}

impl GroundTruth {
    /// Latent labels (columns of `H`, or rows of `A`).
    pub fn labels(&self) -> &Assignment {
        match self {
            GroundTruth::Matrix(t) => &t.labels,
            GroundTruth::Tensor(t) => &t.labels,
        }
    }

    /// Per-point flags for points excluded from accuracy scoring.
    pub fn excluded(&self) -> Vec<bool> {
        match self {
            GroundTruth::Matrix(t) => t.outlier_mask.clone(),
            GroundTruth::Tensor(t) => vec![false; t.labels.len()],
        }
    }

    /// The factor scored by matched MSE (`W`, or `A` for tensors).
    pub fn scored_factor(&self) -> &DenseMatrix {
        match self {
            GroundTruth::Matrix(t) => &t.w,
            GroundTruth::Tensor(t) => &t.a,
        }
    }
}

pub fn generate(params: &SynthParams) -> Result<GroundTruth> {
    Ok(match params.model {
        Model::Nmf => GroundTruth::Matrix(gen_nmf_instance(params)?),
        Model::Volmin => GroundTruth::Matrix(gen_volmin_instance(params)?),
        Model::Tensor => GroundTruth::Tensor(gen_tensor_instance(params)?),
        Model::Subspace => GroundTruth::Matrix(gen_subspace_instance(params)?),
    })
}

/// Noise-free SNRs travel as `+∞` (`null` in JSON), so formats without a
/// null value still round-trip.
mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(v.unwrap_or(f64::INFINITY))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.filter(|v| *v != f64::INFINITY))
    }
}

fn snr_linear(db: Option<f64>) -> Option<f64> {
    db.filter(|v| v.is_finite()).map(|v| 10f64.powf(v / 10.0))
}

fn stage(params: &SynthParams, name: &str) -> Rng {
    rng::stream(params.seed, &[rng::label(name)])
}

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn uniform(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

/// Gaussian with negatives zeroed; all-zero columns are redrawn.
fn nonneg_gaussian(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    let mut w = gaussian(rows, cols, rng).map(|v| v.max(0.0));
    for c in 0..cols {
        while w.column(c).iter().all(|v| *v == 0.0) {
            for r in 0..rows {
                w[(r, c)] = rng.sample::<f64, _>(StandardNormal).max(0.0);
            }
        }
    }
    w
}

/// A point drawn uniformly from the unit simplex.
fn dirichlet_column(n: usize, rng: &mut Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Gaussian noise scaled so that `‖signal‖²/‖E‖² = snr`.
fn scaled_noise(
    signal_energy: f64,
    shape: (usize, usize),
    snr: Option<f64>,
    rng: &mut Rng,
) -> DenseMatrix {
    let mut e = DenseMatrix::zeros(shape.0, shape.1);
    if let Some(snr) = snr {
        e = gaussian(shape.0, shape.1, rng);
        let n = frob2(&e);
        if n > 0.0 && signal_energy > 0.0 {
            e *= (signal_energy / (n * snr)).sqrt();
        } else {
            e.fill(0.0);
        }
    }
    e
}

/// Latent noise loop: clip to the feasible set, recompute the error,
/// rescale it to the target SNR and repeat until the result is feasible.
/// With `simplex`, clipped columns are also renormalized to sum to one.
fn latent_noise(
    clean: &DenseMatrix,
    snr2: Option<f64>,
    simplex: bool,
    rng: &mut Rng,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let Some(snr) = snr2 else {
        return Ok((
            clean.clone(),
            DenseMatrix::zeros(clean.nrows(), clean.ncols()),
        ));
    };
    let signal = frob2(clean);
    let mut h = clean + gaussian(clean.nrows(), clean.ncols(), rng);
    for _ in 0..H_LOOP_CAP {
        h.apply(|v| *v = v.max(0.0));
        if simplex {
            for mut col in h.column_iter_mut() {
                let s = col.sum();
                if s > 0.0 {
                    col /= s;
                } else {
                    col.fill(1.0 / col.len() as f64);
                }
            }
        }
        let mut e2 = &h - clean;
        let n = frob2(&e2);
        if n == 0.0 || signal == 0.0 {
            return Ok((
                clean.clone(),
                DenseMatrix::zeros(clean.nrows(), clean.ncols()),
            ));
        }
        e2 *= (signal / (n * snr)).sqrt();
        h = clean + &e2;
        if h.iter().all(|v| *v >= 0.0) {
            return Ok((h, e2));
        }
    }
    Err(Error::Generator(format!(
        "latent noise loop did not produce a feasible H in {H_LOOP_CAP} repetitions"
    )))
}

/// Replaces a fraction of the columns with all-ones vectors whose norm is
/// the median column norm of `x`.
fn inject_outliers(x: &mut DenseMatrix, fraction: f64, rng: &mut Rng) -> (Vec<bool>, f64) {
    let (i, j) = x.shape();
    let mut mask = vec![false; j];
    let count = (fraction * j as f64).round() as usize;
    if count == 0 {
        return (mask, 0.0);
    }
    let mut norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    norms.sort_by(f64::total_cmp);
    let median = if j % 2 == 1 {
        norms[j / 2]
    } else {
        0.5 * (norms[j / 2 - 1] + norms[j / 2])
    };
    let level = median / (i as f64).sqrt();
    for c in index::sample(rng, j, count.min(j)) {
        mask[c] = true;
        x.column_mut(c).fill(level);
    }
    (mask, level)
}

fn finish_matrix(
    params: &SynthParams,
    w: DenseMatrix,
    h_clean: DenseMatrix,
    m: DenseMatrix,
    labels: Assignment,
    simplex: bool,
) -> Result<MatrixTruth> {
    let (h, e2) = latent_noise(
        &h_clean,
        snr_linear(params.snr2_db),
        simplex,
        &mut stage(params, "e2"),
    )?;
    let wh = &w * &h;
    let e1 = scaled_noise(
        frob2(&wh),
        wh.shape(),
        snr_linear(params.snr1_db),
        &mut stage(params, "e1"),
    );
    let mut x = wh + &e1;
    let (outlier_mask, outlier_level) = inject_outliers(
        &mut x,
        params.outlier_fraction,
        &mut stage(params, "outliers"),
    );
    Ok(MatrixTruth {
        w,
        h,
        h_clean,
        m,
        labels,
        e1,
        e2,
        x,
        outlier_mask,
        outlier_level,
    })
}

/// Sparse nonnegative `W`, anchored centroids `M(:, 1:F) = I` and tiled labels.
///
/// With `K < F` only the first `K` unit vectors are used as centroids.
pub fn gen_nmf_instance(params: &SynthParams) -> Result<MatrixTruth> {
    params.validate()?;
    let (f, k) = (params.f, params.k);
    let w = nonneg_gaussian(params.i, f, &mut stage(params, "w"));
    let mut rng = stage(params, "m");
    let m = DenseMatrix::from_fn(f, k, |r, c| {
        if c < f {
            if r == c {
                1.0
            } else {
                0.0
            }
        } else {
            rng.random::<f64>()
        }
    });
    let labels = Assignment::tiled(params.j, k);
    let h_clean = expand(&m, &labels);
    finish_matrix(params, w, h_clean, m, labels, false)
}

/// Dense Gaussian `W` and column-stochastic `H` clustered around the
/// simplex vertices plus random interior centroids.
pub fn gen_volmin_instance(params: &SynthParams) -> Result<MatrixTruth> {
    params.validate()?;
    let (f, k) = (params.f, params.k);
    let w = gaussian(params.i, f, &mut stage(params, "w"));
    let mut rng = stage(params, "m");
    let mut m = DenseMatrix::zeros(f, k);
    for c in 0..k {
        if c < f {
            m[(c, c)] = 1.0;
        } else {
            let col = dirichlet_column(f, &mut rng);
            m.set_column(c, &nalgebra::DVector::from_vec(col));
        }
    }
    let labels = Assignment::tiled(params.j, k);
    let h_clean = expand(&m, &labels);
    finish_matrix(params, w, h_clean, m, labels, true)
}

/// Union of `K` orthogonal coordinate blocks of `H`: cluster `k` uses rows
/// `𝓕_k` only, with uniform coefficients.
pub fn gen_subspace_instance(params: &SynthParams) -> Result<MatrixTruth> {
    params.validate()?;
    let ranks = params.subspace_ranks();
    let w = nonneg_gaussian(params.i, params.f, &mut stage(params, "w"));
    let labels = Assignment::tiled(params.j, params.k);
    let mut offsets = vec![0];
    for r in &ranks {
        offsets.push(offsets.last().unwrap() + r);
    }
    let mut rng = stage(params, "h0");
    let mut h0 = DenseMatrix::zeros(params.f, params.j);
    for j in 0..params.j {
        let k = labels.label(j);
        for row in offsets[k]..offsets[k + 1] {
            h0[(row, j)] = rng.random::<f64>();
        }
    }
    let m = DenseMatrix::zeros(params.f, params.k);
    finish_matrix(params, w, h0, m, labels, false)
}

/// PARAFAC instance with clustered rows of `A = D·Ã`, `M = 2I + 11ᵀ`
/// centroids, uniform `B`, `C` and optional noise slabs.
pub fn gen_tensor_instance(params: &SynthParams) -> Result<TensorTruth> {
    params.validate()?;
    let mut last = None;
    for attempt in 0..KRUSKAL_RETRIES {
        let truth = tensor_attempt(params, attempt as u64)?;
        match truth.kruskal {
            Some([ka, kb, kc]) if ka + kb + kc < 2 * params.f + 2 => last = Some([ka, kb, kc]),
            _ => return Ok(truth),
        }
    }
    Err(Error::Generator(format!(
        "no instance met the Kruskal condition in {KRUSKAL_RETRIES} attempts (last {last:?})"
    )))
}

fn tensor_attempt(params: &SynthParams, attempt: u64) -> Result<TensorTruth> {
    let (i, j, l, f, k) = (params.i, params.j, params.l, params.f, params.k);
    let sub = |name: &str| rng::stream(params.seed, &[rng::label(name), attempt]);
    let m = DenseMatrix::from_fn(k, f, |r, c| if r == c { 3.0 } else { 1.0 });
    let labels = Assignment::tiled(i, k);
    let a_clean = DenseMatrix::from_fn(i, f, |r, c| m[(labels.label(r), c)]);
    let (a_tilde, e2) = latent_noise(&a_clean, snr_linear(params.snr2_db), false, &mut sub("e2"))?;
    let mut rng = sub("d");
    let d = DiagScaling::new((0..i).map(|_| 1.0 - rng.random::<f64>()).collect())?;
    let a = d.scale_rows(&a_tilde);
    let b = uniform(j, f, &mut sub("b"));
    let c = uniform(l, f, &mut sub("c"));
    let clean = Tensor3::from_factors(&a, &b, &c)?;
    let unf = clean.unfold(Mode::One);
    let e1m = scaled_noise(
        frob2(&unf),
        unf.shape(),
        snr_linear(params.snr1_db),
        &mut sub("e1"),
    );
    let e1 = Tensor3::fold(&e1m, Mode::One, (i, j, l))?;
    let mut x = clean.add(&e1)?;
    let mut outlier_slabs = vec![false; l];
    let mut rng = sub("slabs");
    for s in index::sample(&mut rng, l, params.outlier_slabs) {
        outlier_slabs[s] = true;
        for jj in 0..j {
            for ii in 0..i {
                x.set(ii, jj, s, rng.random::<f64>());
            }
        }
    }
    let kruskal = if f <= KRUSKAL_MAX_COLS {
        Some([kruskal_rank(&a)?, kruskal_rank(&b)?, kruskal_rank(&c)?])
    } else {
        None
    };
    Ok(TensorTruth {
        a,
        a_tilde,
        a_clean,
        d,
        b,
        c,
        m,
        labels,
        e1,
        e2,
        x,
        outlier_slabs,
        kruskal,
    })
}

fn expand(m: &DenseMatrix, labels: &Assignment) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), labels.len(), |r, j| m[(r, labels.label(j))])
}

/// Measured `10·log10(‖signal‖²/‖noise‖²)`.
pub fn measured_snr_db(signal: &DenseMatrix, noise: &DenseMatrix) -> f64 {
    10.0 * (frob2(signal) / frob2(noise)).log10()
}
