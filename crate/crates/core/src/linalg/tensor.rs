use super::DenseMatrix;
use crate::error::{dim_err, Error, Result};

/// Unfolding mode of a three-way tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl TryFrom<usize> for Mode {
    type Error = Error;

    fn try_from(m: usize) -> Result<Self> {
        match m {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            other => Err(Error::Argument(format!(
                "tensor mode must be 1, 2 or 3, got {other}"
            ))),
        }
    }
}

/// Dense real `I × J × L` tensor.
///
/// Entry `(i, j, l)` lives at `i + I·(j + J·l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(i: usize, j: usize, l: usize) -> Self {
        Self {
            dims: (i, j, l),
            data: vec![0.0; i * j * l],
        }
    }

    pub fn from_fn(
        i: usize,
        j: usize,
        l: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(i, j, l);
        for ll in 0..l {
            for jj in 0..j {
                for ii in 0..i {
                    t.data[ii + i * (jj + j * ll)] = f(ii, jj, ll);
                }
            }
        }
        t
    }

    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        if dims.0 * dims.1 * dims.2 != data.len() {
            return Err(dim_err(
                "Tensor3::from_vec",
                format!(
                    "{dims:?} needs {} values, got {}",
                    dims.0 * dims.1 * dims.2,
                    data.len()
                ),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("tensor contains non-finite values".into()));
        }
        Ok(Self { dims, data })
    }

    /// Sum of rank-one terms `Σ_f A(:,f) ∘ B(:,f) ∘ C(:,f)`.
    pub fn from_factors(a: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<Self> {
        if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
            return Err(dim_err(
                "Tensor3::from_factors",
                format!("ranks {} / {} / {}", a.ncols(), b.ncols(), c.ncols()),
            ));
        }
        let x1 = super::khatri_rao(c, b)? * a.transpose();
        Self::fold(&x1, Mode::One, (a.nrows(), b.nrows(), c.nrows()))
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        let (ni, nj, _) = self.dims;
        self.data[i + ni * (j + nj * l)]
    }

    pub fn set(&mut self, i: usize, j: usize, l: usize, v: f64) {
        let (ni, nj, _) = self.dims;
        self.data[i + ni * (j + nj * l)] = v;
    }

    pub fn norm_squared(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn add(&self, other: &Tensor3) -> Result<Self> {
        if self.dims != other.dims {
            return Err(dim_err(
                "Tensor3::add",
                format!("{:?} vs {:?}", self.dims, other.dims),
            ));
        }
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Matrix unfolding.
    ///
    /// Mode one gives the `(J·L) × I` matrix whose column `i` is `vec(X(i,:,:))`;
    /// modes two and three give `(I·L) × J` and `(I·J) × L`. Within each
    /// `vec`, the first remaining index varies fastest, so
    /// `X₍₁₎ = (C ⊙ B)·Aᵀ`, `X₍₂₎ = (C ⊙ A)·Bᵀ` and `X₍₃₎ = (B ⊙ A)·Cᵀ`.
    pub fn unfold(&self, mode: Mode) -> DenseMatrix {
        let (ni, nj, nl) = self.dims;
        match mode {
            Mode::One => DenseMatrix::from_fn(nj * nl, ni, |r, i| {
                let (j, l) = (r % nj, r / nj);
                self.get(i, j, l)
            }),
            Mode::Two => DenseMatrix::from_fn(ni * nl, nj, |r, j| {
                let (i, l) = (r % ni, r / ni);
                self.get(i, j, l)
            }),
            Mode::Three => DenseMatrix::from_fn(ni * nj, nl, |r, l| {
                let (i, j) = (r % ni, r / ni);
                self.get(i, j, l)
            }),
        }
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(m: &DenseMatrix, mode: Mode, dims: (usize, usize, usize)) -> Result<Self> {
        let (ni, nj, nl) = dims;
        let expected = match mode {
            Mode::One => (nj * nl, ni),
            Mode::Two => (ni * nl, nj),
            Mode::Three => (ni * nj, nl),
        };
        if m.shape() != expected {
            return Err(dim_err(
                "Tensor3::fold",
                format!(
                    "mode {mode:?} of {dims:?} needs {expected:?}, got {:?}",
                    m.shape()
                ),
            ));
        }
        Ok(Self::from_fn(ni, nj, nl, |i, j, l| match mode {
            Mode::One => m[(j + nj * l, i)],
            Mode::Two => m[(i + ni * l, j)],
            Mode::Three => m[(i + ni * j, l)],
        }))
    }

    /// Reorders the modes: `order[k]` names which current mode becomes mode `k`.
    pub fn permute(&self, order: [Mode; 3]) -> Result<Self> {
        let idx = |m: Mode| match m {
            Mode::One => 0usize,
            Mode::Two => 1,
            Mode::Three => 2,
        };
        let perm = order.map(idx);
        let mut seen = [false; 3];
        for p in perm {
            seen[p] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Argument(format!(
                "{order:?} is not a permutation of the modes"
            )));
        }
        let d = [self.dims.0, self.dims.1, self.dims.2];
        let nd = (d[perm[0]], d[perm[1]], d[perm[2]]);
        Ok(Self::from_fn(nd.0, nd.1, nd.2, |a, b, c| {
            let mut src = [0usize; 3];
            src[perm[0]] = a;
            src[perm[1]] = b;
            src[perm[2]] = c;
            self.get(src[0], src[1], src[2])
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::khatri_rao;
    use proptest::prelude::*;

    #[test]
    fn scalar_tensor_unfolds_to_itself() {
        let t = Tensor3::from_vec((1, 1, 1), vec![5.0]).unwrap();
        for m in [Mode::One, Mode::Two, Mode::Three] {
            assert_eq!(t.unfold(m), DenseMatrix::from_element(1, 1, 5.0));
        }
    }

    #[test]
    fn unfold_shapes() {
        let t = Tensor3::from_fn(2, 3, 4, |i, j, l| (i + 2 * j + 6 * l) as f64);
        assert_eq!(t.unfold(Mode::One).shape(), (12, 2));
        assert_eq!(t.unfold(Mode::Two).shape(), (8, 3));
        assert_eq!(t.unfold(Mode::Three).shape(), (6, 4));
    }

    #[test]
    fn counting_tensor_roundtrips_every_mode() {
        let t = Tensor3::from_fn(2, 3, 4, |i, j, l| (i + 2 * j + 6 * l) as f64);
        for m in [Mode::One, Mode::Two, Mode::Three] {
            assert_eq!(Tensor3::fold(&t.unfold(m), m, t.dims()).unwrap(), t);
        }
    }

    #[test]
    fn rank_one_unfoldings_match_khatri_rao() {
        let a = DenseMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = DenseMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let c = DenseMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let t = Tensor3::from_fn(2, 2, 2, |i, j, l| a[(i, 0)] * b[(j, 0)] * c[(l, 0)]);
        assert_eq!(
            t.unfold(Mode::One),
            khatri_rao(&c, &b).unwrap() * a.transpose()
        );
        assert_eq!(
            t.unfold(Mode::Two),
            khatri_rao(&c, &a).unwrap() * b.transpose()
        );
        assert_eq!(
            t.unfold(Mode::Three),
            khatri_rao(&b, &a).unwrap() * c.transpose()
        );
    }

    #[test]
    fn invalid_mode_is_an_argument_error() {
        assert!(matches!(Mode::try_from(4), Err(Error::Argument(_))));
        assert!(matches!(Mode::try_from(0), Err(Error::Argument(_))));
    }

    #[test]
    fn permute_swaps_modes() {
        let t = Tensor3::from_fn(2, 3, 4, |i, j, l| (i + 10 * j + 100 * l) as f64);
        let p = t.permute([Mode::One, Mode::Three, Mode::Two]).unwrap();
        assert_eq!(p.dims(), (2, 4, 3));
        assert_eq!(p.get(1, 3, 2), t.get(1, 2, 3));
    }

    proptest! {
        #[test]
        fn unfold_fold_is_a_bijection(
            dims in (1usize..5, 1usize..5, 1usize..5),
            seed in any::<u64>(),
        ) {
            use rand::Rng as _;
            let mut rng = crate::rng::stream(seed, &[]);
            let t = Tensor3::from_fn(dims.0, dims.1, dims.2, |_, _, _| rng.random::<f64>());
            for m in [Mode::One, Mode::Two, Mode::Three] {
                prop_assert_eq!(&Tensor3::fold(&t.unfold(m), m, dims).unwrap(), &t);
            }
        }

        #[test]
        fn factor_tensors_satisfy_all_unfolding_identities(seed in any::<u64>(), rank in 1usize..4) {
            use rand::Rng as _;
            let mut rng = crate::rng::stream(seed, &[]);
            let mut m = |r: usize| DenseMatrix::from_fn(r, rank, |_, _| rng.random::<f64>() - 0.5);
            let (a, b, c) = (m(3), m(4), m(2));
            let t = Tensor3::from_factors(&a, &b, &c).unwrap();
            let x2 = khatri_rao(&c, &a).unwrap() * b.transpose();
            let x3 = khatri_rao(&b, &a).unwrap() * c.transpose();
            prop_assert!((t.unfold(Mode::Two) - x2).abs().max() < 1e-12);
            prop_assert!((t.unfold(Mode::Three) - x3).abs().max() < 1e-12);
            // elementwise definition
            for i in 0..3 { for j in 0..4 { for l in 0..2 {
                let v: f64 = (0..rank).map(|f| a[(i, f)] * b[(j, f)] * c[(l, f)]).sum();
                prop_assert!((t.get(i, j, l) - v).abs() < 1e-12);
            }}}
        }
    }
}
