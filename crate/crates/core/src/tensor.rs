//! Dense third-order complex tensors and the multilinear kernels built on them.
//!
//! Element `(i, j, r)` of an `I × J × R` tensor is stored at
//! `i + I·(j + J·r)`. The mode-n unfoldings are
//!
//! * mode 1: `I × JR`, column `j + r·J` (frontal slices side by side),
//! * mode 2: `J × IR`, column `i + r·I` (transposed frontal slices),
//! * mode 3: `R × IJ`, column `i + j·I` (row `r` is the vec of slice `r`),
//!
//! so that a PARAFAC tensor with factors `(A, B, C)` unfolds to
//! `A (C ⋄ B)ᵀ`, `B (C ⋄ A)ᵀ` and `C (B ⋄ A)ᵀ`. Vectorisation is column-major.

use faer::{c64, Mat, MatRef};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, CMat};

/// Unfolding mode of a third-order tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    /// Shape of the mode-n unfolding of a tensor with `dims`.
    pub fn unfolded_shape(self, dims: [usize; 3]) -> (usize, usize) {
        let [i, j, r] = dims;
        match self {
            Mode::One => (i, j * r),
            Mode::Two => (j, i * r),
            Mode::Three => (r, i * j),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<c64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![c64::new(0.0, 0.0); dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> c64) -> Self {
        let mut t = Self::zeros(dims);
        for r in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let at = t.offset(i, j, r);
                    t.data[at] = f(i, j, r);
                }
            }
        }
        t
    }

    /// Builds a tensor from raw data in the documented layout.
    pub fn from_data(dims: [usize; 3], data: Vec<c64>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::Dimension(format!(
                "data length {} for dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Self { dims, data })
    }

    /// Stacks equally sized matrices as frontal slices.
    pub fn from_frontal_slices(slices: &[CMat]) -> Result<Self> {
        let (i, j) = slices
            .first()
            .map(|s| (s.nrows(), s.ncols()))
            .ok_or_else(|| Error::Dimension("no slices".into()))?;
        if slices.iter().any(|s| s.nrows() != i || s.ncols() != j) {
            return Err(Error::Dimension("frontal slices differ in shape".into()));
        }
        Ok(Self::from_fn([i, j, slices.len()], |a, b, r| {
            slices[r][(a, b)]
        }))
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, r: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * r)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[c64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, r: usize) -> c64 {
        self.data[self.offset(i, j, r)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, r: usize, v: c64) {
        let at = self.offset(i, j, r);
        self.data[at] = v;
    }

    pub fn frontal_slice(&self, r: usize) -> CMat {
        Mat::from_fn(self.dims[0], self.dims[1], |i, j| self.get(i, j, r))
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum()
    }

    /// Squared Frobenius distance to another tensor of the same shape.
    pub fn dist2(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum()
    }
}

/// Mode-n unfolding.
pub fn unfold(t: &Tensor3, mode: Mode) -> CMat {
    let [ni, nj, nr] = t.dims;
    match mode {
        Mode::One => Mat::from_fn(ni, nj * nr, |i, c| t.data[i + ni * c]),
        Mode::Two => Mat::from_fn(nj, ni * nr, |j, c| t.get(c % ni, j, c / ni)),
        Mode::Three => Mat::from_fn(nr, ni * nj, |r, c| t.data[c + ni * nj * r]),
    }
}

/// Inverse of [`unfold`].
pub fn fold(m: MatRef<'_, c64>, mode: Mode, dims: [usize; 3]) -> Result<Tensor3> {
    let (rows, cols) = mode.unfolded_shape(dims);
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::Dimension(format!(
            "cannot fold {}×{} along {:?} into {:?}",
            m.nrows(),
            m.ncols(),
            mode,
            dims
        )));
    }
    let ni = dims[0];
    let nj = dims[1];
    Ok(match mode {
        Mode::One => Tensor3::from_fn(dims, |i, j, r| m[(i, j + nj * r)]),
        Mode::Two => Tensor3::from_fn(dims, |i, j, r| m[(j, i + ni * r)]),
        Mode::Three => Tensor3::from_fn(dims, |i, j, r| m[(r, i + ni * j)]),
    })
}

/// `t ×ₙ a`: multiplies the mode-n fibres of `t` by `a`.
pub fn n_mode_product(t: &Tensor3, a: MatRef<'_, c64>, mode: Mode) -> Result<Tensor3> {
    let n = mode.index();
    if a.ncols() != t.dims[n] {
        return Err(Error::Dimension(format!(
            "mode-{} product needs {} columns, matrix has {}",
            n + 1,
            t.dims[n],
            a.ncols()
        )));
    }
    let mut dims = t.dims;
    dims[n] = a.nrows();
    let prod = a * unfold(t, mode);
    fold(prod.as_ref(), mode, dims)
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> CMat {
    let (p, q) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * p, a.ncols() * q, |i, j| {
        a[(i / p, j / q)] * b[(i % p, j % q)]
    })
}

/// Khatri-Rao (columnwise Kronecker) product `a ⋄ b`.
pub fn khatri_rao(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> Result<CMat> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "khatri-rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let p = b.nrows();
    Ok(Mat::from_fn(a.nrows() * p, a.ncols(), |i, j| {
        a[(i / p, j)] * b[(i % p, j)]
    }))
}

/// Column-major vectorisation as an `rc × 1` matrix.
pub fn vec_mat(m: MatRef<'_, c64>) -> CMat {
    let r = m.nrows();
    Mat::from_fn(r * m.ncols(), 1, |i, _| m[(i % r, i / r)])
}

/// Inverse of [`vec_mat`].
pub fn unvec(v: &[c64], rows: usize, cols: usize) -> Result<CMat> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} entries into {}×{}",
            v.len(),
            rows,
            cols
        )));
    }
    Ok(Mat::from_fn(rows, cols, |i, j| v[i + rows * j]))
}

/// Block rearrangement for Kronecker-sum approximation.
///
/// `c` is read as an `i1 × j1` grid of `i2 × j2` blocks. Column `a + b·i1` of
/// the `(i2·j2) × (i1·j1)` result is the vec of block `(a, b)`, so
/// `rearrange(A ⊗ B) = vec(B) vec(A)ᵀ`.
pub fn rearrange(c: MatRef<'_, c64>, i1: usize, j1: usize, i2: usize, j2: usize) -> Result<CMat> {
    if c.nrows() != i1 * i2 || c.ncols() != j1 * j2 {
        return Err(Error::Dimension(format!(
            "rearrange of {}×{} as {i1}×{j1} blocks of {i2}×{j2}",
            c.nrows(),
            c.ncols()
        )));
    }
    Ok(Mat::from_fn(i2 * j2, i1 * j1, |row, col| {
        let (p, q) = (row % i2, row / i2);
        let (a, b) = (col % i1, col / i1);
        c[(a * i2 + p, b * j2 + q)]
    }))
}

/// Inverse of [`rearrange`].
pub fn unrearrange(r: MatRef<'_, c64>, i1: usize, j1: usize, i2: usize, j2: usize) -> Result<CMat> {
    if r.nrows() != i2 * j2 || r.ncols() != i1 * j1 {
        return Err(Error::Dimension(format!(
            "unrearrange of {}×{} into {i1}×{j1} blocks of {i2}×{j2}",
            r.nrows(),
            r.ncols()
        )));
    }
    Ok(Mat::from_fn(i1 * i2, j1 * j2, |row, col| {
        let (a, p) = (row / i2, row % i2);
        let (b, q) = (col / j2, col % j2);
        r[(p + q * i2, a + b * i1)]
    }))
}

/// Factor matrices of a third-order PARAFAC model with common rank.
#[derive(Debug, Clone)]
pub struct ParafacFactors3 {
    pub a: CMat,
    pub b: CMat,
    pub c: CMat,
}

impl ParafacFactors3 {
    pub fn new(a: CMat, b: CMat, c: CMat) -> Result<Self> {
        let f = Self { a, b, c };
        f.check()?;
        Ok(f)
    }

    fn check(&self) -> Result<()> {
        let r = self.a.ncols();
        if self.b.ncols() != r || self.c.ncols() != r {
            return Err(Error::Dimension(format!(
                "factor ranks differ: {}, {}, {}",
                r,
                self.b.ncols(),
                self.c.ncols()
            )));
        }
        Ok(())
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.a.nrows(), self.b.nrows(), self.c.nrows()]
    }

    pub fn get(&self, n: usize) -> &CMat {
        match n {
            0 => &self.a,
            1 => &self.b,
            _ => &self.c,
        }
    }
}

/// Σ_r a_r ∘ b_r ∘ c_r.
pub fn parafac_reconstruct(f: &ParafacFactors3) -> Result<Tensor3> {
    f.check()?;
    let kr = khatri_rao(f.c.as_ref(), f.b.as_ref())?;
    let m1 = &f.a * kr.transpose();
    fold(m1.as_ref(), Mode::One, f.dims())
}

/// `core ×₁ a ×₂ b ×₃ c`.
pub fn tucker_reconstruct(
    core: &Tensor3,
    a: MatRef<'_, c64>,
    b: MatRef<'_, c64>,
    c: MatRef<'_, c64>,
) -> Result<Tensor3> {
    let t = n_mode_product(core, a, Mode::One)?;
    let t = n_mode_product(&t, b, Mode::Two)?;
    n_mode_product(&t, c, Mode::Three)
}

/// Superdiagonal identity tensor of size `r × r × r`.
pub fn identity_tensor(r: usize) -> Tensor3 {
    Tensor3::from_fn([r, r, r], |i, j, k| {
        if i == j && j == k {
            c64::new(1.0, 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    })
}

/// Largest column count that exhaustive search will accept in [`k_rank`].
pub const K_RANK_MAX_COLS: usize = 8;

/// Kruskal rank: the largest `k` such that every set of `k` columns has
/// numerical rank `k` (singular values below `rel_tol · σ_max` count as zero).
pub fn k_rank(a: MatRef<'_, c64>, rel_tol: f64) -> Result<usize> {
    let n = a.ncols();
    if n > K_RANK_MAX_COLS {
        return Err(Error::Unsupported(format!(
            "k-rank search over {n} columns (limit {K_RANK_MAX_COLS})"
        )));
    }
    let mut best = 0;
    for k in 1..=n.min(a.nrows()) {
        let all_independent = (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .all(|mask| {
                let cols: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
                let sub = Mat::from_fn(a.nrows(), k, |i, j| a[(i, cols[j])]);
                numerical_rank(sub.as_ref(), rel_tol).map_or(false, |r| r == k)
            });
        if !all_independent {
            break;
        }
        best = k;
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rel_err, RANK_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
        Mat::from_fn(r, c, |_, _| {
            c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Tensor3 {
        Tensor3::from_fn(dims, |_, _, _| {
            c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    #[test]
    fn unfold_shapes() {
        let t = Tensor3::zeros([2, 3, 4]);
        let m1 = unfold(&t, Mode::One);
        let m2 = unfold(&t, Mode::Two);
        let m3 = unfold(&t, Mode::Three);
        assert_eq!((m1.nrows(), m1.ncols()), (2, 12));
        assert_eq!((m2.nrows(), m2.ncols()), (3, 8));
        assert_eq!((m3.nrows(), m3.ncols()), (4, 6));
        assert_eq!(m1.norm_l2() + m2.norm_l2() + m3.norm_l2(), 0.0);
    }

    #[test]
    fn unfold_matches_index_oracle_on_2x2x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = rand_tensor(&mut rng, [2, 2, 2]);
        let (m1, m2, m3) = (
            unfold(&t, Mode::One),
            unfold(&t, Mode::Two),
            unfold(&t, Mode::Three),
        );
        for i in 0..2 {
            for j in 0..2 {
                for r in 0..2 {
                    let v = t.get(i, j, r);
                    assert_eq!(m1[(i, j + 2 * r)], v);
                    assert_eq!(m2[(j, i + 2 * r)], v);
                    assert_eq!(m3[(r, i + 2 * j)], v);
                }
            }
        }
    }

    #[test]
    fn fold_round_trips_and_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = rand_tensor(&mut rng, [3, 4, 2]);
        for mode in Mode::ALL {
            assert_eq!(fold(unfold(&t, mode).as_ref(), mode, t.dims()).unwrap(), t);
        }
        let z = fold(CMat::zeros(3, 8).as_ref(), Mode::One, [3, 4, 2]).unwrap();
        assert_eq!(z.norm2(), 0.0);
        assert!(fold(CMat::zeros(3, 7).as_ref(), Mode::One, [3, 4, 2]).is_err());
    }

    #[test]
    fn mode3_fold_reproduces_frontal_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let slices: Vec<CMat> = (0..3).map(|_| rand_mat(&mut rng, 2, 4)).collect();
        let t = Tensor3::from_frontal_slices(&slices).unwrap();
        let m3 = unfold(&t, Mode::Three);
        let back = fold(m3.as_ref(), Mode::Three, t.dims()).unwrap();
        for (r, s) in slices.iter().enumerate() {
            assert_eq!(&back.frontal_slice(r), s);
        }
    }

    #[test]
    fn n_mode_product_identity_zero_and_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = rand_tensor(&mut rng, [2, 3, 2]);
        assert_eq!(
            n_mode_product(&t, CMat::identity(2, 2).as_ref(), Mode::One).unwrap(),
            t
        );
        let z = n_mode_product(&t, CMat::zeros(3, 3).as_ref(), Mode::Two).unwrap();
        assert_eq!(z.norm2(), 0.0);

        let a = rand_mat(&mut rng, 4, 3);
        let p = n_mode_product(&t, a.as_ref(), Mode::Two).unwrap();
        assert_eq!(p.dims(), [2, 4, 2]);
        for i in 0..2 {
            for q in 0..4 {
                for r in 0..2 {
                    let mut s = c64::new(0.0, 0.0);
                    for j in 0..3 {
                        s += a[(q, j)] * t.get(i, j, r);
                    }
                    assert!((p.get(i, q, r) - s).norm() < 1e-14);
                }
            }
        }
        assert!(n_mode_product(&t, a.as_ref(), Mode::One).is_err());
    }

    #[test]
    fn kron_of_identities_and_mixed_product() {
        let i6 = kron(CMat::identity(2, 2).as_ref(), CMat::identity(3, 3).as_ref());
        assert_eq!(i6, CMat::identity(6, 6));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, b, c, d) = (
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
            rand_mat(&mut rng, 2, 2),
        );
        let lhs = kron(a.as_ref(), b.as_ref()) * kron(c.as_ref(), d.as_ref());
        let rhs = kron((&a * &c).as_ref(), (&b * &d).as_ref());
        assert!(rel_err(lhs.as_ref(), rhs.as_ref()) < 1e-12);
    }

    #[test]
    fn vec_of_outer_product_is_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = rand_mat(&mut rng, 3, 1);
        let b = rand_mat(&mut rng, 4, 1);
        let lhs = vec_mat((&a * b.transpose()).as_ref());
        let rhs = kron(b.as_ref(), a.as_ref());
        assert!(rel_err(lhs.as_ref(), rhs.as_ref()) < 1e-12);
    }

    #[test]
    fn khatri_rao_single_column_and_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = rand_mat(&mut rng, 3, 1);
        let b = rand_mat(&mut rng, 2, 1);
        assert_eq!(
            khatri_rao(a.as_ref(), b.as_ref()).unwrap(),
            kron(a.as_ref(), b.as_ref())
        );

        let (a, b) = (rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 3, 3));
        let (c, d) = (rand_mat(&mut rng, 2, 2), rand_mat(&mut rng, 3, 2));
        let lhs = kron(a.as_ref(), b.as_ref()) * khatri_rao(c.as_ref(), d.as_ref()).unwrap();
        let rhs = khatri_rao((&a * &c).as_ref(), (&b * &d).as_ref()).unwrap();
        assert!(rel_err(lhs.as_ref(), rhs.as_ref()) < 1e-12);

        let (a, c) = (rand_mat(&mut rng, 3, 2), rand_mat(&mut rng, 2, 4));
        let bv = rand_mat(&mut rng, 2, 1);
        let db = Mat::from_fn(2, 2, |i, j| {
            if i == j {
                bv[(i, 0)]
            } else {
                c64::new(0.0, 0.0)
            }
        });
        let lhs = vec_mat((&a * &db * &c).as_ref());
        let rhs = khatri_rao(c.transpose(), a.as_ref()).unwrap() * &bv;
        assert!(rel_err(lhs.as_ref(), rhs.as_ref()) < 1e-12);

        assert!(khatri_rao(a.as_ref(), rand_mat(&mut rng, 2, 3).as_ref()).is_err());
    }

    #[test]
    fn rearrange_of_kron_is_vec_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = rand_mat(&mut rng, 3, 2);
        let b = rand_mat(&mut rng, 2, 2);
        let r = rearrange(kron(a.as_ref(), b.as_ref()).as_ref(), 3, 2, 2, 2).unwrap();
        let expect = vec_mat(b.as_ref()) * vec_mat(a.as_ref()).transpose();
        assert!(rel_err(r.as_ref(), expect.as_ref()) < 1e-14);
        let back = unrearrange(r.as_ref(), 3, 2, 2, 2).unwrap();
        assert_eq!(back, kron(a.as_ref(), b.as_ref()));

        let one = CMat::identity(1, 1);
        let r = rearrange(kron(one.as_ref(), b.as_ref()).as_ref(), 1, 1, 2, 2).unwrap();
        assert_eq!(r, vec_mat(b.as_ref()));
    }

    #[test]
    fn rearranged_sum_of_two_krons_has_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut c = CMat::zeros(6, 6);
        for _ in 0..2 {
            let a = rand_mat(&mut rng, 3, 2);
            let b = rand_mat(&mut rng, 2, 3);
            c += kron(a.as_ref(), b.as_ref());
        }
        let r = rearrange(c.as_ref(), 3, 2, 2, 3).unwrap();
        assert_eq!(numerical_rank(r.as_ref(), RANK_TOL).unwrap(), 2);
    }

    #[test]
    fn parafac_all_ones_and_unfoldings() {
        let ones = |n| Mat::from_fn(n, 1, |_, _| c64::new(1.0, 0.0));
        let f = ParafacFactors3::new(ones(2), ones(3), ones(4)).unwrap();
        let t = parafac_reconstruct(&f).unwrap();
        assert!(t.data().iter().all(|&x| x == c64::new(1.0, 0.0)));

        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (a, b, c) = (
            rand_mat(&mut rng, 3, 2),
            rand_mat(&mut rng, 4, 2),
            rand_mat(&mut rng, 2, 2),
        );
        let f = ParafacFactors3::new(a.clone(), b.clone(), c.clone()).unwrap();
        let t = parafac_reconstruct(&f).unwrap();
        let oracle = Tensor3::from_fn([3, 4, 2], |i, j, k| {
            (0..2).map(|r| a[(i, r)] * b[(j, r)] * c[(k, r)]).sum()
        });
        assert!(t.dist2(&oracle).sqrt() < 1e-13);
        let m3 = &c * khatri_rao(b.as_ref(), a.as_ref()).unwrap().transpose();
        assert!(rel_err(unfold(&t, Mode::Three).as_ref(), m3.as_ref()) < 1e-12);
        let m2 = &b * khatri_rao(c.as_ref(), a.as_ref()).unwrap().transpose();
        assert!(rel_err(unfold(&t, Mode::Two).as_ref(), m2.as_ref()) < 1e-12);

        assert!(ParafacFactors3::new(a, b, rand_mat(&mut rng, 2, 3)).is_err());
    }

    #[test]
    fn tucker_special_cases_and_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (a, b, c) = (
            rand_mat(&mut rng, 3, 2),
            rand_mat(&mut rng, 4, 2),
            rand_mat(&mut rng, 2, 2),
        );
        let t =
            tucker_reconstruct(&identity_tensor(2), a.as_ref(), b.as_ref(), c.as_ref()).unwrap();
        let p =
            parafac_reconstruct(&ParafacFactors3::new(a.clone(), b.clone(), c.clone()).unwrap())
                .unwrap();
        assert!(t.dist2(&p).sqrt() < 1e-13);

        let g = rand_tensor(&mut rng, [2, 2, 2]);
        let id = CMat::identity(2, 2);
        let same = tucker_reconstruct(&g, id.as_ref(), id.as_ref(), id.as_ref()).unwrap();
        assert_eq!(same, g);

        let t = tucker_reconstruct(&g, a.as_ref(), b.as_ref(), c.as_ref()).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..2 {
                    let mut s = c64::new(0.0, 0.0);
                    for p in 0..2 {
                        for q in 0..2 {
                            for r in 0..2 {
                                s += g.get(p, q, r) * a[(i, p)] * b[(j, q)] * c[(k, r)];
                            }
                        }
                    }
                    assert!((t.get(i, j, k) - s).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn k_rank_cases() {
        assert_eq!(k_rank(CMat::identity(3, 3).as_ref(), RANK_TOL).unwrap(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let base = rand_mat(&mut rng, 4, 2);
        let twin = Mat::from_fn(4, 3, |i, j| base[(i, j.min(1))]);
        assert_eq!(k_rank(twin.as_ref(), RANK_TOL).unwrap(), 1);

        let gens = [0.3, 1.1, 2.0];
        let v = Mat::from_fn(4, 3, |i, j| crate::linalg::cis(gens[j] * i as f64));
        assert_eq!(k_rank(v.as_ref(), RANK_TOL).unwrap(), 3);
        assert!(k_rank(CMat::zeros(2, 9).as_ref(), RANK_TOL).is_err());
    }
}
