//! Thin wrappers over `faer` for the dense complex algebra used by the
//! estimators: truncated SVD, cutoff pseudoinverse and numerical rank.

use faer::{c64, Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Dense column-major complex matrix.
pub type CMat = Mat<c64>;

/// Relative singular-value threshold for numerical rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// Relative cutoff used by least-squares pseudoinverses.
pub const PINV_RCOND: f64 = 1e-10;

pub fn czero() -> c64 {
    c64::new(0.0, 0.0)
}

pub fn cis(phase: f64) -> c64 {
    c64::new(phase.cos(), phase.sin())
}

/// Thin SVD `a = U diag(s) Vᴴ` with singular values in nonincreasing order.
pub fn svd(a: MatRef<'_, c64>) -> Result<(CMat, Vec<f64>, CMat)> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok((
            Mat::zeros(a.nrows(), 0),
            Vec::new(),
            Mat::zeros(a.ncols(), 0),
        ));
    }
    let s = a
        .thin_svd()
        .map_err(|e| Error::Decomposition(format!("svd: {e:?}")))?;
    let sv = s.S().column_vector().iter().map(|x| x.re).collect();
    Ok((s.U().to_owned(), sv, s.V().to_owned()))
}

/// Leading `k` singular triplets.
pub fn truncated_svd(a: MatRef<'_, c64>, k: usize) -> Result<(CMat, Vec<f64>, CMat)> {
    let (u, s, v) = svd(a)?;
    let k = k.min(s.len());
    Ok((
        u.subcols(0, k).to_owned(),
        s[..k].to_vec(),
        v.subcols(0, k).to_owned(),
    ))
}

pub fn singular_values(a: MatRef<'_, c64>) -> Result<Vec<f64>> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(Vec::new());
    }
    a.singular_values()
        .map_err(|e| Error::Decomposition(format!("svd: {e:?}")))
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(a: MatRef<'_, c64>, rel_tol: f64) -> Result<usize> {
    let s = singular_values(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&x| x > rel_tol * smax).count())
}

/// Pseudoinverse together with the number of singular values discarded by the
/// relative cutoff.
pub struct Pinv {
    pub mat: CMat,
    pub dropped: usize,
}

pub fn pinv(a: MatRef<'_, c64>, rcond: f64) -> Result<Pinv> {
    let (u, s, v) = svd(a)?;
    let smax = s.first().copied().unwrap_or(0.0);
    let mut dropped = 0;
    let mut vs = v.clone();
    for (j, &sj) in s.iter().enumerate() {
        let inv = if smax > 0.0 && sj > rcond * smax {
            1.0 / sj
        } else {
            dropped += 1;
            0.0
        };
        for i in 0..vs.nrows() {
            vs[(i, j)] *= inv;
        }
    }
    Ok(Pinv {
        mat: &vs * u.adjoint(),
        dropped,
    })
}

/// Squared Frobenius norm.
pub fn frob2(a: MatRef<'_, c64>) -> f64 {
    let n = a.norm_l2();
    n * n
}

/// Column `j` of `a` copied into a vector.
pub fn col_vec(a: MatRef<'_, c64>, j: usize) -> Vec<c64> {
    a.col(j).iter().copied().collect()
}

/// `n × 1` matrix holding `v`.
pub fn col_mat(v: &[c64]) -> CMat {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

/// Matrix whose columns are the given equal-length vectors.
pub fn from_columns(cols: &[Vec<c64>], rows: usize) -> CMat {
    Mat::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Inverse (or pseudo-inverse) of a Hermitian positive semidefinite matrix via
/// its eigendecomposition. Also returns the eigenvalue condition number.
pub fn hermitian_pinv(a: MatRef<'_, c64>, rcond: f64) -> Result<(CMat, f64)> {
    let n = a.nrows();
    let e = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Decomposition(format!("eigen: {e:?}")))?;
    let vals: Vec<f64> = e.S().column_vector().iter().map(|x| x.re).collect();
    let lmax = vals.iter().cloned().fold(0.0_f64, f64::max);
    let lmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if lmin > 0.0 {
        lmax / lmin
    } else {
        f64::INFINITY
    };
    let u = e.U();
    let mut us = u.to_owned();
    for (j, &l) in vals.iter().enumerate() {
        let inv = if l > rcond * lmax { 1.0 / l } else { 0.0 };
        for i in 0..n {
            us[(i, j)] *= inv;
        }
    }
    Ok((&us * u.adjoint(), cond))
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖` (absolute when `b` is zero).
pub fn rel_err(a: MatRef<'_, c64>, b: MatRef<'_, c64>) -> f64 {
    let d = (a - b).norm_l2();
    let nb = b.norm_l2();
    if nb == 0.0 {
        d
    } else {
        d / nb
    }
}

/// `|⟨a, b⟩| / (‖a‖‖b‖)`, the cosine of the angle between two vectors.
pub fn collinearity(a: &[c64], b: &[c64]) -> f64 {
    let mut ip = czero();
    let (mut na, mut nb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ip += x.conj() * y;
        na += x.norm_sqr();
        nb += y.norm_sqr();
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ip.norm() / (na.sqrt() * nb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(r: usize, c: usize, seed: u64) -> CMat {
        let mut s = seed;
        Mat::from_fn(r, c, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let a = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let b = ((s >> 11) as f64) / ((1u64 << 53) as f64) - 0.5;
            c64::new(a, b)
        })
    }

    #[test]
    fn pinv_of_full_column_rank_is_left_inverse() {
        let a = sample(7, 3, 1);
        let p = pinv(a.as_ref(), PINV_RCOND).unwrap();
        let id = &p.mat * &a;
        assert_eq!(p.dropped, 0);
        assert!(rel_err(id.as_ref(), CMat::identity(3, 3).as_ref()) < 1e-12);
    }

    #[test]
    fn rank_of_outer_product_is_one() {
        let a = sample(5, 1, 2);
        let b = sample(1, 4, 3);
        let m = &a * &b;
        assert_eq!(numerical_rank(m.as_ref(), RANK_TOL).unwrap(), 1);
        assert_eq!(
            numerical_rank(CMat::zeros(3, 3).as_ref(), RANK_TOL).unwrap(),
            0
        );
    }

    #[test]
    fn hermitian_pinv_inverts_gram() {
        let a = sample(9, 4, 4);
        let g = a.adjoint() * &a;
        let (gi, cond) = hermitian_pinv(g.as_ref(), 1e-14).unwrap();
        assert!(cond.is_finite());
        let id = &gi * &g;
        assert!(rel_err(id.as_ref(), CMat::identity(4, 4).as_ref()) < 1e-10);
    }
}
