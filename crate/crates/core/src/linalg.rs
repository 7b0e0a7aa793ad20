//! Small dense helpers on top of nalgebra shared by the estimators.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// `(m + mᵀ) / 2`, exactly symmetric.
pub fn symmetrize(m: &Mat) -> Mat {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)]) / 2.0)
}

pub fn frobenius(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn is_symmetric(m: &Mat, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Row vectorization: row 1 first, then row 2, and so on.
pub fn vect(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Flips `v` so its entries sum to a nonnegative value; an exactly zero sum
/// falls back to making the first nonzero entry positive.
pub fn fix_sign(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    let flip = if sum != 0.0 {
        sum < 0.0
    } else {
        v.iter().find(|x| **x != 0.0).is_some_and(|x| *x < 0.0)
    };
    if flip {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
/// Eigenvectors are the columns of the returned matrix, sign-fixed with
/// [`fix_sign`]. Ties keep the lexicographically larger eigenvector first.
pub fn sym_eigen_desc(m: &Mat) -> (DVector<f64>, Mat) {
    let n = m.nrows();
    let eig = symmetrize(m).symmetric_eigen();
    let mut cols: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            fix_sign(&mut v);
            (eig.eigenvalues[c], v)
        })
        .collect();
    cols.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| {
            for (x, y) in a.1.iter().zip(&b.1) {
                match y.total_cmp(x) {
                    core::cmp::Ordering::Equal => continue,
                    o => return o,
                }
            }
            core::cmp::Ordering::Equal
        })
    });
    let values = DVector::from_iterator(n, cols.iter().map(|c| c.0));
    let vectors = Mat::from_fn(n, n, |i, j| cols[j].1[i]);
    (values, vectors)
}

/// `m^{-1/2}` of a symmetric positive definite matrix. Fails when the
/// smallest eigenvalue is at most `rel_floor` times the largest.
pub fn inv_sqrt_spd(m: &Mat, rel_floor: f64) -> Result<Mat> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to whiten"));
    }
    let (vals, vecs) = sym_eigen_desc(m);
    let n = vals.len();
    let largest = vals[0];
    let smallest = vals[n - 1];
    if largest.is_nan() || largest <= 0.0 || smallest <= rel_floor * largest {
        return Err(Error::NotPositiveDefinite { component: None });
    }
    let scaled = Mat::from_fn(n, n, |i, j| vecs[(i, j)] / vals[j].sqrt());
    Ok(symmetrize(&(scaled * vecs.transpose())))
}

/// Inverse that rejects numerically singular input (reciprocal condition
/// number below `1e-12`).
pub fn checked_inverse(m: &Mat) -> Result<Mat> {
    if !m.is_square() {
        return Err(Error::Dimension(alloc::format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix to invert"));
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if max.is_nan() || max <= 0.0 || min / max < 1e-12 {
        return Err(Error::Singular);
    }
    m.clone().try_inverse().ok_or(Error::Singular)
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
