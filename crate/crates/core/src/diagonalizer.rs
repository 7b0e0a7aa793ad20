//! Exact pair diagonalization and approximate joint diagonalization of
//! local covariance matrices under the whitening constraint.

use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{fix_sign, is_symmetric, sym_eigen_desc, symmetrize, Mat};
use crate::local_cov::whitener;

/// Relative tolerance for accepting input matrices as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Stopping rule of the Givens sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointDiagConfig {
    pub max_sweeps: usize,
    /// Relative criterion increase per sweep below which the sweeps may stop.
    pub tol: f64,
    /// Rotations with smaller angles are skipped.
    pub rotation_threshold: f64,
    /// Largest rotation angle a sweep may apply and still count as converged.
    pub angle_tol: f64,
}

impl Default for JointDiagConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            tol: 1e-12,
            rotation_threshold: 1e-14,
            angle_tol: 1e-12,
        }
    }
}

impl JointDiagConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if self.max_sweeps == 0 || !pos(self.tol) || !pos(self.rotation_threshold) || !pos(self.angle_tol) {
            return Err(Error::InvalidParameter("joint diagonalization settings must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagStatus {
    Converged,
    /// The sweep budget ran out first; the result is still usable.
    MaxSweepsReached,
}

/// Estimated unmixing matrix with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct UnmixingResult {
    /// `Γ̂`; row `j` is the unmixing vector of component `j`.
    pub gamma: Mat,
    /// Diagonal of `Γ̂ M̂(f_l) Γ̂ᵀ` for each kernel `l`.
    pub lambdas: Vec<DVector<f64>>,
    /// Sum of squared diagonals over all kernels.
    pub criterion: f64,
    pub sweeps: usize,
    /// Output row `i` came from row `canonical_perm[i]` of the raw solution.
    pub canonical_perm: Vec<usize>,
    /// Sign applied to output row `i`.
    pub canonical_signs: Vec<f64>,
    pub status: DiagStatus,
    /// Two rows had equal ordering keys, so the order fell back to row entries.
    pub ties: bool,
    /// Criterion before the first sweep and after each sweep.
    pub trace: Vec<f64>,
}

/// `Σ_l Σ_j (γⱼᵀ M_l γⱼ)²`.
pub fn criterion(gamma: &Mat, ms: &[Mat]) -> f64 {
    ms.iter()
        .map(|m| (0..gamma.nrows()).map(|j| quad_row(gamma, j, m).powi(2)).sum::<f64>())
        .sum()
}

/// `γⱼᵀ M γⱼ`, depending on row `j` alone.
fn quad_row(gamma: &Mat, j: usize, m: &Mat) -> f64 {
    let p = gamma.ncols();
    let mut s = 0.0;
    for a in 0..p {
        let mut t = 0.0;
        for b in 0..p {
            t += m[(a, b)] * gamma[(j, b)];
        }
        s += gamma[(j, a)] * t;
    }
    s
}

/// Result of [`canonicalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Canonical {
    pub gamma: Mat,
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
    pub ties: bool,
}

/// Puts rows in canonical order and sign. Each row is flipped so its entries
/// sum to a nonnegative value. With one matrix rows are sorted by decreasing
/// `γⱼᵀ M γⱼ`; with several, by decreasing `Σ_l (γⱼᵀ M_l γⱼ)²`. Equal keys
/// fall back to decreasing lexicographic order of the rows.
pub fn canonicalize(gamma: &Mat, ms: &[Mat]) -> Canonical {
    let (p, q) = (gamma.nrows(), gamma.ncols());
    let mut rows: Vec<(usize, f64, f64, Vec<f64>)> = (0..p)
        .map(|j| {
            let mut r: Vec<f64> = gamma.row(j).iter().copied().collect();
            fix_sign(&mut r);
            let sign = if r.iter().zip(gamma.row(j).iter()).any(|(a, b)| *a != *b) {
                -1.0
            } else {
                1.0
            };
            let key = if ms.len() == 1 {
                quad_row(gamma, j, &ms[0])
            } else {
                ms.iter().map(|m| quad_row(gamma, j, m).powi(2)).sum()
            };
            (j, sign, key, r)
        })
        .collect();
    let by_rows = |a: &[f64], b: &[f64]| {
        for (x, y) in a.iter().zip(b) {
            match y.total_cmp(x) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    };
    rows.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| by_rows(&a.3, &b.3)));
    let ties = rows.windows(2).any(|w| {
        let scale = w[0].2.abs().max(w[1].2.abs()).max(f64::MIN_POSITIVE);
        (w[0].2 - w[1].2).abs() <= 1e-12 * scale
    });
    Canonical {
        gamma: Mat::from_fn(p, q, |i, j| rows[i].3[j]),
        perm: rows.iter().map(|r| r.0).collect(),
        signs: rows.iter().map(|r| r.1).collect(),
        ties,
    }
}

fn check_inputs(m0: &Mat, ms: &[Mat]) -> Result<usize> {
    let p = m0.nrows();
    if p == 0 || !m0.is_square() {
        return Err(Error::Dimension("covariance must be a nonempty square matrix".into()));
    }
    for m in core::iter::once(m0).chain(ms) {
        if m.nrows() != p || m.ncols() != p {
            return Err(Error::Dimension(alloc::format!(
                "local covariance is {}×{}, expected {p}×{p}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("local covariance"));
        }
        if !is_symmetric(m, SYMMETRY_TOL) {
            return Err(Error::Asymmetric);
        }
    }
    Ok(p)
}

fn finish(pre: &Mat, ms: &[Mat], sweeps: usize, status: DiagStatus, trace: Vec<f64>) -> UnmixingResult {
    let c = canonicalize(pre, ms);
    let lambdas = ms
        .iter()
        .map(|m| DVector::from_iterator(c.gamma.nrows(), (0..c.gamma.nrows()).map(|j| quad_row(&c.gamma, j, m))))
        .collect();
    UnmixingResult {
        criterion: criterion(&c.gamma, ms),
        gamma: c.gamma,
        lambdas,
        sweeps,
        canonical_perm: c.perm,
        canonical_signs: c.signs,
        status,
        ties: c.ties,
        trace,
    }
}

/// Solves `Γ M₀ Γᵀ = I`, `Γ M_f Γᵀ = Λ` with `Λ` diagonal and decreasing.
pub fn pair_diagonalize(m0: &Mat, mf: &Mat) -> Result<UnmixingResult> {
    check_inputs(m0, core::slice::from_ref(mf))?;
    let w = whitener(m0)?;
    let (_, u) = sym_eigen_desc(&symmetrize(&(&w * mf * &w)));
    let pre = u.transpose() * w;
    Ok(finish(&pre, core::slice::from_ref(mf), 0, DiagStatus::Converged, Vec::new()))
}

/// Maximizes `Σ_l Σ_j (γⱼᵀ M_l γⱼ)²` subject to `Γ M₀ Γᵀ = I` by cyclic
/// Givens sweeps on the whitened matrices.
pub fn joint_diagonalize(m0: &Mat, ms: &[Mat], cfg: &JointDiagConfig) -> Result<UnmixingResult> {
    if ms.is_empty() {
        return Err(Error::EmptyKernelList);
    }
    cfg.validate()?;
    let p = check_inputs(m0, ms)?;
    let w = whitener(m0)?;
    let mut rs: Vec<Mat> = ms.iter().map(|m| symmetrize(&(&w * m * &w))).collect();
    let mut u = Mat::identity(p, p);
    let diag_sq = |rs: &[Mat]| -> f64 { rs.iter().map(|r| r.diagonal().iter().map(|d| d * d).sum::<f64>()).sum() };
    let mut trace = alloc::vec![diag_sq(&rs)];
    let mut status = DiagStatus::MaxSweepsReached;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut largest = 0.0f64;
        for i in 0..p {
            for j in (i + 1)..p {
                let theta = givens_angle(&rs, i, j);
                if theta.abs() < cfg.rotation_threshold {
                    continue;
                }
                largest = largest.max(theta.abs());
                let (s, c) = libm::sincos(theta);
                for r in rs.iter_mut() {
                    rotate_rows(r, i, j, c, s);
                    rotate_cols(r, i, j, c, s);
                }
                rotate_rows(&mut u, i, j, c, s);
            }
        }
        let now = diag_sq(&rs);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(now);
        if (now - prev) <= cfg.tol * prev.abs() && largest <= cfg.angle_tol {
            status = DiagStatus::Converged;
            break;
        }
    }
    let pre = u * w;
    Ok(finish(&pre, ms, sweeps, status, trace))
}

/// Angle maximizing the sum of squared diagonals after rotating the
/// `(i, j)` plane of every matrix.
fn givens_angle(rs: &[Mat], i: usize, j: usize) -> f64 {
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for r in rs {
        let g1 = r[(i, i)] - r[(j, j)];
        let g2 = r[(i, j)] + r[(j, i)];
        a += g1 * g1;
        b += g1 * g2;
        c += g2 * g2;
    }
    0.25 * libm::atan2(2.0 * b, a - c)
}

fn rotate_rows(m: &mut Mat, i: usize, j: usize, c: f64, s: f64) {
    for k in 0..m.ncols() {
        let (x, y) = (m[(i, k)], m[(j, k)]);
        m[(i, k)] = c * x + s * y;
        m[(j, k)] = -s * x + c * y;
    }
}

fn rotate_cols(m: &mut Mat, i: usize, j: usize, c: f64, s: f64) {
    for k in 0..m.nrows() {
        let (x, y) = (m[(k, i)], m[(k, j)]);
        m[(k, i)] = c * x + s * y;
        m[(k, j)] = -s * x + c * y;
    }
}

/// Outcome of [`identifiability_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Identifiability {
    pub identifiable: bool,
    /// First pair of components (0-based) no matrix separates.
    pub offending: Option<(usize, usize)>,
}

/// Every pair of components must differ by at least `delta` on the diagonal
/// of some matrix.
pub fn identifiability_check(ds: &[Mat], delta: f64) -> Identifiability {
    let diags: Vec<Vec<f64>> = ds.iter().map(|d| d.diagonal().iter().copied().collect()).collect();
    identifiability_check_diags(&diags, delta)
}

/// [`identifiability_check`] on diagonals given directly.
pub fn identifiability_check_diags(diags: &[Vec<f64>], delta: f64) -> Identifiability {
    let p = diags.first().map_or(0, Vec::len);
    for i in 0..p {
        for j in (i + 1)..p {
            if !diags.iter().any(|d| (d[i] - d[j]).abs() >= delta) {
                return Identifiability {
                    identifiable: false,
                    offending: Some((i, j)),
                };
            }
        }
    }
    Identifiability {
        identifiable: true,
        offending: None,
    }
}
