//! Kernel-weighted local covariance matrices.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field_sim::LatentSpec;
use crate::kernels::{Kernel, SparseWeights};
use crate::linalg::{checked_inverse, inv_sqrt_spd, symmetrize, CompensatedSum, Mat};
use crate::spatial::{FieldSample, LocationSet};

/// Sample size from which sums are accumulated with compensation.
pub const COMPENSATED_MIN_N: usize = 1000;

/// Relative eigenvalue floor below which a covariance is not whitened.
pub const PD_FLOOR: f64 = 1e-10;

/// `M̂(f) = n⁻¹ Σᵢ Σⱼ f(sᵢ − sⱼ) X(sᵢ) X(sⱼ)ᵀ`, symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCovariance {
    matrix: Mat,
    kernel: Kernel,
    n: usize,
    centered: bool,
}

impl LocalCovariance {
    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn centered(&self) -> bool {
        self.centered
    }

    pub fn into_matrix(self) -> Mat {
        self.matrix
    }
}

impl AsRef<Mat> for LocalCovariance {
    fn as_ref(&self) -> &Mat {
        &self.matrix
    }
}

pub fn local_covariance(sample: &FieldSample, k: &Kernel, centered: bool) -> Result<LocalCovariance> {
    let mut out = local_cov_batch(sample, core::slice::from_ref(k), centered)?;
    Ok(out.pop().expect("one kernel in, one matrix out"))
}

/// Local covariances for several kernels over one pass of the location pairs.
pub fn local_cov_batch(sample: &FieldSample, kernels: &[Kernel], centered: bool) -> Result<Vec<LocalCovariance>> {
    let weights = SparseWeights::batch(kernels, sample.locations());
    local_cov_with_weights(sample.values(), &weights, centered)
}

/// Column means of an `n × p` matrix.
pub fn column_means(values: &Mat) -> Vec<f64> {
    let n = values.nrows() as f64;
    (0..values.ncols())
        .map(|a| {
            let mut s = CompensatedSum::default();
            values.column(a).iter().for_each(|v| s.add(*v));
            s.value() / n
        })
        .collect()
}

/// Local covariances of `values` with precomputed weights, so a fixed
/// location set can be reused across many samples.
pub fn local_cov_with_weights(values: &Mat, weights: &[SparseWeights], centered: bool) -> Result<Vec<LocalCovariance>> {
    let (n, p) = (values.nrows(), values.ncols());
    if let Some(w) = weights.iter().find(|w| w.n() != n) {
        return Err(Error::Dimension(alloc::format!(
            "weights for {} points applied to {n} observations",
            w.n()
        )));
    }
    if centered && n < 2 {
        return Err(Error::TooFewObservations { n, p });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("field values"));
    }
    let means = if centered { column_means(values) } else { alloc::vec![0.0; p] };
    // Row-major copy for contiguous access to X(sᵢ).
    let mut x = Vec::with_capacity(n * p);
    for i in 0..n {
        for a in 0..p {
            x.push(values[(i, a)] - means[a]);
        }
    }
    let compensated = n >= COMPENSATED_MIN_N;
    weights
        .iter()
        .map(|w| {
            let m = weighted_scatter(&x, n, p, w, compensated);
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("local covariance accumulation"));
            }
            Ok(LocalCovariance {
                matrix: m,
                kernel: *w.kernel(),
                n,
                centered,
            })
        })
        .collect()
}

fn weighted_scatter(x: &[f64], n: usize, p: usize, w: &SparseWeights, compensated: bool) -> Mat {
    // Yᵢ = Σⱼ fᵢⱼ Xⱼ, then M = n⁻¹ Σᵢ Xᵢ Yᵢᵀ.
    let mut y = alloc::vec![0.0; n * p];
    let mut acc = alloc::vec![CompensatedSum::default(); p];
    for i in 0..n {
        let yi = &mut y[i * p..(i + 1) * p];
        if compensated {
            acc.iter_mut().for_each(|s| *s = CompensatedSum::default());
            for (j, f) in w.row(i) {
                for a in 0..p {
                    acc[a].add(f * x[j * p + a]);
                }
            }
            for a in 0..p {
                yi[a] = acc[a].value();
            }
        } else {
            for (j, f) in w.row(i) {
                for a in 0..p {
                    yi[a] += f * x[j * p + a];
                }
            }
        }
    }
    let mut m = Mat::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            let v = if compensated {
                let mut s = CompensatedSum::default();
                for i in 0..n {
                    s.add(x[i * p + a] * y[i * p + b]);
                }
                s.value()
            } else {
                (0..n).map(|i| x[i * p + a] * y[i * p + b]).sum()
            };
            m[(a, b)] = v / n as f64;
        }
    }
    symmetrize(&m)
}

/// Diagonal of `Ω⁻¹ M(f) Ω⁻ᵀ`: `dₐ = n⁻¹ Σᵢⱼ f(sᵢ − sⱼ) Kₐ(sᵢ − sⱼ)`.
pub fn population_latent_diag(locs: &LocationSet, latent: &LatentSpec, w: &SparseWeights) -> Vec<f64> {
    let n = locs.n();
    (0..latent.p())
        .map(|a| {
            let mut s = CompensatedSum::default();
            for i in 0..n {
                for (j, f) in w.row(i) {
                    let rho = if i == j { 1.0 } else { latent.correlation(a, locs.distance(i, j)) };
                    s.add(f * rho);
                }
            }
            s.value() / n as f64
        })
        .collect()
}

/// Expectation `M(f) = Ω diag(d) Ωᵀ` of the local covariance under the latent model.
pub fn population_local_cov(locs: &LocationSet, latent: &LatentSpec, omega: &Mat, k: &Kernel) -> Result<Mat> {
    let p = latent.p();
    if omega.nrows() != p || omega.ncols() != p {
        return Err(Error::Dimension(alloc::format!(
            "mixing matrix is {}×{} for {p} components",
            omega.nrows(),
            omega.ncols()
        )));
    }
    checked_inverse(omega)?;
    let d = population_latent_diag(locs, latent, &SparseWeights::new(k, locs));
    let scaled = Mat::from_fn(p, p, |i, j| omega[(i, j)] * d[j]);
    Ok(symmetrize(&(scaled * omega.transpose())))
}

/// `W = M₀^{−1/2}`.
pub fn whitener(m0: &Mat) -> Result<Mat> {
    inv_sqrt_spd(m0, PD_FLOOR)
}
