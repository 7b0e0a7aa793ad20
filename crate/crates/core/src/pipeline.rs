//! End-to-end estimation: data in, unmixing matrix and latent scores out.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::diagonalizer::{joint_diagonalize, pair_diagonalize, JointDiagConfig, UnmixingResult};
use crate::error::{Error, Result};
use crate::kernels::{validate_kernel_list, Kernel, SparseWeights};
use crate::linalg::Mat;
use crate::local_cov::{column_means, local_cov_with_weights};
use crate::spatial::{FieldSample, LocationSet};

/// A fitted unmixing model.
#[derive(Debug, Clone, PartialEq)]
pub struct SbssFit {
    pub unmixing: UnmixingResult,
    /// `f₁ … f_k`; the covariance anchor is implicit.
    pub kernels: Vec<Kernel>,
    /// Subtracted column means; zeros when fitted uncentered.
    pub column_means: DVector<f64>,
    pub centered: bool,
    /// Estimated latent components, one column per component.
    pub scores: Mat,
}

impl SbssFit {
    pub fn gamma(&self) -> &Mat {
        &self.unmixing.gamma
    }
}

/// Kernel weights for a fixed location set, reusable across samples.
#[derive(Debug, Clone)]
pub struct Sbss {
    kernels: Vec<Kernel>,
    /// Identity weights first, then one set per kernel.
    weights: Vec<SparseWeights>,
}

impl Sbss {
    pub fn new(locs: &LocationSet, kernels: &[Kernel]) -> Result<Self> {
        validate_kernel_list(kernels)?;
        let mut all = Vec::with_capacity(kernels.len() + 1);
        all.push(Kernel::Identity);
        all.extend_from_slice(kernels);
        Ok(Self {
            kernels: kernels.to_vec(),
            weights: SparseWeights::batch(&all, locs),
        })
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn n(&self) -> usize {
        self.weights[0].n()
    }

    /// Fits an `n × p` value matrix observed at this location set.
    pub fn fit_values(&self, values: &Mat, centered: bool, cfg: &JointDiagConfig) -> Result<SbssFit> {
        let (n, p) = (values.nrows(), values.ncols());
        if n != self.n() {
            return Err(Error::Dimension(alloc::format!(
                "{n} observations for {} locations",
                self.n()
            )));
        }
        if n <= p {
            return Err(Error::TooFewObservations { n, p });
        }
        let covs = local_cov_with_weights(values, &self.weights, centered)?;
        let mut mats = covs.into_iter().map(|c| c.into_matrix());
        let m0 = mats.next().expect("anchor covariance");
        let ms: Vec<Mat> = mats.collect();
        let unmixing = if ms.len() == 1 {
            pair_diagonalize(&m0, &ms[0])?
        } else {
            joint_diagonalize(&m0, &ms, cfg)?
        };
        let means = if centered {
            DVector::from_vec(column_means(values))
        } else {
            DVector::zeros(p)
        };
        let scores = apply_unmixing(values, &means, &unmixing.gamma);
        Ok(SbssFit {
            unmixing,
            kernels: self.kernels.clone(),
            column_means: means,
            centered,
            scores,
        })
    }
}

fn apply_unmixing(values: &Mat, means: &DVector<f64>, gamma: &Mat) -> Mat {
    let mut x = values.clone();
    for (a, m) in means.iter().enumerate() {
        x.column_mut(a).add_scalar_mut(-m);
    }
    x * gamma.transpose()
}

/// Estimates the unmixing matrix from `M̂(f₀)` and `M̂(f₁) … M̂(f_k)`.
pub fn fit(sample: &FieldSample, kernels: &[Kernel], centered: bool, cfg: &JointDiagConfig) -> Result<SbssFit> {
    Sbss::new(sample.locations(), kernels)?.fit_values(sample.values(), centered, cfg)
}

/// Scores `(X − X̄) Γ̂ᵀ` of new observations using the fitted means.
pub fn transform(fit: &SbssFit, sample: &FieldSample) -> Result<Mat> {
    if sample.p() != fit.column_means.len() {
        return Err(Error::Dimension(alloc::format!(
            "model has {} variables, sample has {}",
            fit.column_means.len(),
            sample.p()
        )));
    }
    Ok(apply_unmixing(sample.values(), &fit.column_means, &fit.unmixing.gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy() -> FieldSample {
        let locs = crate::spatial::gen_diamond_grid(4);
        let n = locs.n();
        let values = Mat::from_fn(n, 2, |i, j| libm::sin(i as f64 * (0.3 + j as f64)) + 0.1 * j as f64);
        FieldSample::new(locs, values).unwrap()
    }

    #[test]
    fn scalar_case_standardizes() {
        let s = toy();
        let x = s.values().column(0).into_owned();
        let one = FieldSample::new(s.locations().clone(), Mat::from_column_slice(x.len(), 1, x.as_slice())).unwrap();
        let f = fit(&one, &[Kernel::Ball(1.0)], false, &JointDiagConfig::default()).unwrap();
        let m0 = x.dot(&x) / x.len() as f64;
        assert!((f.gamma()[(0, 0)] - 1.0 / m0.sqrt()).abs() < 1e-14);
        let second: f64 = f.scores.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert!((second - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_reproduces_scores() {
        let s = toy();
        for centered in [false, true] {
            let f = fit(&s, &[Kernel::Ring(1.0, 2.0)], centered, &JointDiagConfig::default()).unwrap();
            assert_eq!(transform(&f, &s).unwrap(), f.scores);
        }
    }

    #[test]
    fn transform_single_row() {
        let s = toy();
        let f = fit(&s, &[Kernel::Ball(1.0), Kernel::Ring(1.0, 2.0)], true, &JointDiagConfig::default()).unwrap();
        let row = FieldSample::new(
            LocationSet::from_rows(2, vec![100.0, 100.0]).unwrap(),
            Mat::from_row_slice(1, 2, &[0.7, -0.2]),
        )
        .unwrap();
        let got = transform(&f, &row).unwrap();
        for j in 0..2 {
            let want = f.gamma()[(j, 0)] * (0.7 - f.column_means[0]) + f.gamma()[(j, 1)] * (-0.2 - f.column_means[1]);
            assert!((got[(0, j)] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_kernel_lists_and_small_n() {
        let s = toy();
        let cfg = JointDiagConfig::default();
        assert_eq!(fit(&s, &[], false, &cfg).unwrap_err(), Error::EmptyKernelList);
        assert_eq!(fit(&s, &[Kernel::Identity], false, &cfg).unwrap_err(), Error::IdentityKernelInList);
        let tiny = FieldSample::new(
            LocationSet::from_rows(1, vec![0.0, 1.0]).unwrap(),
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert_eq!(
            fit(&tiny, &[Kernel::Ball(1.0)], false, &cfg).unwrap_err(),
            Error::TooFewObservations { n: 2, p: 2 }
        );
    }
}
