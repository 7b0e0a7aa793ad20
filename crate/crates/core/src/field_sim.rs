//! Gaussian random fields with Matérn covariances and their linear mixtures.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::Cholesky;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{checked_inverse, Mat};
use crate::spatial::{FieldSample, LocationSet};
use crate::special::bessel_k_scaled;

/// Matérn shape `κ` and range `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    kappa: f64,
    phi: f64,
}

impl MaternParams {
    pub fn new(kappa: f64, phi: f64) -> Result<Self> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(kappa) || !ok(phi) {
            return Err(Error::InvalidParameter(format!(
                "Matérn parameters must be positive and finite, got κ = {kappa}, φ = {phi}"
            )));
        }
        Ok(Self { kappa, phi })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Matérn correlation `2^{1−κ} Γ(κ)⁻¹ (h/φ)^κ K_κ(h/φ)`, exactly `1` at `h = 0`.
pub fn matern(h: f64, params: &MaternParams) -> f64 {
    if h == 0.0 {
        return 1.0;
    }
    let k = params.kappa;
    let x = h / params.phi;
    let log_pre = (1.0 - k) * core::f64::consts::LN_2 - libm::lgamma(k) + k * libm::log(x) - x;
    let v = libm::exp(log_pre) * bessel_k_scaled(k, x);
    // Rounding can push the value a hair above 1 for tiny lags.
    v.min(1.0)
}

/// Unit-variance Matérn covariance of each latent component.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpec {
    components: Vec<MaternParams>,
}

impl LatentSpec {
    pub fn new(components: Vec<MaternParams>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("latent spec needs at least one component".into()));
        }
        Ok(Self { components })
    }

    /// Builds a spec from `(κ, φ)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(k, p)| MaternParams::new(k, p))
                .collect::<Result<_>>()?,
        )
    }

    /// `(κ, φ)` = (6, 1.2), (1, 1.5), (0.25, 1).
    pub fn sim1() -> Self {
        Self::from_pairs(&[(6.0, 1.2), (1.0, 1.5), (0.25, 1.0)]).expect("valid preset")
    }

    /// `κ` = 2, 1, 0.25 with a shared range `φ`.
    pub fn sim2(phi: f64) -> Result<Self> {
        Self::from_pairs(&[(2.0, phi), (1.0, phi), (0.25, phi)])
    }

    /// `κ` = 6, 1, 0.25 with range 20.
    pub fn sim3() -> Self {
        Self::from_pairs(&[(6.0, 20.0), (1.0, 20.0), (0.25, 20.0)]).expect("valid preset")
    }

    pub fn p(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[MaternParams] {
        &self.components
    }

    /// Correlation of component `a` at lag length `h`.
    pub fn correlation(&self, a: usize, h: f64) -> f64 {
        matern(h, &self.components[a])
    }

    /// `n × n` correlation matrix of component `a`; exactly symmetric.
    pub fn correlation_matrix(&self, a: usize, locs: &LocationSet) -> Mat {
        let n = locs.n();
        let mut c = Mat::identity(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = self.correlation(a, locs.distance(i, j));
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        c
    }
}

/// Jitter values tried, in order, when a correlation matrix fails to factor.
pub fn jitter_schedule() -> impl Iterator<Item = f64> {
    core::iter::once(0.0)
        .chain((0..14).map(|m| 1e-12 * (1u64 << m) as f64))
        .chain(core::iter::once(1e-8))
}

/// Cholesky factors of the component correlation matrices over a fixed
/// location set, reusable across replications.
#[derive(Debug, Clone)]
pub struct LatentSimulator {
    locations: LocationSet,
    factors: Vec<Mat>,
    jitter: Vec<f64>,
}

impl LatentSimulator {
    pub fn new(locs: &LocationSet, spec: &LatentSpec) -> Result<Self> {
        let mut factors = Vec::with_capacity(spec.p());
        let mut jitter = Vec::with_capacity(spec.p());
        for a in 0..spec.p() {
            let c = spec.correlation_matrix(a, locs);
            let (l, used) = factor_with_jitter(&c).ok_or(Error::NotPositiveDefinite { component: Some(a) })?;
            factors.push(l);
            jitter.push(used);
        }
        Ok(Self {
            locations: locs.clone(),
            factors,
            jitter,
        })
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locations
    }

    /// Diagonal jitter added to each component's correlation matrix.
    pub fn jitter(&self) -> &[f64] {
        &self.jitter
    }

    pub fn p(&self) -> usize {
        self.factors.len()
    }

    /// One draw of the latent field as an `n × p` matrix.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Mat {
        let n = self.locations.n();
        let p = self.factors.len();
        let mut z = Mat::zeros(n, p);
        let mut eps = alloc::vec![0.0; n];
        for (a, l) in self.factors.iter().enumerate() {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            // z = L ε with L lower triangular; column-major walk over L.
            for (k, &ek) in eps.iter().enumerate() {
                let col = l.column(k);
                for i in k..n {
                    z[(i, a)] += col[i] * ek;
                }
            }
        }
        z
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldSample {
        FieldSample::new(self.locations.clone(), self.draw(rng)).expect("finite draws match the location count")
    }
}

fn factor_with_jitter(c: &Mat) -> Option<(Mat, f64)> {
    for jit in jitter_schedule() {
        let mut m = c.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jit;
        }
        if let Some(ch) = Cholesky::new(m) {
            return Some((ch.unpack(), jit));
        }
    }
    None
}

/// Simulates the latent field `Z` at `locs`.
pub fn simulate_latent<R: Rng + ?Sized>(locs: &LocationSet, spec: &LatentSpec, rng: &mut R) -> Result<FieldSample> {
    Ok(LatentSimulator::new(locs, spec)?.simulate(rng))
}

/// `X = Ω Z` row by row.
pub fn mix(z: &FieldSample, omega: &Mat) -> Result<FieldSample> {
    if omega.nrows() != z.p() || omega.ncols() != z.p() {
        return Err(Error::Dimension(format!(
            "mixing matrix is {}×{} for {} variables",
            omega.nrows(),
            omega.ncols(),
            z.p()
        )));
    }
    checked_inverse(omega)?;
    let x = if *omega == Mat::identity(z.p(), z.p()) {
        z.values().clone()
    } else {
        z.values() * omega.transpose()
    };
    FieldSample::new(z.locations().clone(), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::bessel_k;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matern_reductions() {
        let p = MaternParams::new(0.5, 2.0).unwrap();
        for &x in &[0.1, 1.0, 5.0] {
            assert!((matern(x * 2.0, &p) - libm::exp(-x)).abs() < 1e-12);
        }
        assert_eq!(matern(0.0, &MaternParams::new(6.0, 1.2).unwrap()), 1.0);

        // K_{3/2}(x) = √(π/2x) e^{−x}(1 + 1/x) plugged into the correlation formula.
        let p = MaternParams::new(1.5, 1.0).unwrap();
        let x = 1.0f64;
        let k32 = (core::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() * (1.0 + 1.0 / x);
        let want = 2f64.powf(-0.5) / libm::tgamma(1.5) * x.powf(1.5) * k32;
        assert!((matern(1.0, &p) - want).abs() < 1e-13);
        assert!((want - (1.0 + x) * (-x).exp()).abs() < 1e-13);
    }

    #[test]
    fn matern_agrees_with_direct_formula() {
        for &(k, phi) in &[(0.25, 1.0), (1.0, 1.5), (6.0, 1.2), (2.0, 20.0)] {
            let p = MaternParams::new(k, phi).unwrap();
            for &h in &[0.01, 0.3, 1.0, 2.5, 7.0] {
                let x: f64 = h / phi;
                let want = 2f64.powf(1.0 - k) / libm::tgamma(k) * x.powf(k) * bessel_k(k, x);
                assert!(((matern(h, &p) - want) / want).abs() < 1e-12, "k={k} h={h}");
            }
        }
    }

    #[test]
    fn matern_monotone() {
        for &(k, phi) in &[(0.25, 1.0), (1.0, 1.5), (6.0, 1.2), (10.0, 0.5)] {
            let p = MaternParams::new(k, phi).unwrap();
            let mut prev = matern(0.0, &p);
            for i in 1..=1000 {
                let v = matern(i as f64 * 0.01, &p);
                assert!(v <= prev && v > 0.0, "k={k} i={i}");
                prev = v;
            }
        }
    }

    #[test]
    fn invalid_params() {
        assert!(MaternParams::new(0.0, 1.0).is_err());
        assert!(MaternParams::new(1.0, f64::INFINITY).is_err());
        assert!(LatentSpec::new(Vec::new()).is_err());
    }

    #[test]
    fn single_point_draws_standard_normals() {
        let l = LocationSet::from_rows(2, alloc::vec![0.0, 0.0]).unwrap();
        let spec = LatentSpec::sim1();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let z = simulate_latent(&l, &spec, &mut a).unwrap();
        for k in 0..3 {
            let e: f64 = b.sample(StandardNormal);
            assert_eq!(z.values()[(0, k)], e);
        }
    }

    #[test]
    fn jitter_schedule_bounds() {
        let j: Vec<f64> = jitter_schedule().collect();
        assert_eq!(j[0], 0.0);
        assert_eq!(j[1], 1e-12);
        assert_eq!(*j.last().unwrap(), 1e-8);
        assert!(j.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn simulation_is_deterministic() {
        let l = crate::spatial::gen_diamond_grid(4);
        let spec = LatentSpec::sim1();
        let a = simulate_latent(&l, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = simulate_latent(&l, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mix_examples() {
        let l = crate::spatial::gen_diamond_grid(2);
        let z = simulate_latent(&l, &LatentSpec::sim1(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(mix(&z, &Mat::identity(3, 3)).unwrap(), z);
        let d = Mat::from_diagonal(&nalgebra::DVector::from_vec(alloc::vec![2.0, 1.0, 1.0]));
        let x = mix(&z, &d).unwrap();
        for i in 0..z.n() {
            assert_eq!(x.values()[(i, 0)], 2.0 * z.values()[(i, 0)]);
            assert_eq!(x.values()[(i, 1)], z.values()[(i, 1)]);
        }
        let omega = Mat::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.5, 2.0, 0.1, -0.4, 0.2, 1.5]);
        let x = mix(&z, &omega).unwrap();
        let back = x.values() * checked_inverse(&omega).unwrap().transpose();
        assert!((back - z.values()).abs().max() < 1e-12);
        assert!(mix(&z, &Mat::zeros(3, 3)).is_err());
    }
}
