//! Lag-weight kernels and their weight matrices over a location set.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::spatial::LocationSet;
use crate::special::norm_quantile;

/// A radially symmetric lag-weight function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// Point mass at lag zero; yields the covariance matrix.
    Identity,
    /// `1` for lags of length at most `h`.
    Ball(f64),
    /// `1` for lags with length in `[h1, h2]`.
    Ring(f64, f64),
    /// Gaussian weight holding 90% of its mass within radius `r`.
    Gauss(f64),
}

impl Kernel {
    pub fn ball(h: f64) -> Result<Self> {
        Self::Ball(h).validated()
    }

    pub fn ring(h1: f64, h2: f64) -> Result<Self> {
        Self::Ring(h1, h2).validated()
    }

    pub fn gauss(r: f64) -> Result<Self> {
        Self::Gauss(r).validated()
    }

    /// Checks the radius constraints of the variant.
    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Kernel::Identity => true,
            Kernel::Ball(h) => h.is_finite() && h >= 0.0,
            Kernel::Ring(h1, h2) => h1.is_finite() && h2.is_finite() && 0.0 <= h1 && h1 <= h2,
            Kernel::Gauss(r) => r.is_finite() && r > 0.0,
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::KernelSpec(self.to_string()))
        }
    }

    /// Weight at a lag of the given Euclidean length.
    pub fn eval(&self, distance: f64) -> f64 {
        match *self {
            Kernel::Identity => indicator(distance == 0.0),
            Kernel::Ball(h) => indicator(distance <= h),
            Kernel::Ring(h1, h2) => indicator(h1 <= distance && distance <= h2),
            Kernel::Gauss(r) => {
                let z = gauss_scale() * distance / r;
                libm::exp(-0.5 * z * z)
            }
        }
    }

    /// Largest lag with nonzero weight, if bounded.
    pub fn support_radius(&self) -> Option<f64> {
        match *self {
            Kernel::Identity => Some(0.0),
            Kernel::Ball(h) => Some(h),
            Kernel::Ring(_, h2) => Some(h2),
            Kernel::Gauss(_) => None,
        }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// `Φ⁻¹(0.95)`, the scale that puts 90% of the Gaussian kernel's mass inside `r`.
pub fn gauss_scale() -> f64 {
    norm_quantile(0.95)
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Identity => write!(f, "id"),
            Kernel::Ball(h) => write!(f, "ball:{h}"),
            Kernel::Ring(h1, h2) => write!(f, "ring:{h1}:{h2}"),
            Kernel::Gauss(r) => write!(f, "gauss:{r}"),
        }
    }
}

impl FromStr for Kernel {
    type Err = Error;

    /// Parses `id`, `ball:h`, `ring:h1:h2` or `gauss:r`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::KernelSpec(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let k = match parts.as_slice() {
            ["id"] | ["identity"] => Kernel::Identity,
            ["ball", h] => Kernel::Ball(num(h)?),
            ["ring", h1, h2] => Kernel::Ring(num(h1)?, num(h2)?),
            ["gauss", r] => Kernel::Gauss(num(r)?),
            _ => return Err(bad()),
        };
        k.validated().map_err(|_| bad())
    }
}

/// Parses a comma-separated list of kernel specs.
pub fn parse_kernel_list(s: &str) -> Result<Vec<Kernel>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Dense `n × n` weight matrix `f(sᵢ − sⱼ)`.
pub fn weight_matrix(k: &Kernel, locs: &LocationSet) -> Mat {
    let n = locs.n();
    let mut w = Mat::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = k.eval(0.0);
        for j in (i + 1)..n {
            let v = k.eval(locs.distance(i, j));
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// Nonzero entries of a symmetric weight matrix in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeights {
    kernel: Kernel,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseWeights {
    pub fn new(k: &Kernel, locs: &LocationSet) -> Self {
        SparseWeights::batch(core::slice::from_ref(k), locs)
            .pop()
            .expect("one kernel in, one weight set out")
    }

    /// Weights for several kernels from one pass over the location pairs.
    pub fn batch(kernels: &[Kernel], locs: &LocationSet) -> Vec<Self> {
        let n = locs.n();
        let mut rows: Vec<Vec<Vec<(usize, f64)>>> =
            kernels.iter().map(|_| (0..n).map(|_| Vec::new()).collect()).collect();
        for i in 0..n {
            for j in i..n {
                let d = if i == j { 0.0 } else { locs.distance(i, j) };
                for (kk, k) in kernels.iter().enumerate() {
                    let v = k.eval(d);
                    if v != 0.0 {
                        rows[kk][i].push((j, v));
                        if i != j {
                            rows[kk][j].push((i, v));
                        }
                    }
                }
            }
        }
        kernels
            .iter()
            .zip(rows)
            .map(|(k, rows)| {
                let mut offsets = Vec::with_capacity(n + 1);
                let mut cols = Vec::new();
                let mut vals = Vec::new();
                offsets.push(0);
                for mut row in rows {
                    row.sort_by_key(|&(j, _)| j);
                    for (j, v) in row {
                        cols.push(j);
                        vals.push(v);
                    }
                    offsets.push(cols.len());
                }
                SparseWeights {
                    kernel: *k,
                    offsets,
                    cols,
                    vals,
                }
            })
            .collect()
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(column, weight)` pairs of row `i`, in increasing column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn to_dense(&self) -> Mat {
        let n = self.n();
        let mut w = Mat::zeros(n, n);
        for i in 0..n {
            for (j, v) in self.row(i) {
                w[(i, j)] = v;
            }
        }
        w
    }

    /// `y = W x` for a vector `x` of length `n`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }
}

/// Checks that a kernel list is usable alongside the implicit identity anchor.
pub fn validate_kernel_list(kernels: &[Kernel]) -> Result<()> {
    if kernels.is_empty() {
        return Err(Error::EmptyKernelList);
    }
    for k in kernels {
        if *k == Kernel::Identity {
            return Err(Error::IdentityKernelInList);
        }
        k.validated()
            .map_err(|_| Error::KernelSpec(format!("{k}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn line(n: usize) -> LocationSet {
        LocationSet::from_rows(1, (0..n).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn indicator_examples() {
        assert_eq!(Kernel::Ball(1.0).eval(0.5), 1.0);
        assert_eq!(Kernel::Ring(1.0, 2.0).eval(0.5), 0.0);
        assert_eq!(Kernel::Identity.eval(0.0), 1.0);
        assert_eq!(Kernel::Identity.eval(1e-9), 0.0);
        assert_eq!(Kernel::Ball(1.0).eval(1.0), 1.0);
        assert_eq!(Kernel::Ring(1.0, 2.0).eval(1.0), 1.0);
        assert_eq!(Kernel::Ring(1.0, 2.0).eval(2.0), 1.0);
    }

    #[test]
    fn gauss_at_radius() {
        // exp(-q²/2) with q = 1.6448536269514722 computed independently.
        let q: f64 = 1.6448536269514722;
        let expect = (-0.5 * q * q).exp();
        assert!((Kernel::Gauss(3.0).eval(3.0) - expect).abs() < 1e-14);
        assert!((expect - 0.25852).abs() < 1e-5);
        assert_eq!(Kernel::Gauss(2.0).eval(0.0), 1.0);
    }

    #[test]
    fn weight_matrix_examples() {
        let l = line(4);
        assert_eq!(weight_matrix(&Kernel::Identity, &l), Mat::identity(4, 4));
        assert_eq!(weight_matrix(&Kernel::Ball(10.0), &l), Mat::from_element(4, 4, 1.0));
        let ring = weight_matrix(&Kernel::Ring(1.0, 2.0), &l);
        for i in 0..4i32 {
            for j in 0..4i32 {
                let want = if (1..=2).contains(&(i - j).abs()) { 1.0 } else { 0.0 };
                assert_eq!(ring[(i as usize, j as usize)], want);
            }
        }
    }

    #[test]
    fn sparse_matches_dense() {
        let l = LocationSet::from_rows(2, vec![0.0, 0.0, 1.0, 0.5, 2.0, 2.0, 0.3, 1.9, 1.0, 1.0]).unwrap();
        let ks = [Kernel::Identity, Kernel::Ball(1.2), Kernel::Ring(1.0, 2.0), Kernel::Gauss(1.0)];
        let sparse = SparseWeights::batch(&ks, &l);
        for (k, s) in ks.iter().zip(&sparse) {
            assert_eq!(s.to_dense(), weight_matrix(k, &l));
            assert_eq!(*s, SparseWeights::new(k, &l));
        }
        assert_eq!(sparse[0].nnz(), 5);
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["id", "ball:1", "ring:0.5:2", "gauss:3.25"] {
            let k: Kernel = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert_eq!("ring:0:25".parse::<Kernel>().unwrap(), Kernel::Ring(0.0, 25.0));
        for bad in ["", "ball", "ring:2:1", "gauss:0", "ball:-1", "cone:1", "ball:x"] {
            assert!(bad.parse::<Kernel>().is_err(), "{bad}");
        }
        assert_eq!(
            parse_kernel_list("ring:0:25, ring:25:50").unwrap(),
            vec![Kernel::Ring(0.0, 25.0), Kernel::Ring(25.0, 50.0)]
        );
    }

    #[test]
    fn kernel_list_validation() {
        assert_eq!(validate_kernel_list(&[]), Err(Error::EmptyKernelList));
        assert_eq!(
            validate_kernel_list(&[Kernel::Ball(1.0), Kernel::Identity]),
            Err(Error::IdentityKernelInList)
        );
        assert!(validate_kernel_list(&[Kernel::Ball(1.0)]).is_ok());
    }
}
