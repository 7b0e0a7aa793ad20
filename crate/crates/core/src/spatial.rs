//! Point patterns, pairwise geometry and the sample container.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Two points closer than this (in coordinate units) count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

/// `n` points in `ℝ^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSet {
    coords: Vec<f64>,
    n: usize,
    dim: usize,
    min_separation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationOptions {
    /// Reject pairs closer than [`DUPLICATE_TOL`].
    pub check_duplicates: bool,
    /// Declared minimum separation `Δ`; every pair must be at least this far apart.
    pub min_separation: Option<f64>,
}

impl Default for LocationOptions {
    fn default() -> Self {
        Self {
            check_duplicates: true,
            min_separation: None,
        }
    }
}

impl LocationSet {
    /// Builds a location set from row-major coordinates with the default checks.
    pub fn from_rows(dim: usize, coords: Vec<f64>) -> Result<Self> {
        Self::with_options(dim, coords, LocationOptions::default())
    }

    pub fn with_options(dim: usize, coords: Vec<f64>, opts: LocationOptions) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "{} coordinates do not split into rows of {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("coordinates"));
        }
        if let Some(delta) = opts.min_separation {
            if !delta.is_finite() || delta <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "minimum separation must be positive, got {delta}"
                )));
            }
        }
        let set = Self {
            n: coords.len() / dim,
            coords,
            dim,
            min_separation: opts.min_separation,
        };
        let required = match (opts.check_duplicates, opts.min_separation) {
            (_, Some(delta)) => Some(delta.max(DUPLICATE_TOL)),
            (true, None) => Some(DUPLICATE_TOL),
            (false, None) => None,
        };
        if let Some(required) = required {
            set.check_separation(required, opts.min_separation.is_some())?;
        }
        Ok(set)
    }

    fn check_separation(&self, required: f64, inclusive: bool) -> Result<()> {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let d = self.distance(i, j);
                let bad = if inclusive { d < required } else { d <= required };
                if bad {
                    return Err(Error::PointsTooClose {
                        first: i,
                        second: j,
                        distance: d,
                        required,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn from_matrix(coords: &Mat) -> Result<Self> {
        let mut rows = Vec::with_capacity(coords.len());
        for i in 0..coords.nrows() {
            rows.extend(coords.row(i).iter().copied());
        }
        Self::from_rows(coords.ncols(), rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn min_separation(&self) -> Option<f64> {
        self.min_separation
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_rows(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords(&self) -> Mat {
        Mat::from_row_slice(self.n, self.dim, &self.coords)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.point(i), self.point(j));
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    /// The first `n` points. Prefixes of a valid set stay valid.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n {
            return Err(Error::InvalidParameter(format!(
                "prefix of {n} points requested from a set of {}",
                self.n
            )));
        }
        Ok(Self {
            coords: self.coords[..n * self.dim].to_vec(),
            n,
            dim: self.dim,
            min_separation: self.min_separation,
        })
    }

    /// Largest pairwise distance.
    pub fn diameter(&self) -> f64 {
        let mut max = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                max = max.max(self.distance(i, j));
            }
        }
        max
    }
}

/// Euclidean distance matrix; exactly symmetric with a zero diagonal.
pub fn distance_matrix(locs: &LocationSet) -> Mat {
    let n = locs.n();
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = locs.distance(i, j);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Observations of a `p`-variate field at a location set; row `i` of
/// `values` is the observation at point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    locations: LocationSet,
    values: Mat,
}

impl FieldSample {
    pub fn new(locations: LocationSet, values: Mat) -> Result<Self> {
        if values.nrows() != locations.n() {
            return Err(Error::Dimension(format!(
                "{} value rows for {} locations",
                values.nrows(),
                locations.n()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::Dimension("sample has no variables".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Self { locations, values })
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locations
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_parts(self) -> (LocationSet, Mat) {
        (self.locations, self.values)
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Nested-squares design. Layer 1 holds `base_count` uniform points in the
/// origin-centred square of side `√base_count`; every further layer scales
/// the side by `√2` and adds as many points as already exist, uniformly on
/// the new ring. Points come out in layer order, so the first
/// `base_count · 2^(j−1)` points form the `j`-th design.
pub fn gen_nested_squares<R: Rng + ?Sized>(
    base_count: usize,
    layers: usize,
    rng: &mut R,
) -> Result<LocationSet> {
    if base_count == 0 || layers == 0 {
        return Err(Error::InvalidParameter(
            "nested squares need base_count ≥ 1 and layers ≥ 1".into(),
        ));
    }
    let total = base_count << (layers - 1);
    let mut coords = Vec::with_capacity(2 * total);
    let mut half = (base_count as f64).sqrt() / 2.0;
    for _ in 0..base_count {
        coords.push(uniform_in(rng, -half, half));
        coords.push(uniform_in(rng, -half, half));
    }
    for _ in 1..layers {
        let inner = half;
        half *= core::f64::consts::SQRT_2;
        let add = coords.len() / 2;
        let mut placed = 0;
        while placed < add {
            let x = uniform_in(rng, -half, half);
            let y = uniform_in(rng, -half, half);
            if x.abs() <= inner && y.abs() <= inner {
                continue;
            }
            coords.push(x);
            coords.push(y);
            placed += 1;
        }
    }
    LocationSet::from_rows(2, coords)
}

/// Half side length of the square holding the first `layer` layers of a
/// nested-squares design with the given base count.
pub fn nested_square_half_side(base_count: usize, layer: usize) -> f64 {
    (base_count as f64).sqrt() / 2.0 * libm::pow(2.0, (layer as f64 - 1.0) / 2.0)
}

/// Integer lattice points with `|x| + |y| ≤ m`.
pub fn gen_diamond_grid(m: usize) -> LocationSet {
    let m = m as i64;
    let mut coords = Vec::new();
    for y in -m..=m {
        let w = m - y.abs();
        for x in -w..=w {
            coords.push(x as f64);
            coords.push(y as f64);
        }
    }
    LocationSet::from_rows(2, coords).expect("lattice points are distinct")
}

/// Unit lattice of width `2m + 1` and height `m + 1`.
pub fn gen_rectangle_grid(m: usize) -> LocationSet {
    let m = m as i64;
    let mut coords = Vec::new();
    for y in 0..=m {
        for x in -m..=m {
            coords.push(x as f64);
            coords.push(y as f64);
        }
    }
    LocationSet::from_rows(2, coords).expect("lattice points are distinct")
}

/// `n` i.i.d. uniform points in the box `[lower, upper)`.
pub fn gen_uniform_rect<R: Rng + ?Sized>(
    n: usize,
    lower: &[f64],
    upper: &[f64],
    rng: &mut R,
) -> Result<LocationSet> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one point".into()));
    }
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::Dimension("box bounds must have equal, positive length".into()));
    }
    if lower.iter().zip(upper).any(|(l, u)| u.is_nan() || l.is_nan() || u <= l) {
        return Err(Error::InvalidParameter("degenerate box".into()));
    }
    let d = lower.len();
    let mut coords = Vec::with_capacity(n * d);
    for _ in 0..n {
        for k in 0..d {
            coords.push(uniform_in(rng, lower[k], upper[k]));
        }
    }
    LocationSet::from_rows(d, coords)
}

/// Simple polygon in the plane, vertices in order (either orientation).
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidParameter("polygon needs at least 3 vertices".into()));
        }
        if vertices.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("polygon vertices"));
        }
        let poly = Self { vertices };
        if poly.area() == 0.0 {
            return Err(Error::InvalidParameter("polygon has zero area".into()));
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut twice = 0.0;
        for i in 0..n {
            let [x0, y0] = self.vertices[i];
            let [x1, y1] = self.vertices[(i + 1) % n];
            twice += x0 * y1 - x1 * y0;
        }
        (twice / 2.0).abs()
    }

    /// `(min, max)` corners of the bounding box.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Even-odd ray casting test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }
}

/// Attempts allowed per accepted point before the sampler gives up.
pub const REJECTION_ATTEMPTS_PER_POINT: usize = 100_000;

/// Rejection sampling of `n` points inside `region` with density
/// proportional to `density`. `bound` must dominate `density` on the region.
pub fn gen_weighted_region<R, F>(
    n: usize,
    region: &Polygon,
    density: F,
    bound: f64,
    rng: &mut R,
) -> Result<LocationSet>
where
    R: Rng + ?Sized,
    F: Fn(f64, f64) -> f64,
{
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one point".into()));
    }
    if !bound.is_finite() || bound <= 0.0 {
        return Err(Error::InvalidParameter("density bound must be positive".into()));
    }
    let (lo, hi) = region.bounds();
    let mut coords = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let mut attempts = 0;
        loop {
            if attempts == REJECTION_ATTEMPTS_PER_POINT {
                return Err(Error::DegenerateDensity { attempts });
            }
            attempts += 1;
            let x = uniform_in(rng, lo[0], hi[0]);
            let y = uniform_in(rng, lo[1], hi[1]);
            if !region.contains(x, y) {
                continue;
            }
            let w = density(x, y);
            if w.is_nan() || w < 0.0 {
                return Err(Error::InvalidParameter("density must be nonnegative".into()));
            }
            if rng.random::<f64>() * bound < w {
                coords.push(x);
                coords.push(y);
                break;
            }
        }
    }
    LocationSet::from_rows(2, coords)
}
