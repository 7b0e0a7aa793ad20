//! Text forms of kernels, latent specifications and location designs.
//!
//! Kernels accept either the core syntax (`ball:1`, `ring:1:2`, `gauss:10`,
//! `id`) or the short notation `B(1)`, `R(1,2)`, `G(10)`. A ring with a
//! single radius, `R(r)`, means `R(r − 10, r)`.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::Rng;
use sbss_core::field_sim::LatentSpec;
use sbss_core::kernels::validate_kernel_list;
use sbss_core::spatial::{gen_diamond_grid, gen_nested_squares, gen_rectangle_grid, gen_uniform_rect, gen_weighted_region, Polygon};
use sbss_core::{Kernel, LocationSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width subtracted by the single-radius ring shorthand.
pub const RING_SHORTHAND_WIDTH: f64 = 10.0;

fn bad_kernel(s: &str) -> Error {
    Error::Core(sbss_core::Error::KernelSpec(s.to_string()))
}

pub fn parse_kernel(s: &str) -> Result<Kernel> {
    let t = s.trim();
    let Some(open) = t.find('(') else {
        return Ok(t.parse::<Kernel>()?);
    };
    if !t.ends_with(')') {
        return Err(bad_kernel(s));
    }
    let args: Vec<f64> = t[open + 1..t.len() - 1]
        .split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| bad_kernel(s)))
        .collect::<Result<_>>()?;
    let k = match (t[..open].trim(), args.as_slice()) {
        ("B", [h]) => Kernel::ball(*h),
        ("R", [r]) => Kernel::ring(r - RING_SHORTHAND_WIDTH, *r),
        ("R", [h1, h2]) => Kernel::ring(*h1, *h2),
        ("G", [r]) => Kernel::gauss(*r),
        _ => return Err(bad_kernel(s)),
    };
    k.map_err(|_| bad_kernel(s))
}

/// Splits on commas outside parentheses; surrounding braces are ignored.
pub fn parse_kernels(s: &str) -> Result<Vec<Kernel>> {
    let t = s.trim();
    let t = t.strip_prefix('{').and_then(|r| r.strip_suffix('}')).unwrap_or(t);
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in t.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                if !t[start..i].trim().is_empty() {
                    out.push(parse_kernel(&t[start..i])?);
                }
                start = i + 1;
            }
            _ => {}
        }
    }
    if !t[start..].trim().is_empty() {
        out.push(parse_kernel(&t[start..])?);
    }
    validate_kernel_list(&out)?;
    Ok(out)
}

/// Short notation, e.g. `R(1,2)`.
pub fn kernel_label(k: &Kernel) -> String {
    match k {
        Kernel::Identity => "id".into(),
        Kernel::Ball(h) => format!("B({h})"),
        Kernel::Ring(a, b) => format!("R({a},{b})"),
        Kernel::Gauss(r) => format!("G({r})"),
    }
}

/// `B(1)` for one kernel, `{B(1),R(1,2)}` for several.
pub fn kernel_set_label(ks: &[Kernel]) -> String {
    let inner: Vec<String> = ks.iter().map(kernel_label).collect();
    if ks.len() == 1 {
        inner[0].clone()
    } else {
        format!("{{{}}}", inner.join(","))
    }
}

/// Latent field specification as written in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentConfig {
    /// `sim1`, `sim2` or `sim3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Shared range for `sim2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Explicit `(κ, φ)` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<[f64; 2]>>,
}

impl LatentConfig {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.into()),
            phi: None,
            components: None,
        }
    }

    pub fn build(&self) -> Result<LatentSpec> {
        match (&self.preset, &self.components) {
            (Some(_), Some(_)) => Err(Error::Config("latent: give either preset or components".into())),
            (None, None) => Err(Error::Config("latent: preset or components required".into())),
            (None, Some(c)) => {
                let pairs: Vec<(f64, f64)> = c.iter().map(|v| (v[0], v[1])).collect();
                Ok(LatentSpec::from_pairs(&pairs)?)
            }
            (Some(name), None) => {
                if self.phi.is_some() && name != "sim2" {
                    return Err(Error::Config(format!("latent: phi only applies to sim2, not {name}")));
                }
                match name.as_str() {
                    "sim1" => Ok(LatentSpec::sim1()),
                    "sim2" => Ok(LatentSpec::sim2(self.phi.unwrap_or(1.0))?),
                    "sim3" => Ok(LatentSpec::sim3()),
                    _ => Err(Error::Config(format!("unknown latent preset {name:?}"))),
                }
            }
        }
    }
}

/// `sim1`, `sim2`, `sim2:φ`, `sim3` or `κ:φ,κ:φ,…`.
pub fn parse_latent(s: &str) -> Result<LatentConfig> {
    let t = s.trim();
    if let Some(phi) = t.strip_prefix("sim2:") {
        let phi = phi.parse().map_err(|_| Error::Config(format!("bad range in {t:?}")))?;
        return Ok(LatentConfig {
            phi: Some(phi),
            ..LatentConfig::preset("sim2")
        });
    }
    if matches!(t, "sim1" | "sim2" | "sim3") {
        return Ok(LatentConfig::preset(t));
    }
    let components = t
        .split(',')
        .map(|pair| {
            let v: Vec<f64> = pair
                .split(':')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad latent component {pair:?}")))?;
            match v.as_slice() {
                [k, p] => Ok([*k, *p]),
                _ => Err(Error::Config(format!("latent component {pair:?} is not kappa:phi"))),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentConfig {
        preset: None,
        phi: None,
        components: Some(components),
    })
}

/// Density over a polygon, up to a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Density {
    Uniform,
    /// `exp(rate · ⟨direction, s⟩)`, so points pile up towards `direction`.
    Skew { direction: [f64; 2], rate: f64 },
}

impl Density {
    fn evaluate(&self, poly: &Polygon) -> (Box<dyn Fn(f64, f64) -> f64 + Sync + '_>, f64) {
        match self {
            Density::Uniform => (Box::new(|_, _| 1.0), 1.0),
            Density::Skew { direction, rate } => {
                let (lo, hi) = poly.bounds();
                // Largest exponent over the bounding box, so the density is at most one.
                let top = [lo[0], hi[0]]
                    .iter()
                    .flat_map(|&x| [lo[1], hi[1]].map(|y| rate * (direction[0] * x + direction[1] * y)))
                    .fold(f64::NEG_INFINITY, f64::max);
                let (d, r) = (*direction, *rate);
                (Box::new(move |x, y| (r * (d[0] * x + d[1] * y) - top).exp()), 1.0)
            }
        }
    }
}

/// A location pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Design {
    /// Doubling nested squares; the first `base · 2^(j−1)` points form layer `j`.
    NestedSquares { base: usize, layers: usize },
    Diamond { radius: usize },
    Rectangle { radius: usize },
    Uniform { n: usize, lower: [f64; 2], upper: [f64; 2] },
    Region { n: usize, polygon: Vec<[f64; 2]>, density: Density },
    File { path: PathBuf },
}

impl Design {
    /// Builds the full pattern; random designs draw from `rng`.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LocationSet> {
        Ok(match self {
            Design::NestedSquares { base, layers } => gen_nested_squares(*base, *layers, rng)?,
            Design::Diamond { radius } => gen_diamond_grid(*radius),
            Design::Rectangle { radius } => gen_rectangle_grid(*radius),
            Design::Uniform { n, lower, upper } => gen_uniform_rect(*n, lower, upper, rng)?,
            Design::Region { n, polygon, density } => {
                let poly = Polygon::new(polygon.clone())?;
                let (f, bound) = density.evaluate(&poly);
                gen_weighted_region(*n, &poly, f, bound, rng)?
            }
            Design::File { path } => crate::io::read_locations(path)?,
        })
    }

    /// Sample sizes obtainable as prefixes of the generated pattern, when
    /// they can be known without generating it.
    pub fn check_size(&self, n: usize) -> Result<()> {
        let ok = match self {
            Design::NestedSquares { base, layers } => (0..*layers).any(|j| base << j == n),
            Design::Diamond { radius } => n == 2 * radius * (radius + 1) + 1,
            Design::Rectangle { radius } => n == (2 * radius + 1) * (radius + 1),
            Design::Uniform { n: total, .. } | Design::Region { n: total, .. } => n >= 1 && n <= *total,
            Design::File { .. } => n >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("sample size {n} is not available from design {self}")))
        }
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Design::NestedSquares { base, layers } => write!(f, "nested:{base}:{layers}"),
            Design::Diamond { radius } => write!(f, "diamond:{radius}"),
            Design::Rectangle { radius } => write!(f, "rectangle:{radius}"),
            Design::Uniform { n, lower, upper } => {
                write!(f, "uniform:{n}:{}:{}:{}:{}", lower[0], upper[0], lower[1], upper[1])
            }
            Design::Region { n, polygon, .. } => {
                let mut s = String::new();
                for v in polygon {
                    let _ = write!(s, "({},{})", v[0], v[1]);
                }
                write!(f, "region:{n}:{s}")
            }
            Design::File { path } => write!(f, "file:{}", path.display()),
        }
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    /// `nested:base:layers`, `diamond:m`, `rectangle:m`,
    /// `uniform:n:x0:x1:y0:y1` or `file:path`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad design {s:?}"));
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Design::File { path: path.into() });
        }
        let parts: Vec<&str> = s.split(':').collect();
        let int = |t: &str| t.parse::<usize>().map_err(|_| bad());
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        Ok(match parts.as_slice() {
            ["nested", b, l] => Design::NestedSquares { base: int(b)?, layers: int(l)? },
            ["diamond", m] => Design::Diamond { radius: int(m)? },
            ["rectangle", m] => Design::Rectangle { radius: int(m)? },
            ["uniform", n, x0, x1, y0, y1] => Design::Uniform {
                n: int(n)?,
                lower: [num(x0)?, num(y0)?],
                upper: [num(x1)?, num(y1)?],
            },
            _ => return Err(bad()),
        })
    }
}
