//! Experiment configuration (TOML).
//!
//! ```toml
//! seed = 2024
//! replications = 500
//! sample_sizes = [400, 800, 1600]
//! centered = false
//!
//! [design]
//! kind = "nested_squares"   # or diamond, rectangle, uniform, region, file
//! base = 200
//! layers = 5
//!
//! [latent]
//! preset = "sim1"           # or components = [[6.0, 1.2], [1.0, 1.5]]
//!
//! [mixing]
//! kind = "identity"         # or "matrix" with rows, or "random" with seed
//!
//! [[kernel_sets]]
//! kernels = "B(1)"
//!
//! [[kernel_sets]]
//! name = "joint"            # optional; defaults to the set notation
//! kernels = "{B(1),R(1,2)}"
//! ```
//!
//! Sample sizes are prefixes of the generated design: nested squares allow
//! `base · 2^(j−1)`, grids their full size, random designs any size up to
//! their point count.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbss_core::linalg::checked_inverse;
use sbss_core::{Kernel, Mat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::specs::{kernel_set_label, parse_kernels, Density, Design, LatentConfig};

/// Condition number above which a random mixing matrix is redrawn.
pub const MAX_RANDOM_MIXING_CONDITION: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mixing {
    #[default]
    Identity,
    Matrix { rows: Vec<Vec<f64>> },
    /// Uniform(−1, 1) entries, redrawn until well conditioned.
    Random { seed: u64 },
}

impl Mixing {
    pub fn build(&self, p: usize) -> Result<Mat> {
        match self {
            Mixing::Identity => Ok(Mat::identity(p, p)),
            Mixing::Matrix { rows } => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(Error::Config(format!("mixing matrix must be {p}x{p}")));
                }
                let m = Mat::from_fn(p, p, |i, j| rows[i][j]);
                checked_inverse(&m)?;
                Ok(m)
            }
            Mixing::Random { seed } => Ok(random_mixing(p, &mut ChaCha8Rng::seed_from_u64(*seed))),
        }
    }
}

/// Random invertible matrix with condition number at most
/// [`MAX_RANDOM_MIXING_CONDITION`].
pub fn random_mixing<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Mat {
    loop {
        let m = Mat::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        let sv = m.clone().singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() <= MAX_RANDOM_MIXING_CONDITION {
            return m;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub kernels: String,
}

impl KernelSetConfig {
    pub fn new(kernels: &str) -> Self {
        Self {
            name: None,
            kernels: kernels.into(),
        }
    }
}

/// A parsed kernel set with its report label.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub label: String,
    pub kernels: Vec<Kernel>,
}

impl KernelSet {
    pub fn parse(spec: &str) -> Result<Self> {
        let kernels = parse_kernels(spec)?;
        Ok(Self {
            label: kernel_set_label(&kernels),
            kernels,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub replications: usize,
    pub sample_sizes: Vec<usize>,
    #[serde(default)]
    pub centered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PathBuf>,
    pub design: Design,
    pub latent: LatentConfig,
    #[serde(default)]
    pub mixing: Mixing,
    pub kernel_sets: Vec<KernelSetConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::Config("sample_sizes is empty".into()));
        }
        for &n in &self.sample_sizes {
            self.design.check_size(n)?;
        }
        if self.kernel_sets.is_empty() {
            return Err(Error::Config("kernel_sets is empty".into()));
        }
        let p = self.latent.build()?.p();
        self.mixing.build(p)?;
        self.kernel_sets()?;
        Ok(())
    }

    pub fn kernel_sets(&self) -> Result<Vec<KernelSet>> {
        self.kernel_sets
            .iter()
            .map(|c| {
                let mut set = KernelSet::parse(&c.kernels)?;
                if let Some(name) = &c.name {
                    set.label.clone_from(name);
                }
                Ok(set)
            })
            .collect()
    }

    /// Named configuration: `sim1`, `sim1-full`, `sim2`, `sim3-uniform` or
    /// `sim3-skew`.
    pub fn preset(name: &str) -> Result<Self> {
        let sets = |specs: &[&str]| specs.iter().map(|s| KernelSetConfig::new(s)).collect();
        let sim1_sets = sets(&["B(1)", "R(1,2)", "{B(1),R(1,2)}"]);
        let sim3_sets = sets(&[
            "B(10)",
            "B(20)",
            "B(30)",
            "B(100)",
            "R(10)",
            "R(20)",
            "R(30)",
            "R(100)",
            "G(10)",
            "G(20)",
            "G(30)",
            "G(100)",
            "{B(10),B(20),B(30),B(100)}",
            "{R(10),R(20),R(30),R(100)}",
            "{G(10),G(20),G(30),G(100)}",
        ]);
        let cfg = match name {
            "sim1" => Self {
                seed: 1,
                replications: 500,
                sample_sizes: vec![400, 800, 1600],
                centered: false,
                outputs: None,
                design: Design::NestedSquares { base: 200, layers: 5 },
                latent: LatentConfig::preset("sim1"),
                mixing: Mixing::Identity,
                kernel_sets: sim1_sets,
            },
            "sim1-full" => Self {
                replications: 2000,
                sample_sizes: vec![200, 400, 800, 1600, 3200],
                ..Self::preset("sim1")?
            },
            "sim2" => Self {
                seed: 2,
                replications: 100,
                sample_sizes: vec![1861],
                centered: false,
                outputs: None,
                design: Design::Diamond { radius: 30 },
                latent: LatentConfig {
                    phi: Some(1.0),
                    ..LatentConfig::preset("sim2")
                },
                mixing: Mixing::Identity,
                kernel_sets: sets(&[
                    "B(1)",
                    "B(3)",
                    "B(5)",
                    "R(0,1)",
                    "R(2,3)",
                    "R(4,5)",
                    "{B(1),B(3),B(5)}",
                    "{R(0,1),R(2,3),R(4,5)}",
                ]),
            },
            "sim3-uniform" | "sim3-skew" => Self {
                seed: 3,
                replications: 100,
                sample_sizes: vec![1000],
                centered: false,
                outputs: None,
                design: Design::Region {
                    n: 1000,
                    polygon: STAND_IN_REGION.to_vec(),
                    density: if name == "sim3-skew" {
                        Density::Skew {
                            direction: [-1.0, 0.0],
                            rate: 0.01,
                        }
                    } else {
                        Density::Uniform
                    },
                },
                latent: LatentConfig::preset("sim3"),
                mixing: Mixing::Identity,
                kernel_sets: sim3_sets,
            },
            _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
        };
        Ok(cfg)
    }
}

pub const PRESETS: [&str; 5] = ["sim1", "sim1-full", "sim2", "sim3-uniform", "sim3-skew"];

/// Irregular region of about 4·10⁵ square units, elongated north–south.
pub const STAND_IN_REGION: [[f64; 2]; 10] = [
    [100.0, 0.0],
    [380.0, 60.0],
    [520.0, 420.0],
    [560.0, 800.0],
    [470.0, 1100.0],
    [330.0, 1150.0],
    [280.0, 900.0],
    [150.0, 700.0],
    [0.0, 350.0],
    [20.0, 120.0],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name}");
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn rejects_bad_sizes_and_counts() {
        let mut cfg = ExperimentConfig::preset("sim1").unwrap();
        cfg.sample_sizes = vec![500];
        assert!(cfg.validate().is_err());
        cfg.sample_sizes = vec![400];
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn random_mixing_is_reproducible() {
        let m = Mixing::Random { seed: 9 };
        assert_eq!(m.build(3).unwrap(), m.build(3).unwrap());
        let sv = m.build(3).unwrap().singular_values();
        assert!(sv.max() / sv.min() <= MAX_RANDOM_MIXING_CONDITION);
    }

    #[test]
    fn stand_in_region_area() {
        let poly = sbss_core::spatial::Polygon::new(STAND_IN_REGION.to_vec()).unwrap();
        assert_eq!(poly.area(), 401_100.0);
    }
}
