//! Replicated simulation experiments and the data-analysis workflow.
//!
//! Replication `r` at sample-size index `i` draws from its own ChaCha8
//! stream `(i << 32) | r` under the configured seed, and results are reduced
//! in replication order, so reports do not depend on the thread count.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sbss_core::asymptotics::{limit_spectrum, sample_limit_nmdi, AsymptoticWorkspace, LimitSpectrum};
use sbss_core::diagonalizer::JointDiagConfig;
use sbss_core::field_sim::{LatentSimulator, LatentSpec};
use sbss_core::metrics::{max_abs_correlations, nmdi, CorrelationMatch, Matching};
use sbss_core::pipeline::{Sbss, SbssFit};
use sbss_core::{LocationSet, Mat};

use crate::config::{ExperimentConfig, KernelSet};
use crate::error::{Error, Result};
use crate::io::NamedSample;

/// Stream of the design draw; replication streams stay below it.
pub const DESIGN_STREAM: u64 = u64::MAX;
/// High bit marking the streams of limit-distribution draws.
pub const LIMIT_STREAM_BIT: u64 = 1 << 63;

pub fn replication_rng(seed: u64, size_index: usize, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((size_index as u64) << 32) | rep as u64);
    rng
}

pub fn design_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DESIGN_STREAM);
    rng
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Wall time of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Per-replication outcome of every kernel set at one sample size.
#[derive(Debug, Clone)]
struct Cell {
    n: usize,
    /// `[set][rep]`.
    values: Vec<Vec<std::result::Result<f64, String>>>,
    spectra: Vec<std::result::Result<LimitSpectrum, String>>,
}

/// Inputs shared by all sample sizes.
struct Setup {
    locations: LocationSet,
    latent: LatentSpec,
    omega: Mat,
    sets: Vec<KernelSet>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let latent = cfg.latent.build()?;
    let omega = cfg.mixing.build(latent.p())?;
    let locations = cfg.design.generate(&mut design_rng(cfg.seed))?;
    let largest = cfg.sample_sizes.iter().copied().max().unwrap_or(0);
    if largest > locations.n() {
        return Err(Error::Config(format!(
            "sample size {largest} exceeds the {} design points",
            locations.n()
        )));
    }
    Ok(Setup {
        locations,
        latent,
        omega,
        sets: cfg.kernel_sets()?,
    })
}

fn run_cells(cfg: &ExperimentConfig, s: &Setup, threads: usize, timings: &mut Vec<Timing>) -> Result<Vec<Cell>> {
    let pool = pool(threads)?;
    let diag = JointDiagConfig::default();
    let mut cells = Vec::with_capacity(cfg.sample_sizes.len());
    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        let locs = s.locations.prefix(n)?;

        let t = Instant::now();
        let sim = LatentSimulator::new(&locs, &s.latent)?;
        let fitters = s
            .sets
            .iter()
            .map(|set| Sbss::new(&locs, &set.kernels))
            .collect::<sbss_core::Result<Vec<_>>>()?;
        let omega_t = s.omega.transpose();
        let per_rep: Vec<Vec<std::result::Result<f64, String>>> = pool.install(|| {
            (0..cfg.replications)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replication_rng(cfg.seed, ni, r);
                    let x = sim.draw(&mut rng) * &omega_t;
                    fitters
                        .iter()
                        .map(|f| {
                            let fit = f.fit_values(&x, cfg.centered, &diag).map_err(|e| e.to_string())?;
                            let v = nmdi(fit.gamma(), &s.omega, n).map_err(|e| e.to_string())?;
                            if v.is_finite() {
                                Ok(v)
                            } else {
                                Err("non-finite index".to_string())
                            }
                        })
                        .collect()
                })
                .collect()
        });
        timings.push(Timing {
            stage: format!("replications n={n}"),
            seconds: t.elapsed().as_secs_f64(),
        });

        let t = Instant::now();
        let spectra = asymptotic_spectra(&locs, &s.latent, &s.sets, &pool)?;
        timings.push(Timing {
            stage: format!("asymptotics n={n}"),
            seconds: t.elapsed().as_secs_f64(),
        });

        let values = (0..s.sets.len())
            .map(|k| per_rep.iter().map(|rep| rep[k].clone()).collect())
            .collect();
        cells.push(Cell { n, values, spectra });
    }
    Ok(cells)
}

/// δ-spectra at `Ω = I`; the spectrum does not depend on the mixing.
fn asymptotic_spectra(
    locs: &LocationSet,
    latent: &LatentSpec,
    sets: &[KernelSet],
    pool: &rayon::ThreadPool,
) -> Result<Vec<std::result::Result<LimitSpectrum, String>>> {
    let ws = AsymptoticWorkspace::new(locs, latent, &Mat::identity(latent.p(), latent.p()))?;
    Ok(pool.install(|| {
        sets.par_iter()
            .map(|set| limit_spectrum(&ws, &set.kernels).map_err(|e| e.to_string()))
            .collect()
    }))
}

/// Limiting mean of `n (p − 1) MDI²` for a kernel set, as reported by
/// experiments.
pub fn asymptotic_mean(locs: &LocationSet, latent: &LatentSpec, set: &[sbss_core::Kernel]) -> Result<LimitSpectrum> {
    let ws = AsymptoticWorkspace::new(locs, latent, &Mat::identity(latent.p(), latent.p()))?;
    Ok(limit_spectrum(&ws, set)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub n: usize,
    pub kernel_set: String,
    /// Replications that produced an index.
    pub replications: usize,
    pub failures: usize,
    /// First failure message, if any.
    pub failure_example: Option<String>,
    pub mean_nmdi: f64,
    /// Monte Carlo standard error of the mean.
    pub mc_se: f64,
    /// `Σ δᵢ`; `None` when the asymptotic evaluation failed.
    pub asymptotic: Option<f64>,
    pub asymptotic_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub timings: Vec<Timing>,
}

pub const REPORT_HEADER: [&str; 7] = [
    "n",
    "kernel_set",
    "replications",
    "failures",
    "mean_nmdi",
    "mc_se",
    "asymptotic_sum_delta",
];

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl ExperimentReport {
    /// Report CSV. Timings are kept out so reruns compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let fields = [
                r.n.to_string(),
                quote(&r.kernel_set),
                r.replications.to_string(),
                r.failures.to_string(),
                r.mean_nmdi.to_string(),
                r.mc_se.to_string(),
                opt(r.asymptotic),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

fn successes(values: &[std::result::Result<f64, String>]) -> (Vec<f64>, usize, Option<String>) {
    let ok: Vec<f64> = values.iter().filter_map(|v| v.as_ref().ok().copied()).collect();
    let first = values.iter().find_map(|v| v.as_ref().err().cloned());
    (ok.clone(), values.len() - ok.len(), first)
}

/// Mean `n (p − 1) MDI²` and its limiting value for every sample size and
/// kernel set. Failed replications are counted and excluded.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    let start = Instant::now();
    let s = setup(cfg)?;
    let mut timings = Vec::new();
    let cells = run_cells(cfg, &s, threads, &mut timings)?;
    let mut rows = Vec::new();
    for cell in &cells {
        for (k, set) in s.sets.iter().enumerate() {
            let (ok, failures, failure_example) = successes(&cell.values[k]);
            let (mean_nmdi, mc_se) = mean_se(&ok);
            let (asymptotic, asymptotic_error) = match &cell.spectra[k] {
                Ok(spec) => (Some(spec.expected_nmdi), None),
                Err(e) => (None, Some(e.clone())),
            };
            rows.push(ReportRow {
                n: cell.n,
                kernel_set: set.label.clone(),
                replications: ok.len(),
                failures,
                failure_example,
                mean_nmdi,
                mc_se,
                asymptotic,
                asymptotic_error,
            });
        }
    }
    timings.push(Timing {
        stage: "total".into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(ExperimentReport { rows, timings })
}

/// Empirical indices next to draws from their limit law.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySample {
    pub n: usize,
    pub kernel_set: String,
    pub empirical: Vec<f64>,
    pub failures: usize,
    pub limit: Vec<f64>,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityComparison {
    pub samples: Vec<DensitySample>,
    pub timings: Vec<Timing>,
}

impl DensitySample {
    /// Two columns, `empirical` and `limit`; the shorter one is padded with
    /// empty fields.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("empirical,limit\n");
        for i in 0..self.empirical.len().max(self.limit.len()) {
            let a = self.empirical.get(i).map_or_else(String::new, f64::to_string);
            let b = self.limit.get(i).map_or_else(String::new, f64::to_string);
            out.push_str(&format!("{a},{b}\n"));
        }
        out
    }
}

/// Stream for the limit draws of kernel set `k` at sample-size index `i`.
pub fn limit_rng(seed: u64, size_index: usize, set: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LIMIT_STREAM_BIT | ((size_index as u64) << 32) | set as u64);
    rng
}

pub fn run_density_comparison(cfg: &ExperimentConfig, draws: usize, threads: usize) -> Result<DensityComparison> {
    let start = Instant::now();
    let s = setup(cfg)?;
    let mut timings = Vec::new();
    let cells = run_cells(cfg, &s, threads, &mut timings)?;
    let mut samples = Vec::new();
    for (ni, cell) in cells.iter().enumerate() {
        for (k, set) in s.sets.iter().enumerate() {
            let (empirical, failures, _) = successes(&cell.values[k]);
            let spec = cell.spectra[k].as_ref().map_err(|e| {
                Error::Config(format!("no limit law for {} at n={}: {e}", set.label, cell.n))
            })?;
            let limit = sample_limit_nmdi(spec, draws, &mut limit_rng(cfg.seed, ni, k));
            samples.push(DensitySample {
                n: cell.n,
                kernel_set: set.label.clone(),
                empirical,
                failures,
                limit,
                deltas: spec.deltas.clone(),
            });
        }
    }
    timings.push(Timing {
        stage: "total".into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(DensityComparison { samples, timings })
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// One fitted kernel set of a data analysis.
#[derive(Debug, Clone)]
pub struct SetFit {
    pub label: String,
    pub fit: SbssFit,
}

#[derive(Debug, Clone)]
pub struct DataAnalysis {
    pub fits: Vec<SetFit>,
    /// One match per kernel set against the reference scores.
    pub correlations: Option<Vec<CorrelationMatch>>,
}

impl DataAnalysis {
    /// Rows are reference components; each set contributes its maximal
    /// absolute correlation and the matched estimate.
    pub fn correlation_csv(&self) -> Option<String> {
        let corr = self.correlations.as_ref()?;
        let mut header = vec!["component".to_string()];
        for f in &self.fits {
            header.push(quote(&f.label));
            header.push(quote(&format!("{} match", f.label)));
        }
        let mut out = header.join(",");
        out.push('\n');
        let q = corr.first().map_or(0, |c| c.values.len());
        for j in 0..q {
            let mut row = vec![(j + 1).to_string()];
            for c in corr {
                row.push(c.values[j].to_string());
                row.push((c.matching[j] + 1).to_string());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        Some(out)
    }
}

/// Fits every kernel set to centered data and, given reference scores
/// aligned by row, matches each reference component to its best estimate.
pub fn run_data_analysis(
    data: &NamedSample,
    sets: &[KernelSet],
    reference: Option<&Mat>,
    matching: Matching,
) -> Result<DataAnalysis> {
    let sample = &data.sample;
    if let Some(r) = reference {
        if r.nrows() != sample.n() {
            return Err(Error::Config(format!(
                "reference has {} rows, data has {}",
                r.nrows(),
                sample.n()
            )));
        }
    }
    let cfg = JointDiagConfig::default();
    let fits = sets
        .iter()
        .map(|set| {
            let fit = Sbss::new(sample.locations(), &set.kernels)?.fit_values(sample.values(), true, &cfg)?;
            Ok(SetFit {
                label: set.label.clone(),
                fit,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correlations = reference
        .map(|r| {
            fits.iter()
                .map(|f| Ok(max_abs_correlations(&f.fit.scores, r, matching)?))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(DataAnalysis { fits, correlations })
}

/// Draws a field at `locs` and mixes it.
pub fn simulate_field<R: Rng + ?Sized>(
    locs: &LocationSet,
    latent: &LatentSpec,
    omega: &Mat,
    rng: &mut R,
) -> Result<(sbss_core::FieldSample, Vec<f64>)> {
    let sim = LatentSimulator::new(locs, latent)?;
    let z = sim.simulate(rng);
    let x = sbss_core::field_sim::mix(&z, omega)?;
    Ok((x, sim.jitter().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_identical_and_disjoint_samples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&a, &[4.0, 5.0]), 1.0);
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn streams_differ() {
        let a: u64 = replication_rng(1, 0, 0).random();
        let b: u64 = replication_rng(1, 0, 1).random();
        let c: u64 = replication_rng(1, 1, 0).random();
        assert!(a != b && a != c && b != c);
    }
}
