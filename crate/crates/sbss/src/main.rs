use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbss::config::{ExperimentConfig, KernelSet};
use sbss::harness::{self, Timing};
use sbss::io::{self, fmt_fixed};
use sbss::manifest::Manifest;
use sbss::specs::{parse_latent, Design};
use sbss_core::asymptotics::{fk, f1, AsymptoticWorkspace};
use sbss_core::diagonalizer::JointDiagConfig;
use sbss_core::metrics::{mdi, nmdi_from_mdi, Matching};
use sbss_core::pipeline::Sbss;
use sbss_core::Mat;

#[derive(Parser)]
#[command(name = "sbss", version, about = "Spatial blind source separation")]
struct Cli {
    /// Random seed; overrides the config seed for experiments.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output file, prefix or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a mixed Matérn field.
    Simulate(SimulateArgs),
    /// Estimate the unmixing matrix of a sample.
    Fit(FitArgs),
    /// Minimum distance index of an unmixing estimate.
    Mdi(MdiArgs),
    /// Limiting covariance and δ-spectrum of an estimator.
    Asympt(AsymptArgs),
    /// Replicated simulation study.
    Experiment(ExperimentArgs),
    /// Empirical indices next to draws from their limit law.
    Density(DensityArgs),
    /// Fit several kernel sets and compare with reference scores.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Locations CSV.
    #[arg(long, conflicts_with = "design")]
    locations: Option<PathBuf>,
    /// `nested:base:layers`, `diamond:m`, `rectangle:m` or `uniform:n:x0:x1:y0:y1`.
    #[arg(long)]
    design: Option<Design>,
    /// `sim1`, `sim2:φ`, `sim3` or `κ:φ,κ:φ,…`.
    #[arg(long, default_value = "sim1")]
    latent: String,
    /// Mixing matrix CSV; identity when absent.
    #[arg(long)]
    mixing: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated kernels, e.g. `ring:0:25,ring:25:50` or `{B(1),R(1,2)}`.
    #[arg(long)]
    kernels: String,
    #[arg(long)]
    centered: bool,
    /// Also write the criterion after each sweep.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct MdiArgs {
    #[arg(long)]
    gamma: PathBuf,
    /// Mixing matrix; identity when absent.
    #[arg(long)]
    omega: Option<PathBuf>,
    /// Sample size, to also report `n (p − 1) MDI²`.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct AsymptArgs {
    #[arg(long)]
    locations: PathBuf,
    #[arg(long, default_value = "sim1")]
    latent: String,
    #[arg(long)]
    kernels: String,
    #[arg(long)]
    mixing: Option<PathBuf>,
    /// Also write the full limiting covariance of the unmixing estimator.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct ExperimentSource {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// `sim1`, `sim1-full`, `sim2`, `sim3-uniform` or `sim3-skew`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    sample_sizes: Option<Vec<usize>>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    source: ExperimentSource,
}

#[derive(Args)]
struct DensityArgs {
    #[command(flatten)]
    source: ExperimentSource,
    /// Draws from the limit law per kernel set and sample size.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// CSV with `x1…xd` coordinates followed by the variables.
    #[arg(long)]
    data: PathBuf,
    /// Kernel set; repeat for several.
    #[arg(long = "kernels", required = true)]
    kernel_sets: Vec<String>,
    /// Reference scores aligned by row.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Distinct estimates for distinct reference components.
    #[arg(long)]
    one_to_one: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Fit(a) => fit(&cli, a),
        Command::Mdi(a) => mdi_cmd(&cli, a),
        Command::Asympt(a) => asympt(&cli, a),
        Command::Experiment(a) => experiment(&cli, a),
        Command::Density(a) => density(&cli, a),
        Command::Analyze(a) => analyze(&cli, a),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn identity_or(path: Option<&PathBuf>, p: usize) -> Result<Mat> {
    match path {
        None => Ok(Mat::identity(p, p)),
        Some(f) => {
            let m = io::read_matrix(f)?;
            if m.shape() != (p, p) {
                bail!("{}: expected a {p}x{p} matrix, found {:?}", f.display(), m.shape());
            }
            Ok(m)
        }
    }
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let t = Instant::now();
    let seed = cli.seed.unwrap_or(1);
    let latent_cfg = parse_latent(&a.latent)?;
    let latent = latent_cfg.build()?;
    let (locs, design) = match (&a.locations, &a.design) {
        (Some(f), None) => (io::read_locations(f)?, format!("file:{}", f.display())),
        (None, Some(d)) => (d.generate(&mut harness::design_rng(seed))?, d.to_string()),
        _ => bail!("give --locations or --design"),
    };
    let omega = identity_or(a.mixing.as_ref(), latent.p())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, jitter) = harness::simulate_field(&locs, &latent, &omega, &mut rng)?;
    let out = cli.out.clone().unwrap_or_else(|| "sample.csv".into());
    io::write_sample(&out, &x)?;
    let mut m = Manifest::new("simulate", seed, 1);
    m.output(&out)
        .detail("design", design)
        .detail("latent", &a.latent)
        .detail("n", locs.n())
        .detail("jitter", format!("{jitter:?}"))
        .timings(&[Timing {
            stage: "total".into(),
            seconds: t.elapsed().as_secs_f64(),
        }]);
    m.write(&sidecar(&out, ".meta.toml"))?;
    Ok(())
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let t = Instant::now();
    let data = io::read_sample(&a.data)?;
    let set = KernelSet::parse(&a.kernels)?;
    let cfg = JointDiagConfig::default();
    let fit = Sbss::new(data.sample.locations(), &set.kernels)?.fit_values(data.sample.values(), a.centered, &cfg)?;
    let prefix = cli.out.clone().unwrap_or_else(|| "fit".into());
    let gamma = sidecar(&prefix, ".gamma.csv");
    let lambda = sidecar(&prefix, ".lambda.csv");
    let scores = sidecar(&prefix, ".scores.csv");
    io::write_matrix(&gamma, fit.gamma())?;
    let lam = Mat::from_fn(fit.unmixing.lambdas.len(), data.sample.p(), |l, j| fit.unmixing.lambdas[l][j]);
    io::write_matrix(&lambda, &lam)?;
    let header: Vec<String> = (1..=data.sample.p()).map(|j| format!("z{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_named_matrix(&scores, &header, &fit.scores)?;
    let mut m = Manifest::new("fit", cli.seed.unwrap_or(0), 1);
    m.output(&gamma).output(&lambda).output(&scores);
    if a.trace {
        let trace = sidecar(&prefix, ".trace.csv");
        io::write_rows(
            &trace,
            &["sweep", "criterion"],
            fit.unmixing.trace.iter().enumerate().map(|(i, c)| [i.to_string(), fmt_fixed(*c)]),
        )?;
        m.output(&trace);
    }
    m.detail("kernels", &set.label)
        .detail("centered", a.centered)
        .detail("sweeps", fit.unmixing.sweeps)
        .detail("status", format!("{:?}", fit.unmixing.status))
        .timings(&[Timing {
            stage: "total".into(),
            seconds: t.elapsed().as_secs_f64(),
        }]);
    m.write(&sidecar(&prefix, ".manifest.toml"))?;
    Ok(())
}

fn mdi_cmd(cli: &Cli, a: &MdiArgs) -> Result<()> {
    let gamma = io::read_matrix(&a.gamma)?;
    let omega = identity_or(a.omega.as_ref(), gamma.nrows())?;
    let v = mdi(&gamma, &omega)?;
    let assignment: Vec<String> = v.assignment.iter().map(|j| (j + 1).to_string()).collect();
    let mut header = vec!["mdi", "assignment"];
    let mut row = vec![v.value.to_string(), assignment.join(" ")];
    if let Some(n) = a.n {
        header.push("nmdi");
        row.push(nmdi_from_mdi(v.value, n, gamma.nrows()).to_string());
    }
    println!("{}", header.join(","));
    println!("{}", row.join(","));
    if let Some(out) = &cli.out {
        io::write_rows(out, &header, [row])?;
    }
    Ok(())
}

fn asympt(cli: &Cli, a: &AsymptArgs) -> Result<()> {
    let t = Instant::now();
    let locs = io::read_locations(&a.locations)?;
    let latent = parse_latent(&a.latent)?.build()?;
    let set = KernelSet::parse(&a.kernels)?;
    let spec = harness::asymptotic_mean(&locs, &latent, &set.kernels)?;
    let prefix = cli.out.clone().unwrap_or_else(|| "asympt".into());
    let deltas = sidecar(&prefix, ".deltas.csv");
    io::write_rows(&deltas, &["delta"], spec.deltas.iter().map(|d| [d.to_string()]))?;
    println!("sum_delta,{}", spec.expected_nmdi);
    let mut m = Manifest::new("asympt", cli.seed.unwrap_or(0), 1);
    m.output(&deltas)
        .detail("kernels", &set.label)
        .detail("latent", &a.latent)
        .detail("n", locs.n())
        .detail("sum_delta", spec.expected_nmdi);
    if a.full {
        let omega = identity_or(a.mixing.as_ref(), latent.p())?;
        let ws = AsymptoticWorkspace::new(&locs, &latent, &omega)?;
        let f = if set.kernels.len() == 1 {
            f1(&ws, &set.kernels[0])?
        } else {
            fk(&ws, &set.kernels)?
        };
        let path = sidecar(&prefix, ".f.csv");
        io::write_matrix(&path, &f.matrix)?;
        m.output(&path);
    }
    m.timings(&[Timing {
        stage: "total".into(),
        seconds: t.elapsed().as_secs_f64(),
    }]);
    m.write(&sidecar(&prefix, ".manifest.toml"))?;
    Ok(())
}

fn resolve(cli: &Cli, s: &ExperimentSource) -> Result<ExperimentConfig> {
    let mut cfg = match (&s.config, &s.preset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        _ => bail!("give --config or --preset"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(r) = s.replications {
        cfg.replications = r;
    }
    if let Some(n) = &s.sample_sizes {
        cfg.sample_sizes.clone_from(n);
    }
    if let Some(out) = &cli.out {
        cfg.outputs = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.outputs.clone().unwrap_or_else(|| "results".into());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn experiment(cli: &Cli, a: &ExperimentArgs) -> Result<()> {
    let cfg = resolve(cli, &a.source)?;
    if a.source.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let report = harness::run_experiment(&cfg, cli.threads)?;
    let dir = out_dir(&cfg)?;
    let path = dir.join("report.csv");
    std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    print!("{}", report.to_csv());
    let mut m = Manifest::new("experiment", cfg.seed, cli.threads);
    m.config_hash = Some(cfg.hash());
    m.output(&path).detail("failures", report.failures());
    for r in report.rows.iter() {
        if let Some(e) = &r.failure_example {
            m.detail(&format!("failure n={} {}", r.n, r.kernel_set), e);
        }
        if let Some(e) = &r.asymptotic_error {
            m.detail(&format!("asymptotic n={} {}", r.n, r.kernel_set), e);
        }
    }
    if report.failures() > 0 {
        eprintln!("{} replications failed and were excluded", report.failures());
    }
    m.timings(&report.timings);
    m.write(&dir.join("manifest.toml"))?;
    Ok(())
}

fn density(cli: &Cli, a: &DensityArgs) -> Result<()> {
    let cfg = resolve(cli, &a.source)?;
    if a.source.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let cmp = harness::run_density_comparison(&cfg, a.draws, cli.threads)?;
    let dir = out_dir(&cfg)?;
    let mut m = Manifest::new("density", cfg.seed, cli.threads);
    m.config_hash = Some(cfg.hash());
    let mut index = Vec::new();
    let sets = cfg.kernel_sets()?.len();
    for (i, s) in cmp.samples.iter().enumerate() {
        let name = format!("density_n{}_set{}.csv", s.n, i % sets + 1);
        let path = dir.join(&name);
        std::fs::write(&path, s.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        m.output(&path);
        index.push([
            name,
            s.n.to_string(),
            format!("\"{}\"", s.kernel_set),
            s.empirical.len().to_string(),
            s.failures.to_string(),
            s.limit.len().to_string(),
            s.deltas.iter().sum::<f64>().to_string(),
        ]);
    }
    let index_path = dir.join("density_index.csv");
    io::write_rows(
        &index_path,
        &["file", "n", "kernel_set", "empirical", "failures", "limit", "sum_delta"],
        index,
    )?;
    m.output(&index_path).timings(&cmp.timings);
    m.write(&dir.join("manifest.toml"))?;
    Ok(())
}

fn analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<()> {
    let t = Instant::now();
    let data = io::read_sample(&a.data)?;
    let sets = a
        .kernel_sets
        .iter()
        .map(|s| KernelSet::parse(s))
        .collect::<sbss::Result<Vec<_>>>()?;
    let reference = match &a.reference {
        Some(path) => {
            let table = io::read_table(path)?;
            Some(Mat::from_fn(table.rows.len(), table.ncols(), |i, j| table.rows[i][j]))
        }
        None => None,
    };
    let matching = if a.one_to_one {
        Matching::OneToOne
    } else {
        Matching::Greedy
    };
    let res = harness::run_data_analysis(&data, &sets, reference.as_ref(), matching)?;
    let prefix = cli.out.clone().unwrap_or_else(|| "analysis".into());
    let mut m = Manifest::new("analyze", cli.seed.unwrap_or(0), 1);
    let p = data.sample.p();
    let header: Vec<String> = (1..=p).map(|j| format!("z{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    for (k, f) in res.fits.iter().enumerate() {
        let base = sidecar(&prefix, &format!(".set{}", k + 1));
        let gamma = sidecar(&base, ".gamma.csv");
        let lambda = sidecar(&base, ".lambda.csv");
        let scores = sidecar(&base, ".scores.csv");
        io::write_matrix(&gamma, f.fit.gamma())?;
        let lam = Mat::from_fn(f.fit.unmixing.lambdas.len(), p, |l, j| f.fit.unmixing.lambdas[l][j]);
        io::write_matrix(&lambda, &lam)?;
        io::write_named_matrix(&scores, &header, &f.fit.scores)?;
        m.output(&gamma).output(&lambda).output(&scores).detail(&format!("set{}", k + 1), &f.label);
    }
    if let Some(csv) = res.correlation_csv() {
        let path = sidecar(&prefix, ".correlations.csv");
        std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
        print!("{csv}");
        m.output(&path);
    }
    m.detail("variables", data.variables.join(" ")).timings(&[Timing {
        stage: "total".into(),
        seconds: t.elapsed().as_secs_f64(),
    }]);
    m.write(&sidecar(&prefix, ".manifest.toml"))?;
    Ok(())
}
