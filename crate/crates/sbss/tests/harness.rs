use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbss::config::{random_mixing, ExperimentConfig, KernelSet, KernelSetConfig};
use sbss::harness::{ks_distance, run_data_analysis, run_density_comparison, run_experiment};
use sbss::io::NamedSample;
use sbss::specs::{Design, LatentConfig};
use sbss_core::asymptotics::{sample_limit_nmdi, LimitSpectrum};
use sbss_core::field_sim::{mix, simulate_latent, LatentSpec};
use sbss_core::metrics::Matching;
use sbss_core::spatial::gen_uniform_rect;

fn small(sets: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        seed: 5,
        replications: 1,
        sample_sizes: vec![50],
        centered: false,
        outputs: None,
        design: Design::NestedSquares { base: 50, layers: 1 },
        latent: LatentConfig::preset("sim1"),
        mixing: Default::default(),
        kernel_sets: sets.iter().map(|s| KernelSetConfig::new(s)).collect(),
    }
}

#[test]
fn single_replication_smoke() {
    let report = run_experiment(&small(&["B(1)"]), 1).unwrap();
    assert_eq!(report.rows.len(), 1);
    let row = &report.rows[0];
    assert_eq!((row.n, row.replications, row.failures), (50, 1, 0));
    assert!(row.mean_nmdi.is_finite() && row.asymptotic.is_some_and(f64::is_finite));
    assert!(report.to_csv().starts_with("n,kernel_set,replications,failures,mean_nmdi,mc_se,asymptotic_sum_delta\n"));
}

#[test]
fn rows_cover_sizes_and_sets() {
    let cfg = ExperimentConfig {
        replications: 3,
        sample_sizes: vec![50, 100],
        design: Design::NestedSquares { base: 50, layers: 2 },
        ..small(&["B(1)", "{B(1),R(1,2)}"])
    };
    let report = run_experiment(&cfg, 2).unwrap();
    let keys: Vec<(usize, &str)> = report.rows.iter().map(|r| (r.n, r.kernel_set.as_str())).collect();
    assert_eq!(keys, [(50, "B(1)"), (50, "{B(1),R(1,2)}"), (100, "B(1)"), (100, "{B(1),R(1,2)}")]);
    assert!(report.to_csv().contains("\"{B(1),R(1,2)}\""));
}

#[test]
fn failed_replications_are_counted() {
    let cfg = ExperimentConfig {
        replications: 4,
        sample_sizes: vec![3],
        design: Design::Uniform {
            n: 3,
            lower: [0.0, 0.0],
            upper: [2.0, 2.0],
        },
        ..small(&["B(1)"])
    };
    let report = run_experiment(&cfg, 1).unwrap();
    let row = &report.rows[0];
    assert_eq!((row.replications, row.failures), (0, 4));
    assert!(row.failure_example.as_deref().is_some_and(|e| e.contains("observations")));
    assert_eq!(report.failures(), 4);
    assert!(report.to_csv().lines().nth(1).unwrap().starts_with("3,B(1),0,4,"));
}

#[test]
fn zero_spectrum_gives_zero_draws() {
    let spec = LimitSpectrum {
        deltas: vec![0.0; 6],
        expected_nmdi: 0.0,
    };
    let draws = sample_limit_nmdi(&spec, 1000, &mut ChaCha8Rng::seed_from_u64(1));
    assert!(draws.iter().all(|&d| d == 0.0));
}

#[test]
fn density_sample_shapes() {
    let cfg = ExperimentConfig {
        replications: 7,
        sample_sizes: vec![400],
        design: Design::NestedSquares { base: 200, layers: 2 },
        ..small(&["R(1,2)"])
    };
    let cmp = run_density_comparison(&cfg, 100_000, 0).unwrap();
    assert_eq!(cmp.samples.len(), 1);
    let s = &cmp.samples[0];
    assert_eq!((s.empirical.len(), s.limit.len()), (7, 100_000));
    let csv = s.to_csv();
    assert_eq!(csv.lines().count(), 100_001);
    assert!(csv.lines().nth(8).unwrap().starts_with(','));
}

#[test]
fn empirical_and_limit_laws_agree_for_ring() {
    let mut cfg = ExperimentConfig::preset("sim1").unwrap();
    cfg.sample_sizes = vec![1600];
    cfg.replications = 300;
    cfg.kernel_sets = vec![KernelSetConfig::new("R(1,2)")];
    let cmp = run_density_comparison(&cfg, 100_000, 0).unwrap();
    let s = &cmp.samples[0];
    let d = ks_distance(&s.empirical, &s.limit);
    println!("KS distance at n=1600: {d:.4}");
    assert!(d < 0.1, "KS distance {d}");
}

fn synthetic(n: usize, seed: u64) -> (NamedSample, sbss_core::Mat) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (n as f64).sqrt();
    let locs = gen_uniform_rect(n, &[0.0, 0.0], &[side, side], &mut rng).unwrap();
    let z = simulate_latent(&locs, &LatentSpec::sim1(), &mut rng).unwrap();
    let omega = random_mixing(3, &mut rng);
    let x = mix(&z, &omega).unwrap();
    let truth = z.values().clone();
    (
        NamedSample {
            sample: x,
            variables: vec!["a".into(), "b".into(), "c".into()],
        },
        truth,
    )
}

#[test]
fn analysis_recovers_known_sources() {
    let (data, truth) = synthetic(1000, 61);
    let sets = [KernelSet::parse("R(1,2)").unwrap()];
    let res = run_data_analysis(&data, &sets, Some(&truth), Matching::Greedy).unwrap();
    let corr = &res.correlations.unwrap()[0];
    assert!(corr.values.iter().all(|&v| v > 0.95), "{:?}", corr.values);
    let mut matched = corr.matching.clone();
    matched.sort_unstable();
    assert_eq!(matched, vec![0, 1, 2]);
}

#[test]
fn analysis_against_own_scores() {
    let (data, _) = synthetic(300, 62);
    let sets = [KernelSet::parse("B(1)").unwrap(), KernelSet::parse("{B(1),R(1,2)}").unwrap()];
    let first = run_data_analysis(&data, &sets[..1], None, Matching::Greedy).unwrap();
    assert!(first.correlations.is_none() && first.correlation_csv().is_none());
    let own = first.fits[0].fit.scores.clone();
    let res = run_data_analysis(&data, &sets, Some(&own), Matching::OneToOne).unwrap();
    assert_eq!(res.fits.len(), 2);
    let corr = res.correlations.as_ref().unwrap();
    assert!(corr[0].values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert_eq!(corr[0].matching, vec![0, 1, 2]);
    let table = res.correlation_csv().unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(table.starts_with("component,B(1),B(1) match,\"{B(1),R(1,2)}\",\"{B(1),R(1,2)} match\"\n"));
}

#[test]
fn analysis_rejects_misaligned_reference() {
    let (data, truth) = synthetic(100, 63);
    let sets = [KernelSet::parse("B(1)").unwrap()];
    let short = truth.rows(0, 50).into_owned();
    assert!(run_data_analysis(&data, &sets, Some(&short), Matching::Greedy).is_err());
}
