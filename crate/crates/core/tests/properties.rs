use proptest::prelude::*;

use sbss_core::asymptotics::{build_workspace, f1_matrix, fk_matrix, sigma_pair, sigma_pair_dense, v_matrix};
use sbss_core::diagonalizer::{canonicalize, criterion, joint_diagonalize, pair_diagonalize, JointDiagConfig};
use sbss_core::field_sim::{matern, LatentSpec, MaternParams};
use sbss_core::kernels::weight_matrix;
use sbss_core::linalg::{frobenius, sym_eigen_desc};
use sbss_core::local_cov::local_covariance;
use sbss_core::metrics::{mdi, nmdi};
use sbss_core::spatial::{distance_matrix, gen_diamond_grid, gen_rectangle_grid};
use sbss_core::{FieldSample, Kernel, LocationSet, Mat};

fn square(p: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-2.0f64..2.0, p * p).prop_map(move |v| Mat::from_row_slice(p, p, &v))
}

fn spd(p: usize) -> impl Strategy<Value = Mat> {
    square(p).prop_map(move |a| &a * a.transpose() + Mat::identity(p, p) * 0.2)
}

fn sym(p: usize) -> impl Strategy<Value = Mat> {
    square(p).prop_map(|a| (&a + a.transpose()) * 0.5)
}

fn invertible(p: usize) -> impl Strategy<Value = Mat> {
    square(p).prop_filter("well conditioned", |a| {
        let sv = a.clone().singular_values();
        sv.min() / sv.max() > 1e-2
    })
}

fn points(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = LocationSet> {
    prop::collection::vec(-5.0f64..5.0, n.start * d..n.end * d)
        .prop_map(move |mut v| {
            v.truncate(v.len() / d * d);
            v
        })
        .prop_filter_map("distinct points", move |v| LocationSet::from_rows(d, v).ok())
}

/// Random pair of a signed permutation and positive scaling.
fn group_element(p: usize) -> impl Strategy<Value = Mat> {
    (Just((0..p).collect::<Vec<usize>>()).prop_shuffle(), prop::collection::vec((0.1f64..5.0, any::<bool>()), p))
        .prop_map(move |(perm, scales)| {
            let mut c = Mat::zeros(p, p);
            for (i, (&j, (s, neg))) in perm.iter().zip(scales).enumerate() {
                c[(i, j)] = if neg { -s } else { s };
            }
            c
        })
}

fn brute_mdi(g: &Mat) -> f64 {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    let p = g.nrows();
    let best = perms(p)
        .into_iter()
        .map(|perm| {
            (0..p)
                .map(|i| {
                    let row = g.row(i);
                    let norm: f64 = row.iter().map(|v| v * v).sum();
                    1.0 - row[perm[i]] * row[perm[i]] / norm
                })
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    if p == 1 {
        0.0
    } else {
        (best.max(0.0) / (p - 1) as f64).sqrt()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_matrix_exactly_symmetric(locs in points(1..20, 2)) {
        let d = distance_matrix(&locs);
        prop_assert_eq!(d.clone(), d.transpose());
        prop_assert!(d.diagonal().iter().all(|v| *v == 0.0));
        prop_assert!(d.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn grid_counts(m in 0usize..=50) {
        prop_assert_eq!(gen_diamond_grid(m).n(), 2 * m * m + 2 * m + 1);
        prop_assert_eq!(gen_rectangle_grid(m).n(), (2 * m + 1) * (m + 1));
    }

    #[test]
    fn weight_matrices_symmetric(locs in points(1..15, 2), h in 0.0f64..4.0, w in 0.0f64..3.0, r in 0.1f64..4.0) {
        for k in [Kernel::Identity, Kernel::Ball(h), Kernel::Ring(h, h + w), Kernel::Gauss(r)] {
            let m = weight_matrix(&k, &locs);
            prop_assert_eq!(m.clone(), m.transpose());
        }
    }

    #[test]
    fn ball_dominates_ring_on_grids(m in 1usize..8, h1 in 0.0f64..3.0, w in 0.0f64..3.0) {
        let locs = gen_diamond_grid(m);
        let ball = weight_matrix(&Kernel::Ball(h1 + w), &locs);
        let ring = weight_matrix(&Kernel::Ring(h1, h1 + w), &locs);
        prop_assert!(ball.iter().zip(ring.iter()).all(|(b, r)| b >= r));
    }

    #[test]
    fn gauss_strictly_decreasing(r in 0.1f64..10.0, a in 0.0f64..5.0, b in 0.001f64..5.0) {
        let k = Kernel::Gauss(r);
        prop_assert!(k.eval(a * r) > k.eval((a + b) * r) || k.eval((a + b) * r) == 0.0);
        prop_assert_eq!(k.eval(0.0), 1.0);
    }

    #[test]
    fn matern_decreasing(kappa in 0.1f64..10.0, phi in 0.1f64..5.0, h in 0.0f64..20.0, dh in 1e-3f64..1.0) {
        let p = MaternParams::new(kappa, phi).unwrap();
        let (a, b) = (matern(h, &p), matern(h + dh, &p));
        prop_assert!(a >= b && a <= 1.0 && b >= 0.0);
    }

    #[test]
    fn local_cov_affine(a in square(3), h in 0.5f64..3.0, centered in any::<bool>()) {
        let locs = gen_diamond_grid(3);
        let n = locs.n();
        let x = Mat::from_fn(n, 3, |i, j| ((i * 7 + j * 3) as f64 * 0.61).sin());
        let s = FieldSample::new(locs.clone(), x.clone()).unwrap();
        let ax = FieldSample::new(locs, &x * a.transpose()).unwrap();
        for k in [Kernel::Identity, Kernel::Ball(h), Kernel::Ring(1.0, h + 1.0)] {
            let m = local_covariance(&s, &k, centered).unwrap();
            let ma = local_covariance(&ax, &k, centered).unwrap();
            let want = &a * m.matrix() * a.transpose();
            prop_assert!((ma.matrix() - &want).abs().max() <= 1e-12 * (1.0 + want.abs().max()));
            prop_assert_eq!(ma.matrix().clone(), ma.matrix().transpose());
        }
    }

    #[test]
    fn pair_identities(p in 2usize..=4, seed in any::<u64>()) {
        let (m0, mf) = random_pair(p, seed);
        let r = pair_diagonalize(&m0, &mf).unwrap();
        let g = &r.gamma;
        prop_assert!(frobenius(&(g * &m0 * g.transpose() - Mat::identity(p, p))) < 1e-8);
        let d = g * &mf * g.transpose();
        let off = Mat::from_fn(p, p, |i, j| if i == j { 0.0 } else { d[(i, j)] });
        prop_assert!(frobenius(&off) < 1e-8);
        prop_assert!(r.lambdas[0].as_slice().windows(2).all(|w| w[0] >= w[1]));
        for i in 0..p {
            prop_assert!(g.row(i).sum() >= 0.0);
        }
    }

    #[test]
    fn joint_invariants(p in 2usize..=4, k in 1usize..=4, seed in any::<u64>()) {
        let (m0, ms) = random_family(p, k, seed);
        let r = joint_diagonalize(&m0, &ms, &JointDiagConfig::default()).unwrap();
        let g = &r.gamma;
        prop_assert!(frobenius(&(g * &m0 * g.transpose() - Mat::identity(p, p))) < 1e-8);
        prop_assert!(r.trace.windows(2).all(|w| w[1] >= w[0] - 1e-13), "trace {:?}", r.trace);
        let w = sbss_core::local_cov::whitener(&m0).unwrap();
        let bound: f64 = ms.iter().map(|m| frobenius(&(&w * m * &w)).powi(2)).sum();
        prop_assert!(r.criterion <= bound + 1e-9);
        prop_assert!((criterion(g, &ms) - r.criterion).abs() == 0.0);
    }

    #[test]
    fn joint_single_matrix_matches_pair(p in 2usize..=4, seed in any::<u64>()) {
        let (m0, mf) = random_pair(p, seed);
        let a = pair_diagonalize(&m0, &mf).unwrap();
        let b = joint_diagonalize(&m0, std::slice::from_ref(&mf), &JointDiagConfig::default()).unwrap();
        prop_assert!((&a.gamma - &b.gamma).abs().max() < 1e-6);
    }

    #[test]
    fn canonicalize_idempotent(p in 1usize..=5, seed in any::<u64>(), k in 1usize..=3) {
        let (_, ms) = random_family(p, k, seed);
        let g = random_square(p, seed ^ 0xabcdef);
        let once = canonicalize(&g, &ms);
        let twice = canonicalize(&once.gamma, &ms);
        prop_assert_eq!(&twice.gamma, &once.gamma);
        prop_assert_eq!(twice.perm, (0..p).collect::<Vec<_>>());
    }

    #[test]
    fn mdi_in_unit_interval_and_matches_brute_force(p in 1usize..=6, seed in any::<u64>()) {
        let g = random_square(p, seed);
        if let Ok(m) = mdi(&g, &Mat::identity(p, p)) {
            prop_assert!((0.0..=1.0).contains(&m.value));
            prop_assert!((m.value - brute_mdi(&g)).abs() < 1e-12);
        }
    }

    #[test]
    fn mdi_group_invariance(g in square(4), c in group_element(4)) {
        prop_assume!(g.clone().singular_values().min() > 1e-3);
        let a = mdi(&g, &Mat::identity(4, 4)).unwrap().value;
        let b = mdi(&(&c * &g), &Mat::identity(4, 4)).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(mdi(&c, &Mat::identity(4, 4)).unwrap().value < 1e-12);
    }

    #[test]
    fn mdi_depends_only_on_product(gamma in invertible(3), omega in invertible(3)) {
        let a = mdi(&gamma, &omega).unwrap().value;
        let b = mdi(&(&gamma * &omega), &Mat::identity(3, 3)).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
        let n = nmdi(&gamma, &omega, 100).unwrap();
        prop_assert!((n - 200.0 * a * a).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sigma_structured_matches_dense(n in 1usize..=6, p in 1usize..=3, seed in any::<u64>()) {
        let (locs, latent, omega) = random_setup(n, p, seed);
        let ws = build_workspace(&locs, &latent, &omega).unwrap();
        for (f, g) in [(Kernel::Identity, Kernel::Ball(1.0)), (Kernel::Ring(0.5, 1.5), Kernel::Gauss(0.8))] {
            for use_rz in [false, true] {
                let s = sigma_pair(&ws, &f, &g, use_rz);
                let d = sigma_pair_dense(&ws, &f, &g, use_rz);
                prop_assert!((&s - &d).abs().max() <= 1e-10 * d.abs().max().max(1e-300));
            }
        }
    }

    #[test]
    fn covariances_symmetric_psd(n in 3usize..=8, seed in any::<u64>()) {
        let (locs, latent, omega) = random_setup(n, 3, seed);
        let ws = build_workspace(&locs, &latent, &omega).unwrap();
        let f = Kernel::Ball(1.2);
        let mut mats = vec![sigma_pair(&ws, &f, &f, false), v_matrix(&ws, &f)];
        if let Ok(m) = f1_matrix(&ws, &f) { mats.push(m); }
        if let Ok(m) = fk_matrix(&ws, &[f, Kernel::Ring(1.2, 2.5)]) { mats.push(m); }
        for m in mats {
            prop_assert_eq!(m.clone(), m.transpose());
            let (vals, _) = sym_eigen_desc(&m);
            prop_assert!(vals.min() >= -1e-8 * vals.max().max(1e-300), "{vals}");
        }
    }
}

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn random_square(p: usize, seed: u64) -> Mat {
    use rand::Rng;
    let mut r = rng(seed);
    Mat::from_fn(p, p, |_, _| r.random_range(-2.0..2.0))
}

fn random_pair(p: usize, seed: u64) -> (Mat, Mat) {
    let (m0, ms) = random_family(p, 1, seed);
    (m0, ms.into_iter().next().unwrap())
}

/// Random orthogonal matrix from the QR factor of a Gaussian-like matrix.
fn random_orthogonal(p: usize, seed: u64) -> Mat {
    random_square(p, seed).qr().q()
}

/// `M₀` with eigenvalues in `[0.5, 2]` and `M_l` with eigenvalues in
/// `[−1, 1]`, the scale of whitened local covariances.
fn random_family(p: usize, k: usize, seed: u64) -> (Mat, Vec<Mat>) {
    use rand::Rng;
    let mut r = rng(seed ^ 0x5eed);
    let q = random_orthogonal(p, seed);
    let d0 = Mat::from_diagonal(&nalgebra::DVector::from_fn(p, |_, _| r.random_range(0.5..2.0)));
    let m0 = &q * d0 * q.transpose();
    let ms = (0..k)
        .map(|l| {
            let ql = random_orthogonal(p, seed.wrapping_add(l as u64 + 1));
            let dl = Mat::from_diagonal(&nalgebra::DVector::from_fn(p, |_, _| r.random_range(-1.0..1.0)));
            let m = &ql * dl * ql.transpose();
            (&m + m.transpose()) * 0.5
        })
        .collect();
    (m0, ms)
}

fn random_setup(n: usize, p: usize, seed: u64) -> (LocationSet, LatentSpec, Mat) {
    use rand::Rng;
    let mut r = rng(seed);
    let coords: Vec<f64> = (0..2 * n).map(|_| r.random_range(0.0..3.0)).collect();
    let locs = LocationSet::from_rows(2, coords).unwrap();
    let pairs: Vec<(f64, f64)> = (0..p).map(|_| (r.random_range(0.2..3.0), r.random_range(0.3..2.0))).collect();
    let latent = LatentSpec::from_pairs(&pairs).unwrap();
    let omega = loop {
        let o = Mat::from_fn(p, p, |_, _| r.random_range(-1.5..1.5));
        let sv = o.clone().singular_values();
        if sv.min() / sv.max() > 0.05 {
            break o;
        }
    };
    (locs, latent, omega)
}

proptest! {
    #[test]
    fn whitener_residual(m0 in spd(3)) {
        let w = sbss_core::local_cov::whitener(&m0).unwrap();
        prop_assert_eq!(w.clone(), w.transpose());
        prop_assert!(frobenius(&(&w * &m0 * &w - Mat::identity(3, 3))) < 1e-10);
    }

    #[test]
    fn pair_identities_from_strategies(m0 in spd(3), mf in sym(3)) {
        let r = pair_diagonalize(&m0, &mf).unwrap();
        let g = &r.gamma;
        prop_assert!(frobenius(&(g * &m0 * g.transpose() - Mat::identity(3, 3))) < 1e-8);
        let d = g * &mf * g.transpose();
        prop_assert!((d[(0, 1)].abs() + d[(0, 2)].abs() + d[(1, 2)].abs()) < 1e-8);
    }
}
