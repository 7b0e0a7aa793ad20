//! Limiting covariances of the local covariance estimators and of the
//! unmixing estimators, the limit law of the scaled minimum distance index,
//! and kernel selection built on it.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diagonalizer::identifiability_check_diags;
use crate::error::{Error, Result};
use crate::field_sim::LatentSpec;
use crate::kernels::{validate_kernel_list, weight_matrix, Kernel, SparseWeights};
use crate::linalg::{checked_inverse, fix_sign, is_symmetric, sym_eigen_desc, symmetrize, CompensatedSum, Mat};
use crate::spatial::LocationSet;

/// Smallest separation of population diagonals treated as identifiable.
pub const GAP_MARGIN: f64 = 1e-8;

/// Limit eigenvalues below this fraction of the largest are set to zero.
pub const SPECTRUM_CLIP: f64 = 1e-10;

/// Locations, latent model and mixing matrix with the per-component
/// correlation matrices `Kₐ(sᵢ − sⱼ)`, from which the latent covariance
/// `R_z = Σₐ Kₐ ⊗ Eₐₐ` is formed implicitly.
#[derive(Debug, Clone)]
pub struct AsymptoticWorkspace {
    locs: LocationSet,
    latent: LatentSpec,
    omega: Mat,
    omega_inv: Mat,
    corr: Vec<Mat>,
}

pub fn build_workspace(locs: &LocationSet, latent: &LatentSpec, omega: &Mat) -> Result<AsymptoticWorkspace> {
    AsymptoticWorkspace::new(locs, latent, omega)
}

impl AsymptoticWorkspace {
    pub fn new(locs: &LocationSet, latent: &LatentSpec, omega: &Mat) -> Result<Self> {
        let p = latent.p();
        if omega.shape() != (p, p) {
            return Err(Error::Dimension(alloc::format!(
                "mixing matrix is {}×{} for {p} components",
                omega.nrows(),
                omega.ncols()
            )));
        }
        let omega_inv = checked_inverse(omega)?;
        let corr = (0..p).map(|a| latent.correlation_matrix(a, locs)).collect();
        Ok(Self {
            locs: locs.clone(),
            latent: latent.clone(),
            omega: omega.clone(),
            omega_inv,
            corr,
        })
    }

    pub fn n(&self) -> usize {
        self.locs.n()
    }

    pub fn p(&self) -> usize {
        self.latent.p()
    }

    pub fn locations(&self) -> &LocationSet {
        &self.locs
    }

    pub fn latent(&self) -> &LatentSpec {
        &self.latent
    }

    pub fn omega(&self) -> &Mat {
        &self.omega
    }

    pub fn omega_inv(&self) -> &Mat {
        &self.omega_inv
    }

    /// `n × n` correlation matrix of latent component `a`.
    pub fn component_correlation(&self, a: usize) -> &Mat {
        &self.corr[a]
    }

    /// Dense `np × np` latent covariance; block `(i, j)` is `diag(Kₐ(sᵢ − sⱼ))`.
    pub fn r_z(&self) -> Mat {
        let (n, p) = (self.n(), self.p());
        let mut r = Mat::zeros(n * p, n * p);
        for i in 0..n {
            for j in 0..n {
                for a in 0..p {
                    r[(i * p + a, j * p + a)] = self.corr[a][(i, j)];
                }
            }
        }
        r
    }

    /// Diagonal of `Ω⁻¹ M(f) Ω⁻ᵀ`.
    pub fn latent_diag(&self, k: &Kernel) -> Vec<f64> {
        let w = SparseWeights::new(k, &self.locs);
        let n = self.n();
        self.corr
            .iter()
            .map(|c| {
                let mut s = CompensatedSum::default();
                for i in 0..n {
                    for (j, f) in w.row(i) {
                        s.add(f * c[(i, j)]);
                    }
                }
                s.value() / n as f64
            })
            .collect()
    }

    /// `c_ab(f, g) = tr(Kₐ F K_b G)` for every pair of kernels in the list,
    /// indexed `[f][g]` and then `(a, b)`.
    fn trace_coefficients(&self, kernels: &[Kernel]) -> Vec<Vec<Mat>> {
        let (n, p, nk) = (self.n(), self.p(), kernels.len());
        let weights = SparseWeights::batch(kernels, &self.locs);
        let mut acc = alloc::vec![alloc::vec![alloc::vec![CompensatedSum::default(); p * p]; nk]; nk];
        // Row i of Kₐ F is F·Kₐ[:, i]; column i of K_b G is Σ_k G_ik K_b[k, :].
        let mut u = alloc::vec![alloc::vec![0.0; n]; nk * p];
        let mut v = alloc::vec![alloc::vec![0.0; n]; nk * p];
        for i in 0..n {
            for (fi, w) in weights.iter().enumerate() {
                for a in 0..p {
                    let col = self.corr[a].column(i);
                    let out = &mut u[fi * p + a];
                    w.mul_vec(col.as_slice(), out);
                    let out = &mut v[fi * p + a];
                    out.iter_mut().for_each(|x| *x = 0.0);
                    for (k, g) in w.row(i) {
                        let row = self.corr[a].column(k);
                        for (o, r) in out.iter_mut().zip(row.iter()) {
                            *o += g * r;
                        }
                    }
                }
            }
            for f in 0..nk {
                for g in 0..nk {
                    for a in 0..p {
                        for b in 0..p {
                            let d: f64 = u[f * p + a].iter().zip(&v[g * p + b]).map(|(x, y)| x * y).sum();
                            acc[f][g][a * p + b].add(d);
                        }
                    }
                }
            }
        }
        acc.into_iter()
            .map(|row| {
                row.into_iter()
                    .map(|c| Mat::from_fn(p, p, |a, b| c[a * p + b].value()))
                    .collect()
            })
            .collect()
    }

    /// All blocks `Σ(f_i, f_j)` over the kernel list.
    fn sigma_blocks(&self, kernels: &[Kernel], use_rz: bool) -> Vec<Vec<Mat>> {
        let p = self.p();
        let c = self.trace_coefficients(kernels);
        let identity = Mat::identity(p, p);
        let om = if use_rz { &identity } else { &self.omega };
        // A^{st}_{ab} = (Ωᵀ Ē_st Ω)_{ab} with Ē_st the symmetrized unit matrix.
        let a_st: Vec<Mat> = (0..p * p)
            .map(|st| {
                let (s, t) = (st / p, st % p);
                Mat::from_fn(p, p, |a, b| 0.5 * (om[(s, a)] * om[(t, b)] + om[(t, a)] * om[(s, b)]))
            })
            .collect();
        let scale = 2.0 / self.n() as f64;
        let block = |cfg: &Mat| {
            Mat::from_fn(p * p, p * p, |i, j| {
                let (ai, aj) = (&a_st[i], &a_st[j]);
                let mut s = 0.0;
                for a in 0..p {
                    for b in 0..p {
                        s += cfg[(a, b)] * ai[(a, b)] * aj[(b, a)];
                    }
                }
                scale * s
            })
        };
        // Σ(g, f) = Σ(f, g)ᵀ; mirroring keeps the assembled matrix exactly symmetric.
        let nk = kernels.len();
        let mut out: Vec<Vec<Mat>> = (0..nk).map(|_| Vec::with_capacity(nk)).collect();
        for i in 0..nk {
            for j in 0..nk {
                let b = match i.cmp(&j) {
                    core::cmp::Ordering::Less => block(&c[i][j]),
                    core::cmp::Ordering::Equal => symmetrize(&block(&c[i][i])),
                    core::cmp::Ordering::Greater => out[j][i].transpose(),
                };
                out[i].push(b);
            }
        }
        out
    }
}

/// `Σ(f, g)`: the limiting cross-covariance of `√n vect M̂(f)` and
/// `√n vect M̂(g)`, entry `((s,t),(u,v))` equal to
/// `2n⁻¹ tr{R T(f)_{st} R T(g)_{uv}}`. With `use_rz` the latent covariance
/// replaces `R`.
pub fn sigma_pair(ws: &AsymptoticWorkspace, f: &Kernel, g: &Kernel, use_rz: bool) -> Mat {
    if f == g {
        let mut b = ws.sigma_blocks(core::slice::from_ref(f), use_rz);
        b.swap_remove(0).swap_remove(0)
    } else {
        let mut b = ws.sigma_blocks(&[*f, *g], use_rz);
        b.swap_remove(0).swap_remove(1)
    }
}

/// [`sigma_pair`] by materializing the `np × np` matrices; for small `n` only.
pub fn sigma_pair_dense(ws: &AsymptoticWorkspace, f: &Kernel, g: &Kernel, use_rz: bool) -> Mat {
    let (n, p) = (ws.n(), ws.p());
    let locs = ws.locations();
    let mut rz = Mat::zeros(n * p, n * p);
    for i in 0..n {
        for j in 0..n {
            let h = locs.distance(i, j);
            for a in 0..p {
                rz[(i * p + a, j * p + a)] = ws.latent().correlation(a, h);
            }
        }
    }
    let r = if use_rz {
        rz
    } else {
        let big = Mat::identity(n, n).kronecker(ws.omega());
        &big * rz * big.transpose()
    };
    let wf = weight_matrix(f, locs);
    let wg = weight_matrix(g, locs);
    let ebar = |s: usize, t: usize| {
        let mut e = Mat::zeros(p, p);
        e[(s, t)] += 0.5;
        e[(t, s)] += 0.5;
        e
    };
    let rtf: Vec<Mat> = (0..p * p).map(|st| &r * wf.kronecker(&ebar(st / p, st % p))).collect();
    let rtg: Vec<Mat> = (0..p * p).map(|uv| &r * wg.kronecker(&ebar(uv / p, uv % p))).collect();
    Mat::from_fn(p * p, p * p, |i, j| 2.0 / n as f64 * (&rtf[i] * &rtg[j]).trace())
}

/// `V(f, f₀) = [[Σ(f), Σ(f, f₀)], [Σ(f₀, f), Σ(f₀)]]`.
pub fn v_matrix(ws: &AsymptoticWorkspace, f: &Kernel) -> Mat {
    let b = ws.sigma_blocks(&[*f, Kernel::Identity], false);
    assemble(&b)
}

fn assemble(blocks: &[Vec<Mat>]) -> Mat {
    let nb = blocks.len();
    let d = blocks[0][0].nrows();
    let mut out = Mat::zeros(nb * d, nb * d);
    for (i, row) in blocks.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            out.view_mut((i * d, j * d), (d, d)).copy_from(b);
        }
    }
    out
}

/// Limiting covariance of the unmixing estimator with its bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCovariance {
    /// Covariance of the scaled estimator error in data coordinates.
    pub matrix: Mat,
    /// Covariance of `√n vect(Γ̂Ω − C)` for the matching `C`; it does not depend on `Ω`.
    pub latent: Mat,
    /// Latent component placed at estimator row `i`.
    pub order: Vec<usize>,
    /// Sign of estimator row `i` relative to `Ω⁻¹`.
    pub signs: Vec<f64>,
    /// Population diagonals `diag(Ω⁻¹ M(f_l) Ω⁻ᵀ)` in estimator order.
    pub diagonals: Vec<Vec<f64>>,
}

/// Requested subset of the limiting covariances.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AsymptoticCovariances {
    pub v: Option<Mat>,
    pub f1: Option<Mat>,
    pub fk: Option<Mat>,
}

/// `V(f, f₀)`, `F₁` and `F_k` for one kernel, or `F_k` alone for several.
pub fn asymptotic_covariances(ws: &AsymptoticWorkspace, kernels: &[Kernel]) -> Result<AsymptoticCovariances> {
    validate_kernel_list(kernels)?;
    let fk = Some(fk_matrix(ws, kernels)?);
    if let [f] = kernels {
        Ok(AsymptoticCovariances {
            v: Some(v_matrix(ws, f)),
            f1: Some(f1_matrix(ws, f)?),
            fk,
        })
    } else {
        Ok(AsymptoticCovariances { v: None, f1: None, fk })
    }
}

fn row_signs(omega_inv: &Mat, order: &[usize]) -> Vec<f64> {
    order
        .iter()
        .map(|&r| {
            let orig: Vec<f64> = omega_inv.row(r).iter().copied().collect();
            let mut fixed = orig.clone();
            fix_sign(&mut fixed);
            if fixed.iter().zip(&orig).any(|(a, b)| a != b) {
                -1.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Re-expresses a block covariance of `vect` latent matrices in estimator
/// order and signs.
fn reorder_blocks(v: &Mat, p: usize, order: &[usize], signs: &[f64]) -> Mat {
    let pp = p * p;
    let src = |idx: usize| {
        let (blk, rest) = (idx / pp, idx % pp);
        let (i, j) = (rest / p, rest % p);
        (blk * pp + order[i] * p + order[j], signs[i] * signs[j])
    };
    Mat::from_fn(v.nrows(), v.ncols(), |r, c| {
        let (sr, gr) = src(r);
        let (sc, gc) = src(c);
        gr * gc * v[(sr, sc)]
    })
}

/// `M_{Ω⁻¹}` with `vect(E Ω⁻¹) = M vect(E)` under row vectorization.
fn right_mult_operator(omega_inv: &Mat) -> Mat {
    let p = omega_inv.nrows();
    Mat::from_fn(p * p, p * p, |r, c| {
        let (i, j) = (r / p, r % p);
        let (i2, k) = (c / p, c % p);
        if i == i2 {
            omega_inv[(k, j)]
        } else {
            0.0
        }
    })
}

fn sorted_order(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]));
    order
}

/// Limiting covariance of `√n (vect(Γ̂ − Ω⁻¹), Λ̂ − Λ)` for the estimator
/// built from `M̂(f₀)` and `M̂(f)`.
pub fn f1(ws: &AsymptoticWorkspace, f: &Kernel) -> Result<DeltaCovariance> {
    validate_kernel_list(core::slice::from_ref(f))?;
    let p = ws.p();
    let pp = p * p;
    let raw = ws.latent_diag(f);
    let order = sorted_order(&raw);
    let lam: Vec<f64> = order.iter().map(|&a| raw[a]).collect();
    if let Some(gap) = lam.windows(2).map(|w| w[0] - w[1]).reduce(f64::min) {
        if gap < GAP_MARGIN {
            return Err(Error::EigGapTooSmall { gap });
        }
    }
    let signs = row_signs(ws.omega_inv(), &order);
    let blocks = ws.sigma_blocks(&[Kernel::Identity, *f], true);
    let v = reorder_blocks(&assemble(&blocks), p, &order, &signs);

    let mut g = Mat::zeros(pp + p, 2 * pp);
    for i in 0..p {
        for j in 0..p {
            let r = i * p + j;
            if i == j {
                g[(r, r)] = -0.5;
            } else {
                let d = lam[i] - lam[j];
                g[(r, r)] = -lam[i] / d;
                g[(r, pp + r)] = 1.0 / d;
            }
        }
        g[(pp + i, i * p + i)] = -lam[i];
        g[(pp + i, pp + i * p + i)] = 1.0;
    }
    let latent = symmetrize(&(&g * &v * g.transpose()));

    let target = signed_rows(ws.omega_inv(), &order, &signs);
    let mut mbar = Mat::identity(pp + p, pp + p);
    mbar.view_mut((0, 0), (pp, pp)).copy_from(&right_mult_operator(&target));
    let matrix = symmetrize(&(&mbar * &latent * mbar.transpose()));
    Ok(DeltaCovariance {
        matrix,
        latent,
        order,
        signs,
        diagonals: alloc::vec![lam],
    })
}

pub fn f1_matrix(ws: &AsymptoticWorkspace, f: &Kernel) -> Result<Mat> {
    f1(ws, f).map(|d| d.matrix)
}

fn signed_rows(omega_inv: &Mat, order: &[usize], signs: &[f64]) -> Mat {
    let p = omega_inv.nrows();
    Mat::from_fn(p, p, |i, j| signs[i] * omega_inv[(order[i], j)])
}

/// Limiting covariance of `√n vect(Γ̂ − Ω⁻¹)` for the joint estimator over
/// `f₁ … f_k`.
pub fn fk(ws: &AsymptoticWorkspace, kernels: &[Kernel]) -> Result<DeltaCovariance> {
    validate_kernel_list(kernels)?;
    let (p, k) = (ws.p(), kernels.len());
    let pp = p * p;
    let raw: Vec<Vec<f64>> = kernels.iter().map(|f| ws.latent_diag(f)).collect();
    let check = identifiability_check_diags(&raw, GAP_MARGIN);
    if let Some((i, j)) = check.offending {
        let gap = raw.iter().map(|d| (d[i] - d[j]).abs()).fold(0.0, f64::max);
        return Err(Error::EigGapTooSmall { gap });
    }
    let keys: Vec<f64> = if k == 1 {
        raw[0].clone()
    } else {
        (0..p).map(|a| raw.iter().map(|d| d[a] * d[a]).sum()).collect()
    };
    let order = sorted_order(&keys);
    let d: Vec<Vec<f64>> = raw.iter().map(|r| order.iter().map(|&a| r[a]).collect()).collect();
    let signs = row_signs(ws.omega_inv(), &order);

    let mut list = Vec::with_capacity(k + 1);
    list.push(Kernel::Identity);
    list.extend_from_slice(kernels);
    let blocks = ws.sigma_blocks(&list, true);
    let v = reorder_blocks(&assemble(&blocks), p, &order, &signs);

    let mut g = Mat::zeros(pp, (k + 1) * pp);
    for i in 0..p {
        for j in 0..p {
            let r = i * p + j;
            if i == j {
                g[(r, r)] = -0.5;
                continue;
            }
            let denom: f64 = d.iter().map(|dl| (dl[i] - dl[j]).powi(2)).sum();
            g[(r, r)] = -d.iter().map(|dl| (dl[i] - dl[j]) * dl[i]).sum::<f64>() / denom;
            for (l, dl) in d.iter().enumerate() {
                g[(r, (l + 1) * pp + r)] = (dl[i] - dl[j]) / denom;
            }
        }
    }
    let latent = symmetrize(&(&g * &v * g.transpose()));
    let m = right_mult_operator(&signed_rows(ws.omega_inv(), &order, &signs));
    let matrix = symmetrize(&(&m * &latent * m.transpose()));
    Ok(DeltaCovariance {
        matrix,
        latent,
        order,
        signs,
        diagonals: d,
    })
}

pub fn fk_matrix(ws: &AsymptoticWorkspace, kernels: &[Kernel]) -> Result<Mat> {
    fk(ws, kernels).map(|d| d.matrix)
}

/// Weights `δᵢ` of the chi-squared mixture limiting `n (p − 1) MDI²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitSpectrum {
    /// Largest `p² − p` eigenvalues, descending, clipped at zero.
    pub deltas: Vec<f64>,
    /// `Σ δᵢ`, the mean of the limit law.
    pub expected_nmdi: f64,
}

/// Eigenvalues of `(I − D_{p,p}) Σ (I − D_{p,p})`, where `D_{p,p}` selects
/// the diagonal positions of `vect`.
pub fn mdi_limit_spectrum(sigma: &Mat) -> Result<LimitSpectrum> {
    let m = sigma.nrows();
    let p = (m as f64).sqrt().round() as usize;
    if !sigma.is_square() || p * p != m || m == 0 {
        return Err(Error::Dimension(alloc::format!(
            "expected a p²×p² matrix, got {}×{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("limit covariance"));
    }
    if !is_symmetric(sigma, 1e-8) {
        return Err(Error::Asymmetric);
    }
    let on_diag = |i: usize| i / p == i % p;
    let proj = Mat::from_fn(m, m, |i, j| if on_diag(i) || on_diag(j) { 0.0 } else { sigma[(i, j)] });
    let (vals, _) = sym_eigen_desc(&proj);
    let top = vals.iter().copied().next().unwrap_or(0.0).max(0.0);
    let deltas: Vec<f64> = vals
        .iter()
        .take(m - p)
        .map(|&v| if v < SPECTRUM_CLIP * top || v <= 0.0 { 0.0 } else { v })
        .collect();
    let expected_nmdi = deltas.iter().sum();
    Ok(LimitSpectrum { deltas, expected_nmdi })
}

/// Independent draws of `Σ δᵢ χ²₁,ᵢ`.
pub fn sample_limit_nmdi<R: Rng + ?Sized>(spec: &LimitSpectrum, draws: usize, rng: &mut R) -> Vec<f64> {
    (0..draws)
        .map(|_| {
            spec.deltas
                .iter()
                .map(|d| {
                    let z: f64 = rng.sample(StandardNormal);
                    d * z * z
                })
                .sum()
        })
        .collect()
}

/// δ-spectrum of the joint estimator over a kernel list.
pub fn limit_spectrum(ws: &AsymptoticWorkspace, kernels: &[Kernel]) -> Result<LimitSpectrum> {
    mdi_limit_spectrum(&fk(ws, kernels)?.latent)
}

/// Candidate comparison by the limiting mean of `n (p − 1) MDI²`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSelection {
    pub best: usize,
    /// `Σ δᵢ` per candidate; `None` when the candidate is not identifiable.
    pub expected: Vec<Option<f64>>,
}

/// Picks the candidate kernel set with the smallest `δ₁ + … + δ_m`; the
/// first one wins ties.
pub fn select_kernels(ws: &AsymptoticWorkspace, candidates: &[Vec<Kernel>]) -> Result<KernelSelection> {
    let mut expected = Vec::with_capacity(candidates.len());
    for c in candidates {
        match limit_spectrum(ws, c) {
            Ok(s) => expected.push(Some(s.expected_nmdi)),
            Err(Error::EigGapTooSmall { .. }) => expected.push(None),
            Err(e) => return Err(e),
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in expected.iter().enumerate() {
        if let Some(v) = *e {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    let (best, _) = best.ok_or(Error::NoFeasibleCandidate)?;
    Ok(KernelSelection { best, expected })
}

/// Population diagonals for every kernel, in latent order.
pub fn population_diagonals(ws: &AsymptoticWorkspace, kernels: &[Kernel]) -> Vec<DVector<f64>> {
    kernels.iter().map(|f| DVector::from_vec(ws.latent_diag(f))).collect()
}
